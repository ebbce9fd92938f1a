"""tau-quantization of phase-space symbols as operators on grid wavefunctions.

Two independent discretisations of the quantization map are provided:

* the dense kernel, ``K[m, j] = (dq dp / 2 pi) sum_k s((1-tau) q_m + tau q_j, p_k) exp(i p_k (q_m - q_j))``,
  built explicitly for ``N <= 256`` and used as an oracle;
* the qp (tau = 0) spectral path ``s^ = J(s) F^{-1}`` with
  ``[J(s) phi](q) = (2 pi)^{-1/2} sum_k s(q, p_k) exp(i q p_k) phi(p_k) dp``, which is
  ``O(N log N)`` for symbols of the form ``f(q)``, ``g(p)`` or ``f(q) g(p)`` and ``O(N^2)``
  otherwise.

Symbols are callables ``s(q, p)``.  Wrapping them in :class:`QSymbol`,
:class:`PSymbol`, :class:`ProductSymbol` or :class:`SumSymbol` exposes their
structure so the fast paths can be used.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np

from .grid import POSITION, Grid, GridError, Wavefunction, norm

DENSE_MAX_N = 256

SEPARABLE_FAST = "separable-fast"
QP_SPECTRAL = "qp-spectral"
DENSE_KERNEL = "dense-kernel"


class QuantizeError(ValueError):
    pass


class QSymbol:
    """Symbol depending on position only."""

    def __init__(self, f):
        self.f = f

    def __call__(self, q, p):
        return np.broadcast_to(self.f(q), np.broadcast(q, p).shape)


class PSymbol:
    """Symbol depending on momentum only."""

    def __init__(self, g):
        self.g = g

    def __call__(self, q, p):
        return np.broadcast_to(self.g(p), np.broadcast(q, p).shape)


class ProductSymbol:
    """``f(q) * g(p)``; its qp-quantization is ``f(q^) g(p^)``."""

    def __init__(self, f, g):
        self.f, self.g = f, g

    def __call__(self, q, p):
        return self.f(q) * self.g(p)


class SumSymbol:
    """``f(q) + g(p)``; its quantization does not depend on tau."""

    def __init__(self, f, g):
        self.f, self.g = f, g

    def __call__(self, q, p):
        return self.f(q) + self.g(p)


def as_symbol(fn, depends_on=None):
    """Wrap a one-argument function as a q- or p-symbol; pass two-argument callables through."""
    if depends_on == "q":
        return QSymbol(fn)
    if depends_on == "p":
        return PSymbol(fn)
    return fn


def _eval_mesh(symbol, grid: Grid) -> np.ndarray:
    """Symbol sampled on the (q_m, p_k) mesh, shape (N, N)."""
    vals = np.asarray(symbol(grid.q[:, None], grid.p[None, :]), dtype=complex)
    vals = np.broadcast_to(vals, (grid.N, grid.N))
    if not np.all(np.isfinite(vals)):
        raise QuantizeError("symbol is not finite on the phase-space grid")
    return vals


def _finite(arr, what="symbol"):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise QuantizeError(f"{what} is not finite on the grid")
    return arr


def qp_matrix(symbol, grid: Grid) -> np.ndarray:
    """``G[m, k] = s(q_m, p_k) exp(i q_m p_k) dp / sqrt(2 pi)``; ``G @ psi_tilde`` applies ``J(s)``."""
    phase = np.exp(1j * np.outer(grid.q, grid.p))
    return _eval_mesh(symbol, grid) * phase * (grid.dp / np.sqrt(2.0 * np.pi))


def apply_qp_array(symbol, grid: Grid, values: np.ndarray) -> np.ndarray:
    """qp-quantization of ``symbol`` applied along the last axis of ``values``."""
    if isinstance(symbol, QSymbol):
        return _finite(symbol.f(grid.q)) * values
    if isinstance(symbol, PSymbol):
        return grid.ifft(_finite(symbol.g(grid.p)) * grid.fft(values))
    if isinstance(symbol, ProductSymbol):
        return _finite(symbol.f(grid.q)) * grid.ifft(_finite(symbol.g(grid.p)) * grid.fft(values))
    if isinstance(symbol, SumSymbol):
        return (_finite(symbol.f(grid.q)) * values
                + grid.ifft(_finite(symbol.g(grid.p)) * grid.fft(values)))
    G = qp_matrix(symbol, grid)
    return grid.fft(values) @ G.T


def apply_qp(symbol, psi: Wavefunction) -> Wavefunction:
    if psi.rep != POSITION:
        raise GridError("apply_qp expects a position-representation wavefunction")
    return psi.with_values(apply_qp_array(symbol, psi.grid, psi.values))


def dense_kernel(symbol, tau: float, grid: Grid) -> np.ndarray:
    """Explicit N x N matrix of the tau-quantized symbol (oracle path)."""
    if grid.N > DENSE_MAX_N:
        raise QuantizeError(f"dense kernels are limited to N <= {DENSE_MAX_N}, got N={grid.N}")
    q, p = grid.q, grid.p
    w = grid.dq * grid.dp / (2.0 * np.pi)
    # E[k, j] = exp(-i p_k q_j)
    E = np.exp(-1j * np.outer(p, q))
    if tau == 0:
        return (qp_matrix(symbol, grid) @ E) * (grid.dq / np.sqrt(2.0 * np.pi))
    K = np.empty((grid.N, grid.N), dtype=complex)
    for m in range(grid.N):
        x = (1.0 - tau) * q[m] + tau * q  # shifted points indexed by j
        s = np.asarray(symbol(x[None, :], p[:, None]), dtype=complex)  # (k, j)
        s = np.broadcast_to(s, (grid.N, grid.N))
        if not np.all(np.isfinite(s)):
            raise QuantizeError("symbol is not finite at shifted grid points")
        K[m] = np.sum(s * np.exp(1j * p * q[m])[:, None] * E, axis=0) * w
    return K


@dataclass(frozen=True, eq=False)
class QuantizedOperator:
    """A quantized symbol bound to a grid.

    ``strategy`` is one of ``separable-fast``, ``qp-spectral`` or ``dense-kernel``.
    A dense kernel, when present, is built once at construction.
    """

    grid: Grid
    tau: float
    strategy: str
    symbol: object = None
    kernel: np.ndarray | None = None
    _qp: np.ndarray | None = None

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        if self.strategy == DENSE_KERNEL:
            return values @ self.kernel.T
        if self._qp is not None:
            return self.grid.fft(values) @ self._qp.T
        return apply_qp_array(self.symbol, self.grid, values)

    def apply(self, psi: Wavefunction) -> Wavefunction:
        if psi.grid != self.grid:
            raise GridError("operator and wavefunction live on different grids")
        if psi.rep != POSITION:
            raise GridError("operators act on position-representation wavefunctions")
        return psi.with_values(self.apply_array(psi.values))

    __call__ = apply

    def matrix(self) -> np.ndarray:
        """Dense matrix of the operator (columns = images of grid delta functions)."""
        if self.kernel is not None:
            return self.kernel
        return self.apply_array(np.eye(self.grid.N, dtype=complex)).T


def quantize(symbol, tau: float, grid: Grid, strategy: str | None = None) -> QuantizedOperator:
    """tau-quantize ``symbol`` on ``grid``.

    With ``strategy=None`` the cheapest exact path is chosen: structure-aware
    fast application for position-only, momentum-only and sum symbols (these
    are tau independent), the spectral ``J`` path at tau = 0, and the dense
    kernel otherwise.
    """
    if not 0.0 <= tau <= 1.0:
        raise QuantizeError(f"tau must lie in [0, 1], got {tau}")
    if strategy is None:
        if isinstance(symbol, (QSymbol, PSymbol, SumSymbol)):
            strategy = SEPARABLE_FAST
        elif tau == 0:
            strategy = QP_SPECTRAL
        else:
            strategy = DENSE_KERNEL
    if strategy == DENSE_KERNEL:
        return QuantizedOperator(grid, tau, strategy, symbol, kernel=dense_kernel(symbol, tau, grid))
    if strategy == SEPARABLE_FAST:
        if not isinstance(symbol, (QSymbol, PSymbol, SumSymbol)) and not (
                tau == 0 and isinstance(symbol, ProductSymbol)):
            raise QuantizeError("separable-fast requires a structured symbol")
        return QuantizedOperator(grid, tau, strategy, symbol)
    if strategy == QP_SPECTRAL:
        if tau != 0:
            raise QuantizeError("the spectral J path realises qp-quantization only (tau = 0)")
        if isinstance(symbol, (QSymbol, PSymbol, SumSymbol, ProductSymbol)):
            return QuantizedOperator(grid, tau, strategy, symbol)
        return QuantizedOperator(grid, tau, strategy, symbol, _qp=qp_matrix(symbol, grid))
    raise QuantizeError(f"unknown strategy {strategy!r}")


class ExpSymbol:
    """The symbol ``exp(-i v H(q, p))`` of a :class:`SymbolModel`."""

    def __init__(self, S, v):
        self.S, self.v = S, v

    def __call__(self, q, p):
        return np.exp(-1j * self.v * self.S.eval_H(q, p))


def quantize_exp_symbol(S, v: float, tau: float, grid: Grid, strategy: str | None = None) -> QuantizedOperator:
    """Quantization of the symbol ``exp(-i v H)`` (not the operator exponential of ``H^``).

    For separable ``H`` this is ``exp(-i v k0(q^)) exp(-i v h0(p^))`` for every tau.
    """
    if v < 0:
        raise QuantizeError("time step must be nonnegative")
    if S.separable and strategy in (None, SEPARABLE_FAST):
        sym = ProductSymbol(lambda q: np.exp(-1j * v * S.k0(q)), lambda p: np.exp(-1j * v * S.h0(p)))
        return QuantizedOperator(grid, tau, SEPARABLE_FAST, sym)
    return quantize(ExpSymbol(S, v), tau, grid, strategy)


def factorization_check(f1, f2, f3, psi: Wavefunction) -> float:
    """``|| (f1 f2 f3)^ psi - f1^ f2^ f3^ psi ||`` under qp-quantization.

    ``f1`` and ``f3`` may be one-argument functions (taken as functions of q and
    p respectively) or any two-argument symbol, which allows the hypothesis to
    be violated deliberately.
    """
    s1 = QSymbol(f1) if _arity(f1) == 1 else f1
    s3 = PSymbol(f3) if _arity(f3) == 1 else f3

    def combined(q, p):
        return s1(q, p) * f2(q, p) * s3(q, p)

    whole = apply_qp(combined, psi)
    chained = apply_qp(s1, apply_qp(f2, apply_qp(s3, psi)))
    return norm(whole - chained)


def _arity(fn) -> int:
    if isinstance(fn, (QSymbol, PSymbol, ProductSymbol, SumSymbol, ExpSymbol)):
        return 2
    try:
        params = inspect.signature(fn).parameters.values()
    except (TypeError, ValueError):
        return 2
    return sum(1 for prm in params if prm.default is inspect.Parameter.empty
               and prm.kind in (prm.POSITIONAL_ONLY, prm.POSITIONAL_OR_KEYWORD))


def box_quadrature(symbol, psi: Wavefunction, z: float, tau: float = 0.0) -> Wavefunction:
    """Direct double quadrature of the quantization integral truncated to ``[-z, z]^2``."""
    grid = psi.grid
    q, p = grid.q, grid.p
    qmask = np.abs(q) <= z
    pmask = np.abs(p) <= z
    qj, pk, phi = q[qmask], p[pmask], psi.values[qmask]
    out = np.empty(grid.N, dtype=complex)
    w = grid.dq * grid.dp / (2.0 * np.pi)
    for m in range(grid.N):
        x = (1.0 - tau) * q[m] + tau * qj
        s = np.broadcast_to(np.asarray(symbol(x[None, :], pk[:, None]), dtype=complex), (pk.size, qj.size))
        out[m] = np.sum(s * np.exp(1j * np.outer(pk, q[m] - qj)) * phi[None, :]) * w
    return psi.with_values(out)


def verify_box_limit(symbol, psi: Wavefunction, zs) -> list[float]:
    """Errors ``||box(z) - spectral||`` of the truncated quantization integral for each ``z``."""
    grid = psi.grid
    extent = max(grid.L / 2, -grid.p[0])
    ref = apply_qp(symbol, psi)
    errs = []
    for z in zs:
        if z <= 0 or z > extent * (1 + 1e-12):
            raise QuantizeError(f"box half-width {z} outside (0, {extent:g}]")
        errs.append(norm(box_quadrature(symbol, psi, z) - ref))
    return errs
