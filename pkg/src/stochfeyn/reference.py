"""Independent strong integrators for the Schrodinger-Ito equation.

These are the oracles the product formula is measured against.  They share
the spatial discretisation (grid, qp-quantized ``H^``) with the product
formula so that comparisons isolate time-discretisation error.

Schemes
-------
``euler-maruyama``
    Plain explicit Euler-Maruyama on the full drift.  Unconditionally unstable
    for the oscillatory ``-i H^`` part once ``v ||H^||^2 t`` is not small, so it
    is only usable on coarse grids or with weak Hamiltonians.
``exponential-euler``
    Euler-Maruyama in the interaction picture of ``H^``:
    ``phi <- exp(-i v H^) [phi + v A' phi - sqrt(mu1) k phi dW1 - sqrt(mu2) h phi dW2]``
    with ``A' = -mu1/2 k^2(q^) - mu2/2 h^2(p^)`` and the exact dense exponential
    of ``H^``.  Default.
``milstein-diagonal``
    ``exponential-euler`` plus ``1/2 mu_i G_i^2 phi (dW_i^2 - v)``; restricted
    to a single active noise (no Levy areas are sampled).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .grid import POSITION, Grid, GridError, Wavefunction
from .noise import WienerPath, refined
from .propagator import PropagationError, fit_order, p_multiplier, q_multiplier
from .quantize import QP_SPECTRAL, SumSymbol, quantize
from .symbols import SymbolModel

SCHEMES = ("exponential-euler", "euler-maruyama", "milstein-diagonal")
BLOWUP_FACTOR = 1e3


class BlowUpError(PropagationError):
    pass


@dataclass(frozen=True)
class ReferenceConfig:
    substeps: int = 16
    scheme: str = "exponential-euler"

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("reference substeps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")


def hamiltonian_matrix(S: SymbolModel, grid: Grid) -> np.ndarray:
    """Dense qp-quantized ``H^`` (Hermitian when H is separable and real)."""
    if S.separable:
        op = quantize(SumSymbol(S.k0, S.h0), 0.0, grid)
    else:
        op = quantize(S.eval_H, 0.0, grid, strategy=QP_SPECTRAL)
    return op.matrix()


def dense_expm(S: SymbolModel, t: float, grid: Grid, max_n: int = 128) -> np.ndarray:
    """``exp(-i t H^)`` as a dense matrix via scaling-and-squaring Pade (scipy)."""
    if grid.N > max_n:
        raise ValueError(f"dense exponential limited to N <= {max_n}, got N={grid.N}")
    return scipy.linalg.expm(-1j * t * hamiltonian_matrix(S, grid))


@lru_cache(maxsize=8)
def _eigh(S: SymbolModel, grid: Grid):
    Hm = hamiltonian_matrix(S, grid)
    Hm = 0.5 * (Hm + Hm.conj().T)
    return np.linalg.eigh(Hm)


def hamiltonian_propagator(S: SymbolModel, grid: Grid, v: float) -> np.ndarray:
    """Exact ``exp(-i v H^)`` for production grid sizes.

    Separable (Hermitian) H uses an eigendecomposition, otherwise scipy's expm.
    """
    if S.separable:
        w, V = _eigh(S, grid)
        return (V * np.exp(-1j * v * w)) @ V.conj().T
    return scipy.linalg.expm(-1j * v * hamiltonian_matrix(S, grid))


class _Integrator:
    def __init__(self, S: SymbolModel, grid: Grid, v: float, scheme: str):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        if scheme == "milstein-diagonal" and S.mu1 > 0 and S.mu2 > 0:
            raise ValueError("milstein-diagonal supports a single active noise only")
        self.S, self.grid, self.v, self.scheme = S, grid, v, scheme
        self.k, self.h = S.k(grid.q), S.h(grid.p)
        self.sq1, self.sq2 = np.sqrt(S.mu1), np.sqrt(S.mu2)
        if scheme == "euler-maruyama":
            if S.separable:
                self.hop = quantize(SumSymbol(S.k0, S.h0), 0.0, grid)
            else:
                self.hop = quantize(S.eval_H, 0.0, grid)
            self.E = None
        else:
            self.E = hamiltonian_propagator(S, grid, v).T

    def step(self, phi, dW1, dW2):
        g, v, k, h = self.grid, self.v, self.k, self.h
        dW1 = np.asarray(dW1, dtype=float)[..., None]
        dW2 = np.asarray(dW2, dtype=float)[..., None]
        pos = 1.0 - 0.5 * self.S.mu1 * v * k * k - self.sq1 * k * dW1
        mom = -0.5 * self.S.mu2 * v * h * h - self.sq2 * h * dW2
        if self.scheme == "milstein-diagonal":
            pos = pos + 0.5 * self.S.mu1 * k * k * (dW1 * dW1 - v)
            mom = mom + 0.5 * self.S.mu2 * h * h * (dW2 * dW2 - v)
        x = pos * phi + g.ifft(mom * g.fft(phi))
        if self.E is None:
            return x - 1j * v * self.hop.apply_array(phi)
        return x @ self.E


def integrate_batch(values, S: SymbolModel, grid: Grid, t: float, increments,
                    scheme: str = "exponential-euler") -> np.ndarray:
    """Integrate each row of ``values`` over ``[0, t]`` with per-row increments ``(M, 2, n)``.

    Raises :class:`BlowUpError` if any row's norm exceeds ``1e3`` times its initial norm.
    """
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[None]
    n = inc.shape[-1]
    it = _Integrator(S, grid, t / n, scheme)
    phi = np.asarray(values, dtype=complex)
    limit = BLOWUP_FACTOR * np.sqrt(np.sum(np.abs(phi) ** 2, axis=-1))
    for j in range(n):
        phi = it.step(phi, inc[:, 0, j], inc[:, 1, j])
        if j % 16 == 15 or j == n - 1:
            nrm = np.sqrt(np.sum(np.abs(phi) ** 2, axis=-1))
            bad = ~(nrm <= limit)
            if np.any(bad):
                raise BlowUpError(f"reference integration blew up at step {j + 1}/{n} "
                                  f"(norm ratio {np.max(nrm[bad] / limit) * BLOWUP_FACTOR:.3g})")
    return phi


def integrate(psi0: Wavefunction, S: SymbolModel, path: WienerPath,
              scheme: str = "exponential-euler") -> Wavefunction:
    """Strong approximation of ``phi(t)`` on ``path`` at the path's own resolution."""
    if psi0.rep != POSITION:
        raise GridError("reference integration expects a position-representation wavefunction")
    out = integrate_batch(psi0.values[None, :], S, psi0.grid, path.t, path.increments[None], scheme)
    return psi0.with_values(out[0])


def single_factor_check(which: str, S: SymbolModel, psi0: Wavefunction, t: float, ms, seed: int,
                        M: int = 200) -> dict:
    """Strong error of Euler-Maruyama against the closed-form Q (or P) factor.

    ``which="Q"`` integrates ``d phi = -mu1/2 k^2 phi dt - sqrt(mu1) k phi dW1``
    in position representation; ``which="P"`` integrates the ``h``/``W2``
    analogue on the momentum coefficients.  Each trajectory's path is refined
    from a single step, so every ``m`` in ``ms`` and the closed form (one step
    of length ``t``) see the same Brownian motion.  The error is the RMS over
    trajectories of ``||phi_EM - phi_exact||``; returns the errors and the
    fitted decay order.
    """
    if which not in ("Q", "P"):
        raise ValueError(f"unknown factor {which!r}")
    grid = psi0.grid
    ms = [int(m) for m in ms]
    if which == "Q":
        g, mu, proc = S.k(grid.q), S.mu1, 0
        base, w = psi0.values, grid.dq
        exact_mult = lambda dw, v: q_multiplier(S, grid.q, dw, v)
    else:
        g, mu, proc = S.h(grid.p), S.mu2, 1
        base, w = grid.fft(psi0.values), grid.dp
        exact_mult = lambda dw, v: p_multiplier(S, grid.p, dw, v)
    sq = np.sqrt(mu)
    sq_err = np.zeros((len(ms), M))
    for i in range(M):
        path = refined(t, 1, max(ms), seed, i)
        exact = exact_mult(path.nodes[proc, -1], t) * base
        for a, m in enumerate(ms):
            phi = base.copy()
            dt = t / m
            for dw in path.coarsen(m).increments[proc]:
                phi = phi * (1.0 - 0.5 * mu * g * g * dt - sq * g * dw)
            sq_err[a, i] = np.sum(np.abs(phi - exact) ** 2) * w
    err = np.sqrt(sq_err.mean(axis=1))
    order = -fit_order(ms, err)
    return {"m": ms, "error": [float(e) for e in err], "order": order}
