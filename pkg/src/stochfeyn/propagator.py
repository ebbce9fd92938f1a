"""Randomized product formula for the Schrodinger-Ito equation.

One step of length ``v`` driven by increments ``dW1``, ``dW2`` is

    U = Q Y P,
    Q = exp(-sqrt(mu1) k(q) dW1 - mu1 v k(q)^2)                 (position multiplier)
    P = F^{-1} exp(-sqrt(mu2) h(p) dW2 - mu2 v h(p)^2) F         (momentum multiplier)
    Y = quantization of the symbol exp(-i v H(q, p))

and ``n`` such steps, consuming consecutive increments of one Wiener path,
approximate the solution of

    d phi = [-i H^ - mu1/2 k^2(q^) - mu2/2 h^2(p^)] phi dt - sqrt(mu1) k(q^) phi dW1 - sqrt(mu2) h(p^) phi dW2.

``apply_B`` computes the same step as a single qp-quantization of the combined
symbol; the two agree exactly at tau = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import POSITION, Grid, GridError, Wavefunction
from .noise import WienerPath, _stream
from .quantize import QSymbol, PSymbol, apply_qp, apply_qp_array, qp_matrix, quantize, quantize_exp_symbol
from .symbols import SymbolError, SymbolModel


class PropagationError(RuntimeError):
    pass


def q_multiplier(S: SymbolModel, q, dW1, v):
    k = S.k(q)
    return np.exp(-np.sqrt(S.mu1) * k * dW1 - S.mu1 * v * k * k)


def p_multiplier(S: SymbolModel, p, dW2, v):
    h = S.h(p)
    return np.exp(-np.sqrt(S.mu2) * h * dW2 - S.mu2 * v * h * h)


def _position(psi: Wavefunction):
    if psi.rep != POSITION:
        raise GridError("propagator factors act on position-representation wavefunctions")


def apply_Q(psi: Wavefunction, S: SymbolModel, dW1: float, v: float) -> Wavefunction:
    _position(psi)
    return psi.with_values(q_multiplier(S, psi.grid.q, dW1, v) * psi.values)


def apply_P(psi: Wavefunction, S: SymbolModel, dW2: float, v: float) -> Wavefunction:
    _position(psi)
    g = psi.grid
    return psi.with_values(g.ifft(p_multiplier(S, g.p, dW2, v) * g.fft(psi.values)))


def apply_Y(psi: Wavefunction, S: SymbolModel, v: float, tau: float = 0.0) -> Wavefunction:
    _position(psi)
    return quantize_exp_symbol(S, v, tau, psi.grid).apply(psi)


def apply_U(psi: Wavefunction, S: SymbolModel, dW1: float, dW2: float, v: float,
            tau: float = 0.0) -> Wavefunction:
    """``Q Y P psi``: P acts first."""
    return apply_Q(apply_Y(apply_P(psi, S, dW2, v), S, v, tau), S, dW1, v)


class CombinedSymbol:
    """``exp(-(i H + mu1 k^2 + mu2 h^2) v - sqrt(mu1) k dW1 - sqrt(mu2) h dW2)``."""

    def __init__(self, S: SymbolModel, dW1, dW2, v):
        self.S, self.dW1, self.dW2, self.v = S, dW1, dW2, v

    def __call__(self, q, p):
        S, v = self.S, self.v
        k, h = S.k(q), S.h(p)
        return np.exp(-(1j * S.eval_H(q, p) + S.mu1 * k * k + S.mu2 * h * h) * v
                      - np.sqrt(S.mu1) * k * self.dW1 - np.sqrt(S.mu2) * h * self.dW2)


def apply_B(psi: Wavefunction, S: SymbolModel, dW1: float, dW2: float, v: float,
            tau: float = 0.0) -> Wavefunction:
    if tau != 0:
        raise PropagationError("the combined-symbol step is defined for qp-quantization (tau = 0) only")
    _position(psi)
    return apply_qp(CombinedSymbol(S, dW1, dW2, v), psi)


class Stepper:
    """Precomputed factors for repeated steps of fixed length ``v`` on a batch of states.

    ``step(values, dW1, dW2)`` advances an ``(M, N)`` array of position samples
    with per-row increments.  For separable H the momentum factors of P and Y
    are merged, so a step costs one forward and one inverse FFT.
    """

    def __init__(self, S: SymbolModel, grid: Grid, v: float, tau: float = 0.0):
        if tau != 0:
            raise PropagationError("stochastic propagation is implemented for tau = 0")
        self.S, self.grid, self.v = S, grid, v
        q, p = grid.q, grid.p
        self.k, self.h = S.k(q), S.h(p)
        self.sq1, self.sq2 = np.sqrt(S.mu1), np.sqrt(S.mu2)
        self.qdrift = np.exp(-S.mu1 * v * self.k**2)
        self.pdrift = np.exp(-S.mu2 * v * self.h**2)
        if S.separable:
            self.yq = np.exp(-1j * v * S.k0(q))
            self.yp = np.exp(-1j * v * S.h0(p))
            self.ymat = None
        else:
            self.ymat = qp_matrix(lambda qq, pp: np.exp(-1j * v * S.eval_H(qq, pp)), grid).T

    def step(self, values, dW1, dW2):
        g = self.grid
        dW1 = np.asarray(dW1, dtype=float)[..., None]
        dW2 = np.asarray(dW2, dtype=float)[..., None]
        pm = self.pdrift * np.exp(-self.sq2 * self.h * dW2)
        qm = self.qdrift * np.exp(-self.sq1 * self.k * dW1)
        if self.ymat is None:
            out = g.ifft(pm * self.yp * g.fft(values)) * self.yq
        else:
            out = (pm * g.fft(values)) @ self.ymat
        return out * qm


@dataclass(frozen=True)
class StepPlan:
    S: SymbolModel
    grid: Grid
    t: float
    n: int
    path: WienerPath
    tau: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise PropagationError("step count must be positive")
        if self.path.n != self.n:
            raise PropagationError(f"path has {self.path.n} steps, plan expects {self.n}")
        if not np.isclose(self.path.t, self.t, rtol=1e-14, atol=0):
            raise PropagationError(f"path horizon {self.path.t} does not match plan horizon {self.t}")

    @property
    def v(self) -> float:
        return self.t / self.n


def propagate_batch(values, S: SymbolModel, grid: Grid, t: float, increments) -> np.ndarray:
    """Apply ``n`` product-formula steps to each row of ``values``.

    ``increments`` has shape ``(M, 2, n)`` (``dW1``, ``dW2`` per row) or ``(2, n)``.
    """
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[None]
    n = inc.shape[-1]
    stepper = Stepper(S, grid, t / n)
    out = np.asarray(values, dtype=complex)
    for j in range(n):
        out = stepper.step(out, inc[:, 0, j], inc[:, 1, j])
    return out


def propagate(psi0: Wavefunction, plan: StepPlan) -> Wavefunction:
    """``U_n ... U_1 psi0`` where step ``j`` consumes ``dW1[j]``, ``dW2[j]``."""
    _position(psi0)
    if psi0.grid != plan.grid:
        raise GridError("initial state and plan use different grids")
    if plan.tau != 0:
        raise PropagationError("stochastic propagation is implemented for tau = 0")
    out = propagate_batch(psi0.values[None, :], plan.S, plan.grid, plan.t, plan.path.increments[None])
    return psi0.with_values(out[0])


# ---------------------------------------------------------------------------
# dense operators for validation (small N only)

def dense_ops(S: SymbolModel, grid: Grid):
    """Dense building blocks: Fourier matrix, position/momentum grids and qp-quantized ``l``."""
    if grid.N > 128:
        raise PropagationError("dense validation operators are limited to N <= 128")
    eye = np.eye(grid.N, dtype=complex)
    F = grid.fft(eye).T          # psi_tilde = F @ psi
    Finv = grid.ifft(eye).T
    lhat = apply_qp_array(S.l, grid, eye).T if not S.separable else np.zeros((grid.N, grid.N))
    return F, Finv, lhat


def dense_U(S: SymbolModel, grid: Grid, dW1, dW2, v, Y=None, F=None, Finv=None):
    if F is None:
        F, Finv, _ = dense_ops(S, grid)
    if Y is None:
        Y = quantize_exp_symbol(S, v, 0.0, grid).matrix()
    P = Finv @ (p_multiplier(S, grid.p, dW2, v)[:, None] * F)
    return q_multiplier(S, grid.q, dW1, v)[:, None] * (Y @ P)


def fit_order(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x`` (nan if any ``y <= 0``)."""
    if np.any(np.asarray(ys, float) <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def expansion_residual(which: str, S: SymbolModel, vs, seed: int, grid: Grid, M: int = 1000,
                       psi: Wavefunction | None = None, drop_cross: bool = False) -> dict:
    """Monte-Carlo mean of ``||Op(v) - truncated expansion(v)||`` for each ``v``.

    ``which`` is ``"Q"``, ``"P"`` or ``"U"``.  Norms are operator norms of the
    dense ``N x N`` matrices, or the L2 norm of the residual applied to ``psi``
    when a state is given.  With ``drop_cross=True`` the U expansion omits the
    ``sqrt(mu1 mu2) k h dW1 dW2`` term, i.e. it is the expansion of the exact
    resolvent.

    Returns a dict with ``v``, ``mean``, ``stderr`` and the fitted ``order``.
    """
    if which not in ("Q", "P", "U"):
        raise ValueError(f"unknown operator {which!r}")
    if S.out_of_hypotheses:
        raise SymbolError(f"symbol model {S.name!r} is outside the bounded-symbol hypotheses")
    k, h = S.k(grid.q), S.h(grid.p)
    F, Finv, lhat = dense_ops(S, grid)
    means, errs = [], []
    for idx, v in enumerate(vs):
        rng = _stream(seed, idx, 7, 0)
        dws = rng.standard_normal((M, 2)) * np.sqrt(v)
        Y = quantize_exp_symbol(S, v, 0.0, grid).matrix() if which == "U" else None
        gen = -1j * v * (np.diag(S.k0(grid.q)) + Finv @ (S.h0(grid.p)[:, None] * F) + lhat)
        kq = np.diag(k)
        hp = Finv @ (h[:, None] * F)
        vals = np.empty(M)
        for i, (d1, d2) in enumerate(dws):
            z1, z2 = (d1 * d1 - v) / v, (d2 * d2 - v) / v
            if which == "Q":
                # diagonal: operator norm is the max modulus
                res = q_multiplier(S, grid.q, d1, v) - (
                    1 - np.sqrt(S.mu1) * k * d1 - 0.5 * S.mu1 * v * k**2 + 0.5 * S.mu1 * v * k**2 * z1)
                vals[i] = _diag_norm(res, psi, grid, "q")
                continue
            if which == "P":
                res = p_multiplier(S, grid.p, d2, v) - (
                    1 - np.sqrt(S.mu2) * h * d2 - 0.5 * S.mu2 * v * h**2 + 0.5 * S.mu2 * v * h**2 * z2)
                vals[i] = _diag_norm(res, psi, grid, "p")
                continue
            U = dense_U(S, grid, d1, d2, v, Y=Y, F=F, Finv=Finv)
            expn = (np.eye(grid.N)
                    + np.diag(-np.sqrt(S.mu1) * k * d1 - 0.5 * S.mu1 * v * k**2 * (1 - z1))
                    + Finv @ ((-np.sqrt(S.mu2) * h * d2 - 0.5 * S.mu2 * v * h**2 * (1 - z2))[:, None] * F)
                    + gen)
            if not drop_cross:
                expn = expn + np.sqrt(S.mu1 * S.mu2) * d1 * d2 * (kq @ hp)
            R = U - expn
            vals[i] = np.linalg.norm(R, 2) if psi is None else _vec_norm(R @ psi.values, grid)
        means.append(float(vals.mean()))
        errs.append(float(vals.std(ddof=1) / np.sqrt(M)))
    return {"v": list(map(float, vs)), "mean": means, "stderr": errs, "order": fit_order(vs, means)}


def _vec_norm(values, grid):
    return float(np.sqrt(np.sum(np.abs(values) ** 2) * grid.dq))


def _diag_norm(res, psi, grid, side):
    if psi is None:
        return float(np.max(np.abs(res)))
    if side == "q":
        return _vec_norm(res * psi.values, grid)
    return float(np.sqrt(np.sum(np.abs(res * grid.fft(psi.values)) ** 2) * grid.dp))


def cross_term_norm(S: SymbolModel, grid: Grid, dW1, dW2) -> float:
    """Operator norm of ``sqrt(mu1 mu2) k(q^) h(p^) dW1 dW2``."""
    kh = quantize(QSymbol(S.k), 0.0, grid).matrix() @ quantize(PSymbol(S.h), 0.0, grid).matrix()
    return float(np.sqrt(S.mu1 * S.mu2) * abs(dW1 * dW2) * np.linalg.norm(kh, 2))


def ito_expansion_check(A: float, B: float, ts, seed: int, M: int = 10_000,
                        oracle: str = "em", substeps: int = 4096) -> dict:
    """Residual order of ``phi(t) - [1 + B W + A t + B^2 (W^2 - t)/2]`` for ``d phi = A phi dt + B phi dW``.

    ``oracle="em"`` integrates by Euler-Maruyama with ``substeps`` steps on
    each path; ``oracle="exact"`` uses ``exp((A - B^2/2) t + B W)``.
    """
    means, errs = [], []
    for idx, t in enumerate(ts):
        rng = _stream(seed, idx, 11, 0)
        if oracle == "exact":
            W = rng.standard_normal(M) * np.sqrt(t)
            phi = np.exp((A - 0.5 * B * B) * t + B * W)
        elif oracle == "em":
            dt = t / substeps
            phi = np.ones(M)
            W = np.zeros(M)
            for _ in range(substeps):
                dw = rng.standard_normal(M) * np.sqrt(dt)
                phi = phi * (1.0 + A * dt + B * dw)
                W += dw
        else:
            raise ValueError(f"unknown oracle {oracle!r}")
        expn = 1.0 + B * W + A * t + 0.5 * B * B * (W * W - t)
        r = np.abs(phi - expn)
        means.append(float(r.mean()))
        errs.append(float(r.std(ddof=1) / np.sqrt(M)))
    return {"t": list(map(float, ts)), "mean": means, "stderr": errs, "order": fit_order(ts, means)}


def norm_bound_check(S: SymbolModel, grid: Grid, vs, seed: int, M: int = 10_000, which: str = "U") -> dict:
    """Monte-Carlo ``E||U_0^v||`` (or ``E||Q_0^v||``) against ``exp(C v)``.

    The bound is ``exp((K1^2 mu1 + K2^2 mu2) v)`` for U and ``exp(K1^2 mu1 v / 2)`` for Q;
    for non-separable H the measured norm of the deterministic factor is
    multiplied in.
    """
    F, Finv, _ = dense_ops(S, grid)
    rows = []
    for idx, v in enumerate(vs):
        rng = _stream(seed, idx, 13, 0)
        dws = rng.standard_normal((M, 2)) * np.sqrt(v)
        if which == "Q":
            vals = np.array([np.max(q_multiplier(S, grid.q, d1, v)) for d1, _ in dws])
            bound = np.exp(0.5 * S.K1**2 * S.mu1 * v)
        else:
            Y = quantize_exp_symbol(S, v, 0.0, grid).matrix()
            ynorm = 1.0 if S.separable else max(1.0, np.linalg.norm(Y, 2))
            vals = np.array([np.linalg.norm(dense_U(S, grid, d1, d2, v, Y=Y, F=F, Finv=Finv), 2)
                             for d1, d2 in dws])
            bound = np.exp((S.K1**2 * S.mu1 + S.K2**2 * S.mu2) * v) * ynorm
        rows.append({"v": float(v), "mean": float(vals.mean()),
                     "stderr": float(vals.std(ddof=1) / np.sqrt(M)), "bound": float(bound)})
    return {"rows": rows}
