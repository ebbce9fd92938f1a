"""Monte-Carlo comparison of the product formula with the reference integrator.

Each trajectory ``i`` owns one Brownian path, sampled at the coarsest product
resolution and bridge-refined to the reference resolution.  Every product
resolution ``n`` sees the exact ancestor of that path (node subsampling), so
``E||phi_prod(n) - phi_ref||^2`` measures pathwise (strong) convergence.

Trajectories are processed in fixed-size chunks.  Chunk boundaries depend
only on the trajectory count, never on the number of workers, and per-trajectory
results are reduced in trajectory order, so statistics are bit-identical for
any worker count.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .grid import Grid, Wavefunction, gaussian, make_grid
from .noise import refined
from .propagator import propagate_batch
from .reference import SCHEMES, BlowUpError, integrate_batch
from .symbols import SymbolModel, builtin

log = logging.getLogger(__name__)

CHUNK = 50
MAX_EXCLUDED_FRACTION = 0.01


class EnsembleError(RuntimeError):
    pass


class ExclusionPolicyError(EnsembleError):
    """More than the tolerated fraction of trajectories blew up."""


def make_psi0(grid: Grid, descriptor: dict | None = None) -> Wavefunction:
    d = dict(descriptor or {})
    kind = d.pop("kind", "gaussian")
    if kind != "gaussian":
        raise ValueError(f"unknown initial state kind {kind!r}")
    return gaussian(grid, **{key: float(val) for key, val in d.items()})


@dataclass
class ExperimentSpec:
    symbol: str = "gaussian_well"
    symbol_params: dict = field(default_factory=dict)
    L: float = 40.0
    N: int = 512
    psi0: dict = field(default_factory=lambda: {"kind": "gaussian", "center": 0.0, "width": 1.0, "momentum": 0.0})
    t: float = 1.0
    n_list: tuple = (8, 16, 32, 64)
    # reference steps per step of the finest product resolution
    ref_substeps: int = 16
    scheme: str = "exponential-euler"
    M: int = 100
    seed: int = 42
    tau: float = 0.0

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        ns = self.n_list
        if len(ns) < 1 or any(n < 1 for n in ns):
            raise ValueError("n_list must hold positive step counts")
        if any(b != 2 * a for a, b in zip(ns, ns[1:])):
            raise ValueError(f"n_list must be dyadic and increasing, got {ns}")
        if ns[0] & (ns[0] - 1):
            raise ValueError("step counts must be powers of two")
        if self.M < 2:
            raise ValueError("need at least 2 trajectories")
        if self.ref_substeps < 1 or self.ref_substeps & (self.ref_substeps - 1):
            raise ValueError("ref_substeps must be a power of two")
        if self.tau != 0:
            raise ValueError("stochastic runs use qp-quantization (tau = 0)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_ref(self) -> int:
        return self.n_list[-1] * self.ref_substeps

    def model(self) -> SymbolModel:
        return builtin(self.symbol, **self.symbol_params)

    def grid(self) -> Grid:
        return make_grid(self.L, self.N)


@dataclass
class EnsembleStats:
    n_list: list
    M: int
    seed: int
    norm0_sq: float
    w_mean: list
    w_stderr: list
    norm2_mean: list
    norm2_stderr: list
    ref_norm2_mean: float
    ref_norm2_stderr: float
    step_norm_proxy: list
    step_norm_bound: list
    order: float
    order_ci: tuple
    dropped_coarsest: bool
    monotone: bool
    excluded: int
    wall_time: float = 0.0
    per_trajectory_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _sem(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def fit_convergence(n_list, w) -> tuple[float, tuple, bool]:
    """OLS slope of ``log2 w`` against ``log2 n``, reported as a decay order ``-slope``.

    The coarsest point is dropped when its residual from the fit through the
    remaining points exceeds three times that fit's RMS residual (and at least
    three points remain).  Returns ``(order, 95% CI, dropped)``.
    """
    x = np.log2(np.asarray(n_list, float))
    y = np.log2(np.asarray(w, float))
    dropped = False
    if x.size >= 4:
        coef = np.polyfit(x[1:], y[1:], 1)
        res = y[1:] - np.polyval(coef, x[1:])
        rms = np.sqrt(np.mean(res**2))
        if abs(y[0] - np.polyval(coef, x[0])) > 3 * max(rms, 1e-12):
            x, y, dropped = x[1:], y[1:], True
    if x.size < 2:
        return float("nan"), (float("nan"), float("nan")), dropped
    fit = stats.linregress(x, y)
    order = -float(fit.slope)
    if x.size > 2:
        half = float(stats.t.ppf(0.975, x.size - 2) * fit.stderr)
    else:
        half = float("nan")
    return order, (order - half, order + half), dropped


def is_monotone(mean, stderr, allowed_inversions: int = 1) -> bool:
    """Strictly decreasing, except for at most one rise smaller than one standard error."""
    inversions = 0
    for j in range(1, len(mean)):
        if mean[j] < mean[j - 1]:
            continue
        if mean[j] - mean[j - 1] <= max(stderr[j], stderr[j - 1]) and inversions < allowed_inversions:
            inversions += 1
            continue
        return False
    return True


def _run_chunk(spec: ExperimentSpec, S: SymbolModel, grid: Grid, psi0: np.ndarray, trajs: range) -> dict:
    n_ref, ns = spec.n_ref, spec.n_list
    paths = [refined(spec.t, ns[0], n_ref, spec.seed, i) for i in trajs]
    m = len(paths)
    start = np.broadcast_to(psi0, (m, grid.N))
    try:
        ref = integrate_batch(start, S, grid, spec.t, np.stack([p.increments for p in paths]), spec.scheme)
        ref_bad = np.zeros(m, bool)
    except BlowUpError:
        # isolate the offending rows
        ref = np.full((m, grid.N), np.nan, complex)
        ref_bad = np.ones(m, bool)
        for r, p in enumerate(paths):
            try:
                ref[r] = integrate_batch(start[r:r + 1], S, grid, spec.t, p.increments[None], spec.scheme)[0]
                ref_bad[r] = False
            except BlowUpError:
                pass
    out = {"w": np.empty((len(ns), m)), "norm2": np.empty((len(ns), m)),
           "ref_norm2": np.sum(np.abs(ref) ** 2, axis=-1) * grid.dq, "bad": ref_bad,
           "l4": np.empty((len(ns), m, ns[-1]))}
    limit = 1e6 * np.sum(np.abs(psi0) ** 2) * grid.dq
    kq, hp = S.k(grid.q), S.h(grid.p)
    for a, n in enumerate(ns):
        inc = np.stack([p.coarsen(n).increments for p in paths])
        prod = propagate_batch(start, S, grid, spec.t, inc)
        n2 = np.sum(np.abs(prod) ** 2, axis=-1) * grid.dq
        out["bad"] = out["bad"] | ~(n2 <= limit)
        out["norm2"][a] = n2
        out["w"][a] = np.sum(np.abs(prod - ref) ** 2, axis=-1) * grid.dq
        v = spec.t / n
        qmax = np.exp(-np.sqrt(S.mu1) * kq[None, None, :] * inc[:, 0, :, None] - S.mu1 * v * kq**2).max(-1)
        pmax = np.exp(-np.sqrt(S.mu2) * hp[None, None, :] * inc[:, 1, :, None] - S.mu2 * v * hp**2).max(-1)
        out["l4"][a, :, :n] = qmax * pmax
    return out


def run(spec: ExperimentSpec, workers: int = 1) -> EnsembleStats:
    """Run ``spec.M`` coupled (product, reference) trajectory pairs and reduce their statistics."""
    t0 = time.perf_counter()
    S, grid = spec.model(), spec.grid()
    S.check_stochastic(grid)
    psi0 = make_psi0(grid, spec.psi0)
    if psi0.boundary_mass() > 1e-8:
        log.warning("initial state leaks %.2e of its mass into the boundary layer", psi0.boundary_mass())
    chunks = [range(i, min(i + CHUNK, spec.M)) for i in range(0, spec.M, CHUNK)]
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        results = [_run_chunk(spec, S, grid, psi0.values, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _run_chunk(spec, S, grid, psi0.values, c), chunks))
    w = np.concatenate([r["w"] for r in results], axis=1)
    norm2 = np.concatenate([r["norm2"] for r in results], axis=1)
    ref_norm2 = np.concatenate([r["ref_norm2"] for r in results])
    l4 = np.concatenate([r["l4"] for r in results], axis=1)
    bad = np.concatenate([r["bad"] for r in results])
    excluded = int(bad.sum())
    if excluded:
        log.warning("excluding %d of %d trajectories after numerical blow-up", excluded, spec.M)
    if excluded > MAX_EXCLUDED_FRACTION * spec.M:
        raise ExclusionPolicyError(f"{excluded} of {spec.M} trajectories blew up (limit 1%)")
    keep = ~bad
    w, norm2, ref_norm2, l4 = w[:, keep], norm2[:, keep], ref_norm2[keep], l4[:, keep]
    w_mean = [float(np.mean(x)) for x in w]
    w_se = [_sem(x) for x in w]
    if all(m > 0 for m in w_mean) and len(w_mean) >= 3:
        order, ci, dropped = fit_convergence(spec.n_list, w_mean)
    else:
        order, ci, dropped = float("nan"), (float("nan"), float("nan")), False
    kk = (S.K1**2 * S.mu1 + S.K2**2 * S.mu2)
    wall = time.perf_counter() - t0
    return EnsembleStats(
        n_list=list(spec.n_list), M=spec.M, seed=spec.seed,
        norm0_sq=float(np.sum(np.abs(psi0.values) ** 2) * grid.dq),
        w_mean=w_mean, w_stderr=w_se,
        norm2_mean=[float(np.mean(x)) for x in norm2], norm2_stderr=[_sem(x) for x in norm2],
        ref_norm2_mean=float(np.mean(ref_norm2)), ref_norm2_stderr=_sem(ref_norm2),
        step_norm_proxy=[float(np.max(np.mean(l4[a, :, :n], axis=0))) for a, n in enumerate(spec.n_list)],
        step_norm_bound=[float(np.exp(kk * spec.t / n)) for n in spec.n_list],
        order=order, order_ci=tuple(ci), dropped_coarsest=dropped,
        monotone=is_monotone(w_mean, w_se), excluded=excluded,
        wall_time=wall, per_trajectory_time=wall / spec.M,
    )


def _z(mean, se, target):
    diff = mean - target
    if se == 0:
        return 0.0 if abs(diff) < 1e-10 else float("inf")
    return float(diff / se)


def martingale_report(spec: ExperimentSpec, stats_: EnsembleStats | None = None, workers: int = 1) -> dict:
    """z-scores of ``mean ||phi(t)||^2 - ||phi0||^2`` for each product resolution and the reference."""
    S = spec.model()
    if not S.separable:
        raise EnsembleError("the norm-martingale report requires a separable Hamiltonian")
    st = stats_ or run(spec, workers)
    z_prod = [_z(m, s, st.norm0_sq) for m, s in zip(st.norm2_mean, st.norm2_stderr)]
    return {"norm0_sq": st.norm0_sq, "z_product": z_prod,
            "z_reference": _z(st.ref_norm2_mean, st.ref_norm2_stderr, st.norm0_sq),
            "max_abs_diff": max([abs(m - st.norm0_sq) for m in st.norm2_mean]
                                + [abs(st.ref_norm2_mean - st.norm0_sq)])}
