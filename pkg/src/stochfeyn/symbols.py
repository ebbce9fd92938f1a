"""Phase-space symbols: internal Hamiltonian and measurement observables.

A :class:`SymbolModel` bundles ``H(q, p) = k0(q) + h0(p) + l(q, p)`` with the
measured observables ``k(q)``, ``h(p)`` and their coupling strengths.
Symbols are vectorised callables so they can be evaluated on whole grids,
on the ``N x N`` phase-space mesh, or at shifted points for general tau.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

Fn1 = Callable[[np.ndarray], np.ndarray]
Fn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]

# sup|k|, sup|h| are taken as the max over this dense reference mesh unless given
_SUP_MESH = np.linspace(-50.0, 50.0, 200001)


class SymbolError(ValueError):
    pass


class HypothesisWarning(UserWarning):
    """A symbol model lies outside the boundedness/decay assumptions of the stochastic theory."""


def zero1(x):
    return np.zeros(np.shape(x))


def zero2(q, p):
    return np.zeros(np.broadcast(q, p).shape)


@dataclass(frozen=True, eq=False)
class SymbolModel:
    k0: Fn1
    h0: Fn1
    l: Fn2 = zero2
    k: Fn1 = zero1
    h: Fn1 = zero1
    mu1: float = 0.0
    mu2: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    separable: bool | None = None
    K1: float | None = None
    K2: float | None = None
    # set for free/harmonic: allowed for deterministic checks only
    out_of_hypotheses: bool = False

    def __post_init__(self):
        if self.mu1 < 0 or self.mu2 < 0:
            raise SymbolError(f"noise strengths must be nonnegative, got mu1={self.mu1}, mu2={self.mu2}")
        if self.separable is None:
            object.__setattr__(self, "separable", self.l is zero2)
        if self.K1 is None:
            object.__setattr__(self, "K1", float(np.max(np.abs(self.k(_SUP_MESH)))))
        if self.K2 is None:
            object.__setattr__(self, "K2", float(np.max(np.abs(self.h(_SUP_MESH)))))
        if not (np.isfinite(self.K1) and np.isfinite(self.K2)):
            raise SymbolError("measurement symbols k and h must be bounded")

    def eval_H(self, q, p):
        return self.k0(q) + self.h0(p) + self.l(q, p)

    def with_noise(self, mu1: float, mu2: float) -> "SymbolModel":
        return replace(self, mu1=float(mu1), mu2=float(mu2))

    @property
    def is_deterministic(self) -> bool:
        return self.mu1 == 0 and self.mu2 == 0

    def check_stochastic(self, grid=None):
        """Warn (never raise) when a stochastic run leaves the bounded-symbol setting."""
        if self.is_deterministic:
            return
        if self.out_of_hypotheses:
            warnings.warn(f"symbol model {self.name!r} is outside the bounded-symbol hypotheses; "
                          "convergence of stochastic runs is not guaranteed",
                          HypothesisWarning, stacklevel=2)
        if self.K2 >= 1.0:
            warnings.warn(f"sup|h| = {self.K2:g} >= 1", HypothesisWarning, stacklevel=2)
        if grid is not None:
            edge = max(np.abs(self.k(grid.q[[0, -1]])).max(), np.abs(self.h(grid.p[[0, -1]])).max())
            if edge > 1e-8:
                warnings.warn(f"measurement symbols do not decay on the grid (edge value {edge:.2e})",
                              HypothesisWarning, stacklevel=2)


def eval_H(S: SymbolModel, q, p):
    return S.eval_H(q, p)


def _gauss(scale=1.0, width=1.0):
    return lambda x: scale * np.exp(-np.square(x) / (2.0 * width**2))


def _kinetic(x):
    return 0.5 * np.square(x)


def _free(**_):
    return dict(k0=zero1, h0=_kinetic, out_of_hypotheses=True)


def _harmonic(omega=1.0, **_):
    return dict(k0=lambda q: 0.5 * omega**2 * np.square(q), h0=_kinetic, out_of_hypotheses=True)


def _gaussian_well(depth=1.0, **_):
    return dict(k0=lambda q: -depth * np.exp(-np.square(q)), h0=_kinetic)


def _cosine_potential(amplitude=1.0, wavenumber=1.0, **_):
    return dict(k0=lambda q: amplitude * np.cos(wavenumber * q), h0=_kinetic)


def _bounded_coupled(a=0.5, depth=1.0, **_):
    def l(q, p):
        return a * np.exp(-np.square(q) - np.square(p))
    return dict(k0=lambda q: -depth * np.exp(-np.square(q)), h0=_kinetic, l=l)


BUILTINS = {
    "free": _free,
    "gaussian_well": _gaussian_well,
    "cosine_potential": _cosine_potential,
    "harmonic": _harmonic,
    "bounded_coupled": _bounded_coupled,
}

BUILTIN_PARAMS = {
    "free": (),
    "gaussian_well": ("depth",),
    "cosine_potential": ("amplitude", "wavenumber"),
    "harmonic": ("omega",),
    "bounded_coupled": ("a", "depth"),
}
COMMON_PARAMS = ("mu1", "mu2", "k_scale", "k_width", "h_scale", "h_width")


def builtin(name: str, **params) -> SymbolModel:
    """Construct one of the library test symbols.

    Every builtin uses the measurement symbols ``k(q) = k_scale exp(-q^2/(2 k_width^2))``
    and ``h(p) = h_scale exp(-p^2/(2 h_width^2))`` (defaults 1, 1).  ``free`` and
    ``harmonic`` are flagged as outside the bounded-symbol hypotheses.
    """
    if name not in BUILTINS:
        raise SymbolError(f"unknown builtin symbol {name!r}; choose from {sorted(BUILTINS)}")
    allowed = set(BUILTIN_PARAMS[name]) | set(COMMON_PARAMS)
    unknown = set(params) - allowed
    if unknown:
        raise SymbolError(f"unknown parameter(s) {sorted(unknown)} for builtin {name!r}; "
                          f"allowed: {sorted(allowed)}")
    parts = BUILTINS[name](**params)
    ks, kw = params.get("k_scale", 1.0), params.get("k_width", 1.0)
    hs, hw = params.get("h_scale", 1.0), params.get("h_width", 1.0)
    return SymbolModel(
        k=_gauss(ks, kw), h=_gauss(hs, hw),
        mu1=float(params.get("mu1", 0.0)), mu2=float(params.get("mu2", 0.0)),
        name=name, params=dict(params), K1=abs(float(ks)), K2=abs(float(hs)),
        **parts,
    )
