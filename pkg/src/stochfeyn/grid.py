"""Uniform position/momentum grids and the unitary discrete Fourier pair.

The truncated line ``[-L/2, L/2)`` is sampled at ``N`` points.  Momentum nodes
are centred, ``p_k = 2 pi k / L`` for ``k = -N/2 .. N/2 - 1``, and the transform
uses the unitary convention

    (F psi)(p) = (2 pi)^{-1/2} \\int psi(q) exp(-i p q) dq,

discretised with the ``dq`` weight, so that ``F`` preserves the grid norm
exactly (position norm weighted by ``dq``, momentum norm by ``dp``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

POSITION = "position"
MOMENTUM = "momentum"


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    L: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise GridError(f"grid length must be positive, got L={self.L!r}")
        n = int(self.N)
        if n != self.N or n < 8 or n & (n - 1):
            raise GridError(f"grid size must be a power of two >= 8, got N={self.N!r}")

    @property
    def dq(self) -> float:
        return self.L / self.N

    @property
    def dp(self) -> float:
        return 2.0 * np.pi / self.L

    @cached_property
    def q(self) -> np.ndarray:
        q = -0.5 * self.L + self.dq * np.arange(self.N)
        q.setflags(write=False)
        return q

    @cached_property
    def p(self) -> np.ndarray:
        p = self.dp * np.arange(-self.N // 2, self.N // 2)
        p.setflags(write=False)
        return p

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(i p_k L/2) = (-1)^k from the -L/2 offset of the position grid
        ph = np.where(np.arange(-self.N // 2, self.N // 2) % 2 == 0, 1.0, -1.0)
        ph.setflags(write=False)
        return ph

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Position samples -> momentum samples along the last axis."""
        spec = np.fft.fftshift(np.fft.fft(values, axis=-1), axes=-1)
        return spec * (self._phase * (self.dq / np.sqrt(2.0 * np.pi)))

    def ifft(self, values: np.ndarray) -> np.ndarray:
        """Momentum samples -> position samples along the last axis (exact inverse of ``fft``)."""
        spec = np.fft.ifftshift(values * self._phase, axes=-1)
        return np.fft.ifft(spec, axis=-1) * (self.N * self.dp / np.sqrt(2.0 * np.pi))

    def weight(self, rep: str) -> float:
        return self.dq if rep == POSITION else self.dp


def make_grid(L: float, N: int) -> Grid:
    return Grid(float(L), N)


@dataclass(frozen=True, eq=False)
class Wavefunction:
    """Complex samples of a state on a grid, tagged by representation."""

    grid: Grid
    values: np.ndarray
    rep: str = POSITION

    def __post_init__(self):
        if self.rep not in (POSITION, MOMENTUM):
            raise GridError(f"unknown representation {self.rep!r}")
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.grid.N,):
            raise GridError(f"expected {self.grid.N} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("wavefunction contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Wavefunction":
        return cls(grid, fn(grid.q))

    def with_values(self, values) -> "Wavefunction":
        return Wavefunction(self.grid, values, self.rep)

    def __add__(self, other):
        _check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def boundary_mass(self, fraction: float = 0.05) -> float:
        """Squared norm carried by the outer ``fraction`` of the domain on each side."""
        if self.rep != POSITION:
            raise GridError("boundary mass is measured in the position representation")
        m = max(1, int(round(fraction * self.grid.N)))
        edge = np.concatenate([self.values[:m], self.values[-m:]])
        return float(np.sum(np.abs(edge) ** 2) * self.grid.dq)


def _check_compatible(a: Wavefunction, b: Wavefunction):
    if a.grid != b.grid:
        raise GridError("wavefunctions live on different grids")
    if a.rep != b.rep:
        raise GridError(f"representation mismatch: {a.rep} vs {b.rep}")


def to_momentum(psi: Wavefunction) -> Wavefunction:
    if psi.rep != POSITION:
        raise GridError("to_momentum expects a position-representation wavefunction")
    return Wavefunction(psi.grid, psi.grid.fft(psi.values), MOMENTUM)


def to_position(psi: Wavefunction) -> Wavefunction:
    if psi.rep != MOMENTUM:
        raise GridError("to_position expects a momentum-representation wavefunction")
    return Wavefunction(psi.grid, psi.grid.ifft(psi.values), POSITION)


def inner(psi1: Wavefunction, psi2: Wavefunction) -> complex:
    """<psi1, psi2>, antilinear in the first argument."""
    _check_compatible(psi1, psi2)
    return complex(np.vdot(psi1.values, psi2.values) * psi1.grid.weight(psi1.rep))


def norm(psi: Wavefunction) -> float:
    return float(np.sqrt(np.sum(np.abs(psi.values) ** 2) * psi.grid.weight(psi.rep)))


def gaussian(grid: Grid, center: float = 0.0, width: float = 1.0, momentum: float = 0.0) -> Wavefunction:
    """Normalised Gaussian packet ``(pi w^2)^{-1/4} exp(-(q-c)^2/(2w^2) + i k q)``."""
    q = grid.q
    vals = (np.pi * width**2) ** -0.25 * np.exp(-((q - center) ** 2) / (2 * width**2) + 1j * momentum * q)
    return Wavefunction(grid, vals)
