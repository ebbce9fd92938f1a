"""Two independent Wiener paths with Brownian-bridge refinement.

Random numbers come from the counter-based Philox generator keyed by
``(seed, trajectory, process, level)``.  Level 0 holds the base increments
and level ``l > 0`` holds the bridge midpoints inserted by the ``l``-th
refinement, so any path is a pure function of its key and can be generated
in any order or on any worker.

Paths store node values ``W(r_j)`` rather than increments.  Refinement keeps
every parent node bit-for-bit, so coarsening a refined path (taking every
other node) reproduces the parent exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SIDECAR_MAGIC = b"SFWP"
_HEADER = struct.Struct("<4sdQQ")  # magic, t, n, seed


class NoiseError(ValueError):
    pass


def _stream(seed: int, traj: int, process: int, level: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(traj), int(process), int(level)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Nodes of ``W1`` and ``W2`` on the uniform partition of ``[0, t]`` into ``n`` steps.

    ``nodes`` has shape ``(2, n + 1)`` with ``nodes[:, 0] == 0``.
    """

    t: float
    n: int
    nodes: np.ndarray
    seed: int
    traj: int = 0
    level: int = 0
    # increments read from a sidecar, kept bit-exact
    stored_increments: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.shape != (2, self.n + 1):
            raise NoiseError(f"expected nodes of shape (2, {self.n + 1}), got {nodes.shape}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def v(self) -> float:
        return self.t / self.n

    @property
    def increments(self) -> np.ndarray:
        """``(2, n)`` array of ``dW1``, ``dW2``."""
        if self.stored_increments is not None:
            return self.stored_increments.copy()
        return np.diff(self.nodes, axis=1)

    @property
    def dW1(self) -> np.ndarray:
        return self.increments[0]

    @property
    def dW2(self) -> np.ndarray:
        return self.increments[1]

    def coarsen(self, n: int) -> "WienerPath":
        """The ancestor of this path with ``n`` steps (exact node subsampling)."""
        if n <= 0 or self.n % n:
            raise NoiseError(f"cannot coarsen {self.n} steps to {n}")
        factor = self.n // n
        if factor & (factor - 1):
            raise NoiseError("coarsening factor must be a power of two")
        return WienerPath(self.t, n, self.nodes[:, ::factor], self.seed, self.traj,
                          self.level - factor.bit_length() + 1)

    def zeta(self, process: int = 0) -> np.ndarray:
        """Normalised squared increments ``((dW)^2 - v) / v`` (law chi^2(1) - 1)."""
        dw = self.increments[process]
        return (dw * dw - self.v) / self.v

    def dump(self, path) -> None:
        """Write the binary sidecar: header (magic, t, n, seed) then dW1, dW2 as little-endian float64."""
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(SIDECAR_MAGIC, float(self.t), int(self.n), int(self.seed) & (2**64 - 1)))
            fh.write(self.increments.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "WienerPath":
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, t, n, seed = _HEADER.unpack_from(raw)
        if magic != SIDECAR_MAGIC:
            raise NoiseError(f"{path}: not a Wiener path sidecar")
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != 2 * n:
            raise NoiseError(f"{path}: expected {2 * n} increments, found {body.size}")
        inc = body.reshape(2, n).astype(float)
        nodes = np.concatenate([np.zeros((2, 1)), np.cumsum(inc, axis=1)], axis=1)
        return cls(t, n, nodes, seed, stored_increments=inc)


def sample(t: float, n: int, seed: int, traj: int = 0) -> WienerPath:
    """Base-level path: i.i.d. ``Normal(0, t/n)`` increments for each process."""
    if t <= 0:
        raise NoiseError(f"horizon must be positive, got t={t}")
    if n < 1:
        raise NoiseError(f"step count must be >= 1, got n={n}")
    sd = np.sqrt(t / n)
    nodes = np.zeros((2, n + 1))
    for proc in (0, 1):
        z = _stream(seed, traj, proc, 0).standard_normal(n)
        nodes[proc, 1:] = np.cumsum(z * sd)
    return WienerPath(t, n, nodes, seed, traj, 0)


def refine(path: WienerPath) -> WienerPath:
    """Insert Brownian-bridge midpoints: each step splits into two of half length.

    Given a parent increment ``dW`` over a step of length ``v``, the first half
    is ``Normal(dW/2, v/4)`` and the second half is the remainder.
    """
    level = path.level + 1
    sd = 0.5 * np.sqrt(path.v)
    nodes = np.empty((2, 2 * path.n + 1))
    nodes[:, ::2] = path.nodes
    for proc in (0, 1):
        z = _stream(path.seed, path.traj, proc, level).standard_normal(path.n)
        w = path.nodes[proc]
        nodes[proc, 1::2] = 0.5 * (w[:-1] + w[1:]) + sd * z
    return WienerPath(path.t, 2 * path.n, nodes, path.seed, path.traj, level)


def refined(t: float, n_base: int, n_fine: int, seed: int, traj: int = 0) -> WienerPath:
    """Sample at ``n_base`` steps and refine up to ``n_fine`` (a power-of-two multiple)."""
    ratio = n_fine // n_base
    if n_fine % n_base or ratio & (ratio - 1):
        raise NoiseError(f"{n_fine} is not a power-of-two multiple of {n_base}")
    path = sample(t, n_base, seed, traj)
    while path.n < n_fine:
        path = refine(path)
    return path


def levy_modulus(path: WienerPath, process: int = 0) -> float:
    """``max_j |dW_j| / sqrt(-2 v ln v)`` over the single-step windows of one process."""
    if path.n < 64:
        raise NoiseError("the modulus statistic needs at least 64 steps")
    v = path.v
    if v >= 1:
        raise NoiseError(f"step length {v} >= 1 leaves the normalisation undefined")
    return float(np.max(np.abs(path.increments[process])) / np.sqrt(-2.0 * v * np.log(v)))
