"""Measurement model: targets, separated placements and noisy micrographs.

Coordinates follow the 1-based pixel convention of the measurement model:
a 1D measurement is indexed ``1..m`` and stored at array index ``x - 1``;
a 1D target lives on ``{-n, ..., n-1}`` and is stored at index ``x + n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class PlacementError(ValueError):
    """Separated copies could not all be placed (infeasible density or an
    exhausted rejection-sampling budget)."""

    def __init__(self, requested: int, placed: int):
        super().__init__(f"placed only {placed} of {requested} separated copies")
        self.requested = requested
        self.placed = placed


@dataclass(frozen=True)
class TargetSignal1D:
    """Real target samples on the support ``{-n, ..., n-1}``."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0 or vals.size % 2:
            raise ValueError("a 1D target needs an even, positive number of samples")
        if not np.all(np.isfinite(vals)):
            raise ValueError("target samples must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size // 2

    def at(self, x: int) -> float:
        """Sample at ``x``; zero outside the support."""
        return float(self.values[x + self.n]) if -self.n <= x < self.n else 0.0


@dataclass(frozen=True)
class Placement1D:
    shifts: np.ndarray
    positions: np.ndarray


@dataclass(frozen=True)
class Placement2D:
    angles: np.ndarray
    positions: np.ndarray  # (p, 2), 1-based pixel coordinates


@dataclass(frozen=True)
class MeasurementConfig:
    """Size, density and noise of a simulated measurement.

    ``p`` is derived from ``gamma`` when only the density is given:
    ``round(gamma * m / n)`` in 1D and ``round(gamma * m**2 / n**2)`` in 2D.
    """

    m: int
    n: int
    p: int | None = None
    sigma: float = 0.0
    seed: int = 0
    dim: int = 1
    gamma: float | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n < 1 or self.m < 1:
            raise ValueError("m and n must be positive")
        if self.m < 8 * self.n:
            raise ValueError(f"m={self.m} must be at least 8n={8 * self.n}")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite and non-negative")
        if self.p is None:
            if self.gamma is None:
                raise ValueError("give either p or gamma")
            scale = self.m / self.n if self.dim == 1 else (self.m / self.n) ** 2
            object.__setattr__(self, "p", int(round(self.gamma * scale)))
        if self.p < 0:
            raise ValueError("p must be non-negative")
        if self.p * (4 * self.n) ** self.dim > self.m**self.dim:
            raise PlacementError(self.p, 0)

    @property
    def density(self) -> float:
        """gamma = n p / m in 1D and p n^2 / m^2 in 2D."""
        if self.dim == 1:
            return self.n * self.p / self.m
        return self.p * self.n**2 / self.m**2


@dataclass
class Micrograph:
    pixels: np.ndarray
    placement: Placement1D | Placement2D | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.pixels.shape[0]


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent RNG stream for micrograph ``index`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def rotate1d(target: TargetSignal1D, tau: int) -> TargetSignal1D:
    """Cyclic rotation of the support: ``F_tau(x) = F((x + tau) mod 2n)``.

    Shifts are accepted in ``{-n, ..., 2n-1}``, covering both the centred
    range and the ``0 .. 2n-1`` residues.
    """
    n = target.n
    if not -n <= tau < 2 * n:
        raise ValueError(f"shift {tau} outside {{-n, ..., 2n-1}} for n={n}")
    return TargetSignal1D(np.roll(target.values, -tau))


def _budget(p: int) -> int:
    return 1000 * max(p, 1)


def place_targets_1d(cfg: MeasurementConfig, rng: np.random.Generator) -> np.ndarray:
    """Positions in ``{n+1, ..., m-n+1}`` with ``|x_i - x_j| >= 4n`` and
    ``m - |x_i - x_j| > 4n`` (separation also holds periodically)."""
    m, n, p = cfg.m, cfg.n, cfg.p
    lo, hi = n + 1, m - n + 1
    sep = 4 * n
    blocked = np.zeros(m + 2, dtype=bool)
    out: list[int] = []
    attempts = 0
    budget = _budget(p)
    while len(out) < p:
        if attempts >= budget:
            raise PlacementError(p, len(out))
        attempts += 1
        x = int(rng.integers(lo, hi + 1))
        if blocked[x]:
            continue
        out.append(x)
        # direct distance < 4n, or wrapped distance m - |d| <= 4n
        blocked[max(x - sep + 1, 0) : x + sep] = True
        blocked[: max(x - (m - sep) + 1, 0)] = True
        blocked[x + m - sep :] = True
    return np.array(out, dtype=int)


def _disc_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    a, b = np.meshgrid(r, r, indexing="ij")
    keep = a * a + b * b < radius * radius
    return np.stack([a[keep], b[keep]], axis=1)


def place_targets_2d(cfg: MeasurementConfig, rng: np.random.Generator) -> np.ndarray:
    """Positions in ``{n+1, ..., m-n}^2`` pairwise at Euclidean distance >= 4n."""
    m, n, p = cfg.m, cfg.n, cfg.p
    lo, hi = n + 1, m - n
    if p and hi < lo:
        raise PlacementError(p, 0)
    blocked = np.zeros((m + 1, m + 1), dtype=bool)
    disc = _disc_offsets(4 * n)
    out: list[tuple[int, int]] = []
    attempts = 0
    budget = _budget(p)
    while len(out) < p:
        if attempts >= budget:
            raise PlacementError(p, len(out))
        attempts += 1
        x, y = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        if blocked[x, y]:
            continue
        out.append((x, y))
        pts = disc + (x, y)
        ok = (pts >= 0).all(axis=1) & (pts <= m).all(axis=1)
        blocked[pts[ok, 0], pts[ok, 1]] = True
    return np.array(out, dtype=int).reshape(-1, 2)


def place_targets(cfg: MeasurementConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.dim == 1:
        return place_targets_1d(cfg, rng)
    return place_targets_2d(cfg, rng)


def synthesize_1d(
    cfg: MeasurementConfig, target: TargetSignal1D, rng: np.random.Generator
) -> Micrograph:
    """``M(x) = sum_j F_{tau_j}(x - x_j) + eps(x)`` on ``{1, ..., m}``."""
    if cfg.dim != 1:
        raise ValueError("configuration is not one-dimensional")
    n = target.n
    if n != cfg.n:
        raise ValueError(f"target half-support {n} does not match n={cfg.n}")
    positions = place_targets_1d(cfg, rng)
    shifts = rng.integers(-n, n, size=positions.size)
    pixels = np.zeros(cfg.m)
    for x, tau in zip(positions, shifts):
        # support x - n .. x + n - 1 in 1-based coordinates
        pixels[x - n - 1 : x + n - 1] += np.roll(target.values, -tau)
    if cfg.sigma > 0:
        pixels += rng.normal(0.0, cfg.sigma, size=cfg.m)
    return Micrograph(pixels, Placement1D(shifts, positions))


def synthesize_2d(cfg: MeasurementConfig, v: np.ndarray, basis, rng: np.random.Generator) -> Micrograph:
    """Plant ``p`` steered, rasterized copies of the band-limited image ``v``."""
    from .basis import render_window

    if cfg.dim != 2:
        raise ValueError("configuration is not two-dimensional")
    n = basis.n
    if n != cfg.n:
        raise ValueError(f"basis radius {n} does not match n={cfg.n}")
    positions = place_targets_2d(cfg, rng)
    angles = rng.uniform(0.0, 2 * np.pi, size=len(positions))
    pixels = np.zeros((cfg.m, cfg.m))
    for (x, y), phi in zip(positions, angles):
        win = render_window(v, basis, phi)  # offsets -(n-1) .. n-1
        pixels[x - n : x + n - 1, y - n : y + n - 1] += win
    if cfg.sigma > 0:
        pixels += rng.normal(0.0, cfg.sigma, size=pixels.shape)
    return Micrograph(pixels, Placement2D(angles, positions))


def snr(values: np.ndarray, sigma: float, n: int, dim: int = 1) -> float:
    """Signal power over noise variance.

    1D: ``(2n)^-1 sum F^2 / sigma^2``; 2D: ``(pi n^2 sigma^2)^-1 sum F^2``.
    Zero noise gives ``inf``.
    """
    power = float(np.sum(np.asarray(values, dtype=float) ** 2))
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return math.inf
    if dim == 1:
        return power / (2 * n) / sigma**2
    return power / (math.pi * n**2 * sigma**2)


def sigma_for_snr(values: np.ndarray, target_snr: float, n: int, dim: int = 1) -> float:
    """Noise level giving the requested SNR (inverse of :func:`snr`)."""
    if target_snr <= 0:
        raise ValueError("SNR must be positive")
    if math.isinf(target_snr):
        return 0.0
    return math.sqrt(snr(values, 1.0, n, dim) / target_snr)
