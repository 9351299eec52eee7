"""Streaming accumulation of measurement moments and debiased invariant estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import dft_grid
from .invariants import autocorr3_1d, autocorr3_2d, bin_reduce, lag_support_mask
from .model import Micrograph

__all__ = ["MomentAccumulator", "debias_1d", "debias_2d", "bin_reduce", "dft_lag4"]


@dataclass
class MomentAccumulator:
    """Running sums over absorbed micrographs.

    Attributes:
        n: target radius the lag window was built for.
        dim: 1 or 2.
        count: number of micrographs absorbed.
        sum_A: running sum of third-order autocorrelations.
        sum_pix, sum_pix2: running sums of pixel values and their squares.
        pixel_count: total number of pixels absorbed.
        m: common measurement side (``None`` until the first absorb).
    """

    n: int
    dim: int = 1
    count: int = 0
    sum_A: np.ndarray | None = None
    sum_pix: float = 0.0
    sum_pix2: float = 0.0
    pixel_count: int = 0
    m: int | None = None
    support_only: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.sum_A is None:
            self.sum_A = np.zeros((4 * self.n,) * (2 * self.dim))

    def absorb(self, M, workers: int | None = None) -> "MomentAccumulator":
        """Add one micrograph (in place); returns ``self``."""
        pixels = M.pixels if isinstance(M, Micrograph) else np.asarray(M, dtype=float)
        if pixels.ndim != self.dim:
            raise ValueError(f"expected a {self.dim}D micrograph, got shape {pixels.shape}")
        if self.m is not None and pixels.shape[0] != self.m:
            raise ValueError(f"micrograph side {pixels.shape[0]} differs from {self.m}")
        if self.dim == 1:
            A = autocorr3_1d(pixels, self.n)
        else:
            A = autocorr3_2d(pixels, self.n, support_only=self.support_only, workers=workers)
        self.add_moments(A, pixels)
        return self

    def add_moments(self, A: np.ndarray, pixels: np.ndarray) -> None:
        """Add a precomputed autocorrelation together with its micrograph."""
        if A.shape != self.sum_A.shape:
            raise ValueError("autocorrelation shape does not match the accumulator")
        self.m = pixels.shape[0]
        self.sum_A += A
        self.sum_pix += float(np.sum(pixels))
        self.sum_pix2 += float(np.sum(pixels * pixels))
        self.pixel_count += pixels.size
        self.count += 1

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """New accumulator holding the union of both streams."""
        if (self.n, self.dim) != (other.n, other.dim):
            raise ValueError("accumulators were built for different configurations")
        if self.m is not None and other.m is not None and self.m != other.m:
            raise ValueError("accumulators hold micrographs of different sizes")
        return MomentAccumulator(
            n=self.n,
            dim=self.dim,
            count=self.count + other.count,
            sum_A=self.sum_A + other.sum_A,
            sum_pix=self.sum_pix + other.sum_pix,
            sum_pix2=self.sum_pix2 + other.sum_pix2,
            pixel_count=self.pixel_count + other.pixel_count,
            m=self.m if self.m is not None else other.m,
            support_only=self.support_only,
        )

    @property
    def mean_A(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no micrographs absorbed")
        return self.sum_A / self.count

    @property
    def mean_pixel(self) -> float:
        return self.sum_pix / self.pixel_count if self.pixel_count else 0.0

    @property
    def pixel_variance(self) -> float:
        if not self.pixel_count:
            return 0.0
        mu = self.mean_pixel
        return self.sum_pix2 / self.pixel_count - mu * mu


def _delta_lines(n: int) -> np.ndarray:
    """``delta(x1) + delta(x2) + delta(x1 - x2)`` on the 1D lag window."""
    eye = np.eye(4 * n)
    out = eye.copy()
    out[2 * n, :] += 1.0
    out[:, 2 * n] += 1.0
    return out


def debias_1d(acc: MomentAccumulator, sigma: float, gamma: float) -> tuple[np.ndarray, float]:
    """Estimates of ``V_F`` and ``T_F`` from accumulated 1D measurements.

    The expected cyclic autocorrelation is
    ``2 gamma V_F + sigma^2 mean(M) (delta(x1) + delta(x2) + delta(x1 - x2))``
    and the expected measurement mean is ``2 gamma T_F``.

    Args:
        acc: accumulator of 1D micrographs.
        sigma: noise standard deviation.
        gamma: density ``n p / m``.

    Returns:
        ``(V_hat, T_hat)``.
    """
    if acc.dim != 1:
        raise ValueError("accumulator is not one-dimensional")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    mean = acc.mean_pixel
    T_hat = mean / (2 * gamma)
    bias = sigma**2 * mean * _delta_lines(acc.n)
    V_hat = (acc.mean_A - bias) / (2 * gamma)
    return V_hat, T_hat


def _subtract_delta_lines_2d(lag: np.ndarray, value: float) -> None:
    """In place: ``lag -= value * (delta(x1) + delta(x2) + delta(x1 - x2))``."""
    s = lag.shape[0]
    c = s // 2
    lag[c, c] -= value
    lag[:, :, c, c] -= value
    i = np.arange(s)
    lag[i[:, None], i[None, :], i[:, None], i[None, :]] -= value


def dft_lag4(tensor: np.ndarray) -> np.ndarray:
    """4D DFT over X x X of a lag tensor ``[x1_a, x1_b, x2_a, x2_b]``."""
    tmp = dft_grid(tensor)  # last two axes: x2
    return np.moveaxis(dft_grid(np.moveaxis(tmp, (0, 1), (2, 3))), (2, 3), (0, 1))


def debias_2d(
    acc: MomentAccumulator,
    sigma: float | None,
    gamma: float,
    angle_count: int,
    mean: float | None = None,
) -> np.ndarray:
    """Estimate of ``S_hat_F`` from accumulated 2D micrographs.

    Bias lines ``sigma^2 mean(M) (delta(x1) + delta(x2) + delta(x1 - x2))`` are
    removed in lag space, lags that a single copy cannot produce are masked,
    and the result is transformed and scaled by ``angle_count * n^2 / gamma``.

    Args:
        acc: accumulator of 2D micrographs.
        sigma: noise standard deviation; ``None`` uses the pixel variance.
        gamma: density ``p n^2 / m^2``.
        angle_count: number of angles in the target's design (``6N``).
        mean: override for the empirical measurement mean (``gamma mu_F``).

    Returns:
        Complex tensor of shape ``(4n, 4n, 4n, 4n)``.
    """
    if acc.dim != 2:
        raise ValueError("accumulator is not two-dimensional")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    n = acc.n
    var = acc.pixel_variance if sigma is None else sigma**2
    mu = acc.mean_pixel if mean is None else mean
    lag = acc.mean_A
    _subtract_delta_lines_2d(lag, var * mu)
    lag[~lag_support_mask(n)] = 0.0
    return dft_lag4(lag) * (angle_count * n * n / gamma)
