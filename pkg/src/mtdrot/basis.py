"""Steerable Dirichlet-Laplacian eigenbasis on the unit disc and its samples.

Each basis function is ``psi_{nu,q}(r, theta) = J_nu(lambda_{|nu|,q} r) e^{i nu theta}``
for integer ``nu`` (with ``J_{-nu} = (-1)^nu J_nu``), where ``lambda_{|nu|,q}`` is the
``q``-th positive root of ``J_|nu|``. Images are sampled on the grid
``X = {-2n, ..., 2n-1}^2`` through ``Psi(x) = psi(x / n)``, which vanishes for
``|x| >= n``. Array index ``i`` along either axis corresponds to ``x = i - 2n``.

A coefficient vector ``v`` renders to a real image exactly when
``v[(-nu, q)] = (-1)^nu conj(v[(nu, q)])``. Coefficients use the analytic
(unnormalized) convention; discrete column norms are only used internally to
condition least-squares projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .bessel import bessel_j, bessel_j_signed, bessel_roots


@dataclass
class DiscBasis:
    n: int
    bandlimit: float
    nus: np.ndarray
    qs: np.ndarray
    roots: np.ndarray
    # flat indices (into the 4n x 4n grid) of pixels strictly inside the disc
    pixels: np.ndarray = field(repr=False)
    psi_disc: np.ndarray = field(repr=False)
    _psi_hat: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.nus.size

    @property
    def N(self) -> int:
        return int(np.max(np.abs(self.nus))) if self.d else 0

    @property
    def side(self) -> int:
        return 4 * self.n

    @property
    def partner(self) -> np.ndarray:
        """Index of the ``(-nu, q)`` entry for each ``(nu, q)`` entry."""
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self.nus, self.qs))}
        return np.array([lookup[(-int(a), int(b))] for a, b in zip(self.nus, self.qs)])

    @property
    def index(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(self.nus, self.qs)]

    def psi(self, j: int) -> np.ndarray:
        """Full ``4n x 4n`` sample grid of basis function ``j``."""
        out = np.zeros(self.side * self.side, dtype=complex)
        out[self.pixels] = self.psi_disc[j]
        return out.reshape(self.side, self.side)

    @property
    def psi_hat(self) -> np.ndarray:
        """DFTs of all basis functions, shape ``(d, (4n)^2)`` over flattened X."""
        if self._psi_hat is None:
            out = np.empty((self.d, self.side * self.side), dtype=complex)
            for start in range(0, self.d, 64):
                stop = min(start + 64, self.d)
                block = np.zeros((stop - start, self.side * self.side), dtype=complex)
                block[:, self.pixels] = self.psi_disc[start:stop]
                block = block.reshape(-1, self.side, self.side)
                out[start:stop] = dft_grid(block).reshape(stop - start, -1)
            self._psi_hat = out
        return self._psi_hat


def grid_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer coordinates ``(x_a, x_b)`` of every point of X, each ``(4n, 4n)``."""
    r = np.arange(-2 * n, 2 * n)
    return np.meshgrid(r, r, indexing="ij")


def _candidates(bound: float) -> list[tuple[float, int, int]]:
    out = []
    nu = 0
    while True:
        count = 1
        roots = bessel_roots(nu, count)
        if roots[0] > bound:
            break
        while roots[-1] <= bound:
            count *= 2
            roots = bessel_roots(nu, count)
        for q, lam in enumerate(roots, start=1):
            if lam > bound:
                break
            out.append((float(lam), nu, q))
            if nu:
                out.append((float(lam), -nu, q))
        nu += 1
    # ascending root; ties by |nu| then positive before negative
    out.sort(key=lambda t: (t[0], abs(t[1]), -t[1]))
    return out


def build_basis(n: int, count: int | None = None, bandlimit: float | None = None) -> DiscBasis:
    """Basis of the ``count`` lowest eigenfunctions, or all with root <= ``bandlimit``.

    Conjugate pairs ``(+nu, q)``/``(-nu, q)`` are never split: a count that would
    cut a pair in half also takes the partner.
    """
    if (count is None) == (bandlimit is None):
        raise ValueError("give exactly one of count or bandlimit")
    if n < 1:
        raise ValueError("n must be positive")
    if count is not None:
        if count < 1:
            raise ValueError("count must be at least 1")
        bound = 2.0 * np.sqrt(count) + 4.0
        cands = _candidates(bound)
        while len(cands) < count + 1:
            bound *= 1.5
            cands = _candidates(bound)
        chosen = cands[:count]
        if chosen[-1][1] > 0:
            chosen = cands[: count + 1]
        bandlimit = chosen[-1][0]
    else:
        if bandlimit < bessel_roots(0, 1)[0]:
            raise ValueError("bandlimit is below the smallest eigenvalue")
        chosen = _candidates(bandlimit)
    roots = np.array([c[0] for c in chosen])
    nus = np.array([c[1] for c in chosen], dtype=int)
    qs = np.array([c[2] for c in chosen], dtype=int)

    xa, xb = grid_coords(n)
    rad = np.hypot(xa, xb) / n
    inside = rad.ravel() < 1.0
    pixels = np.flatnonzero(inside)
    r = rad.ravel()[pixels]
    theta = np.arctan2(xb, xa).ravel()[pixels]
    psi = np.empty((nus.size, pixels.size), dtype=complex)
    for j, (nu, lam) in enumerate(zip(nus, roots)):
        psi[j] = bessel_j_signed(int(nu), lam * r) * np.exp(1j * nu * theta)
    return DiscBasis(n, float(bandlimit), nus, qs, roots, pixels, psi)


def dft_grid(grid: np.ndarray) -> np.ndarray:
    """``G(k) = sum_x g(x) exp(-2 pi i x.k / 4n)`` over X (last two axes)."""
    axes = (-2, -1)
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(grid, axes=axes), axes=axes), axes=axes)


def idft_grid(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft_grid`."""
    axes = (-2, -1)
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(spectrum, axes=axes), axes=axes), axes=axes)


def _nus(basis_or_nus) -> np.ndarray:
    return basis_or_nus.nus if isinstance(basis_or_nus, DiscBasis) else np.asarray(basis_or_nus)


def steer(v: np.ndarray, phi: float, basis) -> np.ndarray:
    """Rotate the image by ``phi``: ``v[(nu, q)] -> v[(nu, q)] e^{i nu phi}``."""
    return np.asarray(v) * np.exp(1j * _nus(basis) * phi)


def mirror(v: np.ndarray, basis: DiscBasis) -> np.ndarray:
    """Coefficients of the image reflected across the first axis (theta -> -theta)."""
    v = np.asarray(v)
    return v[basis.partner] * np.where(basis.nus % 2, -1.0, 1.0)


def real_image_residual(v: np.ndarray, basis: DiscBasis) -> float:
    """Largest violation of the real-image constraint on ``v``."""
    v = np.asarray(v)
    sign = np.where(basis.nus % 2, -1.0, 1.0)
    return float(np.max(np.abs(v[basis.partner] - sign * np.conj(v)), initial=0.0))


def render_image(v: np.ndarray, basis: DiscBasis, tol: float = 1e-10) -> np.ndarray:
    """Real ``4n x 4n`` image ``F(x) = sum_j v_j Psi_j(x)``."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (basis.d,):
        raise ValueError(f"expected {basis.d} coefficients, got shape {v.shape}")
    vals = v @ basis.psi_disc
    scale = max(float(np.linalg.norm(v)), 1e-300)
    if np.max(np.abs(vals.imag), initial=0.0) > tol * scale * max(1.0, np.sqrt(basis.d)):
        raise ValueError("coefficients violate the real-image constraint")
    out = np.zeros(basis.side * basis.side)
    out[basis.pixels] = vals.real
    return out.reshape(basis.side, basis.side)


def render_window(v: np.ndarray, basis: DiscBasis, phi: float = 0.0) -> np.ndarray:
    """Central ``(2n-1) x (2n-1)`` window of the image steered by ``phi``."""
    n = basis.n
    img = render_image(steer(v, phi, basis), basis)
    return img[n + 1 : 3 * n, n + 1 : 3 * n]


def evaluate(v: np.ndarray, basis: DiscBasis, r, theta) -> np.ndarray:
    """Continuous expansion ``f(r, theta)`` at polar points (``r <= 1``)."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(np.broadcast(r, theta).shape, dtype=complex)
    for coef, nu, lam in zip(v, basis.nus, basis.roots):
        out += coef * bessel_j_signed(int(nu), lam * r) * np.exp(1j * nu * theta)
    return np.where(r < 1.0, out, 0.0)


def project(grid: np.ndarray, basis: DiscBasis, max_condition: float = 1e8) -> np.ndarray:
    """Least-squares coefficients of ``grid`` against the sampled basis.

    The fit uses pixels strictly inside the disc. ``grid`` may be the full
    ``4n x 4n`` array or a centred ``(2n+1) x (2n+1)`` raster.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.shape != (basis.side, basis.side):
        grid = embed_raster(grid, basis.n)
    cols = basis.psi_disc.T
    norms = np.linalg.norm(cols, axis=0)
    a = cols / norms
    sv = np.linalg.svd(a, compute_uv=False)
    if a.shape[1] > a.shape[0] or sv[-1] <= 0 or sv[0] / sv[-1] > max_condition:
        raise ValueError(
            f"{basis.d} basis functions are not resolvable on {basis.pixels.size} pixels"
        )
    coef, *_ = np.linalg.lstsq(a, grid.ravel()[basis.pixels].astype(complex), rcond=None)
    v = coef / norms
    # snap to the real-image subspace
    sign = np.where(basis.nus % 2, -1.0, 1.0)
    return 0.5 * (v + sign * np.conj(v[basis.partner]))


def embed_raster(img: np.ndarray, n: int) -> np.ndarray:
    """Centre a small odd-sized raster on the ``4n x 4n`` grid (centre pixel at x=0)."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    if h % 2 == 0 or w % 2 == 0 or h > 4 * n - 1 or w > 4 * n - 1:
        raise ValueError(f"cannot centre a {h}x{w} raster on the grid for n={n}")
    out = np.zeros((4 * n, 4 * n))
    c = 2 * n
    out[c - h // 2 : c + h // 2 + 1, c - w // 2 : c + w // 2 + 1] = img
    return out


def random_coeffs(basis: DiscBasis, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random coefficients satisfying the real-image constraint."""
    return from_real(scale * rng.standard_normal(basis.d), basis)


# Real parameterization: nu = 0 entries contribute their (real) value; nu > 0
# entries contribute (re, im); nu < 0 entries follow from their partner.


def _layout(basis: DiscBasis) -> tuple[np.ndarray, np.ndarray]:
    zero = np.flatnonzero(basis.nus == 0)
    pos = np.flatnonzero(basis.nus > 0)
    return zero, pos


def from_real(theta: np.ndarray, basis: DiscBasis) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.d,):
        raise ValueError(f"expected {basis.d} real parameters")
    zero, pos = _layout(basis)
    v = np.zeros(basis.d, dtype=complex)
    v[zero] = theta[: zero.size]
    z = theta[zero.size :: 2] + 1j * theta[zero.size + 1 :: 2]
    v[pos] = z
    sign = np.where(basis.nus[pos] % 2, -1.0, 1.0)
    v[basis.partner[pos]] = sign * np.conj(z)
    return v


def to_real(v: np.ndarray, basis: DiscBasis) -> np.ndarray:
    zero, pos = _layout(basis)
    v = np.asarray(v)
    out = np.empty(basis.d)
    out[: zero.size] = v[zero].real
    out[zero.size :: 2] = v[pos].real
    out[zero.size + 1 :: 2] = v[pos].imag
    return out


def real_gradient(dv: np.ndarray, basis: DiscBasis) -> np.ndarray:
    """Chain rule from ``dg = Re sum_j dv[j] * dvcoef_j`` to the real parameters."""
    zero, pos = _layout(basis)
    neg = basis.partner[pos]
    sign = np.where(basis.nus[pos] % 2, -1.0, 1.0)
    out = np.empty(basis.d)
    out[: zero.size] = dv[zero].real
    out[zero.size :: 2] = dv[pos].real + sign * dv[neg].real
    out[zero.size + 1 :: 2] = -dv[pos].imag + sign * dv[neg].imag
    return out
