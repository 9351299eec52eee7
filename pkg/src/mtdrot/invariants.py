"""Translation/rotation invariant features and measurement autocorrelations.

1D lag arrays are indexed by ``x + 2n`` for ``x in {-2n, ..., 2n-1}``. In 2D a
point ``k`` of ``X = {-2n, ..., 2n-1}^2`` is stored at ``(k_a + 2n, k_b + 2n)``
and, when flattened, at ``(k_a + 2n) * 4n + (k_b + 2n)``. Four-index tensors
are ordered ``[k1_a, k1_b, k2_a, k2_b]``.

The steerable invariant is

    S_hat(k1, k2) = sum_j F_hat_{phi_j}(k1) F_hat_{phi_j}(k2) F_hat_{phi_j}(-k1 - k2)

over ``phi_j = 2 pi j / (6N)``. For a band-limited real image it is real,
symmetric in its arguments and invariant under a joint quarter turn of both
frequencies. Cost evaluation exploits this by working on one representative
pair per symmetry orbit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import fft as sfft
from scipy import sparse

from .basis import DiscBasis, dft_grid, render_image, steer
from .model import Micrograph, TargetSignal1D

# ---------------------------------------------------------------------------
# 1D target invariants


def _as_values(F) -> np.ndarray:
    return F.values if isinstance(F, TargetSignal1D) else np.asarray(F, dtype=float)


def mean_T(F) -> float:
    """Mean of the target over its ``2n`` support points."""
    return float(np.mean(_as_values(F)))


def _shift_stack(F) -> tuple[np.ndarray, int]:
    """All cyclic rotations of ``F`` zero-padded so that lags up to 2n never wrap."""
    vals = _as_values(F)
    n = vals.size // 2
    size = 8 * n
    stack = np.zeros((2 * n, size))
    for tau in range(-n, n):
        stack[tau + n, 3 * n : 5 * n] = np.roll(vals, -tau)
    return stack, n


def _lagged(row: np.ndarray, n: int) -> np.ndarray:
    # out[a, x] = row[x + lag_a], lag_a = a - 2n
    size = row.size
    idx = np.arange(size)[None, :] + np.arange(-2 * n, 2 * n)[:, None]
    ok = (idx >= 0) & (idx < size)
    return np.where(ok, row[np.clip(idx, 0, size - 1)], 0.0)


def auto2_U(F) -> np.ndarray:
    """Shift-averaged second-order autocorrelation on ``{-2n, ..., 2n-1}``."""
    stack, n = _shift_stack(F)
    out = np.zeros(4 * n)
    for row in stack:
        out += _lagged(row, n) @ row
    return out / (2 * n) ** 2


def auto3_V(F) -> np.ndarray:
    """Shift-averaged third-order autocorrelation, shape ``(4n, 4n)``."""
    stack, n = _shift_stack(F)
    out = np.zeros((4 * n, 4 * n))
    for row in stack:
        lag = _lagged(row, n)
        out += (lag * row) @ lag.T
    return out / (2 * n) ** 2


def autocorr3_1d(M, n: int, chunk: int = 1 << 16) -> np.ndarray:
    """Cyclic third-order autocorrelation ``(1/m) sum_x M(x) M(x+x1) M(x+x2)``."""
    pixels = M.pixels if isinstance(M, Micrograph) else np.asarray(M, dtype=float)
    m = pixels.size
    if m < 4 * n:
        raise ValueError(f"measurement length {m} is shorter than 4n={4 * n}")
    lags = np.arange(-2 * n, 2 * n)
    out = np.zeros((4 * n, 4 * n))
    for start in range(0, m, chunk):
        x = np.arange(start, min(start + chunk, m))
        rows = pixels[(x[None, :] + lags[:, None]) % m]
        out += (rows * pixels[x]) @ rows.T
    return out / m


# ---------------------------------------------------------------------------
# 2D measurement autocorrelation


def lag_support_mask(n: int) -> np.ndarray:
    """Lags where a single disc-supported copy can contribute:
    ``|x1| < 2n``, ``|x2| < 2n`` and ``|x1 - x2| < 2n``."""
    r = np.arange(-2 * n, 2 * n)
    xa, xb = np.meshgrid(r, r, indexing="ij")
    inner = xa**2 + xb**2 < 4 * n * n
    da = xa[:, :, None, None] - xa[None, None]
    db = xb[:, :, None, None] - xb[None, None]
    return inner[:, :, None, None] & inner[None, None] & (da**2 + db**2 < 4 * n * n)


def autocorr3_2d(M, n: int, support_only: bool = False, workers: int | None = None) -> np.ndarray:
    """Zero-extended third-order autocorrelation over all lag pairs in X x X.

    For each ``x1`` the product ``M(x) M(x + x1)`` is cross-correlated with
    ``M`` by FFT. With ``support_only`` only lags inside
    :func:`lag_support_mask` are produced (others are zero); half of those
    rows follow from ``A(x1, x2) = A(x2, x1)`` and ``A(-x1, x2) = A(x1, x1 + x2)``.

    Returns:
        Real array of shape ``(4n, 4n, 4n, 4n)``.
    """
    pixels = M.pixels if isinstance(M, Micrograph) else np.asarray(M, dtype=float)
    m = pixels.shape[0]
    if pixels.shape != (m, m):
        raise ValueError("micrograph must be square")
    if m < 8 * n:
        raise ValueError(f"micrograph side {m} is smaller than 8n={8 * n}")
    s = 4 * n
    size = sfft.next_fast_len(m + 2 * n, real=True)
    padded = np.zeros((m + 2 * s, m + 2 * s))
    padded[s : s + m, s : s + m] = pixels
    spec_m = sfft.rfft2(pixels, s=(size, size), workers=workers)
    window = np.r_[size - 2 * n : size, 0 : 2 * n]
    out = np.zeros((s, s, s, s))
    lags = np.arange(-2 * n, 2 * n)

    def row(a: int, b: int) -> np.ndarray:
        shifted = padded[s + a : s + a + m, s + b : s + b + m]
        prod = pixels * shifted
        spec_p = sfft.rfft2(prod, s=(size, size), workers=workers)
        corr = sfft.irfft2(np.conj(spec_p) * spec_m, s=(size, size), workers=workers)
        return corr[np.ix_(window, window)]

    if not support_only:
        for a in lags:
            for b in lags:
                out[a + 2 * n, b + 2 * n] = row(a, b)
        return out / m**2

    mask = lag_support_mask(n)
    for a in lags:
        for b in lags:
            if a * a + b * b >= 4 * n * n or not (a > 0 or (a == 0 and b >= 0)):
                continue
            out[a + 2 * n, b + 2 * n] = row(a, b)
            if a == 0 and b == 0:
                continue
            # A(-x1, y) = A(x1, x1 + y): row -x1 is row x1 read at shifted lags
            src = out[a + 2 * n, b + 2 * n]
            dst = np.zeros((s, s))
            ya = np.arange(s) + a
            yb = np.arange(s) + b
            okA = (ya >= 0) & (ya < s)
            okB = (yb >= 0) & (yb < s)
            dst[np.ix_(okA, okB)] = src[np.ix_(ya[okA], yb[okB])]
            out[-a + 2 * n, -b + 2 * n] = dst
    out = np.where(mask, out, 0.0)
    return out / m**2


# ---------------------------------------------------------------------------
# Steerable forward model


class AngularDesign:
    """Angles ``phi_j = 2 pi j / P`` (``P = 6N`` by default) and the vectors
    ``u_j(phi, k) = Psi_hat_j(k) e^{i nu_j phi}``."""

    def __init__(self, basis: DiscBasis, count: int | None = None):
        self.basis = basis
        self.count = count if count is not None else max(6 * basis.N, 1)
        if self.count < 1:
            raise ValueError("need at least one angle")
        self.phis = 2 * np.pi * np.arange(self.count) / self.count
        self.phase = np.exp(1j * np.outer(self.phis, basis.nus))  # (P, d)

    @property
    def n(self) -> int:
        return self.basis.n

    def u(self, j: int, k) -> np.ndarray:
        """``u(phi_j, k)`` for a flat frequency index (or indices) ``k``."""
        phase = self.phase[j] if np.ndim(k) == 0 else self.phase[j][:, None]
        return self.basis.psi_hat[:, k] * phase

    def spectra(self, v: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
        """``W[k, j] = v . u(phi_j, k)``, i.e. rotated-image DFTs, shape ``(K, P)``."""
        psi_hat = self.basis.psi_hat if cols is None else self.basis.psi_hat[:, cols]
        return np.ascontiguousarray(((np.asarray(v) * self.phase) @ psi_hat).T)


@numba.njit(cache=True)
def _full_tensor(W, s):
    K, P = W.shape
    out = np.zeros((K, K), dtype=np.complex128)
    h = s // 2
    for i1 in range(K):
        a1, b1 = i1 // s, i1 % s
        for i2 in range(K):
            a2, b2 = i2 // s, i2 % s
            i3 = ((h - a1 - a2) % s) * s + (h - b1 - b2) % s
            acc = 0j
            for p in range(P):
                acc += W[i1, p] * W[i2, p] * W[i3, p]
            out[i1, i2] = acc
    return out


def _check(v: np.ndarray, basis: DiscBasis) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (basis.d,):
        raise ValueError(f"expected {basis.d} coefficients, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("coefficients must be finite")
    return v


def s_hat_truth(v: np.ndarray, design: AngularDesign) -> np.ndarray:
    """Invariant from rendered rotations: render each steered image, take its DFT
    and sum triple products over the design angles.

    Returns:
        Complex tensor of shape ``(4n, 4n, 4n, 4n)``.
    """
    basis = design.basis
    v = _check(v, basis)
    s = basis.side
    W = np.empty((s * s, design.count), dtype=complex)
    for j, phi in enumerate(design.phis):
        W[:, j] = dft_grid(render_image(steer(v, phi, basis), basis)).ravel()
    return _full_tensor(W, s).reshape(s, s, s, s)


def s_hat_forward(v: np.ndarray, design: AngularDesign) -> np.ndarray:
    """Invariant through the steerable expansion
    ``sum_j (v.u(phi_j, k1)) (v.u(phi_j, k2)) (v.u(phi_j, -k1-k2))``."""
    v = _check(v, design.basis)
    s = design.basis.side
    return _full_tensor(design.spectra(v), s).reshape(s, s, s, s)


def neg_sum_index(n: int) -> np.ndarray:
    """Flat index of ``-k1 - k2`` (reduced mod 4n into X) for every flat pair."""
    s = 4 * n
    i = np.arange(s)
    red = (2 * n - i[:, None] - i[None, :]) % s  # per axis
    return (red[:, None, :, None] * s + red[None, :, None, :]).reshape(s * s, s * s)


def s_hat_gradient(v: np.ndarray, design: AngularDesign) -> np.ndarray:
    """Holomorphic gradient ``d S_hat(k1, k2) / d v_j`` for every pair.

    Memory grows as ``(4n)^4 d``; meant for small grids and verification.

    Returns:
        Complex array of shape ``(4n, 4n, 4n, 4n, d)``.
    """
    basis = design.basis
    v = _check(v, basis)
    s, d = basis.side, basis.d
    K = s * s
    W = design.spectra(v)
    k3 = neg_sum_index(basis.n)
    out = np.zeros((K, K, d), dtype=complex)
    for j in range(design.count):
        U = (basis.psi_hat * design.phase[j][:, None]).T  # (K, d)
        w = W[:, j]
        w3 = w[k3]
        out += U[:, None, :] * (w[None, :] * w3)[:, :, None]
        out += U[None, :, :] * (w[:, None] * w3)[:, :, None]
        out += U[k3] * (w[:, None] * w[None, :])[:, :, None]
    return out.reshape(s, s, s, s, d)


# ---------------------------------------------------------------------------
# Orbit-reduced pair tables


@numba.njit(cache=True)
def _rot(i, s):
    a, b = i // s, i % s
    return ((s - b) % s) * s + a


@numba.njit(cache=True)
def _orbit(i1, i2, s, K):
    """Codes of the 4 joint rotations followed by the 4 swapped rotations."""
    codes = np.empty(8, dtype=np.int64)
    a, b = i1, i2
    for r in range(4):
        codes[r] = a * K + b
        codes[r + 4] = b * K + a
        a, b = _rot(a, s), _rot(b, s)
    return codes


@numba.njit(cache=True)
def _enumerate(s, mag2, limit, fill, r1, r2, r3, weight, rot_size):
    K = s * s
    h = s // 2
    count = 0
    for i1 in range(K):
        if mag2[i1] > limit:
            continue
        a1, b1 = i1 // s, i1 % s
        for i2 in range(K):
            if mag2[i2] > limit:
                continue
            a2, b2 = i2 // s, i2 % s
            i3 = ((h - a1 - a2) % s) * s + (h - b1 - b2) % s
            if mag2[i3] > limit:
                continue
            codes = _orbit(i1, i2, s, K)
            own = codes[0]
            canonical = True
            stab = 0
            stab_rot = 0
            for r in range(8):
                if codes[r] < own:
                    canonical = False
                    break
                if codes[r] == own:
                    stab += 1
                    if r < 4:
                        stab_rot += 1
            if not canonical:
                continue
            if fill:
                r1[count] = i1
                r2[count] = i2
                r3[count] = i3
                weight[count] = 8 // stab
                rot_size[count] = 4 // stab_rot
            count += 1
    return count


@numba.njit(cache=True)
def _pair_rep(s, mag2, limit, rep_codes, out):
    K = s * s
    h = s // 2
    for i1 in range(K):
        for i2 in range(K):
            idx = i1 * K + i2
            out[idx] = -1
            if mag2[i1] > limit or mag2[i2] > limit:
                continue
            a1, b1 = i1 // s, i1 % s
            a2, b2 = i2 // s, i2 % s
            i3 = ((h - a1 - a2) % s) * s + (h - b1 - b2) % s
            if mag2[i3] > limit:
                continue
            codes = _orbit(i1, i2, s, K)
            best = codes[0]
            for r in range(1, 8):
                if codes[r] < best:
                    best = codes[r]
            out[idx] = np.searchsorted(rep_codes, best)


def _mag2(n: int) -> np.ndarray:
    r = np.arange(-2 * n, 2 * n)
    return (r[:, None] ** 2 + r[None, :] ** 2).ravel().astype(np.float64)


@dataclass
class PairTable:
    """One representative ``(k1, k2)`` per orbit of the 8-element group generated
    by joint quarter turns and argument swap, restricted to pairs with
    ``|k1|, |k2|, |k1 + k2| <= kmax``.

    Attributes:
        r1, r2, r3: flat indices of ``k1``, ``k2`` and ``-k1 - k2``.
        weight: orbit size.
        rot_size: size of the quarter-turn orbit of the representative.
    """

    n: int
    kmax: float | None
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    weight: np.ndarray
    rot_size: np.ndarray
    _pair_rep: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.r1.size

    @property
    def codes(self) -> np.ndarray:
        K = (4 * self.n) ** 2
        return self.r1.astype(np.int64) * K + self.r2

    @property
    def limit(self) -> float:
        return np.inf if self.kmax is None else float(self.kmax) ** 2

    def pair_rep(self) -> np.ndarray:
        """Representative index of every flat pair (``-1`` if not covered)."""
        if self._pair_rep is None:
            K = (4 * self.n) ** 2
            out = np.empty(K * K, dtype=np.int32)
            _pair_rep(4 * self.n, _mag2(self.n), self.limit, self.codes, out)
            self._pair_rep = out
        return self._pair_rep

    def covered(self) -> np.ndarray:
        return self.pair_rep() >= 0

    def reduce(self, tensor: np.ndarray) -> np.ndarray:
        """Orbit means of the real part of a full pair tensor."""
        rep = self.pair_rep()
        flat = np.real(np.asarray(tensor)).ravel()
        keep = rep >= 0
        sums = np.bincount(rep[keep], weights=flat[keep], minlength=self.size)
        return sums / self.weight


def pair_table(n: int, kmax: float | None = None) -> PairTable:
    s = 4 * n
    mag2 = _mag2(n)
    limit = np.inf if kmax is None else float(kmax) ** 2
    empty_i = np.empty(0, dtype=np.int64)
    count = _enumerate(s, mag2, limit, False, empty_i, empty_i, empty_i, empty_i, empty_i)
    r1 = np.empty(count, dtype=np.int64)
    r2 = np.empty(count, dtype=np.int64)
    r3 = np.empty(count, dtype=np.int64)
    weight = np.empty(count, dtype=np.int64)
    rot_size = np.empty(count, dtype=np.int64)
    _enumerate(s, mag2, limit, True, r1, r2, r3, weight, rot_size)
    return PairTable(n, kmax, r1, r2, r3, weight.astype(float), rot_size.astype(float))


@numba.njit(cache=True)
def _forward_pairs(W, r1, r2, r3, out):
    P = W.shape[1]
    for i in range(r1.size):
        acc = 0.0
        for p in range(P):
            acc += (W[r1[i], p] * W[r2[i], p] * W[r3[i], p]).real
        out[i] = acc


@numba.njit(cache=True)
def _scatter_pairs(W, r1, r2, r3, coef, G):
    P = W.shape[1]
    for i in range(r1.size):
        c = coef[i]
        if c == 0.0:
            continue
        a, b, e = r1[i], r2[i], r3[i]
        for p in range(P):
            wa, wb, we = W[a, p], W[b, p], W[e, p]
            G[a, p] += c * wb * we
            G[b, p] += c * wa * we
            G[e, p] += c * wa * wb


class PairModel:
    """Fast evaluation of ``S_hat_v`` on a :class:`PairTable` and of the
    adjoint needed for least-squares gradients."""

    def __init__(self, design: AngularDesign, table: PairTable):
        if table.n != design.n:
            raise ValueError("pair table and design disagree on n")
        self.design = design
        self.table = table
        used = np.unique(np.concatenate([table.r1, table.r2, table.r3]))
        self.cols = used
        remap = np.full((4 * table.n) ** 2, -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        self.r1 = remap[table.r1]
        self.r2 = remap[table.r2]
        self.r3 = remap[table.r3]
        self.psi_hat = np.ascontiguousarray(design.basis.psi_hat[:, used])

    def spectra(self, v: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(((np.asarray(v) * self.design.phase) @ self.psi_hat).T)

    def forward(self, v: np.ndarray, W: np.ndarray | None = None) -> np.ndarray:
        """Real ``S_hat_v`` at every representative."""
        if W is None:
            W = self.spectra(v)
        out = np.empty(self.r1.size)
        _forward_pairs(W, self.r1, self.r2, self.r3, out)
        return out

    def adjoint(self, W: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """``g_j`` with ``d(sum_i coef_i S_hat_i) = Re sum_j g_j dv_j``."""
        G = np.zeros_like(W)
        _scatter_pairs(W, self.r1, self.r2, self.r3, np.ascontiguousarray(coef, dtype=float), G)
        back = self.psi_hat @ G  # (d, P)
        return np.sum(back * self.design.phase.T, axis=1)


# ---------------------------------------------------------------------------
# Binning


@numba.njit(cache=True)
def _bin_keys(s, b1, b2, pair_ok, out_a, out_b, out_c):
    K = s * s
    h = s // 2
    for i1 in range(K):
        for i2 in range(K):
            idx = i1 * K + i2
            if not pair_ok[idx]:
                out_c[idx] = -2
                continue
            # quarter-turn canonical element keeps bins orbit-invariant on the
            # periodic grid (Nyquist rows wrap under rotation); the order-free
            # key picks the same rotation for (k1, k2) and (k2, k1)
            a, b = i1, i2
            best_a, best_b = a, b
            best = min(a, b) * K + max(a, b)
            for r in range(3):
                a, b = _rot(a, s), _rot(b, s)
                key = min(a, b) * K + max(a, b)
                if key < best:
                    best, best_a, best_b = key, a, b
            x1 = best_a // s - h
            y1 = best_a % s - h
            x2 = best_b // s - h
            y2 = best_b % s - h
            m1 = np.sqrt(x1 * x1 + y1 * y1)
            m2 = np.sqrt(x2 * x2 + y2 * y2)
            out_a[idx] = int(np.floor(b1 * m1))
            out_b[idx] = int(np.floor(b1 * m2))
            if m1 == 0.0 or m2 == 0.0:
                out_c[idx] = -1
            else:
                theta = np.arctan2(abs(x1 * y2 - y1 * x2), x1 * x2 + y1 * y2)
                out_c[idx] = int(np.floor(b2 * theta))


def bin_key(k1, k2, b1: float = 1.0, b2: float = 6.0 / np.pi) -> tuple[int, int, int]:
    """Bin ``(floor(b1|k1|), floor(b1|k2|), floor(b2 theta))`` of one pair of
    (not necessarily integer) frequencies; ``theta`` in ``[0, pi]`` is the
    unsigned angle between them and is ``-1`` when either vector is zero."""
    x1, y1 = map(float, k1)
    x2, y2 = map(float, k2)
    m1, m2 = np.hypot(x1, y1), np.hypot(x2, y2)
    if m1 == 0.0 or m2 == 0.0:
        return int(np.floor(b1 * m1)), int(np.floor(b1 * m2)), -1
    theta = np.arctan2(abs(x1 * y2 - y1 * x2), x1 * x2 + y1 * y2)
    return int(np.floor(b1 * m1)), int(np.floor(b1 * m2)), int(np.floor(b2 * theta))


@dataclass
class BinMap:
    """Assignment of frequency pairs to bins ``(floor(b1|k1|), floor(b1|k2|), floor(b2 theta))``.

    Attributes:
        labels: bin id per flat pair (``-1`` when excluded by ``kmax``).
        keys: ``(nbins, 3)`` bin coordinates; pairs with a zero frequency use
            third coordinate ``-1``.
        sizes: ``|I_T|`` per bin.
    """

    n: int
    b1: float
    b2: float
    kmax: float | None
    labels: np.ndarray = field(repr=False)
    keys: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return self.keys.shape[0]

    def signature(self) -> tuple:
        return (self.n, float(self.b1), float(self.b2), self.kmax, self.count)


def bin_map(n: int, b1: float = 1.0, b2: float = 6.0 / np.pi, kmax: float | None = None) -> BinMap:
    if b1 <= 0 or b2 <= 0:
        raise ValueError("bin scales must be positive")
    s = 4 * n
    K = s * s
    if kmax is None:
        ok = np.ones(K * K, dtype=np.bool_)
    else:
        mag2 = _mag2(n)
        lim = float(kmax) ** 2
        k3 = neg_sum_index(n).ravel()
        ok = ((mag2[:, None] <= lim) & (mag2[None, :] <= lim)).ravel() & (mag2[k3] <= lim)
    ka = np.empty(K * K, dtype=np.int64)
    kb = np.empty(K * K, dtype=np.int64)
    kc = np.empty(K * K, dtype=np.int64)
    _bin_keys(s, float(b1), float(b2), ok, ka, kb, kc)
    valid = kc >= -1
    span_b = int(kb[valid].max()) + 1 if valid.any() else 1
    span_c = int(kc[valid].max()) + 2 if valid.any() else 1
    code = (ka * span_b + kb) * span_c + (kc + 1)
    uniq, inv = np.unique(code[valid], return_inverse=True)
    labels = np.full(K * K, -1, dtype=np.int32)
    labels[valid] = inv
    keys = np.stack([uniq // span_c // span_b, (uniq // span_c) % span_b, uniq % span_c - 1], axis=1)
    sizes = np.bincount(inv, minlength=uniq.size).astype(float)
    return BinMap(n, float(b1), float(b2), kmax, labels, keys, sizes)


def bin_reduce(tensor: np.ndarray, bmap: BinMap) -> np.ndarray:
    """``out[T] = sum over (k1, k2) in I_T of tensor(k1, k2)``."""
    flat = np.asarray(tensor).ravel()
    if flat.size != bmap.labels.size:
        raise ValueError("tensor shape does not match the bin map")
    keep = bmap.labels >= 0
    lab = bmap.labels[keep]
    re = np.bincount(lab, weights=np.real(flat[keep]), minlength=bmap.count)
    if np.iscomplexobj(flat):
        im = np.bincount(lab, weights=np.imag(flat[keep]), minlength=bmap.count)
        return re + 1j * im
    return re


def rep_bin_matrix(table: PairTable, bmap: BinMap) -> sparse.csr_matrix:
    """Sparse ``(nbins, reps)`` matrix with ``(B @ s)[T] = sum_{I_T} S_hat`` for
    any orbit-invariant ``S_hat`` given by its representative values ``s``."""
    if table.n != bmap.n or table.kmax != bmap.kmax:
        raise ValueError("pair table and bin map were built for different grids")
    K = (4 * table.n) ** 2
    lab_a = bmap.labels[table.r1 * K + table.r2]
    lab_b = bmap.labels[table.r2 * K + table.r1]
    own = table.rot_size
    other = table.weight - own
    rows = np.concatenate([lab_a, lab_b[other > 0]])
    cols = np.concatenate([np.arange(table.size), np.flatnonzero(other > 0)])
    vals = np.concatenate([own, other[other > 0]])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(bmap.count, table.size))
