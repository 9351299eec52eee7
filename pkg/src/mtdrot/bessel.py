"""Integer-order Bessel functions of the first kind and their positive roots.

Values come from a short power series near the origin and from Miller's
backward recurrence (normalized with ``J_0 + 2 * sum_k J_2k = 1``) elsewhere.
Roots are bracketed by interlacing with the roots of the next lower order and
polished with a safeguarded Newton iteration.
"""

from __future__ import annotations

import math

import numpy as np

# Largest order / argument the basis code ever asks for; anything beyond is a
# caller bug rather than a numerical regime we support.
MAX_ORDER = 400
MAX_ARGUMENT = 2000.0

_SERIES_CUTOFF = 1.0
_RESCALE = 1e200


def _series(nu: int, x: np.ndarray) -> np.ndarray:
    half = 0.5 * x
    term = half**nu / math.factorial(nu)
    total = term.copy()
    q = -half * half
    for k in range(1, 40):
        term = term * q / (k * (k + nu))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _miller(nu: int, x: np.ndarray) -> np.ndarray:
    # Start order well above both nu and x so the seed error decays below eps.
    top = int(max(nu, float(np.max(x)))) + 20 + int(math.sqrt(40.0 * max(nu, float(np.max(x)), 1.0)))
    top += top % 2
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    out = np.zeros_like(x)
    inv = 2.0 / x
    for k in range(top, 0, -1):
        j_prev = k * inv * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if k - 1 == nu:
            out = j_cur.copy()
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
        big = np.abs(j_cur) > _RESCALE
        if np.any(big):
            s = np.where(big, 1.0 / _RESCALE, 1.0)
            j_cur *= s
            j_next *= s
            norm *= s
            out *= s
    norm += j_cur  # J_0 term
    return out / norm


def _series_scalar(nu: int, x: float) -> float:
    half = 0.5 * x
    term = half**nu / math.factorial(nu)
    total = term
    q = -half * half
    for k in range(1, 40):
        term *= q / (k * (k + nu))
        total += term
        if abs(term) <= 1e-17 * abs(total):
            break
    return total


def _miller_scalar(nu: int, x: float) -> float:
    top = int(max(nu, x)) + 20 + int(math.sqrt(40.0 * max(nu, x, 1.0)))
    top += top % 2
    j_next, j_cur, norm, out = 0.0, 1e-300, 0.0, 0.0
    inv = 2.0 / x
    for k in range(top, 0, -1):
        j_next, j_cur = j_cur, k * inv * j_cur - j_next
        if k - 1 == nu:
            out = j_cur
        if (k - 1) % 2 == 0 and k > 1:
            norm += 2.0 * j_cur
        if abs(j_cur) > _RESCALE:
            j_cur /= _RESCALE
            j_next /= _RESCALE
            norm /= _RESCALE
            out /= _RESCALE
    return out / (norm + j_cur)


def bessel_j(nu: int, x):
    """Evaluate ``J_nu(x)`` for integer ``nu >= 0`` and ``0 <= x``.

    Accepts a scalar or an array for ``x`` and returns the same shape.
    """
    if nu < 0 or nu > MAX_ORDER or int(nu) != nu:
        raise ValueError(f"order must be an integer in [0, {MAX_ORDER}], got {nu}")
    nu = int(nu)
    if np.ndim(x) == 0:
        xf = float(x)
        if not 0.0 <= xf <= MAX_ARGUMENT:
            raise ValueError(f"argument must lie in [0, {MAX_ARGUMENT}]")
        return _series_scalar(nu, xf) if xf < _SERIES_CUTOFF else _miller_scalar(nu, xf)
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(arr > MAX_ARGUMENT) or not np.all(np.isfinite(arr)):
        raise ValueError(f"argument must lie in [0, {MAX_ARGUMENT}]")
    flat = arr.ravel()
    out = np.empty_like(flat)
    small = flat < _SERIES_CUTOFF
    if np.any(small):
        out[small] = _series(nu, flat[small])
    if np.any(~small):
        out[~small] = _miller(nu, flat[~small])
    out = out.reshape(arr.shape)
    return out


def bessel_j_signed(nu: int, x):
    """``J_nu`` for any integer order using ``J_{-nu} = (-1)^nu J_nu``."""
    val = bessel_j(abs(nu), x)
    return -val if nu < 0 and abs(nu) % 2 else val


def bessel_jp(nu: int, x):
    """Derivative ``J_nu'(x)``."""
    if nu == 0:
        return -bessel_j(1, x)
    return 0.5 * (bessel_j(nu - 1, x) - bessel_j(nu + 1, x))


def _polish(nu: int, lo: float, hi: float) -> float:
    f_lo = bessel_j(nu, lo)
    f_hi = bessel_j(nu, hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0:
        raise ArithmeticError(f"bracket [{lo}, {hi}] does not isolate a root of J_{nu}")
    x = 0.5 * (lo + hi)
    for _ in range(100):
        fx = bessel_j(nu, x)
        if fx == 0.0:
            return x
        if (fx < 0) == (f_lo < 0):
            lo = x
        else:
            hi = x
        cand = x - fx / bessel_jp(nu, x)
        if not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        if abs(cand - x) <= 4e-16 * x or hi - lo <= 4e-16 * x:
            return cand
        x = cand
    return x


_ROOT_TABLE: dict[int, list[float]] = {}


def _roots_upto(nu: int, count: int) -> list[float]:
    known = _ROOT_TABLE.setdefault(nu, [])
    if len(known) >= count:
        return known[:count]
    if nu == 0:
        for q in range(len(known) + 1, count + 1):
            known.append(_polish(0, (q - 0.5) * math.pi, q * math.pi))
    else:
        lower = _roots_upto(nu - 1, count + 1)
        for q in range(len(known), count):
            known.append(_polish(nu, lower[q], lower[q + 1]))
    return known[:count]


def bessel_roots(nu: int, count: int) -> np.ndarray:
    """First ``count`` positive roots of ``J_nu`` in increasing order."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if nu < 0 or nu > MAX_ORDER:
        raise ValueError(f"order must be in [0, {MAX_ORDER}]")
    return np.array(_roots_upto(int(nu), int(count)))
