"""Closed-form 1D recovery by bispectrum inversion and 2D recovery by BFGS on
the invariant mismatch."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .basis import DiscBasis, from_real, mirror, real_gradient, steer, to_real
from .invariants import (
    AngularDesign,
    BinMap,
    PairModel,
    PairTable,
    bin_reduce,
    pair_table,
    rep_bin_matrix,
)
from .model import TargetSignal1D, rotate1d


class InversionError(ValueError):
    """Bispectrum violates the non-vanishing hypothesis or is inconsistent."""


class OptimizerFailure(RuntimeError):
    """Every optimizer start failed to produce a finite result."""


# ---------------------------------------------------------------------------
# 1D


def dft_coefficients(F) -> np.ndarray:
    """``a_k = sum_x F(x) e^{-2 pi i k x / 2n}`` for ``k`` in ``{-n, ..., n-1}`` (index ``k + n``)."""
    vals = F.values if isinstance(F, TargetSignal1D) else np.asarray(F, dtype=float)
    n = vals.size // 2
    x = np.arange(-n, n)
    return np.exp(-2j * np.pi * np.outer(x, x) / (2 * n)) @ vals


def bispectrum_direct(F) -> np.ndarray:
    """``B(k1, k2) = a_k1 a_k2 a_{-k1-k2}`` on ``{-n, ..., n-1}^2``."""
    a = dft_coefficients(F)
    n = a.size // 2
    i = np.arange(2 * n)
    k3 = (-(i[:, None] - n) - (i[None, :] - n)) % (2 * n)  # k3 + n mod 2n, k3 in [-n, n)
    k3 = (k3 + n) % (2 * n)
    return a[:, None] * a[None, :] * a[k3]


def bispectrum_from_V(V: np.ndarray) -> np.ndarray:
    """Bispectrum from the shift-averaged third-order autocorrelation.

    The 4n-point DFT of ``V`` at even frequencies ``2k`` equals
    ``a_k1 a_k2 a_{-k1-k2} / 2n``.
    """
    from .basis import dft_grid

    V = np.asarray(V, dtype=float)
    s = V.shape[0]
    if V.shape != (s, s) or s % 4:
        raise ValueError("V must be a square array on {-2n, ..., 2n-1}^2")
    n = s // 4
    return 2 * n * dft_grid(V)[::2, ::2]


def _phase_sync(a: np.ndarray, B: np.ndarray, sweeps: int) -> np.ndarray:
    # a_{k1+k2} ~ a_k1 a_k2 conj(B(k1, k2)) summed over all decompositions
    n = a.size // 2
    mag = np.abs(a)
    idx = np.arange(2 * n)
    ks = idx - n
    for _ in range(sweeps):
        new = np.zeros_like(a)
        total = (ks[:, None] + ks[None, :] + n) % (2 * n)
        contrib = a[:, None] * a[None, :] * np.conj(B)
        np.add.at(new, total.ravel(), contrib.ravel())
        phase = np.exp(1j * np.angle(new))
        a = mag * phase
        a[n] = mag[n] * np.sign(a[n].real or 1.0)
        a[0] = mag[0] * np.sign(a[0].real or 1.0)  # a_{-n} stays real
        pos = np.arange(1, n)
        a[n - pos] = np.conj(a[n + pos])
    return a


def invert_bispectrum(B: np.ndarray, refine_sweeps: int = 0) -> TargetSignal1D:
    """Recover ``F`` up to a cyclic shift from its bispectrum.

    Magnitudes come from ``B(0, 0)`` and ``B(k, -k)``; phases follow the
    recursion ``arg a_{k+1} = arg a_k + arg a_1 - arg B(k, 1)``. The free
    phase ``arg a_1`` is fixed so that the Nyquist coefficient is real, which
    makes the result an exact integer shift of ``F``.

    Args:
        B: complex ``(2n, 2n)`` array indexed by ``k + n``.
        refine_sweeps: optional phase-synchronization sweeps over the full
            bispectrum, useful for noisy input.

    Raises:
        InversionError: a Fourier coefficient vanishes or the result is not real.
    """
    B = np.asarray(B, dtype=complex)
    s = B.shape[0]
    if B.shape != (s, s) or s % 2:
        raise ValueError("bispectrum must be a square array of even side")
    n = s // 2
    scale = np.max(np.abs(B))

    def at(k1: int, k2: int) -> complex:
        return B[(k1 + n) % s, (k2 + n) % s]

    diag = np.array([at(k, -k) for k in range(0, n + 1)])
    if scale == 0 or np.any(np.abs(diag) < 1e-9 * scale):
        raise InversionError("bispectrum indicates a vanishing Fourier coefficient")
    # B(k, -k) = a_0 |a_k|^2 is real for every real signal
    if np.max(np.abs(diag.imag)) > 1e-6 * scale:
        raise InversionError("bispectrum is not consistent with a real signal")
    a0 = np.cbrt(diag[0].real)
    mag = np.sqrt(np.abs(diag / a0))
    beta = np.array([np.angle(at(k, 1)) for k in range(1, n)])
    theta1 = np.sum(beta) / n if n > 1 else 0.0
    theta = np.zeros(n + 1)
    theta[1] = theta1
    for k in range(1, n):
        theta[k + 1] = theta[k] + theta1 - beta[k - 1]
    a = np.zeros(s, dtype=complex)
    a[n] = a0
    for k in range(1, n):
        a[n + k] = mag[k] * np.exp(1j * theta[k])
        a[n - k] = np.conj(a[n + k])
    a[0] = mag[n] * np.exp(1j * theta[n])  # k = -n
    if refine_sweeps:
        a = _phase_sync(a, B, refine_sweeps)
    x = np.arange(-n, n)
    F = np.exp(2j * np.pi * np.outer(x, x) / s) @ a / s
    if np.max(np.abs(F.imag)) > 1e-6 * max(np.max(np.abs(F.real)), 1e-300):
        raise InversionError("reconstruction is not real")
    return TargetSignal1D(F.real)


def align_error_1d(F_hat, F) -> float:
    """``min_tau ||F_hat - F_tau|| / ||F||`` over all cyclic shifts."""
    F = F if isinstance(F, TargetSignal1D) else TargetSignal1D(F)
    est = F_hat.values if isinstance(F_hat, TargetSignal1D) else np.asarray(F_hat, dtype=float)
    if est.shape != F.values.shape:
        raise ValueError("signals have different lengths")
    norm = np.linalg.norm(F.values)
    if norm == 0:
        raise ValueError("reference signal is zero")
    n = F.n
    return min(np.linalg.norm(est - rotate1d(F, t).values) for t in range(-n, n)) / norm


# ---------------------------------------------------------------------------
# 2D alignment


def align_2d(v_hat, v, basis: DiscBasis, reflections: bool = False, grid: int = 720):
    """Best rotation (and optionally reflection) of ``v_hat`` onto ``v``.

    Returns:
        ``(error, angle, mirrored)``.
    """
    v = np.asarray(v)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("reference coefficients are zero")
    cands = [(np.asarray(v_hat), False)]
    if reflections:
        cands.append((mirror(v_hat, basis), True))
    best = (np.inf, 0.0, False)
    phis = 2 * np.pi * np.arange(grid) / grid
    for cand, flipped in cands:
        phase = np.exp(1j * np.outer(phis, basis.nus))
        errs = np.linalg.norm(cand * phase - v, axis=1)
        j = int(np.argmin(errs))

        def err(phi, cand=cand):
            return np.linalg.norm(steer(cand, phi, basis) - v)

        step = 2 * np.pi / grid
        res = optimize.minimize_scalar(
            err, bounds=(phis[j] - step, phis[j] + step), method="bounded",
            options={"xatol": 1e-12},
        )
        e, phi = (res.fun, res.x) if res.fun < errs[j] else (errs[j], phis[j])
        if e < best[0]:
            best = (e, float(phi % (2 * np.pi)), flipped)
    return best[0] / norm, best[1], best[2]


def align_error_2d(v_hat, v, basis: DiscBasis, reflections: bool = False) -> float:
    """Relative coefficient error after removing the rotation gauge."""
    return align_2d(v_hat, v, basis, reflections)[0]


# ---------------------------------------------------------------------------
# Least-squares objectives


class UnbinnedCost:
    """``g(v) = 1/2 sum_{k1,k2} |S_hat_v(k1, k2) - target(k1, k2)|^2``.

    The sum runs over the pairs covered by ``table`` (all pairs by default).
    Only the orbit-averaged real part of the target interacts with ``v``; the
    rest enters as a constant so reported values are exact.
    """

    def __init__(self, design: AngularDesign, target: np.ndarray, table: PairTable | None = None):
        s = design.basis.side
        target = np.asarray(target)
        if target.shape != (s, s, s, s):
            raise ValueError(f"target must have shape {(s, s, s, s)}")
        self.design = design
        self.table = table if table is not None else pair_table(design.n)
        self.model = PairModel(design, self.table)
        self.t = self.table.reduce(target)
        rep = self.table.pair_rep()
        covered = rep >= 0
        flat = target.ravel()[covered]
        # distance of the target from the orbit-invariant real subspace
        dev = np.real(flat) - self.t[rep[covered]]
        self.const = 0.5 * float(np.sum(dev * dev) + np.sum(np.imag(flat) ** 2))
        self.target_norm2 = float(np.sum(np.abs(flat) ** 2))

    def _residual(self, s: np.ndarray) -> np.ndarray:
        return s - self.t

    def value(self, v: np.ndarray) -> float:
        r = self._residual(self.model.forward(v))
        return 0.5 * float(np.sum(self.table.weight * r * r)) + self.const

    def value_and_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        """Cost and its gradient with respect to the real parameters of ``v``."""
        W = self.model.spectra(v)
        r = self._residual(self.model.forward(v, W))
        wr = self.table.weight * r
        val = 0.5 * float(np.sum(wr * r)) + self.const
        return val, real_gradient(self.model.adjoint(W, wr), self.design.basis)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.value_and_grad(v)[1]

    def invariant_norm(self, v: np.ndarray) -> float:
        s = self.model.forward(v)
        return float(np.sqrt(np.sum(self.table.weight * s * s)))


class BinnedCost:
    """``g_b(v) = 1/2 sum_T |sum_{I_T} S_hat_v - target_T|^2``."""

    def __init__(
        self,
        design: AngularDesign,
        bmap: BinMap,
        target_bins: np.ndarray,
        table: PairTable | None = None,
    ):
        target_bins = np.asarray(target_bins)
        if bmap.n != design.n or target_bins.shape != (bmap.count,):
            raise ValueError("binned target does not match the bin map")
        self.design = design
        self.bmap = bmap
        self.table = table if table is not None else pair_table(design.n, bmap.kmax)
        self.model = PairModel(design, self.table)
        self.R = rep_bin_matrix(self.table, bmap)
        self.t = np.real(target_bins).astype(float)
        self.const = 0.5 * float(np.sum(np.imag(target_bins) ** 2))
        self.target_norm2 = float(np.sum(np.abs(target_bins) ** 2))

    def bins(self, v: np.ndarray) -> np.ndarray:
        return self.R @ self.model.forward(v)

    def value(self, v: np.ndarray) -> float:
        r = self.bins(v) - self.t
        return 0.5 * float(r @ r) + self.const

    def value_and_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        W = self.model.spectra(v)
        r = self.R @ self.model.forward(v, W) - self.t
        coef = self.R.T @ r
        val = 0.5 * float(r @ r) + self.const
        return val, real_gradient(self.model.adjoint(W, coef), self.design.basis)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.value_and_grad(v)[1]

    def invariant_norm(self, v: np.ndarray) -> float:
        return float(np.linalg.norm(self.bins(v)))


def cost_unbinned(v, target, design: AngularDesign) -> float:
    return UnbinnedCost(design, target).value(v)


def grad_unbinned(v, target, design: AngularDesign) -> np.ndarray:
    return UnbinnedCost(design, target).gradient(v)


def cost_binned(v, target_bins, design: AngularDesign, bmap: BinMap) -> float:
    return BinnedCost(design, bmap, target_bins).value(v)


def grad_binned(v, target_bins, design: AngularDesign, bmap: BinMap) -> np.ndarray:
    return BinnedCost(design, bmap, target_bins).gradient(v)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimizerOptions:
    """BFGS settings. ``gtol`` applies to the cost normalized by half the
    squared target norm; a start whose normalized cost drops below
    ``stop_cost`` ends the restart loop early."""

    max_iter: int = 5000
    gtol: float = 1e-9
    init_scale: float = 1.0
    restarts: int = 5
    seed: int = 0
    stop_cost: float = 1e-12
    probe: bool = True

    def __post_init__(self):
        if self.gtol <= 0 or self.max_iter < 1 or self.restarts < 1 or self.init_scale <= 0:
            raise ValueError("optimizer options must be positive")

    @classmethod
    def noiseless(cls, **kw) -> "OptimizerOptions":
        return cls(**{"gtol": 1e-9, **kw})

    @classmethod
    def noisy(cls, **kw) -> "OptimizerOptions":
        return cls(**{"gtol": 1e-6, "stop_cost": 0.0, **kw})


@dataclass
class StartReport:
    iterations: int
    cost: float
    message: str
    history: list = field(default_factory=list)


@dataclass
class Report:
    iterations: int
    cost: float
    restarts: int
    best_start: int
    probe_error: float
    wall_seconds: float
    starts: list

    def as_dict(self) -> dict:
        return asdict(self)


def gradient_probe(fun, x: np.ndarray, rng: np.random.Generator, eps: float | None = None) -> float:
    """Relative mismatch between the analytic and central-difference
    directional derivative along a random unit direction."""
    d = rng.standard_normal(x.size)
    d /= np.linalg.norm(d)
    if eps is None:
        eps = 1e-5 * max(1.0, float(np.linalg.norm(x)) / np.sqrt(x.size))
    _, g = fun(x)
    fd = (fun(x + eps * d)[0] - fun(x - eps * d)[0]) / (2 * eps)
    an = float(g @ d)
    return abs(fd - an) / max(abs(fd), abs(an), 1e-300)


def minimize(fun, x0: np.ndarray, opts: OptimizerOptions, init=None) -> tuple[np.ndarray, Report]:
    """BFGS (strong-Wolfe line search) with restarts.

    Args:
        fun: callable returning ``(value, gradient)`` for a real vector.
        x0: first starting point.
        opts: optimizer settings.
        init: optional callable ``rng -> x`` producing fresh starts for restarts.

    Returns:
        ``(x_best, report)``.
    """
    rng = np.random.default_rng(opts.seed)
    t0 = time.perf_counter()
    probe = gradient_probe(fun, np.asarray(x0, dtype=float), rng) if opts.probe else 0.0
    if probe > 1e-4:
        raise ValueError(f"cost and gradient disagree (relative mismatch {probe:.2e})")
    best_x, best_f, best_i = None, np.inf, -1
    starts: list[StartReport] = []
    x = np.asarray(x0, dtype=float)
    for attempt in range(opts.restarts):
        if attempt:
            if init is None:
                break
            x = np.asarray(init(rng), dtype=float)
        recent: deque = deque(maxlen=8)
        history: list[float] = []

        def tracked(z):
            f, g = fun(z)
            recent.append((z.copy(), f))
            return f, g

        def callback(zk):
            for z, f in reversed(recent):
                if np.array_equal(z, zk):
                    history.append(f)
                    return

        res = optimize.minimize(
            tracked, x, jac=True, method="BFGS", callback=callback,
            options={"gtol": opts.gtol, "maxiter": opts.max_iter},
        )
        f = float(res.fun)
        starts.append(StartReport(int(res.nit), f, str(res.message), history))
        if np.isfinite(f) and f < best_f:
            best_x, best_f, best_i = res.x, f, attempt
        if best_f <= opts.stop_cost:
            break
    if best_x is None:
        raise OptimizerFailure("no optimizer start produced a finite cost")
    report = Report(
        iterations=sum(s.iterations for s in starts),
        cost=best_f,
        restarts=len(starts),
        best_start=best_i,
        probe_error=probe,
        wall_seconds=time.perf_counter() - t0,
        starts=starts,
    )
    return best_x, report


def recover_2d(
    target: np.ndarray,
    basis: DiscBasis,
    opts: OptimizerOptions | None = None,
    bmap: BinMap | None = None,
    design: AngularDesign | None = None,
    table: PairTable | None = None,
    truth: np.ndarray | None = None,
    v0: np.ndarray | None = None,
    reflections: bool = False,
    staged: bool = False,
) -> tuple[np.ndarray, dict]:
    """Fit coefficients whose invariant matches ``target``.

    Args:
        target: full ``(4n)^4`` tensor, or a binned vector when ``bmap`` is given.
            A full tensor combined with ``bmap`` is binned first.
        basis: basis the coefficients live in.
        opts: optimizer settings (noiseless defaults).
        bmap: use the binned cost with this bin map.
        design: angular design (``6N`` angles by default).
        table: pair table (must match ``bmap.kmax`` when binning).
        truth: planted coefficients; adds the aligned error to the report.
        v0: warm start used for the first attempt.
        reflections: also allow a mirror image when aligning to ``truth``.
        staged: with a full tensor and ``bmap``, first fit the unbinned cost
            (all restarts), then polish its best point with the binned cost.
            ``v0``, when given, is polished as well and the lower binned cost wins.

    Returns:
        ``(v, report)`` where ``report`` is JSON-serializable.
    """
    opts = opts or OptimizerOptions()
    design = design or AngularDesign(basis)
    target = np.asarray(target)
    if staged:
        if bmap is None or target.ndim != 4:
            raise ValueError("staged recovery needs a full target tensor and a bin map")
        table = table if table is not None else pair_table(design.n, bmap.kmax)
        v1, first = recover_2d(target, basis, opts, design=design, table=table)
        polish = OptimizerOptions(**{**opts.__dict__, "restarts": 1})
        tb = bin_reduce(target, bmap)
        best, winner = None, -1
        for i, v_start in enumerate([v1] + ([v0] if v0 is not None else [])):
            cand = recover_2d(tb, basis, polish, bmap=bmap, design=design, table=table,
                              truth=truth, v0=v_start, reflections=reflections)
            if best is None or cand[1]["cost"] < best[1]["cost"]:
                best, winner = cand, i
        v, report = best
        report["unbinned_stage"] = {k: first[k] for k in ("cost", "iterations", "restarts", "wall_seconds")}
        report["warm_start_won"] = winner == 1
        return v, report
    if bmap is not None:
        if target.ndim == 4:
            target = bin_reduce(target, bmap)
        cost = BinnedCost(design, bmap, target, table)
    else:
        cost = UnbinnedCost(design, target, table)
    norm2 = max(cost.target_norm2, 1e-300)
    scale = 2.0 / norm2

    def fun(theta):
        f, g = cost.value_and_grad(from_real(theta, basis))
        return f * scale, g * scale

    target_norm = np.sqrt(norm2)

    def init(rng):
        z = rng.standard_normal(basis.d) * opts.init_scale
        size = cost.invariant_norm(from_real(z, basis))
        return z * (target_norm / size) ** (1 / 3) if size > 0 else z

    rng0 = np.random.default_rng(np.random.SeedSequence(opts.seed, spawn_key=(1,)))
    x0 = to_real(v0, basis) if v0 is not None else init(rng0)
    theta, rep = minimize(fun, x0, opts, init=init)
    v = from_real(theta, basis)
    report = rep.as_dict()
    report["cost_unnormalized"] = rep.cost / scale
    if truth is not None:
        err, phi, flipped = align_2d(v, truth, basis, reflections)
        report.update(aligned_error=err, angle=phi, mirrored=flipped)
    return v, report
