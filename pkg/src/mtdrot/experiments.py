"""Error-versus-sample-size sweeps in 1D and 2D."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .basis import DiscBasis, random_coeffs
from .estimate import MomentAccumulator, debias_1d, debias_2d
from .invariants import AngularDesign, BinMap, PairModel, auto3_V, autocorr3_1d, bin_reduce, pair_table, rep_bin_matrix
from .recover import (
    InversionError,
    OptimizerOptions,
    align_error_1d,
    bispectrum_direct,
    bispectrum_from_V,
    invert_bispectrum,
    recover_2d,
)

COLUMNS = ("count", "err_invariant_binned", "err_reconstruction", "wall_seconds", "seed")


@dataclass
class SweepRow:
    count: int
    err_invariant_binned: float
    err_reconstruction: float
    wall_seconds: float
    seed: int

    def as_tuple(self) -> tuple:
        return (self.count, self.err_invariant_binned, self.err_reconstruction, self.wall_seconds, self.seed)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


# ---------------------------------------------------------------------------
# 1D


def random_target_1d(n: int, rng: np.random.Generator) -> model.TargetSignal1D:
    return model.TargetSignal1D(rng.standard_normal(2 * n))


def bispectrum_trial(
    target: model.TargetSignal1D, p: int, gamma: float, snr: float, rng: np.random.Generator
) -> tuple[float, float]:
    """One measurement with ``p`` copies at density ``gamma``.

    Returns:
        ``(relative bispectrum error, aligned reconstruction error)``; the
        second is NaN when inversion rejects the estimate.
    """
    n = target.n
    m = int(round(n * p / gamma))
    sigma = model.sigma_for_snr(target.values, snr, n, dim=1)
    cfg = model.MeasurementConfig(m=m, n=n, p=p, sigma=sigma)
    M = model.synthesize_1d(cfg, target, rng)
    acc = MomentAccumulator(n).absorb(M)
    V_hat, _ = debias_1d(acc, sigma, cfg.density)
    B_hat = bispectrum_from_V(V_hat)
    B = bispectrum_direct(target)
    err_b = float(np.linalg.norm(B_hat - B) / np.linalg.norm(B))
    try:
        err_f = align_error_1d(invert_bispectrum(B_hat), target)
    except InversionError:
        err_f = math.nan
    return err_b, err_f


def sweep_1d(n: int, gamma: float, snr: float, schedule, trials: int = 10, seed: int = 0,
             target: model.TargetSignal1D | None = None):
    """Yield one averaged :class:`SweepRow` per copy count ``p`` in ``schedule``."""
    if not schedule:
        raise ValueError("schedule must be nonempty")
    if target is None:
        target = random_target_1d(n, trial_rng(seed, 0))
    for p in schedule:
        t0 = time.perf_counter()
        errs = [bispectrum_trial(target, int(p), gamma, snr, trial_rng(seed, 1, p, t)) for t in range(trials)]
        eb, ef = np.array(errs).T
        yield SweepRow(int(p), float(np.mean(eb)), float(np.nanmean(ef)) if np.any(np.isfinite(ef)) else math.nan,
                       time.perf_counter() - t0, seed)


# ---------------------------------------------------------------------------
# 2D


class Sweep2D:
    """Micrograph-count sweep: nested prefixes of one micrograph stream, each
    prefix debiased, binned and fed to a staged recovery (unbinned fit, then
    binned polish, also polishing the previous count's answer)."""

    def __init__(
        self,
        cfg: model.MeasurementConfig,
        basis: DiscBasis,
        v: np.ndarray,
        bmap: BinMap,
        opts: OptimizerOptions | None = None,
        support_only: bool = True,
        recover: bool = True,
        workers: int | None = None,
    ):
        self.cfg = cfg
        self.basis = basis
        self.v = v
        self.bmap = bmap
        self.opts = opts or OptimizerOptions.noisy(restarts=3)
        self.design = AngularDesign(basis)
        self.table = pair_table(basis.n, bmap.kmax)
        self.recover = recover
        self.workers = workers
        self.acc = MomentAccumulator(basis.n, dim=2, support_only=support_only)
        model_ = PairModel(self.design, self.table)
        self.true_bins = rep_bin_matrix(self.table, bmap) @ model_.forward(v)
        self.v_prev = None

    def absorb(self, index: int) -> None:
        M = model.synthesize_2d(self.cfg, self.v, self.basis, model.stream(self.cfg.seed, index))
        self.acc.absorb(M, workers=self.workers)

    def evaluate(self) -> tuple[float, float, dict | None]:
        S_hat = debias_2d(self.acc, self.cfg.sigma, self.cfg.density, self.design.count)
        bins = bin_reduce(S_hat, self.bmap)
        err_b = float(np.linalg.norm(bins - self.true_bins) / np.linalg.norm(self.true_bins))
        if not self.recover:
            return err_b, math.nan, None
        vh, rep = recover_2d(S_hat, self.basis, self.opts, bmap=self.bmap, design=self.design,
                             table=self.table, truth=self.v, v0=self.v_prev, reflections=True,
                             staged=True)
        self.v_prev = vh
        return err_b, float(rep["aligned_error"]), rep

    def run(self, schedule):
        """Yield ``(SweepRow, report)`` per micrograph count in ``schedule`` (increasing)."""
        schedule = sorted(int(c) for c in schedule)
        if not schedule or schedule[0] < 1:
            raise ValueError("schedule must hold positive counts")
        done = self.acc.count
        for count in schedule:
            t0 = time.perf_counter()
            while done < count:
                self.absorb(done)
                done += 1
            err_b, err_f, rep = self.evaluate()
            yield SweepRow(count, err_b, err_f, time.perf_counter() - t0, self.cfg.seed), rep


def planted_coeffs(basis: DiscBasis, seed: int) -> np.ndarray:
    """Reproducible random target coefficients."""
    return random_coeffs(basis, trial_rng(seed, 2))
