"""Command-line front end: ``mtdrot <command> --config spec.json ...``.

Commands: simulate, accumulate, recover1d, recover2d, sweep, selftest.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io, model
from .basis import build_basis, render_image
from .estimate import MomentAccumulator, debias_1d, debias_2d
from .experiments import COLUMNS, Sweep2D, planted_coeffs, random_target_1d, sweep_1d, trial_rng
from .invariants import AngularDesign, autocorr3_1d, autocorr3_2d, bin_map, bin_reduce
from .recover import (
    InversionError,
    OptimizerFailure,
    OptimizerOptions,
    align_error_1d,
    bispectrum_from_V,
    invert_bispectrum,
    recover_2d,
)

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_PLACEMENT = 3
EXIT_INVERSION = 4
EXIT_OPTIMIZER = 5
EXIT_IO = 6


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration


def load_config(path: str | None, seed: int | None = None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    if cfg.get("dim") not in (1, 2):
        raise ConfigError("config field 'dim' must be 1 or 2")
    for key in ("n",):
        if not isinstance(cfg.get(key), int) or cfg[key] < 1:
            raise ConfigError(f"config field {key!r} must be a positive integer")
    return cfg


def _basis(cfg: dict):
    spec = cfg.get("basis", {})
    if cfg["dim"] != 2:
        raise ConfigError("a basis is only used in 2D")
    if "count" in spec:
        return build_basis(cfg["n"], count=int(spec["count"]))
    if "bandlimit" in spec:
        return build_basis(cfg["n"], bandlimit=float(spec["bandlimit"]))
    raise ConfigError("2D config needs basis.count or basis.bandlimit")


def _target_1d(cfg: dict) -> model.TargetSignal1D:
    t = cfg.get("target", {})
    if "values" in t:
        return model.TargetSignal1D(np.asarray(t["values"], dtype=float))
    return random_target_1d(cfg["n"], trial_rng(int(t.get("seed", cfg["seed"])), 0))


def _target_2d(cfg: dict, basis) -> np.ndarray:
    t = cfg.get("target", {})
    return planted_coeffs(basis, int(t.get("seed", cfg["seed"])))


def _sigma(cfg: dict, signal: np.ndarray) -> float:
    if "sigma" in cfg and "snr" in cfg:
        raise ConfigError("give sigma or snr, not both")
    if "snr" in cfg:
        return model.sigma_for_snr(signal, float(cfg["snr"]), cfg["n"], cfg["dim"])
    return float(cfg.get("sigma", 0.0))


def measurement_config(cfg: dict, sigma: float) -> model.MeasurementConfig:
    if "m" not in cfg:
        raise ConfigError("config needs 'm'")
    return model.MeasurementConfig(
        m=int(cfg["m"]), n=cfg["n"], p=cfg.get("p"), gamma=cfg.get("gamma"),
        sigma=sigma, seed=int(cfg["seed"]), dim=cfg["dim"],
    )


def optimizer_options(cfg: dict, noisy: bool) -> OptimizerOptions:
    extra = dict(cfg.get("optimizer", {}))
    try:
        return OptimizerOptions.noisy(**extra) if noisy else OptimizerOptions.noiseless(**extra)
    except TypeError as exc:
        raise ConfigError(f"unknown optimizer option: {exc}") from exc


def _binning(cfg: dict, n: int):
    spec = cfg.get("binning")
    if spec is None:
        return None
    return bin_map(n, float(spec.get("b1", 1.0)), float(spec.get("b2", 6.0 / math.pi)), spec.get("kmax"))


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MTD_THREADS")
    return int(env) if env else None


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out or ".")
    count = int(cfg.get("count", 1))
    if cfg["dim"] == 1:
        target = _target_1d(cfg)
        sigma = _sigma(cfg, target.values)
        mcfg = measurement_config(cfg, sigma)

        def make(i):
            return model.synthesize_1d(mcfg, target, model.stream(mcfg.seed, i)).pixels

        truth = ("signal", target.values)
    else:
        basis = _basis(cfg)
        v = _target_2d(cfg, basis)
        sigma = _sigma(cfg, render_image(v, basis))
        mcfg = measurement_config(cfg, sigma)

        def make(i):
            return model.synthesize_2d(mcfg, v, basis, model.stream(mcfg.seed, i)).pixels

        truth = ("coeffs", (v, basis))
    out.mkdir(parents=True, exist_ok=True)
    meta = {"p": mcfg.p, "gamma": mcfg.density}
    with ThreadPoolExecutor(max_workers=_threads(args) or 1) as pool:
        for i, pixels in enumerate(pool.map(make, range(count))):
            io.save_micrograph(out / f"micrograph_{i:05d}.mtd", pixels, mcfg.n, sigma, mcfg.seed, i, meta)
    if count and truth[0] == "signal":
        io.save_signal(out / "target.mtd", truth[1], meta)
    elif count:
        io.save_coeffs(out / "target.mtd", *truth[1], meta)
    print(f"wrote {count} micrographs to {out}")
    return EXIT_OK


def _expand(patterns) -> list[str]:
    files: list[str] = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        files.extend(hits if hits else ([] if any(c in pat for c in "*?[") else [pat]))
    return files


def cmd_accumulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    ckpt = Path(args.out or "accumulator.mtd")
    if ckpt.is_dir():
        ckpt = ckpt / "accumulator.mtd"
    support_only = bool(cfg.get("support_only", cfg["dim"] == 2))
    done: list[str] = []
    acc_sigma = 0.0
    if args.resume:
        acc, flat = io.load_accumulator(args.resume)
        done = list(flat.meta.get("files", []))
        acc_sigma = flat.sigma
        if acc.n != cfg["n"] or acc.dim != cfg["dim"]:
            raise ConfigError("checkpoint was built for a different configuration")
    else:
        acc = MomentAccumulator(cfg["n"], dim=cfg["dim"], support_only=support_only)
    files = [f for f in _expand(args.inputs) if os.path.abspath(f) not in done]
    workers = _threads(args)
    for f in files:
        flat = io.load_micrograph(f)
        if flat.dim != acc.dim or flat.n != acc.n or (acc.m is not None and flat.m != acc.m):
            raise ConfigError(f"{f}: header does not match the accumulator configuration")
        acc_sigma = flat.sigma
        acc.absorb(flat.arrays["pixels"], workers=workers)
        done.append(os.path.abspath(f))
        io.save_accumulator(ckpt, acc, acc_sigma, cfg["seed"], {**flat.meta, "files": done})
    if not files and not ckpt.exists():
        io.save_accumulator(ckpt, acc, acc_sigma, cfg["seed"], {"files": done})
    print(f"accumulated {acc.count} micrographs into {ckpt}")
    return EXIT_OK


def _load_checkpoint(path):
    if path is None:
        raise ConfigError("a checkpoint is required (--resume PATH or positional)")
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return io.load_accumulator(path)


def _gamma(cfg: dict, flat) -> float:
    if "gamma" in flat.meta:
        return float(flat.meta["gamma"])
    mcfg = measurement_config(cfg, 0.0)
    return mcfg.density


def _write_report(out: Path, report: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)


def cmd_recover1d(args) -> int:
    cfg = load_config(args.config, args.seed)
    acc, flat = _load_checkpoint(args.resume or args.checkpoint)
    t0 = time.perf_counter()
    sigma = float(cfg.get("sigma", flat.sigma))
    gamma = _gamma(cfg, flat)
    V_hat, T_hat = debias_1d(acc, sigma, gamma)
    F_hat = invert_bispectrum(bispectrum_from_V(V_hat), int(cfg.get("refine_sweeps", 0)))
    report = {"micrographs": acc.count, "T_hat": T_hat, "wall_seconds": time.perf_counter() - t0}
    truth = args.truth
    if truth:
        ref = io.read_flat(truth, "signal").arrays["values"]
        report["aligned_error"] = align_error_1d(F_hat, ref)
    out = Path(args.out or ".")
    _write_report(out, report)
    io.save_signal(out / "recovered.mtd", F_hat.values)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_recover2d(args) -> int:
    cfg = load_config(args.config, args.seed)
    acc, flat = _load_checkpoint(args.resume or args.checkpoint)
    basis = _basis(cfg)
    design = AngularDesign(basis)
    sigma = float(cfg.get("sigma", flat.sigma))
    gamma = _gamma(cfg, flat)
    S_hat = debias_2d(acc, sigma, gamma, design.count)
    bmap = _binning(cfg, basis.n)
    opts = optimizer_options(cfg, noisy=sigma > 0 or bmap is not None)
    truth = None
    if args.truth:
        truth = io.read_flat(args.truth, "coeffs").arrays["coeffs"]
    v, report = recover_2d(S_hat, basis, opts, bmap=bmap, design=design, truth=truth,
                           reflections=bmap is not None, staged=bmap is not None)
    report["micrographs"] = acc.count
    out = Path(args.out or ".")
    _write_report(out, report)
    io.save_coeffs(out / "recovered.mtd", v, basis)
    io.write_flat(out / "image.mtd", io.FlatFile("image", 2, 4 * basis.n, basis.n,
                                                 arrays={"pixels": render_image(v, basis)}))
    print(json.dumps({k: report[k] for k in ("cost", "iterations", "restarts", "wall_seconds")
                      if k in report} | ({"aligned_error": report["aligned_error"]} if truth is not None else {})))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed)
    schedule = cfg.get("schedule")
    if not schedule:
        raise ConfigError("sweep needs a nonempty 'schedule'")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    reports = []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        fh.flush()
        if cfg["dim"] == 1:
            target = _target_1d(cfg)
            snr = float(cfg.get("snr", math.inf))
            rows = ((r, None) for r in sweep_1d(cfg["n"], float(cfg["gamma"]), snr, schedule,
                                                 int(cfg.get("trials", 10)), int(cfg["seed"]), target))
        else:
            basis = _basis(cfg)
            v = _target_2d(cfg, basis)
            sigma = _sigma(cfg, render_image(v, basis))
            mcfg = measurement_config(cfg, sigma)
            bmap = _binning(cfg, basis.n) or bin_map(basis.n)
            sweep = Sweep2D(mcfg, basis, v, bmap, optimizer_options(cfg, noisy=True),
                            support_only=bool(cfg.get("support_only", True)),
                            recover=bool(cfg.get("recover", True)), workers=_threads(args))
            rows = sweep.run(schedule)
        for row, rep in rows:
            writer.writerow(row.as_tuple())
            fh.flush()
            if rep is not None:
                keys = ("cost", "iterations", "restarts", "aligned_error", "mirrored",
                        "unbinned_stage", "warm_start_won")
                reports.append({"count": row.count, **{k: rep[k] for k in keys if k in rep}})
                with open(out / "sweep_reports.json", "w") as rh:
                    json.dump(reports, rh, indent=2, default=float)
            print(",".join(str(x) for x in row.as_tuple()), flush=True)
    return EXIT_OK


def _selftest_checks():
    from .basis import random_coeffs, steer
    from .invariants import auto3_V, s_hat_forward, s_hat_truth
    from .recover import UnbinnedCost, bispectrum_direct

    rng = np.random.default_rng(0)

    def theorem_round_trip():
        for _ in range(10):
            n = int(rng.integers(3, 9))
            F = model.TargetSignal1D(rng.standard_normal(2 * n))
            if align_error_1d(invert_bispectrum(bispectrum_from_V(auto3_V(F))), F) > 1e-8:
                return False
        return True

    def bispectrum_constant():
        F = model.TargetSignal1D(rng.standard_normal(8))
        B = bispectrum_direct(F)
        return np.abs(bispectrum_from_V(auto3_V(F)) - B).max() <= 1e-10 * np.abs(B).max()

    def shift_invariance():
        F = model.TargetSignal1D(rng.standard_normal(10))
        return np.abs(auto3_V(F) - auto3_V(model.rotate1d(F, 3))).max() <= 1e-12

    basis = build_basis(3, count=8)
    design = AngularDesign(basis)
    v = random_coeffs(basis, rng)

    def forward_truth():
        a, b = s_hat_forward(v, design), s_hat_truth(v, design)
        return np.abs(a - b).max() <= 1e-10 * np.abs(b).max()

    def nyquist():
        a = s_hat_forward(v, design)
        b = s_hat_forward(v, AngularDesign(basis, 2 * design.count)) / 2
        return np.abs(a - b).max() <= 1e-10 * np.abs(a).max()

    def gauge():
        cost = UnbinnedCost(design, s_hat_forward(random_coeffs(basis, rng), design))
        a, b = cost.value(v), cost.value(steer(v, 0.9, basis))
        return abs(a - b) <= 1e-10 * abs(a)

    def autocorr_oracle():
        M = rng.standard_normal((24, 24))
        A = autocorr3_2d(M, 2)
        x1, x2 = (1, -2), (3, 0)
        brute = 0.0
        for i in range(24):
            for j in range(24):
                a = (i + x1[0], j + x1[1])
                b = (i + x2[0], j + x2[1])
                if 0 <= min(a + b) and max(a + b) < 24:
                    brute += M[i, j] * M[a] * M[b]
        return abs(A[1 + 4, -2 + 4, 3 + 4, 0 + 4] - brute / 576) <= 1e-10

    return [
        ("bispectrum inversion round trip", theorem_round_trip),
        ("bispectrum from V constant", bispectrum_constant),
        ("V shift invariance", shift_invariance),
        ("steerable forward equals rendered truth", forward_truth),
        ("6N vs 12N angle quadrature", nyquist),
        ("cost rotation gauge invariance", gauge),
        ("2D autocorrelation brute-force entry", autocorr_oracle),
    ]


def cmd_selftest(args) -> int:
    ok = True
    for name, check in _selftest_checks():
        try:
            passed = bool(check())
        except Exception as exc:  # report, keep going
            passed = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return EXIT_OK if ok else EXIT_SELFTEST


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtdrot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment spec")
        p.add_argument("--out", help="output directory (or checkpoint path for accumulate)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker threads (default: MTD_THREADS)")
        p.add_argument("--resume", help="accumulator checkpoint to continue from / recover")
        return p

    common(sub.add_parser("simulate", help="write synthetic micrographs"))
    p = common(sub.add_parser("accumulate", help="accumulate moments into a checkpoint"))
    p.add_argument("inputs", nargs="*", help="micrograph files or glob patterns")
    for name in ("recover1d", "recover2d"):
        p = common(sub.add_parser(name, help=f"{name[-2:]} recovery from a checkpoint"))
        p.add_argument("checkpoint", nargs="?", help="accumulator checkpoint")
        p.add_argument("--truth", help="ground-truth target file for the aligned error")
    common(sub.add_parser("sweep", help="error-versus-count sweep to CSV"))
    common(sub.add_parser("selftest", help="run the built-in invariant checks"))
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "accumulate": cmd_accumulate,
    "recover1d": cmd_recover1d,
    "recover2d": cmd_recover2d,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = _threads(args)
    if threads:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return COMMANDS[args.command](args)
    except model.PlacementError as exc:
        print(f"placement failure: {exc}", file=sys.stderr)
        return EXIT_PLACEMENT
    except InversionError as exc:
        print(f"inversion rejected: {exc}", file=sys.stderr)
        return EXIT_INVERSION
    except OptimizerFailure as exc:
        print(f"optimizer failure: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except (FileNotFoundError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
