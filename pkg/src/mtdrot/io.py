"""Flat binary container shared by micrographs, checkpoints, tensors and caches.

Layout: eight text lines

    MTDFLAT1 <kind>
    dim <int>
    m <int>
    n <int>
    sigma <float>
    seed <int>
    count <int>
    reserved <json>

followed by little-endian float64 payload. The JSON line lists the stored
arrays (name, shape, complex flag) in payload order plus free-form metadata;
complex arrays are stored as interleaved real/imaginary pairs.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = "MTDFLAT1"


class FormatError(ValueError):
    """File is not a valid flat container or does not match expectations."""


@dataclass
class FlatFile:
    kind: str
    dim: int = 0
    m: int = 0
    n: int = 0
    sigma: float = 0.0
    seed: int = 0
    count: int = 0
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def write_flat(path, flat: FlatFile) -> None:
    """Write atomically (temporary file plus rename)."""
    path = Path(path)
    layout = []
    chunks = []
    for name, arr in flat.arrays.items():
        arr = np.asarray(arr)
        cplx = np.iscomplexobj(arr)
        layout.append({"name": name, "shape": list(arr.shape), "complex": cplx})
        data = arr.astype("<c16" if cplx else "<f8", copy=False)
        chunks.append(np.ascontiguousarray(data).view("<f8").tobytes())
    reserved = json.dumps({"arrays": layout, "meta": flat.meta}, sort_keys=True, separators=(",", ":"))
    header = (
        f"{MAGIC} {flat.kind}\n"
        f"dim {int(flat.dim)}\n"
        f"m {int(flat.m)}\n"
        f"n {int(flat.n)}\n"
        f"sigma {float(flat.sigma)!r}\n"
        f"seed {int(flat.seed)}\n"
        f"count {int(flat.count)}\n"
        f"reserved {reserved}\n"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header.encode("utf-8"))
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _field(line: bytes, name: str) -> str:
    text = line.decode("utf-8").rstrip("\n")
    key, _, value = text.partition(" ")
    if key != name:
        raise FormatError(f"expected header field {name!r}, found {key!r}")
    return value


def read_flat(path, kind: str | None = None) -> FlatFile:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        first = fh.readline().decode("utf-8", errors="replace").split()
        if len(first) != 2 or first[0] != MAGIC:
            raise FormatError(f"{path} is not a flat container")
        if kind is not None and first[1] != kind:
            raise FormatError(f"{path} holds {first[1]!r}, expected {kind!r}")
        try:
            flat = FlatFile(
                kind=first[1],
                dim=int(_field(fh.readline(), "dim")),
                m=int(_field(fh.readline(), "m")),
                n=int(_field(fh.readline(), "n")),
                sigma=float(_field(fh.readline(), "sigma")),
                seed=int(_field(fh.readline(), "seed")),
                count=int(_field(fh.readline(), "count")),
            )
            reserved = json.loads(_field(fh.readline(), "reserved"))
        except (ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed header ({exc})") from exc
        payload = np.frombuffer(fh.read(), dtype="<f8")
    offset = 0
    for entry in reserved.get("arrays", []):
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * (2 if entry["complex"] else 1)
        if offset + size > payload.size:
            raise FormatError(f"{path}: payload shorter than declared")
        chunk = payload[offset : offset + size]
        arr = chunk.view("<c16") if entry["complex"] else chunk
        flat.arrays[entry["name"]] = np.array(arr.reshape(shape), dtype=complex if entry["complex"] else float)
        offset += size
    if offset != payload.size:
        raise FormatError(f"{path}: payload longer than declared")
    flat.meta = reserved.get("meta", {})
    return flat


# ---------------------------------------------------------------------------
# Typed helpers


def save_micrograph(path, pixels: np.ndarray, n: int, sigma: float, seed: int, index: int, meta=None) -> None:
    pixels = np.asarray(pixels, dtype=float)
    write_flat(
        path,
        FlatFile("micrograph", pixels.ndim, pixels.shape[0], n, sigma, seed, index,
                 {"pixels": pixels}, meta or {}),
    )


def load_micrograph(path) -> FlatFile:
    flat = read_flat(path, "micrograph")
    if "pixels" not in flat.arrays or flat.arrays["pixels"].shape != (flat.m,) * flat.dim:
        raise FormatError(f"{path}: pixel array does not match header")
    return flat


def save_accumulator(path, acc, sigma: float = 0.0, seed: int = 0, meta=None) -> None:
    arrays = {
        "sum_A": acc.sum_A,
        "pixel_sums": np.array([acc.sum_pix, acc.sum_pix2, float(acc.pixel_count)]),
    }
    info = {"support_only": bool(acc.support_only), **(meta or {})}
    write_flat(path, FlatFile("accumulator", acc.dim, acc.m or 0, acc.n, sigma, seed, acc.count, arrays, info))


def load_accumulator(path):
    from .estimate import MomentAccumulator

    flat = read_flat(path, "accumulator")
    sums = flat.arrays["pixel_sums"]
    acc = MomentAccumulator(
        n=flat.n,
        dim=flat.dim,
        count=flat.count,
        sum_A=flat.arrays["sum_A"],
        sum_pix=float(sums[0]),
        sum_pix2=float(sums[1]),
        pixel_count=int(sums[2]),
        m=flat.m or None,
        support_only=bool(flat.meta.get("support_only", False)),
    )
    return acc, flat


def save_basis(path, basis) -> None:
    arrays = {
        "roots": basis.roots,
        "index": np.stack([basis.nus, basis.qs], axis=1).astype(float),
        "psi_hat": basis.psi_hat,
    }
    meta = {"bandlimit": basis.bandlimit, "d": basis.d, "N": basis.N}
    write_flat(path, FlatFile("basis", 2, 4 * basis.n, basis.n, 0.0, 0, basis.d, arrays, meta))


def load_basis(path, n: int, d: int):
    """Rebuild the basis for ``(n, d)``, reusing a cached DFT table when it matches."""
    from .basis import build_basis

    basis = build_basis(n, count=d)
    try:
        flat = read_flat(path, "basis")
    except FormatError:
        return basis
    idx = flat.arrays.get("index")
    if (
        flat.n == n
        and idx is not None
        and idx.shape == (basis.d, 2)
        and np.array_equal(idx[:, 0], basis.nus)
        and np.array_equal(idx[:, 1], basis.qs)
    ):
        basis._psi_hat = flat.arrays["psi_hat"]
    return basis


def save_coeffs(path, v: np.ndarray, basis, meta=None) -> None:
    arrays = {"coeffs": np.asarray(v, dtype=complex),
              "index": np.stack([basis.nus, basis.qs], axis=1).astype(float)}
    write_flat(path, FlatFile("coeffs", 2, 0, basis.n, 0.0, 0, basis.d, arrays, meta or {}))


def save_signal(path, values: np.ndarray, meta=None) -> None:
    values = np.asarray(values, dtype=float)
    write_flat(path, FlatFile("signal", 1, 0, values.size // 2, 0.0, 0, 1, {"values": values}, meta or {}))
