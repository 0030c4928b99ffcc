"""Serialization of ensembles, partitions, spectra and reports.

Text formats
    CSV with a header row, ``.`` decimal separator and minimal RFC-4180 quoting.
    Floats are written with ``repr`` so they parse back to the same double.
JSON
    Sorted keys, NaN and infinities mapped to ``null``; numpy values converted.
    Timestamps and wall-times go to a separate ``*.meta.json`` so reports stay
    byte-stable across runs.
Binary ensemble (``.lsve``)
    ``b"LSVE"``, ``u32`` version, ``u32`` header length, UTF-8 JSON header
    (array names, dtypes, shapes, scalar fields), the arrays in header order as
    little-endian ``<f8`` / ``<i8`` / ``<i1`` / ``<u8`` buffers, then the SHA-256
    digest of everything before it.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io as _io
import json
import math
import struct
from pathlib import Path

import numpy as np

from .ensemble import PathEnsemble
from .inducing import ReturnPartition

__all__ = [
    "FORMAT_VERSION", "SerializationError", "VersionMismatch", "ChecksumError",
    "to_jsonable", "dumps_json", "write_json", "read_json", "write_meta",
    "write_ensemble_csv", "read_ensemble_csv", "write_ensemble_binary", "read_ensemble_binary",
    "write_partition_csv", "read_partition_csv", "write_rows_csv", "read_rows_csv",
    "write_spectrum_csv", "write_density_csv", "write_operator_csv",
]

MAGIC = b"LSVE"
FORMAT_VERSION = 1
_ARRAYS = (("grid", "<i8"), ("phi", "<f8"), ("laps", "<i8"), ("path", "<f8"),
           ("path_max", "<f8"), ("status", "<i1"), ("stream_ids", "<i8"), ("x0", "<f8"))


class SerializationError(ValueError):
    pass


class VersionMismatch(SerializationError):
    pass


class ChecksumError(SerializationError):
    pass


# --- JSON ----------------------------------------------------------------------------

def to_jsonable(obj):
    """Recursively convert numpy values, dataclasses and non-finite floats."""
    if hasattr(obj, "to_dict") and not isinstance(obj, type):
        return to_jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": to_jsonable(obj.real), "im": to_jsonable(obj.imag)}
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": to_jsonable(obj.real), "im": to_jsonable(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_meta(path, meta: dict) -> Path:
    """Non-deterministic metadata (timestamps, wall-times) next to ``path``."""
    path = Path(path)
    return write_json(path.with_name(path.stem + ".meta.json"), meta)


# --- CSV helpers ---------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return "" if x is None else str(x)


def write_rows_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def read_rows_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]


# --- ensembles -----------------------------------------------------------------------

def write_ensemble_csv(path, ens: PathEnsemble) -> Path:
    """One row per trajectory and grid point: ``traj_id,n,phi_1..phi_d``."""
    d = ens.dim
    header = ["traj_id", "n"] + [f"phi_{i + 1}" for i in range(d)]

    def rows():
        for t in range(ens.n_samples):
            tid = int(ens.stream_ids[t])
            for g, n in enumerate(ens.grid):
                yield [tid, int(n)] + [float(v) for v in ens.phi[t, g]]

    return write_rows_csv(path, header, rows())


def read_ensemble_csv(path) -> dict:
    """Inverse of :func:`write_ensemble_csv`: ``traj_id``, ``grid`` and ``phi``."""
    header, rows = read_rows_csv(path)
    if header[:2] != ["traj_id", "n"] or not all(h == f"phi_{i + 1}"
                                                  for i, h in enumerate(header[2:])):
        raise SerializationError(f"unexpected ensemble header {header}")
    d = len(header) - 2
    tid = np.array([int(r[0]) for r in rows], dtype=np.int64)
    n = np.array([int(r[1]) for r in rows], dtype=np.int64)
    vals = np.array([[float(x) for x in r[2:]] for r in rows], dtype=np.float64).reshape(-1, d)
    ids = np.unique(tid)
    grid = np.unique(n)
    if ids.size * grid.size != len(rows):
        raise SerializationError("ensemble CSV is not a full trajectory x grid table")
    order = np.lexsort((n, tid))
    phi = vals[order].reshape(ids.size, grid.size, d)
    return {"traj_id": ids, "grid": grid, "phi": phi}


def write_ensemble_binary(path, ens: PathEnsemble) -> Path:
    header = {
        "arrays": [[name, dt, list(np.shape(getattr(ens, name)))] for name, dt in _ARRAYS],
        "path_n": int(ens.path_n), "path_stride": int(ens.path_stride), "seed": int(ens.seed),
        "meta": to_jsonable(ens.meta),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = _io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hb)))
    buf.write(hb)
    for name, dt in _ARRAYS:
        buf.write(np.ascontiguousarray(getattr(ens, name), dtype=dt).tobytes())
    body = buf.getvalue()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())
    return path


def read_ensemble_binary(path) -> PathEnsemble:
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != MAGIC:
        raise SerializationError("not an LSVE file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {FORMAT_VERSION}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("SHA-256 digest does not match file contents")
    header = json.loads(body[12:12 + hlen].decode("utf-8"))
    pos = 12 + hlen
    arrays = {}
    for name, dt, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dt).itemsize
        arr = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(shape)
        arrays[name] = arr.astype(np.dtype(dt).newbyteorder("="))
        pos += nbytes
    if pos != len(body):
        raise SerializationError("trailing bytes after the last array")
    arrays["stream_ids"] = arrays["stream_ids"].astype(np.int64)
    arrays["status"] = arrays["status"].astype(np.int8)
    return PathEnsemble(path_n=header["path_n"], path_stride=header["path_stride"],
                        seed=header["seed"], meta=header["meta"], **arrays)


# --- partitions ----------------------------------------------------------------------

def write_partition_csv(path, part: ReturnPartition) -> Path:
    """``n,left,right,length,mu_hat``; ``mu_hat`` is empty without mass estimates."""
    mu = part.empirical_mu

    def rows():
        for i in range(part.n.size):
            yield [int(part.n[i]), float(part.left[i]), float(part.right[i]),
                   float(part.right[i] - part.left[i]), None if mu is None else float(mu[i])]

    return write_rows_csv(path, ["n", "left", "right", "length", "mu_hat"], rows())


def read_partition_csv(path) -> dict:
    header, rows = read_rows_csv(path)
    if header != ["n", "left", "right", "length", "mu_hat"]:
        raise SerializationError(f"unexpected partition header {header}")
    out = {"n": np.array([int(r[0]) for r in rows], dtype=np.int64)}
    for j, k in enumerate(("left", "right", "length"), start=1):
        out[k] = np.array([float(r[j]) for r in rows])
    out["mu_hat"] = np.array([float(r[4]) if r[4] != "" else float("nan") for r in rows])
    return out


# --- operator layer ------------------------------------------------------------------

def write_spectrum_csv(path, eigenvalues) -> Path:
    ev = np.asarray(eigenvalues, dtype=np.complex128)
    return write_rows_csv(path, ["index", "re", "im", "magnitude", "phase"],
                          ([i, float(z.real), float(z.imag), float(abs(z)),
                            float(np.angle(z))] for i, z in enumerate(ev)))


def write_density_csv(path, density) -> Path:
    rho = np.asarray(density, dtype=np.float64)
    m = rho.size
    # bins are uniform in u = 2y - 1, so in y they are [1/2 + i/(2m), 1/2 + (i+1)/(2m))
    return write_rows_csv(path, ["bin", "left", "right", "density"],
                          ([i, 0.5 + i / (2.0 * m), 0.5 + (i + 1) / (2.0 * m), float(rho[i])]
                           for i in range(m)))


def write_operator_csv(path, matrix) -> Path:
    """Sparse matrix as ``row,col,value`` triples in row-major order."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return write_rows_csv(path, ["row", "col", "value"],
                          ([int(coo.row[k]), int(coo.col[k]), float(coo.data[k])]
                           for k in order))
