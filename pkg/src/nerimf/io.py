"""Serialisation of fields, reports and streamed records.

Fields go to CSV (index, x, y, value) or to a compact binary dump:

    8s   magic  b"NERIFLD1"
    I    geometry kind code
    I    resolution
    Q    number of values
    then that many little-endian float64.

Branch points and minimax iterations are streamed as JSON lines; each record
may reference a binary field file so a run can be resumed from the last line.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .functional import log_denominator
from .inequalities import family_log_parameter

MAGIC = b"NERIFLD1"
HEADER = struct.Struct("<8sIIQ")
KIND_CODES = {"rectangle": 1, "disc": 2, "annulus": 3, "flat_torus": 4}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def _clean(obj):
    """Make numpy scalars/arrays and non-finite floats JSON-safe."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj, **kw):
    return json.dumps(_clean(obj), allow_nan=False, **kw)


def write_json(path, obj):
    Path(path).write_text(dumps(obj, indent=2, sort_keys=True) + "\n")
    return Path(path)


# fields ---------------------------------------------------------------------------

def write_field_csv(path, geo, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (geo.n,):
        raise GeometryError(f"field has shape {u.shape}, geometry has {geo.n} nodes")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "value"])
        for i, ((x, y), v) in enumerate(zip(geo.nodes, u)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(v))])
    return Path(path)


def read_field_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 3].copy()


def write_field_bin(path, geo, u):
    u = np.ascontiguousarray(u, dtype="<f8")
    if u.shape != (geo.n,):
        raise GeometryError(f"field has shape {u.shape}, geometry has {geo.n} nodes")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, KIND_CODES[geo.kind], geo.resolution, u.size))
        fh.write(u.tobytes())
    return Path(path)


def read_field_bin(path, geo=None):
    """Returns (kind, resolution, values); with ``geo`` the header is checked against it."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, code, res, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if len(raw) != HEADER.size + 8 * n:
        raise ValueError(f"{path}: expected {n} values, file has {(len(raw) - HEADER.size) / 8:g}")
    values = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).astype(float)
    kind = CODE_KINDS.get(code, f"unknown({code})")
    if geo is not None and (kind != geo.kind or res != geo.resolution or n != geo.n):
        raise GeometryError(f"{path}: field is {kind}/{res}/{n}, geometry is {geo.kind}/{geo.resolution}/{geo.n}")
    return kind, res, values


# tables -----------------------------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in _clean(list(r))])
    return Path(path)


def write_family_csv(path, points, lam, geo=None, P=None, parameter=None):
    """One row per family point: parameter, energy, log_denominator, J_lambda."""
    rows = []
    for p in points:
        par = parameter(p) if parameter else next(iter(p.parameters.values()))
        ld = p.log_denominator if P is None else log_denominator(geo, P, p.field)
        rows.append([par, p.energy, ld, 0.5 * p.energy - lam * ld, family_log_parameter(p)])
    return write_csv(path, ["parameter", "energy", "log_denominator", "J_lambda", "log_inv_parameter"], rows)


# streamed records -----------------------------------------------------------------

class JsonlWriter:
    """Appends one JSON object per line; optional per-record field dumps in ``field_dir``."""

    def __init__(self, path, geo=None, field_dir=None, mode="w"):
        self.path = Path(path)
        self.geo = geo
        self.field_dir = Path(field_dir) if field_dir else None
        if self.field_dir:
            self.field_dir.mkdir(parents=True, exist_ok=True)
        self.count = 0
        if mode == "a" and self.path.exists():
            # drop a torn last line, then continue the numbering of the interrupted run
            good = read_jsonl(self.path)
            self.path.write_text("".join(dumps(r, sort_keys=True) + "\n" for r in good))
            self.count = len(good)
        self._fh = open(self.path, mode)
        self.files = []

    def write(self, record, field=None):
        rec = dict(record)
        rec["index"] = self.count
        if field is not None and self.field_dir is not None:
            fp = self.field_dir / f"{self.path.stem}_{self.count:05d}.bin"
            write_field_bin(fp, self.geo, field)
            rec["field_file"] = fp.name
            self.files.append(fp)
        self._fh.write(dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()
        self.count += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                # a run killed mid-write leaves a partial last line
                break
    return out


def load_branch(path, geo, field_dir=None):
    """Rebuild a Branch from its JSON-lines stream for ``continue_branch(resume=...)``."""
    from .solvers import Branch, BranchPoint
    path = Path(path)
    field_dir = Path(field_dir) if field_dir else path.parent
    br = Branch()
    for rec in read_jsonl(path):
        if "field_file" not in rec:
            continue
        _, _, u = read_field_bin(field_dir / rec["field_file"], geo)
        br.points.append(BranchPoint(rec["lambda"], u, rec["energy"], rec["J_value"], rec["max_u"],
                                     rec["residual"], _num(rec.get("dlambda_ds")), _num(rec.get("ds_next"))))
    return br


def _num(x):
    return math.nan if x is None else float(x)
