"""Dataset CSV files, the chain container format and run configuration."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .model import MISSING, Dataset, ModelSpec
from .sampler import Chain, ChainConfig

CHAIN_MAGIC = "RLCMCHAIN"
CHAIN_VERSION = 1
NA_TOKENS = frozenset({"NA", ""})


class ChainFormatError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# datasets


def save_dataset(data: Dataset, y_path, x_path) -> None:
    """Write long-format response and covariate CSVs with 1-based ``n`` and ``t``."""
    with open(y_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t"] + [f"y_{j + 1}" for j in range(data.J)])
        for n in range(data.N):
            for t in range(data.T):
                ys = ["NA"] * data.J if data.mask[n, t] else [str(v) for v in data.Y[n, t]]
                w.writerow([n + 1, t + 1] + ys)
    with open(x_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t"] + [f"x_{d + 1}" for d in range(data.D)])
        for n in range(data.N):
            for t in range(data.T):
                w.writerow([n + 1, t + 1] + [repr(float(v)) for v in data.X[n, t]])


def _read_long(path, prefix: str):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    width = len(header) - 2
    expected = ["n", "t"] + [f"{prefix}_{i + 1}" for i in range(width)]
    if width < 1 or header != expected:
        raise DatasetFormatError(f"{path}: header must be n,t,{prefix}_1..{prefix}_K, got {','.join(header)}")
    keys, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        try:
            keys.append((int(row[0]), int(row[1])))
        except ValueError:
            raise DatasetFormatError(f"{path}: row {r} has non-integer n/t") from None
        values.append([c.strip() for c in row[2:]])
    return header, keys, values


def _grid(path, keys):
    ns = sorted({k[0] for k in keys})
    ts = sorted({k[1] for k in keys})
    if len(keys) != len(set(keys)) or len(keys) != len(ns) * len(ts):
        raise DatasetFormatError(f"{path}: (n, t) pairs must form a complete grid without duplicates")
    n_pos = {n: i for i, n in enumerate(ns)}
    t_pos = {t: i for i, t in enumerate(ts)}
    return ns, ts, n_pos, t_pos


def load_dataset(y_path, x_path, categories=None) -> Dataset:
    """Read the response and covariate CSVs.

    ``categories`` gives M_j per item (a single int applies to all items);
    when omitted it is taken as one more than the largest observed category,
    at least two.
    """
    _, ykeys, yvals = _read_long(y_path, "y")
    ns, ts, n_pos, t_pos = _grid(y_path, ykeys)
    J = len(yvals[0]) if yvals else 0
    N, T = len(ns), len(ts)
    Y = np.full((N, T, J), MISSING, dtype=np.int64)
    mask = np.zeros((N, T), dtype=bool)
    for r, ((n, t), vals) in enumerate(zip(ykeys, yvals), start=2):
        na = [v in NA_TOKENS for v in vals]
        if all(na):
            mask[n_pos[n], t_pos[t]] = True
            continue
        if any(na):
            raise DatasetFormatError(f"{y_path}: row {r} is partially missing; only whole rows may be NA")
        try:
            Y[n_pos[n], t_pos[t]] = [int(v) for v in vals]
        except ValueError:
            raise DatasetFormatError(f"{y_path}: row {r} has a non-integer response") from None

    _, xkeys, xvals = _read_long(x_path, "x")
    if set(xkeys) != set(ykeys):
        raise DatasetFormatError(f"{x_path}: (n, t) pairs differ from the response file")
    X = np.empty((N, T, len(xvals[0])))
    for r, ((n, t), vals) in enumerate(zip(xkeys, xvals), start=2):
        try:
            X[n_pos[n], t_pos[t]] = [float(v) for v in vals]
        except ValueError:
            raise DatasetFormatError(f"{x_path}: row {r} has a non-numeric covariate") from None

    if categories is None:
        top = Y.max(axis=(0, 1)) if Y.size else np.zeros(J, dtype=np.int64)
        M = tuple(int(max(2, m + 1)) for m in top)
    elif np.ndim(categories) == 0:
        M = (int(categories),) * J
    else:
        M = tuple(int(m) for m in categories)
    if len(M) != J:
        raise DatasetFormatError(f"schema lists {len(M)} items, file has {J}")
    bad = (~mask[:, :, None]) & ((Y < 0) | (Y >= np.asarray(M)))
    if bad.any():
        n, t, j = np.argwhere(bad)[0]
        row = 2 + ykeys.index((ns[n], ts[t]))
        raise DatasetFormatError(f"{y_path}: row {row}, item y_{j + 1}: value {Y[n, t, j]} outside 0..{M[j] - 1}")
    return Dataset(Y, X, M, mask)


# ---------------------------------------------------------------------------
# chain container


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()


def _chain_arrays(chain: Chain) -> list[tuple[str, np.ndarray]]:
    arrays = [(f"draws/{k}", v) for k, v in sorted(chain.draws.items())]
    arrays.append(("alpha_counts", chain.alpha_counts))
    arrays.append(("kappa_accept_rate", chain.kappa_accept_rate))
    return arrays


def save_chain(chain: Chain, path) -> None:
    """Write a chain: a magic line, a one-line JSON header, then raw little-endian arrays."""
    entries, blobs, offset = [], [], 0
    for name, arr in _chain_arrays(chain):
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        blob = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    header = {
        "arrays": entries,
        "config": asdict(chain.config),
        "meta": chain.meta,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "spec": {**asdict(chain.spec), "M": list(chain.spec.M)},
    }
    with open(path, "wb") as fh:
        fh.write(f"{CHAIN_MAGIC} {CHAIN_VERSION}\n".encode())
        fh.write(_json_bytes(header) + b"\n")
        fh.write(payload)


def load_chain(path) -> Chain:
    raw = Path(path).read_bytes()
    first, sep, rest = raw.partition(b"\n")
    parts = first.decode(errors="replace").split()
    if not sep or len(parts) != 2 or parts[0] != CHAIN_MAGIC:
        raise ChainFormatError(f"{path}: not a chain file")
    if parts[1] != str(CHAIN_VERSION):
        raise ChainFormatError(f"{path}: chain format version {parts[1]}, this build reads {CHAIN_VERSION}")
    head, sep, payload = rest.partition(b"\n")
    if not sep:
        raise ChainFormatError(f"{path}: truncated header")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise ChainFormatError(f"{path}: corrupt header ({exc})") from None
    if len(payload) != header["payload_bytes"]:
        raise ChainFormatError(f"{path}: payload has {len(payload)} bytes, expected {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChainFormatError(f"{path}: payload checksum mismatch")
    arrays = {}
    for e in header["arrays"]:
        buf = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    spec_d = dict(header["spec"])
    spec = ModelSpec(**{**spec_d, "M": tuple(spec_d["M"])})
    config = ChainConfig(**header["config"])
    draws = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("draws/")}
    return Chain(spec, config, draws, arrays["alpha_counts"], arrays["kappa_accept_rate"], header["meta"])


# ---------------------------------------------------------------------------
# configuration


def _coerce(value: str, kind):
    if kind is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if kind in (int, float, str):
        return kind(value)
    raise TypeError(kind)


def _field_kinds(cls) -> dict[str, type]:
    kinds = {}
    for f in fields(cls):
        t = str(f.type)
        if "int" in t and "float" not in t:
            kinds[f.name] = int
        elif "float" in t:
            kinds[f.name] = float
        elif "str" in t:
            kinds[f.name] = str
    return kinds


# keys accepted in each config section
MODEL_KEYS = {"K": int, "L": int, "categories": str, "meas_order": int, "trans_order": int}
DATA_KEYS = {"responses": str, "covariates": str}
LIST_KEYS = {"chains": str}
DIAGNOSE_KEYS = {"chain": str, "level": float}


def config_sections():
    from .simulation import ScenarioSpec

    return {
        "model": MODEL_KEYS,
        "data": DATA_KEYS,
        "chain": _field_kinds(ChainConfig),
        "scenario": _field_kinds(ScenarioSpec),
        "diagnose": DIAGNOSE_KEYS,
        "waic": LIST_KEYS,
    }


def read_config(path) -> tuple[dict[str, dict], str]:
    """Parse an INI file, rejecting unknown sections and keys.

    Returns ``(sections, sha256 of the file bytes)``; values are converted to
    the type of the field they set.
    """
    raw = Path(path).read_bytes()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(raw.decode())
    known = config_sections()
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in known:
            raise ValueError(f"{path}: unknown section [{section}]")
        kinds = known[section]
        out[section] = {}
        for key, value in parser.items(section):
            if key not in kinds:
                raise ValueError(f"{path}: unknown key '{key}' in [{section}]")
            if section == "chain" and key == "v0" and value.strip().lower() == "none":
                out[section][key] = None
                continue
            try:
                out[section][key] = _coerce(value, kinds[key])
            except ValueError:
                raise ValueError(f"{path}: bad value for {section}.{key}: {value!r}") from None
    return out, hashlib.sha256(raw).hexdigest()
