"""CSV/JSON emission and the human-readable weight archive."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .attention import HeadWeights, MSAWeights, OmegaBank
from .errors import ShapeError, ValidationError

ARCHIVE_FORMAT = "sa-dyn-weights"
ARCHIVE_VERSION = 1


def _plain(value):
    """Convert numpy scalars/arrays and enums into JSON-serialisable values."""
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()] if value.ndim else _plain(value.item())
    if isinstance(value, (np.floating, float)):
        f = float(value)
        return f if math.isfinite(f) else repr(f)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "value") and not isinstance(value, (str, int)):
        return value.value
    return value


def to_json_text(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json_text(obj))
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(_plain(v))


def write_csv(path, header, rows, footer=None):
    """Write rows with a header line, '\\n' endings and repr-exact floats.

    ``footer`` lines are appended as ``# key=value`` comments.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
        for key, value in (footer or {}).items():
            fh.write(f"# {key}={_cell(value)}\n")
    return path


def read_csv(path):
    """Return ``(header, rows, footer)``; values are left as strings."""
    header, rows, footer = None, [], {}
    with Path(path).open(newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                footer[key] = value
            elif header is None:
                header = next(csv.reader([line]))
            elif line:
                rows.append(next(csv.reader([line])))
    return header, rows, footer


# ---------------------------------------------------------------- archive


def _encode(m):
    m = np.asarray(m, dtype=np.float64)
    return {"shape": list(m.shape), "data": m.tolist()}


def _decode(obj, name):
    try:
        shape = tuple(obj["shape"])
        arr = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed matrix {name!r}: {exc}") from exc
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise ShapeError(f"{name}: declared shape {shape}, data shape {arr.shape}")
    return arr


def archive_dict(w: MSAWeights, bank: OmegaBank | None = None, seed=None):
    doc = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "seed": seed,
        "beta": w.beta,
        "heads": [
            {"wq": _encode(h.wq), "wk": _encode(h.wk), "wv": _encode(h.wv)} for h in w.heads
        ],
        "wo": _encode(w.wo),
    }
    if bank is not None:
        doc["omegas"] = [_encode(o) for o in bank.omegas]
    return doc


def save_weights(path, w: MSAWeights, bank: OmegaBank | None = None, seed=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # json writes floats with repr, which round-trips doubles exactly
    path.write_text(json.dumps(archive_dict(w, bank, seed), indent=1) + "\n")
    return path


def load_weights(path):
    """Return ``(MSAWeights, OmegaBank or None, seed)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read weight archive ({exc})") from exc
    if doc.get("format") != ARCHIVE_FORMAT:
        raise ValidationError(f"{path}: unknown format {doc.get('format')!r}")
    if doc.get("version") != ARCHIVE_VERSION:
        raise ValidationError(f"{path}: unsupported version {doc.get('version')!r}")
    heads = [
        HeadWeights(_decode(h["wq"], "wq"), _decode(h["wk"], "wk"), _decode(h["wv"], "wv"))
        for h in doc["heads"]
    ]
    w = MSAWeights(tuple(heads), _decode(doc["wo"], "wo"), doc["beta"])
    bank = None
    if "omegas" in doc:
        bank = OmegaBank(tuple(_decode(o, "omega") for o in doc["omegas"]))
    return w, bank, doc.get("seed")
