"""CSV / JSON writers and the replay manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__

OCCUPANCY_HEADER = ["patch_id", "z", "occupancy_proportion", "stderr"]
LIMIT_HEADER = ["z", "occupancy", "weighted_occupancy", "phi_star"]
FIELD_HEADER = ["theta_index", "z", "q"]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def write_occupancy(path, summary) -> Path:
    return write_csv(path, OCCUPANCY_HEADER, summary.rows())


def write_counts(path, counts) -> Path:
    return write_csv(path, ["t", "occupied"], ((t + 1, int(c)) for t, c in enumerate(counts)))


def write_limit(path, eq) -> Path:
    rows = zip(eq.grid.nodes, eq.occupancy, eq.weighted, eq.phi_star)
    return write_csv(path, LIMIT_HEADER, rows)


def write_field(path, field) -> Path:
    rows = ((j, z, field.q[j, k]) for j in range(len(field.theta))
            for k, z in enumerate(field.grid.nodes))
    return write_csv(path, FIELD_HEADER, rows)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    import matplotlib

    return {"metapopsim": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__}


def write_manifest(out_dir, command, config, outputs, extra=None) -> Path:
    out_dir = Path(out_dir)
    body = {
        "command": command,
        "config_sha256": config.sha256(),
        "config": config.to_json(),
        "seed": config.seed,
        "versions": versions(),
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }
    if extra:
        body.update(extra)
    return write_json(out_dir / f"manifest_{command}.json", body)
