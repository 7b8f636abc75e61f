"""``.flowseq`` trajectory files.

Binary layout (little-endian): magic ``FSEQ``, version u32, T+1 u32, C u32,
H u32, W u32, then the states as f32 in [T+1][C][H][W] order. Metadata (dt,
channel names, parameter record, provenance) lives in a JSON sidecar with the
same stem.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .trajectory import FIELD_CHANNELS, Trajectory

MAGIC = b"FSEQ"
VERSION = 1
HEADER = struct.Struct("<4s5I")


class FlowseqError(ValueError):
    pass


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_flowseq(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(traj.states, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, *data.shape))
        fh.write(data.tobytes())
    side = {
        "dt": traj.dt,
        "channels": list(traj.channels),
        "params": {k: v.tolist() for k, v in traj.params.items()},
        "source": traj.source,
        "stats_ref": traj.stats_ref,
        "meta": _jsonable(traj.meta),
    }
    sidecar_path(path).write_text(json.dumps(side, indent=1))
    return path


def read_header(path) -> tuple[int, int, int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise FlowseqError(f"{path}: truncated header")
    magic, version, *shape = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FlowseqError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FlowseqError(f"{path}: unsupported version {version}")
    return tuple(shape)


def read_flowseq(path) -> Trajectory:
    """Load a trajectory; states are promoted to f64."""
    path = Path(path)
    shape = read_header(path)
    n = int(np.prod(shape))
    payload = path.read_bytes()[HEADER.size:]
    if len(payload) != 4 * n:
        raise FlowseqError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    states = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    side_file = sidecar_path(path)
    if side_file.exists():
        side = json.loads(side_file.read_text())
    else:
        # bare external data: treat every channel as a field
        C = shape[1]
        names = list(FIELD_CHANNELS[:C]) + [f"ch{i}" for i in range(len(FIELD_CHANNELS), C)]
        side = {"dt": 1.0, "channels": names, "params": {}, "source": "external"}
    return Trajectory(states, float(side["dt"]), side.get("params", {}),
                      tuple(side["channels"]), side.get("source", "unknown"),
                      side.get("stats_ref"), side.get("meta", {}))
