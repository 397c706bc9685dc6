"""Single-file checkpoints: a text manifest plus raw float32 records.

Layout: a UTF-8 header (magic line, epoch, global step, per-network Adam step
counts, and the full serialized config between config_begin/config_end),
a "---" separator, then one record per array — a name line, a comma-separated
shape line, and the raw little-endian float32 payload. Records cover every
parameter and both Adam moments, so a save/load round trip is bit-exact and
training resumes with the exact optimizer state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig, parse_config, serialize_config
from .networks import Networks, ParameterSet, build_networks

MAGIC = "xstereo-checkpoint-v1"
_SEP = b"\n---\n"


@dataclass
class LoadedCheckpoint:
    nets: Networks
    cfg: TrainConfig
    epoch: int
    global_step: int


def _records(nets: Networks):
    for s in nets.all_sets():
        for key in s.params:
            yield f"param {s.name} {key}", s.params[key].data
            yield f"m {s.name} {key}", s.m[key]
            yield f"v {s.name} {key}", s.v[key]


def save_checkpoint(path, nets: Networks, cfg: TrainConfig, epoch: int,
                    global_step: int) -> None:
    header = [MAGIC, f"epoch {epoch}", f"global_step {global_step}"]
    for s in nets.all_sets():
        header.append(f"steps {s.name} {s.step_count}")
    header.append("config_begin")
    header.append(serialize_config(cfg).rstrip("\n"))
    header.append("config_end")

    blob = bytearray("\n".join(header).encode("utf-8"))
    blob += _SEP
    for name, arr in _records(nets):
        payload = np.ascontiguousarray(arr, dtype="<f4")
        blob += name.encode("utf-8") + b"\n"
        blob += ",".join(str(d) for d in arr.shape).encode("utf-8") + b"\n"
        blob += payload.tobytes()

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(blob))
    os.replace(tmp, path)


def _set_by_name(nets: Networks, name: str) -> ParameterSet:
    for s in nets.all_sets():
        if s.name == name:
            return s
    raise ValueError(f"checkpoint names unknown network {name!r}")


def load_checkpoint(path) -> LoadedCheckpoint:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(_SEP)
    if sep < 0:
        raise ValueError(f"{path}: not a checkpoint (missing record separator)")
    header = raw[:sep].decode("utf-8").split("\n")
    body = raw[sep + len(_SEP):]

    if not header or header[0] != MAGIC:
        raise ValueError(f"{path}: bad magic line {header[:1]!r}, expected {MAGIC!r}")
    epoch = global_step = None
    step_counts: dict[str, int] = {}
    config_lines: list[str] = []
    in_config = False
    for line in header[1:]:
        if line == "config_begin":
            in_config = True
        elif line == "config_end":
            in_config = False
        elif in_config:
            config_lines.append(line)
        elif line.startswith("epoch "):
            epoch = int(line.split(" ", 1)[1])
        elif line.startswith("global_step "):
            global_step = int(line.split(" ", 1)[1])
        elif line.startswith("steps "):
            _, name, n = line.split(" ")
            step_counts[name] = int(n)
        elif line.strip():
            raise ValueError(f"{path}: unrecognized header line {line!r}")
    if epoch is None or global_step is None or not config_lines:
        raise ValueError(f"{path}: incomplete header")

    cfg = parse_config("\n".join(config_lines))
    nets = build_networks(cfg.network, cfg.input_mode, seed=cfg.seed, use_stn=cfg.use_stn)

    expected = {name: arr for name, arr in _records(nets)}
    seen = set()
    pos = 0
    dt = T.default_dtype()
    while pos < len(body):
        nl = body.find(b"\n", pos)
        name = body[pos:nl].decode("utf-8")
        pos = nl + 1
        nl = body.find(b"\n", pos)
        shape = tuple(int(d) for d in body[pos:nl].decode("utf-8").split(","))
        pos = nl + 1
        count = int(np.prod(shape))
        payload = body[pos:pos + 4 * count]
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload for {name!r}")
        pos += 4 * count
        if name not in expected:
            raise ValueError(f"{path}: record {name!r} does not match the configured networks")
        if name in seen:
            raise ValueError(f"{path}: duplicate record {name!r}")
        seen.add(name)
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
        kind, set_name, key = name.split(" ", 2)
        ps = _set_by_name(nets, set_name)
        target = ps.params[key].data if kind == "param" else (ps.m if kind == "m" else ps.v)[key]
        if target.shape != shape:
            raise ValueError(f"{path}: {name!r} has shape {shape}, networks expect {target.shape}")
        if kind == "param":
            ps.params[key].data = arr.astype(dt)
        elif kind == "m":
            ps.m[key] = arr.astype(dt)
        else:
            ps.v[key] = arr.astype(dt)

    missing = sorted(set(expected) - seen)
    if missing:
        raise ValueError(f"{path}: missing records (first: {missing[0]!r}, {len(missing)} total)")
    for s in nets.all_sets():
        if s.name not in step_counts:
            raise ValueError(f"{path}: no step count for network {s.name!r}")
        s.step_count = step_counts[s.name]

    return LoadedCheckpoint(nets=nets, cfg=cfg, epoch=epoch, global_step=global_step)
