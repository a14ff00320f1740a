"""Self-describing binary checkpoints.

Layout (see ``docs/checkpoint_format.md``)::

    Q3RCKPT1\\n
    meta <key> <value>\\n          any number, in insertion order
    config <line>\\n               the canonical INI text, one header line per line
    tensor <name> <rows> <cols>\\n one per tensor
    end\\n
    <payload>                      row-major float64 little-endian, tensors in header order

Every 1-d array is stored as a single row.  Per parameter ``P`` the tensors are
``P`` (weights), ``P/m`` and ``P/v`` (Adam moments), optionally ``P/state``
(``[r_target, eps, eps_floor]``) and an operator block ``P/op/eps``,
``P/op/r_env``, ``P/op/u``, ``P/op/sigma``, ``P/op/v``, ``P/op/anchor``
(``[F_eps(W'), ||W'||_F^2]``).  An unset ``eps`` is written as ``inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from q3r.harness.config import ConfigError, RecoverySpec, parse_config
from q3r.harness.experiment import ExperimentConfig, build_net
from q3r.optim import ParamTensor
from q3r.reweighting import ReweightingOperator, SmoothingState
from q3r.tinynet import parameters

MAGIC = "Q3RCKPT1"
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    """Malformed checkpoint; the message starts with the section that failed."""


@dataclass
class Checkpoint:
    config_text: str
    meta: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, arr) -> None:
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(1, -1)
        elif a.ndim != 2:
            raise ValueError(f"tensor {name}: only 1-d and 2-d arrays are stored")
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} must be non-empty without whitespace")
        self.tensors[name] = a


def to_bytes(ckpt: Checkpoint) -> bytes:
    lines = [MAGIC]
    for key, value in ckpt.meta.items():
        if any(c.isspace() for c in key) or "\n" in value:
            raise ValueError(f"meta entry {key!r} cannot be encoded")
        lines.append(f"meta {key} {value}")
    for line in ckpt.config_text.splitlines():
        lines.append(f"config {line}")
    for name, a in ckpt.tensors.items():
        lines.append(f"tensor {name} {a.shape[0]} {a.shape[1]}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(a, dtype=_DTYPE).tobytes() for a in ckpt.tensors.values())
    return header + payload


def from_bytes(data: bytes) -> Checkpoint:
    if not data.startswith((MAGIC + "\n").encode()):
        raise CheckpointError(f"header: missing magic {MAGIC!r}")
    end = data.find(b"\nend\n")
    if end < 0:
        raise CheckpointError("header: no 'end' line")
    try:
        header = data[: end + 1].decode("ascii").splitlines()[1:]
    except UnicodeDecodeError:
        raise CheckpointError("header: not ASCII text") from None
    meta: dict[str, str] = {}
    config_lines: list[str] = []
    shapes: list[tuple[str, int, int]] = []
    for i, line in enumerate(header, 2):
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            if not key:
                raise CheckpointError(f"meta: empty key on header line {i}")
            meta[key] = value
        elif kind == "config":
            config_lines.append(rest)
        elif kind == "tensor":
            parts = rest.split(" ")
            try:
                name, rows, cols = parts[0], int(parts[1]), int(parts[2])
            except (IndexError, ValueError):
                raise CheckpointError(f"tensor: bad declaration on header line {i}: {line!r}") from None
            if len(parts) != 3 or rows < 0 or cols < 0:
                raise CheckpointError(f"tensor {name}: bad declaration on header line {i}")
            if name in {s[0] for s in shapes}:
                raise CheckpointError(f"tensor {name}: declared twice")
            shapes.append((name, rows, cols))
        else:
            raise CheckpointError(f"header: unknown record {kind!r} on line {i}")

    ckpt = Checkpoint("\n".join(config_lines) + ("\n" if config_lines else ""), meta)
    offset = end + len(b"\nend\n")
    for name, rows, cols in shapes:
        n = rows * cols * _DTYPE.itemsize
        if offset + n > len(data):
            raise CheckpointError(f"tensor {name}: payload truncated ({len(data) - offset} of {n} bytes)")
        ckpt.tensors[name] = np.frombuffer(data, dtype=_DTYPE, count=rows * cols, offset=offset).reshape(rows, cols).astype(np.float64)
        offset += n
    if offset != len(data):
        raise CheckpointError(f"payload: {len(data) - offset} trailing bytes after the last tensor")
    return ckpt


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"file: cannot read {path} ({exc.strerror})") from None
    return from_bytes(data)


# -- networks ---------------------------------------------------------------


def _unset(eps):
    return math.inf if eps is None else eps


def from_net(net, config_text: str, meta: dict[str, str] | None = None) -> Checkpoint:
    ckpt = Checkpoint(config_text, dict(meta or {}))
    for p in parameters(net):
        ckpt.add(p.name, p.w)
        ckpt.add(f"{p.name}/m", p.m)
        ckpt.add(f"{p.name}/v", p.v)
        if p.state is not None:
            ckpt.add(f"{p.name}/state", [p.state.r_target, _unset(p.state.eps), p.state.eps_floor])
        if p.op is not None:
            op = p.op
            ckpt.add(f"{p.name}/op/eps", _unset(op.eps))
            ckpt.add(f"{p.name}/op/r_env", op.r_env)
            ckpt.add(f"{p.name}/op/u", op.u)
            ckpt.add(f"{p.name}/op/sigma", op.sigma)
            ckpt.add(f"{p.name}/op/v", op.v)
            ckpt.add(f"{p.name}/op/anchor", [op.f_eps_at_anchor, op.anchor_frob_sq])
    return ckpt


def _get(ckpt: Checkpoint, name: str, shape) -> np.ndarray:
    if name not in ckpt.tensors:
        raise CheckpointError(f"tensor {name}: missing")
    a = ckpt.tensors[name]
    if a.size != math.prod(shape):
        raise CheckpointError(f"tensor {name}: shape {a.shape} does not fit {tuple(shape)}")
    return a.reshape(shape).copy()


def _restore_param(ckpt: Checkpoint, p: ParamTensor, steps: int) -> None:
    p.w = _get(ckpt, p.name, p.w.shape)
    p.m = _get(ckpt, f"{p.name}/m", p.w.shape)
    p.v = _get(ckpt, f"{p.name}/v", p.w.shape)
    p.step_count = steps
    if f"{p.name}/state" in ckpt.tensors:
        r_target, eps, floor = _get(ckpt, f"{p.name}/state", (3,))
        try:
            p.state = SmoothingState(int(r_target), None if math.isinf(eps) else float(eps), float(floor))
        except ValueError as exc:
            raise CheckpointError(f"tensor {p.name}/state: {exc}") from None
        p.q3r_enabled = True
    if f"{p.name}/op/eps" in ckpt.tensors:
        eps = float(_get(ckpt, f"{p.name}/op/eps", (1,))[0])
        r = int(_get(ckpt, f"{p.name}/op/r_env", (1,))[0])
        d1, d2 = p.w.shape
        f_anchor, frob = _get(ckpt, f"{p.name}/op/anchor", (2,))
        p.op = ReweightingOperator(
            shape=(d1, d2),
            u=_get(ckpt, f"{p.name}/op/u", (d1, r)),
            v=_get(ckpt, f"{p.name}/op/v", (d2, r)),
            sigma=_get(ckpt, f"{p.name}/op/sigma", (r,)),
            eps=None if math.isinf(eps) else eps,
            f_eps_at_anchor=float(f_anchor),
            anchor_frob_sq=float(frob),
        )
        p.q3r_enabled = True


def to_net(ckpt: Checkpoint) -> tuple[ExperimentConfig, RecoverySpec, list]:
    """Rebuild the network described by the embedded config and load its state."""
    try:
        cfg, recovery = parse_config(ckpt.config_text, "<checkpoint config>")
    except ConfigError as exc:
        raise CheckpointError(f"config: {exc}") from None
    if cfg.task == "matrix_recover":
        raise CheckpointError("config: matrix_recover runs carry no network")
    try:
        steps = int(ckpt.meta.get("steps", "0"))
    except ValueError:
        raise CheckpointError(f"meta: bad steps value {ckpt.meta['steps']!r}") from None
    net = build_net(cfg, np.random.default_rng([cfg.seed, 1]))
    for p in parameters(net):
        _restore_param(ckpt, p, steps)
    return cfg, recovery, net
