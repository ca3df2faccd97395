"""Checkpoint persistence: header + tensor segments + condition models.

Layout (all little-endian):
  magic "LVCK", u32 format version,
  u64 header length, header JSON (sorted keys),
  u32 parameter count, tensor segments,
  u32 accumulator count, tensor segments,
  u32 condition-model count, each as "WxH" label + length-prefixed blob.

A tensor segment is (u16 name length, name utf-8, u32 rank, u32 dims...,
IEEE-754 little-endian 32-bit values). Saving a just-loaded checkpoint
reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_to_dict, config_from_dict
from .errors import CheckpointError
from .gmm import GmmModel, gmm_from_bytes, gmm_to_bytes

_MAGIC = b"LVCK"
_VERSION = 1


def _write_tensor(parts: list[bytes], name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    raw = name.encode()
    parts.append(struct.pack("<H", len(raw)))
    parts.append(raw)
    parts.append(struct.pack("<I", data.ndim))
    parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
    parts.append(data.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _read_tensor(r: _Reader) -> tuple[str, np.ndarray]:
    name = r.take(r.u16()).decode()
    rank = r.u32()
    shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
    count = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
    return name, arr.astype(np.float64)


@dataclass
class Checkpoint:
    config: RunConfig
    iteration: int
    rng_state: dict
    params: dict[str, np.ndarray]
    accumulators: dict[str, np.ndarray]
    active_sizes: list[tuple[int, int]]
    first_playable: dict[tuple[int, int], int]
    buffer_payload: list
    gmms: dict[tuple[int, int], GmmModel]

    @property
    def trained_sizes(self) -> list[tuple[int, int]]:
        sizes = set()
        for name in self.params:
            if name.startswith("flow/"):
                w, h = name.split("/")[1].split("x")
                sizes.add((int(w), int(h)))
        return sorted(sizes)


def checkpoint_bytes(config: RunConfig, iteration: int, rng_state: dict,
                     params: dict[str, np.ndarray],
                     accumulators: dict[str, np.ndarray],
                     active_sizes: list[tuple[int, int]],
                     first_playable: dict[tuple[int, int], int],
                     buffer_payload: list,
                     gmms: dict[tuple[int, int], GmmModel],
                     tileset: tuple[str, ...],
                     control_names: tuple[str, ...]) -> bytes:
    flow_sizes = set()
    for name in params:
        if name.startswith("flow/"):
            w, h = name.split("/")[1].split("x")
            flow_sizes.add((int(w), int(h)))
    header = {
        "format_version": _VERSION,
        "game": config.game,
        "tileset": list(tileset),
        "controls": list(control_names),
        "config": config_to_dict(config),
        "iteration": iteration,
        "rng_state": rng_state,
        "trained_sizes": sorted([list(s) for s in flow_sizes]),
        "active_sizes": sorted([list(s) for s in active_sizes]),
        "first_playable": {f"{w}x{h}": it
                           for (w, h), it in sorted(first_playable.items())},
        "replay_buffer": buffer_payload,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts: list[bytes] = [_MAGIC, struct.pack("<I", _VERSION),
                          struct.pack("<Q", len(blob)), blob]
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        _write_tensor(parts, name, params[name])
    parts.append(struct.pack("<I", len(accumulators)))
    for name in sorted(accumulators):
        _write_tensor(parts, name, accumulators[name])
    parts.append(struct.pack("<I", len(gmms)))
    for size in sorted(gmms):
        label = f"{size[0]}x{size[1]}".encode()
        gmm_blob = gmm_to_bytes(gmms[size])
        parts.append(struct.pack("<H", len(label)))
        parts.append(label)
        parts.append(struct.pack("<Q", len(gmm_blob)))
        parts.append(gmm_blob)
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise CheckpointError("not a levelflow checkpoint")
    version = r.u32()
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(r.take(r.u64()).decode())
    params = {}
    for _ in range(r.u32()):
        name, arr = _read_tensor(r)
        params[name] = arr
    accumulators = {}
    for _ in range(r.u32()):
        name, arr = _read_tensor(r)
        accumulators[name] = arr
    gmms = {}
    for _ in range(r.u32()):
        label = r.take(r.u16()).decode()
        blob = r.take(r.u64())
        w, h = label.split("x")
        gmms[(int(w), int(h))] = gmm_from_bytes(blob)
    first_playable = {}
    for label, it in header["first_playable"].items():
        w, h = label.split("x")
        first_playable[(int(w), int(h))] = int(it)
    return Checkpoint(
        config=config_from_dict(header["config"]),
        iteration=int(header["iteration"]),
        rng_state=header["rng_state"],
        params=params,
        accumulators=accumulators,
        active_sizes=[tuple(s) for s in header["active_sizes"]],
        first_playable=first_playable,
        buffer_payload=header["replay_buffer"],
        gmms=gmms,
    )


def save_checkpoint(path, trainer, gmms: dict[tuple[int, int], GmmModel]) -> None:
    """Snapshot a trainer (parameters, optimizer state, RNG, buffer)."""
    params = {name: t.data for name, t in trainer.store.items()}
    accumulators = {name: trainer.store.accumulator(name)
                    for name, _ in trainer.store.items()}
    data = checkpoint_bytes(
        config=trainer.config,
        iteration=trainer.iteration,
        rng_state=_rng_state_to_json(trainer.rng),
        params=params,
        accumulators=accumulators,
        active_sizes=sorted(trainer.curriculum.active),
        first_playable=trainer.curriculum.first_playable,
        buffer_payload=trainer.buffer.to_payload(),
        gmms=gmms,
        tileset=trainer.game.tiles,
        control_names=tuple(c.name for c in trainer.game.controls),
    )
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            return checkpoint_from_bytes(f.read())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def restore_rng(state: dict) -> np.random.Generator:
    import numpy.random as npr

    cls = getattr(npr, state["bit_generator"])
    bitgen = cls()
    bitgen.state = state
    return npr.Generator(bitgen)


def trainer_from_checkpoint(ckpt: Checkpoint, game=None):
    """Rebuild a Trainer ready to continue from a checkpoint."""
    from .training import ReplayBuffer, Trainer

    trainer = Trainer(ckpt.config, game=game)
    for w, h in ckpt.trained_sizes:
        trainer.flows.ensure(w, h)
    for name, arr in ckpt.params.items():
        if name not in trainer.store:
            raise CheckpointError(f"checkpoint parameter {name!r} has no slot")
        if trainer.store[name].data.shape != arr.shape:
            raise CheckpointError(
                f"checkpoint parameter {name!r} has shape {arr.shape}, "
                f"expected {trainer.store[name].data.shape}")
        trainer.store[name].data = arr.copy()
    for name, arr in ckpt.accumulators.items():
        trainer.store.set_accumulator(name, arr.copy())
    trainer.buffer = ReplayBuffer.from_payload(
        ckpt.buffer_payload, trainer.game, ckpt.config.signature_key)
    trainer.curriculum.active = set(ckpt.active_sizes) | set(ckpt.config.seed_sizes)
    trainer.curriculum.first_playable = dict(ckpt.first_playable)
    trainer.iteration = ckpt.iteration
    trainer.rng = restore_rng(ckpt.rng_state)
    return trainer


def policy_from_checkpoint(ckpt: Checkpoint, game=None):
    """Rebuild just the forward policy (generation needs nothing else)."""
    from .games import get_game
    from .model import PolicyNet

    spec = game if game is not None else get_game(ckpt.config.game)
    policy = PolicyNet.for_game(spec, np.random.default_rng(0))
    for name, t in policy.store.items():
        if name in ckpt.params:
            if t.data.shape != ckpt.params[name].shape:
                raise CheckpointError(
                    f"checkpoint parameter {name!r} has shape "
                    f"{ckpt.params[name].shape}, expected {t.data.shape}")
            t.data = ckpt.params[name].copy()
    return policy, spec
