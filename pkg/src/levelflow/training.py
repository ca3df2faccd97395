"""Multi-size curriculum training: replay buffer, rewards, loss, driver.

Every iteration rolls out a batch at every configured size (so inactive
sizes can produce their first playable level), but only active sizes
contribute loss terms. A size activates one iteration after its first
playable rollout; seed sizes are active from the start.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor
from .config import RunConfig
from .errors import EmptyBufferError, NonFiniteValue
from .games import (
    Analysis,
    GameSpec,
    Level,
    flip_level,
    measure_controls,
    normalize_vector,
    properties_vector,
)
from .model import FlowHeads, PolicyNet, TrajectoryBatch, tiles_in_scan_order


@dataclass
class ReplayEntry:
    level: Level
    properties: dict[str, int]
    u: np.ndarray  # normalized measured controls
    key: tuple


class _SizeBuffer:
    __slots__ = ("clusters", "order", "hashes")

    def __init__(self) -> None:
        self.clusters: dict[tuple, list[ReplayEntry]] = {}
        self.order: list[tuple] = []  # cluster keys in first-seen order
        self.hashes: set[bytes] = set()

    def __len__(self) -> int:
        return len(self.hashes)


class ReplayBuffer:
    """Per-size store of playable levels, clustered by a property key.

    Levels are deduplicated by exact grid; stored control values are the
    measured ones, never the requested ones.
    """

    def __init__(self, game: GameSpec, use_signature_key: bool = False):
        self.game = game
        self.use_signature_key = use_signature_key
        self._sizes: dict[tuple[int, int], _SizeBuffer] = {}

    def key_for(self, level: Level, analysis: Analysis) -> tuple:
        if self.use_signature_key:
            if self.game.signature is None:
                raise ValueError(f"game {self.game.name!r} has no solution signature")
            return self.game.signature(level, analysis.solution)
        return self.game.cluster_key(level, analysis)

    def sizes(self) -> list[tuple[int, int]]:
        return sorted(s for s, buf in self._sizes.items() if len(buf) > 0)

    def count(self, size: tuple[int, int]) -> int:
        buf = self._sizes.get(size)
        return len(buf) if buf else 0

    def n_clusters(self, size: tuple[int, int]) -> int:
        buf = self._sizes.get(size)
        return len(buf.clusters) if buf else 0

    def cluster_sizes(self, size: tuple[int, int]) -> dict[tuple, int]:
        buf = self._sizes.get(size)
        if not buf:
            return {}
        return {k: len(v) for k, v in buf.clusters.items()}

    def entries(self, size: tuple[int, int]) -> list[ReplayEntry]:
        buf = self._sizes.get(size)
        if not buf:
            return []
        return [e for key in buf.order for e in buf.clusters[key]]

    def insert(self, level: Level, analysis: Analysis) -> bool:
        """Store a playable level with its measured controls; False on dup."""
        if not analysis.playable:
            raise ValueError("only playable levels belong in the replay buffer")
        size = (level.width, level.height)
        buf = self._sizes.setdefault(size, _SizeBuffer())
        ident = level.grid_key()
        if ident in buf.hashes:
            return False
        key = self.key_for(level, analysis)
        entry = ReplayEntry(
            level=level,
            properties=dict(analysis.properties),
            u=measure_controls(level, analysis, self.game.controls),
            key=key,
        )
        if key not in buf.clusters:
            buf.clusters[key] = []
            buf.order.append(key)
        buf.clusters[key].append(entry)
        buf.hashes.add(ident)
        return True

    def diversity_sample(self, size: tuple[int, int],
                         rng: np.random.Generator) -> ReplayEntry:
        """Uniform cluster, then uniform entry within it: P = 1/(N*|C|)."""
        buf = self._sizes.get(size)
        if buf is None or not buf.order:
            raise EmptyBufferError(f"replay buffer for size {size} is empty")
        key = buf.order[int(rng.integers(len(buf.order)))]
        cluster = buf.clusters[key]
        return cluster[int(rng.integers(len(cluster)))]

    def uniform_sample(self, size: tuple[int, int],
                       rng: np.random.Generator) -> ReplayEntry:
        buf = self._sizes.get(size)
        total = sum(len(c) for c in buf.clusters.values()) if buf else 0
        if total == 0:
            raise EmptyBufferError(f"replay buffer for size {size} is empty")
        idx = int(rng.integers(total))
        for key in buf.order:
            cluster = buf.clusters[key]
            if idx < len(cluster):
                return cluster[idx]
            idx -= len(cluster)
        raise AssertionError("unreachable")

    def sample(self, size: tuple[int, int], rng: np.random.Generator,
               diversity: bool = True) -> ReplayEntry:
        if diversity:
            return self.diversity_sample(size, rng)
        return self.uniform_sample(size, rng)

    def closest_populated(self, size: tuple[int, int]) -> tuple[int, int] | None:
        """Populated size minimizing |dw|+|dh|; ties broken by smaller area,
        then lexicographically."""
        w, h = size
        candidates = self.sizes()
        if not candidates:
            return None
        return min(candidates,
                   key=lambda s: (abs(s[0] - w) + abs(s[1] - h), s[0] * s[1], s))

    def to_payload(self) -> list[dict]:
        from .games import render_level
        payload = []
        for size in sorted(self._sizes):
            buf = self._sizes[size]
            if len(buf) == 0:
                continue
            levels = []
            for key in buf.order:
                for e in buf.clusters[key]:
                    levels.append({
                        "cells": render_level(e.level, self.game),
                        "properties": {k: int(v) for k, v in sorted(e.properties.items())},
                        "u": [float(x) for x in e.u],
                        "key": _key_to_json(e.key),
                    })
            payload.append({"size": list(size), "levels": levels})
        return payload

    @classmethod
    def from_payload(cls, payload: list[dict], game: GameSpec,
                     use_signature_key: bool = False) -> "ReplayBuffer":
        from .games import parse_level
        buffer = cls(game, use_signature_key)
        for block in payload:
            size = tuple(block["size"])
            buf = buffer._sizes.setdefault(size, _SizeBuffer())
            for item in block["levels"]:
                level = parse_level(item["cells"], game)
                key = _key_from_json(item["key"])
                entry = ReplayEntry(
                    level=level,
                    properties={k: int(v) for k, v in item["properties"].items()},
                    u=np.array(item["u"], dtype=np.float64),
                    key=key,
                )
                if key not in buf.clusters:
                    buf.clusters[key] = []
                    buf.order.append(key)
                buf.clusters[key].append(entry)
                buf.hashes.add(level.grid_key())
        return buffer


def _key_to_json(key):
    if isinstance(key, tuple):
        return {"t": [_key_to_json(k) for k in key]}
    return key


def _key_from_json(obj):
    if isinstance(obj, dict):
        return tuple(_key_from_json(k) for k in obj["t"])
    return obj


def log_reward(level: Level, requested: np.ndarray, analysis: Analysis,
               game: GameSpec) -> float:
    """0 when playable and every measured control equals the request;
    -w*h*log|A| otherwise."""
    penalty = -level.area * math.log(game.n_tiles)
    if not analysis.playable:
        return penalty
    measured = properties_vector(analysis, game.controls)
    if np.array_equal(measured, np.asarray(requested, dtype=np.int64)):
        return 0.0
    return penalty


def diversity_log_reward(analysis: Analysis, buffer: ReplayBuffer,
                         size: tuple[int, int], key: tuple | None) -> float:
    """log(max cluster size) - log(own cluster size); 0 when unplayable.

    Cluster statistics are read from the buffer at scoring time; the level
    counts as a member of its own cluster.
    """
    if not analysis.playable:
        return 0.0
    sizes = buffer.cluster_sizes(size)
    if not sizes:
        return 0.0
    biggest = max(sizes.values())
    own = max(sizes.get(key, 0), 1)
    return math.log(biggest) - math.log(own)


def property_log_reward(analysis: Analysis, game: GameSpec) -> float:
    """log of the game's designated property for playable levels, else 0."""
    if not analysis.playable or game.property_reward is None:
        return 0.0
    return math.log(analysis.properties[game.property_reward])


def total_log_reward(level: Level, requested: np.ndarray, analysis: Analysis,
                     buffer: ReplayBuffer, game: GameSpec,
                     use_diversity: bool = True,
                     use_property: bool = True,
                     key: tuple | None = None) -> float:
    total = log_reward(level, requested, analysis, game)
    if use_diversity:
        total += diversity_log_reward(analysis, buffer,
                                      (level.width, level.height), key)
    if use_property:
        total += property_log_reward(analysis, game)
    return total


def tb_loss(log_z0: float, sum_log_pf: float, log_r: float) -> float:
    """Scalar trajectory-balance loss: (log z0 + sum log P_f - log R)^2."""
    values = (log_z0, sum_log_pf, log_r)
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteValue(f"non-finite trajectory-balance inputs {values}")
    return (log_z0 + sum_log_pf - log_r) ** 2


def sample_conditions(buffer: ReplayBuffer, size: tuple[int, int],
                      game: GameSpec, rng: np.random.Generator,
                      diversity: bool = True) -> np.ndarray:
    """Snapped integer control request for one rollout at ``size``.

    Drawn from the size's replay buffer plus per-control noise, falling
    back to the closest populated size; uniform in normalized [0, 1] when
    every buffer is empty.
    """
    w, h = size
    specs = game.controls
    source = size if buffer.count(size) > 0 else buffer.closest_populated(size)
    values = np.zeros(len(specs), dtype=np.int64)
    if source is None:
        for i, spec in enumerate(specs):
            values[i] = spec.snap(spec.unnormalize(rng.random(), w, h), w, h)
        return values
    entry = buffer.sample(source, rng, diversity=diversity)
    for i, spec in enumerate(specs):
        noisy = entry.properties[spec.name] + rng.uniform(*spec.noise)
        values[i] = spec.snap(noisy, w, h)
    return values


def augment(level: Level, game: GameSpec, rng: np.random.Generator) -> Level:
    """Flip each allowed axis independently with probability 1/2."""
    axes = [axis for axis in ("h", "v") if axis in game.flip_axes
            and rng.random() < 0.5]
    if not axes:
        return level
    return flip_level(level, axes, game)


@dataclass
class CurriculumState:
    seed_sizes: list[tuple[int, int]]
    all_sizes: list[tuple[int, int]]
    active: set[tuple[int, int]] = field(default_factory=set)
    first_playable: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.active |= set(self.seed_sizes)

    def activate_pending(self) -> None:
        for size in self.first_playable:
            self.active.add(size)


@dataclass
class SizeStats:
    active: bool
    loss: float | None
    playable: int
    buffer: int
    clusters: int


@dataclass
class IterationStats:
    iteration: int
    loss: float
    seconds: float
    sizes: dict[tuple[int, int], SizeStats]


class Trainer:
    """Owns the policy, flow heads, replay buffer, and curriculum."""

    def __init__(self, config: RunConfig, game: GameSpec | None = None,
                 rng: np.random.Generator | None = None):
        from .games import get_game
        self.config = config
        self.game = game if game is not None else get_game(config.game)
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.store = ParamStore()
        self.policy = PolicyNet.for_game(self.game, self.rng, self.store)
        self.flows = FlowHeads(len(self.game.controls), self.rng, self.store)
        self.buffer = ReplayBuffer(self.game, config.signature_key)
        self.curriculum = CurriculumState(
            seed_sizes=list(config.seed_sizes),
            all_sizes=list(config.all_sizes),
        )
        for size in self.curriculum.active:
            self.flows.ensure(*size)
        self.iteration = 0

    def _lr(self, name: str) -> float:
        return self.config.lr_flow if name.startswith("flow/") else self.config.lr_policy

    def _normalize_requests(self, requests: np.ndarray, w: int, h: int) -> np.ndarray:
        return np.stack([
            normalize_vector(req, self.game.controls, w, h) for req in requests
        ]) if len(self.game.controls) else np.zeros((len(requests), 0))

    def run_iteration(self) -> IterationStats:
        cfg = self.config
        game = self.game
        started = time.perf_counter()
        active = set(self.curriculum.active)
        tape = Tape()

        rollouts: dict[tuple[int, int], tuple[TrajectoryBatch, np.ndarray, list[Level], list[Analysis]]] = {}
        playable_counts: dict[tuple[int, int], int] = {}
        for size in cfg.all_sizes:
            w, h = size
            requests = np.stack([
                sample_conditions(self.buffer, size, game, self.rng,
                                  diversity=cfg.diversity_sampling)
                for _ in range(cfg.batch_size)
            ]) if cfg.batch_size else np.zeros((0, len(game.controls)), dtype=np.int64)
            u = self._normalize_requests(requests, w, h)
            batch = self.policy.run(tape if size in active else None, u, w, h,
                                    rng=self.rng)
            levels = batch.levels(game.name)
            analyses = [game.analyze(level) for level in levels]
            playable = 0
            for level, analysis in zip(levels, analyses):
                if analysis.playable:
                    playable += 1
                    self.buffer.insert(level, analysis)
            playable_counts[size] = playable
            if playable and size not in self.curriculum.first_playable:
                self.curriculum.first_playable[size] = self.iteration
            rollouts[size] = (batch, requests, levels, analyses)

        loss_terms: list[Tensor] = []
        per_size_loss: dict[tuple[int, int], float] = {}
        n_items = 0
        for size in cfg.all_sizes:
            if size not in active:
                continue
            w, h = size
            self.flows.ensure(w, h)
            batch, requests, levels, analyses = rollouts[size]
            size_residuals = []

            log_r = np.zeros(batch.n)
            for i, (level, analysis) in enumerate(zip(levels, analyses)):
                key = self.buffer.key_for(level, analysis) if analysis.playable else None
                log_r[i] = total_log_reward(
                    level, requests[i], analysis, self.buffer, game,
                    use_diversity=cfg.diversity_sampling,
                    use_property=cfg.property_reward, key=key)
            z0 = self.flows.log_z0(tape, batch.u, w, h)
            resid = ad.add_const(tape, ad.add(tape, z0, batch.sum_logp), -log_r)
            sq = ad.square(tape, resid)
            loss_terms.append(ad.sum_all(tape, sq))
            size_residuals.append(sq.data)
            n_items += batch.n

            if cfg.replay_batch and self.buffer.count(size) > 0:
                entries = [self.buffer.sample(size, self.rng,
                                              diversity=cfg.diversity_sampling)
                           for _ in range(cfg.replay_batch)]
                levels_r = [augment(e.level, game, self.rng)
                            if cfg.augmentation else e.level for e in entries]
                forced = np.stack([tiles_in_scan_order(lv) for lv in levels_r])
                u_r = np.stack([e.u for e in entries])
                replay_batch = self.policy.run(tape, u_r, w, h, forced=forced)
                log_r_replay = np.zeros(len(entries))
                for i, e in enumerate(entries):
                    bonus = 0.0
                    if cfg.diversity_sampling:
                        bonus += diversity_log_reward(
                            Analysis(True, e.properties), self.buffer, size, e.key)
                    if cfg.property_reward and game.property_reward is not None:
                        bonus += math.log(e.properties[game.property_reward])
                    log_r_replay[i] = bonus
                z0_r = self.flows.log_z0(tape, u_r, w, h)
                resid_r = ad.add_const(
                    tape, ad.add(tape, z0_r, replay_batch.sum_logp), -log_r_replay)
                sq_r = ad.square(tape, resid_r)
                loss_terms.append(ad.sum_all(tape, sq_r))
                size_residuals.append(sq_r.data)
                n_items += len(entries)

            stacked = np.concatenate(size_residuals)
            per_size_loss[size] = float(stacked.mean())

        loss_value = 0.0
        if loss_terms:
            total = loss_terms[0]
            for term in loss_terms[1:]:
                total = ad.add(tape, total, term)
            loss = ad.scale(tape, total, 1.0 / n_items)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise NonFiniteValue(
                    f"non-finite loss at iteration {self.iteration}")
            grads = ad.backward(tape, loss, dict(self.store.items()))
            ad.rmsprop_step(self.store, grads, self._lr,
                            clip_norm=cfg.grad_clip_norm)

        self.curriculum.activate_pending()
        self.iteration += 1
        stats = IterationStats(
            iteration=self.iteration - 1,
            loss=loss_value,
            seconds=time.perf_counter() - started,
            sizes={
                size: SizeStats(
                    active=size in active,
                    loss=per_size_loss.get(size),
                    playable=playable_counts.get(size, 0),
                    buffer=self.buffer.count(size),
                    clusters=self.buffer.n_clusters(size),
                )
                for size in cfg.all_sizes
            },
        )
        return stats


def fit_condition_models(trainer: Trainer,
                         rng: np.random.Generator | None = None,
                         k: int = 16, iters: int = 100):
    """Fit one condition model per populated buffer size."""
    from .gmm import fit_gmm

    game = trainer.game
    if not game.controls:
        return {}
    rng = rng if rng is not None else np.random.default_rng(
        [trainer.config.seed, trainer.iteration])
    labels = tuple(c.name for c in game.controls)
    dens = tuple(c.den_label for c in game.controls)
    models = {}
    for size in trainer.buffer.sizes():
        points = np.stack([e.u for e in trainer.buffer.entries(size)])
        models[size] = fit_gmm(points, k=k, iters=iters, rng=rng,
                               labels=labels, denominators=dens, size=size)
    return models


def format_log_header(sizes: list[tuple[int, int]]) -> str:
    cols = "\t".join(f"{w}x{h}" for w, h in sizes)
    return f"# iteration\tloss\tseconds\t{cols}"


def format_log_line(stats: IterationStats, sizes: list[tuple[int, int]]) -> str:
    cells = []
    for size in sizes:
        s = stats.sizes[size]
        loss = "-" if s.loss is None else f"{s.loss:.6g}"
        cells.append(f"active={1 if s.active else 0},loss={loss},"
                     f"playable={s.playable},buffer={s.buffer},clusters={s.clusters}")
    return (f"{stats.iteration}\t{stats.loss:.6g}\t{stats.seconds:.3f}\t"
            + "\t".join(cells))


def parse_training_log(text: str) -> tuple[list[tuple[int, int]], list[dict]]:
    """Parse a training log into (sizes, one record per iteration)."""
    sizes: list[tuple[int, int]] = []
    records: list[dict] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            names = line.lstrip("# ").split("\t")[3:]
            sizes = [tuple(int(v) for v in n.split("x")) for n in names]
            continue
        fields = line.split("\t")
        record = {
            "iteration": int(fields[0]),
            "loss": float(fields[1]),
            "seconds": float(fields[2]),
            "sizes": {},
        }
        for size, cell in zip(sizes, fields[3:]):
            entries = dict(part.split("=", 1) for part in cell.split(","))
            record["sizes"][size] = {
                "active": entries["active"] == "1",
                "loss": None if entries["loss"] == "-" else float(entries["loss"]),
                "playable": int(entries["playable"]),
                "buffer": int(entries["buffer"]),
                "clusters": int(entries["clusters"]),
            }
        records.append(record)
    return sizes, records


def train_run(trainer: Trainer, iterations: int | None = None,
              out_dir=None, echo_every: int = 0,
              checkpoint_every: int | None = None):
    """Run training iterations with logging and periodic checkpoints.

    Returns the list of per-iteration stats. ``out_dir`` receives the
    resolved config, an append-only log, periodic checkpoints, the final
    checkpoint (with embedded per-size condition models), and standalone
    condition-model files.
    """
    import os

    from .checkpoint import save_checkpoint
    from .config import render_config
    from .gmm import save_gmm

    cfg = trainer.config
    total = cfg.iterations if iterations is None else iterations
    cadence = cfg.checkpoint_every if checkpoint_every is None else checkpoint_every
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            f.write(render_config(cfg))
        log_path = os.path.join(out_dir, "train_log.tsv")
        fresh = trainer.iteration == 0 or not os.path.exists(log_path)
        log_file = open(log_path, "w" if fresh else "a")
        if fresh:
            log_file.write(format_log_header(cfg.all_sizes) + "\n")

    history: list[IterationStats] = []
    try:
        while trainer.iteration < total:
            stats = trainer.run_iteration()
            history.append(stats)
            if log_file is not None:
                log_file.write(format_log_line(stats, cfg.all_sizes) + "\n")
                log_file.flush()
            if echo_every and stats.iteration % echo_every == 0:
                print(format_log_line(stats, cfg.all_sizes))
            if (out_dir is not None and cadence
                    and trainer.iteration % cadence == 0
                    and trainer.iteration < total):
                models = fit_condition_models(trainer)
                save_checkpoint(
                    os.path.join(out_dir, f"checkpoint_{trainer.iteration:07d}.ckpt"),
                    trainer, models)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        models = fit_condition_models(trainer)
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), trainer, models)
        for (w, h), model in sorted(models.items()):
            save_gmm(os.path.join(out_dir, f"gmm_{w}x{h}.gmm"), model)
    return history
