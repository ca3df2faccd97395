"""Recurrent auto-regressive tile policy and per-size source-flow heads.

One network handles every level size: the grid is generated tile by tile
along a row-wise snake scan, conditioned on an embedding of the requested
controls and size. Rollout and teacher forcing are one code path (a batch
of forced tile sequences reproduces the sampled log-probabilities
exactly).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor
from .errors import MissingFlowHead
from .games import GameSpec, Level

HIDDEN = 128
EMBED_HIDDEN = 16
EMBED_OUT = 32
ACTION_HIDDEN = 32
FLOW_HIDDEN = 32
SIZE_SCALE = 0.1


def scan_order(w: int, h: int) -> list[tuple[int, int]]:
    """Row-wise snake order: row 0 left-to-right, row 1 reversed, ..."""
    order: list[tuple[int, int]] = []
    for r in range(h):
        cols = range(w) if r % 2 == 0 else range(w - 1, -1, -1)
        order.extend((r, c) for c in cols)
    return order


def row_change_flags(w: int, h: int) -> np.ndarray:
    """Flag per step: 1.0 when this step starts a new row (never step 0)."""
    flags = np.zeros(w * h, dtype=np.float64)
    flags[w::w] = 1.0
    return flags


def step_input_vector(embedding: np.ndarray, prev_tile: int | None,
                      row_changed: bool, n_tiles: int) -> np.ndarray:
    """[embedding | one-hot prev tile (extra slot = start token) | flag]."""
    one_hot = np.zeros(n_tiles + 1, dtype=np.float64)
    one_hot[n_tiles if prev_tile is None else prev_tile] = 1.0
    return np.concatenate([embedding, one_hot, [1.0 if row_changed else 0.0]])


def tiles_in_scan_order(level: Level) -> np.ndarray:
    order = scan_order(level.width, level.height)
    return np.array([level.cells[r, c] for r, c in order], dtype=np.int64)


def level_from_tiles(tiles: np.ndarray, w: int, h: int, game: str) -> Level:
    cells = np.zeros((h, w), dtype=np.uint8)
    for (r, c), t in zip(scan_order(w, h), tiles):
        cells[r, c] = t
    return Level(game, cells)


def _size_features(u: np.ndarray, w: int, h: int) -> np.ndarray:
    """[u | w*0.1 | h*0.1] rows for a (B, d) condition matrix."""
    b = u.shape[0]
    sizes = np.empty((b, 2), dtype=np.float64)
    sizes[:, 0] = w * SIZE_SCALE
    sizes[:, 1] = h * SIZE_SCALE
    return np.concatenate([u, sizes], axis=1)


@dataclass
class TrajectoryBatch:
    """A batch of same-size trajectories with their accumulated log P_f."""

    w: int
    h: int
    u: np.ndarray            # (B, d) normalized conditions
    tiles: np.ndarray        # (B, w*h) int64 in scan order
    step_logp: np.ndarray    # (B, w*h) chosen log-probabilities
    sum_logp: Tensor         # (B,) tensor, differentiable when taped

    @property
    def n(self) -> int:
        return int(self.tiles.shape[0])

    def level(self, i: int, game: str) -> Level:
        return level_from_tiles(self.tiles[i], self.w, self.h, game)

    def levels(self, game: str) -> list[Level]:
        return [self.level(i, game) for i in range(self.n)]


@dataclass
class Trajectory:
    """A single sampled trajectory (unbatched view)."""

    w: int
    h: int
    u: np.ndarray
    tiles: np.ndarray        # (w*h,)
    step_logp: np.ndarray    # (w*h,)
    sum_logp: float

    def level(self, game: str) -> Level:
        return level_from_tiles(self.tiles, self.w, self.h, game)


class PolicyNet:
    """Conditional embedding -> two stacked GRU cells -> action head.

    The action head's last layer starts at exactly zero, so a fresh
    network emits a uniform tile distribution at every step.
    """

    def __init__(self, n_controls: int, n_tiles: int,
                 rng: np.random.Generator, store: ParamStore | None = None):
        self.n_controls = n_controls
        self.n_tiles = n_tiles
        self.store = store if store is not None else ParamStore()
        self.step_dim = EMBED_OUT + n_tiles + 1 + 1
        d_in = n_controls + 2

        def make(name, shape, fan_in):
            return self.store.create(name, ad.uniform_init(rng, shape, fan_in))

        def zeros(name, shape):
            return self.store.create(name, np.zeros(shape))

        self.embed_w0 = make("policy/embed/w0", (d_in, EMBED_HIDDEN), d_in)
        self.embed_b0 = zeros("policy/embed/b0", (EMBED_HIDDEN,))
        self.embed_w1 = make("policy/embed/w1", (EMBED_HIDDEN, EMBED_OUT), EMBED_HIDDEN)
        self.embed_b1 = zeros("policy/embed/b1", (EMBED_OUT,))

        self.gru = []
        for i, in_dim in enumerate((self.step_dim, self.step_dim + HIDDEN)):
            fan = in_dim + HIDDEN
            cell = {
                "wz": make(f"policy/gru{i + 1}/wz", (fan, HIDDEN), fan),
                "bz": zeros(f"policy/gru{i + 1}/bz", (HIDDEN,)),
                "wr": make(f"policy/gru{i + 1}/wr", (fan, HIDDEN), fan),
                "br": zeros(f"policy/gru{i + 1}/br", (HIDDEN,)),
                "wh": make(f"policy/gru{i + 1}/wh", (fan, HIDDEN), fan),
                "bh": zeros(f"policy/gru{i + 1}/bh", (HIDDEN,)),
            }
            self.gru.append(cell)

        act_in = self.step_dim + 2 * HIDDEN
        self.act_w0 = make("policy/action/w0", (act_in, ACTION_HIDDEN), act_in)
        self.act_b0 = zeros("policy/action/b0", (ACTION_HIDDEN,))
        self.act_w1 = zeros("policy/action/w1", (ACTION_HIDDEN, n_tiles))
        self.act_b1 = zeros("policy/action/b1", (n_tiles,))

    @classmethod
    def for_game(cls, game: GameSpec, rng: np.random.Generator,
                 store: ParamStore | None = None) -> "PolicyNet":
        return cls(len(game.controls), game.n_tiles, rng, store)

    def embed_conditions(self, tape: Tape | None, u, w: int, h: int) -> Tensor:
        """Condition embedding, computed once per trajectory."""
        if isinstance(u, Tensor):
            b = u.data.shape[0]
            sizes = np.full((b, 2), (w * SIZE_SCALE, h * SIZE_SCALE))
            x = ad.concat(tape, [u, Tensor(sizes)])
        else:
            x = Tensor(_size_features(np.asarray(u, dtype=np.float64), w, h))
        hid = ad.ff_forward(tape, x, self.embed_w0, self.embed_b0, "leaky_relu")
        return ad.ff_forward(tape, hid, self.embed_w1, self.embed_b1, "identity")

    def _gru_step(self, tape: Tape | None, i: int, x: Tensor, h: Tensor) -> Tensor:
        c = self.gru[i]
        return ad.gru_forward(tape, x, h, c["wz"], c["bz"], c["wr"], c["br"],
                              c["wh"], c["bh"])

    def run(self, tape: Tape | None, u: np.ndarray, w: int, h: int,
            rng: np.random.Generator | None = None,
            forced: np.ndarray | None = None) -> TrajectoryBatch:
        """Roll out (or teacher-force) a batch of trajectories at one size.

        ``forced`` is a (B, w*h) tile matrix; when given, no sampling
        happens and ``rng`` is unused. The returned ``sum_logp`` carries
        gradients when a tape is supplied.
        """
        u = np.asarray(u, dtype=np.float64)
        if u.ndim != 2:
            raise ValueError(f"conditions must be (batch, {self.n_controls}), got {u.shape}")
        batch = u.shape[0]
        steps = w * h
        if forced is None and rng is None:
            raise ValueError("rollout sampling needs an rng")

        emb = self.embed_conditions(tape, u, w, h)
        flags = row_change_flags(w, h)
        h1 = Tensor(np.zeros((batch, HIDDEN)))
        h2 = Tensor(np.zeros((batch, HIDDEN)))
        one_hot = np.zeros((batch, self.n_tiles + 1), dtype=np.float64)
        one_hot[:, self.n_tiles] = 1.0  # start token

        tiles = np.zeros((batch, steps), dtype=np.int64)
        step_logp = np.zeros((batch, steps), dtype=np.float64)
        sum_logp: Tensor | None = None
        rows = np.arange(batch)

        for i in range(steps):
            flag = np.full((batch, 1), flags[i])
            x = ad.concat(tape, [emb, Tensor(one_hot), Tensor(flag)])
            h1 = self._gru_step(tape, 0, x, h1)
            h2 = self._gru_step(tape, 1, ad.concat(tape, [x, h1]), h2)
            act_in = ad.concat(tape, [x, h1, h2])
            hid = ad.ff_forward(tape, act_in, self.act_w0, self.act_b0, "leaky_relu")
            logp = ad.ff_forward(tape, hid, self.act_w1, self.act_b1, "log_softmax")

            if forced is not None:
                chosen = np.asarray(forced[:, i], dtype=np.int64)
            else:
                probs = np.exp(logp.data)
                cum = np.cumsum(probs, axis=1)
                draws = rng.random(batch) * cum[:, -1]
                chosen = np.minimum(
                    (cum < draws[:, None]).sum(axis=1), self.n_tiles - 1)
            picked = ad.pick(tape, logp, chosen)
            sum_logp = picked if sum_logp is None else ad.add(tape, sum_logp, picked)
            tiles[:, i] = chosen
            step_logp[:, i] = picked.data
            one_hot = np.zeros((batch, self.n_tiles + 1), dtype=np.float64)
            one_hot[rows, chosen] = 1.0

        return TrajectoryBatch(w, h, u, tiles, step_logp, sum_logp)

    def rollout(self, u: np.ndarray, w: int, h: int, rng: np.random.Generator,
                tape: Tape | None = None) -> Trajectory:
        """Sample a single trajectory."""
        batch = self.run(tape, np.asarray(u, dtype=np.float64).reshape(1, -1),
                         w, h, rng=rng)
        return Trajectory(w, h, batch.u[0], batch.tiles[0], batch.step_logp[0],
                          float(batch.sum_logp.data[0]))

    def teacher_force(self, level: Level, u: np.ndarray,
                      tape: Tape | None = None) -> Tensor:
        """Total log P_f of an existing level under the current policy."""
        forced = tiles_in_scan_order(level).reshape(1, -1)
        batch = self.run(tape, np.asarray(u, dtype=np.float64).reshape(1, -1),
                         level.width, level.height, forced=forced)
        return batch.sum_logp


class FlowHeads:
    """One tiny zero-initialized head per trained size; output is log z0."""

    def __init__(self, n_controls: int, rng: np.random.Generator,
                 store: ParamStore | None = None):
        self.n_controls = n_controls
        self.store = store if store is not None else ParamStore()
        self._rng = rng
        self._heads: dict[tuple[int, int], dict[str, Tensor]] = {}

    def sizes(self) -> list[tuple[int, int]]:
        return sorted(self._heads)

    def has(self, w: int, h: int) -> bool:
        return (w, h) in self._heads

    def ensure(self, w: int, h: int) -> None:
        if self.has(w, h):
            return
        d_in = self.n_controls + 2
        prefix = f"flow/{w}x{h}"
        self._heads[(w, h)] = {
            "w0": self.store.create(f"{prefix}/w0",
                                    ad.uniform_init(self._rng, (d_in, FLOW_HIDDEN), d_in)),
            "b0": self.store.create(f"{prefix}/b0", np.zeros(FLOW_HIDDEN)),
            "w1": self.store.create(f"{prefix}/w1", np.zeros((FLOW_HIDDEN, 1))),
            "b1": self.store.create(f"{prefix}/b1", np.zeros(1)),
        }

    def log_z0(self, tape: Tape | None, u: np.ndarray, w: int, h: int) -> Tensor:
        """log z0 for a (B, d) condition batch at one size (training only)."""
        head = self._heads.get((w, h))
        if head is None:
            raise MissingFlowHead(f"no source-flow head for size {w}x{h}")
        u = np.asarray(u, dtype=np.float64)
        x = Tensor(_size_features(u, w, h))
        hid = ad.ff_forward(tape, x, head["w0"], head["b0"], "leaky_relu")
        out = ad.ff_forward(tape, hid, head["w1"], head["b1"], "identity")
        return ad.reshape(tape, out, (u.shape[0],))
