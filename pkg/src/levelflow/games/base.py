"""Level representation, per-game metadata, and shared measurement helpers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from ..errors import LevelFlowError, LevelParseError, MissingPropertyError


@dataclass(frozen=True)
class Level:
    """A rectangular grid of tile ids belonging to one game."""

    game: str
    cells: np.ndarray  # (h, w) uint8, treated as immutable

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise LevelFlowError(f"level grid must be 2-D and non-empty, got {cells.shape}")
        object.__setattr__(self, "cells", cells)

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def area(self) -> int:
        return self.width * self.height

    def grid_key(self) -> bytes:
        """Exact-grid identity used for dedup."""
        return self.cells.shape[1].to_bytes(2, "little") + self.cells.tobytes()

    def __eq__(self, other) -> bool:
        return (isinstance(other, Level) and self.game == other.game
                and self.cells.shape == other.cells.shape
                and bool(np.array_equal(self.cells, other.cells)))

    def __hash__(self) -> int:
        return hash((self.game, self.grid_key()))


@dataclass
class Analysis:
    """Outcome of checking one level: verdict, measured properties, solution.

    Properties are included whenever they are computable, even for
    unplayable levels; missing keys mean "not computable here".
    ``reason`` is "requirements" or "budget" for unplayable levels.
    """

    playable: bool
    properties: dict[str, int] = field(default_factory=dict)
    solution: str | None = None
    reason: str | None = None


@dataclass(frozen=True)
class ControlSpec:
    """One controllable level property and all its size-dependent rules."""

    name: str
    den: Callable[[int, int], float]
    den_label: str
    noise: tuple[float, float]
    bounds: Callable[[int, int], tuple[float, float | None]]
    test_values: Callable[[int, int], range]
    n_test: int
    tolerance: float

    def snap(self, value: float, w: int, h: int) -> int:
        """Round half-up to an integer, then clamp to the size's bounds."""
        lo, hi = self.bounds(w, h)
        v = int(np.floor(value + 0.5))
        v = max(v, int(lo))
        if hi is not None:
            v = min(v, int(hi))
        return v

    def normalize(self, value: float, w: int, h: int) -> float:
        return float(value) / self.den(w, h)

    def unnormalize(self, value: float, w: int, h: int) -> float:
        return float(value) * self.den(w, h)


@dataclass(frozen=True)
class GameSpec:
    """Everything the trainer and evaluator need to know about one game."""

    name: str
    tiles: tuple[str, ...]  # tile id -> display character
    flip_axes: frozenset[str]  # subset of {"h", "v"}
    controls: tuple[ControlSpec, ...]
    analyze: Callable[[Level], Analysis]
    cluster_key: Callable[[Level, Analysis], tuple]
    property_reward: str | None = None  # property whose log is the reward term
    signature: Callable[[Level, str], tuple] | None = None
    primary_length: str | None = None  # property used for length statistics

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    def control(self, name: str) -> ControlSpec:
        for spec in self.controls:
            if spec.name == name:
                return spec
        raise KeyError(f"game {self.name!r} has no control named {name!r}")

    def char_to_tile(self) -> dict[str, int]:
        return {ch: i for i, ch in enumerate(self.tiles)}


_REGISTRY: dict[str, GameSpec] = {}


def register_game(spec: GameSpec) -> GameSpec:
    if len(set(spec.tiles)) != len(spec.tiles):
        raise LevelFlowError(f"game {spec.name!r} has duplicate tile characters")
    _REGISTRY[spec.name] = spec
    return spec


def get_game(name: str) -> GameSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown game {name!r}; known: {sorted(_REGISTRY)}") from None


def game_names() -> list[str]:
    return sorted(_REGISTRY)


def parse_level(text: str, game: GameSpec | str) -> Level:
    """Parse the one-character-per-cell text format. Inverse of render_level."""
    spec = get_game(game) if isinstance(game, str) else game
    rows = text.rstrip("\n").split("\n")
    if not rows or not rows[0]:
        raise LevelParseError("empty level text")
    width = len(rows[0])
    charmap = spec.char_to_tile()
    cells = np.zeros((len(rows), width), dtype=np.uint8)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise LevelParseError(
                f"ragged rows: row {r} has {len(row)} columns, expected {width}")
        for c, ch in enumerate(row):
            tile = charmap.get(ch)
            if tile is None:
                raise LevelParseError(
                    f"unknown character {ch!r} for game {spec.name!r} at row {r}, col {c}")
            cells[r, c] = tile
    return Level(spec.name, cells)


def render_level(level: Level, game: GameSpec | None = None) -> str:
    spec = game if game is not None else get_game(level.game)
    return "\n".join("".join(spec.tiles[t] for t in row) for row in level.cells)


def flip_level(level: Level, axes: Iterable[str], game: GameSpec | None = None) -> Level:
    """Mirror the grid along the given axes ('h' = left-right, 'v' = up-down)."""
    spec = game if game is not None else get_game(level.game)
    cells = level.cells
    for axis in axes:
        if axis not in spec.flip_axes:
            raise LevelFlowError(
                f"game {spec.name!r} does not allow flipping along {axis!r}")
        cells = cells[:, ::-1] if axis == "h" else cells[::-1, :]
    return Level(level.game, np.ascontiguousarray(cells))


def measure_controls(level: Level, analysis: Analysis,
                     specs: Iterable[ControlSpec]) -> np.ndarray:
    """Normalized control vector: each property divided by its denominator."""
    w, h = level.width, level.height
    values = []
    for spec in specs:
        if spec.name not in analysis.properties:
            raise MissingPropertyError(
                f"analysis of {level.game} level lacks property {spec.name!r}")
        values.append(analysis.properties[spec.name] / spec.den(w, h))
    return np.array(values, dtype=np.float64)


def properties_vector(analysis: Analysis, specs: Iterable[ControlSpec]) -> np.ndarray:
    """Raw property values in control order (int64)."""
    out = []
    for spec in specs:
        if spec.name not in analysis.properties:
            raise MissingPropertyError(f"analysis lacks property {spec.name!r}")
        out.append(analysis.properties[spec.name])
    return np.array(out, dtype=np.int64)


def snap_vector(values: Mapping[str, float] | np.ndarray,
                specs: tuple[ControlSpec, ...], w: int, h: int) -> np.ndarray:
    """Snap one value per control to valid integers for the given size."""
    out = np.zeros(len(specs), dtype=np.int64)
    for i, spec in enumerate(specs):
        raw = values[spec.name] if isinstance(values, Mapping) else values[i]
        out[i] = spec.snap(float(raw), w, h)
    return out


def normalize_vector(values: np.ndarray, specs: tuple[ControlSpec, ...],
                     w: int, h: int) -> np.ndarray:
    return np.array([spec.normalize(v, w, h) for spec, v in zip(specs, values)],
                    dtype=np.float64)
