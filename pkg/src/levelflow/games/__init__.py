"""Game definitions: tilesets, controls, analyzers, cluster keys."""
from __future__ import annotations

from . import dave, sokoban, zelda
from .base import (
    Analysis,
    ControlSpec,
    GameSpec,
    Level,
    flip_level,
    game_names,
    get_game,
    measure_controls,
    normalize_vector,
    parse_level,
    properties_vector,
    register_game,
    render_level,
    snap_vector,
)

__all__ = [
    "Analysis", "ControlSpec", "GameSpec", "Level",
    "flip_level", "game_names", "get_game", "measure_controls",
    "normalize_vector", "parse_level", "properties_vector",
    "register_game", "render_level", "snap_vector",
    "sokoban", "zelda", "dave",
]


def _sokoban_cluster_key(level: Level, analysis: Analysis) -> tuple:
    w, h = level.width, level.height
    p = analysis.properties
    return (p["pushed_crates"], p["solution_length"] // (w + h))


def _zelda_cluster_key(level: Level, analysis: Analysis) -> tuple:
    g = (level.width + level.height) // 2
    p = analysis.properties
    return (p["nearest_enemy"] // g, p["path_length"] // g)


def _dave_cluster_key(level: Level, analysis: Analysis) -> tuple:
    g = (level.width + level.height) // 2
    p = analysis.properties
    return (p["jumps"], p["solution_length"] // g)


register_game(GameSpec(
    name="sokoban",
    tiles=sokoban.CHARS,
    flip_axes=frozenset({"h", "v"}),
    controls=(
        ControlSpec(
            name="pushed_crates",
            den=lambda w, h: (w + h) / 2,
            den_label="(w+h)/2",
            noise=(-1.0, 1.0),
            bounds=lambda w, h: (1, w * h - 2),
            test_values=lambda w, h: range(1, 11),
            n_test=1000,
            tolerance=2,
        ),
        ControlSpec(
            name="solution_length",
            den=lambda w, h: w * h,
            den_label="w*h",
            noise=(-5.0, 10.0),
            bounds=lambda w, h: (1, None),
            test_values=lambda w, h: range(1, 101),
            n_test=100,
            tolerance=10,
        ),
    ),
    analyze=sokoban.analyze_sokoban,
    cluster_key=_sokoban_cluster_key,
    property_reward="solution_length",
    signature=sokoban.solution_signature,
    primary_length="solution_length",
))

register_game(GameSpec(
    name="zelda",
    tiles=zelda.CHARS,
    flip_axes=frozenset({"h", "v"}),
    controls=(
        ControlSpec(
            name="nearest_enemy",
            den=lambda w, h: w * h,
            den_label="w*h",
            noise=(-2.0, 5.0),
            bounds=lambda w, h: (1, None),
            test_values=lambda w, h: range(1, w * h // 2 + 1),
            n_test=100,
            tolerance=10,
        ),
        ControlSpec(
            name="path_length",
            den=lambda w, h: w * h,
            den_label="w*h",
            noise=(-5.0, 10.0),
            bounds=lambda w, h: (2, None),
            test_values=lambda w, h: range(2, w * h + 1),
            n_test=100,
            tolerance=10,
        ),
        ControlSpec(
            name="enemies",
            den=lambda w, h: w * h,
            den_label="w*h",
            noise=(-1.0, 2.0),
            bounds=lambda w, h: (1, max(w, h)),
            test_values=lambda w, h: range(1, max(w, h) + 1),
            n_test=1000,
            tolerance=2,
        ),
    ),
    analyze=zelda.analyze_zelda,
    cluster_key=_zelda_cluster_key,
    property_reward="path_length",
    primary_length="path_length",
))

register_game(GameSpec(
    name="dave",
    tiles=dave.CHARS,
    flip_axes=frozenset({"h"}),
    controls=(
        ControlSpec(
            name="solution_length",
            den=lambda w, h: w * h,
            den_label="w*h",
            noise=(-5.0, 10.0),
            bounds=lambda w, h: (2, None),
            test_values=lambda w, h: range(2, w * h + 1),
            n_test=100,
            tolerance=10,
        ),
        ControlSpec(
            name="jumps",
            den=lambda w, h: max(w, h),
            den_label="max(w,h)",
            noise=(-1.0, 2.0),
            bounds=lambda w, h: (0, None),
            test_values=lambda w, h: range(1, w * h // 4 + 1),
            n_test=100,
            tolerance=2,
        ),
        ControlSpec(
            name="spikes",
            den=lambda w, h: w * h,
            den_label="w*h",
            noise=(-1.0, 1.0),
            bounds=lambda w, h: (0, (w - 1) * (h // 2) - 1),
            test_values=lambda w, h: range(1, max(w, h) + 1),
            n_test=1000,
            tolerance=2,
        ),
    ),
    analyze=dave.analyze_dave,
    cluster_key=_dave_cluster_key,
    property_reward=None,
    primary_length="solution_length",
))
