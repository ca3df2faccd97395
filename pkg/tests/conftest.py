import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from levelflow.games import Analysis, GameSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_toy_game() -> GameSpec:
    """1x2 binary-alphabet game: playable iff both cells match."""

    def analyze(level):
        ok = bool(level.cells[0, 0] == level.cells[0, 1])
        return Analysis(ok, {}, "" if ok else None, None if ok else "requirements")

    return GameSpec(
        name="toy",
        tiles=("a", "b"),
        flip_axes=frozenset(),
        controls=(),
        analyze=analyze,
        cluster_key=lambda level, analysis: (),
        property_reward=None,
    )


@pytest.fixture
def toy_game():
    return make_toy_game()
