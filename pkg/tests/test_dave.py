import numpy as np

from levelflow.games import flip_level, get_game, parse_level
from levelflow.games.dave import analyze_dave, solve_dave

from oracles import random_playable_levels

GAME = get_game("dave")


def lv(text):
    return parse_level(text, GAME)


def test_flat_run_level():
    analysis = analyze_dave(lv(".....\nA+.$g\n#####"))
    assert analysis.playable
    assert analysis.properties == {"spikes": 0, "solution_length": 4, "jumps": 0}
    assert analysis.solution == "RRRR"


def test_floating_player_unplayable():
    analysis = analyze_dave(lv(".A...\n.....\n.+#$g"))
    assert not analysis.playable
    assert analysis.reason == "requirements"


def test_player_on_bottom_row_is_grounded():
    analysis = analyze_dave(lv(".....\nA+.$g"))
    assert analysis.playable


def test_zero_diamonds_unplayable():
    analysis = analyze_dave(lv(".....\nA+..g\n#####"))
    assert not analysis.playable


def test_jump_over_wall():
    # Frozen hand trace: R (key), J, then three rights gliding over the
    # wall and down onto the door.
    analysis = analyze_dave(lv(".....\n.....\nA+#$g"))
    assert analysis.playable
    assert analysis.properties == {"spikes": 0, "solution_length": 5, "jumps": 1}
    assert analysis.solution == "RJRRR"


def test_spike_blocks_and_kills():
    # Spikes fencing the door off make the level unsolvable.
    analysis = analyze_dave(lv("....^g\n....#^\nA+$.##"))
    assert not analysis.playable


def test_spike_count_requirement():
    # (w-1) * floor(h/2) = 4: four spikes is already too many on 5x3.
    level = lv("^^^^.\n.....\nA+$.g")
    assert not analyze_dave(level).playable
    assert analyze_dave(level).properties["spikes"] == 4


def test_diamond_count_limit():
    # 6 diamonds on a 5x3 grid exceeds max(w, h) = 5.
    analysis = analyze_dave(lv("$$$$$\n$....\nA+..g"))
    assert not analysis.playable


def test_unreachable_diamond():
    # Diamond sealed in a wall pocket can never be collected.
    analysis = analyze_dave(lv("##$##\n#####\nA+..g"))
    assert not analysis.playable


def test_one_way_diamond_is_fine():
    # The diamond sits in a pit: the player can fall in (one-way) even if
    # climbing back out is impossible.
    analysis = analyze_dave(lv("A+..g\n####.\n...#$\n...##"))
    assert analysis.playable


def test_gravity_pulls_player_down():
    moves, exhausted = solve_dave(lv("A....\n.....\n.+..g"))
    assert moves is not None
    # Player falls while collecting the key then walking to the door.
    analysis = analyze_dave(lv("A....\n.....\n.+..g"))
    assert not analysis.playable  # start is floating -> requirement fails


def test_flip_horizontal_preserves_properties(rng):
    samples = random_playable_levels(GAME, 5, 4, rng, 100)
    for level, analysis in samples:
        flipped_analysis = analyze_dave(flip_level(level, "h"))
        assert flipped_analysis.playable
        assert flipped_analysis.properties == analysis.properties


def test_jump_tiebreak_prefers_fewer_jumps():
    # Two same-length routes exist; the solver must report the jumpless one.
    level = lv(".....\nA+$.g")
    analysis = analyze_dave(level)
    assert analysis.playable
    assert analysis.properties["jumps"] == 0


def test_analysis_is_pure(rng):
    from levelflow.games import Level
    cells = rng.integers(0, 7, size=(3, 5), dtype=np.uint8)
    level = Level("dave", cells)
    assert analyze_dave(level) == analyze_dave(level)
