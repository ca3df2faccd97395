"""Danger Dave: deterministic side-view physics and an optimal-plan solver.

Turn-based model over states (x, y, remaining rise, has key). Actions are
Left, Right, Jump, Wait. A jump is valid only while supported (wall below
or bottom row) and rises one cell per turn for two turns unless a ceiling
ends it; otherwise gravity pulls one cell per turn, with horizontal moves
allowed while airborne. Entering a spike kills, the key is collected on
entry, and the door wins only with the key. The solver minimizes
(move count, jump count) lexicographically.
"""
from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from .base import Analysis, Level

EMPTY, WALL, PLAYER, KEY, DOOR, DIAMOND, SPIKE = range(7)
CHARS = (".", "#", "A", "+", "g", "$", "^")

ACTIONS = "LRJW"


def _supported(cells: np.ndarray, x: int, y: int) -> bool:
    h = cells.shape[0]
    return y == h - 1 or cells[y + 1, x] == WALL


def _move(cells: np.ndarray, x: int, y: int, rise: int, action: str):
    """One physics turn; returns (nx, ny, nrise) or None for an invalid action."""
    h, w = cells.shape
    if action == "J":
        if not _supported(cells, x, y):
            return None
        rise = 2
    if rise > 0:
        if y - 1 >= 0 and cells[y - 1, x] != WALL:
            ny = y - 1
            rise -= 1
        else:
            ny = y
            rise = 0
    elif not _supported(cells, x, y):
        ny = y + 1
    else:
        ny = y
    dx = -1 if action == "L" else (1 if action == "R" else 0)
    nx = x + dx
    if dx and not (0 <= nx < w and cells[ny, nx] != WALL):
        nx = x
    return nx, ny, rise


def _reachable_cells(cells: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Cells the player can ever enter alive (key/door ignored)."""
    h, w = cells.shape
    seen_states = set()
    seen = np.zeros((h, w), dtype=bool)
    x0, y0 = start
    seen[y0, x0] = True
    queue = deque([(x0, y0, 0)])
    seen_states.add((x0, y0, 0))
    while queue:
        x, y, rise = queue.popleft()
        for action in ACTIONS:
            nxt = _move(cells, x, y, rise, action)
            if nxt is None:
                continue
            nx, ny, nrise = nxt
            if cells[ny, nx] == SPIKE:
                continue
            state = (nx, ny, nrise)
            if state in seen_states:
                continue
            seen_states.add(state)
            seen[ny, nx] = True
            queue.append(state)
    return seen


def solve_dave(level: Level, iteration_limit: int = 1_000_000):
    """Optimal (moves, jumps) plan to grab the key then reach the door.

    Returns (moves string, exhausted flag); moves is None when unsolved.
    """
    cells = level.cells
    player = np.argwhere(cells == PLAYER)
    key = np.argwhere(cells == KEY)
    door = np.argwhere(cells == DOOR)
    if len(player) != 1 or len(key) != 1 or len(door) != 1:
        return None, False
    x0, y0 = int(player[0][1]), int(player[0][0])
    start = (x0, y0, 0, False)
    win = ("WIN",)
    best: dict[tuple, tuple[int, int]] = {start: (0, 0)}
    parent: dict[tuple, tuple[tuple, str]] = {}
    counter = 0
    heap = [(0, 0, counter, start)]
    iterations = 0
    while heap:
        steps, jumps, _, state = heapq.heappop(heap)
        if best.get(state, (steps, jumps)) < (steps, jumps):
            continue
        if state == win:
            moves = []
            node = state
            while node in parent:
                node, ch = parent[node]
                moves.append(ch)
            return "".join(reversed(moves)), False
        iterations += 1
        if iterations > iteration_limit:
            return None, True
        x, y, rise, has_key = state
        for action in ACTIONS:
            nxt = _move(cells, x, y, rise, action)
            if nxt is None:
                continue
            nx, ny, nrise = nxt
            tile = cells[ny, nx]
            if tile == SPIKE:
                continue
            nkey = has_key or tile == KEY
            cost = (steps + 1, jumps + (1 if action == "J" else 0))
            child = win if (tile == DOOR and nkey) else (nx, ny, nrise, nkey)
            if child in best and best[child] <= cost:
                continue
            best[child] = cost
            parent[child] = (state, action)
            counter += 1
            heapq.heappush(heap, (cost[0], cost[1], counter, child))
    return None, False


def check_requirements(level: Level) -> str | None:
    cells = level.cells
    h, w = cells.shape
    counts = np.bincount(cells.ravel(), minlength=7)
    if counts[PLAYER] != 1:
        return f"expected exactly one player, found {int(counts[PLAYER])}"
    if counts[KEY] != 1:
        return f"expected exactly one key, found {int(counts[KEY])}"
    if counts[DOOR] != 1:
        return f"expected exactly one door, found {int(counts[DOOR])}"
    py, px = (int(v) for v in np.argwhere(cells == PLAYER)[0])
    if not _supported(cells, px, py):
        return "player does not start on solid ground"
    if counts[SPIKE] >= (w - 1) * (h // 2):
        return f"too many spikes ({int(counts[SPIKE])})"
    if not (1 <= counts[DIAMOND] <= max(w, h)):
        return f"diamond count {int(counts[DIAMOND])} out of range"
    reachable = _reachable_cells(cells, (px, py))
    if not reachable[cells == DIAMOND].all():
        return "some diamond is unreachable"
    return None


def analyze_dave(level: Level, iteration_limit: int = 1_000_000) -> Analysis:
    props = {"spikes": int((level.cells == SPIKE).sum())}
    reason = check_requirements(level)
    if reason is not None:
        return Analysis(False, props, None, "requirements")
    moves, exhausted = solve_dave(level, iteration_limit)
    if moves is None:
        return Analysis(False, props, None, "budget" if exhausted else "requirements")
    props["solution_length"] = len(moves)
    props["jumps"] = moves.count("J")
    return Analysis(True, props, moves, None)
