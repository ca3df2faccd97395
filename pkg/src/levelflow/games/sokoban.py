"""Sokoban: requirement checks, a BFS push solver, and control properties.

The solver searches (player position, crate set) states over a wall-padded
grid, counting one iteration per expanded state. Two sound prunes keep the
budgets affordable: cells from which a crate can never reach any goal, and
2x2 freeze deadlocks created by a push. Both only discard provably lost
branches, so verdicts and optimal lengths match an exhaustive search.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .base import Analysis, Level

EMPTY, WALL, PLAYER, CRATE, GOAL, CRATE_GOAL, PLAYER_GOAL = range(7)
CHARS = (" ", "#", "@", "$", ".", "*", "+")

MOVE_CHARS = "UDLR"


def default_budget(w: int, h: int) -> int:
    """Solver iteration limit by level area."""
    area = w * h
    if area <= 9:
        return 500
    if area <= 16:
        return 50_000
    if area <= 25:
        return 500_000
    return 1_000_000


@dataclass
class SolveResult:
    moves: str | None
    exhausted: bool  # budget ran out before a verdict
    iterations: int


def _masks(level: Level):
    """Wall-padded byte masks plus player positions."""
    h, w = level.cells.shape
    stride = w + 2
    size = stride * (h + 2)
    walls = bytearray([1]) * size
    goals = bytearray(size)
    crates = bytearray(size)
    players = []
    cells = level.cells
    for r in range(h):
        base = (r + 1) * stride + 1
        row = cells[r]
        for c in range(w):
            t = row[c]
            p = base + c
            if t != WALL:
                walls[p] = 0
            if t in (GOAL, CRATE_GOAL, PLAYER_GOAL):
                goals[p] = 1
            if t in (CRATE, CRATE_GOAL):
                crates[p] = 1
            if t in (PLAYER, PLAYER_GOAL):
                players.append(p)
    return walls, goals, crates, players, stride


def check_requirements(level: Level) -> str | None:
    """Static functional requirements; None when they all hold."""
    counts = np.bincount(level.cells.ravel(), minlength=7)
    players = counts[PLAYER] + counts[PLAYER_GOAL]
    crates = counts[CRATE] + counts[CRATE_GOAL]
    goals = counts[GOAL] + counts[CRATE_GOAL] + counts[PLAYER_GOAL]
    if players != 1:
        return f"expected exactly one player, found {players}"
    if crates != goals:
        return f"crate count {crates} != goal count {goals}"
    if counts[CRATE] == 0:
        return "every crate is already on a goal"
    return None


def _goal_reachable_cells(walls: bytearray, goals: bytearray, size: int,
                          dirs: tuple[int, ...]) -> bytearray:
    """Cells from which a crate could ever be pushed onto some goal
    (player reachability ignored, so this over-approximates)."""
    ok = bytearray(size)
    stack = [p for p in range(size) if goals[p]]
    for p in stack:
        ok[p] = 1
    while stack:
        q = stack.pop()
        for d in dirs:
            p = q - d
            if ok[p] or walls[p] or walls[p - d]:
                continue
            ok[p] = 1
            stack.append(p)
    return ok


def _static_freeze(walls: bytearray, goals: bytearray, crates: bytearray,
                   stride: int, size: int) -> bool:
    """Any fully blocked 2x2 square holding an off-goal crate."""
    for p in range(size - stride - 1):
        block = (p, p + 1, p + stride, p + stride + 1)
        unsafe = 0
        for q in block:
            if walls[q]:
                continue
            if not crates[q]:
                break
            if not goals[q]:
                unsafe += 1
        else:
            if unsafe:
                return True
    return False


def _push_freezes(walls: bytearray, goals: bytearray, crates, pos: int,
                  d: int, stride: int) -> bool:
    """Does a crate just pushed to ``pos`` freeze a 2x2 block off-goal?"""
    ahead = pos + d
    if not (walls[ahead] or crates[ahead]):
        return False
    unsafe0 = (0 if goals[pos] else 1)
    if crates[ahead] and not goals[ahead]:
        unsafe0 += 1
    ortho = stride if abs(d) == 1 else 1
    for per in (ortho, -ortho):
        p01 = pos + per
        if not (walls[p01] or crates[p01]):
            continue
        p11 = ahead + per
        if not (walls[p11] or crates[p11]):
            continue
        unsafe = unsafe0
        if crates[p01] and not goals[p01]:
            unsafe += 1
        if crates[p11] and not goals[p11]:
            unsafe += 1
        if unsafe:
            return True
    return False


def solve_sokoban(level: Level, iteration_limit: int | None = None) -> SolveResult:
    """Shortest solution in player moves (a push is one move), or None.

    Assumes the static requirements already hold. ``exhausted`` is True
    when the iteration limit ran out before the search reached a verdict.
    """
    walls, goals, crates, players, stride = _masks(level)
    size = len(walls)
    dirs = (-stride, stride, -1, 1)  # U, D, L, R
    goal_bytes = bytes(goals)
    if bytes(crates) == goal_bytes:
        return SolveResult("", False, 0)
    if _static_freeze(walls, goals, crates, stride, size):
        return SolveResult(None, False, 0)
    live = _goal_reachable_cells(walls, goals, size, dirs)
    if any(crates[p] and not live[p] for p in range(size)):
        return SolveResult(None, False, 0)

    start = (players[0], bytes(crates))
    visited: dict[tuple[int, bytes], tuple] = {start: (None, -1)}
    queue = deque([start])
    iterations = 0
    while queue:
        if iteration_limit is not None and iterations >= iteration_limit:
            return SolveResult(None, True, iterations)
        iterations += 1
        current = queue.popleft()
        player, cr = current
        for k, d in enumerate(dirs):
            npos = player + d
            if walls[npos]:
                continue
            if cr[npos]:
                dest = npos + d
                if walls[dest] or cr[dest] or not live[dest]:
                    continue
                nc = bytearray(cr)
                nc[npos] = 0
                nc[dest] = 1
                if _push_freezes(walls, goals, nc, dest, d, stride):
                    continue
                child = (npos, bytes(nc))
                if child in visited:
                    continue
                visited[child] = (current, k)
                if child[1] == goal_bytes:
                    moves = []
                    node = child
                    while True:
                        node, action = visited[node]
                        if action < 0:
                            return SolveResult("".join(reversed(moves)), False, iterations)
                        moves.append(MOVE_CHARS[action])
                queue.append(child)
            else:
                child = (npos, cr)
                if child in visited:
                    continue
                visited[child] = (current, k)
                queue.append(child)
    return SolveResult(None, False, iterations)


def _replay_pushes(level: Level, moves: str) -> list[tuple[int, str]]:
    """Push events as (crate id, direction); crate ids are assigned by the
    crate's initial cell in reading order."""
    walls, goals, crates, players, stride = _masks(level)
    dirs = {"U": -stride, "D": stride, "L": -1, "R": 1}
    ids = {}
    for p in range(len(crates)):
        if crates[p]:
            ids[p] = len(ids)
    player = players[0]
    events = []
    for ch in moves:
        d = dirs[ch]
        player += d
        if crates[player]:
            dest = player + d
            crates[player] = 0
            crates[dest] = 1
            cid = ids.pop(player)
            ids[dest] = cid
            events.append((cid, ch))
    return events


def pushed_crates(level: Level, moves: str) -> int:
    return len({cid for cid, _ in _replay_pushes(level, moves)})


def solution_signature(level: Level, moves: str) -> tuple:
    """Ordered push segments (crate id, direction) with consecutive pushes
    of the same crate in the same direction collapsed."""
    segments: list[tuple[int, str]] = []
    for event in _replay_pushes(level, moves):
        if not segments or segments[-1] != event:
            segments.append(event)
    return tuple(segments)


def analyze_sokoban(level: Level, budget: int | None = None) -> Analysis:
    reason = check_requirements(level)
    if reason is not None:
        return Analysis(False, {}, None, "requirements")
    if budget is None:
        budget = default_budget(level.width, level.height)
    result = solve_sokoban(level, budget)
    if not result.moves:
        return Analysis(False, {}, None, "budget" if result.exhausted else "requirements")
    props = {
        "pushed_crates": pushed_crates(level, result.moves),
        "solution_length": len(result.moves),
    }
    return Analysis(True, props, result.moves, None)
