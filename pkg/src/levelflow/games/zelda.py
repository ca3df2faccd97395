"""Zelda (dungeon fetch-quest variant): static path analysis.

Playability is decided from shortest paths only: walls and the door block
movement, everything else (empty, key, enemies) is traversable. The
player-to-key path may not cross the door; the key-to-door path ends on
the door cell. Enemies do not block each other.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .base import Analysis, Level

EMPTY, WALL, PLAYER, KEY, DOOR, BAT, SPIDER, SCORPION = range(8)
CHARS = (".", "w", "A", "+", "g", "1", "2", "3")

_STEPS = (((-1, 0), "U"), ((1, 0), "D"), ((0, -1), "L"), ((0, 1), "R"))


def _distances(passable: np.ndarray, start: tuple[int, int]):
    """4-connected BFS distances (-1 = unreachable) plus parent moves."""
    h, w = passable.shape
    dist = np.full((h, w), -1, dtype=np.int32)
    parent: dict[tuple[int, int], tuple[tuple[int, int], str]] = {}
    dist[start] = 0
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        base = dist[r, c] + 1
        for (dr, dc), ch in _STEPS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and passable[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = base
                parent[(nr, nc)] = ((r, c), ch)
                queue.append((nr, nc))
    return dist, parent


def _walk_back(parent, start, goal) -> str:
    moves = []
    node = goal
    while node != start:
        node, ch = parent[node]
        moves.append(ch)
    return "".join(reversed(moves))


def analyze_zelda(level: Level) -> Analysis:
    cells = level.cells
    h, w = cells.shape
    counts = np.bincount(cells.ravel(), minlength=8)
    players = int(counts[PLAYER])
    keys = int(counts[KEY])
    doors = int(counts[DOOR])
    enemies = int(counts[BAT] + counts[SPIDER] + counts[SCORPION])

    props: dict[str, int] = {"enemies": enemies}
    failed = (players != 1 or keys != 1 or doors != 1
              or not (1 <= enemies <= max(w, h)))

    passable = (cells != WALL) & (cells != DOOR)
    enemy_mask = (cells == BAT) | (cells == SPIDER) | (cells == SCORPION)

    solution = None
    if players == 1:
        player = tuple(int(v) for v in np.argwhere(cells == PLAYER)[0])
        dist_p, parent_p = _distances(passable, player)
        if enemies >= 1:
            enemy_dists = dist_p[enemy_mask]
            reachable = enemy_dists[enemy_dists >= 0]
            if len(reachable) > 0:
                props["nearest_enemy"] = int(reachable.min())
            if (enemy_dists < 0).any():
                failed = True
        if keys == 1 and doors == 1:
            key = tuple(int(v) for v in np.argwhere(cells == KEY)[0])
            door = tuple(int(v) for v in np.argwhere(cells == DOOR)[0])
            d1 = int(dist_p[key])
            dist_k, parent_k = _distances(passable, key)
            # Door is a terminal cell only: step onto it from a neighbour.
            d2 = -1
            via = None
            for (dr, dc), ch in _STEPS:
                nr, nc = door[0] + dr, door[1] + dc
                if 0 <= nr < h and 0 <= nc < w and dist_k[nr, nc] >= 0:
                    cand = int(dist_k[nr, nc]) + 1
                    if d2 < 0 or cand < d2:
                        d2 = cand
                        via = ((nr, nc), ch)
            if d1 >= 0 and d2 >= 0:
                props["path_length"] = d1 + d2
                (via_cell, last_step) = via
                opposite = {"U": "D", "D": "U", "L": "R", "R": "L"}[last_step]
                solution = (_walk_back(parent_p, player, key)
                            + _walk_back(parent_k, key, via_cell) + opposite)
            else:
                failed = True
    playable = not failed
    return Analysis(playable, props, solution if playable else None,
                    None if playable else "requirements")
