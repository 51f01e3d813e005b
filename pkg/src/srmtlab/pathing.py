"""Single-agent shortest paths and the lazy replanning rule.

A* runs on the 4-connected grid with the Manhattan heuristic. Ties are
broken by larger g first, then by a fixed neighbor order (Up, Down, Left,
Right), which pins the returned path across runs.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from .errors import ContractError
from .maps import Cell, GridMap

# Neighbor order doubles as the A* tie-break order.
_DIRS = ((-1, 0), (1, 0), (0, -1), (0, 1))

UNREACHABLE = -1


def shortest_path(grid: GridMap, start: Cell, goal: Cell) -> list[Cell] | None:
    """Optimal 4-connected path from start to goal, inclusive of both.

    Returns None when the goal is unreachable. ``start == goal`` yields the
    single-cell path.
    """
    if not grid.is_free(start):
        raise ContractError(f"start {start} is not a free cell")
    if not grid.is_free(goal):
        raise ContractError(f"goal {goal} is not a free cell")
    if start == goal:
        return [start]

    def h(cell: Cell) -> int:
        return abs(cell[0] - goal[0]) + abs(cell[1] - goal[1])

    counter = 0
    open_heap: list[tuple[int, int, int, Cell]] = [(h(start), 0, counter, start)]
    g_score = {start: 0}
    parent: dict[Cell, Cell] = {}
    closed: set[Cell] = set()
    while open_heap:
        f, neg_g, _, current = heapq.heappop(open_heap)
        if current in closed:
            continue
        if current == goal:
            path = [current]
            while current != start:
                current = parent[current]
                path.append(current)
            path.reverse()
            return path
        closed.add(current)
        g = -neg_g
        for dr, dc in _DIRS:
            nxt = (current[0] + dr, current[1] + dc)
            if not grid.is_free(nxt) or nxt in closed:
                continue
            tentative = g + 1
            if tentative < g_score.get(nxt, 1 << 30):
                g_score[nxt] = tentative
                parent[nxt] = current
                counter += 1
                heapq.heappush(open_heap, (tentative + h(nxt), -tentative, counter, nxt))
    return None


def bfs_distances(grid: GridMap, goal: Cell) -> np.ndarray:
    """Exact move counts from every cell to ``goal``; UNREACHABLE elsewhere."""
    if not grid.is_free(goal):
        raise ContractError(f"goal {goal} is not a free cell")
    dist = np.full((grid.height, grid.width), UNREACHABLE, dtype=np.int32)
    dist[goal] = 0
    queue = deque([goal])
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1
        for dr, dc in _DIRS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < grid.height and 0 <= nc < grid.width \
                    and not grid.obstacles[nr, nc] and dist[nr, nc] == UNREACHABLE:
                dist[nr, nc] = d
                queue.append((nr, nc))
    return dist


def replan_if_needed(position: Cell, goal: Cell, planned_path: list[Cell],
                     grid: GridMap) -> tuple[list[Cell], bool]:
    """Keep the stored path coherent with the agent's position and goal.

    Drops the consumed prefix when the agent advanced along the path; runs a
    fresh search when the agent left the path or the goal changed. Returns
    (path, reachable). An unreachable goal yields an empty path with
    reachable=False.
    """
    if planned_path and planned_path[-1] == goal:
        if planned_path[0] == position:
            return planned_path, True
        if len(planned_path) > 1 and planned_path[1] == position:
            return planned_path[1:], True
    fresh = shortest_path(grid, position, goal)
    if fresh is None:
        return [], False
    return fresh, True
