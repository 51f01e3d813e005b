"""Map construction: bottleneck rooms, random grids, mazes, MovingAI I/O."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MapParseError

Cell = tuple[int, int]

_FREE_CHARS = {".", "G"}
_BLOCKED_CHARS = {"@", "O", "T"}


class GridMap:
    """Static obstacle grid. Out-of-bounds cells count as obstacles."""

    def __init__(self, obstacles: np.ndarray, name: str = ""):
        arr = np.asarray(obstacles, dtype=bool)
        if arr.ndim != 2:
            raise ConfigError("obstacle grid must be 2-D")
        if arr.all():
            raise ConfigError("map has no free cell")
        self.obstacles = arr
        self.height, self.width = arr.shape
        self.name = name
        self._key = None

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.obstacles[cell]

    def free_cells(self) -> list[Cell]:
        rr, cc = np.nonzero(~self.obstacles)
        return list(zip(rr.tolist(), cc.tolist()))

    def key(self):
        """Hashable identity used by distance-field caches."""
        if self._key is None:
            self._key = (self.height, self.width, self.obstacles.tobytes())
        return self._key

    def __eq__(self, other):
        return isinstance(other, GridMap) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"GridMap({self.height}x{self.width}, {int(self.obstacles.sum())} obstacles)"


def is_connected(grid: GridMap) -> bool:
    """True when every free cell lies in one 4-connected component."""
    free = ~grid.obstacles
    total = int(free.sum())
    if total == 0:
        return False
    start = tuple(np.argwhere(free)[0])
    seen = np.zeros_like(free)
    seen[start] = True
    queue = deque([start])
    count = 1
    while queue:
        r, c = queue.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < grid.height and 0 <= nc < grid.width and free[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                count += 1
                queue.append((nr, nc))
    return count == total


@dataclass(frozen=True)
class BottleneckSpec:
    """Two open rooms joined by a one-cell-wide corridor."""

    corridor_len: int
    room_size: int = 5

    def __post_init__(self):
        if self.corridor_len < 1:
            raise ConfigError(f"corridor_len must be >= 1, got {self.corridor_len}")
        if self.room_size < 3:
            raise ConfigError(f"room_size must be >= 3, got {self.room_size}")


def gen_bottleneck(spec: BottleneckSpec, seed: int,
                   fixed_placement: bool = False) -> tuple[GridMap, list[Cell], list[Cell]]:
    """Build a bottleneck map with mirrored start/goal assignments.

    Agent 0 starts in the left room with its goal in the right room; agent 1
    is the mirror image. Starts and goals are sampled inside the rooms per
    seed (never in the corridor); ``fixed_placement`` pins them to the room
    centers instead.
    """
    rs, cl = spec.room_size, spec.corridor_len
    height = rs
    width = rs + cl + rs
    obstacles = np.ones((height, width), dtype=bool)
    obstacles[:, :rs] = False
    obstacles[:, rs + cl:] = False
    corridor_row = rs // 2
    obstacles[corridor_row, rs:rs + cl] = False
    grid = GridMap(obstacles, name=f"bottleneck-l{cl}-r{rs}-s{seed}")

    left_room = [(r, c) for r in range(rs) for c in range(rs)]
    mirror = {cell: (cell[0], width - 1 - cell[1]) for cell in left_room}
    if fixed_placement:
        start0 = (rs // 2, rs // 2)
        goal0 = mirror[start0]
    else:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(left_room), size=2, replace=False)
        start0 = left_room[int(picks[0])]
        goal0 = mirror[left_room[int(picks[1])]]
    # Agent 1 mirrors agent 0 exactly, forcing opposite corridor traversal.
    starts = [start0, mirror[start0]]
    goals = [goal0, (goal0[0], width - 1 - goal0[1])]
    return grid, starts, goals


def gen_random(width: int, height: int, obstacle_density: float, seed: int) -> GridMap:
    """I.i.d. obstacles at the given density, then carve until connected."""
    if not 0.0 <= obstacle_density <= 0.5:
        raise ConfigError(f"obstacle density must be in [0, 0.5], got {obstacle_density}")
    rng = np.random.default_rng(seed)
    obstacles = rng.random((height, width)) < obstacle_density
    _repair_connectivity(obstacles)
    return GridMap(obstacles, name=f"random-{width}x{height}-d{obstacle_density}-s{seed}")


def _repair_connectivity(obstacles: np.ndarray) -> None:
    """Carve L-shaped corridors until the free cells form one component."""
    height, width = obstacles.shape
    if obstacles.all():
        obstacles[height // 2, width // 2] = False

    def components():
        labels = np.full(obstacles.shape, -1, dtype=np.int32)
        comp = 0
        for r0, c0 in zip(*np.nonzero(~obstacles)):
            if labels[r0, c0] >= 0:
                continue
            queue = deque([(int(r0), int(c0))])
            labels[r0, c0] = comp
            while queue:
                r, c = queue.popleft()
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < height and 0 <= nc < width and not obstacles[nr, nc] \
                            and labels[nr, nc] < 0:
                        labels[nr, nc] = comp
                        queue.append((nr, nc))
            comp += 1
        return labels, comp

    labels, count = components()
    while count > 1:
        sizes = np.bincount(labels[labels >= 0].ravel())
        main = int(sizes.argmax())
        main_cells = np.argwhere(labels == main)
        other = int(np.argwhere(sizes > 0).ravel()[0]) if main != 0 else 1
        other_cells = np.argwhere(labels == other)
        # Closest pair by Manhattan distance, then carve row-first.
        dists = np.abs(other_cells[:, None, :] - main_cells[None, :, :]).sum(axis=2)
        i, j = np.unravel_index(int(dists.argmin()), dists.shape)
        (r1, c1), (r2, c2) = other_cells[i], main_cells[j]
        for r in range(min(r1, r2), max(r1, r2) + 1):
            obstacles[r, c1] = False
        for c in range(min(c1, c2), max(c1, c2) + 1):
            obstacles[r2, c] = False
        labels, count = components()


def gen_maze(width: int, height: int, seed: int, perforation: float = 0.1) -> GridMap:
    """Depth-first perfect maze, then remove walls at ``perforation`` rate.

    Perforation opens cycles so the result is maze-like rather than a tree.
    Dimensions must be odd so the cell lattice fits.
    """
    if width % 2 == 0 or height % 2 == 0:
        raise ConfigError(f"maze dimensions must be odd, got {width}x{height}")
    rng = np.random.default_rng(seed)
    obstacles = np.ones((height, width), dtype=bool)
    cells = [(r, c) for r in range(0, height, 2) for c in range(0, width, 2)]
    for cell in cells:
        obstacles[cell] = False

    visited = {cells[0]}
    stack = [cells[0]]
    while stack:
        r, c = stack[-1]
        neighbors = [(r + dr, c + dc) for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2))
                     if 0 <= r + dr < height and 0 <= c + dc < width
                     and (r + dr, c + dc) not in visited]
        if not neighbors:
            stack.pop()
            continue
        nxt = neighbors[int(rng.integers(len(neighbors)))]
        obstacles[(r + nxt[0]) // 2, (c + nxt[1]) // 2] = False
        visited.add(nxt)
        stack.append(nxt)

    # Knock out remaining walls that separate two free cells.
    for r in range(height):
        for c in range(width):
            if not obstacles[r, c]:
                continue
            horizontal = c - 1 >= 0 and c + 1 < width and not obstacles[r, c - 1] and not obstacles[r, c + 1]
            vertical = r - 1 >= 0 and r + 1 < height and not obstacles[r - 1, c] and not obstacles[r + 1, c]
            if (horizontal or vertical) and rng.random() < perforation:
                obstacles[r, c] = False
    return GridMap(obstacles, name=f"maze-{width}x{height}-s{seed}")


@dataclass
class MovingAIMap:
    """Parsed MovingAI map: header fields plus the character grid."""

    map_type: str
    height: int
    width: int
    rows: list[str]

    def to_grid(self) -> GridMap:
        obstacles = np.array([[ch in _BLOCKED_CHARS for ch in row] for row in self.rows])
        return GridMap(obstacles)


def parse_movingai(text: str) -> GridMap:
    return parse_movingai_full(text).to_grid()


def parse_movingai_full(text: str) -> MovingAIMap:
    """Parse the MovingAI ``.map`` text format, with line/column diagnostics.

    Header order is fixed: ``type``, ``height``, ``width``, ``map``
    (case-insensitive). ``.``/``G`` are passable, ``@``/``O``/``T`` blocked.
    """
    lines = text.splitlines()

    def header_line(index: int, keyword: str) -> str:
        if index >= len(lines):
            raise MapParseError(f"missing {keyword!r} header line", line=index + 1)
        return lines[index].strip()

    type_line = header_line(0, "type")
    if type_line.lower().split() and type_line.lower().split()[0] != "type":
        raise MapParseError(f"expected 'type' header, got {type_line!r}", line=1)
    parts = type_line.split()
    if len(parts) != 2 or parts[0].lower() != "type":
        raise MapParseError(f"expected 'type <name>' header, got {type_line!r}", line=1)
    map_type = parts[1]

    def int_header(index: int, keyword: str) -> int:
        raw = header_line(index, keyword)
        parts = raw.split()
        if len(parts) != 2 or parts[0].lower() != keyword:
            raise MapParseError(f"expected '{keyword} <int>' header, got {raw!r}", line=index + 1)
        try:
            value = int(parts[1])
        except ValueError:
            raise MapParseError(f"{keyword} is not an integer: {parts[1]!r}", line=index + 1) from None
        if value <= 0:
            raise MapParseError(f"{keyword} must be positive, got {value}", line=index + 1)
        return value

    height = int_header(1, "height")
    width = int_header(2, "width")
    map_kw = header_line(3, "map")
    if map_kw.lower() != "map":
        raise MapParseError(f"expected 'map' header, got {map_kw!r}", line=4)

    rows: list[str] = []
    for i in range(height):
        line_no = 5 + i
        if 4 + i >= len(lines):
            raise MapParseError(f"expected {height} map rows, found {i}", line=line_no)
        row = lines[4 + i].rstrip("\r")
        if len(row) != width:
            raise MapParseError(f"row has {len(row)} cells, header width is {width}",
                                line=line_no, col=min(len(row), width) + 1)
        for j, ch in enumerate(row):
            if ch not in _FREE_CHARS and ch not in _BLOCKED_CHARS:
                raise MapParseError(f"unknown cell character {ch!r}", line=line_no, col=j + 1)
        rows.append(row)
    return MovingAIMap(map_type=map_type, height=height, width=width, rows=rows)


def serialize_movingai(grid: GridMap) -> str:
    body = "\n".join("".join("@" if blocked else "." for blocked in row)
                     for row in grid.obstacles)
    return f"type octile\nheight {grid.height}\nwidth {grid.width}\nmap\n{body}\n"


def grid_to_json_dict(grid: GridMap) -> dict:
    """Compact JSON form: run-length-encoded rows, runs starting with free."""
    rows = []
    for row in grid.obstacles:
        runs = []
        current = False  # encoding starts with a free run, possibly of length 0
        count = 0
        for blocked in row:
            if bool(blocked) == current:
                count += 1
            else:
                runs.append(count)
                current = not current
                count = 1
        runs.append(count)
        rows.append(runs)
    out = {"width": grid.width, "height": grid.height, "obstacles": rows}
    if grid.name:
        out["name"] = grid.name
    return out


def grid_from_json_dict(doc: dict) -> GridMap:
    try:
        width, height, rows = doc["width"], doc["height"], doc["obstacles"]
    except (KeyError, TypeError):
        raise ConfigError("map JSON must carry width, height, obstacles") from None
    if len(rows) != height:
        raise ConfigError(f"map JSON has {len(rows)} rows, header says {height}")
    obstacles = np.zeros((height, width), dtype=bool)
    for r, runs in enumerate(rows):
        col = 0
        blocked = False
        for run in runs:
            if blocked:
                obstacles[r, col:col + run] = True
            col += run
            blocked = not blocked
        if col != width:
            raise ConfigError(f"map JSON row {r} encodes {col} cells, header says {width}")
    return GridMap(obstacles, name=doc.get("name", ""))
