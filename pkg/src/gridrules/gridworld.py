"""Seeded 5x5 lava gridworld with relative feature extraction.

The playable area is a 5x5 grid of cells; everything outside the bounds
behaves as Wall. Episodes end on reaching the goal (success), stepping
into lava (death), or hitting the step limit (timeout). Reaching the
goal pays 1 + 0.9 * (shortest_path / steps_taken), so a shortest-path
run earns exactly 1.9.
"""

import hashlib
from collections import deque
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

GRID_SIZE = 5
DEFAULT_MAX_STEPS = 100
DEFAULT_LAVA_MIN = 1
DEFAULT_LAVA_MAX = 4

_GEN_ATTEMPTS = 1000


class CellKind(IntEnum):
    Empty = 0
    Wall = 1
    Lava = 2
    Goal = 3


CELL_LETTERS = {
    CellKind.Empty: "E",
    CellKind.Wall: "W",
    CellKind.Lava: "L",
    CellKind.Goal: "G",
}
LETTER_CELLS = {v: k for k, v in CELL_LETTERS.items()}


class Direction(IntEnum):
    North = 0
    East = 1
    South = 2
    West = 3

    def turn_left(self):
        return Direction((self + 3) % 4)

    def turn_right(self):
        return Direction((self + 1) % 4)


# (row, col) deltas; row 0 is the top row.
DIR_DELTAS = {
    Direction.North: (-1, 0),
    Direction.East: (0, 1),
    Direction.South: (1, 0),
    Direction.West: (0, -1),
}


class Action(IntEnum):
    TurnLeft = 0
    TurnRight = 1
    Forward = 2


class Status(IntEnum):
    Running = 0
    Success = 1
    LavaDeath = 2
    Timeout = 3


class LayoutError(Exception):
    """Raised when a solvable/unique layout cannot be generated."""


@dataclass(frozen=True)
class Layout:
    cells: tuple  # tuple of rows, each a tuple of CellKind
    start_pos: tuple
    start_dir: Direction
    goal_pos: tuple
    seed: int
    lava_count: int

    @property
    def size(self):
        return len(self.cells)

    def cell_at(self, pos):
        """Cell at (row, col); out-of-bounds positions read as Wall."""
        r, c = pos
        if 0 <= r < self.size and 0 <= c < self.size:
            return self.cells[r][c]
        return CellKind.Wall


@dataclass
class EnvState:
    layout: Layout
    agent_pos: tuple
    agent_dir: Direction
    steps_taken: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    status: Status = Status.Running


FEATURE_NAMES = ("left", "right", "forward", "forward_left", "forward_right")


@dataclass(frozen=True)
class FeatureFrame:
    left: CellKind
    right: CellKind
    forward: CellKind
    forward_left: CellKind
    forward_right: CellKind

    def as_tuple(self):
        return (self.left, self.right, self.forward,
                self.forward_left, self.forward_right)

    def get(self, name):
        return getattr(self, name)


def initial_state(layout, max_steps=DEFAULT_MAX_STEPS):
    return EnvState(layout=layout, agent_pos=layout.start_pos,
                    agent_dir=layout.start_dir, max_steps=max_steps)


def _reachable(cells, start, goal):
    """BFS through Empty cells from start; the goal cell is enterable."""
    size = len(cells)
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if (r, c) == goal:
            return True
        for dr, dc in DIR_DELTAS.values():
            nr, nc = r + dr, c + dc
            if not (0 <= nr < size and 0 <= nc < size):
                continue
            if (nr, nc) in seen:
                continue
            if cells[nr][nc] in (CellKind.Empty, CellKind.Goal):
                seen.add((nr, nc))
                queue.append((nr, nc))
    return False


def generate_layout(seed, lava_min=DEFAULT_LAVA_MIN, lava_max=DEFAULT_LAVA_MAX):
    """Rejection-sample a solvable layout; bit-deterministic per seed."""
    if lava_min < 1 or lava_max > 6 or lava_min > lava_max:
        raise ValueError("lava range must satisfy 1 <= lava_min <= lava_max <= 6")
    rng = np.random.default_rng(seed)
    n_cells = GRID_SIZE * GRID_SIZE
    for _ in range(_GEN_ATTEMPTS):
        lava_count = int(rng.integers(lava_min, lava_max + 1))
        picks = rng.choice(n_cells, size=lava_count + 2, replace=False)
        goal_pos = (int(picks[0]) // GRID_SIZE, int(picks[0]) % GRID_SIZE)
        start_pos = (int(picks[1]) // GRID_SIZE, int(picks[1]) % GRID_SIZE)
        start_dir = Direction(int(rng.integers(4)))
        rows = [[CellKind.Empty] * GRID_SIZE for _ in range(GRID_SIZE)]
        rows[goal_pos[0]][goal_pos[1]] = CellKind.Goal
        for p in picks[2:]:
            rows[int(p) // GRID_SIZE][int(p) % GRID_SIZE] = CellKind.Lava
        cells = tuple(tuple(row) for row in rows)
        if _reachable(cells, start_pos, goal_pos):
            return Layout(cells=cells, start_pos=start_pos, start_dir=start_dir,
                          goal_pos=goal_pos, seed=int(seed), lava_count=lava_count)
    raise LayoutError(
        f"no solvable layout found for seed {seed} within {_GEN_ATTEMPTS} attempts; "
        "lava parameters may be over-constrained")


def layout_hash(layout):
    """Stable 64-bit content digest over cells, start pose and goal."""
    text = "{}|{},{}|{}|{},{}".format(
        "".join(CELL_LETTERS[c] for row in layout.cells for c in row),
        layout.start_pos[0], layout.start_pos[1],
        int(layout.start_dir),
        layout.goal_pos[0], layout.goal_pos[1])
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def generate_suite(base_seed, count, lava_min=DEFAULT_LAVA_MIN,
                   lava_max=DEFAULT_LAVA_MAX, exclude_hashes=()):
    """Generate `count` layouts with pairwise-distinct hashes.

    Seeds are drawn as base_seed, base_seed+1, ...; seeds whose layout
    duplicates an earlier hash (or one in exclude_hashes) are skipped.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    layouts = []
    seen = set(exclude_hashes)
    seed = int(base_seed)
    attempts = 0
    budget = 100 * count + 1000
    while len(layouts) < count:
        if attempts >= budget:
            raise LayoutError(
                f"could not generate {count} distinct layouts within {budget} attempts")
        layout = generate_layout(seed, lava_min, lava_max)
        h = layout_hash(layout)
        if h not in seen:
            seen.add(h)
            layouts.append(layout)
        seed += 1
        attempts += 1
    return layouts


def shortest_path_length(layout):
    """Minimal action count (turns cost 1) from the start pose to the goal.

    BFS over (position, direction) states; Forward is only expanded into
    Empty or Goal cells.
    """
    start = (layout.start_pos, layout.start_dir)
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        (pos, direction), dist = queue.popleft()
        if pos == layout.goal_pos:
            return dist
        nexts = [(pos, direction.turn_left()), (pos, direction.turn_right())]
        dr, dc = DIR_DELTAS[direction]
        ahead = (pos[0] + dr, pos[1] + dc)
        if layout.cell_at(ahead) in (CellKind.Empty, CellKind.Goal):
            nexts.append((ahead, direction))
        for state in nexts:
            if state not in seen:
                seen.add(state)
                queue.append((state, dist + 1))
    raise LayoutError("goal unreachable from start pose")


def start_poses(layout):
    """Every layout variant whose start is an empty cell and heading from
    which the goal is reachable; includes the original start pose."""
    poses = []
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            if layout.cells[r][c] != CellKind.Empty:
                continue
            for d in range(4):
                candidate = replace(layout, start_pos=(r, c),
                                    start_dir=Direction(d))
                try:
                    shortest_path_length(candidate)
                except LayoutError:
                    continue
                poses.append(candidate)
    return poses or [layout]


def step(state, action):
    """Advance one action; returns (new_state, reward, done)."""
    if state.status != Status.Running:
        raise ValueError("cannot step a finished episode "
                         f"(status={state.status.name})")
    action = Action(action)
    steps = state.steps_taken + 1
    pos = state.agent_pos
    direction = state.agent_dir
    status = Status.Running
    reward = 0.0

    if action == Action.TurnLeft:
        direction = direction.turn_left()
    elif action == Action.TurnRight:
        direction = direction.turn_right()
    else:
        dr, dc = DIR_DELTAS[direction]
        ahead = (pos[0] + dr, pos[1] + dc)
        kind = state.layout.cell_at(ahead)
        if kind == CellKind.Empty:
            pos = ahead
        elif kind == CellKind.Lava:
            pos = ahead
            status = Status.LavaDeath
            reward = -1.0
        elif kind == CellKind.Goal:
            pos = ahead
            status = Status.Success
            optimal = shortest_path_length(state.layout)
            reward = 1.0 + 0.9 * (optimal / steps)
        # Wall or out of bounds: blocked, no move, no reward.

    if status == Status.Running and steps >= state.max_steps:
        status = Status.Timeout

    new_state = replace(state, agent_pos=pos, agent_dir=direction,
                        steps_taken=steps, status=status)
    return new_state, reward, status != Status.Running


def extract_features(state):
    """The five relative cells around/ahead of the agent's heading."""
    if state.status != Status.Running:
        raise ValueError("features are only defined for running episodes")
    r, c = state.agent_pos
    fr, fc = DIR_DELTAS[state.agent_dir]
    rr, rc = DIR_DELTAS[state.agent_dir.turn_right()]
    cell = state.layout.cell_at
    return FeatureFrame(
        left=cell((r - rr, c - rc)),
        right=cell((r + rr, c + rc)),
        forward=cell((r + fr, c + fc)),
        forward_left=cell((r + fr - rr, c + fc - rc)),
        forward_right=cell((r + fr + rr, c + fc + rc)),
    )


OBS_SIZE = GRID_SIZE * GRID_SIZE * 4 + GRID_SIZE * GRID_SIZE + 4  # 129


def encode_observation(state):
    """Flat one-hot vector: 100 cell slots + 25 position + 4 direction."""
    n = GRID_SIZE * GRID_SIZE
    obs = np.zeros(OBS_SIZE, dtype=np.float64)
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            obs[(r * GRID_SIZE + c) * 4 + int(state.layout.cells[r][c])] = 1.0
    obs[4 * n + state.agent_pos[0] * GRID_SIZE + state.agent_pos[1]] = 1.0
    obs[5 * n + int(state.agent_dir)] = 1.0
    return obs


def dihedral_transforms():
    """Observation/action maps for the 8 grid symmetries.

    Rotating or mirroring a layout together with the agent's pose leaves
    the dynamics unchanged, so every transition yields seven more valid
    ones. Returns a tuple of (obs_perm, action_map) pairs such that
    transformed_obs[obs_perm] = obs and action_map[action] is the action
    in the transformed frame (mirroring swaps the two turns).
    """
    n = GRID_SIZE * GRID_SIZE
    out = []
    for quarter_turns in range(4):
        for mirrored in (False, True):
            def cell_map(r, c):
                if mirrored:
                    c = GRID_SIZE - 1 - c
                for _ in range(quarter_turns):
                    r, c = GRID_SIZE - 1 - c, r
                return r, c

            def delta_map(dr, dc):
                if mirrored:
                    dc = -dc
                for _ in range(quarter_turns):
                    dr, dc = -dc, dr
                return dr, dc

            dir_map = {}
            for direction, delta in DIR_DELTAS.items():
                moved = delta_map(*delta)
                dir_map[int(direction)] = int(next(
                    d for d, v in DIR_DELTAS.items() if v == moved))
            perm = np.zeros(OBS_SIZE, dtype=np.int64)
            for r in range(GRID_SIZE):
                for c in range(GRID_SIZE):
                    nr, nc = cell_map(r, c)
                    for kind in range(4):
                        perm[4 * (GRID_SIZE * r + c) + kind] = \
                            4 * (GRID_SIZE * nr + nc) + kind
                    perm[4 * n + GRID_SIZE * r + c] = \
                        4 * n + GRID_SIZE * nr + nc
            for d in range(4):
                perm[5 * n + d] = 5 * n + dir_map[d]
            action_map = np.array(
                [1, 0, 2] if mirrored else [0, 1, 2], dtype=np.int64)
            out.append((perm, action_map))
    return tuple(out)


def optimal_actions(layout):
    """One shortest action sequence from start pose to goal (for scripted
    rollouts and oracles)."""
    start = (layout.start_pos, layout.start_dir)
    seen = {start: None}
    queue = deque([start])
    goal_state = None
    while queue:
        pos, direction = queue.popleft()
        if pos == layout.goal_pos:
            goal_state = (pos, direction)
            break
        moves = [((pos, direction.turn_left()), Action.TurnLeft),
                 ((pos, direction.turn_right()), Action.TurnRight)]
        dr, dc = DIR_DELTAS[direction]
        ahead = (pos[0] + dr, pos[1] + dc)
        if layout.cell_at(ahead) in (CellKind.Empty, CellKind.Goal):
            moves.append(((ahead, direction), Action.Forward))
        for state, act in moves:
            if state not in seen:
                seen[state] = ((pos, direction), act)
                queue.append(state)
    if goal_state is None:
        raise LayoutError("goal unreachable from start pose")
    actions = []
    node = goal_state
    while seen[node] is not None:
        prev, act = seen[node]
        actions.append(act)
        node = prev
    actions.reverse()
    return actions


def write_suite(layouts, path):
    """Write a suite file: seed,hash,start_row,start_col,start_dir,cells."""
    with open(path, "w") as fh:
        fh.write("seed,hash,start_row,start_col,start_dir,cells\n")
        for layout in layouts:
            cells = "".join(CELL_LETTERS[c] for row in layout.cells for c in row)
            fh.write("{},{:016x},{},{},{},{}\n".format(
                layout.seed, layout_hash(layout), layout.start_pos[0],
                layout.start_pos[1], int(layout.start_dir), cells))


def read_suite(path):
    """Read a suite file written by write_suite; bit-exact round trip."""
    layouts = []
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "seed,hash,start_row,start_col,start_dir,cells":
            raise ValueError(f"{path}: unrecognized suite header")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields")
            seed, stored_hash, sr, sc, sd, cellstr = parts
            if len(cellstr) != GRID_SIZE * GRID_SIZE:
                raise ValueError(f"{path}:{lineno}: bad cell string length")
            try:
                kinds = [LETTER_CELLS[ch] for ch in cellstr]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: unknown cell letter {exc}")
            cells = tuple(tuple(kinds[r * GRID_SIZE:(r + 1) * GRID_SIZE])
                          for r in range(GRID_SIZE))
            goal = None
            lava = 0
            for r in range(GRID_SIZE):
                for c in range(GRID_SIZE):
                    if cells[r][c] == CellKind.Goal:
                        goal = (r, c)
                    elif cells[r][c] == CellKind.Lava:
                        lava += 1
            if goal is None:
                raise ValueError(f"{path}:{lineno}: layout has no goal cell")
            layout = Layout(cells=cells, start_pos=(int(sr), int(sc)),
                            start_dir=Direction(int(sd)), goal_pos=goal,
                            seed=int(seed), lava_count=lava)
            if layout_hash(layout) != int(stored_hash, 16):
                raise ValueError(f"{path}:{lineno}: stored hash does not match cells")
            layouts.append(layout)
    return layouts
