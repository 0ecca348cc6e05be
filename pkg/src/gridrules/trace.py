"""Greedy-policy trace collection and binarization for rule learning.

A trace is a list of (feature frame, action) records with provenance;
it round-trips through a CSV file that is also the rule learner's
public input format.
"""

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .gridworld import (
    Action, CellKind, FEATURE_NAMES, FeatureFrame, Status,
    DEFAULT_MAX_STEPS, encode_observation, extract_features, initial_state,
    layout_hash, step,
)
from .agent import forward as q_forward

TRACE_HEADER = ["run_seed", "episode", "step", "layout_hash",
                "left", "right", "forward", "forward_left", "forward_right",
                "action"]

CELL_VALUES = (CellKind.Empty, CellKind.Wall, CellKind.Lava, CellKind.Goal)
N_COLUMNS = len(FEATURE_NAMES) * len(CELL_VALUES)  # 20


class Stage(Enum):
    ForwardVsTurn = "forward_vs_turn"
    LeftVsRight = "left_vs_right"


@dataclass(frozen=True)
class TraceRecord:
    run_seed: int
    episode: int
    step: int
    layout_hash: int
    frame: FeatureFrame
    action: Action


@dataclass
class BinaryDataset:
    columns: list  # (feature_name, CellKind) per column, fixed order
    rows: np.ndarray  # bool matrix, n x 20
    labels: np.ndarray  # bool vector
    stage: Stage


def column_order():
    """Fixed (feature, value) order shared by datasets and clauses."""
    return [(f, v) for f in FEATURE_NAMES for v in CELL_VALUES]


COLUMNS = column_order()
COLUMN_INDEX = {fv: i for i, fv in enumerate(COLUMNS)}


def collect(policies, suite, max_steps=DEFAULT_MAX_STEPS):
    """Roll one greedy episode per (run seed, layout); returns records.

    `policies` maps run_seed -> trained QNetwork (or a callable
    EnvState -> Action for scripted policies). Frames are captured
    before the action executes.
    """
    if not suite:
        raise ValueError("layout suite is empty")
    records = []
    for run_seed in sorted(policies):
        policy = policies[run_seed]
        if not callable(policy):
            net = policy
            policy = lambda state, net=net: Action(
                int(np.argmax(q_forward(net, encode_observation(state)))))
        episode = 0
        for layout in suite:
            state = initial_state(layout, max_steps)
            h = layout_hash(layout)
            done = False
            while not done:
                frame = extract_features(state)
                action = policy(state)
                records.append(TraceRecord(
                    run_seed=run_seed, episode=episode, step=state.steps_taken,
                    layout_hash=h, frame=frame, action=Action(action)))
                state, _, done = step(state, action)
            episode += 1
    return records


def write_trace(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for rec in records:
            writer.writerow([
                rec.run_seed, rec.episode, rec.step,
                f"{rec.layout_hash:016x}",
                rec.frame.left.name, rec.frame.right.name, rec.frame.forward.name,
                rec.frame.forward_left.name, rec.frame.forward_right.name,
                rec.action.name])


def read_trace(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unrecognized trace header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_HEADER):
                raise ValueError(f"{path}:{lineno}: expected "
                                 f"{len(TRACE_HEADER)} fields, got {len(row)}")
            try:
                cells = [CellKind[name] for name in row[4:9]]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: unknown cell value {exc}")
            try:
                action = Action[row[9]]
            except KeyError:
                raise ValueError(f"{path}:{lineno}: unknown action {row[9]!r}")
            records.append(TraceRecord(
                run_seed=int(row[0]), episode=int(row[1]), step=int(row[2]),
                layout_hash=int(row[3], 16),
                frame=FeatureFrame(*cells), action=action))
    return records


def frame_row(frame):
    """One-hot 20-column row for a feature frame."""
    row = np.zeros(N_COLUMNS, dtype=bool)
    for name in FEATURE_NAMES:
        row[COLUMN_INDEX[(name, frame.get(name))]] = True
    return row


def binarize(records, stage):
    """Build the one-hot dataset and labels for a classification stage.

    ForwardVsTurn keeps every record, label true on turns. LeftVsRight
    keeps only turn records, label true on TurnRight.
    """
    stage = Stage(stage)
    if stage == Stage.LeftVsRight:
        records = [r for r in records
                   if r.action in (Action.TurnLeft, Action.TurnRight)]
        if not records:
            raise ValueError("LeftVsRight stage requires at least one turn record")
        labels = np.array([r.action == Action.TurnRight for r in records])
    else:
        labels = np.array([r.action in (Action.TurnLeft, Action.TurnRight)
                           for r in records])
    rows = (np.vstack([frame_row(r.frame) for r in records])
            if records else np.zeros((0, N_COLUMNS), dtype=bool))
    return BinaryDataset(columns=list(COLUMNS), rows=rows, labels=labels,
                         stage=stage)
