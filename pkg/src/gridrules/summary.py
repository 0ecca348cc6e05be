"""Two-stage rule classifier and its evaluation report.

Stage 1 predicts Forward vs Turn over every trace record; stage 2
predicts Left vs Right over turn records only. The report carries
per-stage accuracy/F1 and per-clause agreement with the traced policy.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import bdr
from .gridworld import Action
from .trace import Stage, binarize


@dataclass
class StageModel:
    stage1: bdr.RuleSet  # positive = Turn
    stage2: bdr.RuleSet  # positive = Right


@dataclass
class StageMetrics:
    accuracy: float
    f1: float
    samples: int
    true_pos: int
    false_pos: int
    true_neg: int
    false_neg: int


@dataclass
class ClauseAgreement:
    stage: Stage
    clause: bdr.Clause
    fires: int
    agreement: float | None  # None when the clause never fires
    disagreement: float | None


@dataclass
class MetricsReport:
    stage1: StageMetrics
    stage2: StageMetrics
    clause_agreements: list
    split: str
    train_stage1: StageMetrics | None = None
    train_stage2: StageMetrics | None = None


def fit_two_stage(records, config=None):
    """Fit both stage rule sets from trace records."""
    has_turn = any(r.action in (Action.TurnLeft, Action.TurnRight)
                   for r in records)
    has_forward = any(r.action == Action.Forward for r in records)
    if not has_turn:
        raise ValueError("stage2 (LeftVsRight) dataset is single-class: "
                         "trace contains no turn actions")
    if not has_forward:
        raise ValueError("stage1 (ForwardVsTurn) dataset is single-class: "
                         "trace contains no forward actions")
    stage1 = bdr.fit(binarize(records, Stage.ForwardVsTurn), config)
    stage2 = bdr.fit(binarize(records, Stage.LeftVsRight), config)
    return StageModel(stage1=stage1, stage2=stage2)


def predict_action(model, frame):
    """Forward unless stage1 fires; then Right iff stage2 fires."""
    if not bdr.predict(model.stage1, frame):
        return Action.Forward
    if bdr.predict(model.stage2, frame):
        return Action.TurnRight
    return Action.TurnLeft


def _stage_metrics(ruleset, records, positive_fn):
    pred = np.array([bdr.predict(ruleset, r.frame) for r in records])
    truth = np.array([positive_fn(r) for r in records])
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    n = len(records)
    accuracy = (tp + tn) / n if n else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return StageMetrics(accuracy=accuracy, f1=f1, samples=n,
                        true_pos=tp, false_pos=fp, true_neg=tn, false_neg=fn)


def _is_turn(record):
    return record.action in (Action.TurnLeft, Action.TurnRight)


def _is_right(record):
    return record.action == Action.TurnRight


def agreement(clause, stage, records):
    """Among records where the clause fires, the fraction whose action
    matches the stage's positive class. Stage2 sees turn records only."""
    stage = Stage(stage)
    if stage == Stage.LeftVsRight:
        records = [r for r in records if _is_turn(r)]
        positive_fn = _is_right
    else:
        positive_fn = _is_turn
    fires = [r for r in records if clause.covers_frame(r.frame)]
    if not fires:
        return ClauseAgreement(stage=stage, clause=clause, fires=0,
                               agreement=None, disagreement=None)
    agree = sum(1 for r in fires if positive_fn(r)) / len(fires)
    return ClauseAgreement(stage=stage, clause=clause, fires=len(fires),
                           agreement=agree, disagreement=1.0 - agree)


def split_records(records, test_fraction=0.2, seed=0):
    """Deterministic shuffled train/test split."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(records))
    n_test = max(1, int(round(test_fraction * len(records))))
    test_idx = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def metrics(model, records, holdout=None, test_fraction=0.2, seed=0):
    """Evaluate the model on held-out records.

    If `holdout` is given it is used directly; otherwise `records` is
    shuffled and split, train metrics are reported alongside.
    """
    if not records:
        raise ValueError("no records to evaluate")
    if holdout is not None:
        train, test = None, list(holdout)
        split = f"explicit holdout ({len(test)} records)"
    else:
        train, test = split_records(records, test_fraction, seed)
        split = (f"shuffled {1 - test_fraction:.0%}/{test_fraction:.0%} "
                 f"split (seed {seed})")

    test_turns = [r for r in test if _is_turn(r)]
    report = MetricsReport(
        stage1=_stage_metrics(model.stage1, test, _is_turn),
        stage2=_stage_metrics(model.stage2, test_turns, _is_right),
        clause_agreements=[], split=split)
    if train is not None:
        train_turns = [r for r in train if _is_turn(r)]
        report.train_stage1 = _stage_metrics(model.stage1, train, _is_turn)
        report.train_stage2 = _stage_metrics(model.stage2, train_turns, _is_right)
    for clause in model.stage1.clauses:
        report.clause_agreements.append(
            agreement(clause, Stage.ForwardVsTurn, test))
    for clause in model.stage2.clauses:
        report.clause_agreements.append(
            agreement(clause, Stage.LeftVsRight, test))
    return report


def _fmt(x, digits=3):
    return "n/a" if x is None else f"{x:.{digits}f}"


def render_report(model, report, fmt="text"):
    """Text table in the IF/OR/AND/THEN style, or the same content as a
    JSON document."""
    if fmt == "structured":
        doc = {
            "split": report.split,
            "stages": {},
            "clauses": [],
        }
        for name, ruleset, sm, tm in [
                ("Turn", model.stage1, report.stage1, report.train_stage1),
                ("Right", model.stage2, report.stage2, report.train_stage2)]:
            doc["stages"][name] = {
                "rule": bdr.ruleset_to_dict(ruleset),
                "accuracy": sm.accuracy, "f1": sm.f1, "samples": sm.samples,
                "confusion": {"tp": sm.true_pos, "fp": sm.false_pos,
                              "tn": sm.true_neg, "fn": sm.false_neg},
            }
            if tm is not None:
                doc["stages"][name]["train_accuracy"] = tm.accuracy
                doc["stages"][name]["train_f1"] = tm.f1
        for ca in report.clause_agreements:
            doc["clauses"].append({
                "action": "Turn" if ca.stage == Stage.ForwardVsTurn else "Right",
                "clause": ca.clause.render(),
                "fires": ca.fires,
                "agreement": ca.agreement,
                "disagreement": ca.disagreement,
            })
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    lines = []
    lines.append(f"Evaluation split: {report.split}")
    lines.append("")
    lines.append(model.stage1.render())
    lines.append(model.stage2.render())
    lines.append("")
    header = (f"{'Action':<8} {'Rule accuracy':>13} {'F1':>7} "
              f"{'Rule':<55} {'Agreement':>9} {'Disagreement':>12}")
    lines.append(header)
    lines.append("-" * len(header))
    for name, sm in [("Turn", report.stage1), ("Right", report.stage2)]:
        stage = (Stage.ForwardVsTurn if name == "Turn" else Stage.LeftVsRight)
        rows = [ca for ca in report.clause_agreements if ca.stage == stage]
        if not rows:
            lines.append(f"{name:<8} {sm.accuracy:>13.3f} {sm.f1:>7.3f} "
                         f"{'(no clauses)':<55} {'n/a':>9} {'n/a':>12}")
        for i, ca in enumerate(rows):
            acc = f"{sm.accuracy:.3f}" if i == 0 else ""
            f1 = f"{sm.f1:.3f}" if i == 0 else ""
            lines.append(f"{name if i == 0 else '':<8} {acc:>13} {f1:>7} "
                         f"{ca.clause.render():<55} {_fmt(ca.agreement):>9} "
                         f"{_fmt(ca.disagreement):>12}")
    lines.append("")
    return "\n".join(lines) + "\n"
