"""Action masking that feeds learned rules back into the live policy.

Each guardrail entry pairs a clause with the actions it forbids; when
the clause fires on the agent's current feature frame, those actions
are masked out of the greedy argmax. The default mapping turns every
Turn-predicting clause into a "don't go forward" constraint.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import bdr
from .agent import EvalResult, forward
from .gridworld import (
    Action, CellKind, Status, DEFAULT_MAX_STEPS,
    encode_observation, extract_features, initial_state, step,
)

ALL_ACTIONS = frozenset(Action)


@dataclass
class GuardrailSpec:
    entries: list  # (Clause, frozenset of forbidden Actions)
    source: str = "manual"

    def __post_init__(self):
        for clause, forbidden in self.entries:
            if set(forbidden) >= ALL_ACTIONS:
                raise ValueError(
                    f"guardrail entry {clause.render()} forbids every action")

    def forbidden_for(self, frame):
        """Union of forbidden actions over clauses firing on the frame."""
        forbidden = set()
        for clause, actions in self.entries:
            if clause.covers_frame(frame):
                forbidden |= actions
        return forbidden


def compile_guardrails(ruleset, mapping=None):
    """Turn-predicting clauses forbid Forward; a manual mapping
    (clause -> iterable of Actions) passes through validated."""
    if mapping is None:
        if ruleset.positive_label != "Turn":
            raise ValueError(
                "default guardrail mapping requires a Turn rule set; got "
                f"positive_label={ruleset.positive_label!r}")
        entries = [(clause, frozenset({Action.Forward}))
                   for clause in ruleset.clauses]
    else:
        entries = [(clause, frozenset(Action(a) for a in actions))
                   for clause, actions in mapping]
    return GuardrailSpec(entries=entries, source=f"rules:{ruleset.positive_label}"
                         if mapping is None else "manual")


def masked_argmax(q_values, forbidden):
    """Greedy action over the permitted set; falls back to the unmasked
    argmax when everything is forbidden. Returns (action, fell_back)."""
    if len(forbidden) >= len(q_values):
        return Action(int(np.argmax(q_values))), True
    masked = np.array(q_values, dtype=float)
    for a in forbidden:
        masked[int(a)] = -np.inf
    return Action(int(np.argmax(masked))), False


def shielded_act(net, spec, state):
    """Greedy action with the guardrail mask applied."""
    if state.status != Status.Running:
        raise ValueError("cannot act on a finished episode")
    q = forward(net, encode_observation(state))
    forbidden = spec.forbidden_for(extract_features(state))
    action, _ = masked_argmax(q, forbidden)
    return action


@dataclass
class ShieldedEvalResult:
    base: EvalResult
    shielded: EvalResult
    delta_success_rate: float
    delta_lava_rate: float
    delta_mean_reward: float
    fallback_events: int


def evaluate_shielded(net, spec, suite, episodes_per_layout=1,
                      max_steps=DEFAULT_MAX_STEPS):
    """Paired greedy vs shielded rollouts on identical layouts."""
    if not suite:
        raise ValueError("evaluation suite is empty")

    def run(shield):
        rewards = []
        outcomes = {Status.Success: 0, Status.LavaDeath: 0, Status.Timeout: 0}
        fallbacks = 0
        for layout in suite:
            for _ in range(episodes_per_layout):
                state = initial_state(layout, max_steps)
                total = 0.0
                done = False
                while not done:
                    q = forward(net, encode_observation(state))
                    if shield:
                        forbidden = spec.forbidden_for(extract_features(state))
                        action, fell_back = masked_argmax(q, forbidden)
                        fallbacks += fell_back
                    else:
                        action = Action(int(np.argmax(q)))
                    state, reward, done = step(state, action)
                    total += reward
                rewards.append(total)
                outcomes[state.status] += 1
        n = len(rewards)
        rewards = np.asarray(rewards)
        return EvalResult(
            mean_reward=float(rewards.mean()),
            reward_stddev=float(rewards.std()),
            success_rate=outcomes[Status.Success] / n,
            lava_rate=outcomes[Status.LavaDeath] / n,
            timeout_rate=outcomes[Status.Timeout] / n,
            episodes=n), fallbacks

    base, _ = run(False)
    shielded, fallbacks = run(True)
    return ShieldedEvalResult(
        base=base, shielded=shielded,
        delta_success_rate=shielded.success_rate - base.success_rate,
        delta_lava_rate=shielded.lava_rate - base.lava_rate,
        delta_mean_reward=shielded.mean_reward - base.mean_reward,
        fallback_events=fallbacks)


def write_guardrails(spec, path):
    doc = {
        "source": spec.source,
        "entries": [{
            "clause": [{"feature": f, "value": v.name}
                       for f, v in clause.literals],
            "forbidden": sorted(a.name for a in forbidden),
        } for clause, forbidden in spec.entries],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_guardrails(path):
    with open(path) as fh:
        doc = json.load(fh)
    entries = [
        (bdr.make_clause(*((lit["feature"], CellKind[lit["value"]])
                           for lit in entry["clause"])),
         frozenset(Action[a] for a in entry["forbidden"]))
        for entry in doc["entries"]]
    return GuardrailSpec(entries=entries, source=doc.get("source", "manual"))
