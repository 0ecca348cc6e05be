"""Boolean decision rule learning by LP column generation.

Fits a DNF (OR-of-ANDs) rule set over the 20 one-hot feature columns,
minimizing Hamming loss plus per-clause / per-literal complexity
penalties. The LP master is solved exactly (scipy HiGHS); pricing
enumerates every clause up to the degree cap, so termination certifies
LP optimality over the full clause space. The final integral rule set
is found by branch-and-bound over all enumerated clauses, which makes
the result the exact minimizer at this problem scale.
"""

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .gridworld import CellKind, FEATURE_NAMES
from .trace import COLUMNS, COLUMN_INDEX, N_COLUMNS, frame_row

PRICING_TOL = 1e-9
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Clause:
    """A conjunction of (feature == value) literals, stored as sorted
    column indices. The empty clause is satisfied by every row."""
    columns: tuple

    def __post_init__(self):
        cols = tuple(sorted(self.columns))
        object.__setattr__(self, "columns", cols)
        feats = [c // 4 for c in cols]
        if len(set(feats)) != len(feats):
            raise ValueError("clause has two literals on the same feature")

    @property
    def degree(self):
        return len(self.columns)

    @property
    def literals(self):
        return [COLUMNS[c] for c in self.columns]

    def covers_row(self, row):
        return all(row[c] for c in self.columns)

    def covers_frame(self, frame):
        return all(frame.get(COLUMNS[c][0]) == COLUMNS[c][1]
                   for c in self.columns)

    def render(self):
        if not self.columns:
            return "(TRUE)"
        return "(" + " AND ".join(f"{f} == {v.name}" for f, v in self.literals) + ")"


def literal_clause(feature, value):
    return Clause((COLUMN_INDEX[(feature, CellKind(value))],))


def make_clause(*literals):
    """Clause from (feature, value) pairs."""
    return Clause(tuple(COLUMN_INDEX[(f, CellKind(v))] for f, v in literals))


@dataclass
class RuleSet:
    clauses: list
    positive_label: str  # "Turn" or "Right"

    def __post_init__(self):
        self.clauses = _normalize(self.clauses)

    def total_literals(self):
        return sum(c.degree for c in self.clauses)

    def render(self):
        if not self.clauses:
            return f"IF (FALSE) THEN action=={self.positive_label.upper()}"
        body = " OR ".join(c.render() for c in self.clauses)
        return f"IF {body} THEN action=={self.positive_label.upper()}"


def _normalize(clauses):
    """Sort, dedupe, and drop clauses that are supersets of another
    (their coverage is already implied)."""
    unique = sorted(set(clauses), key=lambda c: (c.degree, c.columns))
    kept = []
    for c in unique:
        if not any(set(k.columns) <= set(c.columns) for k in kept):
            kept.append(c)
    return sorted(kept, key=lambda c: c.columns)


def predict(ruleset, frame):
    """True iff any clause is fully satisfied by the frame."""
    return any(c.covers_frame(frame) for c in ruleset.clauses)


def predict_row(ruleset, row):
    return any(c.covers_row(row) for c in ruleset.clauses)


@dataclass
class BdrConfig:
    lambda0: float = 0.001
    lambda1: float = 0.001
    max_degree: int = 3
    max_clauses: int = 4
    max_cg_iterations: int = 50

    def penalty(self, clause):
        return self.lambda0 + self.lambda1 * clause.degree


@dataclass
class MasterSolution:
    clause_weights: np.ndarray
    slacks: np.ndarray
    objective: float
    duals: np.ndarray  # one per distinct positive row


@dataclass
class FitInfo:
    lp_objectives: list = field(default_factory=list)
    pool_size: int = 0
    min_final_reduced_cost: float = 0.0
    certificate_ok: bool = False
    objective: float = 0.0


def objective(ruleset, dataset, config):
    """(FN + FP)/n plus complexity penalties."""
    n = len(dataset.labels)
    if n == 0:
        raise ValueError("dataset is empty")
    covered = np.zeros(n, dtype=bool)
    for clause in ruleset.clauses:
        covered |= dataset.rows[:, clause.columns].all(axis=1)
    fn = int(np.count_nonzero(dataset.labels & ~covered))
    fp = int(np.count_nonzero(~dataset.labels & covered))
    return (fn + fp) / n + sum(config.penalty(c) for c in ruleset.clauses)


def enumerate_clauses(max_degree, n_columns=N_COLUMNS):
    """All clauses with degree <= max_degree, same-feature pairs pruned,
    in deterministic (degree, lexicographic) order."""
    clauses = [Clause(())]
    for d in range(1, max_degree + 1):
        for combo in itertools.combinations(range(n_columns), d):
            if len({c // 4 for c in combo}) == d:
                clauses.append(Clause(combo))
    return clauses


class _Problem:
    """Deduplicated view of a BinaryDataset: distinct feature rows with
    positive/negative multiplicities."""

    def __init__(self, dataset):
        self.n = len(dataset.labels)
        if self.n == 0:
            raise ValueError("dataset is empty")
        rows, inverse = np.unique(dataset.rows, axis=0, return_inverse=True)
        self.rows = rows
        m = rows.shape[0]
        self.pos_w = np.bincount(inverse[dataset.labels], minlength=m).astype(float)
        self.neg_w = np.bincount(inverse[~dataset.labels], minlength=m).astype(float)

    def coverage(self, clauses):
        """Bool matrix: clause k covers distinct row i."""
        cov = np.ones((len(clauses), self.rows.shape[0]), dtype=bool)
        for k, clause in enumerate(clauses):
            if clause.columns:
                cov[k] = self.rows[:, clause.columns].all(axis=1)
        return cov


def solve_master(pool, dataset, config, _problem=None, _coverage=None):
    """Exact LP relaxation of the restricted master problem.

    Variables are clause weights in [0,1] and one slack per distinct
    positive row (weighted by multiplicity). Returns primal optimum and
    the coverage-constraint duals used for pricing.
    """
    if not pool:
        raise ValueError("clause pool is empty")
    prob = _problem if _problem is not None else _Problem(dataset)
    cov = _coverage if _coverage is not None else prob.coverage(pool)
    pos_idx = np.flatnonzero(prob.pos_w > 0)
    n_pool = len(pool)
    if pos_idx.size == 0:
        return MasterSolution(np.zeros(n_pool), np.zeros(0), 0.0, np.zeros(0))

    n = prob.n
    c_w = cov @ prob.neg_w / n + np.array([config.penalty(k) for k in pool])
    c_s = prob.pos_w[pos_idx] / n
    # coverage constraints: -(slack_i + sum_k cov_ik w_k) <= -1
    a_ub = np.hstack([-cov[:, pos_idx].T.astype(float),
                      -np.eye(pos_idx.size)])
    b_ub = -np.ones(pos_idx.size)
    bounds = [(0.0, 1.0)] * n_pool + [(0.0, None)] * pos_idx.size
    res = linprog(np.concatenate([c_w, c_s]), A_ub=a_ub, b_ub=b_ub,
                  bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"master LP failed: {res.message}")
    duals = np.maximum(-res.ineqlin.marginals, 0.0)
    return MasterSolution(
        clause_weights=res.x[:n_pool],
        slacks=res.x[n_pool:],
        objective=float(res.fun),
        duals=duals,
    )


def reduced_costs(duals, pool_or_all, dataset, config,
                  _problem=None, _coverage=None):
    """Reduced cost of every candidate clause under the current duals."""
    prob = _problem if _problem is not None else _Problem(dataset)
    cov = _coverage if _coverage is not None else prob.coverage(pool_or_all)
    pos_idx = np.flatnonzero(prob.pos_w > 0)
    pen = np.array([config.penalty(k) for k in pool_or_all])
    rho = pen + cov @ prob.neg_w / prob.n
    if pos_idx.size:
        rho -= cov[:, pos_idx] @ duals
    return rho


def price_clause(duals, dataset, config, _problem=None,
                 _candidates=None, _coverage=None, limit=10):
    """Exhaustive pricing over all clauses up to max_degree.

    Returns up to `limit` (clause, reduced_cost) pairs with the most
    negative reduced costs; empty when no clause prices out.
    """
    candidates = (_candidates if _candidates is not None
                  else enumerate_clauses(config.max_degree))
    rho = reduced_costs(duals, candidates, dataset, config,
                        _problem=_problem, _coverage=_coverage)
    neg = np.flatnonzero(rho < -PRICING_TOL)
    neg = neg[np.argsort(rho[neg], kind="stable")][:limit]
    return [(candidates[i], float(rho[i])) for i in neg]


def _rule_key(clause_cols):
    return tuple(sorted(clause_cols))


def _select_best_subset(prob, candidates, coverage, config):
    """Exact search for the best rule set of at most max_clauses clauses.

    Branch-and-bound over candidates ordered by net gain; prunes with an
    optimistic bound that ignores future penalties and false positives.
    Ties break on (fewer clauses, fewer literals, lexicographic order).
    """
    n = prob.n
    pos_w = prob.pos_w
    neg_w = prob.neg_w
    pen = np.array([config.penalty(k) for k in candidates])

    # A clause improves a rule set by at most its positive coverage minus
    # its penalty, so ones where that is non-positive can only hurt (or
    # tie, and ties prefer fewer clauses); drop them up front. Clauses
    # with identical row coverage are interchangeable; keep only the
    # first (candidates arrive in (degree, lexicographic) order, which
    # matches the tie-break preference).
    pos_gain = coverage @ pos_w
    _, first = np.unique(coverage, axis=0, return_index=True)
    is_rep = np.zeros(len(candidates), dtype=bool)
    is_rep[first] = True
    keep = np.flatnonzero((pos_gain / n > pen) & is_rep)
    cands = [candidates[i] for i in keep]
    cov = coverage[keep]
    covf = cov.astype(np.float64)  # BLAS-friendly copy for the matmuls
    pen = pen[keep]
    ncand = len(cands)
    triu = np.triu(np.ones((ncand, ncand), dtype=bool), k=1)

    total_pos = pos_w.sum()
    best = {
        "obj": total_pos / n,  # empty rule set
        "key": (0, 0, ()),
        "set": (),
    }

    def consider(obj, chosen):
        key = (len(chosen),
               sum(cands[i].degree for i in chosen),
               tuple(sorted(cands[i].columns for i in chosen)))
        if obj < best["obj"] - _TIE_TOL or (
                abs(obj - best["obj"]) <= _TIE_TOL and key < best["key"]):
            best["obj"] = min(obj, best["obj"])
            best["key"] = key
            best["set"] = chosen

    def objective_of(covered, pen_sum):
        return pen_sum + (pos_w @ ~covered + neg_w @ covered) / n

    # Seed the incumbent greedily (repeatedly add the clause with the best
    # marginal objective improvement) so pruning bites from the start.
    greedy = ()
    covered = np.zeros(prob.rows.shape[0], dtype=bool)
    pen_sum = 0.0
    obj = objective_of(covered, pen_sum)
    while len(greedy) < config.max_clauses:
        mask = cov & ~covered
        deltas = (mask @ pos_w - mask @ neg_w) / n - pen
        i = int(np.argmax(deltas))
        if deltas[i] <= _TIE_TOL:
            break
        covered = covered | cov[i]
        pen_sum += pen[i]
        greedy += (i,)
        obj -= deltas[i]
        consider(obj, greedy)

    def dfs(cand_idx, covered, pen_sum, chosen):
        obj = objective_of(covered, pen_sum)
        if chosen:
            consider(obj, chosen)
        remaining = config.max_clauses - len(chosen)
        if remaining == 0 or len(cand_idx) == 0:
            return
        # Optimistic per-clause gain: newly covered positives minus
        # penalty, ignoring overlap and false positives. It only shrinks
        # as coverage grows, so candidates at or below zero here stay
        # useless throughout this subtree and are dropped from it.
        unc = ~covered
        wpos = pos_w * unc
        p = covf[cand_idx] @ wpos
        gain = p / n - pen[cand_idx]
        live = gain > _TIE_TOL
        cand_idx = cand_idx[live]
        if len(cand_idx) == 0:
            return
        gain = gain[live]
        p = p[live]
        top = np.sort(gain)[::-1][:remaining]
        if obj - top.sum() > best["obj"] + _TIE_TOL:
            return
        # Partner-sum filter: a completion containing candidate i improves
        # on obj by at most gain[i] plus the best remaining-1 gains among
        # the others; if that cannot reach the incumbent, drop i from this
        # whole subtree (gains only shrink deeper).
        thr = obj - best["obj"] - _TIE_TOL
        if thr > 0:
            r = min(remaining - 1, len(gain) - 1)
            if r > 0:
                gs = np.sort(gain)[::-1]
                total = gs[:r].sum()
                nxt = gs[r] if len(gs) > r else 0.0
                partner = np.where(gain >= gs[r - 1], total - gain + nxt,
                                   total)
            else:
                partner = 0.0
            useful = gain + partner >= thr
            cand_idx = cand_idx[useful]
            if len(cand_idx) == 0:
                return
            gain = gain[useful]
            p = p[useful]
        sub_covf = covf[cand_idx]
        sub_pen = pen[cand_idx]
        wneg = neg_w * unc
        q = sub_covf @ wneg
        objs = obj - (p - q) / n + sub_pen
        cutoff = min(best["obj"], objs.min()) + _TIE_TOL
        for off in np.flatnonzero(objs <= cutoff):
            consider(float(objs[off]), chosen + (int(cand_idx[off]),))
        if remaining == 1:
            return
        if remaining == 2:
            # Close the last two picks in one shot: the union coverage of
            # every candidate pair follows from single and intersection
            # counts by inclusion-exclusion, so no recursion is needed.
            p2 = (sub_covf * wpos) @ sub_covf.T
            q2 = (sub_covf * wneg) @ sub_covf.T
            gain2 = ((p[:, None] + p[None, :] - p2)
                     - (q[:, None] + q[None, :] - q2)) / n
            pair_obj = obj - gain2 + sub_pen[:, None] + sub_pen[None, :]
            m = len(cand_idx)
            mask = triu[:m, :m]
            vals = pair_obj[mask]
            if len(vals):
                cutoff = min(best["obj"], vals.min()) + _TIE_TOL
                iu, ju = mask.nonzero()
                for off in np.flatnonzero(vals <= cutoff):
                    consider(float(vals[off]),
                             chosen + (int(cand_idx[iu[off]]),
                                       int(cand_idx[ju[off]])))
            return
        # Bound each child before recursing: its subtree can improve on
        # objs[j] by at most the top remaining-1 gains among the other
        # candidates (gains only shrink as coverage grows).
        r = min(remaining - 1, len(gain))
        gs = np.sort(gain)[::-1]
        total = gs[:r].sum()
        nxt = gs[r] if len(gs) > r else 0.0
        excl = np.where(gain >= gs[r - 1], total - gain + nxt, total)
        bounds = objs - excl
        # Branch best-looking child first; each child recurses only on
        # the candidates after it in this node's order, so every subset
        # is visited at most once.
        child_cov = cov[cand_idx] | covered
        order = np.argsort(objs, kind="stable")
        for rank, j in enumerate(order):
            if bounds[j] > best["obj"] + _TIE_TOL:
                continue
            dfs(cand_idx[order[rank + 1:]], child_cov[j],
                pen_sum + pen[cand_idx[j]], chosen + (int(cand_idx[j]),))

    dfs(np.arange(ncand), np.zeros(prob.rows.shape[0], dtype=bool), 0.0, ())
    return [cands[i] for i in best["set"]], best["obj"]


def fit(dataset, config=None, return_info=False):
    """Learn a DNF rule set by column generation plus exact selection.

    The pool starts with the empty clause and all degree-1 clauses;
    pricing adds negative-reduced-cost clauses until none remain. The
    integral rule set is then the exact optimum over all clauses up to
    max_degree with at most max_clauses clauses.
    """
    if config is None:
        config = BdrConfig()
    prob = _Problem(dataset)
    candidates = enumerate_clauses(config.max_degree)
    all_cov = prob.coverage(candidates)
    index_of = {c.columns: i for i, c in enumerate(candidates)}

    pool_ids = [i for i, c in enumerate(candidates) if c.degree <= 1]
    info = FitInfo()
    solution = None
    for _ in range(config.max_cg_iterations):
        pool = [candidates[i] for i in pool_ids]
        solution = solve_master(pool, dataset, config,
                                _problem=prob, _coverage=all_cov[pool_ids])
        info.lp_objectives.append(solution.objective)
        priced = price_clause(solution.duals, dataset, config,
                              _problem=prob, _candidates=candidates,
                              _coverage=all_cov)
        new_ids = [index_of[c.columns] for c, _ in priced
                   if index_of[c.columns] not in set(pool_ids)]
        if not new_ids:
            break
        pool_ids.extend(new_ids)

    rho = reduced_costs(solution.duals, candidates, dataset, config,
                        _problem=prob, _coverage=all_cov)
    # Pool columns can sit at their upper bound with a negative reduced
    # cost; optimality over the full clause space only requires that no
    # clause outside the pool prices negative.
    outside = np.setdiff1d(np.arange(len(candidates)), pool_ids)
    info.min_final_reduced_cost = (float(rho[outside].min())
                                   if outside.size else 0.0)
    info.certificate_ok = bool(info.min_final_reduced_cost >= -PRICING_TOL)
    info.pool_size = len(pool_ids)

    positive = ("Right" if getattr(dataset, "stage", None) is not None
                and getattr(dataset.stage, "name", "") == "LeftVsRight"
                else "Turn")
    chosen, obj = _select_best_subset(prob, candidates, all_cov, config)
    ruleset = RuleSet(clauses=chosen, positive_label=positive)
    info.objective = obj
    if return_info:
        return ruleset, info
    return ruleset


def ruleset_to_dict(ruleset, config=None, objective_value=None):
    doc = {
        "positive_label": ruleset.positive_label,
        "clauses": [[{"feature": f, "value": v.name} for f, v in c.literals]
                    for c in ruleset.clauses],
        "rendered": ruleset.render(),
    }
    if config is not None:
        doc["config"] = {
            "lambda0": config.lambda0, "lambda1": config.lambda1,
            "max_degree": config.max_degree, "max_clauses": config.max_clauses,
            "max_cg_iterations": config.max_cg_iterations,
        }
    if objective_value is not None:
        doc["objective"] = objective_value
    return doc


def ruleset_from_dict(doc):
    clauses = [make_clause(*((lit["feature"], CellKind[lit["value"]])
                             for lit in clause))
               for clause in doc["clauses"]]
    return RuleSet(clauses=clauses, positive_label=doc["positive_label"])


def write_ruleset(ruleset, path, config=None, objective_value=None):
    with open(path, "w") as fh:
        json.dump(ruleset_to_dict(ruleset, config, objective_value), fh,
                  indent=2, sort_keys=True)
        fh.write("\n")


def read_ruleset(path):
    with open(path) as fh:
        return ruleset_from_dict(json.load(fh))
