import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridrules.bdr import (
    BdrConfig, Clause, RuleSet, PRICING_TOL,
    enumerate_clauses, fit, literal_clause, make_clause, objective,
    predict, predict_row, price_clause, read_ruleset, reduced_costs,
    ruleset_from_dict, ruleset_to_dict, solve_master, write_ruleset,
)
from gridrules.gridworld import Action, CellKind, FeatureFrame
from gridrules.trace import (
    BinaryDataset, COLUMNS, COLUMN_INDEX, Stage, TraceRecord, binarize,
    frame_row,
)

E, W, L, G = CellKind.Empty, CellKind.Wall, CellKind.Lava, CellKind.Goal


def dataset_from_frames(frames, labels, stage=Stage.ForwardVsTurn):
    rows = np.vstack([frame_row(f) for f in frames])
    return BinaryDataset(columns=list(COLUMNS), rows=rows,
                         labels=np.asarray(labels, dtype=bool), stage=stage)


def random_dataset(rng, n_rows):
    frames = [FeatureFrame(*(CellKind(int(v))
                             for v in rng.integers(4, size=5)))
              for _ in range(n_rows)]
    labels = rng.random(n_rows) < 0.5
    return dataset_from_frames(frames, labels)


def brute_force_objective(dataset, config):
    """Oracle: exact minimum over every rule set of at most max_clauses
    clauses, enumerating all clause combinations directly.

    Vectorized over the last clause so max_clauses=3 stays tractable.
    """
    clauses = enumerate_clauses(config.max_degree)
    rows = dataset.rows
    labels = dataset.labels
    n = len(labels)
    cov = np.ones((len(clauses), n), dtype=bool)
    for i, c in enumerate(clauses):
        if c.columns:
            cov[i] = rows[:, c.columns].all(axis=1)
    pen = np.array([config.penalty(c) for c in clauses])
    # drop clauses with no positive coverage: they can never help
    useful = np.flatnonzero(cov @ labels > 0)
    best = labels.sum() / n  # empty rule set
    assert config.max_clauses >= 3
    for size in range(1, min(config.max_clauses, 3) + 1):
        if size == 1:
            objs = pen[useful] + ((labels & ~cov[useful]).sum(axis=1)
                                  + (~labels & cov[useful]).sum(axis=1)) / n
            best = min(best, objs.min())
        elif size == 2:
            for a in useful:
                merged = cov[a] | cov[useful]
                objs = (pen[a] + pen[useful]
                        + ((labels & ~merged).sum(axis=1)
                           + (~labels & merged).sum(axis=1)) / n)
                best = min(best, objs.min())
        else:
            for a, b in itertools.combinations(useful, 2):
                ab = cov[a] | cov[b]
                merged = ab | cov[useful]
                objs = (pen[a] + pen[b] + pen[useful]
                        + ((labels & ~merged).sum(axis=1)
                           + (~labels & merged).sum(axis=1)) / n)
                best = min(best, objs.min())
    return best


def naive_simplex_lp(c, a_ub, b_ub, n_bounded):
    """Oracle LP solver: dense primal simplex with Bland's rule on the
    standard-form tableau. First n_bounded variables also get an upper
    bound of 1."""
    m, nvar = a_ub.shape
    # standard form: a_ub x + s = b_ub with s >= 0, plus x_j + u_j = 1
    rows = m + n_bounded
    cols = nvar + m + n_bounded
    tab = np.zeros((rows + 1, cols + 1))
    tab[:m, :nvar] = a_ub
    tab[:m, nvar:nvar + m] = np.eye(m)
    tab[:m, -1] = b_ub
    for j in range(n_bounded):
        tab[m + j, j] = 1.0
        tab[m + j, nvar + m + j] = 1.0
        tab[m + j, -1] = 1.0
    tab[-1, :nvar] = c
    basis = list(range(nvar, nvar + m)) + list(range(nvar + m, cols))
    # fix infeasible slack basis (b_ub < 0) via big-M artificials
    big_m = 1e7
    for i in range(rows):
        if tab[i, -1] < 0:
            tab[i, :] *= -1
            art = tab.shape[1] - 1
            tab = np.insert(tab, art, 0.0, axis=1)
            tab[i, art] = 1.0
            tab[-1, art] = big_m
            basis[i] = art
    for i in range(rows):
        if tab[-1, basis[i]] != 0.0:
            tab[-1, :] -= tab[-1, basis[i]] * tab[i, :]
    for _ in range(20000):
        j = next((j for j in range(tab.shape[1] - 1)
                  if tab[-1, j] < -1e-10), None)
        if j is None:
            break
        ratios = [(tab[i, -1] / tab[i, j], i) for i in range(rows)
                  if tab[i, j] > 1e-12]
        if not ratios:
            raise RuntimeError("unbounded LP")
        _, i = min(ratios)
        tab[i, :] /= tab[i, j]
        for r in range(rows + 1):
            if r != i and tab[r, j] != 0.0:
                tab[r, :] -= tab[r, j] * tab[i, :]
        basis[i] = j
    else:
        raise RuntimeError("simplex did not converge")
    x = np.zeros(tab.shape[1] - 1)
    for i, b in enumerate(basis):
        x[b] = tab[i, -1]
    return x[:nvar], float(-tab[-1, -1])


class TestClause:
    def test_sorted_and_frozen(self):
        c = Clause((10, 2))
        assert c.columns == (2, 10)
        assert c.degree == 2

    def test_same_feature_rejected(self):
        with pytest.raises(ValueError, match="same feature"):
            Clause((0, 1))  # both are `left` columns

    def test_empty_clause_covers_everything(self):
        c = Clause(())
        assert c.covers_frame(FeatureFrame(E, E, E, E, E))
        assert c.covers_row(np.zeros(20, dtype=bool))
        assert c.render() == "(TRUE)"

    def test_covers_frame(self):
        c = make_clause(("forward", L), ("left", W))
        assert c.covers_frame(FeatureFrame(W, E, L, E, E))
        assert not c.covers_frame(FeatureFrame(E, E, L, E, E))

    def test_covers_row_matches_frame(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            frame = FeatureFrame(*(CellKind(int(v))
                                   for v in rng.integers(4, size=5)))
            cols = tuple(rng.choice(20, size=2, replace=False))
            try:
                clause = Clause(cols)
            except ValueError:
                continue
            assert clause.covers_row(frame_row(frame)) == \
                clause.covers_frame(frame)

    def test_render(self):
        c = make_clause(("forward", L))
        assert c.render() == "(forward == Lava)"


class TestRuleSet:
    def test_dedupe_and_superset_drop(self):
        a = make_clause(("forward", L))
        b = make_clause(("forward", L), ("left", W))  # implied by a
        rs = RuleSet(clauses=[b, a, a], positive_label="Turn")
        assert rs.clauses == [a]

    def test_render(self):
        rs = RuleSet(clauses=[make_clause(("forward", L))],
                     positive_label="Turn")
        assert rs.render() == "IF (forward == Lava) THEN action==TURN"

    def test_empty_render(self):
        rs = RuleSet(clauses=[], positive_label="Right")
        assert rs.render() == "IF (FALSE) THEN action==RIGHT"

    def test_predict(self):
        rs = RuleSet(clauses=[make_clause(("forward", L)),
                              make_clause(("right", G))],
                     positive_label="Turn")
        assert predict(rs, FeatureFrame(E, G, E, E, E))
        assert predict(rs, FeatureFrame(E, E, L, E, E))
        assert not predict(rs, FeatureFrame(E, E, E, L, L))


class TestEnumerateClauses:
    def test_count_degree_2(self):
        clauses = enumerate_clauses(2)
        # 1 empty + 20 singles + (C(20,2)=190 minus 5*C(4,2)=30 same-feature)
        assert len(clauses) == 1 + 20 + 160

    def test_count_degree_3(self):
        clauses = enumerate_clauses(3)
        # degree-3: C(5,3)=10 feature triples * 4^3 value choices
        assert len(clauses) == 1 + 20 + 160 + 640

    def test_deterministic_order(self):
        assert enumerate_clauses(2) == enumerate_clauses(2)
        degrees = [c.degree for c in enumerate_clauses(3)]
        assert degrees == sorted(degrees)


class TestObjective:
    def test_hand_computed(self):
        frames = [FeatureFrame(E, E, L, E, E),   # covered, positive
                  FeatureFrame(E, E, L, E, E),   # covered, positive
                  FeatureFrame(E, E, E, E, E),   # uncovered, positive -> FN
                  FeatureFrame(W, E, L, E, E)]   # covered, negative -> FP
        ds = dataset_from_frames(frames, [True, True, True, False])
        rs = RuleSet(clauses=[make_clause(("forward", L))],
                     positive_label="Turn")
        cfg = BdrConfig(lambda0=0.01, lambda1=0.002)
        # (1 FN + 1 FP)/4 + 0.01 + 0.002*1
        assert objective(rs, ds, cfg) == pytest.approx(0.5 + 0.012)

    def test_empty_ruleset_counts_positives(self):
        ds = dataset_from_frames([FeatureFrame(E, E, E, E, E)] * 4,
                                 [True, True, False, False])
        rs = RuleSet(clauses=[], positive_label="Turn")
        assert objective(rs, ds, BdrConfig()) == pytest.approx(0.5)


class TestSolveMaster:
    def test_matches_naive_simplex(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            ds = random_dataset(rng, 40)
            cfg = BdrConfig()
            pool = enumerate_clauses(1)
            sol = solve_master(pool, ds, cfg)
            # rebuild the same LP and solve with the oracle simplex
            from gridrules.bdr import _Problem
            prob = _Problem(ds)
            cov = prob.coverage(pool)
            pos_idx = np.flatnonzero(prob.pos_w > 0)
            c_w = cov @ prob.neg_w / prob.n + np.array(
                [cfg.penalty(k) for k in pool])
            c_s = prob.pos_w[pos_idx] / prob.n
            a_ub = np.hstack([-cov[:, pos_idx].T.astype(float),
                              -np.eye(pos_idx.size)])
            _, obj = naive_simplex_lp(np.concatenate([c_w, c_s]), a_ub,
                                      -np.ones(pos_idx.size), len(pool))
            assert sol.objective == pytest.approx(obj, abs=1e-7)

    def test_no_positives_short_circuit(self):
        ds = dataset_from_frames([FeatureFrame(E, E, E, E, E)] * 3,
                                 [False, False, False])
        sol = solve_master(enumerate_clauses(1), ds, BdrConfig())
        assert sol.objective == 0.0
        assert np.all(sol.clause_weights == 0.0)

    def test_empty_pool(self):
        ds = dataset_from_frames([FeatureFrame(E, E, E, E, E)], [True])
        with pytest.raises(ValueError):
            solve_master([], ds, BdrConfig())


class TestPricing:
    def brute_reduced_cost(self, clause, duals, ds, cfg):
        """Oracle: compute rho from its definition row by row."""
        from gridrules.bdr import _Problem
        prob = _Problem(ds)
        rho = cfg.penalty(clause)
        pos_idx = np.flatnonzero(prob.pos_w > 0)
        for i in range(prob.rows.shape[0]):
            covers = clause.covers_row(prob.rows[i])
            if covers:
                rho += prob.neg_w[i] / prob.n
        for j, i in enumerate(pos_idx):
            if clause.covers_row(prob.rows[i]):
                rho -= duals[j]
        return rho

    def test_reduced_costs_match_definition(self):
        rng = np.random.default_rng(7)
        ds = random_dataset(rng, 30)
        cfg = BdrConfig(max_degree=2)
        pool = enumerate_clauses(1)
        sol = solve_master(pool, ds, cfg)
        sample = enumerate_clauses(2)[::17]
        rho = reduced_costs(sol.duals, sample, ds, cfg)
        for clause, r in zip(sample, rho):
            assert r == pytest.approx(
                self.brute_reduced_cost(clause, sol.duals, ds, cfg))

    def test_price_clause_returns_most_negative(self):
        rng = np.random.default_rng(8)
        ds = random_dataset(rng, 30)
        cfg = BdrConfig(max_degree=2)
        sol = solve_master(enumerate_clauses(1), ds, cfg)
        priced = price_clause(sol.duals, ds, cfg, limit=5)
        rhos = [r for _, r in priced]
        assert rhos == sorted(rhos)
        assert all(r < -PRICING_TOL for r in rhos)


class TestFit:
    def test_planted_single_rule(self):
        rng = np.random.default_rng(1)
        frames, labels = [], []
        for _ in range(200):
            frame = FeatureFrame(*(CellKind(int(v))
                                   for v in rng.integers(4, size=5)))
            frames.append(frame)
            labels.append(frame.forward == L)
        rs = fit(dataset_from_frames(frames, labels))
        assert rs.clauses == [make_clause(("forward", L))]

    def test_planted_two_clause_rule(self):
        rng = np.random.default_rng(2)
        target = RuleSet(clauses=[make_clause(("forward", L)),
                                  make_clause(("left", E), ("forward", W))],
                         positive_label="Turn")
        frames, labels = [], []
        for _ in range(400):
            frame = FeatureFrame(*(CellKind(int(v))
                                   for v in rng.integers(4, size=5)))
            frames.append(frame)
            labels.append(predict(target, frame))
        rs = fit(dataset_from_frames(frames, labels))
        assert rs.clauses == target.clauses

    def test_noisy_majority_rule(self):
        rng = np.random.default_rng(3)
        frames, labels = [], []
        for _ in range(300):
            frame = FeatureFrame(*(CellKind(int(v))
                                   for v in rng.integers(4, size=5)))
            label = frame.forward == L
            if rng.random() < 0.05:
                label = not label
            frames.append(frame)
            labels.append(label)
        rs = fit(dataset_from_frames(frames, labels),
                 BdrConfig(max_degree=2, max_clauses=3))
        assert make_clause(("forward", L)) in rs.clauses

    def test_exact_vs_brute_force(self):
        rng = np.random.default_rng(4)
        cfg = BdrConfig(max_degree=2, max_clauses=3)
        for trial in range(4):
            ds = random_dataset(rng, 25)
            rs, info = fit(ds, cfg, return_info=True)
            assert info.objective == pytest.approx(
                brute_force_objective(ds, cfg), abs=1e-9)
            assert objective(rs, ds, cfg) == pytest.approx(info.objective,
                                                           abs=1e-9)

    def test_lp_objectives_monotone(self):
        rng = np.random.default_rng(5)
        ds = random_dataset(rng, 60)
        _, info = fit(ds, BdrConfig(max_degree=2, max_clauses=3),
                      return_info=True)
        objs = info.lp_objectives
        assert all(a >= b - 1e-9 for a, b in zip(objs, objs[1:]))

    def test_certificate(self):
        rng = np.random.default_rng(6)
        ds = random_dataset(rng, 60)
        _, info = fit(ds, BdrConfig(max_degree=2, max_clauses=3),
                      return_info=True)
        assert info.certificate_ok
        assert info.min_final_reduced_cost >= -PRICING_TOL

    def test_lp_lower_bounds_integral(self):
        rng = np.random.default_rng(9)
        # the LP has no cardinality constraint, so it lower-bounds the
        # cardinality-capped integral optimum
        cfg = BdrConfig(max_degree=2, max_clauses=3)
        ds = random_dataset(rng, 25)
        _, info = fit(ds, cfg, return_info=True)
        assert info.lp_objectives[-1] <= info.objective + 1e-9

    def test_positive_label_by_stage(self):
        frames = [FeatureFrame(E, E, L, E, E), FeatureFrame(E, E, E, E, E)]
        turn = dataset_from_frames(frames, [True, False],
                                   stage=Stage.ForwardVsTurn)
        right = dataset_from_frames(frames, [True, False],
                                    stage=Stage.LeftVsRight)
        assert fit(turn).positive_label == "Turn"
        assert fit(right).positive_label == "Right"

    @settings(max_examples=15, deadline=None)
    @given(st.integers(min_value=0, max_value=10000))
    def test_fitted_objective_never_beaten_by_singletons(self, seed):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng, 20)
        cfg = BdrConfig(max_degree=2, max_clauses=3)
        rs, info = fit(ds, cfg, return_info=True)
        for clause in enumerate_clauses(1):
            alt = RuleSet(clauses=[clause], positive_label="Turn")
            assert info.objective <= objective(alt, ds, cfg) + 1e-9


class TestRulesetFile:
    def test_round_trip(self, tmp_path):
        rs = RuleSet(clauses=[make_clause(("forward", L)),
                              make_clause(("left", E), ("forward", W))],
                     positive_label="Turn")
        path = tmp_path / "rules.json"
        write_ruleset(rs, path, config=BdrConfig(), objective_value=0.125)
        again = read_ruleset(path)
        assert again.clauses == rs.clauses
        assert again.positive_label == "Turn"

    def test_dict_round_trip(self):
        rs = RuleSet(clauses=[make_clause(("right", G))],
                     positive_label="Right")
        doc = ruleset_to_dict(rs)
        assert doc["rendered"] == "IF (right == Goal) THEN action==RIGHT"
        assert ruleset_from_dict(doc).clauses == rs.clauses
