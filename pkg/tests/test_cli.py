import json

import numpy as np
import pytest

from gridrules import agent, trace
from gridrules.cli import build_parser, load_config, main
from gridrules.gridworld import (
    generate_suite, layout_hash, optimal_actions, read_suite, write_suite,
)

TINY_INI = """\
[environment]
max_steps = 40

[agent]
total_env_steps = 400
warmup_steps = 50
train_suite_size = 4
train_suite_seed = 910
target_sync_interval = 100

[eval]
suite_seed = 920
suite_size = 3

[trace]
suite_seed = 930
suite_size = 4
run_seeds = 1,2

[bdr]
max_degree = 2
max_clauses = 2
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return str(path)


def write_scripted_trace(path, base_seed=940, count=5):
    suite = generate_suite(base_seed, count)
    plans = {layout_hash(l): optimal_actions(l) for l in suite}
    policy = lambda state: plans[layout_hash(state.layout)][state.steps_taken]
    records = trace.collect({1: policy}, suite)
    trace.write_trace(records, path)
    return records


class TestLoadConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg.train.learning_rate == agent.TrainConfig().learning_rate
        assert cfg.eval_suite_size == 100
        assert cfg.run_seeds == (1, 2, 3)

    def test_overrides(self, tiny_config):
        cfg = load_config(tiny_config)
        assert cfg.max_steps == 40
        assert cfg.train.total_env_steps == 400
        assert cfg.train.suite_size == 4
        assert cfg.train.max_steps == 40  # environment flows into training
        assert cfg.run_seeds == (1, 2)
        assert cfg.bdr.max_degree == 2

    def test_unknown_keys_ignored(self, tmp_path):
        path = tmp_path / "extra.ini"
        path.write_text("[agent]\nnot_a_key = 5\n")
        cfg = load_config(str(path))
        assert cfg.train.gamma == agent.TrainConfig().gamma

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "nope.ini"))


class TestParser:
    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("gen-suite", "train", "eval", "collect", "learn-rules",
                    "report", "shield-eval", "pipeline"):
            assert cmd in out

    def test_missing_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_shield_eval_needs_rules(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["shield-eval", "--checkpoint", "x.npz", "--suite", "s.txt"])
        assert exc.value.code == 2
        assert "--rules or --guardrails" in capsys.readouterr().err


class TestGenSuite:
    def test_writes_suite(self, tmp_path, capsys):
        out = str(tmp_path / "suite.txt")
        rc = main(["gen-suite", "--base-seed", "7", "--count", "6",
                   "--out", out])
        assert rc == 0
        assert len(read_suite(out)) == 6
        assert "wrote 6 layouts" in capsys.readouterr().out

    def test_exclude(self, tmp_path):
        first = str(tmp_path / "a.txt")
        second = str(tmp_path / "b.txt")
        assert main(["gen-suite", "--base-seed", "7", "--count", "5",
                     "--out", first]) == 0
        assert main(["gen-suite", "--base-seed", "7", "--count", "5",
                     "--out", second, "--exclude", first]) == 0
        a = {layout_hash(l) for l in read_suite(first)}
        b = {layout_hash(l) for l in read_suite(second)}
        assert not a & b

    def test_error_exit_code(self, tmp_path, capsys):
        rc = main(["gen-suite", "--base-seed", "1", "--count", "0",
                   "--out", str(tmp_path / "x.txt")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEvalFlow:
    def test_train_then_eval(self, tmp_path, tiny_config, capsys):
        suite_path = str(tmp_path / "suite.txt")
        write_suite(generate_suite(910, 4), suite_path)
        ckpt = str(tmp_path / "net.npz")
        log = str(tmp_path / "log.csv")
        rc = main(["--config", tiny_config, "train", "--suite", suite_path,
                   "--seed", "1", "--out", ckpt, "--log", log])
        assert rc == 0
        net = agent.load_checkpoint(ckpt)
        assert net.layer_sizes == (129, 128, 64, 3)
        with open(log) as fh:
            assert fh.readline().strip() == agent.TRAIN_LOG_HEADER

        rc = main(["--config", tiny_config, "eval", "--checkpoint", ckpt,
                   "--suite", suite_path])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mean_reward=" in out and "success=" in out

    def test_train_determinism(self, tmp_path, tiny_config):
        suite_path = str(tmp_path / "suite.txt")
        write_suite(generate_suite(910, 4), suite_path)
        a, b = str(tmp_path / "a.npz"), str(tmp_path / "b.npz")
        for out in (a, b):
            assert main(["--config", tiny_config, "train", "--suite",
                         suite_path, "--seed", "3", "--out", out]) == 0
        na, nb = agent.load_checkpoint(a), agent.load_checkpoint(b)
        for pa, pb in zip(na.params, nb.params):
            assert np.array_equal(pa, pb)

    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        suite_path = str(tmp_path / "suite.txt")
        write_suite(generate_suite(910, 2), suite_path)
        rc = main(["eval", "--checkpoint", str(tmp_path / "none.npz"),
                   "--suite", suite_path])
        assert rc == 1
        assert "not found" in capsys.readouterr().err


class TestCollectLearnReport:
    def test_collect(self, tmp_path, tiny_config):
        suite_path = str(tmp_path / "suite.txt")
        write_suite(generate_suite(930, 3), suite_path)
        ckpt = str(tmp_path / "net.npz")
        agent.save_checkpoint(agent.init_network(0), ckpt)
        out = str(tmp_path / "trace.csv")
        rc = main(["--config", tiny_config, "collect", "--suite", suite_path,
                   "--checkpoint", f"1={ckpt}", "--out", out])
        assert rc == 0
        records = trace.read_trace(out)
        assert {r.run_seed for r in records} == {1}

    def test_collect_bad_spec(self, tmp_path, capsys):
        suite_path = str(tmp_path / "suite.txt")
        write_suite(generate_suite(930, 2), suite_path)
        rc = main(["collect", "--suite", suite_path,
                   "--checkpoint", "no-equals-sign",
                   "--out", str(tmp_path / "t.csv")])
        assert rc == 1
        assert "SEED=PATH" in capsys.readouterr().err

    def test_learn_rules_and_report(self, tmp_path, capsys):
        trace_path = str(tmp_path / "trace.csv")
        write_scripted_trace(trace_path)
        turn = str(tmp_path / "rules_turn.json")
        right = str(tmp_path / "rules_right.json")
        rc = main(["learn-rules", "--trace", trace_path,
                   "--out-turn", turn, "--out-right", right])
        assert rc == 0
        out = capsys.readouterr().out
        assert "THEN action==TURN" in out
        assert "certificate ok" in out

        text_out = str(tmp_path / "report.txt")
        json_out = str(tmp_path / "report.json")
        rc = main(["report", "--trace", trace_path, "--rules-turn", turn,
                   "--rules-right", right, "--text-out", text_out,
                   "--json-out", json_out])
        assert rc == 0
        with open(json_out) as fh:
            doc = json.load(fh)
        assert set(doc["stages"]) == {"Turn", "Right"}

    def test_single_stage_flag(self, tmp_path):
        trace_path = str(tmp_path / "trace.csv")
        write_scripted_trace(trace_path)
        turn = str(tmp_path / "turn.json")
        rc = main(["learn-rules", "--trace", trace_path,
                   "--stage", "forward_vs_turn", "--out-turn", turn])
        assert rc == 0
        assert (tmp_path / "turn.json").exists()
        assert not (tmp_path / "rules_right.json").exists()


class TestShieldEval:
    def test_flow(self, tmp_path, capsys):
        suite_path = str(tmp_path / "suite.txt")
        write_suite(generate_suite(950, 5), suite_path)
        ckpt = str(tmp_path / "net.npz")
        agent.save_checkpoint(agent.init_network(1), ckpt)
        trace_path = str(tmp_path / "trace.csv")
        write_scripted_trace(trace_path)
        turn = str(tmp_path / "turn.json")
        assert main(["learn-rules", "--trace", trace_path, "--stage",
                     "forward_vs_turn", "--out-turn", turn]) == 0
        capsys.readouterr()

        out = str(tmp_path / "shield.txt")
        guardrails_out = str(tmp_path / "guardrails.json")
        rc = main(["shield-eval", "--checkpoint", ckpt, "--suite", suite_path,
                   "--rules", turn, "--guardrails-out", guardrails_out,
                   "--out", out])
        assert rc == 0
        text = capsys.readouterr().out
        assert "base:" in text and "shielded:" in text and "delta:" in text
        assert (tmp_path / "guardrails.json").exists()
        with open(out) as fh:
            assert "fallbacks=" in fh.read()

        # rerun from the saved guardrail spec file
        rc = main(["shield-eval", "--checkpoint", ckpt, "--suite", suite_path,
                   "--guardrails", guardrails_out])
        assert rc == 0


class TestPipeline:
    def run_pipeline(self, tmp_path, tiny_config, name):
        outdir = str(tmp_path / name)
        rc = main(["--config", tiny_config, "pipeline", "--out-dir", outdir])
        return rc, tmp_path / name

    def test_end_to_end_outputs(self, tmp_path, tiny_config, capsys):
        rc, outdir = self.run_pipeline(tmp_path, tiny_config, "run")
        assert rc == 0
        expected = ["train_suite.txt", "eval_suite.txt", "test_suite.txt",
                    "checkpoint_seed1.npz", "checkpoint_seed2.npz",
                    "train_log_seed1.csv", "train_log_seed2.csv",
                    "eval.txt", "trace.csv", "rules_turn.json",
                    "rules_right.json", "report.txt", "report.json",
                    "guardrails.json", "shield_eval.txt"]
        for name in expected:
            assert (outdir / name).exists(), name
        train_hashes = {layout_hash(l)
                        for l in read_suite(outdir / "train_suite.txt")}
        for other in ("eval_suite.txt", "test_suite.txt"):
            assert not train_hashes & {layout_hash(l)
                                       for l in read_suite(outdir / other)}

    def test_deterministic_reruns(self, tmp_path, tiny_config, capsys):
        rc_a, dir_a = self.run_pipeline(tmp_path, tiny_config, "a")
        rc_b, dir_b = self.run_pipeline(tmp_path, tiny_config, "b")
        assert rc_a == rc_b == 0
        for name in ("trace.csv", "rules_turn.json", "rules_right.json",
                     "report.txt", "report.json", "guardrails.json",
                     "eval.txt", "shield_eval.txt"):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name
