import json
import time

import pytest
import torch

from csarec.cli import main
from csarec.config import ConfigError, PRESETS, RunConfig
from csarec.datasets import Feedback
from csarec.model import network_payload

from oracles import successor_network


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig.load()
        t = cfg.train_config()
        assert (t.gamma, t.batch_size, t.learning_rate) == (0.5, 256, 0.01)
        assert t.augmentation.to_dict() == dict(kind="gaussian", sigma=0.003, alpha=0.001, beta=0.005,
                                                min_len_T=3, drop_p=0.1, n=2)
        assert cfg.encoder_config(10).embedding_dim == 64
        assert cfg.rewards() == {"click": 0.2, "purchase": 1.0}

    @pytest.mark.parametrize("method,weights,mode,kind", [
        ("normal", (1, 0, 0, 0), "off", "gaussian"),
        ("sqn", (1, 1, 0, 0), "off", "gaussian"),
        ("csa-n", (1, 1, 1, 1), "state", "gaussian"),
        ("csa-u", (1, 1, 1, 1), "state", "uniform"),
        ("csa-m", (1, 1, 1, 1), "state", "item_mask"),
        ("csa-d", (1, 1, 1, 1), "state", "dim_dropout"),
    ])
    def test_presets(self, method, weights, mode, kind):
        t = RunConfig.load(overrides=[f"train.method={method}"]).train_config()
        w = t.weights
        assert (w.w_s, w.w_q, w.w_a, w.w_c) == weights
        assert t.contrastive_mode == mode and t.augmentation.kind == kind
        assert set(PRESETS) == {"normal", "sqn", "csa-n", "csa-u", "csa-m", "csa-d"}

    def test_precedence(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[train]\nmethod = sqn\ngamma = 0.7\n[loss]\nw_q = 2\n")
        cfg = RunConfig.load(ini, ["train.gamma=0.9"])
        assert cfg["train"]["gamma"] == 0.9
        assert cfg["loss"]["w_q"] == 2.0 and cfg["loss"]["w_a"] == 0.0

    def test_all_problems_reported(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.load(text="[train]\ngamma = 2\nbatch_size = x\n[loss]\nw_c = -1\nbogus = 1\n[nope]\na=1\n")
        msg = str(err.value)
        for frag in ("train.gamma", "train.batch_size", "loss.w_c", "loss.bogus", "[nope]"):
            assert frag in msg
        assert "\n" not in msg

    def test_bad_override_syntax(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            RunConfig.load(overrides=["gamma=0.1"])

    def test_feedback_map(self):
        cfg = RunConfig.load(overrides=["data.feedback_map=view:click,addtocart:purchase"])
        assert cfg.feedback_map() == {"view": Feedback.CLICK, "addtocart": Feedback.PURCHASE}

    def test_ini_round_trip(self, tmp_path):
        cfg = RunConfig.load(overrides=["train.method=csa-m", "augment.min_len_T=4", "data.split_ratios=0.7,0.2,0.1"])
        (tmp_path / "echo.ini").write_text(cfg.to_ini())
        assert RunConfig.load(tmp_path / "echo.ini").as_dict() == cfg.as_dict()


def run(*argv):
    return main([str(a) for a in argv])


def synth(tmp_path, sessions=300, items=20):
    tsv = tmp_path / "sessions.tsv"
    assert run("synth-sessions", "--sessions", sessions, "--items", items, "--seed", 1, "--out", tsv) == 0
    return tsv


FAST = ["--set", "encoder.embedding_dim=8", "--set", "train.batch_size=64", "--set", "train.max_epochs=1"]


class TestCLI:
    def test_prepare_data(self, tmp_path, fixture_tsv):
        out = tmp_path / "data"
        before = fixture_tsv.read_bytes()
        assert run("prepare-data", "--input", fixture_tsv, "--out", out, "--set", "data.max_len=3") == 0
        assert fixture_tsv.read_bytes() == before
        items = json.loads((out / "items.json").read_text())
        assert items["raw_item_ids"] == ["101", "205", "300", "410"]
        summary = json.loads((out / "summary.json").read_text())
        assert sum(v["sessions"] for v in summary["splits"].values()) == 3
        assert {p.name for p in out.iterdir()} == {"split.json", "items.json", "train.npz", "validation.npz",
                                                   "test.npz", "summary.json", "config.ini"}
        assert not list(out.glob("*.tmp"))

    def test_config_error_exit_code(self, tmp_path, fixture_tsv, capsys):
        code = run("prepare-data", "--input", fixture_tsv, "--out", tmp_path, "--set", "train.gamma=5",
                   "--set", "augment.kind=crop")
        err = capsys.readouterr().err
        assert code == 2
        assert err.startswith("error: invalid configuration") and err.count("\n") == 1
        assert "train.gamma" in err and "augment.kind" in err

    def test_missing_input(self, tmp_path, capsys):
        assert run("prepare-data", "--input", tmp_path / "nope.tsv", "--out", tmp_path / "d") == 1
        assert "not found" in capsys.readouterr().err

    def test_train_zero_epochs(self, tmp_path):
        data = tmp_path / "data"
        run("prepare-data", "--input", synth(tmp_path, 60), "--out", data)
        run_dir = tmp_path / "run"
        assert run("train", "--data", data, "--out", run_dir, *FAST, "--set", "train.max_epochs=0") == 0
        assert (run_dir / "best.pt").exists() and (run_dir / "last.pt").exists()
        assert (run_dir / "train_log.jsonl").read_text() == ""
        assert RunConfig.load(run_dir / "config.ini")["train"]["max_epochs"] == 0

    def test_evaluate_oracle_head(self, tmp_path):
        # a 6-item cycle corpus scored by the hand-built successor head
        n = 6
        lines = ["session_id\titem_id\tfeedback\ttimestamp"]
        for s in range(30):
            for t in range(5):
                fb = "purchase" if (s + t) % 3 == 0 else "click"
                lines.append(f"s{s:02d}\t{(s + t) % n}\t{fb}\t{t}")
        (tmp_path / "cycle.tsv").write_text("\n".join(lines) + "\n")
        data = tmp_path / "data"
        assert run("prepare-data", "--input", tmp_path / "cycle.tsv", "--out", data, "--set", "data.max_len=4") == 0
        ckpt = tmp_path / "oracle.pt"
        torch.save(network_payload(successor_network(n)), ckpt)
        out = tmp_path / "m.json"
        assert run("evaluate", "--checkpoint", ckpt, "--data", data, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert all(v == 1.0 for k, v in doc.items() if k != "n") and doc["n"] > 0

    def test_evaluate_catalog_mismatch(self, tmp_path, fixture_tsv, capsys):
        data = tmp_path / "data"
        run("prepare-data", "--input", fixture_tsv, "--out", data)
        ckpt = tmp_path / "o.pt"
        torch.save(network_payload(successor_network(9)), ckpt)
        assert run("evaluate", "--checkpoint", ckpt, "--data", data, "--split", "train", "--feedback", "all",
                   "--out", tmp_path / "m.json") == 1
        assert "items" in capsys.readouterr().err

    def test_full_pipeline_rerunnable(self, tmp_path):
        start = time.time()
        tsv = synth(tmp_path, 400)
        matrix = tmp_path / "matrix.txt"
        assert run("synth-matrix", "--users", 10, "--items", 20, "--out", matrix) == 0
        docs = []
        for rep in ("a", "b"):
            base = tmp_path / rep
            assert run("prepare-data", "--input", tsv, "--out", base / "data") == 0
            assert run("train", "--data", base / "data", "--out", base / "run", *FAST, "--seed", 3) == 0
            assert run("evaluate", "--checkpoint", base / "run" / "best.pt", "--data", base / "data",
                       "--out", base / "metrics.json") == 0
            assert run("simulate", "--checkpoint", base / "run" / "best.pt", "--matrix", matrix,
                       "--rounds", 5, "--reps", 2, "--out", base / "curve.json") == 0
            docs.append([(base / f).read_text() for f in ("data/split.json", "metrics.json", "curve.json",
                                                           "run/validation.json")])
        assert docs[0] == docs[1]
        curve = json.loads((tmp_path / "a" / "curve.json").read_text())
        assert len(curve["curve"]) == 5 and curve["gamma"] == 0.5 and curve["repetitions"] == 2
        report = tmp_path / "report"
        assert run("report", tmp_path / "a" / "metrics.json", tmp_path / "a" / "curve.json",
                   tmp_path / "a" / "run" / "train_log.jsonl", "--out", report) == 0
        assert {"summary.txt", "curves.png", "losses.png"} <= {p.name for p in report.iterdir()}
        assert "hr@5" in (report / "summary.txt").read_text()
        assert time.time() - start < 120

    def test_report_rejects_unknown_document(self, tmp_path):
        (tmp_path / "x.json").write_text("[1, 2]")
        assert run("report", tmp_path / "x.json", "--out", tmp_path / "r") == 1
