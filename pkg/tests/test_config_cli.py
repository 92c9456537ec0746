import csv
import json
from pathlib import Path

import pytest

from omniwalk.cli import main
from omniwalk.config import RunConfig, load_config, parse_config_text
from omniwalk.mathkit import ConfigurationError

ROOT = Path(__file__).parents[1]

TINY = """
[run]
env = "pointmass"
seed = 3
epochs = 3
checkpoint_every = 1
max_episode_steps = 30

[ppo]
hidden = [8, 8]
n_envs = 2
steps = 20
minibatch = 20
updates = 2

[scheduler]
zeta = 4
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# configuration


def test_round_trip_toml_and_json():
    cfg = RunConfig()
    cfg.run.epochs = 7
    cfg.ppo.hidden = (32, 16)
    assert parse_config_text(cfg.to_toml()).to_dict() == cfg.to_dict()
    assert parse_config_text(cfg.to_json(), "json").to_dict() == cfg.to_dict()


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[run]\nepochs = 3\n\n[ppo]\nlr = 1e-4\nlearning_rate = 3\n")
    with pytest.raises(ConfigurationError, match=r"ppo\.learning_rate.*bad\.toml:6"):
        load_config(p)


def test_unknown_table_reports_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[run]\nepochs = 3\n[optimizer]\nlr = 1\n")
    with pytest.raises(ConfigurationError, match=r"optimizer.*bad\.toml:3"):
        load_config(p)


def test_missing_epochs(tmp_path):
    p = tmp_path / "noepochs.toml"
    p.write_text("[run]\nseed = 1\n")
    with pytest.raises(ConfigurationError, match=r"run\.epochs"):
        load_config(p)


def test_wrong_type(tmp_path):
    p = tmp_path / "t.toml"
    p.write_text("[run]\nepochs = \"many\"\n")
    with pytest.raises(ConfigurationError, match=r"run\.epochs.*integer"):
        load_config(p)


def test_defaults_audit():
    c = RunConfig()
    assert (c.reward.w_vel, c.reward.w_reg, c.reward.w_alive, c.reward.w_foot) == (42, 4, 4, 18)
    assert (c.reward.l_vel, c.reward.l_reg, c.reward.l_foot) == (9, 3, 10)
    assert (c.ppo.gamma, c.ppo.lam, c.ppo.lr) == (0.99, 0.97, 1e-4)
    assert (c.ppo.minibatch, c.ppo.updates) == (480, 10)
    assert (c.ppo.c_vel, c.ppo.k_vel, c.ppo.c_foot, c.ppo.k_foot) == (0.01, 0.95, 0.05, 0.995)
    assert c.scheduler.v_core == [0.4, 0.0, 0.0]
    assert c.latency.range == [0.0, 0.05] and c.latency.eval_latency == 0.008
    assert c.transfer.filter_cutoff_hz == 10.0
    assert c.friction.tangential == [0.4, 0.8] and c.friction.torsional == [0.1, 0.3]
    ev = c.transfer_config(evaluation=True)
    assert ev.action_filter and ev.fixed_latency == 0.008
    assert not c.transfer_config().action_filter


def test_shipped_configs_load():
    for p in (ROOT / "configs").glob("*.toml"):
        load_config(p)


# ---------------------------------------------------------------------------
# command line


def test_train_is_deterministic(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(tiny), "--out", str(a)]) == 0
    assert main(["train", "--config", str(tiny), "--out", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    rows = _csv(a / "metrics.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
    man = json.loads((a / "manifest.json").read_text())
    assert man["seed"] == 3 and len(man["checkpoints"]) == 3
    assert (a / "checkpoints" / "latest.ckpt").exists()


def test_resume_matches_uninterrupted(tiny, tmp_path):
    full = tmp_path / "full"
    assert main(["train", "--config", str(tiny), "--out", str(full)]) == 0
    part = tmp_path / "part"
    assert main(["train", "--config", str(tiny), "--out", str(part)]) == 0
    ck = part / "checkpoints" / "epoch_00001.ckpt"
    assert main(["train", "--config", str(tiny), "--out", str(part), "--resume", str(ck)]) == 0
    assert (full / "metrics.csv").read_bytes() == (part / "metrics.csv").read_bytes()


def test_eval_and_export(tiny, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny), "--out", str(run)]) == 0
    ck = run / "checkpoints" / "latest.ckpt"
    script = tmp_path / "script.csv"
    script.write_text("time_s,vx,vy,wz\n0,0.3,0,0\n1.0,0,0.2,0.1\n")
    ev = run / "eval"
    assert main(["eval", str(ck), "--config", str(tiny), "--trials", "10", "--duration", "2",
                 "--velocity-script", str(script), "--out", str(ev)]) == 0
    falls = _csv(ev / "falls.csv")
    assert len(falls) == 10
    assert set(falls[0]) == {"trial", "falls", "steps", "mean_k_vel"}
    report = json.loads((ev / "report.json").read_text())
    assert {"total_falls", "success_rate", "mean_k_vel"} <= set(report)
    track = _csv(ev / "tracking_trial00.csv")
    assert len(track) == 80
    assert float(track[-1]["vy_cmd"]) == pytest.approx(0.2)

    out1 = tmp_path / "plot1"
    assert main(["export-plotdata", str(run), "--out", str(out1)]) == 0
    first = (out1 / "returns.csv").read_bytes()
    assert main(["export-plotdata", str(run), "--out", str(out1)]) == 0
    assert (out1 / "returns.csv").read_bytes() == first
    rows = _csv(out1 / "returns.csv")
    assert len(rows) == 3
    assert set(rows[0]) >= {"epoch", "mean_return", "limit_epoch"}
    assert any(p.name.startswith("tracking_") for p in out1.iterdir())


def test_export_two_epochs(tiny, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny), "--out", str(run)]) == 0
    lines = (run / "metrics.csv").read_text().splitlines(keepends=True)
    (run / "metrics.csv").write_text("".join(lines[:3]))
    out = tmp_path / "plot"
    assert main(["export-plotdata", str(run), "--out", str(out)]) == 0
    assert len(_csv(out / "returns.csv")) == 2


def test_ablation_outputs(tiny, tmp_path):
    root = tmp_path / "abl"
    assert main(["ablate", "gaussian-policy-surrogate", "--config", str(tiny),
                 "--out", str(root)]) == 0
    rows = _csv(root / "comparison.csv")
    assert len(rows) == 3
    assert "gaussian-policy-surrogate_return" in rows[0]
    report = json.loads((root / "ablation_report.json").read_text())
    assert report["status"] == {"baseline": 0, "gaussian-policy-surrogate": 0}
    assert "clipping" in report
    assert (root / "baseline" / "metrics.csv").read_bytes() != \
        (root / "gaussian-policy-surrogate" / "metrics.csv").read_bytes()


def test_no_curriculum_starts_at_full_box(tiny, tmp_path):
    root = tmp_path / "abl"
    assert main(["ablate", "no-curriculum", "--config", str(tiny), "--out", str(root)]) == 0
    rows = _csv(root / "no-curriculum" / "metrics.csv")
    assert float(rows[0]["bound_hi_x"]) == 0.6 and float(rows[0]["bound_lo_y"]) == -0.6


def test_cli_errors(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[run]\nepochs = 1\nbogus = 2\n")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "x")]) == 1
    assert "run.bogus" in capsys.readouterr().err
    assert main(["eval", str(tmp_path / "missing.ckpt"), "--out", str(tmp_path / "e")]) == 1
