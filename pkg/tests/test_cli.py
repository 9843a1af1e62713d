import json

import numpy as np
import pytest
from scipy import integrate

from bitrnf import checkpoint as ck
from bitrnf.cli import main
from bitrnf.config import ConfigError, config_from_dict, config_to_dict, load_config
from bitrnf.policy import conditioner_forward

TINY = {
    "seed": 3,
    "policy": {"kind": "bit_rnf", "tau": 0.8, "trunk_depth": 1, "trunk_width": 8,
               "head_depth": 1, "head_width": 8},
    "train": {"steps": 64, "rollout": 16, "checkpoint_every": 32},
    "eval": {"episodes": 5},
}


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.fixture
def trained(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", write_config(tmp_path, TINY), "--out", str(out)]) == 0
    capsys.readouterr()
    return out


# config --------------------------------------------------------------------------

def test_config_defaults_and_round_trip():
    cfg = config_from_dict({"policy": {"tau": 0.8}})
    assert cfg.train.lr == 1e-3 and cfg.train.rollout == 64 and cfg.policy.components == 16
    assert cfg.policy_config().hyper.K == 16
    assert config_from_dict(config_to_dict(cfg)) == cfg
    assert config_from_dict({"policy": {"kind": "normal"}}).policy.tau is None


@pytest.mark.parametrize("raw,path", [
    ({"policy": {"tau": 0.8, "colour": 1}}, "policy.colour"),
    ({"extra": 1}, "extra"),
    ({"policy": {"kind": "bit_rnf"}}, "policy.tau"),
    ({"policy": {"kind": "rnf", "tau": 1.2}}, "policy.tau"),
    ({"policy": {"tau": 0.8}, "train": {"gamma": 1.0}}, "train.gamma"),
    ({"policy": {"tau": 0.8}, "train": {"steps": "many"}}, "train.steps"),
    ({"policy": {"tau": 0.8}, "env": {"name": "bimodal_bandit", "dim": 2}}, "env.dim"),
    ({"policy": {"tau": 0.8}, "version": 2}, "version"),
])
def test_config_errors_name_the_field(raw, path):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.path == path


def test_cli_rejects_bad_config(tmp_path, capsys):
    bad = write_config(tmp_path, {"policy": {"kind": "bit_rnf"}})
    assert main(["train", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "policy.tau" in capsys.readouterr().err
    unknown = write_config(tmp_path, {"policy": {"tau": 0.8, "oops": 1}}, "u.json")
    assert main(["train", "--config", unknown, "--out", str(tmp_path / "y")]) == 2
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "broken.json"))


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["eval", "--checkpoint", "/nonexistent/ckpt.json"]) == 2


# checkpoints -----------------------------------------------------------------------

def test_checkpoint_round_trip_is_byte_identical(trained, tmp_path):
    path = trained / "final.json"
    data = path.read_bytes()
    loaded = ck.load_checkpoint(str(path))
    assert ck.dumps(loaded) == data
    copy = tmp_path / "copy.json"
    ck.save_checkpoint(str(copy), loaded)
    assert copy.read_bytes() == data


def test_reloaded_policy_is_bitwise_identical(trained):
    a = ck.load_checkpoint(str(trained / "final.json"))
    b = ck.loads((trained / "final.json").read_bytes())
    env = a.config.make_env()
    pcfg = a.config.policy_config(env)
    s = np.random.default_rng(0).uniform(-1, 1, (7, 2))
    act = np.random.default_rng(1).normal(size=(7, 1))
    la = conditioner_forward(s, a.policy.arrays(), pcfg).log_prob(act)
    lb = conditioner_forward(s, b.policy.arrays(), pcfg).log_prob(act)
    np.testing.assert_array_equal(la, lb)
    rng = ck.restore_rng(a.rng_state)
    assert rng.bit_generator.state == a.rng_state


def test_checkpoint_format_errors(trained, tmp_path, capsys):
    doc = json.loads((trained / "final.json").read_text())
    doc["format_version"] = 99
    future = tmp_path / "future.json"
    future.write_text(json.dumps(doc))
    with pytest.raises(ck.CheckpointFormatError, match="version"):
        ck.load_checkpoint(str(future))
    assert main(["eval", "--checkpoint", str(future)]) == 3
    junk = tmp_path / "junk.json"
    junk.write_text("not json")
    assert main(["bench", "--checkpoint", str(junk)]) == 3
    doc = json.loads((trained / "final.json").read_text())
    doc["policy"]["head.b"]["data"] = "!!"
    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text(json.dumps(doc))
    assert main(["density", "--checkpoint", str(corrupt)]) == 3


# train ------------------------------------------------------------------------------

def test_train_outputs_and_reproducibility(trained, tmp_path, capsys):
    files = sorted(p.name for p in trained.iterdir())
    assert files == ["checkpoint_00000032.json", "checkpoint_00000064.json", "final.json",
                     "metrics.csv"]
    lines = (trained / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,episode,return,loss_pi,loss_v,entropy_est,skipped_steps"
    assert len(lines) == 1 + 4
    again = tmp_path / "again"
    assert main(["train", "--config", write_config(tmp_path, TINY, "c2.json"),
                 "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    assert (again / "final.json").read_bytes() == (trained / "final.json").read_bytes()


def test_zero_step_training_writes_initial_policy(tmp_path, capsys):
    raw = dict(TINY, train={"steps": 0})
    out = tmp_path / "zero"
    assert main(["train", "--config", write_config(tmp_path, raw), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 0
    ckpt = ck.load_checkpoint(str(out / "final.json"))
    assert ckpt.step == 0
    assert (out / "metrics.csv").read_text().count("\n") == 1


# eval / density / bench / verify --------------------------------------------------------

def test_eval_both_modes(trained, capsys):
    assert main(["eval", "--checkpoint", str(trained / "final.json"), "--mode", "both",
                 "--episodes", "7"]) == 0
    out = capsys.readouterr()
    report = json.loads(out.out)
    assert [r["mode"] for r in report["reports"]] == ["mean", "sample"]
    for r in report["reports"]:
        assert r["episodes"] == 7 and len(r["returns"]) == 7
        assert r["worst"] == min(r["returns"])
    assert "mean:" in out.err and "sample:" in out.err
    assert main(["eval", "--checkpoint", str(trained / "final.json"), "--episodes", "0"]) == 2


def test_density_csv(trained, tmp_path, capsys):
    out = tmp_path / "d.csv"
    ckpt = str(trained / "final.json")
    assert main(["density", "--checkpoint", ckpt, "--state", "0.1,-0.2", "--n", "1001",
                 "--lo", "-8", "--hi", "8", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# mean=")
    assert lines[1] == "a,pdf,component_pdf_flow,component_pdf_alt"
    table = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    assert table.shape == (1001, 4)
    np.testing.assert_allclose(table[:, 2] + table[:, 3], table[:, 1], rtol=1e-12)
    assert abs(integrate.trapezoid(table[:, 1], table[:, 0]) - 1.0) < 0.05
    c = ck.load_checkpoint(ckpt)
    dist = conditioner_forward(np.array([[0.1, -0.2]]), c.policy.arrays(),
                               c.config.policy_config())
    assert float(lines[0].split("=")[1]) == float(dist.mean()[0, 0])
    assert main(["density", "--checkpoint", ckpt, "--dim", "1"]) == 2
    assert main(["density", "--checkpoint", ckpt, "--state", "1,2,3"]) == 2


def test_bench(trained, capsys):
    ckpt = str(trained / "final.json")
    assert main(["bench", "--checkpoint", ckpt, "--calls", "99"]) == 2
    capsys.readouterr()
    assert main(["bench", "--checkpoint", ckpt, "--calls", "100"]) == 0
    rep = json.loads(capsys.readouterr().out)
    for path in ("sample_path", "mean_path"):
        assert set(rep[path]) == {"p50_ms", "p99_ms", "max_ms"}
        assert 0 < rep[path]["p50_ms"] <= rep[path]["p99_ms"] <= rep[path]["max_ms"]


def test_verify_exit_codes(tmp_path, capsys, monkeypatch):
    out = tmp_path / "v.json"
    assert main(["verify", "--suite", "flow", "--cases", "300", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["pass"] and rep["suite"] == "flow"
    from bitrnf import lrs
    real = lrs.forward
    monkeypatch.setattr(lrs, "forward", lambda e, t: real(e, t) + 1e-6)
    capsys.readouterr()
    assert main(["verify", "--suite", "flow", "--cases", "300"]) == 1
    assert json.loads(capsys.readouterr().out)["pass"] is False
