import math
import random

import pytest

import pitlab


def test_si_sdr_examples():
    assert abs(pitlab.si_sdr([1.0, 1.0], [1.0, 0.0])) < 1e-6
    assert pitlab.si_sdr([1.0, 0.5], [1.0, 0.0]) == pytest.approx(10 * math.log10(4), rel=1e-6)
    assert pitlab.sdr([0.0, 0.0], [3.0, 4.0]) == pytest.approx(0.0, abs=1e-6)


def test_si_sdr_scale_invariance():
    rng = random.Random(1)
    t = [rng.gauss(0, 1) for _ in range(64)]
    e = [x + rng.gauss(0, 1) for x in t]
    assert pitlab.si_sdr([3.5 * x for x in e], t) == pytest.approx(pitlab.si_sdr(e, t), abs=1e-9)


def test_metric_improvement_of_mixture_is_zero():
    mix = [0.3, -0.2, 0.9, 0.1]
    assert pitlab.metric_improvement(mix, [1.0, 0.0, 1.0, 0.0], mix) == 0.0
    assert pitlab.metric_improvement(mix, [1.0, 0.0, 1.0, 0.0], mix, "sdr") == 0.0


def test_assignment():
    r = pitlab.pit_select([[3.0, 1.0], [2.0, 4.0]])
    assert r["permutation"] == [1, 0]
    assert r["total_loss"] == 1.5
    assert pitlab.fixed_assignment_loss([[3.0, 1.0], [2.0, 4.0]], [0, 1]) == 3.5
    rng = random.Random(2)
    for _ in range(50):
        m = [[rng.uniform(-10, 10) for _ in range(5)] for _ in range(5)]
        assert pitlab.hungarian_select(m)["total_loss"] == pitlab.exhaustive_select(m)["total_loss"]


def test_sinkpit_plan_is_doubly_stochastic():
    soft, gamma = pitlab.sinkpit_loss([[0.0, 10.0], [10.0, 0.0]], 1.0)
    for i in range(2):
        assert sum(gamma[i]) == pytest.approx(1.0, abs=1e-6)
        assert gamma[0][i] + gamma[1][i] == pytest.approx(1.0, abs=1e-6)
    assert soft >= 0.0


def test_relaxed_better():
    assert pitlab.relaxed_better(14.0, 15.0, 0.1)
    assert pitlab.relaxed_better(-2.0, -1.9, 0.1)
    assert not pitlab.relaxed_better(10.0, 11.5, 0.1)
    assert pitlab.relaxed_better(-5.0, 5.0, math.inf)
    with pytest.raises(pitlab.PitlabError):
        pitlab.relaxed_better(1.0, 1.0, -1.0)


def test_layerwise_loss_identical_layers():
    m = [[3.0, 1.0], [2.0, 4.0]]
    loss, perms, per_layer = pitlab.layerwise_loss([m] * 6, pitlab.default_weights(6))
    assert loss == pytest.approx(7 * 1.5 / 12, rel=1e-14)
    assert perms == [[1, 0]] * 6
    assert per_layer == [1.5] * 6


def test_generate_sample_sums():
    mix, targets = pitlab.generate_sample({"dataset": {"sample_length": 128, "seed": 3}}, 5)
    assert len(targets) == 2
    assert max(abs(x - sum(s[i] for s in targets)) for i, x in enumerate(mix)) < 1e-12


def test_config_errors():
    with pytest.raises(pitlab.ConfigError):
        pitlab.validate_config({"epochs": 0})
    with pytest.raises(ValueError):
        pitlab.validate_config({"no_such_field": 1})
    cfg = pitlab.validate_config({"strategy": {"name": "dsd", "epsilon": "inf"}})
    assert cfg["strategy"]["name"] == "dsd"


def test_train_tiny_run_is_deterministic():
    cfg = {
        "epochs": 3,
        "batch_size": 4,
        "seed": 4,
        "dataset": {"n_samples": 8, "n_validation": 4, "sample_length": 128, "seed": 4},
        "model": {"hidden_dim": 8, "n_blocks": 2},
        "strategy": {"name": "dsd_lo", "epsilon": 0.1},
    }
    seen = []
    a = pitlab.train(cfg, on_epoch=lambda r: seen.append(r["epoch"]))
    b = pitlab.train(cfg)
    assert seen == [1, 2, 3]
    assert [r["train_loss"] for r in a["records"]] == [r["train_loss"] for r in b["records"]]
    assert a["records"][0]["switching"] == []
    assert len(a["records"][2]["switching"]) == 2
    assert a["report"]["strategy"]["name"] == "dsd_lo"


def test_run_and_compare(tmp_path):
    base = {
        "epochs": 2,
        "dataset": {"n_samples": 8, "n_validation": 4, "sample_length": 128},
        "model": {"hidden_dim": 8, "n_blocks": 2},
    }
    dirs = []
    for name in ("pit", "lo"):
        out = tmp_path / name
        pitlab.run(dict(base, strategy=name, out_dir=str(out)))
        assert (out / "epochs.csv").exists()
        dirs.append(str(out))
    summary = pitlab.compare(dirs)
    assert [r["strategy"] for r in summary["runs"]] == ["pit", "lo"]
    assert summary["runs"][0]["delta_best_val_si_sdri"] == 0.0
