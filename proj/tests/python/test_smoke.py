import math

import pytest

import alure


def small_config(tmp_path):
    return {
        "seed": 5,
        "synth": {"n_users": 300, "n_accounts": 60},
        "graph": {"k1": 8, "k1_prime": 2, "k2": 5},
        "train_steps": 20,
        "experiment_seeds": [1],
        "paths": {
            "data_dir": str(tmp_path / "data"),
            "checkpoint": str(tmp_path / "model.ckpt"),
            "snapshot_dir": str(tmp_path / "snapshots"),
            "graph": str(tmp_path / "graph.jsonl"),
            "candidates": str(tmp_path / "candidates.jsonl"),
            "report_dir": str(tmp_path / "report"),
        },
    }


def test_version():
    assert alure.version().startswith("alure ")


def test_metrics():
    labels = [1, 0, 0, 1, 0]
    assert math.isclose(alure.normalized_entropy([0.4] * 5, labels), 1.0, abs_tol=1e-12)
    assert alure.format_percent(alure.relative_metric_change(100.28, 100.0)) == "0.28%"
    assert alure.format_percent(alure.relative_metric_change(99.95, 100.0)) == "-0.05%"
    with pytest.raises(alure.AlureError):
        alure.relative_metric_change(1.0, 0.0)


def test_config_errors():
    assert alure.default_config()["graph"]["k1"] == 400
    assert alure.desk_scale_config()["graph"]["k1"] == 40
    with pytest.raises(alure.ConfigError, match="kk"):
        alure.effective_config({"kk": 1})
    with pytest.raises(alure.ConfigError):
        alure.effective_config({"graph": {"k1": 4, "k1_prime": 5}})


def test_pipeline_stages(tmp_path):
    cfg = small_config(tmp_path)
    for stage in (alure.synth, alure.train, alure.embed, alure.build_graph, alure.retrieve, alure.evaluate):
        summary = stage(cfg)
        assert summary["outputs"], summary
    report = (tmp_path / "report" / "report.json").read_text()
    assert "neighbor_purity" in report

    # Same seed in a second directory gives the same report bytes.
    other = tmp_path / "again"
    cfg2 = small_config(other)
    for stage in (alure.synth, alure.train, alure.embed, alure.build_graph, alure.retrieve, alure.evaluate):
        stage(cfg2)
    assert (other / "report" / "report.json").read_text() == report


def test_run_experiment():
    cfg = alure.experiment_config()
    cfg["synth"]["n_users"] = 300
    cfg["synth"]["n_accounts"] = 60
    cfg["graph"].update({"k1": 8, "k1_prime": 2, "k2": 5})
    cfg["train_steps"] = 20
    a = alure.run_experiment(cfg, 3)
    assert a == alure.run_experiment(cfg, 3)
    assert "neighbor_purity" in str(a["metrics"])
