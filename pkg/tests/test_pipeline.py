import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lvfault.config import with_overrides
from lvfault.datagen import DataError, load_dataset
from lvfault.pipeline import (
    RAW_CSV,
    PipelineError,
    calibration_subset,
    detectability_study,
    discover_grids,
    emit_pipeline_report,
    emit_reports,
    emit_samples,
    estimate_loads,
    load_or_generate_substation,
    replot,
    run_detection_application,
    run_device_detection,
    run_generate,
    run_gridsearch,
    run_transformer_detection,
    transformer_detection,
)


def _svg_ok(path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")


def test_discover_grids(small_config):
    cfg = small_config()
    assert [g.name for g in discover_grids(cfg)] == ["feeder_a", "feeder_b"]
    assert len(discover_grids(with_overrides(cfg, "dataset", number_of_grids=1))) == 1
    empty = with_overrides(cfg, "paths", grid_data_folder="nowhere")
    with pytest.raises(Exception, match="nowhere"):
        discover_grids(empty)


def test_generate_is_worker_independent(small_config):
    cfg = small_config()
    one = run_generate(cfg, workers=1)
    raw1, ds1 = one.raw_path.read_bytes(), one.dataset_path.with_suffix(".f64").read_bytes()
    two = run_generate(cfg, workers=2)
    assert one.simulated and two.simulated
    assert two.raw_path.read_bytes() == raw1
    assert two.dataset_path.with_suffix(".f64").read_bytes() == ds1
    # 2 feeders x 5 monitored EVs x 2 variants x 6 one-day windows, balanced
    assert len(one.dataset) == 120 and one.dataset.labels.sum() == 60


def test_raw_data_available_skips_simulation(small_config):
    cfg = small_config()
    ready = with_overrides(cfg, "dataset", raw_data_available=True)
    with pytest.raises(PipelineError, match="raw_data_available"):
        run_generate(ready)
    first = run_generate(cfg)
    again = run_generate(ready)
    assert not again.simulated
    np.testing.assert_array_equal(again.dataset.values, first.dataset.values)
    first.dataset_path.with_name(first.dataset_path.name + ".manifest.json").unlink()
    from_raw = run_generate(ready)
    np.testing.assert_array_equal(from_raw.dataset.values, first.dataset.values)


def test_dataset_capped_by_number_of_samples(small_config):
    cfg = small_config(dataset=["number_of_samples = 20"])
    out = run_generate(cfg)
    assert len(out.dataset) == 20
    assert (cfg.resolve("raw_data_folder") / RAW_CSV).exists()


def test_device_detection_train_then_eval(small_config):
    cfg = small_config()
    run_generate(cfg)
    trained = run_device_detection(cfg)
    assert trained.model_path.with_name(trained.model_path.name + ".f64").exists()
    assert trained.window.f1_macro > 0.5
    assert trained.test_indices.size == 36
    ev = run_device_detection(with_overrides(cfg, "learning", mode="eval"))
    assert ev.window.confusion == trained.window.confusion
    assert ev.window.metadata["mode"] == "eval"


def test_device_detection_rnn_and_knn(small_config):
    cfg = small_config(learning=["number_of_epochs = 2", "rnn_model_settings = [1, 2, 1, 5]"])
    cfg = with_overrides(cfg, "learning", classifier="RNN")
    run_generate(cfg)
    out = run_device_detection(cfg)
    assert out.detector.kind == "RNN" and out.detector.history["epoch_loss"]
    ev = run_device_detection(with_overrides(cfg, "learning", mode="eval"))
    assert ev.window.accuracy == out.window.accuracy
    knn = run_device_detection(with_overrides(cfg, "learning", classifier="knn", mode="eval"))
    assert 0 <= knn.device.f1_macro <= 1


def test_device_detection_needs_dataset(small_config):
    with pytest.raises(PipelineError, match="generate"):
        run_device_detection(small_config())


def test_eval_without_saved_model(small_config):
    cfg = small_config()
    run_generate(cfg)
    with pytest.raises(Exception, match="model"):
        run_device_detection(with_overrides(cfg, "learning", mode="eval"))


def test_calibration_subset_counts():
    labels = np.array([0] * 10 + [1] * 7)
    assert calibration_subset(labels, 0.0, 1).size == 0
    assert calibration_subset(labels, 1.0, 1).size == 17
    sub = calibration_subset(labels, 0.5, 1)
    assert (labels[sub] == 0).sum() == 5 and (labels[sub] == 1).sum() == 4
    np.testing.assert_array_equal(sub, calibration_subset(labels, 0.5, 1))


def test_transformer_detection_rates(small_config):
    cfg = small_config()
    out0 = run_transformer_detection(cfg, rate=0.0)
    assert out0.dendrogram_path is not None and out0.dendrogram_path.exists()
    leaves = (out0.dendrogram_path.parent / "dendrogram_leaves.csv").read_text().splitlines()
    assert leaves[0].split(",")[:2] == ["leaf", "origin"]
    sim, fld = load_or_generate_substation(cfg)
    full = transformer_detection(cfg, sim, fld, 1.0)
    for rep in (out0.report, full.report):
        assert 0 <= rep.f1_macro <= 1
    assert full.report.metadata["calibration_rate"] == 1.0
    assert out0.report.metadata["n_train_calibration"] == 0
    assert full.report.metadata["n_train_calibration"] > 0
    knn = transformer_detection(with_overrides(cfg, "learning", transformer_classifier="knn"), sim, fld, 0.5)
    assert knn.report.confusion.total == out0.report.confusion.total


def test_estimate_loads_linear_and_quadratic(small_config):
    cfg = with_overrides(small_config(), "learning", estimator_epochs=300)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (400, 3))
    lin = X @ [0.3, -0.2, 0.1] + 0.05
    est = estimate_loads(cfg, X[:300], lin[:300], X[300:], lin[300:])
    assert est.ols_rmse < 1e-6 and np.isfinite(est.mlp_rmse)
    quad = X[:, 0] ** 2
    est = estimate_loads(cfg, X[:300], quad[:300], X[300:], quad[300:])
    assert est.mlp_rmse < est.ols_rmse


def test_application_three_stages(small_config):
    cfg = small_config()
    report = run_detection_application(cfg)
    assert [s.name for s in report.stages] == ["estimation", "mining", "detection"]
    est = report.stage("estimation").metrics
    assert not est["identity"] and est["mlp_rmse"] > 0 and est["ols_rmse"] > 0
    assert 0 <= report.stage("mining").metrics["coverage"] <= 1
    assert report.stage("detection").scores is not None
    doc = json.loads(report.to_json())
    assert len(doc["stages"]) == 3
    paths = emit_pipeline_report(report, cfg.resolve("results_folder"))
    _svg_ok(paths[-1])


def test_application_fully_measured_is_identity(small_config):
    cfg = small_config(simulation=["measured_fraction = 1.0"])
    report = run_detection_application(cfg)
    assert report.stage("estimation").metrics["identity"] is True
    assert report.stage("mining").metrics["coverage"] == 1.0


def test_emitted_reports_parse(small_config, tmp_path):
    cfg = small_config()
    out = run_generate(cfg)
    det = run_device_detection(cfg, out.dataset, save=False)
    paths = emit_reports({"window": det.window, "device": det.device}, tmp_path, "demo")
    names = sorted(p.name for p in paths)
    assert names == ["demo.csv", "demo.svg", "demo_device.json", "demo_window.json"]
    _svg_ok(tmp_path / "demo.svg")
    assert (tmp_path / "demo.csv").read_text().splitlines()[0] == "param,accuracy,precision_macro,recall_macro,f1_macro"
    samples = emit_samples(out.dataset, tmp_path)
    assert len(samples) == 8
    for p in samples:
        if p.suffix == ".svg":
            _svg_ok(p)
    (tmp_path / "demo.svg").unlink()
    cfg2 = with_overrides(cfg, "paths", results_folder=str(tmp_path))
    rendered = replot(cfg2)
    assert tmp_path / "demo.svg" in rendered
    _svg_ok(tmp_path / "demo.svg")


def test_replot_without_results(small_config):
    with pytest.raises(PipelineError):
        replot(small_config())


def test_gridsearch_over_calibration_rate(small_config):
    cfg = small_config()
    cfg = with_overrides(cfg, "learning", grid_search={"parameter": "calibration rate", "values": [0, 0.5, 1]})
    result = run_gridsearch(cfg)
    assert len(result.rows) == 3 and result.best_value in (0, 0.5, 1)
    folder = cfg.resolve("results_folder")
    assert len((folder / "gridsearch.csv").read_text().splitlines()) == 4
    assert (folder / "models" / "gridsearch_best_calibration_rate.manifest.json").exists()


def test_gridsearch_over_learning_setting(small_config):
    cfg = small_config()
    cfg = with_overrides(cfg, "learning", grid_search={"parameter": "knn_k", "values": [1, 3]}, classifier="knn")
    result = run_gridsearch(cfg)
    assert [v for v, _, _ in result.rows] == [1, 3]
    bad = with_overrides(cfg, "learning", grid_search={"parameter": "colour", "values": [1]})
    with pytest.raises(PipelineError, match="colour"):
        run_gridsearch(bad)


def test_detectability_study_small(small_config):
    cfg = small_config()
    study = detectability_study(cfg)
    assert study["oracle_windows"] == 2 * 5 * 2 * 6
    assert 0 <= study["oracle_accuracy"] <= 1
    assert study["dataset_windows"] == 120


def test_no_devices_is_data_error(small_config):
    cfg = small_config(simulation=['percentage = { EV = 0 }'])
    with pytest.raises(DataError):
        run_generate(cfg)
