import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lvfault.datagen import (
    RAW_HEADER,
    SUBSTATION_HEADER,
    DataError,
    Dataset,
    Sample,
    ScenarioSettings,
    ScenarioTask,
    SubstationTask,
    assemble_dataset,
    build_scenarios,
    derive_seed,
    droop_signature,
    extract_samples,
    load_dataset,
    load_raw,
    load_substation,
    raw_series,
    samples_from_raw,
    save_dataset,
    save_raw,
    save_substation,
    scale,
    substation_series,
    substation_windows,
)
from lvfault.grid_model import load_fixture
from lvfault.powerflow import TimeSeriesResult

GRIDS = [load_fixture("feeder_a"), load_fixture("feeder_b")]
SHORT = ScenarioSettings(days=2, master_seed=3)


@pytest.fixture(scope="module")
def short_results():
    scenarios = build_scenarios(SHORT, GRIDS[:1])[:4]
    return scenarios, [ScenarioTask(sc, GRIDS[0], SHORT)() for sc in scenarios]


def fake_result(n_steps, t_start=0, label=0):
    p = np.arange(n_steps, dtype=float)
    return TimeSeriesResult(
        15, t_start, ("s", "a"), np.vstack([np.ones(n_steps), 1 - p / 1e5]), ("EV_a",), p[None, :], np.zeros((1, n_steps)),
        meta={"grid": "g", "device_id": "EV_a", "bus_id": "a", "scenario_id": "g/EV_a/x", "label": label},
    )


def test_paired_scenarios_count_and_seeds():
    sc = build_scenarios(ScenarioSettings(), GRIDS)
    assert len(sc) == 2 * 5 * 2
    assert [s.label for s in sc[:2]] == [0, 1]
    assert sc[0].monitored_device == sc[1].monitored_device
    assert build_scenarios(ScenarioSettings(), GRIDS) == sc
    assert len({s.profile_seed for s in sc}) == len(sc)
    assert all(s.scenario_id.startswith(s.grid + "/") for s in sc)


def test_scenarios_need_devices():
    with pytest.raises(DataError, match="no EV devices"):
        build_scenarios(ScenarioSettings(percentages={"EV": 0}), GRIDS)
    with pytest.raises(DataError):
        build_scenarios(ScenarioSettings(), [])


def test_window_arithmetic_for_a_year():
    samples = extract_samples(fake_result(35040), _device(), 672)
    assert len(samples) == 52
    assert samples[1].provenance == ("g", "EV_a", 672)
    np.testing.assert_array_equal(samples[1].values, np.arange(672, 1344))


def test_series_shorter_than_window():
    with pytest.raises(DataError, match="shorter"):
        extract_samples(fake_result(671), _device(), 672)


def test_voltage_channel():
    s = extract_samples(fake_result(10), _device(), 5, channel="V")
    np.testing.assert_allclose(s[0].values, 1 - np.arange(5) / 1e5)
    with pytest.raises(DataError):
        extract_samples(fake_result(10), _device(), 5, channel="Q")


def _device(label=0):
    from lvfault.control_curves import correct_variant, make_malfunction
    from lvfault.grid_model import Device

    return Device("EV_a", "a", "EV", 0.11, make_malfunction("EV", 2) if label else correct_variant("EV"))


def test_sample_labels_follow_variant(short_results):
    scenarios, results = short_results
    for sc, res in zip(scenarios, results):
        assert res.meta["label"] == sc.label
        for s in samples_from_raw(raw_series(res), 96):
            assert s.label == sc.label
            assert s.provenance[:2] == (sc.grid, sc.monitored_device)


def _samples(n0, n1, length=4):
    out = []
    for c, n in ((0, n0), (1, n1)):
        out += [Sample(np.full(length, 10 * c + i, dtype=float), c, ("g", f"d{c}", i)) for i in range(n)]
    return out


def test_assemble_balanced_and_seeded():
    ds = assemble_dataset(_samples(30, 40), 20, seed=1)
    assert len(ds) == 20 and ds.labels.sum() == 10
    assert ds.metadata["number_of_samples"] == 20 and ds.metadata["sample_length"] == 4
    again = assemble_dataset(_samples(30, 40), 20, seed=1)
    np.testing.assert_array_equal(ds.values, again.values)
    assert not np.array_equal(ds.values, assemble_dataset(_samples(30, 40), 20, seed=2).values)


def test_assemble_insufficient_reports_counts():
    with pytest.raises(DataError, match="4/4"):
        assemble_dataset(_samples(4, 4), 10, seed=0)
    with pytest.raises(DataError, match="even"):
        assemble_dataset(_samples(4, 4), 5, seed=0)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000))
def test_assemble_strict_balance(n0, n1, seed):
    n = 2 * min(n0, n1)
    ds = assemble_dataset(_samples(n0, n1), n, seed)
    assert (ds.labels == 0).sum() == (ds.labels == 1).sum() == n // 2
    for row, lab, prov in zip(ds.values, ds.labels, ds.provenance):
        assert prov[1] == f"d{lab}"


def test_scale_uses_train_statistics_only():
    values = np.array([[0.0, 5.0], [2.0, 5.0], [100.0, 5.0], [-50.0, 5.0]])
    ds = Dataset(values, [0, 1, 0, 1])
    out = scale(ds, [0, 1])
    np.testing.assert_allclose(out.values[:, 0], [-1.0, 1.0, 99.0, -51.0])
    assert np.all(out.values[:, 1] == 0.0)
    assert out.metadata["scaling"]["mean"] == [1.0, 5.0]
    with pytest.raises(DataError):
        scale(ds, [])


@given(st.integers(0, 2**32))
def test_scaled_train_mean_is_zero(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.normal(3, 2, (20, 6)), rng.integers(0, 2, 20))
    train = np.arange(12)
    out = scale(ds, train)
    assert np.all(np.abs(out.values[train].mean(axis=0)) < 1e-10)


def test_raw_round_trip_bit_exact(tmp_path, short_results):
    _, results = short_results
    path = tmp_path / "raw.csv"
    save_raw(results, path)
    assert path.read_text().splitlines()[0] == ",".join(RAW_HEADER)
    back = load_raw(path)
    assert back == [raw_series(r) for r in results]
    save_raw(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_raw_missing_column_names_line(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text(",".join(RAW_HEADER) + "\ns,g,d,b,0,1.0,0.1,0.0,0\ns,g,d,b,1,1.0,0.1,0\n")
    with pytest.raises(DataError, match="line 3"):
        load_raw(path)


def test_raw_wrong_header(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(DataError, match="header"):
        load_raw(path)


def test_dataset_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(2000, 672)), np.repeat([0, 1], 1000), [("g", "d", i) for i in range(2000)], {"channel": "P"})
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.metadata == ds.metadata
    assert (tmp_path / "ds.f64").stat().st_size == 2000 * 672 * 8


def test_full_scale_block_size_arithmetic():
    assert 200_000 * 672 * 8 == 1_075_200_000


def test_container_truncated_block(tmp_path):
    ds = Dataset(np.ones((3, 4)), [0, 1, 0])
    save_dataset(ds, tmp_path / "ds")
    blk = tmp_path / "ds.f64"
    blk.write_bytes(blk.read_bytes()[:-8])
    with pytest.raises(DataError, match="manifest implies"):
        load_dataset(tmp_path / "ds")


def test_container_version_mismatch(tmp_path):
    import json

    save_dataset(Dataset(np.ones((2, 2)), [0, 1]), tmp_path / "ds")
    mf = tmp_path / "ds.manifest.json"
    doc = json.loads(mf.read_text())
    doc["version"] = 99
    mf.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="version"):
        load_dataset(tmp_path / "ds")


def test_empty_dataset_container(tmp_path):
    ds = Dataset(np.empty((0, 672)), [], metadata={"sample_length": 672})
    save_dataset(ds, tmp_path / "empty")
    back = load_dataset(tmp_path / "empty")
    assert len(back) == 0 and back.values.shape == (0, 672)


def test_substation_round_trip_and_windows(tmp_path):
    st_settings = ScenarioSettings(days=1, step_minutes=5, master_seed=1)
    g = GRIDS[0]
    runs = [SubstationTask(f"{g.name}/sim/{lab}/0", g, 0, lab, derive_seed(1, lab), st_settings)() for lab in (0, 1)]
    series = [substation_series(r) for r in runs]
    path = tmp_path / "sub.csv"
    save_substation(series, path)
    assert path.read_text().splitlines()[0] == ",".join(SUBSTATION_HEADER)
    back = load_substation(path)
    for a, b in zip(series, back):
        assert (a.scenario_id, a.grid, a.label) == (b.scenario_id, b.grid, b.label)
        np.testing.assert_array_equal(a.channels, b.channels)
    ds = substation_windows(back, 96)
    assert ds.windows.shape == (2 * 3, 4, 96)
    assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_substation_task_malfunctions_every_device():
    st_settings = ScenarioSettings(days=1, master_seed=2)
    g = GRIDS[1]
    ok = SubstationTask("x/0", g, 1, 0, 5, st_settings)()
    bad = SubstationTask("x/1", g, 1, 1, 5, st_settings)()
    # same profiles, so the substation difference is caused by the curves alone
    assert not np.array_equal(ok.substation["P"], bad.substation["P"])
    noisy = SubstationTask("x/0", g, 1, 0, 5, st_settings, noise=0.01)()
    assert 0 < np.std(noisy.substation["V"] - ok.substation["V"]) < 0.02


def test_droop_signature_signs():
    v = np.linspace(0.90, 0.95, 50)
    correct = np.interp(v, [0.90, 0.95], [0.1, 1.0])
    inverted = np.interp(v, [0.90, 0.95], [1.0, 0.1])
    assert droop_signature(correct, v) > 0.99
    assert droop_signature(inverted, v) < -0.99
    assert np.isnan(droop_signature(np.zeros(50), v))
    assert np.isnan(droop_signature(np.ones(50), v))


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    assert 0 <= derive_seed(0) < 2**63
