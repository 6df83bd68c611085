import pytest
from hypothesis import given
from hypothesis import strategies as st

from lvfault.config import (
    ConfigError,
    config_to_dict,
    dumps_config,
    load_config,
    loads_config,
    with_overrides,
)
from lvfault.evaluation import lr_schedule
from lvfault.pipeline import train_config


def test_empty_file_gives_defaults():
    cfg = loads_config("")
    L, D, S = cfg.learning, cfg.dataset, cfg.simulation
    assert (S.step_size, cfg.samples_per_day, D.sample_length, D.number_of_samples) == (15, 96, 672, 200000)
    assert S.percentage["EV"] == 25 and S.broken_control_curve_choice == 2
    assert (L.number_of_epochs, L.learning_rate, L.mini_batch_size) == (20, 1e-6, 60)
    assert (L.k_folds, L.train_test_split, L.percent_of_epochs_for_warm_up) == (5, 0.3, 10)
    assert L.rnn_model_settings == [1, 2, 20, 5] and L.activation_function == "relu"
    assert L.metrics == ["accuracy", "precision_macro", "recall_macro", "f1_macro"]
    assert L.grid_search.values == [0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1]
    assert S.t_start is None and S.t_end is None
    tc = train_config(cfg)
    assert [lr_schedule(e, tc.epochs, tc.learning_rate, tc.warmup_fraction) for e in (1, 2, 3)] == [5e-7, 1e-6, 1e-6]


def test_round_trip_through_toml():
    cfg = loads_config('[simulation]\nseed = 7\nt_start = 10\n[learning.grid_search]\nvalues = [1, 2]\n')
    back = loads_config(dumps_config(cfg))
    assert back == cfg
    assert config_to_dict(back)["simulation"]["t_start"] == 10


@pytest.mark.parametrize(
    "text, message",
    [
        ("[simulation]\nbroken_control_curve_choice = 3\n", "broken_control_curve_choice"),
        ("[learning]\nnumber_of_epochs = 'ten'\n", "learning.number_of_epochs"),
        ("[learning]\nsave_model = 1\n", "learning.save_model"),
        ("[dataset]\nsample_length = 1.5\n", "dataset.sample_length"),
        ("[learning]\nflavour = 1\n", "unknown keys"),
        ("[extras]\n", "unknown sections"),
        ("[paths]\nresults_folder = ''\n", "results_folder"),
        ("[simulation]\nstep_size = 7\n", "step_size"),
        ("[learning]\nclassifier = 'svm'\n", "classifier"),
        ("not toml at all", "config"),
    ],
)
def test_invalid_configs(text, message):
    with pytest.raises(ConfigError, match=message):
        loads_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.toml")


def test_relative_paths_follow_config_file(tmp_path):
    path = tmp_path / "sub" / "exp.toml"
    path.parent.mkdir()
    path.write_text('[paths]\nresults_folder = "out"\n')
    assert load_config(path).resolve("results_folder") == tmp_path / "sub" / "out"


def test_overrides_are_type_checked():
    cfg = with_overrides(loads_config(""), "simulation", seed=4, cores=2)
    assert cfg.simulation.seed == 4 and cfg.workers == 2
    with pytest.raises(ConfigError):
        with_overrides(cfg, "simulation", seed="x")


@given(st.integers(0, 2**31), st.sampled_from([1, 5, 15, 60]), st.integers(1, 400))
def test_simulation_values_round_trip(seed, step, days):
    cfg = loads_config(f"[simulation]\nseed = {seed}\nstep_size = {step}\nsim_length = {days}\n")
    assert loads_config(dumps_config(cfg)) == cfg
    assert cfg.samples_per_day == 1440 // step
