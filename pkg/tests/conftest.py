from __future__ import annotations

import shutil
from importlib.resources import files

import pytest
from hypothesis import HealthCheck, settings

from lvfault.config import loads_config

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURE_GRIDS = files("lvfault") / "data" / "grids"


@pytest.fixture
def workspace(tmp_path):
    """Experiment folder holding copies of the shipped feeders under ``grids/``."""
    grids = tmp_path / "grids"
    grids.mkdir()
    for item in FIXTURE_GRIDS.iterdir():
        if item.name.endswith(".json"):
            shutil.copyfile(item, grids / item.name)
    return tmp_path


def small_config_text(**sections) -> str:
    """A short-horizon experiment with the shipped feeders; keyword args add TOML lines per section."""
    base = {
        "paths": ['grid_data_folder = "grids"'],
        "learning": ['classifier = "logistic"', 'dataset = "small"', "k_folds = 1"],
        "dataset": ["raw_data_available = false", "sample_length = 96", "substation_window = 96"],
        "simulation": ["sim_length = 6", "cores = 1", "substation_days = 2", "substation_runs = 2", "substation_step = 5"],
    }
    for name, lines in sections.items():
        base[name] = base[name] + list(lines)
    return "\n".join(f"[{name}]\n" + "\n".join(lines) for name, lines in base.items()) + "\n"


@pytest.fixture
def small_config(workspace):
    def make(**sections):
        path = workspace / "experiment.toml"
        path.write_text(small_config_text(**sections))
        return loads_config(path.read_text(), source=path)

    return make


def random_loads(grid, rng, scale=0.2, total=1.0):
    """Per-bus loads up to ``scale`` pu, shrunk so the feeder total stays within ``total`` pu."""
    loads = {b.id: complex(rng.uniform(0, scale), rng.uniform(0, scale / 2)) for b in grid.pq_buses}
    s = sum(abs(v) for v in loads.values())
    return {k: v * total / s for k, v in loads.items()} if s > total else loads


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
