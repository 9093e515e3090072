import time
from pathlib import Path

import pytest

from xokde.bench import ExperimentConfig, run_experiment

DATA = Path(__file__).parent / "data"


def timed_run(**kwargs):
    cfg = ExperimentConfig(**kwargs)
    start = time.perf_counter()
    report = run_experiment(cfg)
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def iris_full():
    """Default Iris protocol run, shared by the example and acceptance tests."""
    return timed_run(dataset=str(DATA / "iris.csv"))


@pytest.fixture(scope="session")
def wine_runs():
    return {kind: timed_run(dataset=str(DATA / "wine.csv"), label_col="first", covariance=kind)
            for kind in ("full", "diag")}
