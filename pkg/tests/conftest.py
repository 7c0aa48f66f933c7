import numpy as np
import pytest
from hypothesis import settings

from transferhub.dataset import TimeSeriesDataset

# fixed example sequence so every run checks the same cases
settings.register_profile("fixed", derandomize=True)
settings.load_profile("fixed")


def make_dataset(n_days=8, samples_per_day=4, n_features=2, start="2020-06-01", seed=0, park_id="p"):
    rng = np.random.default_rng(seed)
    step = 86400 // samples_per_day
    n = n_days * samples_per_day
    ts = np.datetime64(f"{start}T00:00:00", "s") + np.arange(n) * np.timedelta64(step, "s")
    return TimeSeriesDataset(
        park_id=park_id,
        timestamps=ts,
        features=rng.normal(size=(n, n_features)),
        power=rng.uniform(0, 1, n),
        feature_names=tuple(f"f{i}" for i in range(n_features)),
        samples_per_day=samples_per_day,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
