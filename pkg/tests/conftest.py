import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from framecorr.frame_io import synth_dataset
from framecorr.nn import TrainConfig
from framecorr.progressive import train_autoencoder
from oracles import converged_predictor, still_square

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def square_data():
    """200 frames of 16x16 gray moving squares: 14/3/3 videos of 10 frames."""
    return synth_dataset("moving_square", (14, 3, 3), 10, (16, 16, 1), seed=0)


@pytest.fixture(scope="session")
def square_ae(square_data):
    train, val, _ = square_data
    return train_autoencoder(train, val, TrainConfig(epochs=15, seed=0))


@pytest.fixture(scope="session")
def constant_video():
    return still_square(1000)


@pytest.fixture(scope="session")
def constant_predictor(square_ae, constant_video):
    return converged_predictor(square_ae, constant_video)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
