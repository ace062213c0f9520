import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("efree", max_examples=40, deadline=None)
settings.load_profile("efree")


@pytest.fixture
def f64():
    from efree.tensorcore import precision

    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    os.environ.setdefault("EFREE_THREADS", "1")


TINY = dict(image_size=16, patch_size=8, model_dim=16, heads=2, enc_layers=1, dec_layers=1,
            feature_channels=8, unet_ladder=[8, 8], head_width=8, head_levels=2, iterations=1,
            train_views=[2], steps=3, checkpoint_every=2, learning_rate=1e-3)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    from efree.harness import generate

    return generate(tmp_path_factory.mktemp("data"), seed=3, num_scenes=3, gaussians_per_scene=20,
                    image_size=16, baseline_deg=10.0, baseline_max=40.0)


@pytest.fixture
def tiny_cfg(tiny_data, tmp_path):
    from efree.harness import RunConfig

    return RunConfig(**TINY, data_dir=str(tiny_data), out_dir=str(tmp_path / "run"))


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record():
    """Store one PASS/FAIL line for an acceptance criterion, then return the verdict."""
    def _record(number: int, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(ACCEPTANCE[number])
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
