import numpy as np
import pytest
import torch

from sumd.multistage import SUMDConfig
from sumd.network import StageConfig

torch.set_num_threads(1)


@pytest.fixture
def tiny_config():
    """Smallest two-stage model that still exercises every block."""
    return SUMDConfig(stages=2, stage=StageConfig(c_base=8, c_up=8, mu_iters=2, bst_per_skip=1))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def textured_images():
    # smooth ramps plus a few edges: cheap stand-ins for natural images
    yy, xx = np.mgrid[0:32, 0:32] / 31.0
    imgs = []
    for k in range(6):
        img = np.stack([xx, yy, 0.5 * (xx + yy)], axis=-1)
        img = np.roll(img, 5 * k, axis=1 if k % 2 else 0)
        img[8 + k:14 + k, 4:20] = 0.9
        imgs.append(img.astype(np.float32))
    return imgs


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
