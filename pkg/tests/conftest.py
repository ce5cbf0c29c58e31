import numpy as np
import pytest

from fedmae.mae import ImageSample, ModelShape
from fedmae.partition import SynthSpec, generate_synth

TINY = ModelShape(patch=2, hidden=6, latent=3, height=4, width=4)


def random_images(n, shape=TINY, seed=0, classes=2):
    g = np.random.default_rng(seed)
    return [ImageSample(g.random((shape.height, shape.width)), "A", i % classes, i) for i in range(n)]


@pytest.fixture
def tiny_shape():
    return TINY


@pytest.fixture(scope="session")
def synth_small():
    return generate_synth(SynthSpec(classes=3, per_class=12, height=8, width=8, seed=3))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
