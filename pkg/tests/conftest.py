import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from anysr.imaging import ImagePlanar  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w, c=3) -> ImagePlanar:
    return ImagePlanar(rng.uniform(0.0, 1.0, (c, h, w)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(" ")[0])):
            terminalreporter.write_line(line)
