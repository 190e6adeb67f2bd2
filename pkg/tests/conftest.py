import numpy as np
import pytest


class StubRng:
    """Generator stand-in returning a fixed value for every uniform draw."""

    def __init__(self, value):
        self.value = value
        self.calls = 0

    def random(self, size=None):
        self.calls += 1 if size is None else int(np.prod(size))
        if size is None:
            return self.value
        return np.full(size, self.value, dtype=float)


@pytest.fixture
def stub_rng():
    return StubRng
