import numpy as np
import pytest


class StubRng:
    """Deterministic stand-in for numpy Generator with queued outputs.

    Lets tests force specific coin flips, magnitude bins, or patch centers.
    Queues are consumed front to back; an exhausted queue falls back to a
    seeded generator so unrelated draws stay valid.
    """

    def __init__(self, floats=(), ints=()):
        self._floats = list(floats)
        self._ints = list(ints)
        self._fallback = np.random.default_rng(0)

    def random(self, *args, **kwargs):
        if self._floats:
            return self._floats.pop(0)
        return self._fallback.random(*args, **kwargs)

    def integers(self, *args, **kwargs):
        if self._ints:
            return self._ints.pop(0)
        return self._fallback.integers(*args, **kwargs)


@pytest.fixture
def stub_rng_factory():
    return StubRng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
