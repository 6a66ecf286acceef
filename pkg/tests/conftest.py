import random

import pytest

from kadlab.simnet import build_network


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="module")
def net1000():
    return build_network(1000, 7)


def brute_nearest(ids, key, k):
    return sorted(ids, key=lambda p: p ^ key)[:k]


def brute_region(ids, key, min_cpl):
    return {p for p in ids if 256 - (p ^ key).bit_length() >= min_cpl}
