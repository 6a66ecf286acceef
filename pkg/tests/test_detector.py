import io
import math
import random

import numpy as np
import pytest
from scipy import stats

from kadlab.attack import closest_honest_distance, place_sybils
from kadlab.detector import (
    SUPPORT,
    CplDistribution,
    detect,
    empirical_distribution,
    kl_divergence,
    model_cdf_jth,
    model_distribution,
)
from kadlab.estimator import NetsizeEstimate, NetsizeEstimator, UninitializedEstimator
from kadlab.keyspace import common_prefix_length
from kadlab.simnet import SybilCensoring, build_network

LEVELS = 72  # CPL levels tracked explicitly by the Monte Carlo; the rest lumped at the top


def mc_top_cpls(n, trials, k=20, seed=0):
    """Counts of each CPL among the k largest of n geometric draws, per trial.

    Draws the per-level histogram of all n CPLs as one multinomial, then
    peels off the k largest from the top level down.
    """
    probs = 0.5 ** (np.arange(LEVELS) + 1.0)
    probs = np.append(probs, 1 - probs.sum())
    counts = np.random.default_rng(seed).multinomial(n, probs, size=trials)
    above = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1] - counts  # strictly above each level
    return np.clip(k - above, 0, counts)


@pytest.fixture(scope="module")
def mc10k():
    return mc_top_cpls(10_000, 100_000)


def test_cdf_edges():
    for j in (1, 5, 20):
        assert model_cdf_jth(j, -1, 10_000) == 0.0
        assert abs(model_cdf_jth(j, 256, 10_000) - 1.0) <= 1e-9
    with pytest.raises(ValueError):
        model_cdf_jth(0, 3, 100)


@pytest.mark.parametrize("n", [100, 10_000, 25_000])
def test_cdf_matches_binomial_oracle(n):
    for j in (1, 3, 20):
        for x in range(0, 30):
            expected = stats.binom.cdf(j - 1, n, 0.5 ** (x + 1))
            assert model_cdf_jth(j, x, n) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_max_cpl_cdf_against_monte_carlo(mc10k):
    # the maximum sits at the highest level with a non-zero count
    top = LEVELS - np.argmax(mc10k[:, ::-1] > 0, axis=1)
    for x in range(5, 30):
        freq = np.mean(top <= x)
        assert abs(model_cdf_jth(1, x, 10_000) - freq) < 0.01


@pytest.mark.parametrize("n", [10**2, 10**4, 10**6])
def test_model_sums_to_one(n):
    assert abs(sum(model_distribution(n).pmf) - 1) <= 1e-9


def test_model_total_variation_against_monte_carlo(mc10k):
    mc = mc10k.sum(axis=0)[:LEVELS] / (20 * len(mc10k))
    model = np.array(model_distribution(10_000).pmf[:LEVELS])
    assert 0.5 * np.abs(mc - model).sum() < 0.01


def test_doubling_n_shifts_mean_by_one_bit():
    shift = model_distribution(20_000).mean() - model_distribution(10_000).mean()
    assert abs(shift - 1.0) <= 0.05


def test_tiny_network_model_still_normalised():
    assert abs(sum(model_distribution(5, k=20).pmf) - 1) <= 1e-9


def test_empirical_forms():
    assert empirical_distribution([7] * 20)[7] == 1.0
    q = empirical_distribution(list(range(20)))
    assert all(q[x] == pytest.approx(1 / 20) for x in range(20))
    with pytest.raises(ValueError):
        empirical_distribution([1, 2], k=20)


def test_empirical_from_real_lookup():
    net = build_network(10_000, 3)
    key = random.Random(3).getrandbits(256)
    cpls = [common_prefix_length(p, key) for p in net.get_closest_peers(key)]
    q = empirical_distribution(cpls)
    assert abs(sum(q.pmf) - 1) <= 1e-12
    assert set(q.support()) <= set(cpls)


def point_mass(x):
    pmf = [0.0] * SUPPORT
    pmf[x] = 1.0
    return CplDistribution(tuple(pmf))


def test_kl_examples():
    p = model_distribution(10_000)
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)
    pmf = [0.0] * SUPPORT
    pmf[12], pmf[13] = 0.25, 0.75
    assert kl_divergence(point_mass(12), CplDistribution(tuple(pmf))) == pytest.approx(math.log(4), abs=1e-12)


def test_gibbs_inequality_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        width = rng.integers(1, 40)
        q = np.zeros(SUPPORT)
        q[rng.integers(0, 40, size=width)] = rng.random(width)
        q /= q.sum()
        p = rng.dirichlet(np.ones(SUPPORT))
        assert kl_divergence(CplDistribution(tuple(q)), CplDistribution(tuple(p))) >= 0


def test_forty_bit_prefix_is_flagged():
    key = random.Random(40).getrandbits(256)
    rnd = random.Random(41)
    # flip bit 40 and randomise the tail: every peer shares exactly 40 leading bits
    fake = [key ^ (1 << 215) ^ rnd.getrandbits(215) for _ in range(20)]
    fake.sort(key=key.__xor__)
    n = 10_000
    verdict = detect(lambda _: fake, NetsizeEstimate(n, 1, ()), key)
    assert verdict.attacked and verdict.kl > 10
    # hand evaluation: q is a point mass at 40, so D = -ln p(40)
    s39, s40 = 0.5**40, 0.5**41
    p40 = np.mean([stats.binom.sf(j - 1, n, s39) - stats.binom.sf(j - 1, n, s40) for j in range(1, 21)])
    assert verdict.kl == pytest.approx(-math.log(p40), abs=1e-4)


@pytest.fixture(scope="module")
def net10k():
    net = build_network(10_000, 17)
    est = NetsizeEstimator()
    rnd = random.Random(17)
    for _ in range(256):
        key = rnd.getrandbits(256)
        est.ingest(key, net.get_closest_peers(key))
    return net, est


def test_detect_uses_one_lookup_and_leaves_state(net10k):
    net, est = net10k
    calls = []

    def lookup(key):
        calls.append(key)
        return net.get_closest_peers(key)

    before = io.StringIO()
    net.write_snapshot(before)
    verdict = detect(lookup, est, 99)
    after = io.StringIO()
    net.write_snapshot(after)
    assert calls == [99]
    assert before.getvalue() == after.getvalue()
    assert verdict.to_row()["attacked"] in (0, 1)


def test_detect_needs_samples_and_peers(net10k):
    with pytest.raises(UninitializedEstimator):
        detect(net10k[0].get_closest_peers, NetsizeEstimator(), 5)
    with pytest.raises(ValueError):
        detect(lambda _: [], NetsizeEstimate(1000, 1, ()), 5)


def test_false_positive_rate_small(net10k):
    net, est = net10k
    rnd = random.Random(5)
    flagged = sum(detect(net.get_closest_peers, est, rnd.getrandbits(256)).attacked for _ in range(200))
    assert flagged / 200 <= 0.05


def test_median_kl_grows_with_sybil_count(net10k):
    net, _ = net10k
    estimate = NetsizeEstimate(10_000, 1, ())
    medians = []
    for e in (0, 15, 20, 45):
        scores = []
        rnd = random.Random(123)  # same CIDs for every e
        for t in range(40):
            cid = rnd.getrandbits(256)
            added = []
            if e:
                batch = place_sybils(cid, e, closest_honest_distance(net, cid), seed=t, exclude=net.nodes.keys())
                for s in batch.ids:
                    net.add_node(s, SybilCensoring(frozenset({cid})))
                added = batch.ids
            scores.append(detect(net.get_closest_peers, estimate, cid).kl)
            for s in added:
                net.remove_node(s)
        medians.append(float(np.median(scores)))
    assert medians == sorted(medians)
    assert medians[-1] > 0.94 > medians[0]
