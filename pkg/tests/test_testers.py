import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aktest.dist import DiscretePmf, make_pwc, mixture_half, rng_stream, sample_many, uniform, cdf
from aktest.instances import random_flat_density, regime_a_pair, regime_b_pair
from aktest.metrics import IntervalPartition, ak_distance_discrete, reduced_pmf
from aktest.testers import (
    ApplicabilityWarning,
    CALIBRATED_Z_MULT,
    Decision,
    DimensionMismatch,
    Label,
    LabeledSample,
    TesterConfig,
    UnsortedInput,
    calibrated_config,
    collision_statistic,
    draw_z,
    expected_sample_budget,
    flat_ak_tester,
    flat_sample_size,
    general_ak_tester,
    l2_closeness_tester,
    level_sample_budget,
    merge_labels,
    multiscale_schedule,
    random_binning,
    repetitions_for,
    simple_ak_tester,
    thin_counts,
    z_from_labels,
    z_statistic,
)

P, Q = Label.P, Label.Q


def labeled(labels, values=None):
    values = range(len(labels)) if values is None else values
    return [LabeledSample(float(v), lab) for v, lab in zip(values, labels)]


class TestZStatistic:
    def test_mixed(self):
        assert z_statistic(labeled([P, P, Q, P])) == -1

    def test_short(self):
        assert z_statistic([]) == 0
        assert z_statistic(labeled([P])) == 0

    def test_alternating(self):
        assert z_statistic(labeled([P, Q, P, Q, P])) == -4

    def test_unsorted(self):
        with pytest.raises(UnsortedInput):
            z_statistic(labeled([P, Q], [0.5, 0.2]))

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), max_size=40))
    def test_invariant_under_increasing_maps(self, items):
        items = sorted(items)
        samples = [LabeledSample(v, P if b else Q) for v, b in items]
        mapped = [LabeledSample(v**3 + 2 * v, s.label) for v, s in zip((v for v, _ in items), samples)]
        assert z_statistic(samples) == z_statistic(mapped)

    @given(st.lists(st.booleans(), max_size=50))
    def test_label_array_form_agrees(self, bits):
        samples = labeled([P if b else Q for b in bits])
        assert z_from_labels(np.array(bits, dtype=bool)) == z_statistic(samples)

    def test_merge_breaks_ties_randomly(self):
        xs, ys = np.zeros(200), np.zeros(200)
        labels = merge_labels(xs, ys, rng_stream(4))
        assert 0 < labels[:200].sum() < 200

    def test_null_moments(self):
        u = uniform()
        m = 400
        z = np.array([draw_z(u, u, m, rng_stream(11, i))[0] for i in range(4000)])
        # the walk has 2m - 1 steps on average, so Var Z = 2m - 1; 4000 draws give ~2.2% SE on the variance
        assert abs(z.mean()) <= 0.05 * math.sqrt(2 * m) * 2
        assert z.var() == pytest.approx(2 * m - 1, rel=0.1)

    def test_variance_bounded_on_instance_suite(self):
        m = 300
        pairs = [
            (uniform(), uniform()),
            (regime_a_pair(16, 0.5).p, regime_a_pair(16, 0.5).q),
            (regime_a_pair(64, 1.0).p, regime_a_pair(64, 1.0).q),
            (regime_b_pair(16, 0.5, False, rng_stream(1)).p, regime_b_pair(16, 0.5, False, rng_stream(1)).q),
            (make_pwc([0, 0.5, 1], [2, 0]), uniform()),
        ]
        for j, (p, q) in enumerate(pairs):
            z = [draw_z(p, q, m, rng_stream(12, j, i))[0] for i in range(600)]
            assert np.var(z) <= 10 * m


class TestSimpleTester:
    def test_null_acceptance_with_literal_threshold(self):
        u = uniform()
        cfg = TesterConfig(k=2, epsilon=1.0, C=1000 / 2**0.8)
        assert cfg.m == pytest.approx(1000)
        accepted = sum(not simple_ak_tester(u, u, cfg, rng_stream(21, i)).rejected for i in range(10**4))
        assert accepted / 10**4 >= 0.75

    def test_regime_a_rejection(self):
        pair = regime_a_pair(100, 0.6)
        cfg = calibrated_config(100, 0.6)
        rejected = sum(simple_ak_tester(pair.p, pair.q, cfg, rng_stream(22, i)).rejected for i in range(1000))
        assert rejected / 1000 >= 2 / 3

    def test_warns_below_applicability(self):
        with pytest.warns(ApplicabilityWarning):
            simple_ak_tester(uniform(), uniform(), TesterConfig(k=64, epsilon=0.1), rng_stream(0))

    def test_no_warning_in_range(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            simple_ak_tester(uniform(), uniform(), TesterConfig(k=64, epsilon=0.6), rng_stream(0))

    def test_trace(self):
        v = simple_ak_tester(uniform(), uniform(), TesterConfig(k=8, epsilon=1.0), rng_stream(1))
        assert {"z", "m", "z_score", "z_threshold_mult"} <= set(v.trace["stage1"])
        assert v.trace["stage1"]["z_threshold_mult"] == 3.0
        assert v.samples["z_p"] >= 0

    @pytest.mark.filterwarnings("ignore::aktest.testers.ApplicabilityWarning")
    def test_rejection_nondecreasing_in_m(self):
        pair = regime_a_pair(32, 0.5)
        rates = []
        trials = 300
        for m in (20, 60, 180, 540):
            cfg = TesterConfig(k=32, epsilon=0.5, C=m * 0.5**1.2 / 32**0.8, z_threshold_mult=CALIBRATED_Z_MULT)
            hits = sum(simple_ak_tester(pair.p, pair.q, cfg, rng_stream(23, m, i)).rejected for i in range(trials))
            rates.append(hits / trials)
        for a, b in zip(rates, rates[1:]):
            sigma = math.sqrt(0.25 / trials)
            assert b >= a - 2 * sigma * math.sqrt(2)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"k": 1, "epsilon": 0.5},
            {"k": 4, "epsilon": 0.0},
            {"k": 4, "epsilon": 2.5},
            {"k": 4, "epsilon": 0.5, "C": -1.0},
            {"k": 4, "epsilon": 0.5, "repetitions": 0},
            {"k": 4, "epsilon": 0.5, "z_threshold_mult": 0.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TesterConfig(**kwargs)

    def test_json_round_trip(self):
        cfg = TesterConfig(k=5, epsilon=0.3, C=2.0, z_threshold_mult=1.5)
        assert TesterConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_keys(self):
        with pytest.raises(ValueError):
            TesterConfig.from_json({"k": 5, "epsilon": 0.3, "bogus": 1})

    def test_sample_size(self):
        assert TesterConfig(k=32, epsilon=1.0, C=1.0).m == pytest.approx(16.0)


class TestL2Closeness:
    def test_equal_counts_give_negative_total(self):
        x = np.array([3, 0, 5, 2])
        assert collision_statistic(x, x) == -20

    def test_equal_counts_accept(self):
        x = np.array([[3, 0, 5, 2]] * 3)
        v = l2_closeness_tester(x, x, 4, 0.5, 0.1, rng_stream(0), m=10)
        assert v.decision is Decision.YES
        assert v.trace["statistics"] == [-20, -20, -20]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            l2_closeness_tester(np.zeros(4, int), np.zeros(5, int), 4, 0.5, 0.1, rng_stream(0))
        with pytest.raises(DimensionMismatch):
            l2_closeness_tester(np.zeros(4, int), np.zeros(4, int), 5, 0.5, 0.1, rng_stream(0))

    def test_uniform_null_acceptance(self):
        n, m = 256, 2000
        accepted = 0
        for i in range(300):
            r = rng_stream(31, i)
            x, y = r.poisson(m / n, n), r.poisson(m / n, n)
            accepted += not l2_closeness_tester(x, y, n, 1.0, 1 / 3, r, m=m).rejected
        assert accepted / 300 >= 2 / 3

    def test_far_pair_rejected(self):
        n, m = 64, 4000
        p = np.full(n, 1 / n)
        q = p.copy()
        q[: n // 2] *= 1.5
        q[n // 2 :] *= 0.5
        eps = math.sqrt(n) * np.linalg.norm(p - q)
        rejected = 0
        for i in range(100):
            r = rng_stream(32, i)
            v = l2_closeness_tester(r.poisson(m * p), r.poisson(m * q), n, eps, 1 / 3, r, m=m)
            rejected += v.rejected
        assert rejected / 100 >= 2 / 3

    def test_statistic_mean(self):
        n, m = 16, 500
        p = np.linspace(1, 3, n)
        p /= p.sum()
        q = np.full(n, 1 / n)
        r = rng_stream(33)
        t = np.array([collision_statistic(r.poisson(m * p), r.poisson(m * q)) for _ in range(5000)])
        expected = m**2 * np.sum((p - q) ** 2)
        assert abs(t.mean() - expected) <= 3 * t.std(ddof=1) / math.sqrt(t.size)

    def test_thinning_preserves_totals(self):
        counts = np.array([5, 0, 17, 3])
        split = thin_counts(counts, 5, rng_stream(1))
        assert split.shape == (5, 4)
        assert np.array_equal(split.sum(axis=0), counts)

    @pytest.mark.parametrize("delta,reps", [(0.5, 1), (1 / 3, 1), (0.2, 3), (1 / 16, 3), (1 / 48, 5)])
    def test_repetitions(self, delta, reps):
        assert repetitions_for(delta) == reps


class TestSchedule:
    def test_small_example(self):
        s = multiscale_schedule(4, 0.5, TesterConfig(k=4, epsilon=0.5, j0_offset=2))
        assert s.j0 == 3 and s.n == 32
        assert s.ells == (4, 8, 16)
        assert [lv.delta_j for lv in s.levels] == [1 / 6, 1 / 12, 1 / 24]

    @given(st.integers(2, 200), st.floats(0.01, 1.0), st.integers(0, 4))
    def test_invariants(self, k, eps, offset):
        s = multiscale_schedule(k, eps, scale_const=0.7, j0_offset=offset)
        assert s.j0 == max(1, math.ceil(math.log2(1 / eps) - 1e-12) + offset)
        assert sum(lv.delta_j for lv in s.levels) < 1 / 3
        for lv in s.levels:
            assert lv.ell == k * 2**lv.j
            assert lv.eps_j == pytest.approx(0.7 * eps * 2 ** (3 * lv.j / 8))
            assert lv.sample_free == (lv.eps_j > 1)
            assert len(lv.partition) == lv.ell
        for coarse, fine in zip(s.levels, s.levels[1:]):
            assert set(coarse.partition.cuts) <= set(fine.partition.cuts)
            assert fine.partition.cuts[::2] == coarse.partition.cuts

    def test_sample_free_levels(self):
        s = multiscale_schedule(4, 0.9, scale_const=1.0, j0_offset=3)
        assert any(lv.sample_free for lv in s.levels)

    @pytest.mark.parametrize("k", [2, 16, 256])
    def test_level_budgets_sum_to_order_m(self, k):
        ratios = []
        for eps in (0.5, 0.1, 0.01, 0.001):
            s = multiscale_schedule(k, eps, j0_offset=2)
            ratios.append(sum(level_sample_budget(s)) / (math.sqrt(k) / eps**2))
        # the ratio is a partial sum of sum_j 2^(-j/4) (ln 6 + j ln 2), which converges
        r = 2**-0.25
        limit = math.log(6) / (1 - r) + math.log(2) * r / (1 - r) ** 2
        assert all(a <= b for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] <= limit


def reduce_to(pair, n):
    part = IntervalPartition.uniform(n)
    return reduced_pmf(pair.p, part), reduced_pmf(pair.q, part)


class TestFlatTester:
    def test_identical_near_uniform_accepts(self):
        rng = rng_stream(41)
        masses = rng.dirichlet(np.full(64, 50.0))
        p = DiscretePmf(masses)
        accepted = sum(not flat_ak_tester(p, p, 8, 0.5, 1 / 3, rng_stream(41, i)).rejected for i in range(100))
        assert accepted / 100 >= 2 / 3

    def test_far_pair_rejects(self):
        pair = regime_a_pair(4, 1.0)
        p, q = reduce_to(pair, 9 * 8)
        rejected = sum(flat_ak_tester(p, q, 9, 1.0, 1 / 3, rng_stream(42, i)).rejected for i in range(50))
        assert rejected / 50 >= 2 / 3

    def test_reproducible_and_equal_sides(self):
        p = DiscretePmf(np.full(32, 1 / 32))
        a = flat_ak_tester(p, p, 4, 0.5, 0.1, rng_stream(43))
        b = flat_ak_tester(p, p, 4, 0.5, 0.1, rng_stream(43))
        assert a.trace == b.trace and a.samples == b.samples

    def test_support_mismatch(self):
        with pytest.raises(DimensionMismatch):
            flat_ak_tester(DiscretePmf(np.ones(2) / 2), DiscretePmf(np.ones(3) / 3), 2, 0.5, 0.1, rng_stream(0))

    def test_sample_size(self):
        assert flat_sample_size(16, 0.5, 2.0) == pytest.approx(32.0)

    @pytest.mark.parametrize("k", [1, 2, 4, 8])
    @pytest.mark.parametrize("eps", [0.25, 0.5, 1.0])
    def test_some_level_sees_the_distance(self, k, eps):
        # on the reduced instance, whenever A_K exceeds e some level j has
        # ||p_j - q_j||^2 >= e_j^2 / ell_j with e_j = c e 2^(3j/8), c = 5e-6
        big_k = 2 * k + 1
        s = multiscale_schedule(big_k, eps, scale_const=5e-6, j0_offset=2)
        p, q = reduce_to(regime_a_pair(k, eps), s.n)
        measured = ak_distance_discrete(p, q, big_k)
        assert measured > 0
        s = multiscale_schedule(big_k, measured * 0.999, scale_const=5e-6, j0_offset=2)
        d = p.masses - q.masses
        hit = False
        for lv in s.levels:
            dj = d.reshape(lv.ell, -1).sum(axis=1)
            hit |= float(np.sum(dj**2)) >= lv.eps_j**2 / lv.ell
        assert hit


class TestRandomBinning:
    def test_no_samples(self):
        assert random_binning([]).cuts == (0.0, 1.0)

    def test_one_sample(self):
        assert random_binning([0.5]).cuts == (0.0, 0.5, 1.0)

    def test_r_samples_give_r_plus_one_intervals(self):
        assert len(random_binning(rng_stream(0).random(7))) == 8

    def test_mean_mixture_mass_per_interval(self):
        p = make_pwc([0, 0.3, 1], [2, 4 / 7])
        q = make_pwc([0, 0.6, 1], [0.5, 1.75])
        mix = mixture_half(p, q)
        r, trials = 4, 20000
        rng = rng_stream(51)
        total = np.zeros(r + 1)
        for _ in range(trials):
            cuts = random_binning(sample_many(mix, r, rng)).cuts
            total += np.diff(cdf(mix, np.array(cuts)))
        mean = total / trials
        # each interval's mass is Beta(1, r), sd = sqrt(r / ((r+1)^2 (r+2)))
        se = math.sqrt(r / ((r + 1) ** 2 * (r + 2))) / math.sqrt(trials)
        assert np.all(np.abs(mean - 1 / (r + 1)) <= 4 * se)


class TestGeneralTester:
    def test_identical_accepts(self):
        d = random_flat_density(5, rng_stream(61))
        cfg = calibrated_config(8, 0.5)
        accepted = sum(not general_ak_tester(d, d, cfg, rng_stream(62, i)).rejected for i in range(60))
        assert accepted / 60 >= 2 / 3

    def test_regime_a_rejects(self):
        pair = regime_a_pair(8, 0.5)
        cfg = calibrated_config(8, 0.5)
        rejected = sum(general_ak_tester(pair.p, pair.q, cfg, rng_stream(63, i)).rejected for i in range(60))
        assert rejected / 60 >= 2 / 3

    def test_trace_covers_executed_stages(self):
        u = uniform()
        cfg = TesterConfig(k=4, epsilon=0.5, repetitions=3)
        v = general_ak_tester(u, u, cfg, rng_stream(64))
        assert "stage1" in v.trace
        if not v.trace["stage1"]["reject"]:
            assert 1 <= len(v.trace["stage2"]["iterations"]) <= 3
            assert v.trace["stage2"]["k"] == 9
            assert v.trace["stage2"]["eps"] == pytest.approx(0.5 / cfg.C)

    def test_stage_one_rejection_skips_stage_two(self):
        p, q = make_pwc([0, 0.5, 1], [2, 0]), make_pwc([0, 0.5, 1], [0, 2])
        v = general_ak_tester(p, q, TesterConfig(k=2, epsilon=1.0, C=50.0), rng_stream(65))
        assert v.rejected and "stage2" not in v.trace

    def test_literal_threshold_default(self):
        v = general_ak_tester(uniform(), uniform(), TesterConfig(k=4, epsilon=1.0, repetitions=1), rng_stream(66))
        assert v.trace["stage1"]["z_threshold_mult"] == 5.0

    def test_sample_budget_shape(self):
        ratios = []
        for k in (4, 64, 1024, 2**14):
            for eps in (1.0, 0.5, 0.1, 0.02):
                cfg = TesterConfig(k=k, epsilon=eps)
                shape = max(k**0.8 / eps**1.2, math.sqrt(k) / eps**2)
                ratios.append(expected_sample_budget(cfg)["total"] / shape)
        # the budget is the same function of (k, eps) up to a bounded factor
        assert max(ratios) / min(ratios) < 50
