from itertools import combinations

import numpy as np
import pytest

from mtpp.attention import EncoderConfig, init_encoder_params
from mtpp.events import EventSequence
from mtpp.metrics import (
    MetricReport,
    avg_otd,
    bootstrap_ci,
    loglik_decomposed,
    loglik_intensity_check,
    loglik_intensity_check_refined,
    next_event_scores,
    otd,
    rmse_star,
)
from mtpp.mixture import MixtureParams, time_log_likelihood


class UnitExponentialGaps:
    """Analytic stand-in for the gap model: Exp(1) gaps, hazard exactly 1."""

    K = 1

    def log_pdf(self, tau, prev_mark):
        return -np.asarray(tau, dtype=np.float64)

    def log_survival(self, tau, prev_mark):
        return -np.asarray(tau, dtype=np.float64)


def random_mixture(rng, K, M=3):
    weights, means, scales = [], [], []
    for _ in range(K + 1):
        weights.append(rng.dirichlet(np.ones(M)))
        means.append(rng.uniform(-1.0, 1.0, size=M))
        scales.append(rng.uniform(0.3, 1.2, size=M))
    return MixtureParams(
        K=K, weights=tuple(weights), means=tuple(means), scales=tuple(scales)
    )


def random_sequence(rng, n, K):
    times = np.cumsum(rng.exponential(1.0, size=n))
    marks = rng.integers(0, K, size=n)
    return EventSequence(times, marks, times[-1] + rng.uniform(0.1, 1.0) if n else 1.0)


class TestLogLikForms:
    def test_exponential_case_is_minus_T(self):
        config = EncoderConfig(K=1, n_layers=1, d_model=4, d_qk=4, seed=0)
        enc = init_encoder_params(config)
        hook = UnitExponentialGaps()
        seq = EventSequence(np.array([0.7]), np.array([0]), 3.0)
        dec = loglik_decomposed(hook, enc, config, seq)
        assert dec == pytest.approx(-3.0, abs=1e-12)
        chk = loglik_intensity_check(hook, enc, config, seq, n_quad=128)
        assert chk == pytest.approx(-3.0, abs=1e-10)

    def test_quadrature_precondition(self):
        config = EncoderConfig(K=1, n_layers=1, d_model=4, d_qk=4, seed=0)
        enc = init_encoder_params(config)
        seq = EventSequence(np.array([0.7]), np.array([0]), 3.0)
        with pytest.raises(ValueError):
            loglik_intensity_check(UnitExponentialGaps(), enc, config, seq, n_quad=50)

    def test_empty_sequence_survival_only(self):
        config = EncoderConfig(K=2, n_layers=1, d_model=4, d_qk=4, seed=1)
        enc = init_encoder_params(config)
        rng = np.random.default_rng(2)
        mix = random_mixture(rng, K=2)
        seq = EventSequence(np.array([]), np.array([], int), 4.0)
        assert loglik_decomposed(mix, enc, config, seq) == pytest.approx(
            mix.log_survival(4.0, None)
        )

    def test_additivity(self):
        from mtpp.attention import sequence_mark_log_likelihood

        rng = np.random.default_rng(3)
        config = EncoderConfig(K=3, n_layers=2, d_model=4, d_qk=4, seed=2)
        enc = init_encoder_params(config)
        mix = random_mixture(rng, K=3)
        seq = random_sequence(rng, 7, 3)
        total = loglik_decomposed(mix, enc, config, seq)
        parts = time_log_likelihood(mix, seq) + sequence_mark_log_likelihood(
            enc, config, seq
        )
        assert total == pytest.approx(parts, abs=1e-12)

    def test_forms_agree_on_random_models(self):
        rng = np.random.default_rng(4)
        for trial in range(4):
            K = int(rng.integers(1, 4))
            config = EncoderConfig(
                K=K, n_layers=int(rng.integers(1, 3)), d_model=4, d_qk=4, seed=trial
            )
            enc = init_encoder_params(config)
            mix = random_mixture(rng, K=K)
            seq = random_sequence(rng, int(rng.integers(1, 10)), K)
            dec = loglik_decomposed(mix, enc, config, seq)
            chk = loglik_intensity_check_refined(mix, enc, config, seq)
            assert abs(dec - chk) <= 1e-3 * max(len(seq), 1)


class TestNextEventScores:
    def test_perfect(self):
        assert next_event_scores([1.0, 2.0], [0, 1], [1.0, 2.0], [0, 1]) == (0.0, 0.0)

    def test_constant_offset(self):
        rmse, _ = next_event_scores(
            [1.5, 2.5, 3.5], [0, 0, 0], [1.0, 2.0, 3.0], [0, 0, 0]
        )
        assert rmse == pytest.approx(0.5, abs=1e-12)

    def test_all_marks_wrong(self):
        _, err = next_event_scores([1.0], [1], [1.0], [0])
        assert err == 100.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            next_event_scores([1.0], [0], [1.0, 2.0], [0, 0])

    def test_order_invariant(self):
        rng = np.random.default_rng(5)
        pt, tt = rng.normal(size=9), rng.normal(size=9)
        pk, tk = rng.integers(0, 3, 9), rng.integers(0, 3, 9)
        perm = rng.permutation(9)
        base = next_event_scores(pt, pk, tt, tk)
        shuffled = next_event_scores(pt[perm], pk[perm], tt[perm], tk[perm])
        assert shuffled == pytest.approx(base, rel=1e-12)


def brute_force_otd(seq_a, seq_b, c_del):
    """Exhaustive minimum over all monotone same-mark matchings."""
    ta, ka = np.asarray(seq_a[0], float), np.asarray(seq_a[1])
    tb, kb = np.asarray(seq_b[0], float), np.asarray(seq_b[1])
    total = 0.0
    for k in np.union1d(ka, kb):
        a = ta[ka == k]
        b = tb[kb == k]
        best = np.inf
        for r in range(min(a.size, b.size) + 1):
            for ia in combinations(range(a.size), r):
                for ib in combinations(range(b.size), r):
                    cost = sum(
                        abs(a[i] - b[j]) for i, j in zip(ia, ib)
                    ) + c_del * (a.size + b.size - 2 * r)
                    best = min(best, cost)
        total += best
    return total


class TestOtd:
    def test_identical_zero(self):
        seq = (np.array([1.0, 2.0, 3.0]), np.array([0, 1, 0]))
        assert otd(seq, seq, 1.0) == 0.0

    def test_empty_vs_n(self):
        a = (np.array([]), np.array([], int))
        b = (np.array([1.0, 2.0, 3.0]), np.array([0, 1, 0]))
        assert otd(a, b, 2.0) == pytest.approx(6.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        for _ in range(60):
            na, nb = rng.integers(0, 5), rng.integers(0, 5)
            a = (np.sort(rng.uniform(0, 5, na)), rng.integers(0, 2, na))
            b = (np.sort(rng.uniform(0, 5, nb)), rng.integers(0, 2, nb))
            c = float(rng.uniform(0.2, 3.0))
            assert otd(a, b, c) == pytest.approx(brute_force_otd(a, b, c), abs=1e-12)

    def test_symmetry_and_bound(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            na, nb = rng.integers(0, 6), rng.integers(0, 6)
            a = (np.sort(rng.uniform(0, 4, na)), rng.integers(0, 3, na))
            b = (np.sort(rng.uniform(0, 4, nb)), rng.integers(0, 3, nb))
            c = 1.3
            assert otd(a, b, c) == pytest.approx(otd(b, a, c), abs=1e-12)
            assert otd(a, b, c) <= c * (na + nb) + 1e-12

    def test_avg_otd_scales_grid(self):
        a = (np.array([1.0]), np.array([0]))
        b = (np.array([]), np.array([], int))
        # single unmatched event: otd = c_del, so the average is the grid mean
        assert avg_otd(a, b, scale=2.0) == pytest.approx(2.0 * np.mean([0.5, 1, 2, 4]))


class TestRmseStar:
    def test_identical(self):
        h = (np.array([1.0, 2.0]), np.array([0, 1]))
        assert rmse_star([h], [h], K=2) == 0.0

    def test_off_by_one_event(self):
        true = (np.array([1.0, 2.0, 3.0]), np.array([0, 1, 0]))
        pred = (np.array([1.1, 2.1]), np.array([0, 1]))  # one mark-0 event missing
        K = 4
        assert rmse_star([pred], [true], K=K) == pytest.approx(1.0 / np.sqrt(K))

    def test_hand_counted(self):
        true = (np.array([1.0, 2.0, 4.0]), np.array([0, 0, 1]))
        pred = (np.array([0.5, 1.5, 3.0, 3.5]), np.array([0, 1, 1, 0]))
        # window [1, 4]: pred counts inside = mark0: 2 -> |2-2|=0... recount:
        # pred events in [1,4]: (1.5,1),(3.0,1),(3.5,0) -> counts [1, 2]
        # true counts [2, 1]; squared errors [1, 1] -> rmse = 1
        assert rmse_star([pred], [true], K=2) == pytest.approx(1.0)

    def test_alignment_required(self):
        with pytest.raises(ValueError):
            rmse_star([], [(np.array([1.0]), np.array([0]))], K=1)


class TestBootstrap:
    def test_constant_values(self):
        rep = bootstrap_ci([3.0] * 10, n_resamples=200, seed=0)
        assert rep.ci_low == rep.point == rep.ci_high == 3.0

    def test_brackets_point(self):
        rng = np.random.default_rng(8)
        rep = bootstrap_ci(rng.normal(size=50), n_resamples=500, seed=1)
        assert rep.ci_low <= rep.point <= rep.ci_high

    def test_width_shrinks_like_sqrt_n(self):
        rng = np.random.default_rng(9)
        widths = []
        for n in (100, 400):
            vals = rng.normal(size=n)
            rep = bootstrap_ci(vals, n_resamples=2000, seed=2)
            widths.append(rep.ci_high - rep.ci_low)
        ratio = widths[0] / widths[1]
        assert 1.6 < ratio < 2.6  # ~2 expected for 4x the data

    def test_determinism(self):
        vals = list(np.random.default_rng(10).normal(size=20))
        a = bootstrap_ci(vals, seed=5)
        b = bootstrap_ci(vals, seed=5)
        assert (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)

    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            MetricReport("x", 1.0, 2.0, 3.0, 10)
