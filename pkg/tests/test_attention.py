import numpy as np
import pytest

from mtpp.attention import (
    AttentionMarkClassifier,
    EncoderConfig,
    EncoderParams,
    EncoderState,
    TrainOptions,
    attention_weight,
    encode,
    init_encoder_params,
    load_encoder,
    mark_log_likelihood_and_grad,
    mark_pmf,
    save_encoder,
    sequence_mark_log_likelihood,
    sequence_mark_log_pmf,
    temporal_embedding,
    train_marks,
)
from mtpp.events import EventSequence


def random_sequence(rng, n, K, rate=1.0):
    times = np.cumsum(rng.exponential(1.0 / rate, size=n))
    marks = rng.integers(0, K, size=n)
    return EventSequence(times, marks, times[-1] + 1.0 if n else 1.0)


def zero_params(config):
    p = init_encoder_params(config)
    return EncoderParams(
        base=np.zeros_like(p.base),
        queries=[np.zeros_like(a) for a in p.queries],
        keys=[np.zeros_like(a) for a in p.keys],
        values=[np.zeros_like(a) for a in p.values],
        classifier=np.zeros_like(p.classifier),
    )


class TestTemporalEmbedding:
    def test_zero_time(self):
        z = temporal_embedding(0.0, 8)
        assert np.all(z[0::2] == 0.0) and np.all(z[1::2] == 1.0)

    def test_lowest_frequency_pair(self):
        z = temporal_embedding(np.pi / 2, 2)
        np.testing.assert_allclose(z, [1.0, 0.0], atol=1e-15)

    def test_bounded(self):
        rng = np.random.default_rng(0)
        z = temporal_embedding(rng.uniform(0, 1e6, size=50), 16)
        assert np.all(np.abs(z) <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError):
            temporal_embedding(1.0, 7)


class TestAttentionWeight:
    def test_orthogonal(self):
        assert attention_weight(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 4.0) == 1.0

    def test_unit_score(self):
        d = 9.0
        k = np.array([np.sqrt(d), 0.0])
        q = np.array([1.0, 0.0])
        assert attention_weight(k, q, d) == pytest.approx(np.e, abs=1e-12)

    def test_positive(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert attention_weight(rng.normal(size=5), rng.normal(size=5), 5.0) > 0


class TestEncode:
    def setup_method(self):
        self.config = EncoderConfig(K=3, n_layers=2, d_model=4, d_qk=4, seed=0)
        self.params = init_encoder_params(self.config)

    def test_empty_history_is_base_stack(self):
        stack = encode(self.params, self.config, (np.array([]), np.array([], int)), (2.0, 1))
        for layer in stack.layers:
            np.testing.assert_array_equal(layer, self.params.base[1])
        assert stack.concatenated.shape == (self.config.d_embed,)

    def test_empty_history_time_independent(self):
        h = (np.array([]), np.array([], int))
        a = encode(self.params, self.config, h, (1.0, 0)).concatenated
        b = encode(self.params, self.config, h, (123.4, 0)).concatenated
        np.testing.assert_array_equal(a, b)

    def test_single_event_unit_weight_increment(self):
        # zero query projections force every attention score to 0, so the
        # single history event gets weight 1 and the update is tanh(v / 2)
        params = init_encoder_params(self.config)
        params.queries = [np.zeros_like(a) for a in params.queries]
        hist = (np.array([1.0]), np.array([2]))
        stack = encode(params, self.config, hist, (1.5, 0))
        z = temporal_embedding(1.0, self.config.d_embed)
        x = np.concatenate([z, params.base[2]])
        v = params.values[0] @ x
        expected = params.base[0] + np.tanh(v / 2.0)
        np.testing.assert_allclose(stack.layers[1], expected, atol=1e-12)

    def test_masking_violation_raises(self):
        hist = (np.array([1.0, 2.0]), np.array([0, 1]))
        with pytest.raises(ValueError):
            encode(self.params, self.config, hist, (1.5, 0))

    def test_stack_width(self):
        rng = np.random.default_rng(2)
        seq = random_sequence(rng, 6, 3)
        stack = encode(
            self.params, self.config, (seq.times, seq.marks), (seq.times[-1] + 1.0, 2)
        )
        assert stack.concatenated.shape == ((self.config.n_layers + 1) * 4,)


class TestMarkPmf:
    def test_zero_classifier_uniform(self):
        config = EncoderConfig(K=4, n_layers=1, d_model=4, d_qk=4, seed=1)
        params = init_encoder_params(config)
        params.classifier = np.zeros_like(params.classifier)
        rng = np.random.default_rng(3)
        seq = random_sequence(rng, 5, 4)
        p = mark_pmf(params, config, (seq.times, seq.marks), seq.times[-1] + 0.5)
        np.testing.assert_allclose(p, 0.25, atol=1e-12)

    def test_engineered_logits(self):
        # empty history, identical base rows: logits (log 2, 0) -> (2/3, 1/3)
        config = EncoderConfig(K=2, n_layers=1, d_model=4, d_qk=4, seed=0)
        params = init_encoder_params(config)
        params.base = np.ones_like(params.base)
        w = np.zeros_like(params.classifier)
        w[0, :] = np.log(2.0) / config.d_embed
        params.classifier = w
        p = mark_pmf(params, config, (np.array([]), np.array([], int)), 1.0)
        np.testing.assert_allclose(p, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(4)
        config = EncoderConfig(K=5, n_layers=2, d_model=6, d_qk=6, seed=2)
        params = init_encoder_params(config)
        for _ in range(5):
            seq = random_sequence(rng, 8, 5)
            p = mark_pmf(params, config, (seq.times, seq.marks), seq.times[-1] + 1.0)
            assert abs(p.sum() - 1.0) <= 1e-12


class TestMaskingInvariance:
    def test_suffix_modification_bitwise(self):
        rng = np.random.default_rng(5)
        config = EncoderConfig(K=3, n_layers=2, d_model=4, d_qk=4, seed=3)
        params = init_encoder_params(config)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            seq = random_sequence(rng, n, 3)
            cut = int(rng.integers(1, n))
            base = sequence_mark_log_pmf(params, config, seq)

            times = seq.times.copy()
            marks = seq.marks.copy()
            times[cut:] += rng.uniform(0.1, 2.0, size=n - cut).cumsum()
            marks[cut:] = rng.integers(0, 3, size=n - cut)
            modified = EventSequence(times, marks, times[-1] + 1.0)
            other = sequence_mark_log_pmf(params, config, modified)
            # positions before the first modified event see identical queries
            # and identical histories: outputs must match bit for bit
            assert np.array_equal(base[:cut], other[:cut])

    def test_truncation_matches(self):
        rng = np.random.default_rng(6)
        config = EncoderConfig(K=2, n_layers=1, d_model=4, d_qk=4, seed=4)
        params = init_encoder_params(config)
        seq = random_sequence(rng, 10, 2)
        full = sequence_mark_log_pmf(params, config, seq)
        prefix = EventSequence(seq.times[:6], seq.marks[:6], seq.times[5] + 1.0)
        part = sequence_mark_log_pmf(params, config, prefix)
        assert np.array_equal(full[:6], part)


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        config = EncoderConfig(K=3, n_layers=2, d_model=4, d_qk=4, n_heads=2, seed=5)
        params = init_encoder_params(config)
        batch = [random_sequence(rng, 5, 3) for _ in range(2)]
        _, grads = mark_log_likelihood_and_grad(params, config, batch)

        arrays = params.tensors()
        garrays = grads.tensors()
        h = 1e-5
        for arr, ga in zip(arrays, garrays):
            flat = arr.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                hi, _ = mark_log_likelihood_and_grad(params, config, batch)
                flat[i] = orig - h
                lo, _ = mark_log_likelihood_and_grad(params, config, batch)
                flat[i] = orig
                num[i] = (hi - lo) / (2 * h)
            num = num.reshape(arr.shape)
            rel = np.max(np.abs(ga - num)) / max(np.max(np.abs(num)), 1e-8)
            assert rel <= 1e-4

    def test_single_mark_zero_loss_and_grad(self):
        config = EncoderConfig(K=1, n_layers=1, d_model=4, d_qk=4, seed=6)
        params = init_encoder_params(config)
        rng = np.random.default_rng(8)
        batch = [random_sequence(rng, 6, 1)]
        value, grads = mark_log_likelihood_and_grad(params, config, batch)
        assert value == 0.0
        for g in grads.tensors():
            np.testing.assert_array_equal(g, 0.0)

    def test_zero_params_uniform_loss(self):
        config = EncoderConfig(K=4, n_layers=1, d_model=4, d_qk=4, seed=7)
        params = zero_params(config)
        seq = EventSequence(np.array([1.0]), np.array([2]), 2.0)
        value, _ = mark_log_likelihood_and_grad(params, config, [seq])
        assert value == pytest.approx(np.log(1.0 / 4.0), abs=1e-12)


class TestPathConsistency:
    def test_training_and_inference_forwards_agree(self):
        rng = np.random.default_rng(9)
        for seed in range(3):
            config = EncoderConfig(K=4, n_layers=2, d_model=6, d_qk=4, n_heads=2, seed=seed)
            params = init_encoder_params(config)
            seq = random_sequence(rng, 9, 4)
            value, _ = mark_log_likelihood_and_grad(params, config, [seq])
            assert value == pytest.approx(
                sequence_mark_log_likelihood(params, config, seq), abs=1e-12
            )

    def test_incremental_append_matches_fresh_build(self):
        rng = np.random.default_rng(10)
        config = EncoderConfig(K=3, n_layers=2, d_model=4, d_qk=4, seed=8)
        params = init_encoder_params(config)
        seq = random_sequence(rng, 6, 3)
        state = EncoderState.from_histories(
            params, config, [(seq.times, seq.marks)], extra_slots=3
        )
        t_cursor = seq.times[-1]
        appended_times, appended_marks = [], []
        for _ in range(3):
            t_cursor += 0.7
            lp, stacks = state.query(
                np.array([[t_cursor]]), state.n_valid[:, None]
            )
            k = np.array([int(np.argmax(lp[0, 0]))])
            state.append(np.array([t_cursor]), k, stacks)
            appended_times.append(t_cursor)
            appended_marks.append(int(k[0]))

        grown_times = np.concatenate([seq.times, appended_times])
        grown_marks = np.concatenate([seq.marks, appended_marks])
        probe_t = t_cursor + 1.0
        lp_inc, _ = state.query(np.array([[probe_t]]), state.n_valid[:, None])
        fresh = mark_pmf(params, config, (grown_times, grown_marks), probe_t)
        np.testing.assert_allclose(np.exp(lp_inc[0, 0]), fresh, atol=1e-13)

    def test_batch_composition_irrelevant(self):
        rng = np.random.default_rng(11)
        config = EncoderConfig(K=3, n_layers=1, d_model=4, d_qk=4, seed=9)
        params = init_encoder_params(config)
        seqs = [random_sequence(rng, int(rng.integers(2, 9)), 3) for _ in range(4)]
        hists = [(s.times, s.marks) for s in seqs]
        cap = max(len(s) for s in seqs)
        joint = EncoderState.from_histories(params, config, hists, extra_slots=0)
        t_q = np.array([[s.times[-1] + 0.5] for s in seqs])
        vis = joint.n_valid[:, None]
        lp_joint, _ = joint.query(t_q, vis)
        for b, s in enumerate(seqs):
            single = EncoderState.from_histories(
                params, config, [hists[b]], extra_slots=cap - len(s)
            )
            lp_one, _ = single.query(t_q[b : b + 1], single.n_valid[:, None])
            assert np.array_equal(lp_joint[b], lp_one[0])


class TestTraining:
    def test_zero_epochs_returns_init(self):
        config = EncoderConfig(K=2, n_layers=1, d_model=4, d_qk=4, seed=10)
        rng = np.random.default_rng(12)
        data = [random_sequence(rng, 5, 2) for _ in range(4)]
        result = train_marks(config, data, data, TrainOptions(epochs=0))
        ref = init_encoder_params(config)
        for a, b in zip(result.params.tensors(), ref.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_seeded_determinism(self):
        config = EncoderConfig(K=2, n_layers=1, d_model=4, d_qk=4, seed=11)
        rng = np.random.default_rng(13)
        data = [random_sequence(rng, 6, 2) for _ in range(6)]
        r1 = train_marks(config, data, data, TrainOptions(epochs=3, batch_size=2))
        r2 = train_marks(config, data, data, TrainOptions(epochs=3, batch_size=2))
        assert r1.dev_curve == r2.dev_curve
        for a, b in zip(r1.params.tensors(), r2.params.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_training_improves_dev(self):
        # alternating marks are exactly learnable from the previous mark
        rng = np.random.default_rng(14)
        K = 2
        seqs = []
        for _ in range(16):
            n = 24
            times = np.cumsum(rng.exponential(1.0, size=n))
            marks = np.arange(n) % K
            seqs.append(EventSequence(times, marks, times[-1] + 1.0))
        config = EncoderConfig(K=K, n_layers=1, d_model=8, d_qk=8, seed=12)
        result = train_marks(
            config, seqs[:12], seqs[12:], TrainOptions(epochs=30, lr=5e-3)
        )
        assert result.dev_curve[-1] > result.dev_curve[0]


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        config = EncoderConfig(K=3, n_layers=2, d_model=4, d_qk=8, n_heads=2, seed=13)
        params = init_encoder_params(config)
        path = tmp_path / "enc.bin"
        save_encoder(path, params, config)
        loaded, config2 = load_encoder(path)
        assert config2 == config
        for a, b in zip(params.tensors(), loaded.tensors()):
            np.testing.assert_array_equal(a, b)


class TestEstimator:
    def test_fit_predict(self):
        rng = np.random.default_rng(15)
        seqs = [random_sequence(rng, 8, 3) for _ in range(6)]
        clf = AttentionMarkClassifier(
            n_layers=1, d_model=4, d_qk=4, epochs=2, seed=14
        ).fit(seqs, X_dev=seqs[:2])
        p = clf.predict_proba((seqs[0].times, seqs[0].marks), seqs[0].times[-1] + 1.0)
        assert p.shape == (3,)
        assert clf.predict((seqs[0].times, seqs[0].marks), seqs[0].times[-1] + 1.0) in (
            0,
            1,
            2,
        )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(K=2, n_layers=1, d_model=4, d_qk=5, n_heads=2)
        with pytest.raises(ValueError):
            EncoderConfig(K=2, n_layers=2, d_model=3, d_qk=4)  # odd stack width

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone

        est = AttentionMarkClassifier(K=4, d_model=8, lr=2e-3, seed=3)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
