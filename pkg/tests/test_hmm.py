import itertools

import numpy as np
import pytest

from sparseasr.errors import InvalidInputError
from sparseasr.hmm import (
    Recognizer,
    WordHmm,
    baum_welch,
    emission_log_matrix,
    flat_start,
    forward_log_likelihood,
    left_right_transitions,
    load_recognizer,
    recognize,
    save_recognizer,
    train_recognizer,
    viterbi_path,
)
from sparseasr.mixtures import BernoulliMixture


def bernoulli_state(probs, priors=None):
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    probs = np.clip(probs, 1e-4, 1 - 1e-4)
    m = probs.shape[0]
    priors = np.full(m, 1.0 / m) if priors is None else np.asarray(priors, float)
    return BernoulliMixture(priors=priors, probs=probs)


def random_word_hmm(rng, n_states, dim, n_components=1, label="w"):
    a = np.zeros((n_states, n_states))
    for q in range(n_states - 1):
        stay = rng.uniform(0.3, 0.8)
        a[q, q] = stay
        a[q, q + 1] = 1.0 - stay
    a[-1, -1] = 1.0
    emissions = [bernoulli_state(rng.uniform(0.1, 0.9, (n_components, dim)))
                 for _ in range(n_states)]
    return WordHmm(label=label, transitions=a, emissions=emissions)


def enumerate_log_likelihood(model, seq):
    """Brute-force sum over every state path (test oracle)."""
    seq = np.atleast_2d(seq)
    t_len = seq.shape[0]
    s = model.n_states
    log_b = np.array([[model.emissions[q].log_pdf(seq[t]) for q in range(s)]
                      for t in range(t_len)])
    with np.errstate(divide="ignore"):
        log_a = np.log(model.transitions)
    total = -np.inf
    for path in itertools.product(range(s), repeat=t_len):
        if path[0] != 0:
            continue
        lp = log_b[0, path[0]]
        for t in range(1, t_len):
            lp += log_a[path[t - 1], path[t]] + log_b[t, path[t]]
        total = np.logaddexp(total, lp)
    return total


def sample_sequences(model, rng, count, length):
    out = []
    for _ in range(count):
        frames = []
        q = 0
        for _ in range(length):
            e = model.emissions[q]
            m = rng.choice(e.n_components, p=e.priors)
            frames.append((rng.random(e.dim) < e.probs[m]).astype(np.uint8))
            q = rng.choice(model.n_states, p=model.transitions[q])
        out.append(np.array(frames))
    return out


class TestForward:
    def test_single_state_sums_emissions(self):
        mix = bernoulli_state(np.full((1, 4), 0.3))
        model = WordHmm(label="a", transitions=np.array([[1.0]]), emissions=[mix])
        rng = np.random.default_rng(0)
        seq = rng.integers(0, 2, (7, 4))
        expected = sum(mix.log_pdf(f) for f in seq)
        assert forward_log_likelihood(model, seq) == pytest.approx(expected, rel=1e-12)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            s = int(rng.integers(2, 5))
            dim = int(rng.integers(2, 7))
            t_len = int(rng.integers(2, 7))
            model = random_word_hmm(rng, s, dim)
            seq = rng.integers(0, 2, (t_len, dim))
            got = forward_log_likelihood(model, seq)
            want = enumerate_log_likelihood(model, seq)
            assert got == pytest.approx(want, rel=1e-8)

    def test_three_state_length_four(self):
        rng = np.random.default_rng(2)
        model = random_word_hmm(rng, 3, 5)
        seq = rng.integers(0, 2, (4, 5))
        assert forward_log_likelihood(model, seq) == pytest.approx(
            enumerate_log_likelihood(model, seq), rel=1e-8)

    def test_longer_sequence_has_lower_mass(self):
        rng = np.random.default_rng(3)
        model = random_word_hmm(rng, 3, 6)
        seq = rng.integers(0, 2, (10, 6))
        assert forward_log_likelihood(model, seq) <= forward_log_likelihood(model, seq[:4])

    def test_empty_sequence_rejected(self):
        model = random_word_hmm(np.random.default_rng(4), 2, 3)
        with pytest.raises(InvalidInputError):
            forward_log_likelihood(model, np.zeros((0, 3), dtype=int))

    def test_dim_mismatch_rejected(self):
        model = random_word_hmm(np.random.default_rng(5), 2, 3)
        with pytest.raises(InvalidInputError):
            forward_log_likelihood(model, np.zeros((4, 5), dtype=int))


def support_block(lo, hi, variant, dim=16):
    """Two component variants lighting up halves of a disjoint dim range."""
    p = np.full(dim, 0.05)
    mid = (lo + hi) // 2
    if variant == 0:
        p[lo:mid] = 0.9
    else:
        p[mid:hi] = 0.9
    return p


def three_state_truth():
    return WordHmm(
        label="w",
        transitions=np.array([[0.7, 0.3, 0.0], [0.0, 0.6, 0.4], [0.0, 0.0, 1.0]]),
        emissions=[
            bernoulli_state(np.vstack([support_block(0, 6, 0), support_block(0, 6, 1)])),
            bernoulli_state(np.vstack([support_block(6, 11, 0), support_block(6, 11, 1)])),
            bernoulli_state(np.vstack([support_block(11, 16, 0), support_block(11, 16, 1)])),
        ],
    )


class TestBaumWelch:
    def test_recovers_known_transitions(self):
        rng = np.random.default_rng(10)
        truth = three_state_truth()
        seqs = sample_sequences(truth, rng, 200, 24)
        init = flat_start("w", seqs, n_states=3, n_components=2, seed=1)
        trained, hist = baum_welch([init], {"w": seqs}, iterations=30)
        est = trained[0].transitions
        assert np.max(np.abs(est - truth.transitions)) < 0.1
        assert np.all(np.diff(hist["w"]) >= -1e-6)

    def test_converged_model_is_fixed_point(self):
        rng = np.random.default_rng(11)
        truth = random_word_hmm(rng, 2, 6, label="w")
        seqs = sample_sequences(truth, rng, 40, 12)
        init = flat_start("w", seqs, n_states=2, n_components=1, seed=0)
        settled, _ = baum_welch([init], {"w": seqs}, iterations=300)
        once, _ = baum_welch(settled, {"w": seqs}, iterations=1)
        assert np.max(np.abs(once[0].transitions - settled[0].transitions)) < 1e-6
        for a, b in zip(once[0].emissions, settled[0].emissions):
            assert np.max(np.abs(a.probs - b.probs)) < 1e-6

    def test_16_state_8_component_config_accepted(self):
        rng = np.random.default_rng(12)
        seqs = [rng.integers(0, 2, (40, 24)) for _ in range(6)]
        model = flat_start("w", seqs, n_states=16, n_components=8, seed=3)
        trained, hist = baum_welch([model], {"w": seqs}, iterations=2)
        assert trained[0].n_states == 16
        assert trained[0].emissions[0].n_components == 8

    def test_left_right_band_preserved(self):
        rng = np.random.default_rng(13)
        truth = random_word_hmm(rng, 4, 8, label="w")
        seqs = sample_sequences(truth, rng, 30, 16)
        init = flat_start("w", seqs, n_states=4, n_components=2, seed=2)
        trained, _ = baum_welch([init], {"w": seqs}, iterations=10)
        a = trained[0].transitions
        band = np.triu(np.tril(np.ones_like(a), 1))
        assert np.all(a[band == 0] == 0.0)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_short_sequences_skipped_with_warning(self, caplog):
        import logging

        rng = np.random.default_rng(14)
        truth = random_word_hmm(rng, 3, 5, label="w")
        seqs = sample_sequences(truth, rng, 10, 9) + [np.zeros((2, 5), dtype=int)]
        init = flat_start("w", seqs, n_states=3, n_components=1, seed=0)
        with caplog.at_level(logging.WARNING):
            baum_welch([init], {"w": seqs}, iterations=1)
        assert any("shorter than" in r.message for r in caplog.records)


class TestRecognize:
    def test_single_word_vocabulary(self):
        rng = np.random.default_rng(20)
        model = random_word_hmm(rng, 2, 4, label="only")
        rec = Recognizer(models=[model])
        label, scores = recognize(rec, rng.integers(0, 2, (6, 4)))
        assert label == "only"
        assert set(scores) == {"only"}

    def test_separable_models(self):
        rng = np.random.default_rng(21)
        hot = bernoulli_state(np.full((1, 8), 0.95))
        cold = bernoulli_state(np.full((1, 8), 0.05))
        a2 = left_right_transitions(2)
        model_a = WordHmm(label="a", transitions=a2, emissions=[hot, hot])
        model_b = WordHmm(label="b", transitions=a2.copy(), emissions=[cold, cold])
        rec = Recognizer(models=[model_a, model_b])
        seq = sample_sequences(model_a, rng, 1, 10)[0]
        label, scores = recognize(rec, seq)
        assert label == "a"
        assert scores["a"] > scores["b"]

    def test_tie_breaks_to_first_word(self):
        rng = np.random.default_rng(22)
        emissions = [bernoulli_state(np.full((1, 4), 0.4)) for _ in range(2)]
        a = left_right_transitions(2)
        m0 = WordHmm(label="w0", transitions=a, emissions=emissions)
        m1 = WordHmm(label="w1", transitions=a.copy(),
                     emissions=[bernoulli_state(np.full((1, 4), 0.4)) for _ in range(2)])
        rec = Recognizer(models=[m0, m1])
        label, scores = recognize(rec, rng.integers(0, 2, (5, 4)))
        assert scores["w0"] == pytest.approx(scores["w1"])
        assert label == "w0"

    def test_argmax_invariant_to_constant_shift(self):
        rng = np.random.default_rng(23)
        models = [random_word_hmm(rng, 3, 6, label=f"w{i}") for i in range(4)]
        rec = Recognizer(models=models)
        seq = rng.integers(0, 2, (9, 6))
        label, scores = recognize(rec, seq)
        shifted = {k: v + 123.45 for k, v in scores.items()}
        assert max(shifted, key=shifted.get) == label

    def test_viterbi_flag(self):
        rng = np.random.default_rng(24)
        model = random_word_hmm(rng, 3, 5, label="w")
        seq = rng.integers(0, 2, (8, 5))
        path, score = viterbi_path(model, seq)
        assert path.shape == (8,)
        assert path[0] == 0
        assert np.all(np.diff(path) >= 0)
        assert score <= forward_log_likelihood(model, seq) + 1e-12
        label, _ = recognize(Recognizer(models=[model]), seq, algorithm="viterbi")
        assert label == "w"


class TestModelFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(30)
        seqs = {f"w{i}": [rng.integers(0, 2, (20, 12)) for _ in range(4)]
                for i in range(3)}
        rec, _ = train_recognizer(seqs, n_states=4, n_components=2, iterations=3, seed=5)
        path = tmp_path / "models.whmm"
        save_recognizer(path, rec)
        back = load_recognizer(path)
        assert back.labels == rec.labels
        for a, b in zip(back.models, rec.models):
            np.testing.assert_array_equal(a.transitions, b.transitions)
            for ea, eb in zip(a.emissions, b.emissions):
                np.testing.assert_array_equal(ea.probs, eb.probs)
                np.testing.assert_array_equal(ea.priors, eb.priors)
        seq = rng.integers(0, 2, (10, 12))
        assert recognize(back, seq)[0] == recognize(rec, seq)[0]

    def test_gaussian_round_trip(self, tmp_path):
        from sparseasr.mixtures import GaussianMixture

        rng = np.random.default_rng(31)
        emissions = [GaussianMixture(priors=np.array([0.5, 0.5]),
                                     means=rng.standard_normal((2, 3)),
                                     variances=np.full((2, 3), 0.5))
                     for _ in range(2)]
        model = WordHmm(label="g", transitions=left_right_transitions(2),
                        emissions=emissions)
        path = tmp_path / "g.whmm"
        save_recognizer(path, Recognizer(models=[model]))
        back = load_recognizer(path)
        assert back.kind == "gaussian"
        np.testing.assert_array_equal(back.models[0].emissions[1].means,
                                      emissions[1].means)


class TestWordHmmInvariants:
    def test_row_sums_enforced(self):
        bad = np.array([[0.5, 0.4], [0.0, 1.0]])
        with pytest.raises(InvalidInputError):
            WordHmm(label="x", transitions=bad,
                    emissions=[bernoulli_state(np.full((1, 2), 0.5))] * 2)

    def test_band_structure_enforced(self):
        bad = np.array([[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
        with pytest.raises(InvalidInputError):
            WordHmm(label="x", transitions=bad,
                    emissions=[bernoulli_state(np.full((1, 2), 0.5))] * 3)

    def test_emission_log_matrix_shape(self):
        rng = np.random.default_rng(40)
        model = random_word_hmm(rng, 4, 6, n_components=3)
        seq = rng.integers(0, 2, (9, 6))
        lb = emission_log_matrix(model, seq)
        assert lb.shape == (9, 4)
        for t in (0, 4, 8):
            for q in range(4):
                assert lb[t, q] == pytest.approx(model.emissions[q].log_pdf(seq[t]))
