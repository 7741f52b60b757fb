"""Left-right whole-word HMMs with mixture emissions.

One model per vocabulary word, strict step-or-stay topology (no skips),
initial mass entirely on state 0, final state absorbing. Scoring uses the
log-domain forward algorithm (full sum over paths); Viterbi is available
as a diagnostic. Training is per-word Baum-Welch: transition posteriors
re-estimate the banded transition matrix and joint state/component
posteriors drive one closed-form mixture update per iteration.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from sparseasr import accel
from sparseasr.errors import DataFormatError, InvalidInputError
from sparseasr.mixtures import (
    BernoulliMixture,
    GaussianMixture,
    init_bernoulli,
    init_gaussian,
    weighted_mstep,
)

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"WHMM"
MODEL_VERSION = 1

DEFAULT_STATES = 16
SELF_LOOP_INIT = 0.6


def left_right_transitions(n_states, self_loop=SELF_LOOP_INIT):
    """Row-stochastic step-or-stay matrix; the last state only loops."""
    a = np.zeros((n_states, n_states))
    for q in range(n_states - 1):
        a[q, q] = self_loop
        a[q, q + 1] = 1.0 - self_loop
    a[n_states - 1, n_states - 1] = 1.0
    return a


@dataclass
class WordHmm:
    """A word model: banded transitions plus one mixture per state."""

    label: str
    transitions: np.ndarray      # (S, S) probabilities
    emissions: list              # one BernoulliMixture/GaussianMixture per state

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        s = self.transitions.shape[0]
        if self.transitions.shape != (s, s) or s != len(self.emissions):
            raise InvalidInputError("transition matrix and emissions disagree on states")
        if np.max(np.abs(self.transitions.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidInputError("transition rows must sum to 1")
        band = np.triu(np.tril(np.ones((s, s)), 1))
        if np.any(self.transitions[band == 0] != 0.0):
            raise InvalidInputError("transitions outside the left-right band")
        dims = {e.dim for e in self.emissions}
        if len(dims) != 1:
            raise InvalidInputError("states disagree on emission dimension")

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def dim(self):
        return self.emissions[0].dim

    @property
    def kind(self):
        return "bernoulli" if isinstance(self.emissions[0], BernoulliMixture) else "gaussian"

    def log_initial(self):
        pi = np.full(self.n_states, -np.inf)
        pi[0] = 0.0
        return pi

    def log_transitions(self):
        with np.errstate(divide="ignore"):
            return np.log(self.transitions)


def emission_log_matrix(model, seq):
    """(T, S) per-frame per-state emission log-probabilities."""
    seq = np.atleast_2d(np.asarray(seq))
    if seq.shape[0] == 0:
        raise InvalidInputError("empty observation sequence")
    if seq.shape[1] != model.dim:
        raise InvalidInputError(
            f"sequence dim {seq.shape[1]} != model dim {model.dim}")
    if model.kind == "bernoulli":
        x = seq.astype(np.float64)
        # One stacked matmul across states and components.
        weights = np.concatenate(
            [np.log(e.probs) - np.log1p(-e.probs) for e in model.emissions])
        offset = np.concatenate(
            [np.log1p(-e.probs).sum(axis=1) + np.log(e.priors) for e in model.emissions])
        comps = x @ weights.T + offset
        t = x.shape[0]
        m = model.emissions[0].n_components
        return logsumexp(comps.reshape(t, model.n_states, m), axis=2)
    cols = [logsumexp(e.log_components(seq) + np.log(e.priors), axis=1)
            for e in model.emissions]
    return np.stack(cols, axis=1)


def forward_log_likelihood(model, seq):
    """log p(sequence | model) summed over all state paths."""
    log_b = emission_log_matrix(model, seq)
    log_alpha = accel.forward(model.log_initial(), model.log_transitions(),
                              np.ascontiguousarray(log_b))
    return float(logsumexp(log_alpha[-1]))


def viterbi_path(model, seq):
    """Best state path and its joint log score (diagnostic)."""
    log_b = emission_log_matrix(model, seq)
    path, score = accel.viterbi(model.log_initial(), model.log_transitions(),
                                np.ascontiguousarray(log_b))
    return path, float(score)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def flat_start(label, sequences, n_states=DEFAULT_STATES, n_components=8,
               kind="bernoulli", seed=0, warmup_iterations=2):
    """Seed a word model from a uniform state-to-frame segmentation.

    Each training sequence is split into `n_states` contiguous chunks;
    every state's mixture is initialized on its chunk frames and refined
    with a couple of EM passes before Baum-Welch takes over.
    """
    usable = [np.atleast_2d(np.asarray(s)) for s in sequences]
    usable = [s for s in usable if s.shape[0] >= n_states]
    if not usable:
        raise InvalidInputError(
            f"word {label!r}: no training sequence reaches {n_states} frames")
    rng = np.random.default_rng(seed)
    per_state = [[] for _ in range(n_states)]
    for s in usable:
        edges = np.linspace(0, s.shape[0], n_states + 1).astype(int)
        for q in range(n_states):
            per_state[q].append(s[edges[q]:edges[q + 1]])
    from sparseasr.mixtures import em_fit

    emissions = []
    for q in range(n_states):
        frames = np.concatenate(per_state[q], axis=0)
        if kind == "bernoulli":
            mix = init_bernoulli(n_components, frames, rng)
        else:
            mix = init_gaussian(n_components, frames, rng)
        if frames.shape[0] >= n_components and warmup_iterations:
            mix, _ = em_fit(mix, frames, iterations=warmup_iterations)
        emissions.append(mix)
    return WordHmm(label=label, transitions=left_right_transitions(n_states),
                   emissions=emissions)


def _fit_word(model, sequences, iterations):
    """Baum-Welch on one word's sequences; returns (model, ll history)."""
    seqs = [np.atleast_2d(np.asarray(s)) for s in sequences]
    kept = [s for s in seqs if s.shape[0] >= model.n_states]
    for s in seqs:
        if s.shape[0] < model.n_states:
            logger.warning("word %r: skipping %d-frame sequence shorter than %d states",
                           model.label, s.shape[0], model.n_states)
    if not kept:
        raise InvalidInputError(f"word {model.label!r}: no usable training sequences")

    s_count = model.n_states
    history = []
    for _ in range(iterations):
        log_a = model.log_transitions()
        log_pi = model.log_initial()
        xi_acc = np.zeros((s_count, s_count))
        gamma_acc = np.zeros(s_count)
        data_rows = []
        resp_rows = [[] for _ in range(s_count)]
        total_ll = 0.0
        for seq in kept:
            x = seq.astype(np.float64)
            log_b = np.ascontiguousarray(emission_log_matrix(model, seq))
            log_alpha = accel.forward(log_pi, log_a, log_b)
            ll = float(logsumexp(log_alpha[-1]))
            log_beta = accel.backward(log_a, log_b)
            total_ll += ll
            gamma = np.exp(log_alpha + log_beta - ll)
            xi_acc += accel.xi_sum(log_alpha, log_beta, log_a, log_b, ll)
            gamma_acc += gamma.sum(axis=0)
            data_rows.append(x)
            for q in range(s_count):
                joint = (model.emissions[q].log_components(seq)
                         + np.log(model.emissions[q].priors))
                comp_post = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
                resp_rows[q].append(comp_post * gamma[:, q][:, None])
        history.append(total_ll)

        new_a = model.transitions.copy()
        row_sums = xi_acc.sum(axis=1)
        for q in range(s_count - 1):
            if row_sums[q] > 1e-12:
                new_a[q] = xi_acc[q] / row_sums[q]
        new_a[s_count - 1] = 0.0
        new_a[s_count - 1, s_count - 1] = 1.0

        data = np.concatenate(data_rows, axis=0)
        new_emissions = []
        for q in range(s_count):
            if gamma_acc[q] < 1e-12:
                logger.warning("word %r: state %d unoccupied, emission left as is",
                               model.label, q)
                new_emissions.append(model.emissions[q])
                continue
            resp = np.concatenate(resp_rows[q], axis=0)
            new_emissions.append(weighted_mstep(model.emissions[q], data, resp))
        model = WordHmm(label=model.label, transitions=new_a, emissions=new_emissions)
    return model, history


def baum_welch(models, sequences_by_label, iterations=50):
    """Per-word EM over each word's own sequences.

    Returns (trained models, {label: log-likelihood history}). Histories
    are non-decreasing up to numerical slack.
    """
    trained = []
    histories = {}
    for model in models:
        if model.label not in sequences_by_label:
            raise InvalidInputError(f"no training sequences for word {model.label!r}")
        fitted, hist = _fit_word(model, sequences_by_label[model.label], iterations)
        trained.append(fitted)
        histories[model.label] = hist
    return trained, histories


def train_recognizer(sequences_by_label, n_states=DEFAULT_STATES, n_components=8,
                     kind="bernoulli", iterations=50, seed=0):
    """Flat-start plus Baum-Welch for every word in the vocabulary."""
    seeds = np.random.SeedSequence(seed).spawn(len(sequences_by_label))
    models = []
    for child, label in zip(seeds, sorted(sequences_by_label)):
        models.append(flat_start(label, sequences_by_label[label], n_states,
                                 n_components, kind, seed=child))
    trained, histories = baum_welch(models, sequences_by_label, iterations)
    return Recognizer(models=trained), histories


# ---------------------------------------------------------------------------
# recognition
# ---------------------------------------------------------------------------

@dataclass
class Recognizer:
    """A vocabulary of word models sharing one feature space."""

    models: list = field(default_factory=list)

    def __post_init__(self):
        if not self.models:
            raise InvalidInputError("recognizer needs at least one word model")
        kinds = {m.kind for m in self.models}
        dims = {m.dim for m in self.models}
        if len(kinds) != 1 or len(dims) != 1:
            raise InvalidInputError("word models disagree on feature kind or dimension")

    @property
    def kind(self):
        return self.models[0].kind

    @property
    def dim(self):
        return self.models[0].dim

    @property
    def labels(self):
        return [m.label for m in self.models]


def recognize(recognizer, seq, algorithm="forward"):
    """Maximum-likelihood word choice.

    Returns (label, {label: log-likelihood}). Ties break to the earliest
    word in vocabulary order.
    """
    if algorithm == "forward":
        score = forward_log_likelihood
    elif algorithm == "viterbi":
        score = lambda m, s: viterbi_path(m, s)[1]
    else:
        raise InvalidInputError(f"unknown scoring algorithm {algorithm!r}")
    scores = {m.label: score(m, seq) for m in recognizer.models}
    best = max(range(len(recognizer.models)),
               key=lambda i: (scores[recognizer.models[i].label], -i))
    return recognizer.models[best].label, scores


# ---------------------------------------------------------------------------
# WHMM serialization
# ---------------------------------------------------------------------------

_KIND_TAGS = {"bernoulli": 0, "gaussian": 1}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def save_recognizer(path, recognizer):
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(recognizer.models)))
        for m in recognizer.models:
            raw = m.label.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", m.n_states, _KIND_TAGS[m.kind]))
            fh.write(np.ascontiguousarray(m.transitions, dtype="<f8").tobytes())
            for e in m.emissions:
                fh.write(struct.pack("<II", e.n_components, e.dim))
                fh.write(np.ascontiguousarray(e.priors, dtype="<f8").tobytes())
                if isinstance(e, BernoulliMixture):
                    fh.write(np.ascontiguousarray(e.probs, dtype="<f8").tobytes())
                else:
                    fh.write(np.ascontiguousarray(e.means, dtype="<f8").tobytes())
                    fh.write(np.ascontiguousarray(e.variances, dtype="<f8").tobytes())


def _read_exact(fh, n, path):
    raw = fh.read(n)
    if len(raw) != n:
        raise DataFormatError(f"{path}: truncated model file")
    return raw


def _read_f64(fh, count, path):
    return np.frombuffer(_read_exact(fh, 8 * count, path), dtype="<f8").astype(np.float64)


def load_recognizer(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise DataFormatError(f"{path}: bad magic")
        version, count = struct.unpack("<II", _read_exact(fh, 8, path))
        if version != MODEL_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        models = []
        for _ in range(count):
            (label_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            label = _read_exact(fh, label_len, path).decode("utf-8")
            n_states, tag = struct.unpack("<II", _read_exact(fh, 8, path))
            if tag not in _TAG_KINDS:
                raise DataFormatError(f"{path}: unknown emission kind {tag}")
            trans = _read_f64(fh, n_states * n_states, path).reshape(n_states, n_states)
            emissions = []
            for _ in range(n_states):
                m, dim = struct.unpack("<II", _read_exact(fh, 8, path))
                priors = _read_f64(fh, m, path)
                if _TAG_KINDS[tag] == "bernoulli":
                    probs = _read_f64(fh, m * dim, path).reshape(m, dim)
                    emissions.append(BernoulliMixture(priors=priors, probs=probs))
                else:
                    means = _read_f64(fh, m * dim, path).reshape(m, dim)
                    variances = _read_f64(fh, m * dim, path).reshape(m, dim)
                    emissions.append(GaussianMixture(priors=priors, means=means,
                                                     variances=variances))
            models.append(WordHmm(label=label, transitions=trans, emissions=emissions))
    return Recognizer(models=models)
