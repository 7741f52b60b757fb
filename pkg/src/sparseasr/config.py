"""Experiment configuration: serializable parameters for both systems.

A config fully determines a run: front-end parameters, hierarchy geometry,
binarization policy, model sizes, training condition, evaluation grid, and
the single seed all randomness flows from. Two shipped presets mirror the
two recognition systems; a third carries the wider-context geometry used
for dictionary visualization exports.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from sparseasr.errors import ConfigurationError
from sparseasr.mfcc import MfccConfig
from sparseasr.projection import LevelGeometry


@dataclass(frozen=True)
class FrontendConfig:
    n_channels: int = 64
    f_lo: float = 0.0
    f_hi: float = 8000.0
    bandwidth_factor: float = 1.5
    pre_emphasis: str = "midband"
    sample_rate: int = 16000
    frame_rate: float = 1000.0


@dataclass(frozen=True)
class IcaConfig:
    contrast: str = "logcosh"
    max_iter: int = 400
    tol: float = 1e-5


@dataclass(frozen=True)
class HierarchyConfig:
    levels: tuple = ()
    top_p: float = 0.1
    feature_rate: float = 100.0


@dataclass(frozen=True)
class ModelConfig:
    n_states: int = 16
    n_components: int = 8
    em_iterations: int = 50


@dataclass(frozen=True)
class TrainingConfig:
    condition: str = "clean"  # clean | multicondition
    snr_db: float = 20.0
    noises: tuple = ("babble", "white")

    def __post_init__(self):
        if self.condition not in ("clean", "multicondition"):
            raise ConfigurationError(f"unknown training condition {self.condition!r}")


@dataclass(frozen=True)
class EvaluationConfig:
    noises: tuple = ("babble", "white")
    snrs: tuple = ("10", "20", "40", "clean")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    feature_kind: str  # sparse | mfcc
    seed: int = 0
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    ica: IcaConfig = field(default_factory=IcaConfig)

    def __post_init__(self):
        if self.feature_kind not in ("sparse", "mfcc"):
            raise ConfigurationError(f"unknown feature kind {self.feature_kind!r}")
        if self.feature_kind == "sparse" and not self.hierarchy.levels:
            raise ConfigurationError("sparse config needs hierarchy levels")


def to_dict(config):
    return asdict(config)


def from_dict(raw):
    try:
        levels = tuple(LevelGeometry(**{**lv, "whiten_dim": lv.get("whiten_dim")})
                       for lv in raw.get("hierarchy", {}).get("levels", ()))
        hierarchy = HierarchyConfig(
            levels=levels,
            top_p=raw.get("hierarchy", {}).get("top_p", 0.1),
            feature_rate=raw.get("hierarchy", {}).get("feature_rate", 100.0))
        return ExperimentConfig(
            name=raw["name"],
            feature_kind=raw["feature_kind"],
            seed=int(raw.get("seed", 0)),
            frontend=FrontendConfig(**raw.get("frontend", {})),
            hierarchy=hierarchy,
            mfcc=MfccConfig(**raw.get("mfcc", {})),
            model=ModelConfig(**raw.get("model", {})),
            training=TrainingConfig(**{**raw.get("training", {}),
                                       "noises": tuple(raw.get("training", {})
                                                       .get("noises", ("babble", "white")))}),
            evaluation=EvaluationConfig(**{**raw.get("evaluation", {}),
                                           "noises": tuple(raw.get("evaluation", {})
                                                           .get("noises", ("babble", "white"))),
                                           "snrs": tuple(str(s) for s in
                                                         raw.get("evaluation", {})
                                                         .get("snrs", ("10", "20", "40", "clean")))}),
            ica=IcaConfig(**raw.get("ica", {})),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"bad experiment config: {exc}") from exc


def serialize(config):
    return json.dumps(to_dict(config), sort_keys=True, indent=1)


def parse(text):
    return from_dict(json.loads(text))


def load_config(path):
    with open(path) as fh:
        return parse(fh.read())


def save_config(path, config):
    with open(path, "w") as fh:
        fh.write(serialize(config))


def config_hash(config):
    """Content hash identifying a config (seed included)."""
    return hashlib.sha256(json.dumps(to_dict(config), sort_keys=True)
                          .encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def sparse_exp2(seed=0):
    """Recognition-oriented sparse system: 64/128/256 bases, 32x40 ms
    windows at 50% overlap, 2x2 abstract blocks at 25% overlap, 16-state
    HMMs with 8-component binary-feature mixtures."""
    levels = (
        LevelGeometry(level=0, k=64, l_c=32, l_t_ms=40.0, overlap_spectral=0.5,
                      overlap_temporal=0.5, max_examples=25000),
        LevelGeometry(level=1, k=128, m=2, n=2, overlap_spectral=0.25,
                      overlap_temporal=0.25, max_examples=25000),
        LevelGeometry(level=2, k=256, m=2, n=2, overlap_spectral=0.25,
                      overlap_temporal=0.25, max_examples=25000),
    )
    return ExperimentConfig(
        name="sparse-exp2", feature_kind="sparse", seed=seed,
        hierarchy=HierarchyConfig(levels=levels, top_p=0.1, feature_rate=100.0),
        model=ModelConfig(n_states=16, n_components=8, em_iterations=50),
    )


def sparse_exp1(seed=0):
    """Wide-context geometry for basis learning and visualization export:
    128/256/256 bases, 16x40 ms windows without overlap, 2x3 blocks."""
    levels = (
        LevelGeometry(level=0, k=128, l_c=16, l_t_ms=40.0, max_examples=100000),
        LevelGeometry(level=1, k=256, m=2, n=3, max_examples=100000),
        LevelGeometry(level=2, k=256, m=2, n=3, max_examples=50000),
    )
    return ExperimentConfig(
        name="sparse-exp1", feature_kind="sparse", seed=seed,
        hierarchy=HierarchyConfig(levels=levels, top_p=0.1, feature_rate=100.0),
        model=ModelConfig(n_states=16, n_components=8, em_iterations=50),
    )


def mfcc_baseline(seed=0):
    """Reference system: 39-dimensional MFCC features, 16-state HMMs with
    4-component diagonal Gaussian mixtures."""
    return ExperimentConfig(
        name="mfcc-baseline", feature_kind="mfcc", seed=seed,
        frontend=FrontendConfig(pre_emphasis="first_order"),
        model=ModelConfig(n_states=16, n_components=4, em_iterations=50),
    )


PRESETS = {
    "sparse-exp2": sparse_exp2,
    "sparse-exp1": sparse_exp1,
    "mfcc-baseline": mfcc_baseline,
}


def preset(name, seed=0):
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name](seed=seed)
