"""Dictionary learning by fixed-point independent component analysis.

Each hierarchy level learns an under-complete basis set from example
vectors: centering and eigenvalue whitening, then the symmetric
fixed-point iteration with a negentropy contrast. The stored dictionary
holds the mixing-direction matrix (unit-norm columns in the input space);
projection applies its pseudo-inverse, so whitening and unmixing collapse
into a single matrix at use time.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from sparseasr.errors import ConfigurationError, DataFormatError, InvalidInputError
from sparseasr.projection import (
    HierarchyPlan,
    LevelGeometry,
    project_hierarchy,
    _level0_inputs,
    _upper_inputs,
)

logger = logging.getLogger(__name__)

DICTIONARY_MAGIC = b"DICT"
DICTIONARY_VERSION = 1

EIGENVALUE_FLOOR = 1e-10
PINV_CUTOFF = 1e-10
DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITER = 400


def _gauss_expectation(g):
    val, _ = quad(lambda u: g(u) * np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi),
                  -12.0, 12.0)
    return val


# E[G(u)] for u ~ N(0,1), used by the negentropy approximation per contrast.
_GAUSS_G = {
    "logcosh": _gauss_expectation(lambda u: np.log(np.cosh(u))),
    "exp": _gauss_expectation(lambda u: -np.exp(-0.5 * u * u)),
    "kurtosis": 0.75,
}


@dataclass
class TrainingBatch:
    """Column-vector examples feeding one level's dictionary learning."""

    vectors: np.ndarray  # (dim, n_examples)
    level: int = 0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise InvalidInputError("training batch must be a (dim, n) matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise InvalidInputError("training batch contains non-finite entries")
        dim, n = self.vectors.shape
        if n < 10 * dim:
            logger.warning("level %d: %d examples for dim %d (< 10x dim recommended)",
                           self.level, n, dim)


@dataclass
class Whitening:
    """Centering and decorrelating transform fitted on a training batch."""

    mean: np.ndarray       # (dim,)
    transform: np.ndarray  # (out_dim, dim)
    dropped: int = 0       # input dimensions discarded at the eigenvalue floor

    @property
    def out_dim(self):
        return self.transform.shape[0]

    def apply(self, x):
        return self.transform @ (x - self.mean[:, None])


def whiten(batch, out_dim=None):
    """Center and rotate a batch to identity covariance.

    Eigenvalues below 1e-10 of the largest are dropped (reported in the
    returned transform's `dropped` count); `out_dim` further truncates to
    the leading dimensions.
    """
    x = batch.vectors if isinstance(batch, TrainingBatch) else np.asarray(batch, float)
    dim, n = x.shape
    if out_dim is not None and out_dim > dim:
        raise InvalidInputError(f"out_dim {out_dim} exceeds input dim {dim}")
    if n < 2 or (out_dim or 1) >= n:
        raise InvalidInputError(f"covariance not estimable from {n} examples")
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    cov = (xc @ xc.T) / (n - 1)
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    floor = EIGENVALUE_FLOOR * max(eigval[0], 0.0)
    keep = eigval > floor
    kept = int(np.count_nonzero(keep))
    if kept < dim:
        logger.warning("whitening dropped %d of %d dimensions below eigenvalue floor",
                       dim - kept, dim)
    if out_dim is not None:
        kept = min(kept, int(out_dim))
    if kept == 0:
        raise InvalidInputError("all dimensions fell below the eigenvalue floor")
    transform = eigvec[:, :kept].T / np.sqrt(eigval[:kept])[:, None]
    whitening = Whitening(mean=mean, transform=transform, dropped=dim - kept)
    return whitening.apply(x), whitening


def _sym_decorrelate(w):
    s = w @ w.T
    eigval, eigvec = np.linalg.eigh(s)
    eigval = np.maximum(eigval, 1e-18)
    inv_sqrt = (eigvec / np.sqrt(eigval)) @ eigvec.T
    return inv_sqrt @ w


_CONTRASTS = {
    "logcosh": (np.tanh, lambda u: 1.0 - np.tanh(u) ** 2,
                lambda u: np.log(np.cosh(u))),
    "exp": (lambda u: u * np.exp(-0.5 * u * u),
            lambda u: (1.0 - u * u) * np.exp(-0.5 * u * u),
            lambda u: -np.exp(-0.5 * u * u)),
    "kurtosis": (lambda u: u ** 3, lambda u: 3.0 * u ** 2,
                 lambda u: 0.25 * u ** 4),
}


@dataclass
class FastIcaResult:
    w: np.ndarray            # (k, dim) unmixing rows, orthonormal
    converged: bool
    n_iter: int
    negentropy: np.ndarray   # per-component approximation
    low_negentropy: np.ndarray  # boolean mask of near-Gaussian components


def fast_ica(z, k, contrast="logcosh", max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL,
             seed=0, negentropy_floor=1e-4):
    """Symmetric fixed-point ICA on whitened data `z` of shape (dim, n).

    Returns k unit-norm rows, mutually orthogonal in the whitened space.
    Convergence requires max_i |1 - |<w_new_i, w_old_i>|| < tol; on
    non-convergence the best iterate is returned with converged=False.
    Components whose negentropy approximation falls below
    `negentropy_floor` are flagged (the contrast cannot separate
    components that are already Gaussian).
    """
    z = np.asarray(z, dtype=np.float64)
    dim, n = z.shape
    if k > dim:
        raise InvalidInputError(f"cannot extract {k} components from dim {dim}")
    if contrast not in _CONTRASTS:
        raise ConfigurationError(f"unknown contrast {contrast!r}")
    g, g_prime, g_int = _CONTRASTS[contrast]

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, dim)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = w @ z
        gu = g(u)
        w_new = (gu @ z.T) / n - g_prime(u).mean(axis=1)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        drift = np.max(np.abs(1.0 - np.abs(np.sum(w_new * w, axis=1))))
        w = w_new
        if drift < tol:
            converged = True
            break
    if not converged:
        logger.warning("fast_ica did not converge in %d iterations", max_iter)

    u = w @ z
    negentropy = (g_int(u).mean(axis=1) - _GAUSS_G[contrast]) ** 2
    return FastIcaResult(w=w, converged=converged, n_iter=it, negentropy=negentropy,
                         low_negentropy=negentropy < negentropy_floor)


# ---------------------------------------------------------------------------
# dictionaries
# ---------------------------------------------------------------------------

@dataclass
class Dictionary:
    """Unit-norm mixing directions of one level, with its learning transform."""

    bases: np.ndarray      # (n_in, k)
    level: int
    geometry: LevelGeometry
    whitening: Whitening
    converged: bool = True
    projector: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=np.float64)
        n_in, k = self.bases.shape
        if k > n_in:
            raise InvalidInputError(f"over-complete dictionary ({k} bases, dim {n_in})")
        norms = np.linalg.norm(self.bases, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise InvalidInputError("dictionary columns must have unit norm")
        u, s, vt = np.linalg.svd(self.bases, full_matrices=False)
        if s[-1] <= PINV_CUTOFF * s[0]:
            raise InvalidInputError("dictionary is rank deficient")
        if self.projector is None:
            self.projector = (vt.T / s) @ u.T

    @property
    def n_in(self):
        return self.bases.shape[0]

    @property
    def k(self):
        return self.bases.shape[1]


def make_dictionary(w, whitening, geometry, converged=True):
    """Compose unmixing rows and the whitening transform into a dictionary.

    The mixing directions in input space are pinv(transform) @ w.T,
    column-normalized.
    """
    mixing = np.linalg.pinv(whitening.transform) @ w.T
    norms = np.linalg.norm(mixing, axis=0)
    if np.any(norms <= 0):
        raise InvalidInputError("degenerate mixing direction with zero norm")
    return Dictionary(bases=mixing / norms, level=geometry.level, geometry=geometry,
                      whitening=whitening, converged=converged)


@dataclass
class DictionaryHierarchy:
    """Trained dictionaries for all levels plus shared front-end geometry."""

    levels: list                  # Dictionary per level
    n_channels: int
    frame_rate: float = 1000.0
    _plan_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def geometries(self):
        return [d.geometry for d in self.levels]

    def plan(self, n_channels=None, frame_rate=None):
        key = (n_channels or self.n_channels, frame_rate or self.frame_rate,
               len(self.levels))
        if key not in self._plan_cache:
            if key[0] != self.n_channels:
                raise InvalidInputError(
                    f"hierarchy trained for {self.n_channels} channels, got {key[0]}")
            self._plan_cache[key] = HierarchyPlan(self.geometries, key[0], key[1])
        return self._plan_cache[key]


def _training_positions(plan, level, cochleograms):
    """All (file, i, j) block origins fully inside each utterance."""
    out = []
    for fi, coch in enumerate(cochleograms):
        t_pos = plan.temporal_positions(level, coch.n_frames, padded=False)
        for i in plan.spectral_origins[level]:
            for j in t_pos:
                out.append((fi, i, j))
    return out


def train_hierarchy(cochleograms, geometries, contrast="logcosh",
                    max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, seed=0):
    """Learn the dictionary of every level, bottom level first.

    Level h > 0 trains on concatenated level-(h-1) coefficients obtained by
    projecting through the already-trained lower levels, so the dependency
    chain is enforced by construction. Example windows are sampled
    uniformly (seeded) over all grid positions in the corpus, capped at
    each level's `max_examples`.
    """
    cochleograms = list(cochleograms)
    if not cochleograms:
        raise InvalidInputError("empty training corpus")
    if not geometries:
        raise ConfigurationError("hierarchy needs at least one level")
    n_channels = cochleograms[0].n_channels
    frame_rate = cochleograms[0].frame_rate
    for coch in cochleograms:
        if coch.n_channels != n_channels:
            raise InvalidInputError("cochleograms disagree on channel count")

    plan = HierarchyPlan(geometries, n_channels, frame_rate)
    seeds = np.random.SeedSequence(seed).spawn(len(geometries))
    partial = DictionaryHierarchy(levels=[], n_channels=n_channels,
                                  frame_rate=frame_rate)
    for h, geom in enumerate(geometries):
        rng = np.random.default_rng(seeds[h])
        positions = _training_positions(plan, h, cochleograms)
        if len(positions) < geom.k:
            raise InvalidInputError(
                f"level {h}: {len(positions)} example positions available, "
                f"{geom.k} required")
        if len(positions) > geom.max_examples:
            chosen = rng.choice(len(positions), size=geom.max_examples, replace=False)
            positions = [positions[c] for c in sorted(chosen)]

        by_file = {}
        for fi, i, j in positions:
            by_file.setdefault(fi, []).append((i, j))
        chunks = []
        for fi in sorted(by_file):
            pos = sorted(by_file[fi])
            if h == 0:
                chunks.append(_level0_inputs(cochleograms[fi].values, plan, pos))
            else:
                maps, _ = project_hierarchy(
                    cochleograms[fi], partial,
                    needed_extra={h - 1: {(i + du, j + dv) for (i, j) in pos
                                          for du in plan.spec_offsets[h]
                                          for dv in plan.temp_offsets[h]}})
                chunks.append(_upper_inputs(maps[h - 1], plan, h, pos))
        batch = TrainingBatch(np.concatenate(chunks, axis=1), level=h)

        z, whitening = whiten(batch, out_dim=geom.whiten_dim)
        if geom.k > whitening.out_dim:
            raise InvalidInputError(
                f"level {h}: k={geom.k} exceeds whitened dim {whitening.out_dim}")
        result = fast_ica(z, geom.k, contrast=contrast, max_iter=max_iter, tol=tol,
                          seed=seeds[h].spawn(1)[0])
        partial.levels.append(make_dictionary(result.w, whitening, geom,
                                              converged=result.converged))
        logger.info("level %d: %d examples, dim %d -> k %d, converged=%s (%d iters)",
                    h, batch.vectors.shape[1], batch.vectors.shape[0], geom.k,
                    result.converged, result.n_iter)
    return partial


def coefficient_kurtosis(hierarchy, cochleograms):
    """Excess kurtosis of pooled projection coefficients, one value per level.

    Positive values indicate heavy-tailed, sparse coefficient
    distributions.
    """
    pooled = [[] for _ in hierarchy.levels]
    for coch in cochleograms:
        maps, _ = project_hierarchy(coch, hierarchy)
        for h, cmap in enumerate(maps):
            pooled[h].append(cmap.vectors.reshape(-1))
    out = []
    for h, parts in enumerate(pooled):
        c = np.concatenate(parts)
        c = c - c.mean()
        var = np.mean(c ** 2)
        out.append(float(np.mean(c ** 4) / var ** 2 - 3.0))
    return out


def _render_basis(hierarchy, plan, level, vec):
    if level == 0:
        return vec.reshape(plan.geometries[0].l_c, plan.ext_t[0])
    prev = hierarchy.levels[level - 1]
    parts = vec.reshape(plan.m_eff[level] * plan.n_eff[level], prev.k)
    canvas = np.zeros((plan.ext_c[level], plan.ext_t[level]))
    idx = 0
    for u in range(plan.m_eff[level]):
        for v in range(plan.n_eff[level]):
            patch = _render_basis(hierarchy, plan, level - 1, prev.bases @ parts[idx])
            c0 = u * plan.ext_c[level - 1]
            t0 = v * plan.ext_t[level - 1]
            canvas[c0:c0 + patch.shape[0], t0:t0 + patch.shape[1]] = patch
            idx += 1
    return canvas


def bases_as_patches(hierarchy):
    """Render every basis as a cochleogram-shaped matrix for plotting.

    Level-h bases live in concatenated lower-level coefficient space; each
    constituent block is mapped back through the lower dictionaries onto
    its receptive-field position. Returns one (k, channels, frames) array
    per level.
    """
    plan = hierarchy.plan()
    out = []
    for h, d in enumerate(hierarchy.levels):
        patches = np.empty((d.k, plan.ext_c[h], plan.ext_t[h]))
        for k in range(d.k):
            patches[k] = _render_basis(hierarchy, plan, h, d.bases[:, k])
        out.append(patches)
    return out


# ---------------------------------------------------------------------------
# DICT serialization
# ---------------------------------------------------------------------------

def save_hierarchy(path, hierarchy):
    """DICT container: per level a geometry block, then whitening and bases."""
    with open(path, "wb") as fh:
        fh.write(DICTIONARY_MAGIC)
        fh.write(struct.pack("<II", DICTIONARY_VERSION, len(hierarchy.levels)))
        fh.write(struct.pack("<If", hierarchy.n_channels, hierarchy.frame_rate))
        for d in hierarchy.levels:
            g = d.geometry
            fh.write(struct.pack("<IIIIIII",
                                 g.level, g.l_c, int(round(g.l_t_ms)), g.m, g.n,
                                 g.max_examples, d.whitening.out_dim))
            fh.write(struct.pack("<ff", g.overlap_spectral, g.overlap_temporal))
            fh.write(struct.pack("<II", d.n_in, d.k))
            fh.write(np.ascontiguousarray(d.whitening.mean, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(d.whitening.transform, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(d.bases, dtype="<f4").tobytes())


def _read_exact(fh, n, path):
    raw = fh.read(n)
    if len(raw) != n:
        raise DataFormatError(f"{path}: truncated dictionary file")
    return raw


def load_hierarchy(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DICTIONARY_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        version, n_levels = struct.unpack("<II", _read_exact(fh, 8, path))
        if version != DICTIONARY_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        n_channels, frame_rate = struct.unpack("<If", _read_exact(fh, 8, path))
        levels = []
        for _ in range(n_levels):
            (level, l_c, l_t_ms, m, n, max_examples,
             whiten_dim) = struct.unpack("<IIIIIII", _read_exact(fh, 28, path))
            ov_s, ov_t = struct.unpack("<ff", _read_exact(fh, 8, path))
            n_in, k = struct.unpack("<II", _read_exact(fh, 8, path))
            mean = np.frombuffer(_read_exact(fh, 4 * n_in, path), dtype="<f4")
            transform = np.frombuffer(_read_exact(fh, 4 * whiten_dim * n_in, path),
                                      dtype="<f4").reshape(whiten_dim, n_in)
            bases = np.frombuffer(_read_exact(fh, 4 * n_in * k, path),
                                  dtype="<f4").reshape(n_in, k).astype(np.float64)
            geom = LevelGeometry(level=level, k=k, l_c=l_c, l_t_ms=float(l_t_ms),
                                 m=m, n=n, overlap_spectral=float(ov_s),
                                 overlap_temporal=float(ov_t),
                                 max_examples=max_examples)
            norms = np.linalg.norm(bases, axis=0)
            whitening = Whitening(mean=mean.astype(np.float64),
                                  transform=transform.astype(np.float64))
            levels.append(Dictionary(bases=bases / norms, level=level, geometry=geom,
                                     whitening=whitening))
    return DictionaryHierarchy(levels=levels, n_channels=int(n_channels),
                               frame_rate=float(frame_rate))
