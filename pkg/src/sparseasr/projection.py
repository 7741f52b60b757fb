"""Hierarchical dictionary projection and binary feature assembly.

Geometry model
--------------
The cochleogram is tiled by level-0 windows of ``l_c`` channels by ``l_t``
frames placed on a grid whose stride is ``l_c * (1 - overlap)`` channels
and ``l_t * (1 - overlap)`` frames. Every block at every level is
addressed by its origin ``(i, j)`` in units of that base grid.

A level-h block (h > 0) concatenates the coefficient vectors of
``m_eff x n_eff`` lower-level blocks whose receptive fields tile its own
receptive field edge to edge, so receptive extents multiply per level:
``ext(h) = ext(h-1) * m`` channels and ``ext(h-1) * n`` frames. On the
channel axis the extent is clamped to the cochleogram height by shrinking
``m_eff``; a hierarchy never covers more spectral context than the input
has. Overlap fractions at abstract levels only densify the placement
grid (stride = extent * (1 - overlap)); they do not widen receptive
fields.

Projection of an utterance walks the demand graph top-down (which block
origins are required at each level) and then projects bottom-up, so each
``(level, i, j)`` block is projected exactly once however many parents
consume it.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from sparseasr.errors import ConfigurationError, DataFormatError, InvalidInputError

FEATURE_MAGIC = b"BFV1"
DEFAULT_FEATURE_RATE = 100.0
DEFAULT_TOP_P = 0.1


@dataclass(frozen=True)
class LevelGeometry:
    """Configuration of one hierarchy level.

    Level 0 uses ``l_c``/``l_t_ms`` and the two overlap fractions as window
    parameters. Levels above 0 use ``m``/``n`` (blocks concatenated along
    the channel and time axes) and a single abstract overlap stored in both
    overlap fields.
    """

    level: int
    k: int
    l_c: int = 0
    l_t_ms: float = 0.0
    m: int = 1
    n: int = 1
    overlap_spectral: float = 0.0
    overlap_temporal: float = 0.0
    max_examples: int = 25000
    whiten_dim: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"level {self.level}: k must be positive")
        if not (0.0 <= self.overlap_spectral < 1.0 and 0.0 <= self.overlap_temporal < 1.0):
            raise ConfigurationError(f"level {self.level}: overlaps must be in [0, 1)")
        if self.level == 0:
            if self.l_c < 1 or self.l_t_ms <= 0:
                raise ConfigurationError("level 0 needs l_c >= 1 and l_t_ms > 0")
        else:
            if self.m < 1 or self.n < 1:
                raise ConfigurationError(f"level {self.level}: m and n must be >= 1")


@dataclass
class WindowGrid:
    """Placement of one level's blocks over a concrete utterance."""

    level: int
    l_c: int
    l_t_ms: float
    overlap_spectral: float
    overlap_temporal: float
    positions: list


@dataclass
class CoefficientMap:
    """Per-position coefficient vectors of one hierarchy level."""

    level: int
    k: int
    vectors: np.ndarray          # (n_blocks, k)
    index: dict                  # (i, j) grid origin -> row in vectors
    spectral_origins: list       # placement grid, channel axis
    temporal_positions: list     # placement grid, time axis
    temporal_centers: np.ndarray  # cochleogram frame of each placement center

    def vector(self, i, j):
        return self.vectors[self.index[(i, j)]]


class HierarchyPlan:
    """File-independent geometry derived from level configs and input height."""

    def __init__(self, geometries, n_channels, frame_rate=1000.0):
        if not geometries:
            raise ConfigurationError("hierarchy needs at least one level")
        g0 = geometries[0]
        if g0.level != 0:
            raise ConfigurationError("first geometry must be level 0")
        if g0.l_c > n_channels:
            raise ConfigurationError(
                f"window height {g0.l_c} exceeds {n_channels} channels")
        self.geometries = list(geometries)
        self.n_channels = int(n_channels)
        self.frame_rate = float(frame_rate)
        self.n_levels = len(geometries)

        l_t = max(1, int(round(g0.l_t_ms * frame_rate / 1000.0)))
        self.stride_c = max(1, int(round(g0.l_c * (1.0 - g0.overlap_spectral))))
        self.stride_t = max(1, int(round(l_t * (1.0 - g0.overlap_temporal))))

        self.ext_c = [g0.l_c]          # channels covered per level
        self.ext_t = [l_t]             # frames covered per level
        self.m_eff = [1]
        self.n_eff = [1]
        self.spec_offsets = [[0]]      # constituent offsets, base-grid units
        self.temp_offsets = [[0]]
        self.exact_tiling = True
        for g in self.geometries[1:]:
            prev_c, prev_t = self.ext_c[-1], self.ext_t[-1]
            m_eff = max(1, min(g.m, n_channels // prev_c))
            n_eff = g.n
            self.m_eff.append(m_eff)
            self.n_eff.append(n_eff)
            self.ext_c.append(m_eff * prev_c)
            self.ext_t.append(n_eff * prev_t)
            s_off = [self._grid_offset(u * prev_c, self.stride_c) for u in range(m_eff)]
            t_off = [self._grid_offset(v * prev_t, self.stride_t) for v in range(n_eff)]
            self.spec_offsets.append(s_off)
            self.temp_offsets.append(t_off)

        # Placement grids: spectral origins are fixed; temporal steps are in
        # base-grid units and expand per utterance.
        self.spectral_origins = []
        self.temporal_steps = []
        for h, g in enumerate(self.geometries):
            if h == 0:
                step_c = 1
                step_t = 1
            else:
                ov = g.overlap_spectral
                step_c = max(1, int(round(self.ext_c[h] * (1.0 - ov) / self.stride_c)))
                step_t = max(1, int(round(self.ext_t[h] * (1.0 - g.overlap_temporal)
                                          / self.stride_t)))
            origins = list(range(0, self.n_channels - self.ext_c[h] + 1,
                                 step_c * self.stride_c))
            self.spectral_origins.append([o // self.stride_c for o in origins])
            self.temporal_steps.append(step_t)

        self.input_dims = [g0.l_c * l_t]
        for h in range(1, self.n_levels):
            self.input_dims.append(self.m_eff[h] * self.n_eff[h]
                                   * self.geometries[h - 1].k)

    def _grid_offset(self, raw, stride):
        q = raw / stride
        if abs(q - round(q)) > 1e-9:
            self.exact_tiling = False
        return int(round(q))

    def receptive_field(self, level):
        """(channels, milliseconds) covered by one block of `level`."""
        return self.ext_c[level], self.ext_t[level] * 1000.0 / self.frame_rate

    def feature_dim(self, level=None):
        """Assembled feature dimension; per level or total."""
        dims = [len(self.spectral_origins[h]) * self.geometries[h].k
                for h in range(self.n_levels)]
        return dims if level is None else dims[level]

    def temporal_positions(self, level, n_frames, padded=True):
        """Placement origins (base-grid units) along time for an utterance.

        With ``padded`` the grid is extended so the union of receptive
        fields covers every frame in [0, n_frames); otherwise only blocks
        that fit entirely inside the utterance are listed.
        """
        ext = self.ext_t[level]
        step = self.temporal_steps[level] * self.stride_t
        if padded:
            if n_frames <= ext:
                count = 1
            else:
                count = int(np.ceil((n_frames - ext) / step)) + 1
        else:
            if n_frames < ext:
                return []
            count = (n_frames - ext) // step + 1
        return [p * self.temporal_steps[level] for p in range(count)]

    def padded_length(self, n_frames):
        """Frames required so every level covers [0, n_frames)."""
        need = n_frames
        for h in range(self.n_levels):
            last = self.temporal_positions(h, n_frames)[-1]
            need = max(need, last * self.stride_t + self.ext_t[h])
        return need

    def window_grid(self, level, n_frames):
        g = self.geometries[level]
        positions = [(i, j) for i in self.spectral_origins[level]
                     for j in self.temporal_positions(level, n_frames)]
        if level == 0:
            return WindowGrid(0, g.l_c, g.l_t_ms, g.overlap_spectral,
                              g.overlap_temporal, positions)
        return WindowGrid(level, self.ext_c[level],
                          self.ext_t[level] * 1000.0 / self.frame_rate,
                          g.overlap_spectral, g.overlap_temporal, positions)


def plan_hierarchy(geometries, n_channels, frame_rate=1000.0):
    return HierarchyPlan(geometries, n_channels, frame_rate)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project(dictionary, inputs):
    """Least-squares coefficients of `inputs` on a dictionary.

    `inputs` is one vector or an (n_in, n) matrix; the result has matching
    shape with k rows. Uses the dictionary's precomputed SVD pseudo-inverse,
    in which singular values below 1e-10 of the largest are treated as zero.
    """
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    n_in = dictionary.bases.shape[0]
    if x.shape[0] != n_in:
        raise InvalidInputError(
            f"input rows {x.shape[0]} do not match dictionary input dim {n_in}")
    c = dictionary.projector @ x
    return c[:, 0] if single else c


def _level0_inputs(values, plan, positions):
    g0 = plan.geometries[0]
    l_t = plan.ext_t[0]
    cols = np.empty((g0.l_c * l_t, len(positions)))
    for idx, (i, j) in enumerate(positions):
        c0 = i * plan.stride_c
        t0 = j * plan.stride_t
        cols[:, idx] = values[c0:c0 + g0.l_c, t0:t0 + l_t].reshape(-1)
    return cols


def _upper_inputs(prev_map, plan, level, positions):
    k_prev = prev_map.k
    cols = np.empty((plan.input_dims[level], len(positions)))
    for idx, (i, j) in enumerate(positions):
        parts = [prev_map.vector(i + du, j + dv)
                 for du in plan.spec_offsets[level]
                 for dv in plan.temp_offsets[level]]
        cols[:, idx] = np.concatenate(parts)
    assert cols.shape[0] == k_prev * plan.m_eff[level] * plan.n_eff[level]
    return cols


def pad_cochleogram(values, target_frames):
    """Edge-replicate the time axis out to `target_frames`."""
    n = values.shape[1]
    if n >= target_frames:
        return values, False
    pad = np.repeat(values[:, -1:], target_frames - n, axis=1)
    return np.concatenate([values, pad], axis=1), True


def project_hierarchy(coch, hierarchy, needed_extra=None):
    """Project a cochleogram through every level of a dictionary hierarchy.

    Returns a list of CoefficientMap, one per level, covering each level's
    own placement grid plus whatever block origins upper levels demand.
    Utterances shorter than the top receptive field are edge-padded (the
    returned maps' `padded` attribute on the plan is reflected per call via
    the second return value).
    """
    plan = hierarchy.plan(coch.n_channels, coch.frame_rate)
    values, padded = pad_cochleogram(coch.values, plan.padded_length(coch.n_frames))

    needed = [set() for _ in range(plan.n_levels)]
    for h in range(plan.n_levels):
        for i in plan.spectral_origins[h]:
            for j in plan.temporal_positions(h, coch.n_frames):
                needed[h].add((i, j))
    if needed_extra:
        for h, extra in needed_extra.items():
            needed[h].update(extra)
    for h in range(plan.n_levels - 1, 0, -1):
        for (i, j) in needed[h]:
            for du in plan.spec_offsets[h]:
                for dv in plan.temp_offsets[h]:
                    needed[h - 1].add((i + du, j + dv))

    maps = []
    for h in range(plan.n_levels):
        positions = sorted(needed[h])
        if h == 0:
            inputs = _level0_inputs(values, plan, positions)
        else:
            inputs = _upper_inputs(maps[h - 1], plan, h, positions)
        coeffs = project(hierarchy.levels[h], inputs)
        t_positions = plan.temporal_positions(h, coch.n_frames)
        centers = (np.asarray(t_positions) * plan.stride_t
                   + plan.ext_t[h] / 2.0)
        maps.append(CoefficientMap(
            level=h,
            k=hierarchy.levels[h].geometry.k,
            vectors=np.ascontiguousarray(coeffs.T),
            index={pos: r for r, pos in enumerate(positions)},
            spectral_origins=list(plan.spectral_origins[h]),
            temporal_positions=t_positions,
            temporal_centers=centers,
        ))
    return maps, padded


# ---------------------------------------------------------------------------
# binarization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinarizePolicy:
    """Per-level top-p competition and the feature frame rate."""

    top_p: float = DEFAULT_TOP_P
    frame_rate: float = DEFAULT_FEATURE_RATE

    def __post_init__(self):
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigurationError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.frame_rate <= 0:
            raise ConfigurationError("frame_rate must be positive")


def top_p_indices(coeffs, top_p):
    """Indices of the floor(p * len) strongest nonzero coefficients.

    Competition is by absolute value; ties go to the lower index. Zero
    coefficients never activate, so fewer than the budget may be returned.
    """
    budget = int(np.floor(top_p * coeffs.size))
    mags = np.abs(coeffs)
    nonzero = np.flatnonzero(mags > 0.0)
    if budget == 0 or nonzero.size == 0:
        return np.empty(0, dtype=np.int64)
    if nonzero.size <= budget:
        return np.sort(nonzero)
    order = np.lexsort((nonzero, -mags[nonzero]))
    return np.sort(nonzero[order[:budget]])


def assemble_frame(maps, t, policy, coch_frame_rate=1000.0):
    """Multi-scale coefficient vector for feature frame `t`, per level.

    For every level and spectral origin, the block whose temporal center
    is nearest to the frame center is selected (lower index on ties).
    Returns a list of per-level real coefficient vectors.
    """
    center = (t + 0.5) * coch_frame_rate / policy.frame_rate
    out = []
    for cmap in maps:
        d = np.abs(cmap.temporal_centers - center)
        j = cmap.temporal_positions[int(np.argmin(d))]
        out.append(np.concatenate([cmap.vector(i, j) for i in cmap.spectral_origins]))
    return out


def assemble_and_binarize(maps, t, policy, coch_frame_rate=1000.0, n_frames=None):
    """Binary feature vector for frame `t`: per-level top-p competition."""
    if n_frames is not None and not (0 <= t < n_frames):
        raise IndexError(f"frame {t} outside utterance of {n_frames} frames")
    levels = assemble_frame(maps, t, policy, coch_frame_rate)
    dim = sum(v.size for v in levels)
    vec = np.zeros(dim, dtype=np.uint8)
    base = 0
    for v in levels:
        vec[base + top_p_indices(v, policy.top_p)] = 1
        base += v.size
    return vec


@dataclass
class BinaryFeatureSequence:
    """Sparse binary feature frames at the subsampled rate."""

    frame_rate: float
    dim: int
    frames: list = field(default_factory=list)  # sorted int64 index arrays

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def sparsity(self):
        """Mean active fraction per frame."""
        if not self.frames:
            return 0.0
        return float(np.mean([f.size for f in self.frames])) / self.dim

    def to_dense(self):
        dense = np.zeros((len(self.frames), self.dim), dtype=np.uint8)
        for t, idx in enumerate(self.frames):
            dense[t, idx] = 1
        return dense


def extract_features(coch, hierarchy, policy=None):
    """Cochleogram to BinaryFeatureSequence through a trained hierarchy."""
    policy = policy or BinarizePolicy()
    maps, _ = project_hierarchy(coch, hierarchy)
    n_feat = int(np.floor(coch.n_frames * policy.frame_rate / coch.frame_rate))
    n_feat = max(n_feat, 1)
    level_dims = [len(m.spectral_origins) * m.k for m in maps]
    seq = BinaryFeatureSequence(policy.frame_rate, int(np.sum(level_dims)))
    for t in range(n_feat):
        levels = assemble_frame(maps, t, policy, coch.frame_rate)
        active = []
        base = 0
        for v in levels:
            active.append(base + top_p_indices(v, policy.top_p))
            base += v.size
        seq.frames.append(np.concatenate(active).astype(np.int64))
    return seq


# ---------------------------------------------------------------------------
# BFV1 serialization
# ---------------------------------------------------------------------------

def save_features(path, seq):
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IfI", seq.dim, float(seq.frame_rate), seq.n_frames))
        for idx in seq.frames:
            fh.write(struct.pack("<I", idx.size))
            fh.write(np.ascontiguousarray(idx, dtype="<u4").tobytes())


def load_features(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        dim, frame_rate, n_frames = struct.unpack("<IfI", fh.read(12))
        seq = BinaryFeatureSequence(float(frame_rate), int(dim))
        for _ in range(n_frames):
            raw = fh.read(4)
            if len(raw) != 4:
                raise DataFormatError(f"{path}: truncated frame header")
            (count,) = struct.unpack("<I", raw)
            data = fh.read(4 * count)
            if len(data) != 4 * count:
                raise DataFormatError(f"{path}: truncated frame data")
            idx = np.frombuffer(data, dtype="<u4").astype(np.int64)
            if idx.size and idx.max() >= dim:
                raise DataFormatError(f"{path}: active index out of range")
            seq.frames.append(idx)
    return seq
