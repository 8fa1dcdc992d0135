"""Dynamic point extraction.

A detection track is compared with the anchor tracks, which are assumed to
follow camera-induced image motion. Each coordinate axis of a trajectory is
scored under a multivariate Cauchy distribution whose location is the
anchor-predicted path and whose scale matrix is a linear kernel over the
track's features. The resulting negative log-likelihood is ranked against
leave-one-out anchor scores to give a dynamic probability, and the
per-frame decision additionally requires the point's optical flow to exceed
a threshold scaled from the frame's mean flow magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .errors import (
    EmptySampleSetError,
    InsufficientAnchorsError,
    InvalidGridError,
    NonPositiveLambdaError,
    NotPositiveDefiniteError,
    TooFewVisibleError,
    ValidationError,
)

VISIBLE = 0.5


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PointTrack:
    """Tracked 2-D point over a window of S frames.

    ``positions`` is (S, 2) pixels, ``visibility`` is (S,) in [0, 1] and
    ``features`` is (d, S).
    """

    track_id: int
    query_frame: int
    positions: np.ndarray
    visibility: np.ndarray
    features: np.ndarray
    is_anchor: bool = False

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=np.float64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        s = len(self.positions)
        if s < 2 or len(self.visibility) != s:
            raise ValidationError(
                f"track {self.track_id}: positions and visibility need equal length >= 2"
            )
        if np.any((self.visibility < 0) | (self.visibility > 1)):
            raise ValidationError(f"track {self.track_id}: visibility outside [0, 1]")
        if self.features.ndim != 2 or self.features.shape[1] != s:
            raise ValidationError(f"track {self.track_id}: features must be d x {s}")
        if not 0 <= self.query_frame < s:
            raise ValidationError(f"track {self.track_id}: query frame out of range")

    @property
    def num_frames(self) -> int:
        return len(self.positions)

    @property
    def visible(self) -> np.ndarray:
        return self.visibility >= VISIBLE

    @property
    def query_point(self) -> np.ndarray:
        return self.positions[self.query_frame]

    def __eq__(self, other):
        if not isinstance(other, PointTrack):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and self.query_frame == other.query_frame
            and self.is_anchor == other.is_anchor
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.visibility, other.visibility)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class GradientMap:
    """Per-pixel saliency, ``values[row, col]``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("gradient map must be two-dimensional")
        if np.any(self.values < 0):
            raise ValidationError("gradient map values must be non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class TrajectoryDistribution:
    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    lam: float

    @property
    def num_frames(self) -> int:
        return len(self.mu_x)


@dataclass(eq=False)
class FlowSampleSet:
    """Flow samples for the frame pair (t, t+1): positions and flow vectors, both (n, 2)."""

    t: int
    positions: np.ndarray
    flows: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.flows = np.asarray(self.flows, dtype=np.float64).reshape(-1, 2)
        if len(self.positions) != len(self.flows):
            raise ValidationError(f"flow frame {self.t}: positions and flows differ in length")

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, FlowSampleSet):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.flows, other.flows)
        )


@dataclass(frozen=True)
class FlowFrameStats:
    t: int
    mean_magnitude: float
    threshold: float


@dataclass(frozen=True)
class DynamicScore:
    """``p`` is None when the track could not be scored (treated as static)."""

    track_id: int
    p: float | None
    flags: tuple[bool, ...]

    @property
    def is_dynamic(self) -> bool:
        return any(self.flags)


@dataclass(frozen=True)
class DynamicConfig:
    lam: float = 1.0
    flow_scale: float = 1.5
    theta_min: float = 0.5
    p_min: float = 0.5
    grid_k: int = 4
    feature_dim: int = 8
    match_radius: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise NonPositiveLambdaError("lambda must be > 0")
        if not self.flow_scale > 0:
            raise ValidationError("flow_scale must be > 0")
        if not self.theta_min >= 0:
            raise ValidationError("theta_min must be >= 0")
        if not 0 <= self.p_min <= 1:
            raise ValidationError("p_min must lie in [0, 1]")
        if self.grid_k < 1 or self.feature_dim < 1:
            raise ValidationError("grid_k and feature_dim must be >= 1")
        if not self.match_radius > 0:
            raise ValidationError("match_radius must be > 0")


# ---------------------------------------------------------------------------
# anchors
# ---------------------------------------------------------------------------


def _cell_edges(n: int, k: int) -> np.ndarray:
    return np.array([(i * n) // k for i in range(k + 1)])


def select_anchor_points(g: GradientMap, k: int) -> list[tuple[int, int]]:
    """Return the ``(x, y)`` pixel of maximum saliency in each cell of a k x k grid.

    Cells are visited row-major. Ties resolve to the smallest (row, col).
    """
    if k < 1 or k > g.width or k > g.height:
        raise InvalidGridError(f"grid k={k} incompatible with a {g.width}x{g.height} map")
    rows = _cell_edges(g.height, k)
    cols = _cell_edges(g.width, k)
    points = []
    for i in range(k):
        for j in range(k):
            cell = g.values[rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
            # argmax returns the first maximum in C order == smallest (row, col)
            r, c = np.unravel_index(int(np.argmax(cell)), cell.shape)
            points.append((int(cols[j] + c), int(rows[i] + r)))
    return points


# ---------------------------------------------------------------------------
# Cauchy trajectory likelihood
# ---------------------------------------------------------------------------


def build_scale_matrix(f, lam: float) -> np.ndarray:
    """Linear-kernel scale matrix ``fᵀf + λI`` for a (d, S) feature matrix."""
    if not lam > 0:
        raise NonPositiveLambdaError(f"lambda must be > 0, got {lam!r}")
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    gram = f.T @ f
    gram = 0.5 * (gram + gram.T)
    gram[np.diag_indices_from(gram)] += lam
    return gram


def cauchy_log_density(z, mu, sigma) -> float:
    """Log-density of the S-variate Cauchy (Student-t, one degree of freedom)."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    s = len(z)
    try:
        c, low = cho_factor(sigma, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"scale matrix is not positive definite: {exc}") from None
    r = z - mu
    maha = float(r @ cho_solve((c, low), r))
    log_det = 2.0 * float(np.sum(np.log(np.diag(c))))
    return (
        gammaln(0.5 * (s + 1))
        - gammaln(0.5)
        - 0.5 * s * math.log(math.pi)
        - 0.5 * log_det
        - 0.5 * (s + 1) * math.log1p(maha)
    )


def _masked_log_likelihood(positions, keep, dist: TrajectoryDistribution) -> float:
    idx = np.flatnonzero(keep)
    if len(idx) < 2:
        raise TooFewVisibleError(f"{len(idx)} visible frame(s); need at least 2")
    sub = np.ix_(idx, idx)
    return cauchy_log_density(positions[idx, 0], dist.mu_x[idx], dist.sigma_x[sub]) + cauchy_log_density(
        positions[idx, 1], dist.mu_y[idx], dist.sigma_y[sub]
    )


def track_log_likelihood(track: PointTrack, dist: TrajectoryDistribution) -> float:
    """Sum of per-axis Cauchy log-densities over the visible frames."""
    if dist.num_frames != track.num_frames:
        raise ValidationError("track window and distribution window differ")
    return _masked_log_likelihood(track.positions, track.visible, dist)


def _median_displacement(anchors: Sequence[PointTrack], t_q: int, frames) -> np.ndarray:
    if not anchors:
        raise InsufficientAnchorsError("no anchors supplied")
    out = np.full((anchors[0].num_frames, 2), np.nan)
    pos = np.stack([a.positions for a in anchors])  # (m, S, 2)
    vis = np.stack([a.visible for a in anchors])  # (m, S)
    base_ok = vis[:, t_q]
    for t in frames:
        ok = base_ok & vis[:, t]
        if ok.sum() < 2:
            raise InsufficientAnchorsError(f"{int(ok.sum())} anchor(s) visible at frames {t_q} and {t}")
        out[t] = np.median(pos[ok, t] - pos[ok, t_q], axis=0)
    return out


def estimate_camera_motion_prior(
    anchors: Sequence[PointTrack], x_q, t_q: int, frames: Iterable[int] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted image path of a static point queried at ``x_q`` in frame ``t_q``.

    The path is ``x_q`` plus the per-frame componentwise median anchor
    displacement relative to ``t_q``. Only ``frames`` (default: all) are
    evaluated; the remaining entries are NaN.
    """
    if not anchors:
        raise InsufficientAnchorsError("no anchors supplied")
    frames = range(anchors[0].num_frames) if frames is None else frames
    disp = _median_displacement(anchors, t_q, frames)
    mu = np.asarray(x_q, dtype=np.float64).reshape(2) + disp
    return mu[:, 0], mu[:, 1]


def dynamic_probability(det_nll: float, anchor_nlls: Sequence[float]) -> float:
    """Fraction of anchors that fit their prior strictly better than the detection."""
    a = np.asarray(anchor_nlls, dtype=np.float64)
    if a.size < 2:
        raise InsufficientAnchorsError(f"need at least 2 anchor scores, got {a.size}")
    return float(np.count_nonzero(a < det_nll)) / a.size


# ---------------------------------------------------------------------------
# flow thresholding
# ---------------------------------------------------------------------------


def mean_flow_magnitude(flow: FlowSampleSet) -> float:
    if len(flow) == 0:
        raise EmptySampleSetError(f"flow frame {flow.t} has no samples")
    return float(np.mean(np.linalg.norm(flow.flows, axis=1)))


def adaptive_threshold(mean_magnitude: float, c: float, theta_min: float) -> float:
    if not c > 0 or not theta_min >= 0:
        raise ValidationError("need c > 0 and theta_min >= 0")
    return max(c * mean_magnitude, theta_min)


def flow_frame_stats(flows: Iterable[FlowSampleSet], c: float, theta_min: float) -> list[FlowFrameStats]:
    stats = []
    for fs in flows:
        m = mean_flow_magnitude(fs)
        stats.append(FlowFrameStats(fs.t, m, adaptive_threshold(m, c, theta_min)))
    return stats


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


class _AnchorScorer:
    """Leave-one-out anchor NLLs, cached per (reference frame, frame subset)."""

    def __init__(self, anchors: Sequence[PointTrack], lam: float):
        self.anchors = list(anchors)
        self.lam = lam
        self.sigmas = [build_scale_matrix(a.features, lam) for a in self.anchors]
        self._cache: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

    def nlls(self, t_q: int, frames: tuple[int, ...]) -> np.ndarray:
        key = (t_q, frames)
        if key not in self._cache:
            self._cache[key] = self._compute(t_q, frames)
        return self._cache[key]

    def _compute(self, t_q, frames):
        out = []
        fr = np.array(frames)
        for j, a in enumerate(self.anchors):
            if not (a.visible[t_q] and a.visible[fr].all()):
                continue
            others = self.anchors[:j] + self.anchors[j + 1:]
            try:
                mu_x, mu_y = estimate_camera_motion_prior(others, a.positions[t_q], t_q, frames)
            except InsufficientAnchorsError:
                continue
            dist = TrajectoryDistribution(mu_x, mu_y, self.sigmas[j], self.sigmas[j], self.lam)
            keep = np.zeros(a.num_frames, dtype=bool)
            keep[fr] = True
            out.append(-_masked_log_likelihood(a.positions, keep, dist))
        return np.array(out)


def score_track(track: PointTrack, anchors: Sequence[PointTrack], lam: float,
                _scorer: _AnchorScorer | None = None) -> float:
    """Dynamic probability of one detection track against the anchors."""
    scorer = _scorer or _AnchorScorer(anchors, lam)
    frames = tuple(int(i) for i in np.flatnonzero(track.visible))
    if len(frames) < 2:
        raise TooFewVisibleError(f"track {track.track_id}: fewer than 2 visible frames")
    t_q = track.query_frame if track.visible[track.query_frame] else frames[0]
    mu_x, mu_y = estimate_camera_motion_prior(scorer.anchors, track.positions[t_q], t_q, frames)
    sigma = build_scale_matrix(track.features, lam)
    dist = TrajectoryDistribution(mu_x, mu_y, sigma, sigma, lam)
    det_nll = -_masked_log_likelihood(track.positions, track.visible, dist)
    return dynamic_probability(det_nll, scorer.nlls(t_q, frames))


def _flow_index(flow: Mapping[int, FlowSampleSet]):
    return {t: (cKDTree(fs.positions), fs) for t, fs in flow.items() if len(fs)}


def track_flow_magnitudes(track: PointTrack, flow_index, radius: float) -> np.ndarray:
    """Per-frame flow magnitude at the track's position (NaN where unavailable).

    Frame t reads the (t, t+1) flow interval; the last frame, which has no
    forward interval, reuses the final one.
    """
    s = track.num_frames
    out = np.full(s, np.nan)
    for t in range(s):
        ti = min(t, s - 2)
        if ti not in flow_index or not (track.visible[t] and track.visible[ti]):
            continue
        tree, fs = flow_index[ti]
        d, i = tree.query(track.positions[ti])
        if d <= radius:
            out[t] = float(np.linalg.norm(fs.flows[i]))
    return out


def classify_dynamic_points(
    tracks: Sequence[PointTrack],
    anchors: Sequence[PointTrack],
    flow: Iterable[FlowSampleSet],
    cfg: DynamicConfig = DynamicConfig(),
) -> list[DynamicScore]:
    """Flag (track, frame) pairs as dynamic.

    A frame is flagged when the track's dynamic probability is at least
    ``cfg.p_min`` and its flow magnitude there exceeds the frame threshold.
    Tracks that cannot be scored stay static with ``p=None``.
    """
    flow = {fs.t: fs for fs in flow}
    thresholds = {st.t: st.threshold for st in flow_frame_stats(flow.values(), cfg.flow_scale, cfg.theta_min)}
    index = _flow_index(flow)
    scorer = _AnchorScorer(anchors, cfg.lam)
    scores = []
    for tr in sorted(tracks, key=lambda tr: tr.track_id):
        s = tr.num_frames
        try:
            p = score_track(tr, anchors, cfg.lam, scorer)
        except (InsufficientAnchorsError, TooFewVisibleError):
            scores.append(DynamicScore(tr.track_id, None, (False,) * s))
            continue
        flags = [False] * s
        if p >= cfg.p_min:
            mags = track_flow_magnitudes(tr, index, cfg.match_radius)
            for t in range(s):
                ti = min(t, s - 2)
                if tr.visible[t] and ti in thresholds and mags[t] > thresholds[ti]:
                    flags[t] = True
        scores.append(DynamicScore(tr.track_id, p, tuple(flags)))
    return scores


def dynamic_points_at(scores: Sequence[DynamicScore], tracks: Sequence[PointTrack], t: int) -> np.ndarray:
    """(n, 2) positions in frame t of the tracks flagged dynamic there."""
    by_id = {tr.track_id: tr for tr in tracks}
    pts = [by_id[s.track_id].positions[t] for s in scores if s.flags[t]]
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def f1_score(predicted: Sequence[bool], truth: Sequence[bool]) -> float:
    pred = np.asarray(predicted, dtype=bool)
    gt = np.asarray(truth, dtype=bool)
    tp = np.count_nonzero(pred & gt)
    fp = np.count_nonzero(pred & ~gt)
    fn = np.count_nonzero(~pred & gt)
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)
