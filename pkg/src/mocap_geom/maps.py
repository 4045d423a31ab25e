"""Confidence maps, temporal flow fields, peak decoding and greedy fusion.

Ground-truth synthesis mirrors what a reflector-localization network is
trained to produce: per reflector, a Gaussian belief peak at the current
image location and a unit-vector field on the band swept between the
previous and current locations.  Inference decodes peaks, scores temporal
consistency with a line integral over the field, and fuses both scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .core import ReflectorId
from .errors import DegenerateMotionError, DimensionError, ValidationError


@dataclass(frozen=True)
class MapSynthesisParams:
    """Spread/width/resolution knobs for ground-truth synthesis."""

    sigma_peak: float = 7.0   # Gaussian spread of the belief peak, px
    sigma_field: float = 4.0  # half-width of the flow band, px
    samples: int = 10         # sample count for the line integral

    def __post_init__(self):
        if self.sigma_peak <= 0 or self.sigma_field <= 0:
            raise ValidationError("sigma_peak and sigma_field must be positive")
        if self.samples < 2:
            raise ValidationError("samples must be >= 2")


@dataclass(frozen=True)
class InferenceParams:
    """Peak decoding and scoring knobs."""

    nms_window: int = 5      # odd window for non-maximum suppression, px
    min_peak_conf: float = 0.1
    samples: int = 10

    def __post_init__(self):
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValidationError("nms_window must be odd and >= 3")


@dataclass
class ConfidenceMap:
    """Per-reflector 2D belief image with values in [0, 1]."""

    reflector: ReflectorId
    values: np.ndarray  # (h, w) float64

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.size == 0:
            raise DimensionError("confidence map must be a non-empty 2D array")
        if vals.min() < -1e-12 or vals.max() > 1.0 + 1e-12:
            raise ValidationError("confidence values must lie in [0, 1]")
        self.values = vals

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class FlowField:
    """Per-reflector 2-channel temporal vector field.

    ``vectors[v, u]`` holds the (x, y) flow direction at pixel (u, v); zero
    outside the field support.
    """

    reflector: ReflectorId
    vectors: np.ndarray  # (h, w, 2) float64

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 3 or vec.shape[2] != 2 or vec.size == 0:
            raise DimensionError("flow field must be a non-empty (h, w, 2) array")
        self.vectors = vec

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Annotation2D:
    """Ground-truth reflector location for one view of one frame."""

    reflector: ReflectorId
    x_curr: tuple[float, float]
    x_prev: tuple[float, float] | None
    frame: int
    view: int


@dataclass(frozen=True)
class ReflectorEstimate2D:
    """One decoded reflector location with its component scores."""

    reflector: ReflectorId
    position: tuple[float, float]
    e_s: float          # confidence-map score
    e_l: float          # flow-consistency score (0 when undefined)
    e_total: float      # fused score
    frame: int


def synth_confidence_map(center: tuple[float, float], dims: tuple[int, int],
                         params: MapSynthesisParams,
                         reflector: ReflectorId | None = None) -> ConfidenceMap:
    """Gaussian belief peak: value(p) = exp(-|p - center|^2 / sigma^2).

    The maximum is exactly 1.0 at the center; synthesize with integer-pixel
    centers when a grid pixel must attain it.
    """
    w, h = dims
    cx, cy = center
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValidationError(f"center {center} outside {w}x{h} map")
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    d2 = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2
    values = np.exp(-d2 / params.sigma_peak ** 2)
    return ConfidenceMap(reflector or ReflectorId(1), values)


def synth_flow_field(x_prev: tuple[float, float], x_curr: tuple[float, float],
                     dims: tuple[int, int], params: MapSynthesisParams,
                     reflector: ReflectorId | None = None) -> FlowField:
    """Unit-vector band between the previous and current locations.

    Support: points p with 0 <= v.(p - x_prev) <= d and |v_perp.(p - x_prev)|
    <= sigma_field, where v is the unit displacement and d its magnitude.
    Raises DegenerateMotionError for zero displacement; callers substitute a
    zero field for stationary reflectors (see :func:`zero_flow_field`).
    """
    w, h = dims
    prev = np.asarray(x_prev, dtype=np.float64)
    curr = np.asarray(x_curr, dtype=np.float64)
    disp = curr - prev
    dist = float(np.linalg.norm(disp))
    if dist == 0.0:
        raise DegenerateMotionError("x_prev equals x_curr")
    v = disp / dist
    v_perp = np.array([-v[1], v[0]])

    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    rel_x = xs[None, :] - prev[0]
    rel_y = ys[:, None] - prev[1]
    along = rel_x * v[0] + rel_y * v[1]
    across = rel_x * v_perp[0] + rel_y * v_perp[1]
    support = (along >= 0) & (along <= dist) & (np.abs(across) <= params.sigma_field)

    vectors = np.zeros((h, w, 2))
    vectors[support] = v
    return FlowField(reflector or ReflectorId(1), vectors)


def zero_flow_field(dims: tuple[int, int],
                    reflector: ReflectorId | None = None) -> FlowField:
    """All-zero field: the ground truth for a stationary reflector."""
    w, h = dims
    return FlowField(reflector or ReflectorId(1), np.zeros((h, w, 2)))


def extract_peaks(conf_map: ConfidenceMap, nms_window: int = 5,
                  min_conf: float = 0.1) -> list[tuple[tuple[int, int], float]]:
    """Strict local maxima above min_conf, sorted by score descending.

    A peak must strictly exceed every other value inside the (odd) window
    centered on it, so plateaus yield no peaks.  Ties in score order break
    by smaller row then smaller column.
    """
    if nms_window < 3 or nms_window % 2 == 0:
        raise ValidationError("nms_window must be odd and >= 3")
    vals = conf_map.values
    footprint = np.ones((nms_window, nms_window), dtype=bool)
    footprint[nms_window // 2, nms_window // 2] = False
    neighborhood_max = maximum_filter(vals, footprint=footprint,
                                      mode="constant", cval=-np.inf)
    is_peak = (vals > neighborhood_max) & (vals >= min_conf)
    rows, cols = np.nonzero(is_peak)
    order = sorted(range(len(rows)),
                   key=lambda i: (-vals[rows[i], cols[i]], rows[i], cols[i]))
    return [((int(cols[i]), int(rows[i])), float(vals[rows[i], cols[i]])) for i in order]


def _bilinear_sample(vectors: np.ndarray, x: float, y: float) -> np.ndarray:
    """Bilinear field sample; off-image points contribute the zero vector."""
    h, w = vectors.shape[:2]
    if x < 0 or y < 0 or x > w - 1 or y > h - 1:
        return np.zeros(2)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = vectors[y0, x0] * (1 - fx) + vectors[y0, x1] * fx
    bot = vectors[y1, x0] * (1 - fx) + vectors[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def line_integral(field: FlowField, r_prev: tuple[float, float],
                  r_curr: tuple[float, float], samples: int = 10) -> float:
    """Temporal-consistency score along the segment r_prev -> r_curr.

    Averages the dot product between the (bilinearly sampled) field and the
    unit segment direction at `samples` uniformly spaced points on [0, 1].
    Returns 0.0 for a zero-length segment.
    """
    if samples < 2:
        raise ValidationError("samples must be >= 2")
    prev = np.asarray(r_prev, dtype=np.float64)
    curr = np.asarray(r_curr, dtype=np.float64)
    disp = curr - prev
    dist = float(np.linalg.norm(disp))
    if dist == 0.0:
        return 0.0
    direction = disp / dist
    total = 0.0
    for u in np.linspace(0.0, 1.0, samples):
        p = (1.0 - u) * prev + u * curr
        total += float(_bilinear_sample(field.vectors, p[0], p[1]) @ direction)
    return total / samples


def fuse_confidence(e_s: float, e_l: float) -> float:
    """Fused score e_s + (1 - e_s) * e_l: flow weight grows as e_s drops."""
    if not (0.0 <= e_s <= 1.0):
        raise ValidationError(f"e_s must be in [0, 1], got {e_s}")
    return e_s + (1.0 - e_s) * e_l


def greedy_inference(maps: dict[ReflectorId, ConfidenceMap],
                     fields: dict[ReflectorId, FlowField],
                     prev: dict[ReflectorId, ReflectorEstimate2D] | None,
                     params: InferenceParams,
                     frame: int = 0) -> list[ReflectorEstimate2D]:
    """Select at most one estimate per reflector by fused confidence.

    Candidate peaks come from each reflector's map; each candidate's flow
    score is the line integral against the previous frame's retained
    estimate for the same reflector (0 when there is none).  The flow score
    is clamped to [0, 1] before fusing so e_total stays a probability-like
    score.  Ties break by smaller image row, then smaller column.
    """
    if set(maps) != set(fields):
        raise ValidationError("maps and fields must cover the same reflectors")
    prev = prev or {}
    out: list[ReflectorEstimate2D] = []
    for rid in sorted(maps):
        peaks = extract_peaks(maps[rid], params.nms_window, params.min_peak_conf)
        if not peaks:
            continue
        best: ReflectorEstimate2D | None = None
        for (px, py), e_s in peaks:
            e_l = 0.0
            if rid in prev:
                raw = line_integral(fields[rid], prev[rid].position, (px, py),
                                    params.samples)
                e_l = min(max(raw, 0.0), 1.0)
            cand = ReflectorEstimate2D(rid, (float(px), float(py)), e_s, e_l,
                                       fuse_confidence(e_s, e_l), frame)
            if best is None or (cand.e_total, -cand.position[1], -cand.position[0]) > \
                    (best.e_total, -best.position[1], -best.position[0]):
                best = cand
        if best is not None:
            out.append(best)
    return out


def loss_maps(pred: list[ConfidenceMap], truth: list[ConfidenceMap]) -> float:
    """Sum of squared per-pixel residuals over all reflector maps."""
    if len(pred) != len(truth):
        raise DimensionError("prediction/truth reflector counts differ")
    total = 0.0
    for p, t in zip(pred, truth):
        if p.values.shape != t.values.shape:
            raise DimensionError("map dimensions differ")
        total += float(np.sum((p.values - t.values) ** 2))
    return total


def loss_fields(pred: list[FlowField], truth: list[FlowField]) -> float:
    """Sum of squared per-pixel 2-vector residuals over all flow fields."""
    if len(pred) != len(truth):
        raise DimensionError("prediction/truth reflector counts differ")
    total = 0.0
    for p, t in zip(pred, truth):
        if p.vectors.shape != t.vectors.shape:
            raise DimensionError("field dimensions differ")
        total += float(np.sum((p.vectors - t.vectors) ** 2))
    return total
