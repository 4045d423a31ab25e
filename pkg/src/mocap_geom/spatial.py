"""2D regions to fused global 3D optical data.

The per-view half turns validated estimates into observations: connected
reflector regions, median contour depth, backprojection of the region
center, and (for straps) a surface normal from a least-squares plane fit of
the contour's 3D points.  The cross-view half fuses observations into one
global point per reflector: confidence-weighted centroids for patches,
closest points between inward normal lines for straps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .core import (CameraExtrinsics, CameraIntrinsics, DepthFrame, IrMask,
                   ReflectorId, ReflectorKind, backproject, to_global)
from .errors import NoDepthError, SplitFailure, ValidationError
from .maps import ReflectorEstimate2D

_EIGHT = np.ones((3, 3), dtype=bool)

# Feature scale balancing depth millimeters against pixel coordinates when
# clustering merged-region contours.
DEPTH_FEATURE_SCALE = 0.05

# Normal-line pairs with 1 - (n_i . n_j)^2 below this are near-parallel.
PARALLEL_EPS = 1e-6


@dataclass
class Region:
    """One 8-connected mask component with its traced boundary."""

    pixels: np.ndarray   # (n, 2) int arrays of (u, v)
    contour: np.ndarray  # (m, 2) boundary subset, row-major order
    bbox: tuple[int, int, int, int]  # (u_min, v_min, u_max, v_max) inclusive

    @property
    def size(self) -> int:
        return len(self.pixels)

    @property
    def centroid(self) -> tuple[float, float]:
        c = self.pixels.mean(axis=0)
        return float(c[0]), float(c[1])


@dataclass(frozen=True)
class ViewObservation:
    """One reflector seen from one view, mapped to the global frame."""

    reflector: ReflectorId
    view: int
    point_global: np.ndarray
    e_total: float
    normal_global: np.ndarray | None = None  # unit, oriented toward the camera


@dataclass(frozen=True)
class OpticalPoint:
    """Fused global position of one reflector for one frame."""

    reflector: ReflectorId
    position: np.ndarray
    confidence: float
    frame: int
    degraded: bool = False  # strap fusion fell back to the patch path


@dataclass
class OpticalFrame:
    """At most one optical point per reflector for one multi-view frame."""

    frame: int
    points: dict[int, OpticalPoint] = field(default_factory=dict)

    def add(self, point: OpticalPoint) -> None:
        if point.reflector.index in self.points:
            raise ValidationError(f"duplicate reflector {point.reflector.index}")
        self.points[point.reflector.index] = point

    def get(self, reflector_index: int) -> OpticalPoint | None:
        return self.points.get(reflector_index)


def find_regions_labeled(mask: IrMask) -> tuple[list[Region], np.ndarray]:
    """Regions plus the label image they came from (labels start at 1)."""
    labels = np.zeros(mask.bits.shape, dtype=np.int32)
    rows = np.flatnonzero(mask.bits.any(axis=1))
    if len(rows) == 0:
        return [], labels
    cols = np.flatnonzero(mask.bits.any(axis=0))
    window = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    sub_mask = mask.bits[window]
    sub_labels, count = ndimage.label(sub_mask, structure=_EIGHT)
    labels[window] = sub_labels
    # Distinct 8-connected components are never 8-adjacent, so a boundary
    # pixel is simply a set pixel with a zero 8-neighbor (or image border).
    boundary = sub_mask & ~ndimage.binary_erosion(sub_mask, structure=_EIGHT,
                                                  border_value=0)
    regions = []
    for idx, sub_sl in enumerate(ndimage.find_objects(sub_labels), start=1):
        sub = sub_labels[sub_sl] == idx
        vs, us = np.nonzero(sub)
        vs += window[0].start + sub_sl[0].start
        us += window[1].start + sub_sl[1].start
        bvs, bus = np.nonzero(boundary[sub_sl] & sub)
        bvs += window[0].start + sub_sl[0].start
        bus += window[1].start + sub_sl[1].start
        regions.append(Region(
            pixels=np.column_stack([us, vs]),
            contour=np.column_stack([bus, bvs]),
            bbox=(int(us.min()), int(vs.min()), int(us.max()), int(vs.max())),
        ))
    return regions, labels


def find_regions(mask: IrMask) -> list[Region]:
    """Extract 8-connected components and trace their boundaries.

    A contour pixel is a region pixel with at least one 8-neighbor outside
    the region (image borders count as outside).  Regions are returned in
    label order (row-major discovery), pixels in row-major scan order.
    """
    return find_regions_labeled(mask)[0]


def _median_nonzero(values: np.ndarray) -> int:
    nonzero = values[values > 0]
    if nonzero.size == 0:
        raise NoDepthError("all contour depths are zero")
    k = (nonzero.size - 1) // 2
    return int(np.partition(nonzero, k)[k])


def region_depth(contour: np.ndarray, depth: DepthFrame) -> int:
    """Median of nonzero depths at the contour pixels, in millimeters.

    Even-count medians take the lower middle value so the result is always a
    measured integer.  Raises NoDepthError when every contour depth is zero.
    """
    if len(contour) == 0:
        raise ValidationError("contour is empty")
    return _median_nonzero(depth.pixels[contour[:, 1], contour[:, 0]])


def split_merged_region(region: Region, ests: list[ReflectorEstimate2D],
                        depth: DepthFrame) -> list[np.ndarray]:
    """Split one region's contour among n >= 2 estimates.

    K-means (k = n) over contour pixels with nonzero depth, on features
    (u, v, depth_mm * scale); centers start at the estimate positions so the
    result is deterministic.  Each cluster is assigned to the estimate whose
    2D position is nearest its centroid, as a bijection.  Returns one contour
    pixel array per estimate, in the estimates' order.
    """
    n = len(ests)
    if n < 2:
        raise ValidationError("split requires at least 2 estimates")
    depths = depth.pixels[region.contour[:, 1], region.contour[:, 0]]
    usable = depths > 0
    pts = region.contour[usable]
    if len(pts) < n:
        raise SplitFailure(f"{len(pts)} usable contour pixels for {n} estimates")
    feats = np.column_stack([
        pts[:, 0].astype(np.float64),
        pts[:, 1].astype(np.float64),
        depths[usable].astype(np.float64) * DEPTH_FEATURE_SCALE,
    ])

    start_depth = float(np.median(feats[:, 2]))
    centers = np.array([[e.position[0], e.position[1], start_depth] for e in ests])
    assignment = np.zeros(len(feats), dtype=int)
    for _ in range(50):
        d2 = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)
        if np.array_equal(new_assignment, assignment) and _ > 0:
            break
        assignment = new_assignment
        for k in range(n):
            sel = assignment == k
            if sel.any():
                centers[k] = feats[sel].mean(axis=0)

    # Bijective cluster -> estimate matching on 2D centroid distance.
    cost = np.zeros((n, n))
    for k in range(n):
        sel = assignment == k
        centroid = feats[sel, :2].mean(axis=0) if sel.any() else centers[k, :2]
        for j, e in enumerate(ests):
            cost[k, j] = np.hypot(centroid[0] - e.position[0],
                                  centroid[1] - e.position[1])
    rows, cols = linear_sum_assignment(cost)
    clusters: list[np.ndarray] = [np.empty((0, 2), dtype=int)] * n
    for k, j in zip(rows, cols):
        clusters[j] = pts[assignment == k]
    return clusters


def _fit_plane_normal(points: np.ndarray) -> np.ndarray | None:
    """Unit normal of the least-squares plane, or None if degenerate."""
    if len(points) < 3:
        return None
    centered = points - points.mean(axis=0)
    # Eigenvector of the 3x3 scatter with the least variance.
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    if evals[1] < 1e-18:  # collinear points: no unique plane
        return None
    return evecs[:, 0]


def observe(est: ReflectorEstimate2D, region: Region, contour: np.ndarray,
            depth: DepthFrame, intrinsics: CameraIntrinsics,
            extrinsics: CameraExtrinsics, view: int,
            center_override: tuple[float, float] | None = None) -> ViewObservation:
    """Backproject one validated estimate into the global frame.

    The region's central 2D point (pixel centroid, rounded) is backprojected
    at the median contour depth.  For straps, the contour's 3D points give a
    least-squares plane whose unit normal, oriented toward the camera, rides
    along for the cross-view fusion.  `contour` may be a sub-cluster of the
    region contour when a merged region was split; `center_override` replaces
    the region centroid in that case.
    """
    cvals = depth.pixels[contour[:, 1], contour[:, 0]].astype(np.float64)
    d_mm = _median_nonzero(cvals)
    if center_override is not None:
        cx, cy = center_override
    else:
        cx, cy = region.centroid
    u = min(max(int(round(cx)), 0), intrinsics.width - 1)
    v = min(max(int(round(cy)), 0), intrinsics.height - 1)
    point_cam = backproject((u, v), d_mm, intrinsics)

    normal_global = None
    if est.reflector.kind is ReflectorKind.STRAP:
        # contour samples hugging the silhouette read the surface at grazing
        # incidence; trim depths far from the region median before fitting
        ok = (cvals > 0) & (np.abs(cvals - d_mm) <= 40.0)
        if np.sum(ok) >= 3:
            z = cvals[ok] / 1000.0
            pts3d = np.empty((z.size, 3))
            pts3d[:, 0] = (contour[ok, 0] - intrinsics.cx) * z / intrinsics.fx
            pts3d[:, 1] = (contour[ok, 1] - intrinsics.cy) * z / intrinsics.fy
            pts3d[:, 2] = z
            normal = _fit_plane_normal(pts3d)
            if normal is not None:
                # Orient toward the camera (origin of camera space).
                if normal @ point_cam > 0:
                    normal = -normal
                # A surface the sensor detected must face it; a fitted
                # normal far off the reverse viewing ray is fit noise.
                view_dir = -point_cam / np.linalg.norm(point_cam)
                if normal @ view_dir >= 0.55:
                    normal_global = extrinsics.rotation @ normal
    return ViewObservation(
        reflector=est.reflector,
        view=view,
        point_global=to_global(point_cam, extrinsics),
        e_total=est.e_total,
        normal_global=normal_global,
    )


def fuse_patch(observations: list[ViewObservation], frame: int = 0) -> OpticalPoint:
    """Confidence-weighted centroid of per-view points.

    Weights are e_total normalized to sum 1 (a convex combination); an
    all-zero confidence set degrades to the unweighted centroid with
    confidence 0.  The fused confidence is the mean of the contributing
    views' e_total.
    """
    if not observations:
        raise ValidationError("fuse_patch needs at least one observation")
    pts = np.array([o.point_global for o in observations])
    conf = np.array([o.e_total for o in observations])
    total = conf.sum()
    if total > 0:
        weights = conf / total
        position = weights @ pts
        confidence = float(conf.mean())
    else:
        position = pts.mean(axis=0)
        confidence = 0.0
    return OpticalPoint(observations[0].reflector, position, confidence, frame)


def closest_points_on_normal_lines(p_i: np.ndarray, n_i: np.ndarray,
                                   p_j: np.ndarray, n_j: np.ndarray
                                   ) -> tuple[np.ndarray, np.ndarray, float]:
    """Closest points between two normal lines plus the denominator 1 - b^2.

    With b = n_i.n_j, c = n_i.(p_i - p_j), d = 1 - b^2, f = n_j.(p_i - p_j):
    s = (b f - c) / d and t = (f - c b) / d give the closest points
    p_i + s n_i and p_j + t n_j.  Callers must check d against PARALLEL_EPS.
    """
    b = float(n_i @ n_j)
    c = float(n_i @ (p_i - p_j))
    d = 1.0 - b * b
    f = float(n_j @ (p_i - p_j))
    if d < PARALLEL_EPS:
        return p_i, p_j, d
    s = (b * f - c) / d
    t = (f - c * b) / d
    return p_i + s * n_i, p_j + t * n_j, d


def fuse_strap(observations: list[ViewObservation], frame: int = 0) -> OpticalPoint:
    """Limb-axis point from >= 2 per-view surface observations with normals.

    For every unordered view pair the closest points between the two normal
    lines are computed; all 2m such points are fused with the source views'
    confidences as weights.  When every pair is near-parallel the routine
    falls back to fuse_patch on the raw observation points and flags the
    result degraded.
    """
    with_normals = [o for o in observations if o.normal_global is not None]
    if len(with_normals) < 2:
        raise ValidationError("fuse_strap needs >= 2 observations with normals")
    points = []
    weights = []
    for a in range(len(with_normals)):
        for b in range(a + 1, len(with_normals)):
            oi, oj = with_normals[a], with_normals[b]
            pi, pj, d = closest_points_on_normal_lines(
                oi.point_global, oi.normal_global, oj.point_global, oj.normal_global)
            if d < PARALLEL_EPS:
                continue
            points.append((pi, oi.e_total))
            points.append((pj, oj.e_total))
    if not points:
        fallback = fuse_patch(observations, frame)
        return OpticalPoint(fallback.reflector, fallback.position,
                            fallback.confidence, frame, degraded=True)
    pts = np.array([p for p, _ in points])
    conf = np.array([w for _, w in points])
    total = conf.sum()
    position = (conf / total) @ pts if total > 0 else pts.mean(axis=0)
    confidence = float(np.mean([o.e_total for o in observations]))
    return OpticalPoint(observations[0].reflector, position, confidence, frame)


def fuse_strap_single_view(obs: ViewObservation, limb_radius: float,
                           frame: int = 0) -> OpticalPoint:
    """Axis point from one view: surface point offset inward by the radius.

    The stored normal points toward the camera, so subtracting radius *
    normal moves from the visible surface into the limb.
    """
    if obs.normal_global is None:
        raise ValidationError("single-view strap fusion needs a surface normal")
    if limb_radius < 0:
        raise ValidationError("limb radius must be >= 0")
    position = obs.point_global - limb_radius * obs.normal_global
    return OpticalPoint(obs.reflector, position, obs.e_total, frame)
