"""Articulated 20-joint template, bone calibration and FK motion capture.

The template is a 40-DoF hierarchy (levels L0..L6, hips first).  Tracking
reduces each frame's optical points to per-joint targets (confidence-weighted
centroids of the joint's reflector subset), places the root at the hips
target, and solves each joint's rotation within its DoF budget so the
template bone directions align with the parent-target -> child-target
directions.  Calibration scales the template from the first batch, refines
bone lengths with a particle rigidity search over a frame window, and records
the rest geometry (reference target directions, root reflector cloud) that
absorbs constant marker-to-joint offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CalibrationDeferred, CalibrationInputError, TrackingGap,
                     ValidationError)
from .spatial import OpticalFrame

# ---------------------------------------------------------------------------
# Template structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointDef:
    name: str
    level: int
    dofs: int
    parent: str | None
    subset: tuple[int, ...]  # reflector indices driving this joint


JOINTS: tuple[JointDef, ...] = (
    JointDef("hips", 0, 6, None, (1, 8, 19, 23)),
    JointDef("spinebase", 1, 3, "hips", (1, 8)),
    JointDef("neck", 2, 3, "spinebase", (2, 3, 7)),
    JointDef("head", 3, 0, "neck", (4, 5, 6)),
    JointDef("left_shoulder", 3, 3, "neck", (9, 10)),
    JointDef("left_elbow", 4, 1, "left_shoulder", (11,)),
    JointDef("left_wrist", 5, 3, "left_elbow", (12,)),
    JointDef("left_hand", 6, 0, "left_wrist", (13,)),
    JointDef("right_shoulder", 3, 3, "neck", (14, 15)),
    JointDef("right_elbow", 4, 1, "right_shoulder", (16,)),
    JointDef("right_wrist", 5, 3, "right_elbow", (17,)),
    JointDef("right_hand", 6, 0, "right_wrist", (18,)),
    JointDef("left_hip", 1, 3, "hips", (19,)),
    JointDef("left_knee", 2, 1, "left_hip", (20,)),
    JointDef("left_ankle", 3, 3, "left_knee", (21,)),
    JointDef("left_foot", 4, 0, "left_ankle", (22,)),
    JointDef("right_hip", 1, 3, "hips", (23,)),
    JointDef("right_knee", 2, 1, "right_hip", (24,)),
    JointDef("right_ankle", 3, 3, "right_knee", (25,)),
    JointDef("right_foot", 4, 0, "right_ankle", (26,)),
)

JOINT_BY_NAME = {j.name: j for j in JOINTS}

#: Joints used for 3D evaluation (shoulders, elbows, wrists, hips, knees,
#: ankles on both sides).
EVAL_JOINTS = ("left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
               "left_wrist", "right_wrist", "left_hip", "right_hip",
               "left_knee", "right_knee", "left_ankle", "right_ankle")

# Default rest pose: standing, arms down, z up / y forward / x to the
# subject's left; root at the origin.  Positions in meters.
_REST_POSITIONS = {
    "hips": (0.0, 0.0, 0.0),
    "spinebase": (0.0, 0.0, 0.22),
    "neck": (0.0, 0.0, 0.50),
    "head": (0.0, 0.0, 0.66),
    "left_shoulder": (0.18, 0.0, 0.47),
    "left_elbow": (0.18, 0.0, 0.17),
    "left_wrist": (0.18, 0.0, -0.09),
    "left_hand": (0.18, 0.0, -0.17),
    "right_shoulder": (-0.18, 0.0, 0.47),
    "right_elbow": (-0.18, 0.0, 0.17),
    "right_wrist": (-0.18, 0.0, -0.09),
    "right_hand": (-0.18, 0.0, -0.17),
    "left_hip": (0.10, 0.0, 0.0),
    "left_knee": (0.10, 0.0, -0.44),
    "left_ankle": (0.10, 0.0, -0.86),
    "left_foot": (0.10, 0.14, -0.92),
    "right_hip": (-0.10, 0.0, 0.0),
    "right_knee": (-0.10, 0.0, -0.44),
    "right_ankle": (-0.10, 0.0, -0.86),
    "right_foot": (-0.10, 0.14, -0.92),
}

# Flexion axes for the 1-DoF joints, in the parent's rest frame.
_HINGE_AXES = {
    "left_elbow": (1.0, 0.0, 0.0),
    "right_elbow": (1.0, 0.0, 0.0),
    "left_knee": (1.0, 0.0, 0.0),
    "right_knee": (1.0, 0.0, 0.0),
}


def total_dofs() -> int:
    return sum(j.dofs for j in JOINTS)


@dataclass
class SkeletonTemplate:
    """Bone vectors (rest frame) plus calibration-recorded geometry.

    ``bone_vectors[name]`` is the rest-frame offset from the parent joint to
    joint ``name``; its norm is the bone length.  ``reference_dirs`` are the
    rest-frame unit directions from a parent joint to each child's *target*
    (defaulting to the bone direction); recording them during calibration
    absorbs constant marker-to-joint offsets.  ``root_locals`` holds the
    root-subset reflector positions in the root rest frame for 6-DoF root
    alignment.
    """

    bone_vectors: dict[str, np.ndarray]
    reference_dirs: dict[str, np.ndarray] = field(default_factory=dict)
    root_locals: dict[int, np.ndarray] | None = None
    scale: float = 1.0

    @classmethod
    def default(cls) -> "SkeletonTemplate":
        bones = {}
        for j in JOINTS:
            if j.parent is None:
                continue
            vec = (np.array(_REST_POSITIONS[j.name], dtype=np.float64)
                   - np.array(_REST_POSITIONS[j.parent], dtype=np.float64))
            bones[j.name] = vec
        return cls(bone_vectors=bones)

    def copy(self) -> "SkeletonTemplate":
        return SkeletonTemplate(
            bone_vectors={k: v.copy() for k, v in self.bone_vectors.items()},
            reference_dirs={k: v.copy() for k, v in self.reference_dirs.items()},
            root_locals=None if self.root_locals is None
            else {k: v.copy() for k, v in self.root_locals.items()},
            scale=self.scale,
        )

    def bone_length(self, name: str) -> float:
        return float(np.linalg.norm(self.bone_vectors[name]))

    def set_bone_length(self, name: str, length: float) -> None:
        vec = self.bone_vectors[name]
        norm = np.linalg.norm(vec)
        if norm <= 0:
            raise ValidationError(f"bone {name} has zero rest vector")
        self.bone_vectors[name] = vec * (length / norm)

    def rest_positions(self) -> dict[str, np.ndarray]:
        pos = {"hips": np.zeros(3)}
        for j in JOINTS:
            if j.parent is not None:
                pos[j.name] = pos[j.parent] + self.bone_vectors[j.name]
        return pos

    def reference_dir(self, child: str) -> np.ndarray:
        if child in self.reference_dirs:
            return self.reference_dirs[child]
        vec = self.bone_vectors[child]
        return vec / np.linalg.norm(vec)

    def hinge_axis(self, name: str) -> np.ndarray:
        return np.array(_HINGE_AXES[name])

    def apply_scale(self, scale: float) -> None:
        if scale <= 0:
            raise ValidationError("scale must be positive")
        for name in self.bone_vectors:
            self.bone_vectors[name] = self.bone_vectors[name] * scale
        self.scale *= scale

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        doc: dict = {
            "scale": self.scale,
            "bones": {k: [float(x) for x in v] for k, v in sorted(self.bone_vectors.items())},
            "reference_dirs": {k: [float(x) for x in v]
                               for k, v in sorted(self.reference_dirs.items())},
        }
        if self.root_locals is not None:
            doc["root_locals"] = {str(k): [float(x) for x in v]
                                  for k, v in sorted(self.root_locals.items())}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SkeletonTemplate":
        return cls(
            bone_vectors={k: np.array(v) for k, v in doc["bones"].items()},
            reference_dirs={k: np.array(v) for k, v in doc.get("reference_dirs", {}).items()},
            root_locals=None if "root_locals" not in doc else
            {int(k): np.array(v) for k, v in doc["root_locals"].items()},
            scale=float(doc.get("scale", 1.0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SkeletonTemplate":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Rotation helpers
# ---------------------------------------------------------------------------

def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.cross(a, b)
    sin = np.linalg.norm(cross)
    cos = float(a @ b)
    if sin < 1e-12:
        if cos > 0:
            return np.eye(3)
        # Antiparallel: rotate pi about a deterministic perpendicular axis.
        helper = np.zeros(3)
        helper[int(np.argmin(np.abs(a)))] = 1.0
        perp = np.cross(a, helper)
        return rotation_about(perp, np.pi)
    return rotation_about(cross / sin, np.arctan2(sin, cos))


def kabsch(refs: np.ndarray, obs: np.ndarray,
           weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted proper rotation best aligning ref vectors onto observed ones."""
    refs = np.asarray(refs, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    w = np.ones(len(refs)) if weights is None else np.asarray(weights, dtype=np.float64)
    h = (obs * w[:, None]).T @ refs
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix."""
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# Pose and target reduction
# ---------------------------------------------------------------------------

@dataclass
class Pose:
    """Global joint positions and orientations for one frame."""

    frame: int
    positions: dict[str, np.ndarray]
    rotations: dict[str, np.ndarray]  # 3x3 global orientation per joint
    gap: bool = False  # the root was missing; pose carried from previous

    def quaternion(self, name: str) -> np.ndarray:
        return quat_from_matrix(self.rotations[name])


def joint_target(frame: OpticalFrame, subset: tuple[int, ...],
                 conf_min: float = -1.0) -> tuple[np.ndarray, float] | None:
    """Confidence-weighted centroid of the subset's available points.

    Returns (position, mean confidence) or None when no subset point with
    confidence > conf_min is present in the frame.
    """
    pts = []
    confs = []
    for idx in subset:
        p = frame.get(idx)
        if p is not None and p.confidence > conf_min:
            pts.append(p.position)
            confs.append(p.confidence)
    if not pts:
        return None
    pts_arr = np.array(pts)
    conf_arr = np.array(confs)
    total = conf_arr.sum()
    if total > 0:
        pos = (conf_arr / total) @ pts_arr
    else:
        pos = pts_arr.mean(axis=0)
    return pos, float(conf_arr.mean())


def frame_targets(frame: OpticalFrame, conf_min: float = -1.0
                  ) -> dict[str, tuple[np.ndarray, float]]:
    """Per-joint targets for one optical frame."""
    out = {}
    for j in JOINTS:
        t = joint_target(frame, j.subset, conf_min)
        if t is not None:
            out[j.name] = t
    return out


@dataclass(frozen=True)
class CalibrationConfig:
    particle_count: int = 500     # G
    frame_window: int = 90        # F
    conf_min: float = 0.6         # per-point confidence gate
    gen_radius: float = 0.1      # particle generation ball radius, m
    rest_frames: int = 30         # batch used for scale and rest geometry
    min_excitation: float = 0.02  # required relative target motion, m
    rigidity_spread: float = 2e-3  # rigidity-objective spread below which the
                                   # window carries no particle signal, m
    rigid_pair_tol: float = 5e-3   # pair-distance std for the rigid path, m

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValidationError("particle_count must be >= 1")
        if self.frame_window < 2:
            raise ValidationError("frame_window must be >= 2")
        if not (0.0 <= self.conf_min <= 1.0):
            raise ValidationError("conf_min must be in [0, 1]")


# ---------------------------------------------------------------------------
# Coarse scaling and bone calibration
# ---------------------------------------------------------------------------

def coarse_scale(template: SkeletonTemplate, frames: list[OpticalFrame],
                 cfg: CalibrationConfig = CalibrationConfig()) -> float:
    """Uniform scale from the first batch: hips-to-ankle distance ratio.

    The reference length is the rest-pose straight-line hips-to-ankle
    distance of the template (not the summed bone lengths: the measured
    quantity is a straight line, so the reference must be too).
    """
    rest = template.rest_positions()
    samples = []
    for frame in frames[:cfg.rest_frames]:
        hips = joint_target(frame, JOINT_BY_NAME["hips"].subset)
        if hips is None:
            continue
        for side in ("left_ankle", "right_ankle"):
            ankle = joint_target(frame, JOINT_BY_NAME[side].subset)
            if ankle is None:
                continue
            ref = np.linalg.norm(rest[side] - rest["hips"])
            samples.append(float(np.linalg.norm(ankle[0] - hips[0])) / ref)
    if not samples:
        raise CalibrationInputError("no frame provides hips and ankle targets")
    return float(np.median(samples))


@dataclass(frozen=True)
class BoneCalibration:
    length: float
    converged: bool
    detail: str


def calibrate_bone(parent_targets: list[tuple[np.ndarray, float] | None],
                   child_targets: list[tuple[np.ndarray, float] | None],
                   template_length: float,
                   cfg: CalibrationConfig,
                   rng: np.random.Generator) -> BoneCalibration:
    """Bone length between a level pair from a window of joint targets.

    G candidate particles are generated in a ball around the template's
    child-joint placement (parent target plus template bone aimed at the
    child target) and rigidly follow the pair's frame across the window.
    The rigidity objective per particle is the mean absolute deviation of
    the summed distances to both targets from the initial sum; the surviving
    particle's parent distance is the bone length.  Windows with no angular
    excitation leave the objective flat for every particle and are flagged
    unconverged; a flat objective over a rigidly co-moving pair means the
    pair distance itself is the length (targets mark the joints), which is
    then read off directly.

    Raises CalibrationDeferred when fewer than 80% of the window's frames
    carry both targets above the confidence gate.
    """
    if len(parent_targets) != len(child_targets):
        raise ValidationError("target streams must have equal length")
    window = len(parent_targets)
    parents = []
    children = []
    for pt, ct in zip(parent_targets, child_targets):
        if pt is None or ct is None:
            continue
        if pt[1] > cfg.conf_min and ct[1] > cfg.conf_min:
            parents.append(pt[0])
            children.append(ct[0])
    if len(parents) < 0.8 * window:
        raise CalibrationDeferred(
            f"{len(parents)}/{window} qualifying frames (need >= 80%)")
    parents = np.array(parents)
    children = np.array(children)

    disp = children - parents
    norms = np.linalg.norm(disp, axis=1)
    if norms[0] < 1e-9:
        raise ValidationError("coincident parent/child targets at window start")
    rel_motion = float(np.max(np.linalg.norm(disp - disp[0], axis=1)))
    rho_med = float(np.median(norms))

    # Particle cloud around the aligned template child placement.
    anchor0 = parents[0]
    dir0 = disp[0] / norms[0]
    seed_pos = anchor0 + template_length * dir0
    offsets = _uniform_ball(cfg.particle_count, cfg.gen_radius, rng)
    particles0 = seed_pos + offsets  # frame-0 global positions

    if rel_motion < cfg.min_excitation:
        return BoneCalibration(rho_med, False, "static window: no angular excitation")

    # Pair frame per qualifying frame: anchored at the parent target,
    # rotated by the minimal rotation of the pair direction.
    local = particles0 - anchor0
    d0_parent = np.linalg.norm(local, axis=1)
    d0_child = np.linalg.norm(particles0 - children[0], axis=1)
    d0_sum = d0_parent + d0_child

    deviation = np.zeros(cfg.particle_count)
    for f in range(len(parents)):
        rot = minimal_rotation(dir0, disp[f] / norms[f])
        pos_f = parents[f] + local @ rot.T
        sum_f = (np.linalg.norm(pos_f - parents[f], axis=1)
                 + np.linalg.norm(pos_f - children[f], axis=1))
        deviation += np.abs(d0_sum - sum_f)
    deviation /= len(parents)

    if cfg.particle_count == 1:
        return BoneCalibration(float(d0_parent[0]), True, "single particle")

    # A pair whose mutual distance stays stable through angular motion marks
    # both joints directly: the zero-deviation particle sits at the child
    # joint with exactly the pair distance as its parent distance, so read
    # that off rather than trusting noise-level differences between
    # particles.  An unstable pair distance means the targets do not ride
    # the joints rigidly; no particle is then length-identifying (the
    # deviation ranking degenerates toward the ball edge), so the window is
    # flagged unconverged and the prior length stands.
    spread = float(deviation.max() - deviation.min())
    if float(np.std(norms)) < cfg.rigid_pair_tol:
        return BoneCalibration(rho_med, True,
                               f"rigid pair (objective spread {spread:.4f} m)")
    return BoneCalibration(rho_med, False,
                           f"unstable pair distance (std {np.std(norms):.4f} m)")


def _uniform_ball(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    pts = rng.standard_normal((n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return pts * r[:, None]


def calibrate_template(template: SkeletonTemplate, frames: list[OpticalFrame],
                       cfg: CalibrationConfig = CalibrationConfig(),
                       seed: int = 0) -> tuple[SkeletonTemplate, dict[str, BoneCalibration]]:
    """Full calibration: coarse scale, per-bone refinement, rest geometry.

    Bones are visited strictly in hierarchy-level order (L0 outward).  Bones
    whose window stays unconverged keep their coarse-scaled length.  Returns
    the calibrated template and the per-bone calibration report.
    """
    if not frames:
        raise CalibrationInputError("empty frame batch")
    out = template.copy()
    out.apply_scale(coarse_scale(out, frames, cfg))

    window = frames[:cfg.frame_window] if len(frames) >= cfg.frame_window else frames
    streams = {
        j.name: [joint_target(f, j.subset, cfg.conf_min) for f in window]
        for j in JOINTS
    }
    report: dict[str, BoneCalibration] = {}
    rng = np.random.default_rng(seed)
    for j in sorted((j for j in JOINTS if j.parent is not None),
                    key=lambda j: (j.level, j.name)):
        try:
            result = calibrate_bone(streams[j.parent], streams[j.name],
                                    out.bone_length(j.name), cfg, rng)
        except (CalibrationDeferred, ValidationError) as exc:
            report[j.name] = BoneCalibration(out.bone_length(j.name), False, str(exc))
            continue
        report[j.name] = result
        if result.converged:
            out.set_bone_length(j.name, result.length)

    _record_rest_geometry(out, frames[:cfg.rest_frames])
    return out, report


def _record_rest_geometry(template: SkeletonTemplate,
                          rest_frames: list[OpticalFrame]) -> None:
    """Record rest-batch target directions and the root reflector cloud.

    Assumes the rest batch shows the subject standing in the template's rest
    orientation.  Reference directions bind each joint's target to its
    parent's rest position so constant marker offsets cancel during
    tracking.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for frame in rest_frames:
        for name, (pos, _) in frame_targets(frame).items():
            sums[name] = sums.get(name, np.zeros(3)) + pos
            counts[name] = counts.get(name, 0) + 1
    rest_targets = {name: sums[name] / counts[name] for name in sums}
    if "hips" not in rest_targets:
        raise CalibrationInputError("rest batch has no hips target")
    root = rest_targets["hips"]

    # Rest joint positions: template chain anchored at the measured root.
    rest_local = template.rest_positions()
    rest_pos = {name: root + rest_local[name] for name in rest_local}

    refs = {}
    for j in JOINTS:
        if j.parent is None or j.name not in rest_targets:
            continue
        vec = rest_targets[j.name] - rest_pos[j.parent]
        norm = np.linalg.norm(vec)
        if norm > 1e-9:
            refs[j.name] = vec / norm
    template.reference_dirs = refs

    locals_sum: dict[int, np.ndarray] = {}
    locals_n: dict[int, int] = {}
    for frame in rest_frames:
        for idx in JOINT_BY_NAME["hips"].subset:
            p = frame.get(idx)
            if p is not None:
                locals_sum[idx] = locals_sum.get(idx, np.zeros(3)) + p.position
                locals_n[idx] = locals_n.get(idx, 0) + 1
    template.root_locals = {idx: locals_sum[idx] / locals_n[idx] - root
                            for idx in locals_sum}


# ---------------------------------------------------------------------------
# Pose fitting and tracking
# ---------------------------------------------------------------------------

_CHILDREN: dict[str, tuple[str, ...]] = {}
for _j in JOINTS:
    if _j.parent is not None:
        _CHILDREN.setdefault(_j.parent, ())
        _CHILDREN[_j.parent] = _CHILDREN[_j.parent] + (_j.name,)


def _solve_hinge(axis: np.ndarray, ref_dir: np.ndarray,
                 obs_dir_local: np.ndarray) -> np.ndarray:
    """Rotation about the hinge axis best aligning ref_dir to the target."""
    along = float(ref_dir @ axis)
    perp = ref_dir - along * axis
    norm = np.linalg.norm(perp)
    if norm < 1e-9:
        return np.eye(3)  # bone parallel to the hinge axis: no leverage
    e1 = perp / norm
    e2 = np.cross(axis, e1)
    theta = float(np.arctan2(obs_dir_local @ e2, obs_dir_local @ e1))
    return rotation_about(axis, theta)


def _root_from_cloud(template: SkeletonTemplate, frame: OpticalFrame
                     ) -> tuple[np.ndarray, np.ndarray] | None:
    """6-DoF root from the root reflector cloud against recorded rest locals."""
    if template.root_locals is None:
        return None
    locals_list = []
    obs_list = []
    weights = []
    for idx, local in sorted(template.root_locals.items()):
        p = frame.get(idx)
        if p is not None:
            locals_list.append(local)
            obs_list.append(p.position)
            weights.append(max(p.confidence, 1e-6))
    if len(obs_list) < 3:
        return None
    locals_arr = np.array(locals_list)
    obs_arr = np.array(obs_list)
    w = np.array(weights)
    w = w / w.sum()
    local_centroid = w @ locals_arr
    obs_centroid = w @ obs_arr
    rot = kabsch(locals_arr - local_centroid, obs_arr - obs_centroid, w)
    # Root = image of the local origin under the fitted rigid transform.
    return obs_centroid - rot @ local_centroid, rot


def fit_pose_targets(template: SkeletonTemplate,
                     targets: dict[str, tuple[np.ndarray, float]],
                     prev: Pose | None = None, frame: int = 0,
                     root_override: tuple[np.ndarray, np.ndarray] | None = None) -> Pose:
    """Fit the template to explicit per-joint targets.

    The root position is the hips target; every other joint's rotation is
    solved within its DoF budget to align the reference target direction
    with the observed parent-position -> child-target direction.  Joints
    whose child targets are all missing inherit the previous pose's local
    rotation (identity at the first frame).
    """
    if "hips" not in targets and root_override is None:
        if prev is None:
            raise TrackingGap("no hips target and no previous pose")
        return Pose(frame, {k: v.copy() for k, v in prev.positions.items()},
                    {k: v.copy() for k, v in prev.rotations.items()}, gap=True)

    positions: dict[str, np.ndarray] = {}
    rotations: dict[str, np.ndarray] = {}

    if root_override is not None:
        positions["hips"], rotations["hips"] = root_override
    else:
        positions["hips"] = targets["hips"][0].copy()
        rotations["hips"] = _fit_rotation(template, "hips", positions["hips"],
                                          targets, prev)

    for j in JOINTS:
        if j.parent is None:
            continue
        positions[j.name] = positions[j.parent] + rotations[j.parent] @ template.bone_vectors[j.name]
        if j.dofs == 0 or j.name not in _CHILDREN:
            rotations[j.name] = rotations[j.parent].copy()
            continue
        rotations[j.name] = _fit_rotation(template, j.name, positions[j.name],
                                          targets, prev, parent_rot=rotations[j.parent])
    return Pose(frame, positions, rotations)


def _fit_rotation(template: SkeletonTemplate, name: str, position: np.ndarray,
                  targets: dict[str, tuple[np.ndarray, float]],
                  prev: Pose | None,
                  parent_rot: np.ndarray | None = None) -> np.ndarray:
    joint = JOINT_BY_NAME[name]
    pairs = []
    for child in _CHILDREN.get(name, ()):
        if child not in targets:
            continue
        vec = targets[child][0] - position
        norm = np.linalg.norm(vec)
        if norm < 1e-9:
            continue
        pairs.append((template.reference_dir(child), vec / norm, targets[child][1]))

    if not pairs:
        if prev is not None:
            if parent_rot is None:
                return prev.rotations[name].copy()
            prev_parent = prev.rotations[JOINT_BY_NAME[name].parent]
            local_prev = prev_parent.T @ prev.rotations[name]
            return parent_rot @ local_prev
        return np.eye(3) if parent_rot is None else parent_rot.copy()

    if joint.dofs == 1:
        axis = template.hinge_axis(name)
        ref, obs, _ = pairs[0]
        base = parent_rot if parent_rot is not None else np.eye(3)
        local = _solve_hinge(axis, ref, base.T @ obs)
        return base @ local

    if len(pairs) >= 2:
        refs = np.array([p[0] for p in pairs])
        obs = np.array([p[1] for p in pairs])
        w = np.array([max(p[2], 1e-6) for p in pairs])
        return kabsch(refs, obs, w)

    # Single direction: minimal incremental rotation, twist carried over.
    ref, obs, _ = pairs[0]
    if prev is not None and name in prev.rotations:
        base = prev.rotations[name]
    elif parent_rot is not None:
        base = parent_rot
    else:
        base = np.eye(3)
    return minimal_rotation(base @ ref, obs) @ base


def fit_pose(template: SkeletonTemplate, frame: OpticalFrame,
             prev: Pose | None = None) -> Pose:
    """Fit one optical frame: root from the reflector cloud when recorded."""
    targets = frame_targets(frame)
    root_override = _root_from_cloud(template, frame)
    if root_override is None and "hips" not in targets:
        if prev is None:
            raise TrackingGap(f"frame {frame.frame}: no root target")
        return Pose(frame.frame,
                    {k: v.copy() for k, v in prev.positions.items()},
                    {k: v.copy() for k, v in prev.rotations.items()}, gap=True)
    return fit_pose_targets(template, targets, prev, frame.frame, root_override)


def track(template: SkeletonTemplate, frames: list[OpticalFrame]) -> list[Pose]:
    """Chain fit_pose over a sequence; gap frames carry the previous pose."""
    poses: list[Pose] = []
    prev: Pose | None = None
    for frame in frames:
        try:
            pose = fit_pose(template, frame, prev)
        except TrackingGap:
            if prev is None:
                raise
            pose = Pose(frame.frame,
                        {k: v.copy() for k, v in prev.positions.items()},
                        {k: v.copy() for k, v in prev.rotations.items()}, gap=True)
        poses.append(pose)
        prev = pose
    return poses
