"""On-disk dataset layout and binary/JSONL codecs.

Layout of a capture directory::

    root/
      calibration.json          # rig (core.save_rig)
      gt_motion.jsonl           # optional ground-truth poses
      view_{v}/
        depth_{f:05d}.bin       # DMCD: u16 millimeter depth
        irmask_{f:05d}.bin      # DMCI: bit-packed reflector mask
        maps_{f:05d}.dmcm       # optional: confidence maps + flow fields
        annotations.jsonl       # optional: one line per frame

Binary files are little-endian with fixed magics so format errors are caught
eagerly and byte-identical round-trips are guaranteed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import DepthFrame, IrMask, MultiViewRig, ReflectorId, load_rig
from .errors import FormatError, ValidationError
from .maps import Annotation2D, ConfidenceMap, FlowField, ReflectorEstimate2D
from .skeleton import JOINTS, Pose, matrix_from_quat
from .spatial import OpticalFrame, OpticalPoint

MAGIC_DEPTH = b"DMCD"
MAGIC_MASK = b"DMCI"
MAGIC_MAPS = b"DMCM"
MAPS_VERSION = 1


# ---------------------------------------------------------------------------
# Binary frame files
# ---------------------------------------------------------------------------

def write_depth(path: str | Path, frame: DepthFrame) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC_DEPTH)
        fh.write(struct.pack("<II", frame.width, frame.height))
        fh.write(frame.pixels.astype("<u2").tobytes())


def read_depth(path: str | Path) -> DepthFrame:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC_DEPTH:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected DMCD")
    w, h = struct.unpack("<II", data[4:12])
    expected = 12 + 2 * w * h
    if len(data) != expected:
        raise FormatError(f"{path}: size {len(data)} != expected {expected}")
    pixels = np.frombuffer(data, dtype="<u2", offset=12).reshape(h, w)
    return DepthFrame(pixels)


def write_mask(path: str | Path, mask: IrMask) -> None:
    packed = np.packbits(mask.bits.reshape(-1))
    with open(path, "wb") as fh:
        fh.write(MAGIC_MASK)
        fh.write(struct.pack("<II", mask.width, mask.height))
        fh.write(packed.tobytes())


def read_mask(path: str | Path) -> IrMask:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC_MASK:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected DMCI")
    w, h = struct.unpack("<II", data[4:12])
    n_bytes = (w * h + 7) // 8
    if len(data) != 12 + n_bytes:
        raise FormatError(f"{path}: size {len(data)} != expected {12 + n_bytes}")
    bits = np.unpackbits(np.frombuffer(data[12:], dtype=np.uint8),
                         count=w * h).astype(bool).reshape(h, w)
    return IrMask(bits)


def write_maps(path: str | Path, maps: dict[ReflectorId, ConfidenceMap],
               fields: dict[ReflectorId, FlowField]) -> None:
    """Map tensor file: the plug point for any external predictor.

    Header {magic, version, w, h, reflector_count}; then per reflector (in
    ascending id order) the w*h float32 confidence plane; then per reflector
    the two w*h float32 flow planes (x components, then y components).
    """
    if set(maps) != set(fields):
        raise ValidationError("maps and fields must cover the same reflectors")
    rids = sorted(maps)
    first = maps[rids[0]]
    w, h = first.width, first.height
    with open(path, "wb") as fh:
        fh.write(MAGIC_MAPS)
        fh.write(struct.pack("<IIII", MAPS_VERSION, w, h, len(rids)))
        for rid in rids:
            if (maps[rid].width, maps[rid].height) != (w, h):
                raise ValidationError("inconsistent map dimensions")
            fh.write(maps[rid].values.astype("<f4").tobytes())
        for rid in rids:
            vec = fields[rid].vectors
            if vec.shape[:2] != (h, w):
                raise ValidationError("inconsistent field dimensions")
            fh.write(vec[:, :, 0].astype("<f4").tobytes())
            fh.write(vec[:, :, 1].astype("<f4").tobytes())


def read_maps(path: str | Path) -> tuple[dict[ReflectorId, ConfidenceMap],
                                         dict[ReflectorId, FlowField]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC_MAPS:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected DMCM")
    version, w, h, count = struct.unpack("<IIII", data[4:20])
    if version != MAPS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    plane = 4 * w * h
    expected = 20 + count * plane * 3
    if len(data) != expected:
        raise FormatError(f"{path}: size {len(data)} != expected {expected}")
    maps: dict[ReflectorId, ConfidenceMap] = {}
    fields: dict[ReflectorId, FlowField] = {}
    off = 20
    rids = [ReflectorId(i) for i in range(1, count + 1)]
    for rid in rids:
        vals = np.frombuffer(data, dtype="<f4", count=w * h, offset=off)
        maps[rid] = ConfidenceMap(rid, vals.reshape(h, w).astype(np.float64))
        off += plane
    for rid in rids:
        x = np.frombuffer(data, dtype="<f4", count=w * h, offset=off)
        off += plane
        y = np.frombuffer(data, dtype="<f4", count=w * h, offset=off)
        off += plane
        vec = np.stack([x.reshape(h, w), y.reshape(h, w)], axis=-1)
        fields[rid] = FlowField(rid, vec.astype(np.float64))
    return maps, fields


# ---------------------------------------------------------------------------
# JSONL codecs
# ---------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_annotations(path: str | Path, per_frame: list[list[Annotation2D]]) -> None:
    lines = []
    for f, anns in enumerate(per_frame):
        doc = {"frame": f, "annotations": [
            {"reflector": a.reflector.index,
             "x_curr": [a.x_curr[0], a.x_curr[1]],
             "x_prev": None if a.x_prev is None else [a.x_prev[0], a.x_prev[1]]}
            for a in sorted(anns, key=lambda a: a.reflector.index)]}
        lines.append(_dump(doc))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def read_annotations(path: str | Path, view: int) -> dict[int, list[Annotation2D]]:
    out: dict[int, list[Annotation2D]] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        frame = int(doc["frame"])
        anns = []
        for a in doc["annotations"]:
            prev = a.get("x_prev")
            anns.append(Annotation2D(ReflectorId(int(a["reflector"])),
                                     tuple(a["x_curr"]),
                                     None if prev is None else tuple(prev),
                                     frame, view))
        out[frame] = anns
    return out


def write_estimates(path: str | Path,
                    per_frame_view: list[tuple[int, int, list[ReflectorEstimate2D]]]) -> None:
    lines = []
    for frame, view, ests in per_frame_view:
        doc = {"frame": frame, "view": view, "estimates": [
            {"reflector": e.reflector.index,
             "position": [e.position[0], e.position[1]],
             "e_s": e.e_s, "e_l": e.e_l, "e_total": e.e_total}
            for e in sorted(ests, key=lambda e: e.reflector.index)]}
        lines.append(_dump(doc))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def read_estimates(path: str | Path) -> list[tuple[int, int, list[ReflectorEstimate2D]]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        frame, view = int(doc["frame"]), int(doc["view"])
        ests = [ReflectorEstimate2D(ReflectorId(int(e["reflector"])),
                                    tuple(e["position"]), float(e["e_s"]),
                                    float(e["e_l"]), float(e["e_total"]), frame)
                for e in doc["estimates"]]
        out.append((frame, view, ests))
    return out


def write_optical(path: str | Path, frames: list[OpticalFrame]) -> None:
    lines = []
    for frame in frames:
        doc = {"frame": frame.frame, "points": [
            {"reflector": idx,
             "xyz_m": [p.position[0], p.position[1], p.position[2]],
             "confidence": p.confidence}
            for idx, p in sorted(frame.points.items())]}
        lines.append(_dump(doc))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def read_optical(path: str | Path) -> list[OpticalFrame]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        frame = OpticalFrame(frame=int(doc["frame"]))
        for p in doc["points"]:
            frame.add(OpticalPoint(ReflectorId(int(p["reflector"])),
                                   np.array(p["xyz_m"], dtype=np.float64),
                                   float(p["confidence"]), frame.frame))
        out.append(frame)
    return out


def write_motion(path: str | Path, poses: list[Pose]) -> None:
    lines = []
    for pose in poses:
        doc = {"frame": pose.frame, "gap": pose.gap, "joints": [
            {"id": j.name,
             "xyz_m": [float(x) for x in pose.positions[j.name]],
             "quat_wxyz": [float(x) for x in pose.quaternion(j.name)]}
            for j in JOINTS]}
        lines.append(_dump(doc))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def read_motion(path: str | Path) -> list[Pose]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        positions = {}
        rotations = {}
        for j in doc["joints"]:
            positions[j["id"]] = np.array(j["xyz_m"], dtype=np.float64)
            rotations[j["id"]] = matrix_from_quat(np.array(j["quat_wxyz"]))
        out.append(Pose(int(doc["frame"]), positions, rotations,
                        gap=bool(doc.get("gap", False))))
    return out


def write_motion_csv(path: str | Path, poses: list[Pose]) -> None:
    """Flat CSV for plotting: frame then 7 columns per joint."""
    header = ["frame"]
    for j in JOINTS:
        header += [f"{j.name}_{c}" for c in ("x", "y", "z", "qw", "qx", "qy", "qz")]
    rows = [",".join(header)]
    for pose in poses:
        cells = [str(pose.frame)]
        for j in JOINTS:
            cells += [repr(float(x)) for x in pose.positions[j.name]]
            cells += [repr(float(x)) for x in pose.quaternion(j.name)]
        rows.append(",".join(cells))
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# Dataset directory access
# ---------------------------------------------------------------------------

class DatasetReader:
    """Lazy access to one capture directory; validates the dense frame index."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        calib = self.root / "calibration.json"
        if not calib.exists():
            raise ValidationError(f"{self.root}: calibration.json missing")
        self.rig: MultiViewRig = load_rig(calib)
        self.view_dirs = [self.root / f"view_{v}" for v in range(len(self.rig))]
        for d in self.view_dirs:
            if not d.is_dir():
                raise ValidationError(f"{d}: view directory missing")
        counts = {len(list(d.glob("depth_*.bin"))) for d in self.view_dirs}
        if len(counts) != 1:
            raise ValidationError("views disagree on frame count")
        self.num_frames = counts.pop()
        for v, d in enumerate(self.view_dirs):
            for f in range(self.num_frames):
                if not (d / f"depth_{f:05d}.bin").exists():
                    raise ValidationError(f"view {v}: frame {f} missing (sparse index)")

    @property
    def num_views(self) -> int:
        return len(self.rig)

    def depth(self, view: int, frame: int) -> DepthFrame:
        return read_depth(self.view_dirs[view] / f"depth_{frame:05d}.bin")

    def mask(self, view: int, frame: int) -> IrMask:
        return read_mask(self.view_dirs[view] / f"irmask_{frame:05d}.bin")

    def maps_path(self, view: int, frame: int) -> Path:
        return self.view_dirs[view] / f"maps_{frame:05d}.dmcm"

    def annotations(self, view: int) -> dict[int, list[Annotation2D]]:
        path = self.view_dirs[view] / "annotations.jsonl"
        if not path.exists():
            return {}
        return read_annotations(path, view)

    def gt_motion(self) -> list[Pose] | None:
        path = self.root / "gt_motion.jsonl"
        if not path.exists():
            return None
        return read_motion(path)
