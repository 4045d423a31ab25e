"""Pipeline configuration: one INI file with explicit defaults throughout.

Every constant the underlying method leaves open (peak spread, field width,
region size floor, confidence thresholds, filter noises, particle counts) is
a named key here so runs are reproducible from the config file alone.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .filtering import FilterParams
from .kalman import KalmanParams
from .maps import InferenceParams, MapSynthesisParams
from .skeleton import CalibrationConfig
from .synth import STRAP_SITES, CAPSULE_RADII

DEFAULT_LIMB_RADII = {idx: CAPSULE_RADII[site.capsule]
                      for idx, site in STRAP_SITES.items()}


@dataclass
class SynthConfig:
    motion: str = "squat-armraise"
    duration: int = 300
    fps: float = 30.0
    noise_sigma_mm: float = 3.0
    body_scale: float = 1.0
    num_views: int = 3
    image_width: int = 320
    image_height: int = 240
    focal_px: float = 280.0
    rig_radius: float = 2.3
    rig_height: float = 1.0
    write_maps: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    fps: float = 30.0
    maps: MapSynthesisParams = field(default_factory=MapSynthesisParams)
    inference: InferenceParams = field(default_factory=InferenceParams)
    filters: FilterParams = field(default_factory=FilterParams)
    kalman: KalmanParams = field(default_factory=KalmanParams)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    limb_radii: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_LIMB_RADII))
    eval_alpha: float = 0.05
    eval_a3d_cm: float = 20.0


def _get(parser, section, key, cast, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read an INI config; missing file or keys fall back to defaults."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)

    cfg.seed = _get(parser, "pipeline", "seed", int, cfg.seed)
    cfg.fps = _get(parser, "pipeline", "fps", float, cfg.fps)
    cfg.eval_alpha = _get(parser, "eval", "alpha", float, cfg.eval_alpha)
    cfg.eval_a3d_cm = _get(parser, "eval", "a3d_cm", float, cfg.eval_a3d_cm)

    cfg.maps = MapSynthesisParams(
        sigma_peak=_get(parser, "maps", "sigma_peak", float, cfg.maps.sigma_peak),
        sigma_field=_get(parser, "maps", "sigma_field", float, cfg.maps.sigma_field),
        samples=_get(parser, "maps", "samples", int, cfg.maps.samples),
    )
    cfg.inference = InferenceParams(
        nms_window=_get(parser, "maps", "nms_window", int, cfg.inference.nms_window),
        min_peak_conf=_get(parser, "maps", "min_peak_conf", float,
                           cfg.inference.min_peak_conf),
        samples=cfg.maps.samples,
    )
    cfg.filters = FilterParams(
        b_min=_get(parser, "filter", "b_min", int, cfg.filters.b_min),
        colocate_dist=_get(parser, "filter", "colocate_dist", float,
                           cfg.filters.colocate_dist),
        c_min=_get(parser, "filter", "c_min", float, cfg.filters.c_min),
    )
    cfg.kalman = KalmanParams(
        accel_noise=_get(parser, "kalman", "accel_noise", float,
                         cfg.kalman.accel_noise),
        meas_noise=_get(parser, "kalman", "meas_noise", float,
                        cfg.kalman.meas_noise),
    )
    cfg.calibration = CalibrationConfig(
        particle_count=_get(parser, "calibration", "particle_count", int,
                            cfg.calibration.particle_count),
        frame_window=_get(parser, "calibration", "frame_window", int,
                          cfg.calibration.frame_window),
        conf_min=_get(parser, "calibration", "conf_min", float,
                      cfg.calibration.conf_min),
        gen_radius=_get(parser, "calibration", "gen_radius", float,
                        cfg.calibration.gen_radius),
        rest_frames=_get(parser, "calibration", "rest_frames", int,
                         cfg.calibration.rest_frames),
    )
    cfg.synth = SynthConfig(
        motion=_get(parser, "synth", "motion", str, cfg.synth.motion),
        duration=_get(parser, "synth", "duration", int, cfg.synth.duration),
        fps=cfg.fps,
        noise_sigma_mm=_get(parser, "synth", "noise_sigma_mm", float,
                            cfg.synth.noise_sigma_mm),
        body_scale=_get(parser, "synth", "body_scale", float, cfg.synth.body_scale),
        num_views=_get(parser, "synth", "num_views", int, cfg.synth.num_views),
        image_width=_get(parser, "synth", "image_width", int, cfg.synth.image_width),
        image_height=_get(parser, "synth", "image_height", int,
                          cfg.synth.image_height),
        focal_px=_get(parser, "synth", "focal_px", float, cfg.synth.focal_px),
        rig_radius=_get(parser, "synth", "rig_radius", float, cfg.synth.rig_radius),
        rig_height=_get(parser, "synth", "rig_height", float, cfg.synth.rig_height),
        write_maps=_get(parser, "synth", "write_maps", bool, cfg.synth.write_maps),
    )
    if parser.has_section("straps"):
        for key, value in parser.items("straps"):
            if key.startswith("radius_"):
                cfg.limb_radii[int(key.split("_", 1)[1])] = float(value)
    return cfg


def write_default_config(path: str | Path) -> None:
    """Emit a fully commented template with every default spelled out."""
    cfg = PipelineConfig()
    lines = [
        "[pipeline]",
        f"seed = {cfg.seed}",
        f"fps = {cfg.fps}",
        "",
        "[maps]",
        f"sigma_peak = {cfg.maps.sigma_peak}",
        f"sigma_field = {cfg.maps.sigma_field}",
        f"samples = {cfg.maps.samples}",
        f"nms_window = {cfg.inference.nms_window}",
        f"min_peak_conf = {cfg.inference.min_peak_conf}",
        "",
        "[filter]",
        f"b_min = {cfg.filters.b_min}",
        f"colocate_dist = {cfg.filters.colocate_dist}",
        f"c_min = {cfg.filters.c_min}",
        "",
        "[kalman]",
        f"accel_noise = {cfg.kalman.accel_noise}",
        f"meas_noise = {cfg.kalman.meas_noise}",
        "",
        "[calibration]",
        f"particle_count = {cfg.calibration.particle_count}",
        f"frame_window = {cfg.calibration.frame_window}",
        f"conf_min = {cfg.calibration.conf_min}",
        f"gen_radius = {cfg.calibration.gen_radius}",
        f"rest_frames = {cfg.calibration.rest_frames}",
        "",
        "[synth]",
        f"motion = {cfg.synth.motion}",
        f"duration = {cfg.synth.duration}",
        f"noise_sigma_mm = {cfg.synth.noise_sigma_mm}",
        f"body_scale = {cfg.synth.body_scale}",
        f"num_views = {cfg.synth.num_views}",
        f"image_width = {cfg.synth.image_width}",
        f"image_height = {cfg.synth.image_height}",
        f"focal_px = {cfg.synth.focal_px}",
        f"rig_radius = {cfg.synth.rig_radius}",
        f"rig_height = {cfg.synth.rig_height}",
        f"write_maps = {str(cfg.synth.write_maps).lower()}",
        "",
        "[eval]",
        f"alpha = {cfg.eval_alpha}",
        f"a3d_cm = {cfg.eval_a3d_cm}",
        "",
        "[straps]",
    ]
    for idx in sorted(cfg.limb_radii):
        lines.append(f"radius_{idx} = {cfg.limb_radii[idx]}")
    Path(path).write_text("\n".join(lines) + "\n")
