"""Dataset-level pipeline tests: synth output contract, command chain, CLI."""

import hashlib
import json
import numpy as np
import pytest

from mocap_geom import dataset as ds
from mocap_geom.cli import main
from mocap_geom.config import PipelineConfig, load_config, write_default_config
from mocap_geom.pipeline import (cmd_calibrate, cmd_eval, cmd_fuse, cmd_infer,
                                 cmd_synth, cmd_track, infer_dataset,
                                 run_in_process)


def small_config(duration=24, noise=0.0):
    cfg = PipelineConfig()
    cfg.synth.duration = duration
    cfg.synth.noise_sigma_mm = noise
    cfg.calibration = type(cfg.calibration)(
        particle_count=50, frame_window=duration, rest_frames=8)
    return cfg


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    cfg = small_config()
    root = tmp_path_factory.mktemp("ds")
    return cmd_synth(cfg, root / "dataset"), cfg


class TestCmdSynth:
    def test_file_layout(self, small_dataset):
        root, cfg = small_dataset
        assert (root / "calibration.json").exists()
        assert (root / "gt_motion.jsonl").exists()
        for v in range(3):
            d = root / f"view_{v}"
            assert len(list(d.glob("depth_*.bin"))) == cfg.synth.duration
            assert len(list(d.glob("irmask_*.bin"))) == cfg.synth.duration
            assert (d / "annotations.jsonl").exists()

    def test_deterministic_bytes(self, small_dataset, tmp_path):
        root, cfg = small_dataset
        again = cmd_synth(cfg, tmp_path / "dataset2")
        for rel in ("view_0/depth_00003.bin", "view_1/irmask_00007.bin",
                    "view_2/annotations.jsonl", "gt_motion.jsonl"):
            a = (root / rel).read_bytes()
            b = (again / rel).read_bytes()
            assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest(), rel

    def test_annotations_reproject_onto_holes(self, small_dataset):
        # every annotation sits on or next to a masked reflector blob
        root, cfg = small_dataset
        reader = ds.DatasetReader(root)
        for v in range(reader.num_views):
            anns = reader.annotations(v)
            mask = reader.mask(v, 0)
            for a in anns.get(0, []):
                ui = int(round(a.x_curr[0]))
                vi = int(round(a.x_curr[1]))
                window = mask.bits[max(0, vi - 2):vi + 3, max(0, ui - 2):ui + 3]
                assert window.any(), f"view {v} reflector {a.reflector.index}"

    def test_gt_motion_matches_animate(self, small_dataset):
        root, cfg = small_dataset
        poses = ds.read_motion(root / "gt_motion.jsonl")
        assert len(poses) == cfg.synth.duration
        assert poses[0].positions["hips"][2] == pytest.approx(0.95, abs=1e-9)


class TestInfer:
    def test_estimates_near_annotations(self, small_dataset):
        root, cfg = small_dataset
        reader = ds.DatasetReader(root)
        estimates = infer_dataset(reader, cfg)
        by_fv = {(f, v): e for f, v, e in estimates}
        checked = 0
        for v in range(reader.num_views):
            anns = reader.annotations(v)
            for f in (0, 5, 10):
                gt = {a.reflector.index: a.x_curr for a in anns.get(f, [])}
                for est in by_fv.get((f, v), []):
                    if est.reflector.index in gt:
                        g = gt[est.reflector.index]
                        assert np.hypot(est.position[0] - g[0],
                                        est.position[1] - g[1]) <= 1.5
                        checked += 1
        assert checked > 50

    def test_maps_file_plug_point(self, small_dataset, tmp_path):
        # when maps_{f}.dmcm exists it is used instead of the annotations
        root, cfg = small_dataset
        reader = ds.DatasetReader(root)
        from mocap_geom.maps import synth_confidence_map, zero_flow_field
        from mocap_geom.core import ReflectorId
        intr, _ = reader.rig[0]
        dims = (intr.width, intr.height)
        rid = ReflectorId(1)
        maps = {rid: synth_confidence_map((50, 60), dims, cfg.maps, rid)}
        fields = {rid: zero_flow_field(dims, rid)}
        target = reader.maps_path(0, 0)
        try:
            ds.write_maps(target, maps, fields)
            estimates = infer_dataset(reader, cfg, view_subset=[0])
            frame0 = next(e for f, v, e in estimates if f == 0 and v == 0)
            # reflector 1 must now be decoded at the injected peak, if it
            # survives filtering (the mask there is empty, so it is dropped)
            assert all(e.reflector.index != 1 or e.position == (50.0, 60.0)
                       for e in frame0)
        finally:
            target.unlink()


class TestComposition:
    def test_file_chain_equals_in_process(self, small_dataset, tmp_path):
        root, cfg = small_dataset
        est_path = cmd_infer(root, tmp_path / "estimates.jsonl", cfg)
        opt_path = cmd_fuse(root, est_path, tmp_path / "optical.jsonl", cfg)
        tpl_path, _ = cmd_calibrate(opt_path, tmp_path / "template.json", cfg)
        poses_files = cmd_track(opt_path, tpl_path, tmp_path / "motion.jsonl")
        poses_mem = run_in_process(root, cfg)
        assert len(poses_files) == len(poses_mem)
        for pf, pm in zip(poses_files, poses_mem):
            for name in pf.positions:
                assert np.array_equal(pf.positions[name], pm.positions[name]), name

    def test_eval_outputs(self, small_dataset, tmp_path):
        root, cfg = small_dataset
        est_path = cmd_infer(root, tmp_path / "estimates.jsonl", cfg)
        opt_path = cmd_fuse(root, est_path, tmp_path / "optical.jsonl", cfg)
        tpl_path, _ = cmd_calibrate(opt_path, tmp_path / "template.json", cfg)
        cmd_track(opt_path, tpl_path, tmp_path / "motion.jsonl")
        report = cmd_eval(root, cfg, estimates_path=est_path,
                          motion_path=tmp_path / "motion.jsonl",
                          out_json=tmp_path / "eval.json",
                          out_csv=tmp_path / "eval.csv")
        doc = json.loads((tmp_path / "eval.json").read_text())
        assert 0.5 <= doc["map_total"] <= 1.0
        assert doc["total_mae_cm"] < 5.0
        assert report.pck3d_total == 1.0
        assert "c_min" in (tmp_path / "eval.csv").read_text()


class TestConfig:
    def test_default_config_round_trip(self, tmp_path):
        path = tmp_path / "config.ini"
        write_default_config(path)
        cfg = load_config(path)
        ref = PipelineConfig()
        assert cfg.maps == ref.maps
        assert cfg.filters == ref.filters
        assert cfg.limb_radii == ref.limb_radii

    def test_overrides(self, tmp_path):
        path = tmp_path / "config.ini"
        path.write_text("[filter]\nb_min = 7\n\n[maps]\nsigma_peak = 5.5\n"
                        "\n[straps]\nradius_11 = 0.08\n")
        cfg = load_config(path)
        assert cfg.filters.b_min == 7
        assert cfg.maps.sigma_peak == 5.5
        assert cfg.limb_radii[11] == 0.08
        assert cfg.limb_radii[12] != 0.08

    def test_missing_config_rejected(self, tmp_path):
        with pytest.raises(Exception):
            load_config(tmp_path / "nope.ini")


class TestCli:
    def test_full_chain_exit_codes(self, tmp_path):
        out = tmp_path / "run"
        dataset = tmp_path / "dataset"
        config = tmp_path / "tiny.ini"
        config.write_text("[synth]\nduration = 10\nnoise_sigma_mm = 0\n"
                          "\n[calibration]\nparticle_count = 20\n"
                          "frame_window = 10\nrest_frames = 4\n")
        assert main(["synth", "--config", str(config), "--dataset",
                     str(dataset), "--out", str(out)]) == 0
        assert main(["infer", "--config", str(config), "--dataset",
                     str(dataset), "--out", str(out)]) == 0
        assert main(["fuse", "--config", str(config), "--dataset",
                     str(dataset), "--out", str(out)]) == 0
        assert main(["calibrate", "--config", str(config), "--out", str(out)]) == 0
        assert main(["track", "--config", str(config), "--out", str(out)]) == 0
        assert main(["eval", "--config", str(config), "--dataset",
                     str(dataset), "--out", str(out)]) == 0
        assert (out / "motion.csv").exists()
        assert (out / "eval.json").exists()

    def test_missing_dataset_is_validation_error(self, tmp_path):
        assert main(["infer", "--dataset", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_corrupt_magic_is_format_error(self, tmp_path):
        out = tmp_path / "run"
        dataset = tmp_path / "dataset"
        config = tmp_path / "tiny.ini"
        config.write_text("[synth]\nduration = 3\nnoise_sigma_mm = 0\n")
        assert main(["synth", "--config", str(config), "--dataset",
                     str(dataset), "--out", str(out)]) == 0
        # corrupt one mask file's magic (infer reads masks for validation)
        victim = dataset / "view_0" / "irmask_00001.bin"
        data = bytearray(victim.read_bytes())
        data[:4] = b"ZZZZ"
        victim.write_bytes(bytes(data))
        assert main(["infer", "--config", str(config), "--dataset",
                     str(dataset), "--out", str(out)]) == 3

    def test_init_config(self, tmp_path):
        target = tmp_path / "cfg.ini"
        assert main(["init-config", "--out", str(target)]) == 0
        assert target.exists()
