import json
import os

import numpy as np
import pytest

from stereosparse.core.errors import DomainError
from stereosparse.data.kitti import LabelParseError, load_kitti_labels, parse_kitti_labels
from stereosparse.data.manifest import (
    MANIFEST_NAME, SYNTH_SEED_STRIDE, ManifestError, load_manifest, materialize_synthetic, parse_manifest,
)
from stereosparse.data.ppm import PPMParseError, parse_ppm, read_ppm, save_ppm, write_ppm
from stereosparse.data.preprocess import preprocess, stack_views, window_labels
from stereosparse.data.synth import GenerationError, recover_disparity, synth_scene
from stereosparse.models.data import BoundingBox, StereoClip, SynthParams
from stereosparse.utils.sten import read_sten

KITTI_TEXT = """Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
Van 0.00 1 1.90 100.00 150.00 200.00 250.00 2.00 1.90 4.50 -8.00 1.80 20.00 1.50
Truck 0.50 2 0.10 0.00 0.00 1241.00 374.00 3.00 2.50 9.00 0.00 1.00 30.00 0.00
"""

def box(left, top, right, bottom, cls="Car"):
    return BoundingBox(cls, left, top, right, bottom)

def test_ppm_round_trip(rng, temp_dir):
    image = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    np.testing.assert_array_equal(parse_ppm(write_ppm(image)), image)
    path = os.path.join(temp_dir, "frame.ppm")
    save_ppm(path, image)
    np.testing.assert_array_equal(read_ppm(path), image)

def test_ppm_header_comments():
    pixels = bytes(range(12))
    data = b"P6\n# a comment\n2 # width done\n2\n255\n" + pixels
    np.testing.assert_array_equal(parse_ppm(data).ravel(), list(range(12)))

def test_ppm_errors_name_offsets():
    with pytest.raises(PPMParseError, match="byte 0"):
        parse_ppm(b"P5\n1 1\n255\n\x00")
    with pytest.raises(PPMParseError, match="maxval"):
        parse_ppm(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(PPMParseError, match="truncated"):
        parse_ppm(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(PPMParseError, match="width"):
        parse_ppm(b"P6\nx 2\n255\n")

def test_parse_kitti_keeps_vehicles_only():
    boxes = parse_kitti_labels(KITTI_TEXT)
    assert [b.class_name for b in boxes] == ["Car", "Van", "Truck"]
    assert boxes[0].as_tuple() == pytest.approx((587.01, 173.33, 614.12, 200.12))

def test_parse_kitti_errors_name_lines(temp_dir):
    with pytest.raises(LabelParseError, match="line 2"):
        parse_kitti_labels(KITTI_TEXT.splitlines()[0] + "\nCar 0 0 0 1 2 3\n")
    with pytest.raises(LabelParseError, match="line 1"):
        parse_kitti_labels("Car 0.00 0 -1.58 abc 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n")
    with pytest.raises(LabelParseError, match="line 1"):
        parse_kitti_labels("Car 0.00 0 -1.58 600 173.33 590 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n")
    path = os.path.join(temp_dir, "000000.txt")
    with open(path, "w") as f:
        f.write(KITTI_TEXT)
    assert len(load_kitti_labels(path)) == 3

def test_bounding_box_scaling_and_clamping():
    b = box(-10, 5, 300, 70).clamped(256, 64)
    assert b.as_tuple() == (0, 5, 256, 64)
    assert box(300, 10, 320, 20).clamped(256, 64) is None
    assert box(100, 40, 200, 60).scaled(0.5, 0.25).as_tuple() == (50, 10, 100, 15)
    with pytest.raises(DomainError):
        box(10, 10, 5, 20)

def test_window_labels_examples():
    assert not window_labels([]).any()
    assert window_labels([]).shape == (4, 8)
    exact = window_labels([box(0, 0, 32, 16)])
    assert exact[0, 0] == 1 and exact.sum() == 1
    labels = window_labels([box(30, 10, 40, 20)])
    assert {tuple(i) for i in np.argwhere(labels)} == {(0, 0), (0, 1), (1, 0), (1, 1)}

def test_window_labels_match_interval_oracle(rng):
    for _ in range(1000):
        boxes = []
        for _ in range(int(rng.integers(0, 4))):
            x0, y0 = rng.uniform(0, 250), rng.uniform(0, 60)
            boxes.append(box(x0, y0, min(x0 + rng.uniform(0.5, 80), 256), min(y0 + rng.uniform(0.5, 30), 64)))
        expected = np.zeros((4, 8))
        for r in range(4):
            for c in range(8):
                for b in boxes:
                    dy = min(b.bottom, 16 * r + 16) - max(b.top, 16 * r)
                    dx = min(b.right, 32 * c + 32) - max(b.left, 32 * c)
                    if dy > 0 and dx > 0:
                        expected[r, c] = 1
        np.testing.assert_array_equal(window_labels(boxes), expected)

def test_preprocess_normalizes_and_rescales(rng):
    left = rng.integers(0, 256, size=(3, 128, 512, 3)).astype(np.uint8)
    right = rng.integers(0, 256, size=(3, 128, 512, 3)).astype(np.uint8)
    example = preprocess(StereoClip(left, right), [box(0, 0, 64, 32)], {"id": "clip-1"})
    assert example.input.shape == (3, 64, 256, 6)
    assert abs(example.input.mean()) <= 1e-4
    assert abs(example.input.std() - 1.0) <= 1e-3
    assert example.labels.shape == (4, 8)
    assert example.labels[0, 0] == 1 and example.labels.sum() == 1
    assert example.id == "clip-1"
    assert example.meta["scale"] == [0.5, 0.5]
    assert stack_views(StereoClip(left, right)).shape == (3, 128, 512, 6)

def test_preprocess_constant_clip_is_flagged():
    frames = np.full((3, 64, 256, 3), 9, dtype=np.uint8)
    example = preprocess(StereoClip(frames, frames), [])
    assert example.meta["degenerate"] is True
    np.testing.assert_allclose(example.input, 0.0)

def test_synth_scene_is_deterministic():
    params = SynthParams(n_objects=2)
    a, b = synth_scene(5, params), synth_scene(5, params)
    np.testing.assert_array_equal(a.clip.left, b.clip.left)
    np.testing.assert_array_equal(a.clip.right, b.clip.right)
    assert [x.as_tuple() for x in a.boxes] == [x.as_tuple() for x in b.boxes]
    assert a.clip.left.shape == (3, 64, 256, 3)
    assert not np.array_equal(a.clip.left, synth_scene(6, params).clip.left)

def test_synth_disparity_is_recoverable():
    params = SynthParams(n_objects=1, noise=0.0, disparity_levels=(7,))
    for seed in range(5):
        scene = synth_scene(seed, params)
        (b,) = scene.boxes
        assert scene.object_disparities == [7]
        found = recover_disparity(scene.clip.left[-1], scene.clip.right[-1], b, 16)
        assert abs(found - 7) <= 1
        assert np.all(scene.disparity[int(b.top):int(b.bottom), int(b.left):int(b.right)] == 7)

def test_synth_velocity_scales_with_disparity():
    params = SynthParams(n_objects=1, noise=0.0, disparity_levels=(10,), velocity_gain=0.5)
    scene = synth_scene(3, params)
    (b,) = scene.boxes
    rows = slice(int(b.top), int(b.bottom))
    last = scene.clip.left[-1, rows].astype(float)
    first = scene.clip.left[0, rows].astype(float)
    # with velocity 5 px/frame the object is displaced by 10 px over the clip
    shifts = [np.sum((np.roll(first, s, axis=1) - last)[:, int(b.left):int(b.right)] ** 2) for s in (-10, 10)]
    assert min(shifts) == 0

def test_synth_generation_error():
    params = SynthParams(n_objects=20, object_height=(60, 64), object_width=(200, 250))
    with pytest.raises(GenerationError, match="could not place"):
        synth_scene(1, params)

def test_materialize_synthetic_and_load(temp_dir):
    params = SynthParams(n_objects=1)
    manifest = materialize_synthetic(temp_dir, 2, 1, seed=4, params=params)
    assert os.path.basename(manifest) == MANIFEST_NAME
    dataset = load_manifest(manifest)
    assert dataset.ids == ["train-000000", "train-000001", "test-000002"]
    assert len(dataset.split("train")) == 2 and len(dataset.split("test")) == 1
    example = dataset[2]
    assert example.input.shape == (3, 64, 256, 6)
    assert example.meta["split"] == "test"
    assert example.labels.shape == (4, 8)
    scene = synth_scene(4 * SYNTH_SEED_STRIDE + 2, params)
    direct = preprocess(scene.clip, scene.boxes)
    np.testing.assert_allclose(example.input, direct.input, atol=1e-5)
    np.testing.assert_array_equal(example.labels, direct.labels)
    assert dataset.disparities()[2].shape == (64, 256)
    assert read_sten(os.path.join(temp_dir, "disparity", "test-000002.sten")).shape == (64, 256)

def test_manifest_inline_synthetic_entries(temp_dir):
    entry = {"id": "s0", "split": "train", "input": {"synth": {"seed": 9, "n_objects": 1}}}
    dataset = parse_manifest(json.dumps(entry) + "\n", temp_dir)
    example = dataset.examples()[0]
    assert example.labels.shape == (4, 8)
    assert dataset.disparities()[0].shape == (64, 256)
    shuffled = parse_manifest("\n".join(json.dumps(dict(entry, id=f"s{i}")) for i in range(5)), temp_dir).shuffled(1)
    assert sorted(shuffled.ids) == [f"s{i}" for i in range(5)]

def test_manifest_errors_name_lines(temp_dir):
    with pytest.raises(ManifestError, match="line 2"):
        parse_manifest('{"id": "a", "input": {"synth": {"seed": 1}}}\nnot json\n', temp_dir)
    with pytest.raises(ManifestError, match="line 1"):
        parse_manifest('{"input": "x.sten"}\n', temp_dir)
    with pytest.raises(ManifestError, match="missing input file"):
        parse_manifest('{"id": "a", "input": "absent.sten", "labels": [[0]]}\n', temp_dir)
    with pytest.raises(ManifestError, match="duplicate id"):
        parse_manifest('{"id": "a", "input": {"synth": {"seed": 1}}}\n{"id": "a", "input": {"synth": {"seed": 2}}}\n',
                       temp_dir)
    with pytest.raises(ManifestError, match="line 2: duplicate id '1'"):
        parse_manifest('{"id": 1, "input": {"synth": {"seed": 1}}}\n{"id": "1", "input": {"synth": {"seed": 2}}}\n',
                       temp_dir)
    with pytest.raises(ManifestError, match="cannot read manifest"):
        load_manifest(os.path.join(temp_dir, "nothing.jsonl"))

def test_sten_manifest_labels(sten_manifest):
    dataset = load_manifest(sten_manifest(), workers=2)
    assert len(dataset) == 6
    example = dataset.split("train")[1]
    assert example.input.shape == (3, 16, 64, 6)
    np.testing.assert_array_equal(example.labels, [[0, 1]])
    assert dataset.disparities()[0] is None
