"""Dataset loading, preprocessing, and the synthetic stereo generator."""

import numpy as np
import pytest

from stereoforge.data import (LayerSpec, SceneSpec, StereoDataset, StereoPair,
                              disparity_tint, load_stereo_dir,
                              parse_scene_spec, preprocess,
                              preprocess_for_eval, sample_epoch_order,
                              synth_dataset, synth_stereo)


def make_pair(h=8, w=12, value=0.5):
    img = np.full((h, w, 3), value, dtype=np.float32)
    return StereoPair(left=img, right=img.copy(), id="p")


class TestContainers:
    def test_pair_rejects_mismatched_views(self):
        with pytest.raises(ValueError, match="differ"):
            StereoPair(left=np.zeros((4, 6, 3), dtype=np.float32),
                       right=np.zeros((4, 5, 3), dtype=np.float32))

    def test_dataset_is_an_ordered_sequence(self):
        pairs = [make_pair(value=v) for v in (0.1, 0.2, 0.3)]
        ds = StereoDataset(pairs)
        assert len(ds) == 3
        assert ds[1] is pairs[1]
        assert [p.left[0, 0, 0] for p in ds] == pytest.approx([0.1, 0.2, 0.3])


class TestEpochOrder:
    def test_is_a_permutation(self):
        order = sample_epoch_order(10, seed=3, stream=1, epoch=0)
        assert sorted(order) == list(range(10))

    def test_deterministic(self):
        a = sample_epoch_order(16, 5, 1, 2)
        b = sample_epoch_order(16, 5, 1, 2)
        np.testing.assert_array_equal(a, b)

    def test_epochs_reshuffle(self):
        a = sample_epoch_order(16, 5, 1, 0)
        b = sample_epoch_order(16, 5, 1, 1)
        assert not np.array_equal(a, b)


class TestLoadStereoDir:
    @pytest.fixture()
    def written(self, tmp_path, bench_spec):
        ds = synth_dataset(bench_spec, 3, seed=42, out_dir=tmp_path)
        return tmp_path, ds

    def test_roundtrip(self, written):
        root, original = written
        loaded = load_stereo_dir(root)
        assert len(loaded) == 3
        assert [p.id for p in loaded] == ["0000", "0001", "0002"]
        for got, src in zip(loaded, original):
            # views went through 8-bit quantization on disk
            np.testing.assert_allclose(got.left, src.left, atol=1.5 / 255)
            np.testing.assert_allclose(got.right, src.right, atol=1.5 / 255)
            np.testing.assert_array_equal(got.gt_disparity, src.gt_disparity)
            np.testing.assert_array_equal(got.holes, src.holes)

    def test_sidecars_are_optional(self, written, tmp_path):
        root, _ = written
        import shutil
        shutil.rmtree(root / "disp")
        shutil.rmtree(root / "holes")
        loaded = load_stereo_dir(root)
        assert all(p.gt_disparity is None and p.holes is None for p in loaded)

    def test_missing_view_directory(self, tmp_path):
        (tmp_path / "left").mkdir()
        with pytest.raises(FileNotFoundError, match="right"):
            load_stereo_dir(tmp_path)

    def test_unmatched_left_file(self, written):
        root, _ = written
        (root / "right" / "0001.png").unlink()
        with pytest.raises(ValueError, match="0001"):
            load_stereo_dir(root)

    def test_unmatched_right_file(self, written):
        root, _ = written
        (root / "left" / "0002.png").unlink()
        with pytest.raises(ValueError, match="0002"):
            load_stereo_dir(root)

    def test_empty_dataset(self, tmp_path):
        (tmp_path / "left").mkdir()
        (tmp_path / "right").mkdir()
        with pytest.raises(ValueError, match="empty"):
            load_stereo_dir(tmp_path)


class TestPreprocess:
    def test_output_dims(self, rng):
        pair = StereoPair(left=rng.random((40, 80, 3)).astype(np.float32),
                          right=rng.random((40, 80, 3)).astype(np.float32))
        out = preprocess(pair, resize_to=(72, 36), crop_to=(64, 32), rng=rng)
        assert out.left.shape == (32, 64, 3)
        assert out.right.shape == (32, 64, 3)

    def test_network_sized_input_is_untouched(self, rng):
        pair = StereoPair(left=rng.random((32, 64, 3)).astype(np.float32),
                          right=rng.random((32, 64, 3)).astype(np.float32))
        out = preprocess(pair, resize_to=(64, 32), crop_to=(64, 32))
        np.testing.assert_array_equal(out.left, pair.left)
        np.testing.assert_array_equal(out.right, pair.right)

    def test_crop_larger_than_resize(self, rng):
        pair = make_pair(40, 80)
        with pytest.raises(ValueError, match="exceeds"):
            preprocess(pair, resize_to=(60, 30), crop_to=(64, 32), rng=rng)

    def test_rng_required_for_strict_crop(self):
        pair = make_pair(40, 80)
        with pytest.raises(ValueError, match="rng"):
            preprocess(pair, resize_to=(72, 36), crop_to=(64, 32), rng=None)

    def test_views_crop_at_the_same_offset(self, rng):
        img = rng.random((40, 80, 3)).astype(np.float32)
        pair = StereoPair(left=img, right=img.copy())
        out = preprocess(pair, resize_to=(72, 36), crop_to=(64, 32), rng=rng)
        np.testing.assert_array_equal(out.left, out.right)

    def test_same_rng_same_crop(self, rng):
        pair = StereoPair(left=rng.random((40, 80, 3)).astype(np.float32),
                          right=rng.random((40, 80, 3)).astype(np.float32))
        a = preprocess(pair, (72, 36), (64, 32), np.random.default_rng(7))
        b = preprocess(pair, (72, 36), (64, 32), np.random.default_rng(7))
        np.testing.assert_array_equal(a.left, b.left)
        np.testing.assert_array_equal(a.right, b.right)

    def test_never_flips(self, rng):
        ramp = np.tile(np.linspace(0, 1, 80, dtype=np.float32)[None, :, None],
                       (40, 1, 3))
        pair = StereoPair(left=ramp, right=ramp.copy())
        out = preprocess(pair, resize_to=(72, 36), crop_to=(64, 32), rng=rng)
        cols = out.left[0, :, 0]
        assert np.all(np.diff(cols) > 0)
        spread = out.left.max(axis=0) - out.left.min(axis=0)
        assert spread.max() < 1e-6  # vertical structure preserved too

    def test_disparity_rescales_with_width(self, rng):
        disp = np.full((40, 80), 4.0, dtype=np.float32)
        pair = StereoPair(left=rng.random((40, 80, 3)).astype(np.float32),
                          right=rng.random((40, 80, 3)).astype(np.float32),
                          gt_disparity=disp,
                          holes=np.zeros((40, 80), dtype=bool))
        out = preprocess(pair, resize_to=(72, 36), crop_to=(64, 32), rng=rng)
        np.testing.assert_allclose(out.gt_disparity, 4.0 * 72 / 80, atol=1e-6)
        assert out.holes.shape == (32, 64)
        assert out.holes.dtype == bool

    def test_eval_variant_is_deterministic(self, rng):
        pair = StereoPair(left=rng.random((40, 80, 3)).astype(np.float32),
                          right=rng.random((40, 80, 3)).astype(np.float32))
        a = preprocess_for_eval(pair, (64, 32))
        b = preprocess_for_eval(pair, (64, 32))
        assert a.left.shape == (32, 64, 3)
        np.testing.assert_array_equal(a.left, b.left)


SPEC_TEXT = """
# benchmark family
width = 64
height = 32
seed = 9

layer.0.kind = noise
layer.0.disparity = -4..0
layer.0.scale = 10

layer.1.kind = stripes
layer.1.disparity = 4
layer.1.rect = random
layer.1.scale = 6

layer.2.kind = noise
layer.2.disparity = 5..8
layer.2.rect = 0.25,0.3,0.75,0.9
"""


class TestParseSceneSpec:
    def test_full_example(self):
        spec = parse_scene_spec(SPEC_TEXT)
        assert (spec.width, spec.height, spec.seed) == (64, 32, 9)
        assert len(spec.layers) == 3
        l0, l1, l2 = spec.layers
        assert (l0.kind, l0.disparity, l0.rect, l0.scale) == ("noise", (-4, 0), None, 10.0)
        assert (l1.kind, l1.disparity, l1.rect) == ("stripes", (4, 4), "random")
        assert l2.rect == (0.25, 0.3, 0.75, 0.9)
        assert l2.disparity == (5, 8)

    def test_empty_text_gives_defaults(self):
        spec = parse_scene_spec("")
        assert spec == SceneSpec()

    def test_full_keyword_rect(self):
        spec = parse_scene_spec("layer.0.kind = noise\nlayer.0.rect = full\n")
        assert spec.layers[0].rect is None

    @pytest.mark.parametrize("text,msg", [
        ("layer.1.kind = noise\n", "contiguous"),
        ("depth = 3\n", "unknown key"),
        ("layer.0.color = red\n", "unknown layer key"),
        ("layer.x.kind = noise\n", "bad layer key"),
        ("width 64\n", "key=value"),
        ("layer.0.rect = 0.1,0.2,0.3\n", "rect"),
        ("layer.0.rect = 0.5,0.2,0.1,0.9\n", "out of order"),
    ])
    def test_malformed_input(self, text, msg):
        with pytest.raises(ValueError, match=msg):
            parse_scene_spec(text)


class TestSpecValidation:
    def test_layer_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            LayerSpec(kind="plasma")

    def test_layer_rejects_empty_range(self):
        with pytest.raises(ValueError, match="empty"):
            LayerSpec(disparity=(3, 1))

    def test_layer_rejects_unrepresentable_disparity(self):
        with pytest.raises(ValueError, match="representable"):
            LayerSpec(disparity=(-16, 0))
        with pytest.raises(ValueError, match="representable"):
            LayerSpec(disparity=(0, 17))

    def test_layer_rejects_bad_scale(self):
        with pytest.raises(ValueError, match="scale"):
            LayerSpec(scale=0.0)

    def test_scene_rejects_tiny_dims(self):
        with pytest.raises(ValueError, match="4x4"):
            SceneSpec(width=2, height=32)

    def test_scene_requires_full_frame_background(self):
        with pytest.raises(ValueError, match="full-frame"):
            SceneSpec(layers=(LayerSpec(rect="random"),))

    def test_scene_requires_layers(self):
        with pytest.raises(ValueError, match="layer"):
            SceneSpec(layers=())


class TestSynthStereo:
    def test_deterministic_in_seed(self, bench_spec):
        a = synth_stereo(bench_spec)
        b = synth_stereo(bench_spec)
        np.testing.assert_array_equal(a.left, b.left)
        np.testing.assert_array_equal(a.right, b.right)
        np.testing.assert_array_equal(a.gt_disparity, b.gt_disparity)
        np.testing.assert_array_equal(a.holes, b.holes)

    def test_seed_changes_scene(self, bench_spec):
        from dataclasses import replace
        a = synth_stereo(bench_spec)
        b = synth_stereo(replace(bench_spec, seed=bench_spec.seed + 1))
        assert not np.array_equal(a.left, b.left)

    def test_shapes_and_ranges(self, bench_spec):
        p = synth_stereo(bench_spec)
        assert p.left.shape == p.right.shape == (32, 64, 3)
        assert p.left.dtype == p.right.dtype == np.float32
        assert p.gt_disparity.shape == (32, 64)
        assert p.holes.dtype == bool
        for img in (p.left, p.right):
            assert img.min() >= 0.0 and img.max() <= 1.0
        assert np.isfinite(p.gt_disparity).all()

    def test_foreground_draw_respects_depth_order(self):
        # the overlap forces the constrained draw up to bg + 1
        spec = SceneSpec(width=32, height=16, layers=(
            LayerSpec(kind="noise", disparity=(0, 0)),
            LayerSpec(kind="noise", disparity=(-3, 1), rect="random"),
        ), seed=5)
        p = synth_stereo(spec)
        assert set(np.unique(p.gt_disparity)) <= {0.0, 1.0}
        assert p.gt_disparity.max() == 1.0

    def test_impossible_ordering_is_an_error(self):
        spec = SceneSpec(width=32, height=16, layers=(
            LayerSpec(kind="noise", disparity=(5, 5)),
            LayerSpec(kind="noise", disparity=(0, 1), rect="random"),
        ), seed=5)
        with pytest.raises(ValueError, match="widen"):
            synth_stereo(spec)

    def test_right_view_is_the_exact_warp_off_holes(self, bench_spec):
        """Every non-hole right pixel equals the left pixel its disparity
        points at; this is the invariant the whole objective relies on."""
        from dataclasses import replace
        for seed in (0, 7, 123):
            p = synth_stereo(replace(bench_spec, seed=seed))
            h, w = p.gt_disparity.shape
            ys, xs = np.nonzero(~p.holes)
            src = xs - p.gt_disparity[ys, xs].astype(np.int64)
            assert src.min() >= 0 and src.max() < w
            np.testing.assert_array_equal(p.right[ys, xs], p.left[ys, src])

    def test_disparity_values_come_from_the_layers(self, bench_spec):
        p = synth_stereo(bench_spec)
        vals = set(np.unique(p.gt_disparity).astype(int))
        allowed = set(range(-4, 1)) | set(range(1, 7))
        assert vals <= allowed

    def test_holes_appear_with_a_foreground(self, bench_spec):
        found = False
        from dataclasses import replace
        for seed in range(10):
            if synth_stereo(replace(bench_spec, seed=seed)).holes.any():
                found = True
                break
        assert found


class TestDisparityTint:
    def test_gains_stay_in_working_band(self):
        for d in range(-15, 17):
            g = disparity_tint(d)
            assert g.shape == (3,)
            assert g.dtype == np.float32
            assert np.all(g >= 0.2) and np.all(g <= 1.0)

    def test_every_representable_disparity_is_identifiable(self):
        tints = np.stack([disparity_tint(d) for d in range(-8, 9)])
        diff = tints[:, None, :] - tints[None, :, :]
        dist = np.abs(diff).sum(axis=2)
        dist += np.eye(len(tints)) * 10
        assert dist.min() > 0.05

    def test_clamps_outside_the_sweep(self):
        np.testing.assert_array_equal(disparity_tint(-20), disparity_tint(-8))
        np.testing.assert_array_equal(disparity_tint(30), disparity_tint(8))


class TestSynthDataset:
    def test_count_and_ids(self, bench_spec):
        ds = synth_dataset(bench_spec, 4, seed=1)
        assert len(ds) == 4
        assert [p.id for p in ds] == ["0000", "0001", "0002", "0003"]

    def test_deterministic(self, bench_spec):
        a = synth_dataset(bench_spec, 3, seed=1)
        b = synth_dataset(bench_spec, 3, seed=1)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.left, pb.left)
            np.testing.assert_array_equal(pa.right, pb.right)

    def test_seed_argument_controls_draws(self, bench_spec):
        a = synth_dataset(bench_spec, 2, seed=1)
        b = synth_dataset(bench_spec, 2, seed=2)
        assert not np.array_equal(a[0].left, b[0].left)

    def test_scenes_differ_within_a_dataset(self, bench_spec):
        ds = synth_dataset(bench_spec, 2, seed=1)
        assert not np.array_equal(ds[0].left, ds[1].left)

    def test_rejects_empty_request(self, bench_spec):
        with pytest.raises(ValueError, match="count"):
            synth_dataset(bench_spec, 0)

    def test_writes_directory_layout(self, tmp_path, bench_spec):
        synth_dataset(bench_spec, 2, seed=3, out_dir=tmp_path)
        for sub, ext in (("left", ".png"), ("right", ".png"),
                         ("disp", ".npy"), ("holes", ".npy")):
            assert (tmp_path / sub / ("0000" + ext)).is_file()
            assert (tmp_path / sub / ("0001" + ext)).is_file()
