import numpy as np
import pytest

from harlens import introspect, models
from harlens.data import ActivityLabel, LabeledDataset
from harlens.introspect import (feature_maps, sample_windows_per_activity,
                                aggregate, render_heatmap, to_grayscale,
                                write_pgm, read_pgm, write_png, FeatureMap,
                                export_feature_maps)


class TestFeatureMaps:
    def test_depth3_layer3_shape(self, small_cnn, synth_splits):
        _, test_std = synth_splits
        fmap = feature_maps(small_cnn, test_std.windows[0], 3)
        assert fmap.activations.shape == (5, 9, 50)

    def test_shape_trace_per_layer(self, small_cnn, synth_splits):
        _, test_std = synth_splits
        for layer, t_expected in zip((1, 2, 3), (43, 15, 5)):
            fmap = feature_maps(small_cnn, test_std.windows[0], layer)
            assert fmap.activations.shape == (t_expected, 9, 50)

    def test_nonnegative_after_relu_pool(self, small_cnn, synth_splits):
        _, test_std = synth_splits
        fmap = feature_maps(small_cnn, test_std.windows[0], 1)
        assert np.all(fmap.activations >= 0)

    def test_zero_window_is_column_uniform(self, small_cnn):
        fmap = feature_maps(small_cnn, np.zeros((128, 9)), 1)
        # constant input: each filter's map is constant across columns
        acts = fmap.activations
        assert np.allclose(acts, acts[:, :1, :], atol=1e-12)

    def test_capture_transparency(self, small_cnn, synth_splits):
        _, test_std = synth_splits
        w = test_std.windows[0]
        _, probs_before = models.predict(small_cnn, w)
        feature_maps(small_cnn, w, 2)
        _, probs_after = models.predict(small_cnn, w)
        assert np.array_equal(probs_before, probs_after)

    def test_determinism(self, small_cnn, synth_splits):
        _, test_std = synth_splits
        a = feature_maps(small_cnn, test_std.windows[3], 2)
        b = feature_maps(small_cnn, test_std.windows[3], 2)
        assert np.array_equal(a.activations, b.activations)

    def test_layer_index_out_of_range(self, small_cnn, synth_splits):
        _, test_std = synth_splits
        with pytest.raises(ValueError):
            feature_maps(small_cnn, test_std.windows[0], 4)


class TestSampling:
    def test_six_per_class(self, synth_splits):
        _, test_std = synth_splits
        sampled = sample_windows_per_activity(test_std, 6, seed=1)
        assert len(sampled) == 6
        ids = [i for v in sampled.values() for i in v]
        assert len(ids) == 36 and len(set(ids)) == 36
        for label, picked in sampled.items():
            assert all(test_std.labels[i] == label.value for i in picked)

    def test_one_per_class(self, synth_splits):
        _, test_std = synth_splits
        sampled = sample_windows_per_activity(test_std, 1, seed=1)
        assert sum(len(v) for v in sampled.values()) == 6

    def test_seed_determinism(self, synth_splits):
        _, test_std = synth_splits
        a = sample_windows_per_activity(test_std, 3, seed=9)
        b = sample_windows_per_activity(test_std, 3, seed=9)
        assert a == b

    def test_too_few_windows(self, synth_splits):
        _, test_std = synth_splits
        with pytest.raises(ValueError):
            sample_windows_per_activity(test_std, 11, seed=0)


class TestRendering:
    def test_constant_map_renders_mid_gray(self):
        fmap = FeatureMap(layer_index=1, activations=np.full((5, 9, 3), 2.0))
        img = render_heatmap(fmap, "meanabs", scale=1)
        assert np.all(img == 128)

    def test_bright_stripe_placement(self):
        acts = np.zeros((5, 9, 3))
        acts[:, 6, :] = 4.0
        img = render_heatmap(FeatureMap(1, acts), "meanabs", scale=1)
        assert np.all(img[:, 6] == 255)
        assert np.all(np.delete(img, 6, axis=1) == 0)

    def test_meanabs_matches_direct_mean(self):
        rng = np.random.default_rng(0)
        acts = rng.standard_normal((4, 9, 7))
        panel = aggregate(FeatureMap(1, acts), "meanabs")
        assert np.max(np.abs(panel - np.abs(acts).mean(axis=2))) < 1e-12

    def test_image_dimensions_scale(self):
        acts = np.random.default_rng(1).standard_normal((5, 9, 3))
        img = render_heatmap(FeatureMap(1, acts), "meanabs", scale=8)
        assert img.shape == (40, 72)

    def test_perfiltergrid_dimensions(self):
        acts = np.random.default_rng(2).standard_normal((5, 9, 50))
        img = render_heatmap(FeatureMap(1, acts), "perfiltergrid", scale=1)
        # 50 filters tile on an 8-wide grid (ceil(sqrt(50))=8), 7 rows
        assert img.shape == (7 * 5, 8 * 9)

    def test_unknown_aggregation(self):
        with pytest.raises(ValueError):
            aggregate(FeatureMap(1, np.zeros((2, 2, 2))), "wat")


class TestImageFiles:
    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(3).integers(0, 256, size=(12, 20)).astype(np.uint8)
        write_pgm(img, tmp_path / "x.pgm")
        assert np.array_equal(read_pgm(tmp_path / "x.pgm"), img)

    def test_png_readable(self, tmp_path):
        from PIL import Image
        img = np.random.default_rng(4).integers(0, 256, size=(8, 8)).astype(np.uint8)
        write_png(img, tmp_path / "x.png")
        loaded = np.asarray(Image.open(tmp_path / "x.png"))
        assert np.array_equal(loaded, img)

    def test_export_counts(self, small_cnn, synth_splits, tmp_path):
        _, test_std = synth_splits
        written = export_feature_maps(small_cnn, test_std, layers=[1, 2, 3],
                                      per_class=1, seed=5, out_dir=tmp_path,
                                      formats=("pgm",))
        # 6 classes x 1 window x 3 layers
        assert len(written) == 18
        assert all(p.suffix == ".pgm" for p in written)
