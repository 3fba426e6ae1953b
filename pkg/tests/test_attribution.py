import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionaudit.attribution import (DIM_FACTOR, AttributionError, AttributionMap, completeness_gap,
                                     integrated_gradients, overlay, resolve_target, saliency)
from lesionaudit.dataset import decode_ppm
from lesionaudit.engine import Tensor
from lesionaudit.models import ArchitectureSpec, Backbone, Conv2D, Dense, Flatten, MaxPool2D, build

LINEAR = ArchitectureSpec((1, 3, 3), (Flatten(),), "binary")
# per-pixel max |w| over channels: 0.5, 1.0, 0.0
W = np.array([[0.5, -0.2, 0.1], [0.0, -1.0, 0.3], [0.0, 0.0, 0.0]])


def _linear(w=W, b=0.25):
    params = build(LINEAR, 0)
    return params.replace({"classifier/kernel": Tensor(np.reshape(w, (9, 1))),
                           "classifier/bias": Tensor([b])})


SMALL_CNN = ArchitectureSpec((6, 8, 3), (Conv2D(4, activation="relu"), MaxPool2D(), Flatten(),
                                         Dense(8, activation="relu")), "sevenway")


class TestSaliency:
    def test_linear_model_map(self):
        amap = saliency(_linear(), LINEAR, np.ones((1, 3, 3)), target=1)
        np.testing.assert_allclose(amap.values, [[0.5, 1.0, 0.0]], atol=1e-7)
        assert amap.method == "saliency" and amap.target_class == 1

    def test_benign_target_has_same_magnitudes(self):
        a = saliency(_linear(), LINEAR, np.ones((1, 3, 3)), target=0).values
        np.testing.assert_allclose(a, [[0.5, 1.0, 0.0]], atol=1e-7)

    def test_zero_gradient_gives_zero_map(self):
        amap = saliency(_linear(np.zeros(9)), LINEAR, np.ones((1, 3, 3)), target=1)
        assert np.all(amap.values == 0)

    def test_cnn_map_in_unit_range(self):
        params = build(SMALL_CNN, 3)
        img = np.random.default_rng(0).random((6, 8, 3))
        amap = saliency(params, SMALL_CNN, img)
        assert amap.values.shape == (6, 8) and amap.values.max() == pytest.approx(1.0)
        assert amap.values.min() >= 0


class TestTargets:
    def test_argmax_matches_prediction(self):
        # bias pushes the sigmoid above 0.5 on a zero image
        assert resolve_target(_linear(b=2.0), LINEAR, np.zeros((1, 3, 3))) == 1
        assert resolve_target(_linear(b=-2.0), LINEAR, np.zeros((1, 3, 3))) == 0

    @pytest.mark.parametrize("target", [2, -1, "best"])
    def test_invalid(self, target):
        with pytest.raises(AttributionError):
            resolve_target(_linear(), LINEAR, np.zeros((1, 3, 3)), target)

    def test_image_shape_checked(self):
        with pytest.raises(AttributionError):
            saliency(_linear(), LINEAR, np.zeros((3, 3, 3)))

    def test_backbone_models_rejected(self):
        spec = ArchitectureSpec((8, 8, 3), (Backbone(16, 0), Dense(4)), "binary")
        with pytest.raises(AttributionError, match="pixel"):
            saliency(build(spec, 0), spec, np.zeros((8, 8, 3)))


class TestIntegratedGradients:
    @given(st.integers(1, 300), st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_linear_exactness_for_any_step_count(self, m, seed):
        rng = np.random.default_rng(seed)
        x, x0 = rng.random((1, 3, 3)), rng.random((1, 3, 3))
        res = integrated_gradients(_linear(), LINEAR, x, baseline=x0, target=1, steps=m)
        want = (x.astype(np.float32).astype(np.float64) - x0.astype(np.float32)) * W.reshape(1, 3, 3)
        np.testing.assert_allclose(res.attributions, want, atol=1e-6)

    def test_benign_target_negates(self):
        x = np.full((1, 3, 3), 0.5)
        a = integrated_gradients(_linear(), LINEAR, x, target=1, steps=4).attributions
        b = integrated_gradients(_linear(), LINEAR, x, target=0, steps=4).attributions
        np.testing.assert_allclose(a, -b)

    def test_completeness_improves_with_steps_on_cnn(self):
        params = build(SMALL_CNN, 1)
        img = np.random.default_rng(2).random((6, 8, 3))
        gaps = [completeness_gap(integrated_gradients(params, SMALL_CNN, img, target=3, steps=m)).value
                for m in (8, 64, 512)]
        assert gaps[-1] <= 0.01
        assert gaps[-1] <= gaps[0]

    def test_map_metadata(self):
        res = integrated_gradients(_linear(), LINEAR, np.ones((1, 3, 3)), target=1, steps=16)
        assert res.map.steps == 16 and res.map.baseline_ref == "zeros"
        assert res.map.method == "integrated_gradients"
        np.testing.assert_allclose(res.f_x - res.f_baseline, W.sum(), rtol=1e-6)

    @pytest.mark.parametrize("kwargs", [{"steps": 0}, {"baseline": np.zeros((3, 1, 3))}])
    def test_invalid(self, kwargs):
        with pytest.raises(AttributionError):
            integrated_gradients(_linear(), LINEAR, np.ones((1, 3, 3)), target=1, **kwargs)


class TestCompletenessGap:
    def test_relative(self):
        g = completeness_gap(np.array([0.5, 0.4]), f_x=2.0, f_x0=1.0)
        assert g.value == pytest.approx(0.1) and not g.absolute

    def test_absolute_when_scores_coincide(self):
        g = completeness_gap(np.array([0.2]), f_x=1.0, f_x0=1.0)
        assert g.absolute and g.value == pytest.approx(0.2)


class TestOverlay:
    def test_lower_quantile_cut(self):
        # lower rule on 0..99: cut at sorted index floor(0.9 * 99) = 89, so 89..99 survive
        values = np.arange(100, dtype=float).reshape(10, 10)
        img = np.full((10, 10, 3), 0.8)
        ov = overlay(img, values, q=0.9)
        assert ov.threshold == 89.0
        assert ov.mask.sum() == 11 and ov.mask[9].all() and ov.mask[8, 9]
        assert ov.pixels[0, 0, 0] == round(0.8 * DIM_FACTOR * 255)
        assert ov.pixels[9, 9, 0] == round(0.8 * 255)

    def test_uniform_map_keeps_everything(self):
        ov = overlay(np.ones((4, 4, 3)), np.ones((4, 4)), q=0.5)
        assert ov.mask.all()

    def test_writes_pixmap_and_sidecar(self, tmp_path):
        amap = AttributionMap(np.linspace(0, 1, 12).reshape(3, 4), "saliency", 2)
        ov = overlay(np.ones((3, 4, 3)), amap, q=0.75, path=tmp_path / "o.ppm", metadata={"sample_id": "S1"})
        assert np.array_equal(decode_ppm((tmp_path / "o.ppm").read_bytes()), ov.pixels)
        meta = json.loads((tmp_path / "o.json").read_text())
        assert meta["sample_id"] == "S1" and meta["method"] == "saliency" and meta["target_class"] == 2
        assert meta["kept_fraction"] == pytest.approx(ov.mask.mean())

    @pytest.mark.parametrize("q", [0.0, 1.0, 1.5])
    def test_bad_quantile(self, q):
        with pytest.raises(AttributionError):
            overlay(np.ones((2, 2, 3)), np.ones((2, 2)), q=q)

    def test_shape_mismatch(self):
        with pytest.raises(AttributionError):
            overlay(np.ones((2, 2, 3)), np.ones((3, 2)))
