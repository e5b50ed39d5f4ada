# src/tests/test_gradcam.py
import numpy as np
import pytest

from src.attention.gradcam import AttentionMap, color_ramp, gradcam_from_activations, gradcam_map, overlay
from src.errors import ConfigError, ShapeError, UsageError
from src.networks import build_policy_classifier
from src.utils.image_utils import to_uint8


def _image(seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32)


def test_map_peaks_at_the_hot_cell():
    acts = np.zeros((2, 4, 4))
    acts[0, 1, 2] = 5.0
    grads = np.stack([np.full((4, 4), 0.5), np.full((4, 4), -1.0)])
    values, all_zero = gradcam_from_activations(acts, grads, (16, 16))
    assert not all_zero
    assert values.shape == (16, 16)
    assert values.max() == pytest.approx(1.0)
    assert values.min() >= 0.0
    py, px = np.unravel_index(np.argmax(values), values.shape)
    assert 4 <= py < 8 and 8 <= px < 12


def test_negative_evidence_gives_all_zero():
    acts = np.ones((3, 2, 2))
    grads = -np.ones((3, 2, 2))
    values, all_zero = gradcam_from_activations(acts, grads, (8, 8))
    assert all_zero
    np.testing.assert_array_equal(values, np.zeros((8, 8)))


def test_mismatched_inputs():
    with pytest.raises(ShapeError):
        gradcam_from_activations(np.ones((2, 2, 2)), np.ones((3, 2, 2)), (4, 4))


def test_gradcam_map_on_classifier():
    q = build_policy_classifier(seed=1)
    amap = gradcam_map(q, _image())
    assert amap.values.shape == (16, 16)
    assert 0.0 <= amap.values.min() and amap.values.max() <= 1.0
    assert amap.source_class == int(np.argmax(amap.probs)) + 1
    assert amap.source_layer == "block3"
    assert amap.probs.sum() == pytest.approx(1.0, rel=1e-5)
    assert all(p.grad is None for _, p in q.parameters())


def test_gradcam_map_explicit_class_and_layer():
    q = build_policy_classifier(seed=1)
    amap = gradcam_map(q, _image(), class_id=9, layer=1)
    assert amap.source_class == 9
    assert amap.source_layer == "block1"
    with pytest.raises(UsageError):
        gradcam_map(q, _image(), class_id=10)
    with pytest.raises(ShapeError):
        gradcam_map(q, np.concatenate([_image(), _image(1)]))


def test_inside_outside_means():
    values = np.zeros((8, 8))
    values[2:4, 2:6] = 1.0
    amap = AttentionMap(values, 1, "block3")
    assert amap.mean_inside((2, 2, 6, 4)) == 1.0
    assert amap.mean_outside((2, 2, 6, 4)) == 0.0


def test_overlay_blends():
    image = _image()
    blank = AttentionMap(np.zeros((16, 16)), 1, "block3", all_zero=True)
    np.testing.assert_array_equal(overlay(image, blank), to_uint8(image))
    hot = AttentionMap(np.ones((16, 16)), 1, "block3")
    mixed = overlay(image, hot)
    assert mixed.dtype == np.uint8 and mixed.shape == (16, 16, 3)
    expected = np.rint(0.5 * to_uint8(image) + 0.5 * color_ramp(np.ones((16, 16)))).astype(np.uint8)
    np.testing.assert_array_equal(mixed, expected)
    with pytest.raises(ShapeError):
        overlay(image, AttentionMap(np.zeros((8, 8)), 1, "block3"))


def test_color_ramp_ends():
    ramp = color_ramp(np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(ramp[0, 0], [0.0, 0.0, 127.5])
    np.testing.assert_allclose(ramp[0, 1], [127.5, 0.0, 0.0])


def test_score_independent_gradients_give_zero_weights():
    acts = np.random.default_rng(0).uniform(0.1, 1.0, (3, 4, 4))
    values, all_zero = gradcam_from_activations(acts, np.zeros((3, 4, 4)), (4, 4))
    assert all_zero
    np.testing.assert_array_equal(values, np.zeros((4, 4)))
    # zero spatial mean gives alpha_k = 0 as well
    checker = np.indices((4, 4)).sum(axis=0) % 2 * 2.0 - 1.0
    values, all_zero = gradcam_from_activations(acts, np.stack([checker] * 3), (4, 4))
    assert all_zero


def test_single_channel_map_is_relu_of_activation():
    a = np.array([[1.0, -2.0, 0.5], [3.0, -0.5, 0.0], [-1.0, 2.0, 1.5]])
    values, all_zero = gradcam_from_activations(a[None], np.full((1, 3, 3), 2.0), (3, 3))
    assert not all_zero
    relu = np.maximum(a, 0.0)
    np.testing.assert_allclose(values, relu / relu.max(), atol=1e-12)


@pytest.mark.parametrize("training", [True, False])
def test_gradcam_map_restores_mode(training):
    q = build_policy_classifier(seed=1)
    if not training:
        q.eval()
    gradcam_map(q, _image())
    assert q.training is training
    with pytest.raises(UsageError):
        gradcam_map(q, _image(), class_id=0)
    assert q.training is training


def test_gradcam_layer_out_of_range():
    q = build_policy_classifier(seed=1)
    assert gradcam_map(q, _image(), layer=-4).source_layer == "block0"
    with pytest.raises(ConfigError, match="gradcam_layer"):
        gradcam_map(q, _image(), layer=4)
