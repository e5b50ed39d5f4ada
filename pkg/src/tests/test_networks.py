# src/tests/test_networks.py
import numpy as np
import pytest
from pydantic import ValidationError

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, UsageError
from src.networks import (
    ClassifierSpec, DiscriminatorSpec, GeneratorSpec, build_discriminator, build_generator, build_policy_classifier,
)


def _image(res=16, seed=0, batch=1):
    return np.random.default_rng(seed).uniform(-1, 1, size=(batch, 3, res, res)).astype(np.float32)


def test_parameter_counts():
    assert build_generator().num_parameters() == 305891
    assert build_discriminator().num_parameters() == 50385
    assert build_policy_classifier().num_parameters() == 295161


def test_generator_shape_range_and_determinism():
    x = _image()
    z = np.random.default_rng(1).standard_normal((1, 1, 16, 16)).astype(np.float32)
    a = build_generator(seed=5).forward(x, z=z).data
    b = build_generator(seed=5).forward(x, z=z).data
    assert a.shape == (1, 3, 16, 16)
    assert a.dtype == np.float32
    assert np.all(np.abs(a) <= 1.0)
    np.testing.assert_array_equal(a, b)


def test_generator_noise_changes_output():
    g = build_generator(seed=0)
    x = _image()
    a = g.forward(x, rng=np.random.default_rng(0)).data
    b = g.forward(x, rng=np.random.default_rng(1)).data
    assert not np.array_equal(a, b)


def test_generator_input_contract():
    g = build_generator()
    with pytest.raises(UsageError):
        g.forward(_image())
    with pytest.raises(ConfigError):
        g.forward(_image(res=12), rng=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        g.forward(np.zeros((1, 4, 16, 16), dtype=np.float32), rng=np.random.default_rng(0))


def test_generator_eval_uses_sample_statistics():
    g = build_generator(seed=2)
    x, z = _image(), np.zeros((1, 1, 16, 16), dtype=np.float32)
    train_out = g.train().forward(x, z=z).data
    eval_out = g.eval().forward(x, z=z).data
    np.testing.assert_allclose(train_out, eval_out, rtol=1e-5, atol=1e-6)


def test_generator_spec_validation():
    with pytest.raises(ValidationError):
        GeneratorSpec(skip_pairs=((0, 1),))
    with pytest.raises(ValidationError):
        GeneratorSpec(kernel_outer=6)
    assert GeneratorSpec().decoder_channels == [16, 32, 128]


def test_discriminator_output():
    d = build_discriminator(seed=1)
    out = d.score(_image(seed=1), _image(seed=2))
    assert out.shape == (1, 1, 1, 1)
    assert 0.0 < out.item() < 1.0
    with pytest.raises(ConfigError):
        d.forward(_image())


def test_discriminator_zero_head_is_half():
    d = build_discriminator(DiscriminatorSpec(zero_init_head=True))
    out = d.forward(np.concatenate([_image(batch=2), _image(seed=3, batch=2)], axis=1))
    np.testing.assert_allclose(out.data.reshape(-1), [0.5, 0.5])


def test_classifier_outputs():
    q = build_policy_classifier(seed=4)
    out = q.forward(_image(batch=2))
    assert out.probs.shape == (2, 9, 1, 1)
    np.testing.assert_allclose(out.probs.data.sum(axis=1).reshape(-1), [1.0, 1.0], rtol=1e-5)
    assert [b.shape for b in out.blocks] == [(2, 16, 8, 8), (2, 32, 4, 4), (2, 64, 2, 2), (2, 128, 1, 1)]
    assert out.features.shape == (2, ClassifierSpec().feature_dim, 1, 1)
    assert out.final_block is out.blocks[-1]
    assert q.predict_probs(_image()).shape == (1, 9)
    assert q.training


def test_classifier_spec_validation():
    with pytest.raises(ValidationError):
        ClassifierSpec(block_channels=(16, 32, 48, 96))
    with pytest.raises(ValidationError):
        ClassifierSpec(n_classes=1)


def test_same_seed_same_weights():
    a, b = build_policy_classifier(seed=9), build_policy_classifier(seed=9)
    for (name, pa), (_, pb) in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data, err_msg=name)
    c = build_policy_classifier(seed=10)
    assert not np.array_equal(a.params["block0.conv_a.weight"].data, c.params["block0.conv_a.weight"].data)


def test_zero_grad_clears_parameters():
    q = build_policy_classifier()
    out = q.forward(Tensor(_image()))
    ops.mean(out.logits).backward()
    assert q.params["head.weight"].grad is not None
    q.zero_grad()
    assert all(p.grad is None for _, p in q.parameters())
