# src/tests/test_objective.py
import math

import numpy as np
import pytest

from src.autodiff.tensor import Tensor, backward
from src.errors import ConfigError, ShapeError, UsageError
from src.networks import DiscriminatorSpec, GeneratorSpec, build_discriminator, build_generator
from src.training.optimizer import OptimizerState, adam_step
from src.training.objective import (
    discriminator_objective, generator_adversarial, loss_cgan, loss_l1, loss_policy, loss_total,
)

LN2 = math.log(2.0)


def _pair(seed=0):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32))
    y = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32))
    return x, y


@pytest.fixture
def half_d():
    return build_discriminator(DiscriminatorSpec(zero_init_head=True))


def test_l1_known_value():
    y = Tensor(np.zeros((1, 3, 2, 2)))
    y_hat = Tensor(np.full((1, 3, 2, 2), 0.5))
    assert loss_l1(y, y_hat).item() == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        loss_l1(y, Tensor(np.zeros((1, 3, 4, 4))))


def test_policy_cross_entropy():
    uniform = np.full(9, 1.0 / 9.0)
    assert loss_policy(uniform, 3).item() == pytest.approx(math.log(9.0))
    confident = np.array([0.01] * 8 + [0.92])
    assert loss_policy(confident, 9).item() == pytest.approx(-math.log(0.92))
    for bad in (0, 10, True, 2.0):
        with pytest.raises(UsageError):
            loss_policy(uniform, bad)


def test_terms_at_half(half_d):
    x, y = _pair()
    y_hat = Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32))
    terms, g_adv = loss_cgan(half_d, x, y, y_hat)
    for t in (terms.real, terms.diff, terms.fake):
        assert t.item() == pytest.approx(-LN2, rel=1e-5)
    assert g_adv.item() == pytest.approx(LN2, rel=1e-5)
    assert generator_adversarial(half_d, x, y_hat, "generator_too").item() == pytest.approx(2 * LN2, rel=1e-5)


def test_total_breakdown(half_d):
    x, y = _pair()
    y_hat = Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32))
    terms, g_adv = loss_cgan(half_d, x, y, y_hat)
    l1 = loss_l1(y, y_hat)
    breakdown, total_g = loss_total(terms, g_adv, l1, w=100.0)
    assert breakdown.total_g == pytest.approx(LN2 + 100.0 * l1.item(), rel=1e-5)
    assert total_g.item() == pytest.approx(breakdown.total_g)
    assert breakdown.total_d == pytest.approx(3 * LN2, rel=1e-5)
    assert math.isnan(breakdown.policy_ce)
    assert set(breakdown.as_dict()) >= {"d_loss_real", "d_loss_diff", "d_loss_fake", "g_adv_loss", "l1_loss"}
    with pytest.raises(ConfigError):
        loss_total(terms, g_adv, l1, w=-1.0)


def test_zero_weight_drops_l1(half_d):
    x, y = _pair()
    terms, g_adv = loss_cgan(half_d, x, y, Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)))
    breakdown, _ = loss_total(terms, g_adv, loss_l1(y, x), w=0.0)
    assert breakdown.total_g == pytest.approx(breakdown.g_adv_loss)


def test_discriminator_objective_does_not_reach_generator():
    G = build_generator(seed=0)
    D = build_discriminator(seed=1)
    x, y = _pair()
    y_hat = G.forward(x, rng=np.random.default_rng(0))
    backward(-discriminator_objective(D, x, y, y_hat).objective())
    assert all(p.grad is None for _, p in G.parameters())
    assert D.params["head.weight"].grad is not None


def test_generator_step_reaches_generator():
    G = build_generator(seed=0)
    D = build_discriminator(seed=1)
    x, y = _pair()
    y_hat = G.forward(x, rng=np.random.default_rng(0))
    backward(generator_adversarial(D, x, y_hat) + loss_l1(y, y_hat) * 100.0)
    assert G.params["out.conv.weight"].grad is not None
    assert np.any(G.params["enc0.conv.weight"].grad != 0)


def test_unknown_wiring(half_d):
    x, _ = _pair()
    with pytest.raises(ConfigError):
        generator_adversarial(half_d, x, x, "both")


def test_terms_at_half_float64():
    d = build_discriminator(DiscriminatorSpec(zero_init_head=True), dtype=np.float64)
    rng = np.random.default_rng(3)
    x, y = (Tensor(rng.uniform(-1, 1, (1, 3, 16, 16))) for _ in range(2))
    y_hat = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
    terms, g_adv = loss_cgan(d, x, y, y_hat)
    for t in (terms.real, terms.diff, terms.fake):
        assert t.item() == pytest.approx(-LN2, rel=1e-9)
    assert g_adv.item() == pytest.approx(LN2, rel=1e-9)
    breakdown, _ = loss_total(terms, g_adv, loss_l1(y, y_hat), w=100.0)
    assert breakdown.total_d == pytest.approx(3 * LN2, rel=1e-9)


# -------------------------
# One optimiser step at a small learning rate
# -------------------------
SMALL_LR = 1e-6


def _small_nets():
    G = build_generator(GeneratorSpec(block_channels=(16, 8, 4)), seed=0, dtype=np.float64)
    D = build_discriminator(DiscriminatorSpec(block_channels=(16, 8, 4)), seed=1, dtype=np.float64)
    rng = np.random.default_rng(5)
    x, y = (Tensor(rng.uniform(-1, 1, (1, 3, 16, 16))) for _ in range(2))
    z = G.sample_noise(x.shape, rng)
    return G, D, x, y, z


def test_generator_step_does_not_increase_total_g():
    G, D, x, y, z = _small_nets()

    def total_g():
        y_hat = G.forward(x, z=z)
        terms, g_adv = loss_cgan(D, x, y, y_hat)
        return loss_total(terms, g_adv, loss_l1(y, y_hat), w=100.0)[1]

    before = total_g()
    backward(before)
    adam_step(G.parameters(), OptimizerState(0.5, 0.9), SMALL_LR)
    assert total_g().item() <= before.item()


def test_discriminator_step_does_not_decrease_its_objective():
    G, D, x, y, z = _small_nets()
    y_hat = G.forward(x, z=z).detach()

    def objective():
        return discriminator_objective(D, x, y, y_hat).objective()

    before = objective()
    backward(-before)
    adam_step(D.parameters(), OptimizerState(0.5, 0.9), SMALL_LR)
    assert objective().item() >= before.item()
