import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TINY, random_images
from fedmae.config import RunConfig, build_scenario
from fedmae.errors import InvalidArgumentError
from fedmae.mae import ModelShape, grad, init_params, patchify
from fedmae.numeric import SeededRng
from fedmae.trainer import TrainerConfig, local_train, minibatch_plan


def theta0(shape=TINY, seed=0):
    return init_params(shape, SeededRng(seed, 11), 0.4)


def test_zero_learning_rate_gives_zero_delta():
    u = local_train(theta0(), random_images(5), TrainerConfig(1, 0.0, 4, 0.5), SeededRng(0), TINY)
    assert np.all(u.delta == 0.0)
    assert u.num_samples == 5 and len(u.loss_trace) == 1


def test_two_step_oracle():
    data = random_images(6)
    cfg = TrainerConfig(local_steps=2, lr=0.3, batch_size=6, mask_ratio=0.5)
    rng = SeededRng(4, 2)
    th = theta0()
    # masks and order are inputs to the oracle; it replays them by hand
    plan = minibatch_plan(6, TINY.num_patches, cfg, rng)
    ps = [patchify(s.pixels, 2) for s in data]
    batch0 = [(ps[i], m) for i, m in zip(*plan[0])]
    batch1 = [(ps[i], m) for i, m in zip(*plan[1])]
    g0 = grad(th, batch0, TINY)
    g1 = grad(th - 0.3 * g0, batch1, TINY)
    want = -0.3 * (g0 + g1)
    got = local_train(th, data, cfg, rng, TINY).delta
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)
    assert sorted(plan[0][0].tolist()) == list(range(6))


def test_deterministic_and_input_untouched():
    data = random_images(9)
    th = theta0()
    before = th.copy()
    cfg = TrainerConfig(3, 0.5, 4, 0.5)
    a = local_train(th, data, cfg, SeededRng(1, 5), TINY)
    b = local_train(th, data, cfg, SeededRng(1, 5), TINY)
    assert np.array_equal(th, before)
    assert a.delta.tobytes() == b.delta.tobytes()
    assert a.loss_trace == b.loss_trace


def test_empty_data_rejected():
    with pytest.raises(InvalidArgumentError):
        local_train(theta0(), [], TrainerConfig(), SeededRng(0), TINY)


@pytest.mark.parametrize("kw", [dict(local_steps=0), dict(lr=-1.0), dict(batch_size=0),
                                dict(mask_ratio=1.0)])
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        TrainerConfig(**kw)


def test_minibatches_cycle_without_replacement():
    cfg = TrainerConfig(local_steps=4, lr=1.0, batch_size=3, mask_ratio=0.5)
    plan = minibatch_plan(6, 4, cfg, SeededRng(0))
    first_epoch = np.concatenate([plan[0][0], plan[1][0]])
    assert sorted(first_epoch.tolist()) == list(range(6))
    assert np.array_equal(np.concatenate([plan[2][0], plan[3][0]]), first_epoch)
    assert len({m.tobytes() for _, ms in plan for m in ms}) > 1


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.floats(0.01, 2.0), st.integers(1, 8), st.integers(0, 2**31))
def test_delta_norm_bounded_by_step_norms(K, lr, bs, seed):
    data = random_images(5, seed=seed)
    u = local_train(theta0(seed=seed % 7), data, TrainerConfig(K, lr, bs, 0.5), SeededRng(seed), TINY)
    assert len(u.loss_trace) == K == len(u.grad_norms)
    assert np.linalg.norm(u.delta) <= K * lr * max(u.grad_norms) * (1 + 1e-12)


def test_delta_reproduces_final_parameters_exactly():
    data = random_images(7)
    cfg = TrainerConfig(3, 0.7, 7, 0.5)
    th = theta0()
    u = local_train(th, data, cfg, SeededRng(2), TINY)
    # replay the trainer's trajectory in absolute coordinates
    plan = minibatch_plan(7, TINY.num_patches, cfg, SeededRng(2))
    ps = [patchify(s.pixels, 2) for s in data]
    delta = np.zeros_like(th)
    for idx, masks in plan:
        delta = delta - 0.7 * grad(th + delta, [(ps[i], m) for i, m in zip(idx, masks)], TINY)
    assert np.array_equal(th + u.delta, th + delta)


def test_loss_trace_mostly_non_increasing_at_small_lr():
    sc = build_scenario(RunConfig())
    data = sc.shards[0]
    shape = ModelShape()
    trials = 50
    ok = 0
    for trial in range(trials):
        u = local_train(theta0(shape, trial), data, TrainerConfig(5, 1e-3, 32, 0.6),
                        SeededRng(trial, 1), shape)
        ok += all(b <= a for a, b in zip(u.loss_trace, u.loss_trace[1:]))
    assert ok >= 0.8 * trials, f"non-increasing in {ok}/{trials} trials"
