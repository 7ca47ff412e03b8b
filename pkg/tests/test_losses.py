import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sstage.autodiff import Tensor, grad_check, softmax
from sstage.data import Scene
from sstage.losses import ce_loss, min_error_mode, mode_errors, reg_loss_min, total_loss
from sstage.model import ForwardOutput, to_absolute


def scene_with(k=2, seed=0):
    rng = np.random.default_rng(seed)
    return Scene(0, list(range(k)), np.cumsum(rng.normal(0, 0.3, (k, 20, 2)), axis=1))


def gt_of(scene):
    return scene.future.transpose(1, 2, 0)  # [T, 2, K]


def brute_force_errors(pred, gt):
    M, T, _, K = pred.shape
    out = np.zeros((M, K))
    for m, k in itertools.product(range(M), range(K)):
        out[m, k] = math.sqrt(sum((pred[m, t, c, k] - gt[t, c, k]) ** 2 for t in range(T) for c in range(2)))
    return out


def test_single_mode_selects_zero():
    pred = np.random.default_rng(0).standard_normal((1, 12, 2, 3))
    assert np.array_equal(min_error_mode(pred, np.zeros((12, 2, 3))), [0, 0, 0])


def test_exact_mode_is_selected():
    gt = np.random.default_rng(1).standard_normal((12, 2, 2))
    pred = np.stack([gt + 1.0, gt])
    assert np.array_equal(min_error_mode(pred, gt), [1, 1])


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_min_error_mode_matches_exhaustive_scan(M, K, seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.standard_normal((M, 12, 2, K)), rng.standard_normal((12, 2, K))
    errs = brute_force_errors(pred, gt)
    expected = [min(range(M), key=lambda m: (errs[m, k], m)) for k in range(K)]
    assert min_error_mode(pred, gt).tolist() == expected
    assert reg_loss_min(pred, gt) == pytest.approx(sum(errs[expected[k], k] for k in range(K)), rel=1e-12)


def test_reg_loss_zero_when_a_mode_is_exact():
    gt = np.random.default_rng(2).standard_normal((12, 2, 3))
    pred = np.stack([gt + 0.5, gt])
    assert reg_loss_min(pred, gt) == 0.0


def test_reg_loss_constant_residual():
    gt = np.zeros((12, 2, 1))
    pred = np.broadcast_to(np.array([0.3, 0.4])[None, None, :, None], (1, 12, 2, 1))
    assert reg_loss_min(pred, gt) == pytest.approx(math.sqrt(3.0), abs=1e-12)


def test_per_step_policy():
    gt = np.zeros((12, 2, 1))
    pred = np.broadcast_to(np.array([0.3, 0.4])[None, None, :, None], (1, 12, 2, 1))
    assert mode_errors(pred, gt, "per_step")[0, 0] == pytest.approx(6.0)
    with pytest.raises(ValueError):
        mode_errors(pred, gt, "bogus")


@pytest.mark.parametrize("M, K", [(2, 1), (2, 4), (5, 3), (20, 2)])
def test_ce_uniform(M, K):
    probs = np.full((M, K), 1.0 / M)
    assert ce_loss(probs, np.zeros(K, dtype=int)) == pytest.approx(K * math.log(M), abs=1e-9)


def test_ce_single_agent_two_modes():
    assert ce_loss(np.full((2, 1), 0.5), [1]) == pytest.approx(0.6931, abs=1e-4)


def test_ce_certain_mode_is_zero():
    probs = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert ce_loss(probs, [1, 0]) == 0.0


@given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 10_000))
def test_ce_matches_one_hot_oracle(M, K, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(M), size=K).T
    m_min = rng.integers(0, M, K)
    onehot = np.eye(M)[m_min].T  # [M, K]
    expected = -np.sum(onehot * np.log(probs))
    assert ce_loss(probs, m_min) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_ce_clamps_zero_probability():
    assert ce_loss(np.array([[0.0], [1.0]]), [0]) == pytest.approx(-math.log(1e-12))


def _output(disp, logits):
    return ForwardOutput(disp, softmax(logits, 0))


def test_perfect_prediction_has_zero_loss():
    scene = scene_with()
    traj = scene.positions[:, 7:]
    disp = np.diff(traj, axis=1).transpose(1, 2, 0)[None]
    out = ForwardOutput(Tensor(disp, dtype=np.float64), Tensor(np.ones((1, 2)), dtype=np.float64))
    assert total_loss(out, scene).value == pytest.approx(0.0, abs=1e-12)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 1000))
def test_total_loss_nonnegative_and_consistent(M, K, seed):
    rng = np.random.default_rng(seed)
    scene = scene_with(K, seed)
    out = _output(Tensor(rng.standard_normal((M, 12, 2, K)), dtype=np.float64),
                  Tensor(rng.standard_normal((M, K)), dtype=np.float64))
    lb = total_loss(out, scene)
    assert lb.value >= 0
    pred = to_absolute(out.displacements.values, scene)
    assert np.array_equal(lb.m_min, min_error_mode(pred, gt_of(scene)))
    assert lb.l_reg_min == pytest.approx(reg_loss_min(pred, gt_of(scene)), rel=1e-12)
    assert lb.l_ce == pytest.approx(ce_loss(out.probs.values, lb.m_min), rel=1e-12)


def test_non_selected_modes_get_no_regression_gradient():
    rng = np.random.default_rng(4)
    scene = scene_with(3, 4)
    d = rng.standard_normal((4, 12, 2, 3))
    disp = Tensor(d, requires_grad=True, dtype=np.float64)
    lb = total_loss(ForwardOutput(disp, Tensor(np.full((4, 3), 0.25), dtype=np.float64)), scene)
    lb.total.backward()
    for k in range(3):
        for m in range(4):
            g = disp.grad[m, :, :, k]
            if m == lb.m_min[k]:
                assert np.abs(g).max() > 0
            else:
                assert not g.any()
                # numerically: nudging a non-selected mode leaves the loss unchanged
                h = 1e-6
                bumped = d.copy()
                bumped[m, 3, 0, k] += h
                out = ForwardOutput(Tensor(bumped, dtype=np.float64), Tensor(np.full((4, 3), 0.25), dtype=np.float64))
                assert total_loss(out, scene).value == lb.value


def test_loss_gradients_pass_finite_differences():
    rng = np.random.default_rng(5)
    scene = scene_with(2, 5)
    logits = Tensor(rng.standard_normal((3, 2)), dtype=np.float64)
    disp = Tensor(rng.standard_normal((3, 12, 2, 2)), dtype=np.float64)
    assert grad_check(lambda d: total_loss(_output(d, logits), scene).total, disp).max_rel_error < 1e-4
    assert grad_check(lambda z: total_loss(_output(disp, z), scene).total, logits).max_rel_error < 1e-4
