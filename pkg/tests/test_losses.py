import math

import numpy as np
import pytest

from duotask import tensor as T
from duotask.losses import (CtcInfeasibleError, LossWeights, aam_softmax_loss,
                            combine, ctc_loss, ctc_required_frames)
from duotask.oracles import ctc_loss_enumeration


def uniform_logprobs(T_, V):
    return np.full((T_, V), -np.log(V))


def test_ctc_single_frame_single_path():
    loss = ctc_loss(T.Tensor(uniform_logprobs(1, 2)), [1], [[1]])
    assert abs(loss.item() - math.log(2.0)) < 1e-12


def test_ctc_two_frames_three_paths():
    loss = ctc_loss(T.Tensor(uniform_logprobs(2, 2)), [2], [[1]])
    assert abs(loss.item() - 0.2876820724517809) < 1e-12


def test_ctc_matches_enumeration_oracle():
    rng = np.random.default_rng(21)
    checked = 0
    for _ in range(150):
        T_ = int(rng.integers(1, 7))
        V = int(rng.integers(2, 5))
        y = list(rng.integers(1, V, size=int(rng.integers(0, 4))))
        if ctc_required_frames(y) > T_:
            continue
        logits = rng.normal(size=(T_, V))
        lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
        mine = ctc_loss(T.Tensor(lp), [T_], [y]).item()
        ref = ctc_loss_enumeration(lp, y)
        assert abs(mine - ref) < 1e-9, (T_, V, y)
        checked += 1
    assert checked > 80


def test_ctc_batch_equals_mean_of_singles():
    rng = np.random.default_rng(22)
    lp1 = rng.normal(size=(6, 4))
    lp2 = rng.normal(size=(4, 4))
    lp1 -= np.log(np.exp(lp1).sum(-1, keepdims=True))
    lp2 -= np.log(np.exp(lp2).sum(-1, keepdims=True))
    padded = np.full((2, 6, 4), -1e9)
    padded[0] = lp1
    padded[1, :4] = lp2
    batch = ctc_loss(T.Tensor(padded), [6, 4], [[1, 2], [3]]).item()
    singles = (ctc_loss(T.Tensor(lp1), [6], [[1, 2]]).item()
               + ctc_loss(T.Tensor(lp2), [4], [[3]]).item()) / 2
    assert abs(batch - singles) < 1e-12


def test_ctc_probability_bounded():
    rng = np.random.default_rng(23)
    for _ in range(20):
        logits = rng.normal(size=(5, 3))
        lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
        loss = ctc_loss(T.Tensor(lp), [5], [[1, 2]]).item()
        assert 0.0 < math.exp(-loss) <= 1.0


def test_ctc_gradient_vs_finite_difference():
    rng = np.random.default_rng(24)
    logits = T.parameter(rng.normal(size=(2, 6, 4)))

    def f():
        return ctc_loss(T.log_softmax(logits, axis=-1), [6, 5], [[1, 2, 1], [3]])

    assert T.finite_diff_check(f, [logits]) < 1e-5


def test_ctc_rejects_blank_in_target():
    with pytest.raises(ValueError, match="blank"):
        ctc_loss(T.Tensor(uniform_logprobs(4, 3)), [4], [[0, 1]])


def test_ctc_rejects_infeasible_target():
    with pytest.raises(CtcInfeasibleError, match="frames"):
        ctc_loss(T.Tensor(uniform_logprobs(2, 3)), [2], [[1, 1]])
    with pytest.raises(CtcInfeasibleError):
        ctc_loss(T.Tensor(uniform_logprobs(1, 3)), [1], [[1, 2]])


def test_ctc_required_frames():
    assert ctc_required_frames([1, 2, 3]) == 3
    assert ctc_required_frames([1, 1]) == 3
    assert ctc_required_frames([]) == 0


def test_ctc_rejects_frame_length_beyond_rows():
    with pytest.raises(ValueError, match="frame length"):
        ctc_loss(T.Tensor(uniform_logprobs(3, 3)), [5], [[1]])


def test_aam_margin_zero_scale_one_is_cross_entropy():
    rng = np.random.default_rng(25)
    z = T.Tensor(rng.uniform(-1, 1, size=(4, 5)))
    tgt = np.array([1, 0, 3, 2])
    loss = aam_softmax_loss(z, tgt, scale=1.0, margin=0.0).item()
    ls = T.log_softmax(z, axis=-1).data
    ce = -np.mean(ls[np.arange(4), tgt])
    assert abs(loss - ce) < 1e-12


def test_aam_perfect_cosine_target_logit():
    # cos(theta)=1 with s=30, m=0.2: the adjusted target logit is 30*cos(0.2)
    z = np.array([[1.0, 0.2, -0.4]])
    loss = aam_softmax_loss(T.Tensor(z), np.array([0]), scale=30.0, margin=0.2).item()
    adjusted = np.array([30.0 * math.cos(0.2), 30.0 * 0.2, 30.0 * -0.4])
    expected = -(adjusted[0] - np.log(np.exp(adjusted).sum()))
    assert abs(loss - expected) < 1e-10


def test_aam_monotone_in_margin():
    rng = np.random.default_rng(26)
    z = T.Tensor(rng.uniform(-0.99, 0.99, size=(6, 8)))
    tgt = rng.integers(0, 8, size=6)
    prev = -math.inf
    for m in (0.0, 0.1, 0.2, 0.3):
        value = aam_softmax_loss(z, tgt, scale=30.0, margin=m).item()
        assert value >= prev
        prev = value


def test_aam_stability_fallback_branch():
    z = np.array([[-0.999, 0.5]])
    loss = aam_softmax_loss(T.Tensor(z), np.array([0]), scale=30.0, margin=0.2).item()
    fallback = -0.999 - 0.2 * math.sin(0.2)
    adjusted = np.array([30.0 * fallback, 30.0 * 0.5])
    expected = -(adjusted[0] - np.log(np.exp(adjusted).sum()))
    assert abs(loss - expected) < 1e-10


def test_aam_rejects_unnormalized():
    with pytest.raises(ValueError, match="un-normalized"):
        aam_softmax_loss(T.Tensor([[1.5, 0.0]]), np.array([0]))


def test_aam_rejects_bad_target():
    with pytest.raises(ValueError):
        aam_softmax_loss(T.Tensor([[0.5, 0.0]]), np.array([2]))


def test_aam_gradient():
    # s=30 makes softmax tails tiny; coordinates with near-zero true gradient
    # inflate the relative metric with fd noise, so check at moderate scale
    # at 1e-6 and at the paper scale with a looser bar
    rng = np.random.default_rng(27)
    z = T.parameter(rng.uniform(-0.9, 0.9, size=(3, 5)))
    tgt = np.array([0, 2, 4])
    err = T.finite_diff_check(lambda: aam_softmax_loss(z, tgt, scale=4.0, margin=0.2), [z])
    assert err < 1e-6
    err30 = T.finite_diff_check(
        lambda: aam_softmax_loss(z, tgt, scale=30.0, margin=0.2), [z], eps=3e-4)
    assert err30 < 1e-3


def test_weights_validation():
    LossWeights(0.9, 0.1)
    with pytest.raises(ValueError):
        LossWeights(0.9, 0.2)
    with pytest.raises(ValueError):
        LossWeights(-0.1, 1.1)


def test_combine_arithmetic():
    total, report = combine(T.Tensor(2.0), T.Tensor(4.0), LossWeights(0.5, 0.5), 7)
    assert report.total == 3.0
    assert report.speech == 2.0 and report.speaker == 4.0 and report.iteration == 7
    assert abs(report.total - (0.5 * report.speech + 0.5 * report.speaker)) < 1e-12


def test_combine_single_task_boundary():
    total, report = combine(T.Tensor(5.0), None, LossWeights(1.0, 0.0))
    assert report.total == 5.0 and report.speaker is None


def test_combine_gradient_is_weight_exactly():
    ls = T.parameter(2.0)
    lk = T.parameter(3.0)
    total, _ = combine(ls, lk, LossWeights(0.9, 0.1))
    total.backward()
    assert float(ls.grad) == 0.9
    assert abs(float(lk.grad) - 0.1) < 1e-17


def test_combine_rejects_nan():
    with pytest.raises(ValueError, match="NaN"):
        combine(T.Tensor(float("nan")), T.Tensor(1.0), LossWeights(0.5, 0.5))
