import numpy as np
import pytest

from mlalt import tensor as T
from mlalt.errors import ConfigError, ContractError, InfeasibleAlignmentError
from mlalt.gradcheck import grad_check
from mlalt.losses import (LossWeights, combined_loss, combined_loss_selfcond, ctc_forward_backward, ctc_loss,
                          ctc_loss_batch, ctc_min_frames, kl_s2s_loss, kl_s2s_loss_batch, lang_ce_loss, mix,
                          smoothed_targets)
from mlalt.tensor import Tensor

from oracles import ctc_paths_logsum


def random_lp(rng, t, n):
    return T.log_softmax(Tensor(rng.standard_normal((t, n)))).data


def test_ctc_single_frame():
    lp = np.log(np.array([[0.3, 0.7]]))
    assert ctc_loss(Tensor(lp), [1]).item() == pytest.approx(-np.log(0.7))


def test_ctc_two_frames_three_paths():
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    expected = -np.log(p[0, 1] * p[1, 1] + p[0, 0] * p[1, 1] + p[0, 1] * p[1, 0])
    assert ctc_loss(Tensor(np.log(p)), [1]).item() == pytest.approx(expected, abs=1e-12)


def test_ctc_matches_enumeration(rng):
    for _ in range(200):
        t, n = rng.integers(1, 6), rng.integers(2, 5)
        lp = random_lp(rng, t, n)
        y = rng.integers(1, n, size=rng.integers(1, 4)).tolist()
        if ctc_min_frames(y) > t:
            with pytest.raises(InfeasibleAlignmentError):
                ctc_loss(Tensor(lp), y)
            continue
        assert ctc_loss(Tensor(lp), y).item() == pytest.approx(-ctc_paths_logsum(lp, y), abs=1e-9)


def test_ctc_min_frames():
    assert ctc_min_frames([1, 1, 2]) == 4
    assert ctc_min_frames([1, 2, 3]) == 3


def test_ctc_gradient_finite_differences(rng):
    for y in ([1, 2], [1, 1], [3, 1, 3]):
        lp = Tensor(random_lp(rng, 7, 4))
        rep = grad_check(lambda x: ctc_loss(x, y), [lp])
        assert rep.passed, rep.message


def test_ctc_nonnegative_and_moves_with_mass(rng):
    lp = random_lp(rng, 5, 3)
    base = ctc_loss(Tensor(lp), [1, 2]).item()
    assert base >= 0
    path = [1, 1, 0, 2, 2]
    logits = lp.copy()
    logits[np.arange(5), path] += 0.5
    nudged = T.log_softmax(Tensor(logits)).data
    assert ctc_loss(Tensor(nudged), [1, 2]).item() < base


def test_ctc_batch_ignores_padding(rng):
    a, b = random_lp(rng, 4, 3), random_lp(rng, 6, 3)
    padded = np.zeros((2, 6, 3))
    padded[0, :4], padded[1] = a, b
    batch = ctc_loss_batch(Tensor(padded), [4, 6], [[1], [2, 1]]).item()
    single = (ctc_loss(Tensor(a), [1]).item() + ctc_loss(Tensor(b), [2, 1]).item()) / 2
    assert batch == pytest.approx(single, abs=1e-12)


def test_kl_zero_for_exact_one_hot():
    lp = np.full((2, 3), np.log(1e-300))
    lp[0, 1] = lp[1, 2] = 0.0
    assert kl_s2s_loss(Tensor(np.clip(lp, -690, 0)), [1, 2], smoothing=0.0).item() == pytest.approx(0, abs=1e-12)


def test_kl_at_zero_smoothing_is_nll(rng):
    lp = random_lp(rng, 4, 5)
    y = [1, 3, 3, 2]
    assert kl_s2s_loss(Tensor(lp), y, 0.0).item() == pytest.approx(-lp[np.arange(4), y].mean(), abs=1e-12)


def test_kl_direct_formula(rng):
    lp = random_lp(rng, 5, 6)
    y = [2, 0, 5, 5, 1]
    s, n = 0.1, 6
    total = 0.0
    for step, label in enumerate(y):
        for k in range(n):
            q = 1 - s if k == label else s / (n - 1)
            total += q * (np.log(q) - lp[step, k])
    assert kl_s2s_loss(Tensor(lp), y, s).item() == pytest.approx(total / len(y), abs=1e-9)
    np.testing.assert_allclose(smoothed_targets(y, n, s).sum(axis=1), 1.0)


def test_kl_gradient_and_contract(rng):
    rep = grad_check(lambda x: kl_s2s_loss(T.log_softmax(x), [1, 2, 0], 0.1), [Tensor(rng.standard_normal((3, 4)))])
    assert rep.passed, rep.message
    with pytest.raises(ContractError):
        kl_s2s_loss(Tensor(random_lp(rng, 3, 4)), [1, 2])


def test_kl_batch_matches_single(rng):
    a, b = random_lp(rng, 3, 4), random_lp(rng, 3, 4)
    both = kl_s2s_loss_batch(Tensor(np.stack([a, b])), [[1, 2], [3, 0, 2]], 0.1).item()
    single = (kl_s2s_loss(Tensor(a[:2]), [1, 2]).item() + kl_s2s_loss(Tensor(b), [3, 0, 2]).item()) / 2
    assert both == pytest.approx(single, abs=1e-12)


def test_lang_ce_examples():
    assert lang_ce_loss(Tensor([0.0, 1.0]), 1).item() == pytest.approx(0.0, abs=1e-12)
    assert lang_ce_loss(Tensor([1 / 3] * 3), 2).item() == pytest.approx(np.log(3))
    assert lang_ce_loss(Tensor([0.5, 0.25, 0.25]), 1).item() == pytest.approx(-np.log(0.25))
    with pytest.raises(IndexError):
        lang_ce_loss(Tensor([0.5, 0.5]), 2)


def test_mix_endpoints_and_affinity(rng):
    lp_c, lp_s = Tensor(random_lp(rng, 6, 5)), Tensor(random_lp(rng, 3, 5))
    y, y_eos = [1, 2], [1, 2, 2]
    ctc = ctc_loss(lp_c, y).item()
    kl = kl_s2s_loss(lp_s, y_eos, 0.1).item()
    assert combined_loss(lp_c, lp_s, y, y_eos, LossWeights(alpha=1.0)).item() == ctc
    assert combined_loss(lp_c, lp_s, y, y_eos, LossWeights(alpha=0.0)).item() == kl
    assert combined_loss(lp_c, lp_s, y, y_eos).item() == pytest.approx(0.3 * ctc + 0.7 * kl, abs=1e-12)
    w = LossWeights()
    delta = 0.75
    base = mix(Tensor(2.0), Tensor(1.0), w).item()
    assert mix(Tensor(2.0 + delta), Tensor(1.0), w).item() - base == pytest.approx(w.alpha * delta)


def test_selfcond_loss(rng):
    lp_c, lp_s = Tensor(random_lp(rng, 6, 5)), Tensor(random_lp(rng, 3, 5))
    y, y_eos = [1, 2], [1, 2, 2]
    eq6 = combined_loss(lp_c, lp_s, y, y_eos).item()
    p = Tensor([0.2, 0.8])
    assert combined_loss_selfcond(lp_c, lp_s, y, y_eos, p, 0, LossWeights(beta=0.0)).item() == eq6
    assert combined_loss_selfcond(lp_c, lp_s, y, y_eos, Tensor([0.0, 1.0]), 1).item() == pytest.approx(eq6)
    got = combined_loss_selfcond(lp_c, lp_s, y, y_eos, p, 0).item()
    assert got == pytest.approx(eq6 + 0.1 * -np.log(0.2), abs=1e-12)


def test_weights_validated():
    with pytest.raises(ConfigError):
        LossWeights(alpha=1.5)
    with pytest.raises(ConfigError):
        LossWeights(label_smoothing=1.0)


def test_forward_backward_returns_occupancy(rng):
    lp = random_lp(rng, 5, 3)
    _, grad = ctc_forward_backward(lp, [1, 2])
    # occupancies of one frame sum to one path's worth of probability mass
    np.testing.assert_allclose(-grad.sum(axis=1), 1.0, atol=1e-12)
