import math

import numpy as np
import pytest

from mlalt import tensor as T
from mlalt.checkpoint import load_checkpoint, save_checkpoint
from mlalt.datapipe import make_batches
from mlalt.errors import ConfigError, ContractError, NonFiniteError
from mlalt.model import ALTModel
from mlalt.tensor import Tensor
from mlalt.trainer import Adam, TrainConfig, batch_loss, noam_lr, train

from conftest import tiny_model_config


def test_noam_values():
    cfg = TrainConfig()
    assert noam_lr(cfg.warmup_steps, cfg) == pytest.approx(0.001, abs=1e-15)
    assert noam_lr(1, cfg) == pytest.approx(0.001 / 25000)
    assert noam_lr(4 * cfg.warmup_steps, cfg) == pytest.approx(0.0005, abs=1e-15)
    with pytest.raises(ContractError):
        noam_lr(0, cfg)


def test_noam_monotone():
    cfg = TrainConfig(warmup_steps=100)
    up = [noam_lr(s, cfg) for s in range(1, 101)]
    down = [noam_lr(s, cfg) for s in range(100, 2000)]
    assert all(a < b for a, b in zip(up, up[1:]))
    assert all(a > b for a, b in zip(down, down[1:]))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(warmup_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_base=-1)


def test_adam_zero_gradient_no_change():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    Adam([("p", p)]).step(0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_constant_gradient_step_is_lr():
    p = Tensor([0.0], requires_grad=True)
    opt = Adam([("p", p)])
    prev = 0.0
    for _ in range(200):
        p.grad = np.array([3.7])
        opt.step(0.01)
        step, prev = prev - p.data[0], p.data[0]
    assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_quadratic_converges():
    p = Tensor([5.0], requires_grad=True)
    opt = Adam([("p", p)], beta2=0.98)
    for i in range(500):
        p.grad = None
        T.sum(T.mul(T.sub(p, 1.5), T.sub(p, 1.5))).backward()
        opt.step(0.05 * (1 - i / 500))
    assert abs(p.data[0] - 1.5) < 1e-3


def test_adam_clipping_and_nonfinite():
    p = Tensor([0.0, 0.0], requires_grad=True)
    opt = Adam([("p", p)], clip_norm=1.0)
    p.grad = np.array([300.0, 400.0])
    assert opt.step(0.1) == pytest.approx(500.0)
    p.grad = np.array([np.inf, 0.0])
    with pytest.raises(NonFiniteError, match="'p'"):
        opt.step(0.1)


def _model(tiny_corpus, mode="none", seed=0):
    utts, vocab, langs, _ = tiny_corpus
    return ALTModel(tiny_model_config(len(vocab), langs.num_languages, mode), seed=seed)


def test_loss_decreases_on_fixed_batch(tiny_corpus):
    utts, vocab, _, _ = tiny_corpus
    model = _model(tiny_corpus)
    batch = make_batches(utts, 8, seed=0)[0][0]
    cfg = TrainConfig(lr_base=0.003, warmup_steps=10)
    opt = Adam(model.named_parameters(), clip_norm=5.0)
    losses = []
    for step in range(1, 51):
        total, *_ = batch_loss(model, batch, cfg.loss_weights)
        model.zero_grad()
        total.backward()
        opt.step(noam_lr(step, cfg))
        losses.append(total.item())
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


@pytest.mark.parametrize("mode", ["none", "encdec", "self"])
def test_training_is_deterministic(tiny_corpus, tmp_path, mode):
    utts, vocab, langs, _ = tiny_corpus
    cfg = TrainConfig(max_steps=3, epochs=3, batch_size=4, warmup_steps=5, seed=7)
    paths = []
    for run in range(2):
        model = _model(tiny_corpus, mode, seed=7)
        state = train(model, utts, vocab, cfg)
        path = tmp_path / f"{run}.ckpt"
        save_checkpoint(path, model, vocab, langs.languages, state.best_step, state.best_wer)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert load_checkpoint(paths[0]).config.conditioning_mode.value == mode


def test_best_checkpoint_selection(tiny_corpus):
    utts, vocab, _, _ = tiny_corpus
    model = _model(tiny_corpus)
    log = []
    state = train(model, utts, vocab, TrainConfig(epochs=4, batch_size=4, warmup_steps=4, lr_base=0.003),
                  log=log.append)
    wers = [w for _, _, w in state.history]
    assert state.best_wer == min(wers) <= wers[-1]
    assert any(line.startswith("epoch\t") for line in log)
    assert sum(line.startswith("step\t") for line in log) == state.step == 8


def test_train_rejects_empty_and_mismatch(tiny_corpus):
    utts, vocab, _, _ = tiny_corpus
    with pytest.raises(ConfigError):
        train(_model(tiny_corpus), [], vocab, TrainConfig())
    bad = ALTModel(tiny_model_config(len(vocab) + 1, 2))
    with pytest.raises(ConfigError):
        train(bad, utts, vocab, TrainConfig())
