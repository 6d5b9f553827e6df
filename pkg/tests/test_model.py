import numpy as np
import pytest

from mlalt import tensor as T
from mlalt.errors import ConfigError, ContractError, DimensionError, InputError
from mlalt.gradcheck import grad_check
from mlalt.losses import LossWeights, ctc_loss_batch, kl_s2s_loss_batch, lang_ce_loss, mix
from mlalt.model import ALTModel, ConditioningMode, ModelConfig, cnn_output_length
from mlalt.tensor import Tensor, no_grad

from conftest import micro_config

MODES = ["none", "enc", "dec", "encdec", "self"]


def mel(rng, t=24, b=None):
    shape = (t, 80) if b is None else (b, t, 80)
    return rng.standard_normal(shape)


def lang_for(model, value):
    return value if model.mode.needs_language else None


def test_cnn_length_formula():
    assert cnn_output_length(101, ((5, 2), (5, 2), (1, 1))) == 26
    for t in (100, 400, 1001):
        assert abs(cnn_output_length(2 * t, ((5, 2), (5, 2), (1, 1))) - 2 * cnn_output_length(t, ((5, 2), (5, 2), (1, 1)))) <= 2


def test_cnn_constant_input_constant_interior():
    model = ALTModel(micro_config(cnn_specs=((3, 2), (1, 1))))
    with no_grad():
        feat, n = model.cnn_forward(np.zeros((20, 80)))
    # away from the zero-padded time edges every frame sees the same receptive field
    interior = feat.data[0, 1:-1]
    assert n[0] == 10
    np.testing.assert_array_equal(interior, np.broadcast_to(interior[0], interior.shape))


@pytest.mark.parametrize("mode", MODES)
def test_shapes_and_normalization(rng, mode):
    model = ALTModel(micro_config(mode))
    y_bos = np.array([[1, 5, 6, 4], [1, 6, 0, 0]])
    out = model.forward_train(mel(rng, 24, 2), y_bos, lang_for(model, [0, 1]))
    t_out = model.output_length(24)
    assert out.ctc_log_probs.shape == (2, t_out, 7)
    assert out.s2s_log_probs.shape == (2, 4, 7)
    np.testing.assert_allclose(np.exp(out.ctc_log_probs.data).sum(-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.exp(out.s2s_log_probs.data).sum(-1), 1.0, atol=1e-6)
    if mode == "self":
        assert out.lang_probs.shape == (2, 2)
        np.testing.assert_allclose(out.lang_probs.sum(-1), 1.0, atol=1e-12)
    else:
        assert out.lang_log_probs is None


def test_language_contract(rng):
    with pytest.raises(ContractError):
        ALTModel(micro_config("none")).forward_train(mel(rng), [[1, 5]], lang=[0])
    with pytest.raises(ContractError):
        ALTModel(micro_config("enc")).forward_train(mel(rng), [[1, 5]])
    with pytest.raises(IndexError):
        ALTModel(micro_config("enc")).forward_train(mel(rng), [[1, 5]], lang=[5])


def test_too_short_input():
    with pytest.raises(InputError):
        ALTModel(micro_config()).forward_train(np.zeros((0, 80)), [[1]])
    with pytest.raises(DimensionError):
        ALTModel(micro_config()).forward_train(np.zeros((5, 40)), [[1]])


def test_encoder_conditioning_changes_h(rng):
    model = ALTModel(micro_config("enc"))
    x = mel(rng)
    with no_grad():
        feat, n = model.cnn_forward(x)
        h0 = model.encode(feat, n, [0]).data
        h1 = model.encode(feat, n, [1]).data
    assert np.abs(h0 - h1).max() > 0


def test_decoder_conditioning_changes_o(rng):
    model = ALTModel(micro_config("dec"))
    with no_grad():
        feat, n = model.cnn_forward(mel(rng))
        h = model.encode(feat, n)
        outs = [model.decode_teacher_forced(model.condition_memory(h, model.decoder_condition([l])), n,
                                            [[1, 5, 6]]).data for l in (0, 1)]
    assert np.abs(outs[0] - outs[1]).max() > 0


@pytest.mark.parametrize("layers", [1, 3])
def test_decoder_causality_bit_exact(rng, layers):
    model = ALTModel(micro_config(dec_layers=layers))
    with no_grad():
        feat, n = model.cnn_forward(mel(rng))
        h = model.encode(feat, n)
        y = np.array([[1, 5, 6, 4, 5, 6]])
        base = model.decode_teacher_forced(h, n, y).data
        for t in range(1, 6):
            y2 = y.copy()
            y2[0, t:] = rng.integers(0, 7, size=6 - t)
            out = model.decode_teacher_forced(h, n, y2).data
            assert np.array_equal(out[:, :t], base[:, :t])


def test_zero_heads_are_uniform(rng):
    model = ALTModel(micro_config("self"))
    for lin in (model.ctc_fc, model.s2s_fc, model.lang_fc):
        lin.weight.data[:] = 0
        lin.bias.data[:] = 0
    out = model.forward_train(mel(rng), [[1, 5, 6]])
    np.testing.assert_allclose(out.ctc_log_probs.data, -np.log(7), atol=1e-12)
    np.testing.assert_allclose(out.s2s_log_probs.data, -np.log(7), atol=1e-12)
    np.testing.assert_allclose(out.lang_probs, 0.5, atol=1e-12)


def test_language_head_permutation_invariant(rng):
    model = ALTModel(micro_config("self"))
    h = Tensor(rng.standard_normal((1, 9, 8)))
    perm = Tensor(h.data[:, rng.permutation(9)])
    with no_grad():
        a = model.language_head(h, np.array([9])).data
        b = model.language_head(perm, np.array([9])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_self_condition_linearity():
    model = ALTModel(micro_config("self", n_languages=3))
    rows = model.selfcond_map.weight.data          # M x E
    with no_grad():
        for l in range(3):
            onehot = Tensor(np.eye(3)[l:l + 1])
            np.testing.assert_allclose(model.self_condition_vector(onehot).data[0], rows[l], atol=1e-15)
        uniform = model.self_condition_vector(Tensor(np.full((1, 3), 1 / 3))).data[0]
    np.testing.assert_allclose(uniform, rows.mean(axis=0), atol=1e-12)


def test_s2s_loss_reaches_language_head(rng):
    model = ALTModel(micro_config("self"))
    out = model.forward_train(mel(rng), [[1, 5, 6]])
    kl_s2s_loss_batch(out.s2s_log_probs, [[5, 6, 2]]).backward()
    assert np.abs(model.lang_fc.weight.grad).max() > 0


def test_encdec_is_composition(rng):
    model = ALTModel(micro_config("encdec"))
    x, y = mel(rng, 24, 2), np.array([[1, 5, 6], [1, 6, 5]])
    lang = [1, 0]
    with no_grad():
        full = model.forward_train(x, y, lang).s2s_log_probs.data
        feat, n = model.cnn_forward(x)
        h = model.encode(feat, n, lang)                       # encoder path
        emb = model.lang_emb(np.array(lang))                  # shared table
        memory = model._concat_cond(h, emb, model.dec_cond_proj)   # decoder path
        composed = model.s2s_head(model.decode_teacher_forced(memory, n, y)).data
    np.testing.assert_array_equal(full, composed)


def test_parameter_count_delta():
    base = ALTModel(micro_config("none")).num_parameters()
    enc = ALTModel(micro_config("enc")).num_parameters()
    cfg = micro_config()
    m, e, d = cfg.n_languages, cfg.lang_emb_dim, cfg.d_model
    assert enc - base == m * e + (d + e) * d
    assert ALTModel(micro_config("encdec")).num_parameters() - base == m * e + 2 * (d + e) * d
    assert ALTModel(micro_config("self")).num_parameters() - base == (d * m + m) + m * e + (d + e) * d


def test_full_size_default_config():
    cfg = ModelConfig(vocab_size=91)
    assert (cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.enc_layers, cfg.dec_layers) == (512, 4, 2048, 12, 6)
    assert (cfg.cnn_channels, cfg.lang_emb_dim, cfg.n_mels) == (64, 5, 80)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, d_model=10, n_heads=4)


def test_mode_parsing():
    assert ConditioningMode.parse("EncDec-Cond") is ConditioningMode.ENCDEC
    assert ConditioningMode.parse("SelfCond") is ConditioningMode.SELF
    assert ConditioningMode.parse(None) is ConditioningMode.NONE
    with pytest.raises(ConfigError):
        ConditioningMode.parse("both")


def test_forward_deterministic(rng):
    x = mel(rng)
    cfg = micro_config("self", dropout=0.1)
    a = ALTModel(cfg, seed=3).forward_train(x, [[1, 5]]).s2s_log_probs.data
    b = ALTModel(cfg, seed=3).forward_train(x, [[1, 5]]).s2s_log_probs.data
    assert np.array_equal(a, b)


def _full_loss(model, x, y, lang):
    out = model.forward_train(x, [[1] + y], lang_for(model, [lang]))
    w = LossWeights()
    l_ce = lang_ce_loss(out.lang_log_probs, [lang], from_log=True) if model.mode is ConditioningMode.SELF else None
    return mix(ctc_loss_batch(out.ctc_log_probs, out.enc_lengths, [y]),
               kl_s2s_loss_batch(out.s2s_log_probs, [y + [2]]), w, l_ce)


@pytest.mark.parametrize("mode", ["enc", "encdec", "self"])
def test_micro_gradient_check(rng, mode):
    model = ALTModel(micro_config(mode, vocab_size=6), seed=1)
    x = mel(rng, 16)
    for name, p in model.named_parameters():
        rep = grad_check(lambda *_: _full_loss(model, x, [5, 4], 1), [p], max_entries=6, seed=0)
        assert rep.max_rel_error < 1e-3, (name, rep.message)
