import math

import numpy as np
import pytest

from flpr import autodiff as ad
from flpr.checkpoint import Checkpoint, CheckpointError
from flpr.model import (
    ClassOutOfRange,
    ConfigError,
    LPTransformer,
    ModelConfig,
    OddDModel,
    causal_mask,
    column_slices,
    desk_config,
    multi_head_attention,
    full_config,
    param_count,
    positional_encoding,
)
from flpr.plates import GERMAN, encode_label

TINY = ModelConfig(d_model=8, seq_w=6, enc_layers=1, dec_layers=1, heads=2, d_ff=16,
                   k_classes=3, vocab_size=7, max_decode_len=5)


def tiny_batch(rng, b=2):
    images = rng.random((b, 8, 6))
    targets = np.array([[4, 0, 1, 5, 6], [4, 2, 5, 6, 6]])[:b]
    return images, np.arange(b) % 3, targets


def with_random_rows(model, seed=0):
    """Fill the zero-initialized class table so class effects are visible."""
    model.knowledge.data[:] = np.random.default_rng(seed).normal(size=model.knowledge.shape)
    return model


@pytest.fixture
def tiny():
    return with_random_rows(LPTransformer(TINY, seed=1).eval())


class TestConfig:
    def test_specials(self):
        cfg = ModelConfig()
        assert (cfg.sos, cfg.eos, cfg.pad) == (40, 41, 42)

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=40, heads=6)

    def test_dict_round_trip(self):
        cfg = desk_config(10)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestParamCount:
    def test_full_size_in_range(self):
        n = param_count(full_config())
        assert 1_700_000 <= n <= 2_100_000

    def test_matches_instantiated(self):
        for cfg in (TINY, desk_config(10), desk_config(0)):
            assert param_count(cfg) == LPTransformer(cfg).num_parameters()

    def test_k_adds_one_row_per_class(self):
        assert param_count(full_config(50)) - param_count(full_config(0, 44)) == 50 * 40

    def test_ff_width_term(self):
        cfg = desk_config()
        diff = param_count(cfg.with_(d_ff=2 * cfg.d_ff)) - param_count(cfg)
        per_layer = 2 * cfg.d_model * cfg.d_ff + cfg.d_ff
        assert diff == (cfg.enc_layers + cfg.dec_layers) * per_layer


class TestInputs:
    def test_column_slices(self):
        img = np.arange(12).reshape(3, 4)
        seq = column_slices(img)
        assert seq.shape == (4, 3)
        np.testing.assert_array_equal(seq[2], img[:, 2])

    def test_column_slices_shape_check(self):
        with pytest.raises(ad.ShapeMismatch):
            column_slices(np.zeros((28, 120)), 40, 180)

    def test_positional_encoding_values(self):
        pe = positional_encoding(50, 8)
        assert pe[0, 0] == 0 and pe[0, 1] == 1
        assert pe[3, 2] == pytest.approx(math.sin(3 / 10000 ** (2 / 8)))
        assert pe[7, 5] == pytest.approx(math.cos(7 / 10000 ** (4 / 8)))

    def test_odd_width(self):
        with pytest.raises(OddDModel):
            positional_encoding(4, 7)

    def test_causal_mask(self):
        m = causal_mask(3)
        assert m.tolist() == [[False, True, True], [False, False, True], [False, False, False]]


class TestKnowledgeEmbedding:
    def test_additive_and_replicated(self, tiny):
        x = ad.Tensor(np.random.default_rng(0).random((3, 6, 8)))
        out = tiny.knowledge_embed(x, [0, 2, 1]).data
        rows = tiny.knowledge.data[[0, 2, 1]]
        np.testing.assert_array_equal(out, x.data + rows[:, None, :])

    def test_class_difference_is_row_difference(self, tiny):
        x = ad.Tensor(np.random.default_rng(1).random((1, 6, 8)))
        d = tiny.knowledge_embed(x, 2).data - tiny.knowledge_embed(x, 0).data
        expect = tiny.knowledge.data[2] - tiny.knowledge.data[0]
        np.testing.assert_allclose(d, np.broadcast_to(expect, d.shape), atol=1e-15)

    def test_untrained_table_matches_baseline(self):
        side = LPTransformer(TINY, seed=3).eval()
        base = LPTransformer(TINY.with_(k_classes=0), seed=3).eval()
        assert not side.knowledge.data.any()
        for (name, p), (_, q) in zip(
                [kv for kv in side.named_parameters() if kv[0] != "knowledge"], base.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data, err_msg=name)
        images, cls, tg = tiny_batch(np.random.default_rng(0))
        np.testing.assert_array_equal(side.forward(images, cls, tg).data, base.forward(images, None, tg).data)

    def test_identity_without_classes(self):
        m = LPTransformer(TINY.with_(k_classes=0)).eval()
        x = ad.Tensor(np.ones((1, 6, 8)))
        np.testing.assert_array_equal(m.knowledge_embed(x, None).data, x.data)

    def test_training_mode_applies_dropout(self):
        m = LPTransformer(TINY, seed=2).train()
        out = m.knowledge_embed(ad.Tensor(np.ones((4, 6, 8))), 0).data
        assert np.any(out == 0)

    @pytest.mark.parametrize("bad", [-1, 3])
    def test_class_range(self, tiny, bad):
        with pytest.raises(ClassOutOfRange):
            tiny.knowledge_embed(ad.Tensor(np.ones((1, 6, 8))), bad)

    def test_class_required(self, tiny):
        with pytest.raises(ClassOutOfRange):
            tiny.knowledge_embed(ad.Tensor(np.ones((1, 6, 8))), None)


class TestAttention:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.layers = [ad.Linear(4, 4, rng) for _ in range(4)]

    def run(self, q, k, v, mask=None):
        return multi_head_attention(ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), *self.layers, heads=2, mask=mask).data

    def test_single_key_returns_projected_value(self):
        rng = np.random.default_rng(4)
        v = rng.random((1, 1, 4))
        out = self.run(rng.random((1, 3, 4)), rng.random((1, 1, 4)), v)
        wv, wo = self.layers[2], self.layers[3]
        expect = wo(wv(ad.Tensor(v))).data
        np.testing.assert_allclose(out, np.broadcast_to(expect, out.shape), atol=1e-12)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(5)
        k = np.broadcast_to(rng.random((1, 1, 4)), (1, 5, 4)).copy()
        v = rng.random((1, 5, 4))
        out = self.run(rng.random((1, 2, 4)), k, v)
        wv, wo = self.layers[2], self.layers[3]
        expect = wo(ad.Tensor(wv(ad.Tensor(v)).data.mean(axis=1, keepdims=True))).data
        np.testing.assert_allclose(out, np.broadcast_to(expect, out.shape), atol=1e-12)

    def test_mask_blocks_future(self):
        rng = np.random.default_rng(6)
        x = rng.random((1, 4, 4))
        base = self.run(x, x, x, causal_mask(4))
        y = x.copy()
        y[0, 3] += 5.0
        moved = self.run(y, y, y, causal_mask(4))
        np.testing.assert_array_equal(base[0, :3], moved[0, :3])
        assert not np.allclose(base[0, 3], moved[0, 3])


class TestForward:
    def test_logit_shape(self, tiny):
        images, cls, tg = tiny_batch(np.random.default_rng(0))
        assert tiny.forward(images, cls, tg).shape == (2, 4, 7)

    def test_targets_must_start_with_sos(self, tiny):
        images, cls, tg = tiny_batch(np.random.default_rng(0))
        with pytest.raises(ValueError):
            tiny.forward(images, cls, tg[:, 1:])

    def test_encoder_output_depends_on_image(self, tiny):
        rng = np.random.default_rng(1)
        a = tiny.encode(tiny.embed_input(rng.random((1, 8, 6)), 0)).data
        b = tiny.encode(tiny.embed_input(rng.random((1, 8, 6)), 0)).data
        assert a.shape == (1, 6, 8)
        assert not np.allclose(a, b)

    def test_decoder_is_causal_in_outputs(self, tiny):
        images, cls, tg = tiny_batch(np.random.default_rng(2))
        base = tiny.forward(images, cls, tg).data
        changed = tg.copy()
        changed[:, 3] = 3
        out = tiny.forward(images, cls, changed).data
        np.testing.assert_array_equal(out[:, :3], base[:, :3])

    def test_decoder_is_causal_in_gradients(self, tiny):
        images, cls, tg = tiny_batch(np.random.default_rng(3))
        memory = tiny.encode(tiny.embed_input(images, cls))
        y = tiny.embed_targets(tg[:, :-1]).retain_grad()
        logits = tiny.decode(y, memory)
        for t in range(4):
            y.grad = None
            ad.tsum(logits[:, t]).backward()
            assert np.all(y.grad[:, t + 1:] == 0)
            assert np.any(y.grad[:, : t + 1] != 0)

    def test_initial_loss_near_uniform(self):
        m = LPTransformer(desk_config(), seed=0).eval()
        rng = np.random.default_rng(0)
        tg = np.stack([encode_label("AB-C-12"), encode_label("X-YZ-9")])
        loss = float(m.loss(rng.random((2, 28, 120)), None, tg).data)
        assert abs(loss - math.log(43)) < 0.2 * math.log(43)

    def test_end_to_end_gradients(self):
        m = with_random_rows(LPTransformer(TINY, seed=4).eval())
        images, cls, tg = tiny_batch(np.random.default_rng(4))
        params = m.parameters()
        err = ad.check_gradients_joint(lambda: m.loss(images, cls, tg), params)
        assert err < 1e-5

    def test_key_bias_gradient_is_zero(self):
        # softmax is invariant to a per-query shift, so key biases get no gradient
        m = LPTransformer(TINY, seed=4).eval()
        images, cls, tg = tiny_batch(np.random.default_rng(4))
        m.zero_grad()
        m.loss(images, cls, tg).backward()
        for name, p in m.named_parameters():
            if name.endswith("wk.bias"):
                assert np.max(np.abs(p.grad)) < 1e-12


class TestGreedy:
    def rig(self, token):
        m = LPTransformer(desk_config(), seed=0)
        m.out.weight.data[:] = 0
        m.out.bias.data[:] = 0
        m.out.bias.data[token] = 10.0
        return m

    def test_immediate_eos_is_empty(self):
        m = self.rig(GERMAN.eos)
        assert m.greedy_decode(np.zeros((3, 28, 120))) == [[], [], []]

    def test_never_eos_stops_at_max_length(self):
        m = self.rig(GERMAN.id_of("A"))
        assert m.greedy_decode(np.zeros((1, 28, 120))) == [[0] * 9]

    def test_restores_training_flag(self):
        m = self.rig(GERMAN.eos).train()
        m.greedy_decode(np.zeros((1, 28, 120)))
        assert m.training


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = LPTransformer(TINY, seed=7, dtype=np.float32)
        ck = Checkpoint.from_model(m, seed=7, note="x")
        ck.save(tmp_path / "a.ckpt")
        back = Checkpoint.load(tmp_path / "a.ckpt")
        assert back.config == TINY and back.meta == {"seed": 7, "note": "x"}
        m2 = back.build_model()
        for (n1, p1), (n2, p2) in zip(m.named_parameters(), m2.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_bytes_stable(self):
        m = LPTransformer(TINY, seed=7)
        a = Checkpoint.from_model(m, seed=7).to_bytes()
        b = Checkpoint.from_bytes(a).to_bytes()
        assert a == b
        assert a.startswith(b"FLPRCKPT")

    def test_rejects_corruption(self):
        raw = Checkpoint.from_model(LPTransformer(TINY)).to_bytes()
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(b"NOTACKPT" + raw[8:])
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(raw[:-4])
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(raw + b"\0")

    def test_shape_mismatch_on_load(self):
        ck = Checkpoint.from_model(LPTransformer(TINY))
        ck.weights["out.bias"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(ad.ShapeMismatch):
            ck.build_model()
