import numpy as np
import pytest

from transfer_nmt import model as M
from transfer_nmt import numerics as nx
from transfer_nmt.checkpoint import Checkpoint
from transfer_nmt.data import BOS, EOS, PAD
from transfer_nmt.model import ModelConfig, Stage

CFG = ModelConfig(enc_layers=3, dec_layers=2, d_model=16, enc_ffn=32, dec_ffn=32, heads=2, dropout=0.0,
                  vocab_size=40, max_positions=12)


def batch(rng, b=2, t=6):
    ids = rng.integers(8, CFG.vocab_size, size=(b, t))
    ids[:, 0] = BOS
    ids[:, -1] = EOS
    return ids


class TestConfig:
    def test_pde_layer_defaults_to_penultimate(self):
        assert ModelConfig(enc_layers=24).pde_layer == 23
        assert CFG.pde_layer == 2

    def test_reference_scale_is_expressible(self):
        cfg = ModelConfig.reference_scale()
        assert (cfg.enc_layers, cfg.d_model, cfg.enc_ffn, cfg.heads) == (24, 1024, 4096, 16)
        assert (cfg.dec_layers, cfg.dec_ffn) == (12, 3072)

    def test_invalid(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=10, heads=4)
        with pytest.raises(ValueError):
            ModelConfig(enc_layers=2, pde_layer=3)

    def test_dict_round_trip(self):
        assert ModelConfig.from_dict(CFG.to_dict()) == CFG


class TestRegistry:
    def test_single_tied_token_table(self):
        names = [n for n, _ in M.parameter_shapes(CFG)]
        assert names.count("embed.tokens") == 1
        assert not any("out" in n and "proj" in n for n in names)

    def test_projections_only_for_several_targets(self):
        assert not [n for n, _ in M.parameter_shapes(CFG) if n.startswith("proj.")]
        multi = ModelConfig(**{**CFG.to_dict(), "n_target_langs": 3})
        assert [n for n, _ in M.parameter_shapes(multi) if n.startswith("proj.")] == ["proj.0", "proj.1", "proj.2"]

    def test_encoder_only_subset(self):
        enc = dict(M.parameter_shapes(CFG, encoder_only=True))
        full = dict(M.parameter_shapes(CFG))
        assert set(enc) < set(full)
        assert not any(n.startswith("dec.") for n in enc)

    def test_init_is_seeded(self):
        a, b = M.init_model(CFG, 3), M.init_model(CFG, 3)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a.names())
        assert not np.array_equal(a["embed.tokens"].data, M.init_model(CFG, 4)["embed.tokens"].data)

    def test_pretrained_copy_and_errors(self):
        src = M.init_model(CFG, 1, encoder_only=True)
        ckpt = Checkpoint({}, {n: src[n].data.astype(np.float32) for n in src.names()})
        state = M.init_model(CFG, 2, ckpt)
        assert np.array_equal(state["enc.1.attn.q"].data, src["enc.1.attn.q"].data.astype(np.float32))
        missing = Checkpoint({}, {n: v for n, v in ckpt.tensors.items() if n != "enc.2.norm1.gamma"})
        with pytest.raises(KeyError, match="enc.2.norm1.gamma"):
            M.init_model(CFG, 2, missing)
        bad = dict(ckpt.tensors)
        bad["enc.1.ffn.w1"] = np.zeros((16, 8), np.float32)
        with pytest.raises(ValueError, match="enc.1.ffn.w1"):
            M.init_model(CFG, 2, Checkpoint({}, bad))


class TestPartitions:
    state = M.init_model(CFG, 0)

    def test_stage1_trains_decoder_only(self):
        part = M.partition_for_stage(self.state, Stage.STAGE1)
        assert part.trainable and all(n.startswith(("dec.", "proj.")) for n in part.trainable)
        assert "embed.tokens" in part.frozen and "enc.1.attn.q" in part.frozen

    def test_stage2_freezes_only_embeddings(self):
        part = M.partition_for_stage(self.state, Stage.STAGE2)
        assert part.frozen == frozenset(M.EMBEDDING_NAMES)

    def test_ft_all_trains_everything(self):
        assert not M.partition_for_stage(self.state, Stage.FT_ALL).frozen


class TestPDE:
    def _zeroed(self, pde):
        state = M.init_model(CFG, 5)
        state.params["enc.2.attn.v"].data[:] = 0.0
        state.params["enc.2.norm1.beta"].data[:] = np.linspace(-1, 1, CFG.d_model)
        return state.with_config(CFG.with_pde(pde))

    def test_zeroed_values_give_norm_bias_with_pde(self):
        trace = {}
        M.encode(self._zeroed(True), batch(np.random.default_rng(0)), trace=trace)
        beta = np.linspace(-1, 1, CFG.d_model)
        np.testing.assert_allclose(trace["2.attn"], np.broadcast_to(beta, trace["2.attn"].shape), atol=1e-12)

    def test_zeroed_values_give_layer_norm_without_pde(self):
        trace = {}
        state = self._zeroed(False)
        M.encode(state, batch(np.random.default_rng(0)), trace=trace)
        h = trace["1.out"]
        mean = h.mean(-1, keepdims=True)
        var = h.var(-1, keepdims=True)
        expected = (h - mean) / np.sqrt(var + CFG.ln_eps) * state["enc.2.norm1.gamma"].data + np.linspace(-1, 1, 16)
        np.testing.assert_allclose(trace["2.attn"], expected, atol=1e-10)
        assert np.ptp(trace["2.attn"], axis=-1).min() > 0

    def test_layers_below_are_bit_identical(self):
        ids = batch(np.random.default_rng(1))
        on, off = {}, {}
        state = M.init_model(CFG, 7)
        M.encode(state.with_config(CFG.with_pde(True)), ids, trace=on)
        M.encode(state.with_config(CFG.with_pde(False)), ids, trace=off)
        assert on["1.attn"].tobytes() == off["1.attn"].tobytes()
        assert on["1.out"].tobytes() == off["1.out"].tobytes()
        assert not np.array_equal(on["2.attn"], off["2.attn"])


class TestForward:
    state = M.init_model(CFG, 2)

    def test_padding_does_not_leak(self):
        rng = np.random.default_rng(3)
        src = batch(rng, 1, 5)
        padded = np.concatenate([src, np.full((1, 3), PAD)], axis=1)
        a = M.encode(self.state, src).data
        b = M.encode(self.state, padded).data[:, :5]
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_decoder_is_causal(self):
        rng = np.random.default_rng(4)
        src, tgt = batch(rng), batch(rng)
        changed = tgt.copy()
        changed[:, 4] = 9 if changed[0, 4] != 9 else 10
        a = M.forward_logits(self.state, src, tgt).data
        b = M.forward_logits(self.state, src, changed).data
        np.testing.assert_array_equal(a[:, :4], b[:, :4])

    def test_logits_use_the_token_table(self):
        h = nx.Tensor(np.random.default_rng(5).normal(size=(1, 2, 16)))
        np.testing.assert_allclose(M.output_logits(self.state, h).data, h.data @ self.state["embed.tokens"].data.T)

    def test_position_ceiling(self):
        with pytest.raises(ValueError, match="max_positions"):
            M.encode(self.state, np.full((1, 13), 9))

    def test_sequence_nll_matches_token_log_probs(self):
        rng = np.random.default_rng(6)
        src, tgt = batch(rng, 1), batch(rng, 1)
        nll = float(M.sequence_nll(self.state, src, tgt).data)
        per_token = M.token_log_probs(self.state, src[0], tgt[0])
        assert nll == pytest.approx(-per_token.mean(), abs=1e-12)

    def test_mlm_positions_select_rows(self):
        rng = np.random.default_rng(7)
        src = batch(rng)
        full = M.mlm_logits(self.state, src).data.reshape(-1, CFG.vocab_size)
        some = M.mlm_logits(self.state, src, np.array([1, 7])).data
        np.testing.assert_allclose(some, full[[1, 7]], atol=1e-12)

    def test_target_projection(self):
        cfg = ModelConfig(**{**CFG.to_dict(), "n_target_langs": 2})
        state = M.init_model(cfg, 1)
        enc = nx.Tensor(np.ones((2, 3, 16)))
        out = M.apply_target_projection(state, enc, [0, 1]).data
        np.testing.assert_allclose(out[0], enc.data[0] @ state["proj.0"].data)
        np.testing.assert_allclose(out[1], enc.data[1] @ state["proj.1"].data)
        with pytest.raises(IndexError):
            M.apply_target_projection(state, enc, 2)

    def test_dropout_only_with_rng(self):
        cfg = ModelConfig(**{**CFG.to_dict(), "dropout": 0.3})
        state = M.init_model(cfg, 2)
        src = batch(np.random.default_rng(8))
        a, b = M.encode(state, src).data, M.encode(state, src).data
        assert np.array_equal(a, b)
        c = M.encode(state, src, np.random.default_rng(0)).data
        assert not np.array_equal(a, c)
