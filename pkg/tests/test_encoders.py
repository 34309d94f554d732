import numpy as np
import pytest

from polyspec import modalities as mod
from polyspec.autodiff import Tensor, as_tensor, precision
from polyspec.config import ModelConfig
from polyspec.encoders import (MaskingError, SpecEncoders, TransformerPoolBlock,
                               compute_matching_loss, encode_modality,
                               mask_any_specification, mask_specification,
                               mask_text_specification)
from polyspec.modalities import TaskSpecification, Vocabulary
from polyspec.params import ParameterStore
from polyspec.rng import RngStream


def make_encoders(cfg=None, seed=0):
    cfg = cfg or ModelConfig()
    store = ParameterStore()
    return SpecEncoders(store, cfg, RngStream(seed).split("enc")), store, cfg


def spec_of(modality, cfg, task=0, variant=0, split="train", rng=None,
            n_tok=None, token_ids=None):
    rng = rng or RngStream(11).split(modality)
    n = n_tok if n_tok is not None else (mod.TOKEN_COUNTS[modality] or 5)
    tokens = rng.normal((n, cfg.d_feat)).astype(np.float32)
    if modality in mod.TEXT_MODALITIES and token_ids is None:
        token_ids = np.arange(8, 8 + n, dtype=np.int64)
    return TaskSpecification(modality, tokens, task, variant, split,
                             token_ids=token_ids)


class TestShapes:
    @pytest.mark.parametrize("modality", mod.MODALITIES)
    @pytest.mark.parametrize("stage", [1, 2])
    def test_batch_embedding_shape(self, modality, stage):
        enc, _, cfg = make_encoders()
        n = mod.TOKEN_COUNTS[modality] or 5
        x = as_tensor(np.random.default_rng(0).normal(
            size=(3, n, cfg.d_feat)).astype(np.float32))
        f = enc.encode(modality, x, stage, RngStream(1), training=False)
        assert f.shape == (3, cfg.d_feat)

    def test_paper_scale_shape(self):
        cfg = ModelConfig.paper_scale()
        enc, _, _ = make_encoders(cfg)
        x = as_tensor(np.zeros((2, 16, cfg.d_feat), dtype=np.float32))
        f = enc.encode(mod.VIDEO_DEMONSTRATION, x, 1, RngStream(1), False)
        assert f.shape == (2, 768)

    def test_single_spec_wrapper(self):
        enc, _, cfg = make_encoders()
        s = spec_of(mod.IMAGE_GOAL, cfg)
        f = encode_modality(s, enc, 1, RngStream(2))
        assert f.shape == (cfg.d_feat,)

    def test_rejects_bad_stage(self):
        enc, _, cfg = make_encoders()
        x = as_tensor(np.zeros((1, 1, cfg.d_feat), dtype=np.float32))
        with pytest.raises(ValueError, match="stage"):
            enc.encode(mod.TEXT_GOAL, x, 3, RngStream(0), False)


class TestPoolBlock:
    def test_permutation_invariance(self):
        store = ParameterStore()
        blk = TransformerPoolBlock(store, "p", "proj_V", 8, 2, 8, 16,
                                   RngStream(3))
        x = np.random.default_rng(5).normal(size=(2, 7, 8)).astype(np.float32)
        perm = np.random.default_rng(6).permutation(7)
        a = blk(as_tensor(x), RngStream(0), False).data
        b = blk(as_tensor(x[:, perm]), RngStream(0), False).data
        np.testing.assert_allclose(a, b, rtol=2e-5, atol=2e-6)

    def test_masked_pool_ignores_padded_tokens(self):
        store = ParameterStore()
        blk = TransformerPoolBlock(store, "p", "proj_V", 8, 2, 8, 16,
                                   RngStream(3))
        rng = np.random.default_rng(7)
        x_short = rng.normal(size=(1, 4, 8)).astype(np.float32)
        junk = rng.normal(size=(1, 3, 8)).astype(np.float32) * 50
        x_long = np.concatenate([x_short, junk], axis=1)
        pad = np.array([[False] * 4 + [True] * 3])
        a = blk(as_tensor(x_short), RngStream(0), False).data
        b = blk(as_tensor(x_long), RngStream(0), False, token_pad=pad).data
        np.testing.assert_allclose(a, b, rtol=2e-4, atol=1e-5)


class TestStagePaths:
    def test_matching_block_is_identity_at_init(self):
        """The matching block's second linear starts at zero, so stage 2
        equals stage 1 before any matching-stage updates."""
        enc, _, cfg = make_encoders()
        for m in mod.MODALITIES:
            n = mod.TOKEN_COUNTS[m] or 4
            x = as_tensor(np.random.default_rng(9).normal(
                size=(2, n, cfg.d_feat)).astype(np.float32))
            f1 = enc.encode(m, x, 1, RngStream(4), False).data
            f2 = enc.encode(m, x, 2, RngStream(4), False).data
            np.testing.assert_array_equal(f1, f2)

    def test_video_has_no_matching_block(self):
        enc, store, _ = make_encoders()
        assert enc.stacks[mod.VIDEO_DEMONSTRATION].matching is None
        assert not [p for p in store if p.group_tag == "match_V"]

    def test_stage2_differs_once_matching_block_perturbed(self):
        enc, store, cfg = make_encoders()
        x = as_tensor(np.random.default_rng(1).normal(
            size=(2, 1, cfg.d_feat)).astype(np.float32))
        p = store["enc/l/match/fc2/w"]
        p.value = p.value + 0.5
        f1 = enc.encode(mod.TEXT_GOAL, x, 1, RngStream(4), False).data
        f2 = enc.encode(mod.TEXT_GOAL, x, 2, RngStream(4), False).data
        assert np.abs(f1 - f2).max() > 1e-4

    def test_shared_block_is_shared(self):
        enc, store, _ = make_encoders()
        shared = [p.name for p in store if p.group_tag == "proj_shared"]
        assert sorted(shared) == ["enc/shared/mlp/fc1/b", "enc/shared/mlp/fc1/w",
                                  "enc/shared/mlp/fc2/b", "enc/shared/mlp/fc2/w"]
        for m in mod.MODALITIES:
            assert enc.stacks[m].shared is enc.shared


class TestApplyMask:
    def test_replaces_only_masked_rows(self):
        enc, store, cfg = make_encoders()
        x = np.random.default_rng(2).normal(size=(3, 16, cfg.d_feat)).astype(np.float32)
        pos = np.array([[4], [0], [15]])
        out = enc.apply_mask(mod.VIDEO_DEMONSTRATION, as_tensor(x), pos).data
        mask_vec = store["enc/V/mask_emb"].value
        for b in range(3):
            for t in range(16):
                if t == pos[b, 0]:
                    np.testing.assert_array_equal(out[b, t], mask_vec)
                else:
                    np.testing.assert_array_equal(out[b, t], x[b, t])

    def test_mask_gradient_reaches_embedding(self):
        enc, store, cfg = make_encoders()
        x = as_tensor(np.ones((1, 4, cfg.d_feat), dtype=np.float32))
        out = enc.apply_mask(mod.SPEECH_GOAL, x, np.array([[2]]))
        out.sum().backward()
        g = store["enc/s/mask_emb"].grad
        np.testing.assert_array_equal(g, np.ones(cfg.d_feat))


class TestMaskSelection:
    def setup_method(self):
        self.cfg = ModelConfig()
        words = ["the", "a", "to"] + [f"w{i}" for i in range(13)]
        self.vocab = Vocabulary(words, {"the", "a", "to"})

    def test_video_position_is_first_draw_mod_16(self):
        """Pinned selection rule: replaying the stream's raw draw must give
        the same frame index."""
        s = spec_of(mod.VIDEO_DEMONSTRATION, self.cfg)
        for seed in range(20):
            rng = RngStream(seed).split("m")
            expect = RngStream(seed).split("m").randint(16)
            rec = mask_specification(s, rng)
            assert rec.positions == [expect]
            np.testing.assert_array_equal(rec.target_features,
                                          s.tokens[rec.positions])

    def test_image_goal_masks_its_single_feature(self):
        s = spec_of(mod.IMAGE_GOAL, self.cfg)
        rec = mask_specification(s, RngStream(0))
        assert rec.positions == [0]

    @pytest.mark.parametrize("modality,n_tok", [
        (mod.SPEECH_GOAL, 4), (mod.SPEECH_INSTRUCTIONS, 4),
        (mod.VIDEO_DEMONSTRATION, 16)])
    def test_positions_in_range(self, modality, n_tok):
        s = spec_of(modality, self.cfg)
        for seed in range(50):
            rec = mask_specification(s, RngStream(seed))
            assert len(rec.positions) == 1
            assert 0 <= rec.positions[0] < n_tok

    def test_instructions_with_one_non_stopword_rejected(self):
        ids = np.array([0, 5, 1], dtype=np.int64)  # the w2 a
        s = spec_of(mod.TEXT_INSTRUCTIONS, self.cfg, n_tok=3, token_ids=ids)
        with pytest.raises(MaskingError, match="non-stopwords"):
            mask_text_specification(s, self.vocab, RngStream(0))

    def test_instructions_mask_two_distinct_non_stopwords(self):
        ids = np.array([0, 4, 1, 7, 9, 2], dtype=np.int64)
        s = spec_of(mod.TEXT_INSTRUCTIONS, self.cfg, n_tok=6, token_ids=ids)
        seen = set()
        for seed in range(200):
            rec = mask_text_specification(s, self.vocab, RngStream(seed))
            assert len(rec.positions) == 2
            assert rec.positions[0] < rec.positions[1]
            for p, tid in zip(rec.positions, rec.target_ids):
                assert not self.vocab.is_stopword_id(int(tid))
                assert ids[p] == tid
            seen.add(tuple(rec.positions))
        assert seen == {(1, 3), (1, 4), (3, 4)}

    def test_goal_masks_the_only_non_stopword(self):
        ids = np.array([6], dtype=np.int64)
        s = spec_of(mod.TEXT_GOAL, self.cfg, n_tok=1, token_ids=ids)
        rec = mask_text_specification(s, self.vocab, RngStream(1))
        assert rec.positions == [0]
        assert rec.target_ids.tolist() == [6]

    def test_eval_split_refused(self):
        s = spec_of(mod.SPEECH_GOAL, self.cfg, variant=9, split="eval")
        with pytest.raises(MaskingError, match="train-split"):
            mask_specification(s, RngStream(0))

    def test_dispatcher_routes_by_modality(self):
        st = spec_of(mod.TEXT_GOAL, self.cfg, n_tok=1,
                     token_ids=np.array([5], dtype=np.int64))
        rv = mask_any_specification(st, self.vocab, RngStream(0))
        assert rv.target_ids is not None
        sv = spec_of(mod.VIDEO_DEMONSTRATION, self.cfg)
        rf = mask_any_specification(sv, self.vocab, RngStream(0))
        assert rf.target_features is not None


class TestMatchingLoss:
    def test_hand_value(self):
        """Five identical unit-offset terms: each MSE is 1, sum is 5."""
        d = 4
        emb = {m: Tensor(np.zeros((2, d))) for m in mod.MODALITIES}
        emb[mod.VIDEO_DEMONSTRATION] = Tensor(np.ones((2, d)))
        loss = compute_matching_loss(emb)
        assert loss.data == pytest.approx(5.0)

    def test_l1_metric(self):
        emb = {m: Tensor(np.zeros((1, 2))) for m in mod.MODALITIES}
        emb[mod.VIDEO_DEMONSTRATION] = Tensor(np.full((1, 2), 3.0))
        assert compute_matching_loss(emb, "l1").data == pytest.approx(15.0)

    def test_requires_video(self):
        emb = {mod.TEXT_GOAL: Tensor(np.zeros((1, 2)))}
        with pytest.raises(ValueError, match="video"):
            compute_matching_loss(emb)

    def test_no_gradient_into_video_embedding(self):
        v = Tensor(np.ones((1, 3)), requires_grad=True)
        t = Tensor(np.zeros((1, 3)), requires_grad=True)
        loss = compute_matching_loss(
            {mod.VIDEO_DEMONSTRATION: v * 2.0, mod.TEXT_GOAL: t + 0.0})
        loss.backward()
        assert v.grad is None
        assert t.grad is not None

    def test_no_gradient_into_video_pathway_parameters(self):
        """End to end: matching loss must leave proj_V and proj_shared
        gradients empty when the video path feeds only the detached target."""
        enc, store, cfg = make_encoders()
        with precision(np.float64):
            embeddings = {}
            rng = RngStream(8)
            for m in mod.MODALITIES:
                n = mod.TOKEN_COUNTS[m] or 4
                x = as_tensor(np.random.default_rng(3).normal(
                    size=(2, n, cfg.d_feat)))
                embeddings[m] = enc.encode(m, x, 2, rng.split(m), False)
            loss = compute_matching_loss(embeddings)
            store.zero_grads()
            loss.backward()
        assert all(p.tensor.grad is None for p in store
                   if p.group_tag == "proj_V")
        # shared block feeds both sides; only the detached video side is cut,
        # so text/speech/image paths still reach it
        assert any(p.tensor.grad is not None for p in store
                   if p.group_tag == "proj_shared")
        assert any(p.tensor.grad is not None for p in store
                   if p.group_tag == "match_l")


class TestMLPBlockOracle:
    def test_matches_manual_two_layer_relu(self):
        enc, store, cfg = make_encoders()
        x = np.random.default_rng(4).normal(size=(3, cfg.d_feat)).astype(np.float32)
        w1 = store["enc/l/mlp/fc1/w"].value
        b1 = store["enc/l/mlp/fc1/b"].value
        w2 = store["enc/l/mlp/fc2/w"].value
        b2 = store["enc/l/mlp/fc2/b"].value
        want = np.maximum(x @ w1 + b1, 0) @ w2 + b2
        got = enc.stacks[mod.TEXT_GOAL].block(
            as_tensor(x), RngStream(0), training=False).data
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-7)
