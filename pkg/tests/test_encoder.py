import numpy as np
import pytest
import torch

from zoomloc.encoder import (Encoder, EncoderConfig, ImageEmbedding, cosine_similarity, pretrain_reconstruction,
                             select_top_patches)
from zoomloc.errors import BadImageShape, InvalidConfig, OutOfRange
from zoomloc.nn import OptimizerState, adamw_step, zero_

SMALL = EncoderConfig(patch_size=8, embed_dim=32, depth=6, heads=4, trainable_depth=6, max_grid=8)


def emb(pooled, patches):
    return ImageEmbedding(torch.as_tensor(pooled, dtype=torch.float64),
                          torch.as_tensor(patches, dtype=torch.float64), (1, len(patches)))


class TestEncode:
    def test_identical_inputs_identical_outputs(self, rng):
        enc = Encoder(SMALL)
        img = rng.random((48, 64, 3)).astype(np.float32)
        a, b = enc.encode_image(img), enc.encode_image(img.copy())
        assert torch.equal(a.pooled, b.pooled) and torch.equal(a.patches, b.patches)

    def test_shapes_for_both_modalities(self, rng):
        enc = Encoder(SMALL)
        g = enc.encode_image(rng.random((48, 64, 3)))
        s = enc.encode_image(rng.random((64, 64, 3)))
        assert g.pooled.shape == s.pooled.shape == (32,)
        assert g.patches.shape == (48, 32) and g.grid == (6, 8)
        assert s.patches.shape == (64, 32) and s.grid == (8, 8)

    def test_zero_blocks_return_summary(self, rng):
        enc = Encoder(SMALL)
        for blk in enc.blocks:
            zero_(blk)
        out = enc.encode_image(rng.random((16, 16, 3)))
        assert torch.equal(out.pooled, enc.summary.detach())

    def test_bad_shapes(self):
        enc = Encoder(SMALL)
        with pytest.raises(BadImageShape):
            enc.encode_image(np.zeros((20, 16, 3)))
        with pytest.raises(BadImageShape):
            enc.encode_image(np.zeros((16, 16, 4)))
        with pytest.raises(BadImageShape):
            enc.encode_image(np.zeros((16, 16 * 9, 3)))

    def test_patches_attend_bidirectionally(self, rng):
        enc = Encoder(SMALL)
        img = rng.random((16, 32, 3)).astype(np.float32)
        a = enc.encode_image(img).patches
        img[:, 24:] = 0
        b = enc.encode_image(img).patches
        assert not torch.equal(a[0], b[0])  # first patch sees the last one

    def test_invalid_config(self):
        with pytest.raises(InvalidConfig):
            EncoderConfig(embed_dim=30, heads=4)
        with pytest.raises(InvalidConfig):
            EncoderConfig(depth=2, trainable_depth=3)


def one_step(enc, rng):
    params = {k: p for k, p in enc.named_parameters() if p.requires_grad}
    before = {k: p.detach().clone() for k, p in enc.named_parameters()}
    if params:
        x = torch.as_tensor(rng.random((2, 16, 16, 3)), dtype=torch.float32)
        pooled, patches = enc(x)
        loss = (pooled ** 2).sum() + patches.sum()
        grads = torch.autograd.grad(loss, list(params.values()))
        adamw_step(params, dict(zip(params, grads)), OptimizerState(lr=1e-2))
    return {k for k, p in enc.named_parameters() if not torch.equal(p.detach(), before[k])}


class TestFreezing:
    def test_k0_changes_nothing(self, rng):
        enc = Encoder(SMALL)
        enc.set_trainable_depth(0)
        assert one_step(enc, rng) == set()

    def test_k_full_changes_all(self, rng):
        enc = Encoder(SMALL)
        changed = one_step(enc, rng)
        assert changed == {k for k, _ in enc.named_parameters()}

    def test_k4_changes_exactly_top_four(self, rng):
        enc = Encoder(SMALL)
        enc.set_trainable_depth(4)
        changed = one_step(enc, rng)
        expected = {k for k, _ in enc.named_parameters() if k.startswith(("blocks.2.", "blocks.3.", "blocks.4.",
                                                                            "blocks.5."))}
        assert changed == expected

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            Encoder(SMALL).set_trainable_depth(7)

    def test_pretraining_restores_depth(self, rng):
        enc = Encoder(SMALL)
        enc.set_trainable_depth(2)
        losses = pretrain_reconstruction(enc, torch.as_tensor(rng.random((8, 16, 16, 3)), dtype=torch.float32),
                                         steps=30, seed=0)
        assert enc.trainable_depth == 2 and losses[-1] < losses[0]
        assert not enc.patch_embed.weight.requires_grad


class TestTopPatches:
    def test_all_tokens_ordered(self, rng):
        patches = rng.normal(size=(9, 8))
        q = rng.normal(size=8)
        idx, toks = select_top_patches(emb(q, [[0] * 8]), emb(q, patches), 9)
        sims = [float(np.dot(p, q) / np.linalg.norm(p) / np.linalg.norm(q)) for p in patches]
        assert sorted(idx.tolist()) == list(range(9))
        assert [sims[i] for i in idx.tolist()] == sorted(sims, reverse=True)

    def test_parallel_beats_orthogonal(self):
        idx, toks = select_top_patches(emb([1, 0], [[1, 0]]), emb([0, 0], [[0, 1], [2, 0]]), 1)
        assert idx.tolist() == [1]

    def test_ties_to_lower_index(self):
        idx, _ = select_top_patches(emb([1, 0], [[1, 0]]), emb([0, 0], [[1, 1], [3, 0], [1, 0], [1, 1]]), 4)
        assert idx.tolist() == [1, 2, 0, 3]

    def test_bruteforce_oracle(self, rng):
        for _ in range(20):
            P, s = 30, int(rng.integers(1, 30))
            patches = rng.normal(size=(P, 16))
            q = rng.normal(size=16)
            sims = patches @ q / np.linalg.norm(patches, axis=1) / np.linalg.norm(q)
            oracle = sorted(range(P), key=lambda i: (-sims[i], i))[:s]
            idx, _ = select_top_patches(emb(q, patches[:1]), emb(q, patches), s)
            assert idx.tolist() == oracle

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            select_top_patches(emb([1, 0], [[1, 0]]), emb([0, 0], [[1, 0]]), 2)

    def test_cosine_bounds(self, rng):
        a = torch.as_tensor(rng.normal(size=(500, 8)))
        b = torch.as_tensor(rng.normal(size=(500, 8)))
        c = cosine_similarity(a, b)
        assert c.abs().max() <= 1 + 1e-6
        assert torch.allclose(cosine_similarity(a, 3 * a), torch.ones(500, dtype=torch.float64))
