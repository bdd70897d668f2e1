import hashlib
import math

import numpy as np
import pytest
import torch

from zoomloc.encoder import Encoder, EncoderConfig
from zoomloc.errors import DegenerateBatch, EmptyDB, RenderFailure
from zoomloc.geo import PyramidConfig, decode_actions, leaf_index, tile_bounds
from zoomloc.nn import grad_check
from zoomloc.retrieval import (ReferenceDB, build_reference_db, contrastive_loss, contrastive_step, leaf_centers,
                               memory_report, rank_rows, retrieve, retrieve_batch, zoom_query_bytes)

ENC = EncoderConfig(patch_size=16, embed_dim=32, depth=1, heads=4, trainable_depth=1, max_grid=4)
PYR = PyramidConfig(branching=2, num_steps=3, aoi_side=800.0)


def tiles(addr):
    seed = int.from_bytes(hashlib.sha256(repr(tuple(addr)).encode()).digest()[:8], "little")
    return np.random.default_rng(seed).random((64, 64, 3)).astype(np.float32)


@pytest.fixture(scope="module")
def enc64():
    torch.manual_seed(0)
    return Encoder(ENC).double().eval()


@pytest.fixture(scope="module")
def db(enc64):
    return build_reference_db(tiles, enc64, PYR)


def enumerate_leaves(pyr):
    paths = [[]]
    for _ in range(pyr.num_steps):
        paths = [p + [a] for p in paths for a in range(pyr.num_actions)]
    return paths


class TestBuild:
    def test_leaf_count_oracle(self):
        for pyr in (PYR, PyramidConfig(num_steps=3, aoi_side=2000.0), PyramidConfig(branching=3, num_steps=2)):
            leaves = enumerate_leaves(pyr)
            rects = {tuple(vars(tile_bounds(p, pyr)).values()) for p in leaves}
            assert len(rects) == pyr.num_leaves == pyr.branching ** (2 * pyr.num_steps)
        assert PyramidConfig(num_steps=3, aoi_side=2000.0).num_leaves == 4096

    def test_rows_normalized_and_ordered(self, db):
        assert len(db) == 64 and db.dim == 32
        assert torch.allclose(db.embeddings.norm(dim=1), torch.ones(64, dtype=torch.float64), atol=1e-6)
        assert db.leaf_ids.tolist() == list(range(64))
        for p in enumerate_leaves(PYR)[:20]:
            c = decode_actions(p, PYR).center
            assert db.centers[leaf_index(p, PYR)] == pytest.approx([c.latitude, c.longitude], abs=1e-12)

    def test_centers_match_codec(self):
        c = leaf_centers(PYR)
        for j in (0, 7, 63):
            from zoomloc.geo import actions_from_leaf_index
            cell = decode_actions(actions_from_leaf_index(j, PYR), PYR)
            assert c[j] == pytest.approx([cell.center.latitude, cell.center.longitude], abs=1e-12)

    def test_deterministic(self, enc64, db):
        again = build_reference_db(tiles, enc64, PYR, batch_size=7)
        assert torch.allclose(again.embeddings, db.embeddings, atol=1e-12)
        assert build_reference_db(tiles, enc64, PYR).to_bytes() == db.to_bytes()

    def test_render_failure(self, enc64):
        def bad(addr):
            raise RuntimeError("x")
        with pytest.raises(RenderFailure):
            build_reference_db(bad, enc64, PYR)


class TestRetrieve:
    def test_row_itself(self, db):
        for j in (0, 17, 63):
            assert int(rank_rows(db.embeddings[j] * 3.0, db)[0]) == j

    def test_ties_to_row_zero(self):
        emb = torch.ones(5, 4) / 2
        db = ReferenceDB(np.arange(5), emb, np.zeros((5, 2)))
        assert rank_rows(torch.randn(4), db).tolist() == [0, 1, 2, 3, 4]

    def test_exhaustive_scan_oracle(self, enc64, db, rng):
        obs = [rng.random((48, 64, 3)) for _ in range(100)]
        top = retrieve_batch(obs, db, enc64)
        E = db.embeddings.numpy()
        for o, t in zip(obs, top):
            with torch.no_grad():
                q = enc64(torch.as_tensor(o[None]))[0][0].numpy()
            q = q / np.linalg.norm(q)
            sims = [float(np.dot(E[r], q)) for r in range(len(E))]
            oracle = sorted(range(len(E)), key=lambda r: (-sims[r], r))
            assert retrieve(o, db, enc64).tolist() == oracle
            assert t == oracle[0]

    def test_empty(self, enc64):
        empty = ReferenceDB(np.zeros(0, np.int64), torch.zeros(0, 32), np.zeros((0, 2)))
        with pytest.raises(EmptyDB):
            rank_rows(torch.randn(32), empty)
        with pytest.raises(EmptyDB):
            retrieve_batch([np.zeros((16, 16, 3))], empty, enc64)


class TestContrastive:
    def test_two_by_two_closed_form(self):
        e = torch.eye(2, dtype=torch.float64)
        expected = math.log(1 + math.exp(-1))
        assert float(contrastive_loss(e, e, temperature=1.0)) == pytest.approx(expected, abs=1e-12)

    def test_identical_embeddings(self):
        x = torch.ones(6, 8, dtype=torch.float64)
        assert float(contrastive_loss(x, x)) == pytest.approx(math.log(6), abs=1e-12)

    def test_matches_symmetric_softmax_oracle(self, rng):
        q, p = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        pn = p / np.linalg.norm(p, axis=1, keepdims=True)
        L = qn @ pn.T / 0.07

        def ce(m):
            return np.mean([-(m[i, i] - np.log(np.exp(m[i]).sum())) for i in range(len(m))])

        got = float(contrastive_loss(torch.as_tensor(q), torch.as_tensor(p), 0.07))
        assert got == pytest.approx(0.5 * (ce(L) + ce(L.T)), abs=1e-10)

    def test_grad(self, rng):
        q, p = torch.as_tensor(rng.normal(size=(4, 6))), torch.as_tensor(rng.normal(size=(4, 6)))
        assert grad_check(lambda a, b: contrastive_loss(a, b, 0.5), [q, p]) < 1e-4

    def test_degenerate(self, enc64):
        with pytest.raises(DegenerateBatch):
            contrastive_loss(torch.randn(1, 4), torch.randn(1, 4))
        img = np.zeros((16, 16, 3))
        with pytest.raises(DegenerateBatch):
            contrastive_step([img, img], [img, img], enc64, positive_ids=[3, 3])

    def test_step_trains(self, rng):
        torch.manual_seed(1)
        enc = Encoder(ENC)
        obs = [rng.random((16, 16, 3)).astype(np.float32) for _ in range(4)]
        pos = [o[::-1].copy() for o in obs]
        loss = contrastive_step(obs, pos, enc, 0.07, positive_ids=[0, 1, 2, 3])
        assert loss.requires_grad and math.isfinite(float(loss.detach()))


class TestMemory:
    def test_arithmetic(self):
        db = ReferenceDB(np.arange(4096), torch.zeros(4096, 128), np.zeros((4096, 2)))
        rep = memory_report(db, num_steps=4)
        assert rep["db_embedding_bytes"] == 4096 * 128 * 4 == 2_097_152
        assert rep["zoom_query_bytes"] == zoom_query_bytes(4, 128) == 2560

    def test_empty_is_header_only(self):
        empty = ReferenceDB(np.zeros(0, np.int64), torch.zeros(0, 16), np.zeros((0, 2)))
        rep = memory_report(empty)
        assert rep["db_embedding_bytes"] == 0
        assert rep["db_serialized_bytes"] == rep["db_header_bytes"]

    def test_serialized_bytes_exact(self):
        n, d = 100, 16
        db = ReferenceDB(np.arange(n), torch.zeros(n, d), np.zeros((n, 2)))
        rep = memory_report(db)
        # ids (i32) + embeddings (f32) + centers (f32), 4 bytes each
        assert rep["db_serialized_bytes"] - rep["db_header_bytes"] == 4 * (n + n * d + 2 * n)

    def test_scaling_contrast(self):
        d = 128
        small = ReferenceDB(np.arange(4096), torch.zeros(4096, d), np.zeros((4096, 2)))
        big = ReferenceDB(np.arange(4 * 4096), torch.zeros(4 * 4096, d), np.zeros((4 * 4096, 2)))
        assert memory_report(big)["db_embedding_bytes"] == 4 * memory_report(small)["db_embedding_bytes"]
        assert zoom_query_bytes(4, d) - zoom_query_bytes(3, d) == d * 4
