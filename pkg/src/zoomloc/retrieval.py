"""Flat contrastive-retrieval baseline over leaf tiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from .encoder import Encoder
from .errors import DegenerateBatch, EmptyDB, RenderFailure
from .geo import GeoPoint, PyramidConfig, actions_from_leaf_index, geo_from_local_array

FLOAT_BYTES = 4


@dataclass(frozen=True, eq=False)
class ReferenceDB:
    leaf_ids: np.ndarray      # (L,) row-major leaf indices
    embeddings: torch.Tensor  # (L, d), rows L2-normalized
    centers: np.ndarray       # (L, 2) latitude, longitude

    def __len__(self) -> int:
        return int(self.leaf_ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def center(self, row: int) -> GeoPoint:
        lat, lon = self.centers[row]
        return GeoPoint(float(lat), float(lon))

    def to_section(self) -> dict:
        return {"leaf_ids": self.leaf_ids.astype(np.int32), "embeddings": self.embeddings,
                "centers": self.centers.astype(np.float32)}

    def to_bytes(self) -> bytes:
        return checkpoint.dumps({"kind": "refdb"}, {"refdb": self.to_section()})


def leaf_centers(pyramid: PyramidConfig) -> np.ndarray:
    n = pyramid.leaves_per_side
    c = (np.arange(n) + 0.5) * pyramid.leaf_side
    cu, cv = np.meshgrid(c, c)
    lat, lon = geo_from_local_array(cu.ravel(), cv.ravel(), pyramid)
    return np.stack([lat, lon], axis=1)


@torch.no_grad()
def build_reference_db(tile_source, encoder: Encoder, pyramid: PyramidConfig, batch_size: int = 256,
                       leaf_ids: np.ndarray | None = None) -> ReferenceDB:
    """Embed every leaf tile's pooled token, row-major over the leaf grid."""
    ids = np.arange(pyramid.num_leaves) if leaf_ids is None else np.asarray(leaf_ids)
    dtype = encoder.summary.dtype
    rows = []
    for i in range(0, len(ids), batch_size):
        try:
            imgs = [tile_source(actions_from_leaf_index(j, pyramid)) for j in ids[i:i + batch_size]]
        except Exception as exc:
            raise RenderFailure(f"tile source failed: {exc}") from exc
        pooled, _ = encoder(torch.as_tensor(np.stack(imgs), dtype=dtype))
        rows.append(F.normalize(pooled, dim=-1))
    emb = torch.cat(rows) if rows else torch.zeros(0, encoder.cfg.embed_dim, dtype=dtype)
    return ReferenceDB(leaf_ids=ids.astype(np.int64), embeddings=emb, centers=leaf_centers(pyramid)[ids])


def rank_rows(query: torch.Tensor, db: ReferenceDB) -> torch.Tensor:
    """Rows ordered by cosine similarity to ``query (d,)``; ties keep the lower row first."""
    if len(db) == 0:
        raise EmptyDB("reference database is empty")
    q = F.normalize(query.to(db.embeddings.dtype), dim=-1)
    sims = db.embeddings @ q
    return torch.sort(sims, descending=True, stable=True).indices


@torch.no_grad()
def retrieve(observation, db: ReferenceDB, encoder: Encoder) -> torch.Tensor:
    emb = encoder.encode_image(observation).pooled
    return rank_rows(emb, db)


@torch.no_grad()
def retrieve_batch(observations, db: ReferenceDB, encoder: Encoder, batch_size: int = 256) -> np.ndarray:
    """Top-1 row for each observation."""
    if len(db) == 0:
        raise EmptyDB("reference database is empty")
    out = []
    for i in range(0, len(observations), batch_size):
        x = torch.as_tensor(np.stack(observations[i:i + batch_size]), dtype=db.embeddings.dtype)
        q = F.normalize(encoder(x)[0], dim=-1)
        sims = q @ db.embeddings.T
        for row in sims:
            out.append(int(torch.sort(row, descending=True, stable=True).indices[0]))
    return np.array(out, dtype=np.int64)


def contrastive_loss(query: torch.Tensor, positive: torch.Tensor, temperature: float = 0.07) -> torch.Tensor:
    """Symmetric in-batch cross-entropy over cosine logits / temperature."""
    if query.shape[0] < 2:
        raise DegenerateBatch("contrastive batch needs at least two pairs")
    q = F.normalize(query, dim=-1)
    p = F.normalize(positive, dim=-1)
    logits = q @ p.T / temperature
    labels = torch.arange(q.shape[0])
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels))


def contrastive_step(observations, positives, encoder: Encoder, temperature: float = 0.07,
                     positive_ids=None) -> torch.Tensor:
    """Loss for a batch of (observation, positive leaf tile) pairs; no hard-negative mining."""
    if len(observations) < 2:
        raise DegenerateBatch("contrastive batch needs at least two pairs")
    if positive_ids is not None and len(set(positive_ids)) != len(positive_ids):
        raise DegenerateBatch("positives must be distinct within a batch")
    dtype = encoder.summary.dtype
    q, _ = encoder(torch.as_tensor(np.stack(observations), dtype=dtype))
    p, _ = encoder(torch.as_tensor(np.stack(positives), dtype=dtype))
    return contrastive_loss(q, p, temperature)


def zoom_query_bytes(num_steps: int, dim: int) -> int:
    """Image embeddings retained per zoom query: the observation plus one tile per step."""
    return (num_steps + 1) * dim * FLOAT_BYTES


def memory_report(db: ReferenceDB, num_steps: int | None = None) -> dict:
    rows, dim = len(db), db.dim
    emb = rows * dim * FLOAT_BYTES
    header = len(ReferenceDB(db.leaf_ids[:0], db.embeddings[:0], db.centers[:0]).to_bytes())
    rep = {
        "rows": rows,
        "dim": dim,
        "db_embedding_bytes": emb,
        "db_serialized_bytes": len(db.to_bytes()),
        "db_header_bytes": header,
    }
    if num_steps is not None:
        rep["zoom_query_bytes"] = zoom_query_bytes(num_steps, dim)
    return rep
