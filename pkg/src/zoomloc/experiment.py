"""Run configuration, datasets, training loops, evaluation and comparison reports."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint
from .curation import CurationPolicy
from .encoder import Encoder, EncoderConfig, pretrain_reconstruction
from .errors import ConfigError, ConfigMismatch, EmptyEvalSet, NonFinite
from .geo import PyramidConfig, geo_from_local_array, haversine_m, leaf_index, recall_from_distances
from .nn import DecoderConfig, OptimizerState, adamw_step, clip_global_norm
from .policy import PolicyConfig, PolicyModel
from .retrieval import (ReferenceDB, build_reference_db, contrastive_step, memory_report, retrieve_batch,
                        zoom_query_bytes)
from .world import (EpisodePlan, TileCache, World, WorldConfig, generate_world, plan_episodes,
                    render_observation)

log = logging.getLogger(__name__)

REPORT_SCHEMA = "zoomloc.eval/1"
COMPARE_SCHEMA = "zoomloc.compare/1"
THRESHOLDS = (40.0, 50.0, 100.0)


# ---------------------------------------------------------------------------
# configuration


_DEFAULT_OPT = {"lr": 3e-4, "betas": [0.9, 0.999], "eps": 1e-8, "weight_decay": 0.01, "clip_norm": 1.0}


@dataclass(frozen=True)
class DataConfig:
    world_seed: int = 7
    episode_seed: int = 1
    episodes: int = 16500
    eval_fraction: float = 0.03
    min_spacing: float = 4.0


@dataclass(frozen=True)
class RunConfig:
    pyramid: PyramidConfig = field(default_factory=lambda: PyramidConfig(num_steps=3, aoi_side=2000.0))
    world: WorldConfig = field(default_factory=WorldConfig)
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(patch_size=16, depth=2, trainable_depth=2))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    optimizer: dict = field(default_factory=lambda: dict(_DEFAULT_OPT))
    curation: CurationPolicy = field(default_factory=CurationPolicy)
    data: DataConfig = field(default_factory=DataConfig)
    epochs: int = 30
    batch_size: int = 128
    max_steps: int | None = None
    seed: int = 0
    mode: str = "train"
    top_s: int = 0
    pretrain_steps: int = 0
    temperature: float = 0.07
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.world.extent != self.pyramid.aoi_side:
            raise ConfigError(f"world extent {self.world.extent} != pyramid aoi_side {self.pyramid.aoi_side}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")

    def policy_config(self) -> PolicyConfig:
        dec = replace(self.decoder, action_vocab=self.pyramid.num_actions)
        return PolicyConfig(pyramid=self.pyramid, encoder=self.encoder, decoder=dec, top_s=self.top_s)

    def optimizer_state(self) -> OptimizerState:
        o = self.optimizer
        return OptimizerState(lr=float(o["lr"]), betas=tuple(o["betas"]), eps=float(o["eps"]),
                              weight_decay=float(o["weight_decay"]), clip_norm=float(o["clip_norm"]))

    def to_dict(self) -> dict:
        return {
            "pyramid": self.pyramid.to_dict(),
            "world": self.world.to_dict(),
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "optimizer": dict(self.optimizer),
            "curation": self.curation.to_dict(),
            "data": self.data.__dict__.copy(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "mode": self.mode,
            "top_s": self.top_s,
            "pretrain_steps": self.pretrain_steps,
            "temperature": self.temperature,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if "seed" not in d:
            raise ConfigError("run config must set a seed")
        d = dict(d)
        kw = {}
        try:
            if "pyramid" in d:
                kw["pyramid"] = PyramidConfig.from_dict(d.pop("pyramid"))
            if "world" in d:
                kw["world"] = WorldConfig.from_dict(d.pop("world"))
            if "encoder" in d:
                kw["encoder"] = EncoderConfig(**d.pop("encoder"))
            if "decoder" in d:
                kw["decoder"] = DecoderConfig(**d.pop("decoder"))
            if "curation" in d:
                kw["curation"] = CurationPolicy.from_dict(d.pop("curation"))
            if "data" in d:
                kw["data"] = DataConfig(**d.pop("data"))
            if "optimizer" in d:
                opt = dict(_DEFAULT_OPT)
                opt.update(d.pop("optimizer"))
                kw["optimizer"] = opt
            kw.update(d)
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


MODES = ("train", "eval", "localize", "compare", "heatmap", "curate", "build-world")


def desk_profile(**overrides) -> RunConfig:
    """2 km AOI, K = 4, N = 3: 4096 leaves of 31.25 m.

    Sized for a single CPU core: a higher learning rate and a 2000-step cap
    (about 8 minutes) instead of the full 30 epochs.
    """
    base = dict(optimizer=dict(_DEFAULT_OPT, lr=1e-3), max_steps=2000)
    base.update(overrides)
    return RunConfig(**base)


def main_profile(**overrides) -> RunConfig:
    """10 km AOI, K = 4, N = 4, with the larger encoder."""
    base = dict(
        pyramid=PyramidConfig(num_steps=4, aoi_side=10000.0),
        world=WorldConfig(extent=10000.0),
        encoder=EncoderConfig(patch_size=8, depth=4, trainable_depth=4),
        data=DataConfig(episodes=60000),
    )
    base.update(overrides)
    return RunConfig(**base)


PROFILES = {"desk": desk_profile, "main": main_profile}


def load_config(path: str | Path | None, seed: int | None = None, profile: str = "desk") -> RunConfig:
    if path is None:
        cfg = PROFILES[profile]()
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        prof = raw.pop("profile", profile)
        if prof not in PROFILES:
            raise ConfigError(f"unknown profile {prof!r}")
        base = PROFILES[prof]().to_dict()
        for key, val in raw.items():
            if isinstance(val, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **val}
            else:
                base[key] = val
        cfg = RunConfig.from_dict(base)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


# ---------------------------------------------------------------------------
# data


def location_hash(u: float, v: float) -> float:
    """Uniform [0, 1) value from the millimeter-quantized location."""
    key = f"{round(u * 1000)}:{round(v * 1000)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") / 2.0 ** 64


class Dataset:
    """World, episode plan, hash-based train/eval split and lazily rendered observations."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.pyramid = cfg.pyramid
        self.world: World = generate_world(cfg.data.world_seed, cfg.world)
        self.plan: EpisodePlan = plan_episodes(self.world, self.pyramid, cfg.data.episodes,
                                               cfg.data.episode_seed, cfg.data.min_spacing)
        h = np.array([location_hash(u, v) for u, v in self.plan.locations])
        is_eval = h < cfg.data.eval_fraction
        self.train_idx = np.flatnonzero(~is_eval)
        self.eval_idx = np.flatnonzero(is_eval)
        self._obs: dict[int, np.ndarray] = {}
        self.check_split()

    def check_split(self) -> None:
        key = lambda i: (round(self.plan.locations[i, 0] * 1000), round(self.plan.locations[i, 1] * 1000))
        train = {key(i) for i in self.train_idx}
        if any(key(i) in train for i in self.eval_idx):
            raise ConfigError("train and eval location sets overlap")

    @property
    def world_digest(self) -> str:
        return self.world.digest()

    def observation(self, i: int) -> np.ndarray:
        img = self._obs.get(int(i))
        if img is None:
            p = self.plan.local(int(i))
            img = render_observation(self.world, p, float(self.plan.headings[i]), float(self.plan.fovs[i]),
                                     int(self.plan.noise_seeds[i])).pixels
            self._obs[int(i)] = img
        return img

    def observations(self, idx: Sequence[int]) -> np.ndarray:
        return np.stack([self.observation(i) for i in idx])

    def locations_geo(self, idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        loc = self.plan.locations[np.asarray(idx)]
        return geo_from_local_array(loc[:, 0], loc[:, 1], self.pyramid)

    def tiles(self) -> TileCache:
        return TileCache(self.world, self.pyramid)


# ---------------------------------------------------------------------------
# model (de)serialization


def model_sections(model: torch.nn.Module, state: OptimizerState | None = None) -> dict:
    sec = {"params": {k: v.detach() for k, v in model.state_dict().items()}}
    if state is not None and state.exp_avg:
        sec["optim.m"] = dict(state.exp_avg)
        sec["optim.v"] = dict(state.exp_avg_sq)
    return sec


def load_params(model: torch.nn.Module, params: dict[str, np.ndarray]) -> None:
    dtype = next(model.parameters()).dtype
    model.load_state_dict({k: torch.from_numpy(np.array(v)).to(dtype) for k, v in params.items()})


def save_model(path: Path, kind: str, cfg: RunConfig, model, step: int, world_digest: str,
               state: OptimizerState | None = None, extra_sections: dict | None = None) -> None:
    head = {"kind": kind, "run": cfg.to_dict(), "step": step, "world_digest": world_digest,
            "optimizer": state.hyper() if state else None}
    sections = model_sections(model, state)
    if extra_sections:
        sections.update(extra_sections)
    checkpoint.save(path, head, sections)


@dataclass
class LoadedModel:
    kind: str
    cfg: RunConfig
    model: torch.nn.Module
    step: int
    world_digest: str
    state: OptimizerState | None
    db: ReferenceDB | None = None


def load_model(path: str | Path) -> LoadedModel:
    head, sections = checkpoint.load(path)
    cfg = RunConfig.from_dict(head["run"])
    torch.manual_seed(cfg.seed)
    if head["kind"] == "policy":
        model = PolicyModel(cfg.policy_config())
    elif head["kind"] == "baseline":
        model = Encoder(cfg.encoder)
    else:
        raise ConfigError(f"unknown checkpoint kind {head['kind']!r}")
    load_params(model, sections["params"])
    if head["kind"] == "policy":
        model.encoder.set_trainable_depth(cfg.encoder.trainable_depth)
    else:
        model.set_trainable_depth(cfg.encoder.trainable_depth)
    state = None
    if head.get("optimizer"):
        o = head["optimizer"]
        state = OptimizerState(lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"], weight_decay=o["weight_decay"],
                               clip_norm=o["clip_norm"], step=o["step"])
        state.exp_avg = {k: torch.from_numpy(np.array(v)) for k, v in sections.get("optim.m", {}).items()}
        state.exp_avg_sq = {k: torch.from_numpy(np.array(v)) for k, v in sections.get("optim.v", {}).items()}
    db = None
    if "refdb" in sections:
        r = sections["refdb"]
        db = ReferenceDB(leaf_ids=r["leaf_ids"].astype(np.int64), embeddings=torch.from_numpy(np.array(r["embeddings"])),
                         centers=r["centers"].astype(np.float64))
    return LoadedModel(head["kind"], cfg, model, int(head["step"]), head["world_digest"], state, db)


# ---------------------------------------------------------------------------
# training


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.Generator(np.random.PCG64([int(seed), int(epoch)])).permutation(n)


def _schedule(cfg: RunConfig, n_train: int) -> tuple[int, int]:
    per_epoch = max(1, n_train // cfg.batch_size)
    total = per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    return per_epoch, total


def _batch_indices(cfg: RunConfig, train_idx: np.ndarray, step: int, per_epoch: int) -> np.ndarray:
    epoch, b = divmod(step, per_epoch)
    order = _epoch_order(cfg.seed, epoch, len(train_idx))
    return train_idx[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list
    steps: int


def _write_curve(path: Path, losses: Sequence[tuple[int, float]]) -> None:
    with open(path, "w") as fh:
        for s, l in losses:
            fh.write(f"{s} {l:.17g}\n")


def read_curve(path: str | Path) -> list[tuple[int, float]]:
    out = []
    for line in Path(path).read_text().splitlines():
        s, l = line.split()
        out.append((int(s), float(l)))
    return out


def init_policy(cfg: RunConfig) -> PolicyModel:
    torch.manual_seed(cfg.seed)
    return PolicyModel(cfg.policy_config())


def train_policy(cfg: RunConfig, out_dir: str | Path, dataset: Dataset | None = None, resume: str | Path | None = None,
                 progress: Callable[[int, float], None] | None = None, stop_after: int | None = None) -> TrainResult:
    """Teacher-forced training: loss -> backward -> clip -> AdamW per minibatch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset or Dataset(cfg)
    tiles = ds.tiles()
    if resume is not None:
        lm = load_model(resume)
        if lm.world_digest != ds.world_digest:
            raise ConfigMismatch("checkpoint was trained on a different world")
        model, state, start = lm.model, lm.state or cfg.optimizer_state(), lm.step
        losses = read_curve(out / "loss_curve.txt") if (out / "loss_curve.txt").exists() else []
        losses = [x for x in losses if x[0] < start]
    else:
        model = init_policy(cfg)
        state, start, losses = cfg.optimizer_state(), 0, []
        if cfg.pretrain_steps and cfg.encoder.trainable_depth < cfg.encoder.depth:
            imgs = [tiles(a) for a in _internal_addresses(cfg.pyramid)]
            imgs += [ds.observation(i) for i in ds.train_idx[:512]]
            _pretrain_mixed(model.encoder, imgs, cfg)
    model.train()
    params = {k: p for k, p in model.named_parameters() if p.requires_grad}
    per_epoch, total = _schedule(cfg, len(ds.train_idx))
    end = total if stop_after is None else min(total, stop_after)
    for step in range(start, end):
        idx = _batch_indices(cfg, ds.train_idx, step, per_epoch)
        acts = torch.as_tensor(ds.plan.actions[idx], dtype=torch.long)
        loss = model.forward_loss(ds.observations(idx), acts, tiles)
        if not torch.isfinite(loss):
            raise NonFinite(f"non-finite loss at step {step}")
        grads = torch.autograd.grad(loss, list(params.values()))
        grads, _ = clip_global_norm(grads, state.clip_norm)
        adamw_step(params, dict(zip(params, grads)), state)
        lv = float(loss.detach())
        losses.append((step, lv))
        if progress:
            progress(step, lv)
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < end:
            save_model(out / f"policy_step{step + 1}.ckpt", "policy", cfg, model, step + 1, ds.world_digest, state)
    path = out / "policy.ckpt"
    save_model(path, "policy", cfg, model, end, ds.world_digest, state)
    _write_curve(out / "loss_curve.txt", losses)
    return TrainResult(path, losses, end)


def _internal_addresses(pyramid: PyramidConfig) -> list[tuple]:
    out = [()]
    frontier = [()]
    for _ in range(pyramid.num_steps - 1):
        frontier = [a + (k,) for a in frontier for k in range(pyramid.num_actions)]
        out += frontier
    return out


def _pretrain_mixed(encoder: Encoder, images: list[np.ndarray], cfg: RunConfig) -> None:
    by_shape: dict[tuple, list] = {}
    for im in images:
        by_shape.setdefault(im.shape, []).append(im)
    for k, group in enumerate(sorted(by_shape)):
        pretrain_reconstruction(encoder, torch.as_tensor(np.stack(by_shape[group])), cfg.pretrain_steps,
                                seed=cfg.seed + k)


def train_baseline(cfg: RunConfig, out_dir: str | Path, dataset: Dataset | None = None,
                   progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """In-batch contrastive training of the encoder on (observation, leaf tile) pairs, then DB build."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset or Dataset(cfg)
    tiles = ds.tiles()
    torch.manual_seed(cfg.seed)
    enc = Encoder(cfg.encoder)
    state = cfg.optimizer_state()
    params = {k: p for k, p in enc.named_parameters() if p.requires_grad}
    per_epoch, total = _schedule(cfg, len(ds.train_idx))
    losses = []
    for step in range(total):
        idx = _batch_indices(cfg, ds.train_idx, step, per_epoch)
        leaves = [leaf_index(a, cfg.pyramid) for a in ds.plan.actions[idx]]
        keep, seen = [], set()
        for j, lf in enumerate(leaves):
            if lf not in seen:
                seen.add(lf)
                keep.append(j)
        idx = idx[keep]
        if len(idx) < 2:
            continue
        pos = [tiles(tuple(int(x) for x in ds.plan.actions[i])) for i in idx]
        loss = contrastive_step(ds.observations(idx), pos, enc, cfg.temperature)
        if not torch.isfinite(loss):
            raise NonFinite(f"non-finite loss at step {step}")
        grads = torch.autograd.grad(loss, list(params.values()))
        grads, _ = clip_global_norm(grads, state.clip_norm)
        adamw_step(params, dict(zip(params, grads)), state)
        losses.append((step, float(loss.detach())))
        if progress:
            progress(step, losses[-1][1])
    enc.eval()
    db = build_reference_db(tiles, enc, cfg.pyramid)
    path = out / "baseline.ckpt"
    save_model(path, "baseline", cfg, enc, total, ds.world_digest, state, {"refdb": db.to_section()})
    _write_curve(out / "baseline_loss_curve.txt", losses)
    return TrainResult(path, losses, total)


# ---------------------------------------------------------------------------
# evaluation


def _recalls(dist: np.ndarray, thresholds: Sequence[float]) -> dict:
    return {f"{t:g}": recall_from_distances(dist, t) for t in thresholds}


def evaluate_policy(model: PolicyModel, ds: Dataset, idx: Sequence[int] | None = None,
                    thresholds: Sequence[float] = THRESHOLDS, batch_size: int = 250) -> dict:
    idx = ds.eval_idx if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise EmptyEvalSet("no evaluation episodes")
    tiles = ds.tiles()
    model.eval()
    traces = []
    for i in range(0, len(idx), batch_size):
        traces += model.localize_batch(list(ds.observations(idx[i:i + batch_size])), tiles)
    lat, lon = ds.locations_geo(idx)
    plat = np.array([t.prediction.latitude for t in traces])
    plon = np.array([t.prediction.longitude for t in traces])
    dist = haversine_m(plat, plon, lat, lon)
    hits = np.array([t.actions == tuple(ds.plan.actions[j]) for t, j in zip(traces, idx)])
    n = ds.pyramid.num_steps
    return {
        "recall": _recalls(dist, thresholds),
        "terminal_accuracy": float(hits.mean()),
        "num_queries": int(len(idx)),
        "median_error_m": float(np.median(dist)),
        "memory": {"zoom_query_bytes": zoom_query_bytes(n, model.cfg.decoder.hidden_dim),
                   "tile_images_per_query": n, "ground_images_per_query": 1},
        "traces": [dict(t.to_record(), index=int(j), error_m=float(d)) for t, j, d in zip(traces, idx, dist)],
    }


def evaluate_baseline(encoder: Encoder, db: ReferenceDB, ds: Dataset, idx: Sequence[int] | None = None,
                      thresholds: Sequence[float] = THRESHOLDS) -> dict:
    idx = ds.eval_idx if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise EmptyEvalSet("no evaluation episodes")
    encoder.eval()
    rows = retrieve_batch(list(ds.observations(idx)), db, encoder)
    lat, lon = ds.locations_geo(idx)
    pred = db.centers[rows]
    dist = haversine_m(pred[:, 0], pred[:, 1], lat, lon)
    truth = np.array([leaf_index(a, ds.pyramid) for a in ds.plan.actions[idx]])
    mem = memory_report(db)
    return {
        "recall": _recalls(dist, thresholds),
        "terminal_accuracy": float(np.mean(db.leaf_ids[rows] == truth)),
        "num_queries": int(len(idx)),
        "median_error_m": float(np.median(dist)),
        "memory": mem,
        "traces": [{"index": int(j), "row": int(r), "lat": float(p[0]), "lon": float(p[1]), "error_m": float(d)}
                   for j, r, p, d in zip(idx, rows, pred, dist)],
    }


def evaluate(ckpt: str | Path, cfg: RunConfig | None = None, dataset: Dataset | None = None,
             thresholds: Sequence[float] = THRESHOLDS, deterministic: bool = False) -> dict:
    """Evaluation report for a policy or baseline checkpoint on the held-out split."""
    t0 = time.perf_counter()
    lm = load_model(ckpt)
    cfg = cfg or lm.cfg
    ds = dataset or Dataset(cfg)
    if lm.world_digest != ds.world_digest:
        raise ConfigMismatch("checkpoint world differs from the evaluation world")
    if lm.kind == "policy":
        res = evaluate_policy(lm.model, ds, thresholds=thresholds)
    else:
        res = evaluate_baseline(lm.model, lm.db, ds, thresholds=thresholds)
    report = {"schema": REPORT_SCHEMA, "model": lm.kind, "config_hash": lm.cfg.hash(),
              "checkpoint_step": lm.step, "world_digest": lm.world_digest, **res}
    if not deterministic:
        report["wall_clock_s"] = time.perf_counter() - t0
    return report


def check_report(report: dict) -> None:
    """Schema and invariant checks for an evaluation report."""
    if report.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"unexpected schema {report.get('schema')!r}")
    r = report["recall"]
    vals = [r[k] for k in sorted(r, key=float)]
    if any(not 0.0 <= v <= 100.0 for v in vals):
        raise ValueError("recall outside [0, 100]")
    if any(a > b for a, b in zip(vals, vals[1:])):
        raise ValueError("recall not monotone in the threshold")


def compare(policy_ckpts: Sequence[str | Path], baseline_ckpt: str | Path, dataset: Dataset | None = None,
            deterministic: bool = False) -> dict:
    """Side-by-side recalls and memory accounting; records the outcome without asserting it."""
    loaded = [load_model(p) for p in policy_ckpts]
    base = load_model(baseline_ckpt)
    digests = {lm.world_digest for lm in loaded} | {base.world_digest}
    if len(digests) != 1:
        raise ConfigMismatch("checkpoints were trained on different worlds")
    ds = dataset or Dataset(base.cfg)
    if ds.world_digest not in digests:
        raise ConfigMismatch("evaluation world differs from the checkpoints' world")
    rows = []
    t0 = time.perf_counter()
    b = evaluate_baseline(base.model, base.db, ds)
    rows.append(_row("Retrieval baseline", base, b, deterministic, t0))
    for lm in loaded:
        t0 = time.perf_counter()
        res = evaluate_policy(lm.model, ds)
        rows.append(_row(f"Ours (BS. = {lm.cfg.batch_size})", lm, res, deterministic, t0))
    best_policy = max(rows[1:], key=lambda r: r["recall"]["50"]) if len(rows) > 1 else None
    outcome = None
    if best_policy is not None:
        outcome = {k: best_policy["recall"][k] - rows[0]["recall"][k] for k in rows[0]["recall"]}
    return {"schema": COMPARE_SCHEMA, "world_digest": ds.world_digest, "num_queries": int(len(ds.eval_idx)),
            "rows": rows, "policy_minus_baseline": outcome}


def _row(label: str, lm: LoadedModel, res: dict, deterministic: bool, t0: float) -> dict:
    mem = res["memory"]
    row = {"method": label, "kind": lm.kind, "batch_size": lm.cfg.batch_size, "recall": res["recall"],
           "terminal_accuracy": res["terminal_accuracy"], "memory": mem, "hnm": False,
           "config_hash": lm.cfg.hash()}
    if not deterministic:
        row["wall_clock_s"] = time.perf_counter() - t0
    return row


def format_table(report: dict) -> str:
    """Human-readable rendering of a compare report."""
    lines = [f"{'Method':<22} {'R@40m':>7} {'R@50m':>7} {'R@100m':>7} {'Leaf acc':>9} {'Mem (bytes)':>12} {'HNM':>4}"]
    for r in report["rows"]:
        rec = r["recall"]
        mem = r["memory"].get("db_embedding_bytes", r["memory"].get("zoom_query_bytes"))
        lines.append(f"{r['method']:<22} {rec['40']:>7.2f} {rec['50']:>7.2f} {rec['100']:>7.2f} "
                     f"{100 * r['terminal_accuracy']:>8.2f}% {mem:>12d} {'no':>4}")
    return "\n".join(lines) + "\n"


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1)
