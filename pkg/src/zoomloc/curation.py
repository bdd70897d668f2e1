"""Street-view manifest filtering: deviation, keyframe spacing, metadata, quality.

Manifests are JSON Lines, one capture record per line, field names as in
:class:`CaptureRecord`, timestamps RFC 3339. Every stage is an order-preserving
filter with inclusive thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import EmptyImage, InvalidConfig, ManifestParseError
from .geo import GeoPoint, geodesic_distance

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
# Distance thresholds are inclusive up to this slack; haversine noise at street scale is ~1e-9 m.
DISTANCE_TOL_M = 1e-6


def parse_time(s: str) -> datetime:
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    t = datetime.fromisoformat(s)
    if t.tzinfo is None:
        raise ValueError(f"timestamp {s!r} lacks a UTC offset")
    return t.astimezone(timezone.utc)


def format_time(t: datetime) -> str:
    return t.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class CaptureRecord:
    id: str
    gps: GeoPoint
    sfm_position: GeoPoint
    capture_time: datetime
    device: str
    quality_score: float
    sequence_id: str
    seq_index: int

    def __post_init__(self):
        if not 0.0 <= self.quality_score <= 1.0:
            raise ValueError(f"quality_score {self.quality_score} outside [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureRecord":
        return cls(
            id=str(d["id"]),
            gps=GeoPoint(*map(float, d["gps"])),
            sfm_position=GeoPoint(*map(float, d["sfm_position"])),
            capture_time=parse_time(d["capture_time"]),
            device=str(d["device"]),
            quality_score=float(d["quality_score"]),
            sequence_id=str(d["sequence_id"]),
            seq_index=int(d["seq_index"]),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "gps": [self.gps.latitude, self.gps.longitude],
            "sfm_position": [self.sfm_position.latitude, self.sfm_position.longitude],
            "capture_time": format_time(self.capture_time),
            "device": self.device,
            "quality_score": self.quality_score,
            "sequence_id": self.sequence_id,
            "seq_index": self.seq_index,
        }


@dataclass(frozen=True)
class CurationPolicy:
    max_gps_sfm_deviation: float = 5.0
    min_spacing: float = 4.0
    device_blocklist: frozenset = field(default_factory=frozenset)
    min_capture_time: datetime = EPOCH
    min_quality: float = 0.5

    def __post_init__(self):
        for name in ("max_gps_sfm_deviation", "min_spacing", "min_quality"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        object.__setattr__(self, "device_blocklist", frozenset(self.device_blocklist))

    @classmethod
    def from_dict(cls, d: dict) -> "CurationPolicy":
        d = dict(d)
        if "device_blocklist" in d:
            d["device_blocklist"] = frozenset(d["device_blocklist"])
        if "min_capture_time" in d and isinstance(d["min_capture_time"], str):
            d["min_capture_time"] = parse_time(d["min_capture_time"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "max_gps_sfm_deviation": self.max_gps_sfm_deviation,
            "min_spacing": self.min_spacing,
            "device_blocklist": sorted(self.device_blocklist),
            "min_capture_time": format_time(self.min_capture_time),
            "min_quality": self.min_quality,
        }


def filter_deviation(records: Sequence[CaptureRecord], policy: CurationPolicy) -> list[CaptureRecord]:
    limit = policy.max_gps_sfm_deviation + DISTANCE_TOL_M
    return [r for r in records if geodesic_distance(r.gps, r.sfm_position) <= limit]


def keyframe_spacing(records: Sequence[CaptureRecord], policy: CurationPolicy) -> list[CaptureRecord]:
    """Greedy per sequence: keep the first record, then any record at least
    ``min_spacing`` meters (refined positions) from the last one kept."""
    last: dict[str, GeoPoint] = {}
    out = []
    for r in records:
        prev = last.get(r.sequence_id)
        if prev is None or geodesic_distance(prev, r.sfm_position) >= policy.min_spacing - DISTANCE_TOL_M:
            out.append(r)
            last[r.sequence_id] = r.sfm_position
    return out


def filter_metadata(records: Sequence[CaptureRecord], policy: CurationPolicy) -> list[CaptureRecord]:
    return [r for r in records
            if r.device not in policy.device_blocklist and r.capture_time >= policy.min_capture_time]


def quality_screen(records: Sequence[CaptureRecord], policy: CurationPolicy) -> list[CaptureRecord]:
    return [r for r in records if r.quality_score >= policy.min_quality]


STAGES = (
    ("deviation", filter_deviation),
    ("spacing", keyframe_spacing),
    ("metadata", filter_metadata),
    ("quality", quality_screen),
)


def standardize_image(image: np.ndarray, size: tuple[int, int] = (512, 384)) -> np.ndarray:
    """Bilinear resample to ``size`` = (width, height); keeps the input dtype."""
    import torch
    import torch.nn.functional as F

    arr = np.asarray(image)
    if arr.ndim not in (2, 3) or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyImage(f"cannot standardize an image of shape {arr.shape}")
    w, h = size
    if arr.shape[:2] == (h, w):
        return arr.copy()
    x = torch.from_numpy(arr.astype(np.float64))
    x = x[None, None] if arr.ndim == 2 else x.permute(2, 0, 1)[None]
    y = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)[0]
    y = y[0] if arr.ndim == 2 else y.permute(1, 2, 0)
    out = y.numpy()
    if np.issubdtype(arr.dtype, np.integer):
        info = np.iinfo(arr.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(arr.dtype)


def read_manifest(lines: Iterable[str]) -> list[CaptureRecord]:
    records = []
    last_index: dict[str, int] = {}
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = CaptureRecord.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestParseError(no, f"{type(exc).__name__}: {exc}") from exc
        prev = last_index.get(rec.sequence_id)
        if prev is not None and rec.seq_index <= prev:
            raise ManifestParseError(no, f"seq_index {rec.seq_index} not increasing in sequence {rec.sequence_id!r}")
        last_index[rec.sequence_id] = rec.seq_index
        records.append(rec)
    return records


def write_manifest(records: Iterable[CaptureRecord], fh: TextIO) -> None:
    for r in records:
        fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def run_pipeline(records: Sequence[CaptureRecord], policy: CurationPolicy) -> tuple[list[CaptureRecord], list[tuple]]:
    """Apply the four stages in order; the report lists ``(stage, n_in, n_out)``."""
    report = []
    cur = list(records)
    for name, stage in STAGES:
        nxt = stage(cur, policy)
        report.append((name, len(cur), len(nxt)))
        cur = nxt
    return cur, report


def format_report(report: Sequence[tuple]) -> str:
    lines = [f"{'stage':<10} {'in':>8} {'out':>8} {'dropped':>8}"]
    for name, n_in, n_out in report:
        lines.append(f"{name:<10} {n_in:>8} {n_out:>8} {n_in - n_out:>8}")
    return "\n".join(lines) + "\n"
