"""Curated training data: control extraction/normalization, control-space
curation bins, the FPDS shard format, and batch assembly (rasterize-on-read).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import simengine
from .agents import ACCEL_BOUNDS, KAPPA_BOUND
from .bev import AugmentNoise, RasterConfig, augment, rasterize

SHARD_MAGIC = b"FPDS"
SHARD_VERSION = 1

DEFAULT_HORIZON = 16   # desk scale (0.8 s); paper scale uses 64


class InsufficientHorizonError(ValueError):
    pass


class ShardFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ControlSequence:
    """n x 2 grid of (acceleration, curvature), physical or normalized units."""
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("control sequence must be (n, 2)")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def normalize_controls(z: ControlSequence) -> ControlSequence:
    """Affine map to [-1, 1]^2: a in [-3, 2] -> (2a+1)/5; kappa in
    [-0.2, 0.2] -> 5*kappa."""
    if z.normalized:
        raise ValueError("already normalized")
    out = np.empty_like(z.values)
    out[:, 0] = (2.0 * z.values[:, 0] + 1.0) / 5.0
    out[:, 1] = 5.0 * z.values[:, 1]
    return ControlSequence(out, normalized=True)


def denormalize_controls(z: ControlSequence) -> ControlSequence:
    """Exact inverse of normalize_controls, clamped to the physical bounds."""
    if not z.normalized:
        raise ValueError("not normalized")
    out = np.empty_like(z.values)
    out[:, 0] = np.clip((5.0 * z.values[:, 0] - 1.0) / 2.0, ACCEL_BOUNDS[0], ACCEL_BOUNDS[1])
    out[:, 1] = np.clip(z.values[:, 1] / 5.0, -KAPPA_BOUND, KAPPA_BOUND)
    return ControlSequence(out, normalized=False)


def extract_controls(episode: simengine.EpisodeRecord, frame: int, n: int) -> ControlSequence:
    """The recorded ego actions over frames [frame, frame+n), physical units."""
    if frame < 0 or frame + n > len(episode.frames):
        raise InsufficientHorizonError(
            f"frame {frame} + horizon {n} exceeds episode length {len(episode.frames)}")
    vals = np.array([episode.frames[k].ego_action for k in range(frame, frame + n)], np.float64)
    return ControlSequence(vals, normalized=False)


def episode_control_stats(episode: simengine.EpisodeRecord) -> tuple:
    acts = np.array([fr.ego_action for fr in episode.frames], np.float64)
    return float(np.mean(np.abs(acts[:, 0]))), float(np.mean(np.abs(acts[:, 1])))


@dataclass
class CurationBins:
    """2D histogram over (mean |a|, mean |kappa|) of whole episodes, with a
    per-bin capacity that rejects episodes landing in saturated bins."""
    a_edges: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 3.0, 9))
    k_edges: np.ndarray = field(default_factory=lambda: np.linspace(0.0, KAPPA_BOUND, 9))
    capacity: float = 200
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.a_edges = np.asarray(self.a_edges, np.float64)
        self.k_edges = np.asarray(self.k_edges, np.float64)
        if np.any(np.diff(self.a_edges) <= 0) or np.any(np.diff(self.k_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if self.counts is None:
            self.counts = np.zeros((len(self.a_edges) - 1, len(self.k_edges) - 1), np.int64)

    def bin_of(self, mean_a: float, mean_k: float) -> tuple:
        i = int(np.clip(np.digitize(mean_a, self.a_edges) - 1, 0, self.counts.shape[0] - 1))
        j = int(np.clip(np.digitize(mean_k, self.k_edges) - 1, 0, self.counts.shape[1] - 1))
        return i, j


def accept_episode(bins: CurationBins, episode: simengine.EpisodeRecord):
    """Keep only successful episodes whose control bin is below capacity; on
    acceptance the bin count is incremented.  Returns (accepted, bins)."""
    if episode.outcome != "success":
        return False, bins
    i, j = bins.bin_of(*episode_control_stats(episode))
    if bins.counts[i, j] >= bins.capacity:
        return False, bins
    bins.counts[i, j] += 1
    return True, bins


# ---------------------------------------------------------------------------
# FPDS shards: references into episode files plus normalized targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShardSample:
    episode_file: str
    frame: int
    ego_id: int
    target: np.ndarray             # (n, 2) normalized float64


def raster_config_digest(config: RasterConfig) -> str:
    blob = json.dumps({"resolution": config.resolution, "extent": config.extent,
                       "v_max": config.v_max, "ego_value": config.ego_value,
                       "min_visible": config.min_visible, "line_px": config.line_px},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_shard(samples, path, horizon: int, config: RasterConfig = RasterConfig()):
    """Append-only shard with a versioned header and per-sample CRC32."""
    digest = raster_config_digest(config).encode()
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<HH", SHARD_VERSION, horizon))
        fh.write(digest)
        for s in samples:
            name = s.episode_file.encode()
            target = np.ascontiguousarray(s.target, "<f8")
            if target.shape != (horizon, 2):
                raise ValueError(f"target shape {target.shape} != ({horizon}, 2)")
            payload = struct.pack("<H", len(name)) + name
            payload += struct.pack("<II", s.frame, s.ego_id)
            payload += target.tobytes()
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))


def read_shard(path, config: RasterConfig | None = RasterConfig()):
    """Yields every sample; raises ShardFormatError on version/hash/checksum
    mismatch or truncation (no partial sample is yielded).  Pass config=None
    to skip the raster-config hash check."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != SHARD_MAGIC:
            raise ShardFormatError(f"{path}: bad magic {head!r}")
        version, horizon = struct.unpack("<HH", fh.read(4))
        if version != SHARD_VERSION:
            raise ShardFormatError(f"{path}: unsupported shard version {version}")
        digest = fh.read(16).decode()
        if config is not None and digest != raster_config_digest(config):
            raise ShardFormatError(f"{path}: raster config hash mismatch")
        samples = []
        while True:
            size_raw = fh.read(4)
            if not size_raw:
                break
            if len(size_raw) < 4:
                raise ShardFormatError(f"{path}: truncated record header")
            size, = struct.unpack("<I", size_raw)
            payload = fh.read(size)
            crc_raw = fh.read(4)
            if len(payload) < size or len(crc_raw) < 4:
                raise ShardFormatError(f"{path}: truncated record")
            crc, = struct.unpack("<I", crc_raw)
            if zlib.crc32(payload) != crc:
                raise ShardFormatError(f"{path}: checksum mismatch")
            name_len, = struct.unpack("<H", payload[:2])
            pos = 2
            name = payload[pos:pos + name_len].decode()
            pos += name_len
            frame, ego_id = struct.unpack("<II", payload[pos:pos + 8])
            pos += 8
            target = np.frombuffer(payload[pos:], "<f8").reshape(horizon, 2).copy()
            samples.append(ShardSample(episode_file=name, frame=frame, ego_id=ego_id,
                                       target=target))
    return horizon, samples


def curate_episodes(records, filenames, horizon: int, bins: CurationBins):
    """Run curation over (record, filename) pairs in order; returns the shard
    samples of every accepted episode (one sample per frame with full horizon)
    and the per-episode accept decisions."""
    samples = []
    decisions = []
    for record, filename in zip(records, filenames):
        ok, bins = accept_episode(bins, record)
        decisions.append(ok)
        if not ok:
            continue
        for frame in range(0, len(record.frames) - horizon + 1):
            z = extract_controls(record, frame, horizon)
            samples.append(ShardSample(episode_file=filename, frame=frame,
                                       ego_id=record.ego_id,
                                       target=normalize_controls(z).values))
    return samples, decisions, bins


# ---------------------------------------------------------------------------
# batch assembly for training
# ---------------------------------------------------------------------------

class DataSource:
    """Maps shard samples back to episode frames and rasterizes on demand.

    Rasters are never stored; each batch re-renders (and optionally perturbs)
    the referenced frames.
    """

    def __init__(self, samples, episodes_dir, scenarios, config: RasterConfig = RasterConfig(),
                 noise: AugmentNoise | None = AugmentNoise(), rebalance: bool = False):
        if not samples:
            raise ValueError("empty sample list")
        self.samples = list(samples)
        self.config = config
        self.noise = noise
        self.scenarios = dict(scenarios)
        self._episodes = {}
        self._episodes_dir = episodes_dir
        self.horizon = self.samples[0].target.shape[0]
        self.weights = None
        if rebalance:
            bins = CurationBins(capacity=np.inf)
            keys = [bins.bin_of(float(np.mean(np.abs(s.target[:, 0]))),
                                float(np.mean(np.abs(s.target[:, 1])))) for s in self.samples]
            counts = {}
            for k in keys:
                counts[k] = counts.get(k, 0) + 1
            w = np.array([1.0 / counts[k] for k in keys])
            self.weights = w / w.sum()

    def _episode(self, name) -> simengine.EpisodeRecord:
        rec = self._episodes.get(name)
        if rec is None:
            rec = simengine.read_episode(os.path.join(self._episodes_dir, name))
            self._episodes[name] = rec
        return rec

    def sample_batch(self, rng: np.random.Generator, batch: int):
        """Returns (rasters (B,4,H,W) float32, targets (B,n,2) float64)."""
        idx = rng.choice(len(self.samples), size=batch, p=self.weights)
        size = self.config.size
        rasters = np.empty((batch, 4, size, size), np.float32)
        targets = np.empty((batch, self.horizon, 2), np.float64)
        for b, i in enumerate(idx):
            s = self.samples[int(i)]
            record = self._episode(s.episode_file)
            scenario = self.scenarios[record.scenario_id]
            snap = simengine.frame_snapshot(record, s.frame, scenario)
            if self.noise is not None:
                snap = augment(snap, s.ego_id, rng, self.noise)
            route = scenario.routes[record.route_index]
            raster = rasterize(snap, s.ego_id, route, self.config)
            rasters[b] = raster.channels
            targets[b] = s.target
        return rasters, targets
