"""The patch-loading engine.

Workers draw windows from a shared, pre-generated epoch plan (static
round-robin split, so total work is identical across concurrency
settings), fetch the covering tiles through a per-worker pool of
concurrent request slots, decode, assemble patches into batches, and hand
them to the consumer through a prefetch-bounded queue. The throughput
meter divides decoded pixel bytes (MB = 10^6 bytes) by wall-clock time
from just before the first request to the last patch delivery.
"""

import hashlib
import json
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import codecs
from .cog import CogDescriptor, decode_tile, parse_cog, tile_byte_extent
from .errors import ConfigError, MissingTile, SourceFailure, VerificationFailed
from .sampler import (
    PATCH_SIZES,
    SamplerPolicy,
    WindowSpec,
    sample_window,
    tiles_for_window,
)

TRIAL_LOG_SCHEMA = "cogstream.trial.v1"

WORKER_DOMAIN = (1, 2, 4, 8, 16, 32, 64)
THREAD_DOMAIN = (1, 2, 4, 8, 16, 32)
PREFETCH_DOMAIN = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class LoaderConfig:
    """One point in the benchmark search space plus run constants."""

    compression: str = "deflate6"
    patch_size: int = 256
    num_workers: int = 4
    num_threads: int = 1
    blocked: bool = False
    prefetch_factor: int = 2
    batch_size: int = 32
    epochs: int = 5
    patches_per_epoch: int = 1024

    def validate(self) -> None:
        if self.compression not in codecs.VARIANT_KEYS:
            raise ConfigError(
                f"compression must be one of {codecs.VARIANT_KEYS}, "
                f"got {self.compression!r}"
            )
        for name, value, domain in (
            ("patch_size", self.patch_size, PATCH_SIZES),
            ("num_workers", self.num_workers, WORKER_DOMAIN),
            ("num_threads", self.num_threads, THREAD_DOMAIN),
            ("prefetch_factor", self.prefetch_factor, PREFETCH_DOMAIN),
        ):
            if value not in domain:
                raise ConfigError(
                    f"{name} must be one of {domain}, got {value}"
                )
        if not isinstance(self.blocked, bool):
            raise ConfigError(f"blocked must be true or false, got {self.blocked!r}")
        for name, value in (
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patches_per_epoch", self.patches_per_epoch),
        ):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "LoaderConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


def config_hash(config: LoaderConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class Patch:
    """A decoded pixel window delivered to the consumer."""

    pixels: np.ndarray  # (p, p, bands) uint16
    window: WindowSpec
    source_scene: str


@dataclass
class ThroughputStats:
    decoded_bytes: int
    network_bytes: int
    tiles_fetched: int
    patches_delivered: int
    elapsed: float
    valid: bool = True

    @property
    def throughput_mbps(self) -> float:
        return self.decoded_bytes / 1e6 / self.elapsed if self.elapsed > 0 else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput_mbps"] = self.throughput_mbps
        return d


@dataclass
class TrialResult:
    config: LoaderConfig
    per_epoch: List[ThroughputStats]

    @property
    def mean_mbps(self) -> float:
        return float(np.mean([s.throughput_mbps for s in self.per_epoch]))

    @property
    def std_mbps(self) -> float:
        return float(np.std([s.throughput_mbps for s in self.per_epoch]))


# --- dataset plumbing --------------------------------------------------------

@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    variants: Mapping[str, str]  # variant key -> path or URL


class BenchDataset:
    """Scenes plus a way to open per-worker source handles for them."""

    def __init__(self, entries: List[SceneEntry], opener):
        if not entries:
            raise ConfigError("dataset has no scenes")
        self.entries = list(entries)
        self.opener = opener
        self._descs: Dict[str, CogDescriptor] = {}
        self._lock = threading.Lock()

    def locations(self, variant: str) -> List[str]:
        locs = []
        for entry in self.entries:
            loc = entry.variants.get(variant)
            if loc is None:
                raise ConfigError(
                    f"scene {entry.scene_id} has no {variant!r} variant"
                )
            locs.append(loc)
        return locs

    def descriptor(self, location: str) -> CogDescriptor:
        with self._lock:
            desc = self._descs.get(location)
        if desc is None:
            with self.opener.open(location, tag="meta") as src:
                desc = parse_cog(src)
            with self._lock:
                self._descs[location] = desc
        return desc


class LocalOpener:
    def open(self, location: str, tag: str = ""):
        from .sources import LocalSource

        return LocalSource(location, tag=tag)


class SimulatedOpener:
    """All handles share the store's shaper and log (one remote service)."""

    def __init__(self, store):
        self.store = store

    def open(self, location: str, tag: str = ""):
        return self.store.open(location, tag=tag)


class RemoteOpener:
    def open(self, location: str, tag: str = ""):
        from .sources import RemoteSource

        return RemoteSource(location, tag=tag)


# --- instrumentation ----------------------------------------------------------

@dataclass
class PatchEvent:
    worker: int
    scene: int
    window: WindowSpec
    tile_extents: List[Tuple[int, int, int, int]]  # (tx, ty, offset, length)
    fetch_completed: List[float]
    assembled_at: float
    delivered_at: float = 0.0


@dataclass
class BatchEvent:
    worker: int
    size: int
    completed_at: float
    delivered_at: float = 0.0


class EpochTrace:
    """Optional per-epoch event capture for concurrency-contract checks."""

    def __init__(self):
        self.patches: List[PatchEvent] = []
        self.batches: List[BatchEvent] = []

    def max_undelivered_batches(self, worker: int) -> int:
        """Peak count of completed-but-undelivered batches for one worker."""
        events = []
        for b in self.batches:
            if b.worker == worker:
                events.append((b.completed_at, 1))
                events.append((b.delivered_at, -1))
        events.sort()
        peak = cur = 0
        for _, delta in events:
            cur += delta
            peak = max(peak, cur)
        return peak


# --- epoch execution ------------------------------------------------------------

class _Counters:
    def __init__(self):
        self._lock = threading.Lock()
        self.tiles_fetched = 0
        self.network_bytes = 0

    def add(self, tiles: int, nbytes: int) -> None:
        with self._lock:
            self.tiles_fetched += tiles
            self.network_bytes += nbytes


@dataclass
class _Batch:
    worker: int
    patches: List[Patch]
    events: List[PatchEvent]
    completed_at: float


@dataclass
class _WorkerFailure:
    worker: int
    error: Exception


def assemble_patch(desc: CogDescriptor, window: WindowSpec,
                   tiles: Mapping[Tuple[int, int], np.ndarray],
                   source_scene: str = "") -> Patch:
    """Pixel-exact window extraction across tile seams."""
    out = np.empty((window.height, window.width, desc.bands), dtype=np.uint16)
    kx, ky = desc.tile_width, desc.tile_height
    for tx, ty in tiles_for_window(desc, window):
        tile = tiles.get((tx, ty))
        if tile is None:
            raise MissingTile(f"tile ({tx},{ty}) missing for window {window}")
        x0, y0 = tx * kx, ty * ky
        ox0 = max(window.col_off, x0)
        ox1 = min(window.col_off + window.width, x0 + kx)
        oy0 = max(window.row_off, y0)
        oy1 = min(window.row_off + window.height, y0 + ky)
        out[oy0 - window.row_off:oy1 - window.row_off,
            ox0 - window.col_off:ox1 - window.col_off] = \
            tile[oy0 - y0:oy1 - y0, ox0 - x0:ox1 - x0]
    return Patch(out, window, source_scene)


def reference_read_window(desc: CogDescriptor, source, window: WindowSpec) -> np.ndarray:
    """Trivial single-request-at-a-time reader used as the correctness
    oracle for pipeline output. Walks every tile, fetching sequentially."""
    out = np.empty((window.height, window.width, desc.bands), dtype=np.uint16)
    for ty in range(desc.tiles_y):
        for tx in range(desc.tiles_x):
            x0, y0 = tx * desc.tile_width, ty * desc.tile_height
            x1 = min(x0 + desc.tile_width, desc.width)
            y1 = min(y0 + desc.tile_height, desc.height)
            ox0 = max(window.col_off, x0)
            ox1 = min(window.col_off + window.width, x1)
            oy0 = max(window.row_off, y0)
            oy1 = min(window.row_off + window.height, y1)
            if ox0 >= ox1 or oy0 >= oy1:
                continue
            off, cnt = tile_byte_extent(desc, tx, ty)
            tile = decode_tile(desc, source.get_range(off, cnt))
            out[oy0 - window.row_off:oy1 - window.row_off,
                ox0 - window.col_off:ox1 - window.col_off] = \
                tile[oy0 - y0:oy1 - y0, ox0 - x0:ox1 - x0]
    return out


def _fetch_decode(src, desc, tx, ty):
    off, cnt = tile_byte_extent(desc, tx, ty)
    raw = src.get_range(off, cnt)
    arr = decode_tile(desc, raw)
    return arr, cnt, time.monotonic()


def _worker_loop(widx, part, config, dataset, locs, descs, counters,
                 out_queue, tokens, abort, collect_events):
    handles = {}
    pool = ThreadPoolExecutor(
        max_workers=config.num_threads, thread_name_prefix=f"w{widx}-fetch"
    )
    try:
        batches = [
            part[i:i + config.batch_size]
            for i in range(0, len(part), config.batch_size)
        ]
        for batch in batches:
            # prefetch credit is taken before any work on the batch starts
            while not tokens.acquire(timeout=0.05):
                if abort.is_set():
                    return
            patches, events = [], []
            for scene_idx, window in batch:
                if abort.is_set():
                    return
                desc = descs[scene_idx]
                src = handles.get(scene_idx)
                if src is None:
                    src = dataset.opener.open(locs[scene_idx], tag=f"w{widx}")
                    handles[scene_idx] = src
                tiles = tiles_for_window(desc, window)
                futures = [
                    (t, pool.submit(_fetch_decode, src, desc, *t))
                    for t in tiles
                ]
                tile_map = {}
                extents = []
                completions = []
                nbytes = 0
                for t, fut in futures:
                    arr, cnt, done_at = fut.result()  # patch barrier
                    tile_map[t] = arr
                    nbytes += cnt
                    if collect_events:
                        off, _ = tile_byte_extent(desc, *t)
                        extents.append((t[0], t[1], off, cnt))
                        completions.append(done_at)
                counters.add(len(tiles), nbytes)
                patch = assemble_patch(
                    desc, window, tile_map,
                    source_scene=dataset.entries[scene_idx].scene_id,
                )
                patches.append(patch)
                if collect_events:
                    events.append(PatchEvent(
                        worker=widx, scene=scene_idx, window=window,
                        tile_extents=extents, fetch_completed=completions,
                        assembled_at=time.monotonic(),
                    ))
            out_queue.put(_Batch(widx, patches, events, time.monotonic()))
        out_queue.put(None)
    except Exception as exc:  # propagated to the consumer as an epoch abort
        out_queue.put(_WorkerFailure(widx, exc))
    finally:
        pool.shutdown(wait=False)
        for src in handles.values():
            src.close()


def run_epoch(config: LoaderConfig, dataset: BenchDataset, seed: int, *,
              trace: Optional[EpochTrace] = None,
              consumer_delay: float = 0.0,
              verify_patches: int = 0) -> ThroughputStats:
    """Stream one epoch of patches and meter throughput.

    Exactly ``patches_per_epoch`` patches are delivered in batches of
    ``batch_size`` (final partial batches allowed). The timer spans from
    just before the first request to the last patch delivery.
    """
    config.validate()
    locs = dataset.locations(config.compression)
    descs = [dataset.descriptor(loc) for loc in locs]

    policy = SamplerPolicy(config.blocked, config.patch_size)
    rng = np.random.default_rng(seed)
    plan = []
    for _ in range(config.patches_per_epoch):
        scene_idx = int(rng.integers(0, len(descs)))
        plan.append((scene_idx, sample_window(descs[scene_idx], policy, rng)))

    verify_set = set()
    if verify_patches:
        verify_set = set(
            int(i) for i in
            rng.choice(len(plan), size=min(verify_patches, len(plan)),
                       replace=False)
        )

    counters = _Counters()
    abort = threading.Event()
    workers = []
    for widx in range(config.num_workers):
        part = plan[widx::config.num_workers]
        out_queue: "queue.SimpleQueue" = queue.SimpleQueue()
        tokens = threading.Semaphore(config.prefetch_factor)
        thread = threading.Thread(
            target=_worker_loop,
            args=(widx, part, config, dataset, locs, descs, counters,
                  out_queue, tokens, abort, trace is not None),
            name=f"loader-w{widx}",
            daemon=True,
        )
        workers.append((thread, out_queue, tokens))

    t0 = time.monotonic()
    for thread, _, _ in workers:
        thread.start()

    patches_delivered = 0
    decoded_bytes = 0
    delivered_index = 0
    failure: Optional[_WorkerFailure] = None
    live = [True] * config.num_workers
    try:
        while any(live) and failure is None:
            for widx in range(config.num_workers):
                if not live[widx] or failure is not None:
                    continue
                item = workers[widx][1].get()
                if item is None:
                    live[widx] = False
                    continue
                if isinstance(item, _WorkerFailure):
                    failure = item
                    break
                workers[widx][2].release()  # return the prefetch credit
                now = time.monotonic()
                for patch in item.patches:
                    patches_delivered += 1
                    decoded_bytes += patch.pixels.nbytes
                    if delivered_index in verify_set:
                        scene_idx = next(
                            i for i, e in enumerate(dataset.entries)
                            if e.scene_id == patch.source_scene)
                        vsrc = dataset.opener.open(
                            locs[scene_idx], tag="verify")
                        try:
                            ref = reference_read_window(
                                descs[scene_idx], vsrc, patch.window)
                        finally:
                            vsrc.close()
                        if not np.array_equal(ref, patch.pixels):
                            raise VerificationFailed(
                                f"patch at window {patch.window} differs "
                                f"from reference reader output"
                            )
                    delivered_index += 1
                if trace is not None:
                    for event in item.events:
                        event.delivered_at = now
                        trace.patches.append(event)
                    trace.batches.append(BatchEvent(
                        item.worker, len(item.patches), item.completed_at, now
                    ))
                if consumer_delay:
                    time.sleep(consumer_delay)
        t_end = time.monotonic()
    finally:
        abort.set()
        for thread, _, tokens in workers:
            tokens.release()  # unblock a worker waiting on prefetch credit
        for thread, _, _ in workers:
            thread.join(timeout=10)

    stats = ThroughputStats(
        decoded_bytes=decoded_bytes,
        network_bytes=counters.network_bytes,
        tiles_fetched=counters.tiles_fetched,
        patches_delivered=patches_delivered,
        elapsed=t_end - t0,
        valid=failure is None,
    )
    if failure is not None:
        raise SourceFailure(
            f"worker {failure.worker} failed: {failure.error}",
            partial_stats=stats,
        ) from failure.error
    return stats


def epoch_seed(trial_seed: int, epoch: int) -> int:
    """Deterministic distinct seed per (trial, epoch)."""
    return int(np.random.SeedSequence([abs(trial_seed), epoch])
               .generate_state(1)[0])


def run_trial(config: LoaderConfig, dataset: BenchDataset, seed: int = 0, *,
              log_path=None, **epoch_kwargs) -> TrialResult:
    """Run ``config.epochs`` epochs with distinct derived seeds and
    aggregate mean±std throughput. A failed epoch invalidates the trial
    (the SourceFailure propagates)."""
    per_epoch = []
    for e in range(config.epochs):
        stats = run_epoch(config, dataset, epoch_seed(seed, e), **epoch_kwargs)
        per_epoch.append(stats)
        if log_path is not None:
            append_trial_log(log_path, config, e, stats)
    return TrialResult(config, per_epoch)


def append_trial_log(path, config: LoaderConfig, epoch: int,
                     stats: ThroughputStats) -> None:
    """Append one JSONL record; schema documented in the README."""
    record = {
        "schema": TRIAL_LOG_SCHEMA,
        "config_hash": config_hash(config),
        "epoch": epoch,
        **stats.to_dict(),
        "config": config.to_dict(),
    }
    with open(path, "a") as f:
        f.write(json.dumps(record) + "\n")
