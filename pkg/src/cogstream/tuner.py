"""Configuration search over the loader space: TPE Bayesian optimization,
2D grid search with repeated trials, and surrogate-based parameter
importance.

All parameters are treated as categorical (the domains are small finite
sets). TPE follows the classic construction: split observations at the
gamma quantile into good/bad sets, build per-parameter categorical Parzen
estimators l(x) and g(x) with additive prior smoothing, sample candidates
from l, and suggest the candidate maximizing l/g.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import codecs
from .errors import EmptySpace, InsufficientData
from .pipeline import (
    BenchDataset,
    LoaderConfig,
    PREFETCH_DOMAIN,
    THREAD_DOMAIN,
    WORKER_DOMAIN,
    run_trial,
)
from .sampler import PATCH_SIZES
from .sources import SourceProfile

STUDY_LOG_SCHEMA = "cogstream.study.v1"

# An objective maps (config, seed) -> MB/s; higher is better.
Objective = Callable[[LoaderConfig, int], float]


@dataclass(frozen=True)
class SearchSpace:
    """Per-parameter finite domains."""

    domains: Mapping[str, Tuple]

    def __post_init__(self):
        if not self.domains or any(len(v) == 0 for v in self.domains.values()):
            raise EmptySpace("every parameter needs a non-empty domain")

    @property
    def size(self) -> int:
        return int(np.prod([len(v) for v in self.domains.values()]))

    def random_point(self, rng: np.random.Generator) -> Dict:
        return {
            name: values[int(rng.integers(0, len(values)))]
            for name, values in self.domains.items()
        }


def default_space() -> SearchSpace:
    return SearchSpace({
        "compression": codecs.VARIANT_KEYS,
        "patch_size": PATCH_SIZES,
        "num_workers": WORKER_DOMAIN,
        "num_threads": THREAD_DOMAIN,
        "blocked": (False, True),
        "prefetch_factor": PREFETCH_DOMAIN,
    })


@dataclass
class Observation:
    config: LoaderConfig
    objective: float
    trial_index: int
    valid: bool = True


@dataclass
class Study:
    space: SearchSpace
    base_config: LoaderConfig
    seed: int
    observations: List[Observation] = field(default_factory=list)
    rng: np.random.Generator = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def best(self) -> Optional[Observation]:
        valid = [o for o in self.observations if o.valid]
        return max(valid, key=lambda o: o.objective) if valid else None

    def best_so_far(self) -> List[float]:
        """Running maximum of valid objectives, by trial index."""
        out, cur = [], -math.inf
        for o in self.observations:
            if o.valid:
                cur = max(cur, o.objective)
            out.append(cur)
        return out


def _parzen_weights(values: Sequence, configs: List[LoaderConfig], name: str,
                    prior_weight: float) -> np.ndarray:
    counts = np.full(len(values), prior_weight, dtype=float)
    index = {v: i for i, v in enumerate(values)}
    for cfg in configs:
        counts[index[getattr(cfg, name)]] += 1.0
    return counts / counts.sum()


def tpe_suggest(study: Study, gamma: float = 0.25, n_candidates: int = 24,
                n_startup: int = 10, prior_weight: float = 1.0) -> LoaderConfig:
    """Suggest the next configuration to evaluate.

    Uniform random during the first n_startup valid observations;
    afterwards maximizes l(x)/g(x) over candidates drawn from l.
    """
    space = study.space
    valid = [o for o in study.observations if o.valid]
    if len(valid) < n_startup:
        return replace(study.base_config, **space.random_point(study.rng))

    ranked = sorted(valid, key=lambda o: o.objective, reverse=True)
    n_good = math.ceil(gamma * len(ranked))
    good = [o.config for o in ranked[:n_good]]
    bad = [o.config for o in ranked[n_good:]]

    names = list(space.domains)
    l_probs = {n: _parzen_weights(space.domains[n], good, n, prior_weight)
               for n in names}
    g_probs = {n: _parzen_weights(space.domains[n], bad, n, prior_weight)
               for n in names}

    best_point, best_score = None, -math.inf
    for _ in range(n_candidates):
        point, score = {}, 0.0
        for name in names:
            values = space.domains[name]
            idx = int(study.rng.choice(len(values), p=l_probs[name]))
            point[name] = values[idx]
            score += math.log(l_probs[name][idx]) - math.log(g_probs[name][idx])
        if score > best_score:
            best_point, best_score = point, score
    return replace(study.base_config, **best_point)


def run_study(space: SearchSpace, objective_fn: Objective, n_trials: int = 100,
              seed: int = 0, *, base_config: Optional[LoaderConfig] = None,
              log_path=None, study: Optional[Study] = None,
              gamma: float = 0.25, n_candidates: int = 24,
              n_startup: int = 10, prior_weight: float = 1.0) -> Study:
    """Drive a TPE study for n_trials total observations.

    Failed trials are recorded invalid and skipped by the estimators; a
    trial failure never aborts the study. Pass a loaded ``study`` to
    resume an interrupted run.
    """
    if study is None:
        study = Study(
            space=space,
            base_config=base_config if base_config is not None else LoaderConfig(),
            seed=seed,
        )
    for trial in range(len(study.observations), n_trials):
        config = tpe_suggest(study, gamma=gamma, n_candidates=n_candidates,
                             n_startup=n_startup, prior_weight=prior_weight)
        try:
            value = float(objective_fn(config, trial))
            obs = Observation(config, value, trial,
                              valid=math.isfinite(value))
        except Exception:
            obs = Observation(config, float("nan"), trial, valid=False)
        study.observations.append(obs)
        if log_path is not None:
            append_study_log(log_path, obs)
    return study


def append_study_log(path, obs: Observation) -> None:
    record = {
        "schema": STUDY_LOG_SCHEMA,
        "trial": obs.trial_index,
        "objective": obs.objective if obs.valid else None,
        "valid": obs.valid,
        "config": obs.config.to_dict(),
    }
    with open(path, "a") as f:
        f.write(json.dumps(record) + "\n")


def load_study(path, space: Optional[SearchSpace] = None,
               seed: int = 0) -> Study:
    """Rebuild a study from its JSONL log (enables resume)."""
    observations = []
    base = None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        cfg = LoaderConfig.from_dict(rec["config"])
        if base is None:
            base = cfg
        objective = rec["objective"]
        observations.append(Observation(
            cfg,
            float(objective) if objective is not None else float("nan"),
            rec["trial"],
            valid=rec["valid"],
        ))
    study = Study(
        space=space if space is not None else default_space(),
        base_config=base if base is not None else LoaderConfig(),
        seed=seed,
    )
    study.observations = observations
    return study


# --- grid search ------------------------------------------------------------------

@dataclass
class GridCell:
    mean: float
    std: float
    n_ok: int
    valid: bool


@dataclass
class GridResult:
    param_a: str
    param_b: str
    values_a: Tuple
    values_b: Tuple
    cells: List[List[GridCell]]  # [i][j] for (values_a[i], values_b[j])

    def best(self) -> Tuple:
        """(value_a, value_b, mean) of the best valid cell."""
        top = None
        for i, va in enumerate(self.values_a):
            for j, vb in enumerate(self.values_b):
                cell = self.cells[i][j]
                if cell.valid and (top is None or cell.mean > top[2]):
                    top = (va, vb, cell.mean)
        if top is None:
            raise InsufficientData("no valid grid cells")
        return top

    def to_csv(self, path) -> None:
        lines = [f"{self.param_a},{self.param_b},mean_mbps,std_mbps,n_ok"]
        for i, va in enumerate(self.values_a):
            for j, vb in enumerate(self.values_b):
                cell = self.cells[i][j]
                mean = f"{cell.mean:.3f}" if cell.valid else ""
                std = f"{cell.std:.3f}" if cell.valid else ""
                lines.append(f"{va},{vb},{mean},{std},{cell.n_ok}")
        Path(path).write_text("\n".join(lines) + "\n")


def cell_seed(seed: int, i: int, j: int, rep: int) -> int:
    return int(np.random.SeedSequence([abs(seed), i, j, rep])
               .generate_state(1)[0])


def grid_search(param_a: str, param_b: str, fixed: LoaderConfig,
                objective_fn: Objective, reps: int = 5, seed: int = 0,
                space: Optional[SearchSpace] = None) -> GridResult:
    """Mean±std objective over the cross product of two parameter domains,
    with all other parameters pinned by ``fixed``. Failed runs are dropped
    from their cell; fully failed cells are marked invalid."""
    space = space if space is not None else default_space()
    if param_a == param_b:
        raise ValueError("grid parameters must differ")
    for name in (param_a, param_b):
        if name not in space.domains:
            raise KeyError(f"unknown grid parameter {name!r}")
    values_a = tuple(space.domains[param_a])
    values_b = tuple(space.domains[param_b])
    cells: List[List[GridCell]] = []
    for i, va in enumerate(values_a):
        row = []
        for j, vb in enumerate(values_b):
            cfg = replace(fixed, **{param_a: va, param_b: vb})
            scores = []
            for r in range(reps):
                try:
                    scores.append(float(objective_fn(cfg, cell_seed(seed, i, j, r))))
                except Exception:
                    pass
            if scores:
                row.append(GridCell(float(np.mean(scores)),
                                    float(np.std(scores)), len(scores), True))
            else:
                row.append(GridCell(float("nan"), float("nan"), 0, False))
        cells.append(row)
    return GridResult(param_a, param_b, values_a, values_b, cells)


# --- parameter importance -----------------------------------------------------------

def importance(study: Study, n_trees: int = 64, max_depth: int = 8,
               seed: int = 0, min_observations: int = 30,
               n_marginal_samples: int = 2048) -> List[Tuple[str, float]]:
    """First-order variance decomposition over a tree-ensemble surrogate.

    Fits a random forest to one-hot encoded configs, computes each
    parameter's marginal prediction curve by Monte-Carlo marginalization
    over the others, and attributes variance accordingly. Percentages sum
    to 100.
    """
    from sklearn.ensemble import RandomForestRegressor

    valid = [o for o in study.observations if o.valid]
    if len(valid) < min_observations:
        raise InsufficientData(
            f"need at least {min_observations} valid observations, "
            f"have {len(valid)}"
        )
    space = study.space
    names = list(space.domains)
    columns: List[Tuple[str, object]] = [
        (name, value) for name in names for value in space.domains[name]
    ]
    col_index = {cv: i for i, cv in enumerate(columns)}

    def encode(configs) -> np.ndarray:
        x = np.zeros((len(configs), len(columns)))
        for r, cfg in enumerate(configs):
            for name in names:
                x[r, col_index[(name, getattr(cfg, name))]] = 1.0
        return x

    x_obs = encode([o.config for o in valid])
    y_obs = np.array([o.objective for o in valid])
    forest = RandomForestRegressor(
        n_estimators=n_trees, max_depth=max_depth, random_state=seed
    )
    forest.fit(x_obs, y_obs)

    rng = np.random.default_rng(seed)
    base_points = [space.random_point(rng) for _ in range(n_marginal_samples)]

    class _P:  # light stand-in so encode() can use getattr
        def __init__(self, point):
            self.__dict__.update(point)

    x_base = encode([_P(p) for p in base_points])
    variances = {}
    for name in names:
        cols = [col_index[(name, v)] for v in space.domains[name]]
        marginal = []
        for v in space.domains[name]:
            x_mod = x_base.copy()
            x_mod[:, cols] = 0.0
            x_mod[:, col_index[(name, v)]] = 1.0
            marginal.append(float(np.mean(forest.predict(x_mod))))
        variances[name] = float(np.var(marginal))

    total = sum(variances.values())
    if total <= 0.0:
        share = 100.0 / len(names)
        return sorted(((n, share) for n in names), key=lambda t: -t[1])
    ranked = [(n, 100.0 * v / total) for n, v in variances.items()]
    ranked.sort(key=lambda t: -t[1])
    return ranked


# --- objectives ----------------------------------------------------------------------

def make_pipeline_objective(dataset: BenchDataset, *, log_path=None,
                            **epoch_kwargs) -> Objective:
    """Objective that measures a real trial on a dataset."""

    def objective(config: LoaderConfig, seed: int) -> float:
        return run_trial(config, dataset, seed=seed, log_path=log_path,
                         **epoch_kwargs).mean_mbps

    return objective


# Decode cost (seconds per decoded byte) and compressed-size ratio used by
# the closed-form model; calibrated to this package's codecs on smooth
# synthetic scenes.
_MODEL_DECODE_COST = {
    "none": 2e-10,
    "zstd": 1.0e-9,
    "deflate1": 3.5e-9,
    "deflate6": 4.0e-9,
    "deflate9": 4.0e-9,
    "lzw": 8.0e-9,
}
_MODEL_SIZE_RATIO = {
    "none": 1.0,
    "zstd": 0.62,
    "deflate1": 0.66,
    "deflate6": 0.64,
    "deflate9": 0.63,
    "lzw": 0.55,
}


def make_model_objective(profile: SourceProfile, *, tile: int = 512,
                         bands: int = 4, noise: float = 0.02) -> Objective:
    """Closed-form queueing model of the simulated store.

    Deterministic up to seeded multiplicative noise; mirrors the
    simulator's qualitative structure (latency hiding by workers and
    threads, blocked-read I/O savings, decode cost, bandwidth cap, and the
    concurrency ceiling) at a tiny fraction of the cost of a real run.
    Used for fast search experiments and tuner tests.
    """

    def objective(config: LoaderConfig, seed: int) -> float:
        p, k = config.patch_size, tile
        if config.blocked:
            tiles_pp = 1.0 if p <= k else (p / k) ** 2
        else:
            tiles_pp = (1.0 + (p - 1) / k) ** 2
        n_patches = config.patches_per_epoch
        decoded = n_patches * p * p * bands * 2
        tile_raw = k * k * bands * 2
        ratio = _MODEL_SIZE_RATIO[config.compression]
        total_tiles = n_patches * tiles_pp
        network_bytes = total_tiles * tile_raw * ratio

        latency = profile.latency_ms / 1000.0
        w, t = config.num_workers, config.num_threads
        slots_per_patch = min(t, max(1.0, tiles_pp))
        rounds_per_patch = tiles_pp / slots_per_patch
        per_worker_net = (n_patches / w) * rounds_per_patch * latency

        limited = 0.0
        if profile.max_concurrent:
            limited = total_tiles * latency / profile.max_concurrent
        banded = 0.0
        if profile.bandwidth_cap:
            banded = network_bytes / profile.bandwidth_cap

        decode = (total_tiles * tile_raw *
                  _MODEL_DECODE_COST[config.compression]) / w
        elapsed = max(per_worker_net, limited, banded) + decode + 0.05
        mbps = decoded / 1e6 / elapsed
        if noise:
            rng = np.random.default_rng(
                np.random.SeedSequence([abs(seed), config_signature(config)])
            )
            mbps *= float(np.exp(rng.normal(0.0, noise)))
        return mbps

    return objective


def config_signature(config: LoaderConfig) -> int:
    """Stable small integer identifying a config (for seeded model noise)."""
    import zlib as _z

    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return _z.crc32(blob)
