"""Operator-facing command suite.

Commands: prepare | serve | bench | tune | grid | report.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional
from urllib.parse import urljoin

import click
import numpy as np

from . import codecs, synth
from .cog import write_cog
from .errors import CogStreamError, ConfigError
from .pipeline import (
    BenchDataset,
    LoaderConfig,
    LocalOpener,
    RemoteOpener,
    SceneEntry,
    SimulatedOpener,
    run_trial,
)
from .server import serve as start_server
from .sources import SimulatedStore, SourceProfile
from .tuner import (
    default_space,
    grid_search,
    importance,
    load_study,
    make_model_objective,
    make_pipeline_objective,
    run_study,
)

MANIFEST_SCHEMA = "cogstream.manifest.v1"

# Desk-scale defaults; --paper switches to the measured cross-region
# profile (164 ms) and full-size epochs.
DESK_LATENCY_MS = 10.0
PAPER_LATENCY_MS = 164.0
PAPER_EPOCH_PATCHES = 1024
PAPER_EPOCHS = 5


@dataclass
class RunManifest:
    """What `prepare` wrote and what later commands consume."""

    schema: str
    root: str
    width: int
    height: int
    bands: int
    tile: int
    seed: int
    smoothness: float
    schemes: List[str]
    scenes: List[Dict]
    profile: Optional[Dict] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([abs(seed), index]).generate_state(1)[0])


def load_config_file(path) -> LoaderConfig:
    """Parse a flat key=value config file; unknown keys are errors."""
    fields = LoaderConfig.__dataclass_fields__
    data: Dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown parameter {key!r}")
        if key == "compression":
            data[key] = value
        elif key == "blocked":
            if value.lower() not in ("true", "false"):
                raise ConfigError(
                    f"{path}:{lineno}: blocked must be true or false, got {value!r}"
                )
            data[key] = value.lower() == "true"
        else:
            try:
                data[key] = int(value)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: {key} must be an integer, got {value!r}"
                ) from None
    config = LoaderConfig(**data)
    config.validate()
    return config


def load_manifest(path) -> RunManifest:
    raw = json.loads(Path(path).read_text())
    if raw.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"{path}: not a {MANIFEST_SCHEMA} manifest")
    raw.setdefault("root", str(Path(path).resolve().parent))
    return RunManifest(**raw)


def make_dataset(manifest_path, source: str, url: Optional[str],
                 profile: SourceProfile) -> BenchDataset:
    manifest = load_manifest(manifest_path)
    root = Path(manifest.root)
    entries = []
    for scene in manifest.scenes:
        variants = {}
        for key, rel in scene["variants"].items():
            if source == "remote":
                if not url:
                    raise ConfigError("--source remote requires --url")
                variants[key] = urljoin(url.rstrip("/") + "/", rel)
            else:
                path = root / rel
                if not path.is_file():
                    raise ConfigError(f"manifest references missing file {path}")
                variants[key] = str(path)
        entries.append(SceneEntry(scene["id"], variants))
    if source == "local":
        opener = LocalOpener()
    elif source == "sim":
        opener = SimulatedOpener(SimulatedStore(profile))
    elif source == "remote":
        opener = RemoteOpener()
    else:
        raise ConfigError(f"unknown source {source!r}")
    return BenchDataset(entries, opener)


def _profile_from_flags(latency_ms, jitter_ms, bandwidth, max_concurrent,
                        profile_seed, paper) -> SourceProfile:
    if paper and latency_ms is None:
        latency_ms = PAPER_LATENCY_MS
    if latency_ms is None:
        latency_ms = DESK_LATENCY_MS
    return SourceProfile(
        latency_ms=latency_ms,
        jitter_ms=jitter_ms,
        bandwidth_cap=bandwidth,
        max_concurrent=max_concurrent,
        seed=profile_seed,
    )


def profile_options(fn):
    for option in reversed([
        click.option("--latency-ms", type=float, default=None,
                     help=f"simulated per-request latency "
                          f"[default: {DESK_LATENCY_MS}]"),
        click.option("--jitter-ms", type=float, default=0.0, show_default=True),
        click.option("--bandwidth", type=int, default=0, show_default=True,
                     help="bytes/second cap, 0 = unlimited"),
        click.option("--max-concurrent", type=int, default=0, show_default=True,
                     help="in-flight request ceiling, 0 = unlimited"),
        click.option("--profile-seed", type=int, default=0, show_default=True),
        click.option("--paper", is_flag=True,
                     help="use the paper-scale profile (164 ms latency, "
                          "1024-patch epochs)"),
    ]):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Streaming benchmark and autotuning toolkit for tiled COGs."""


@main.command()
@click.option("--scenes", type=int, default=2, show_default=True)
@click.option("--width", type=int, default=2048, show_default=True)
@click.option("--height", type=int, default=2048, show_default=True)
@click.option("--bands", type=int, default=4, show_default=True)
@click.option("--tile", type=int, default=512, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--smoothness", type=float, default=0.8, show_default=True)
@click.option("--schemes", default=",".join(codecs.VARIANT_KEYS),
              show_default=True, help="comma-separated variant keys")
@click.option("--out", required=True, type=click.Path())
def prepare(scenes, width, height, bands, tile, seed, smoothness, schemes, out):
    """Generate synthetic scenes and write one COG per compression variant."""
    keys = [k for k in schemes.split(",") if k]
    unknown = set(keys) - set(codecs.VARIANT_KEYS)
    if unknown:
        raise ConfigError(
            f"unknown scheme(s) {sorted(unknown)}; "
            f"choose from {codecs.VARIANT_KEYS}"
        )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_records = []
    for i in range(scenes):
        pixels = synth.generate_synthetic_scene(
            width, height, bands, scene_seed(seed, i), smoothness
        )
        scene_id = f"scene{i:04d}"
        variants = {}
        for key in keys:
            name = f"{scene_id}_{key}.tif"
            (out_dir / name).write_bytes(
                write_cog(pixels, codecs.VARIANTS[key], tile=tile)
            )
            variants[key] = name
        scene_records.append({"id": scene_id, "variants": variants})
        click.echo(f"wrote {scene_id}: {len(keys)} variant(s)")
    manifest = RunManifest(
        schema=MANIFEST_SCHEMA, root=str(out_dir.resolve()),
        width=width, height=height, bands=bands, tile=tile,
        seed=seed, smoothness=smoothness, schemes=keys, scenes=scene_records,
    )
    (out_dir / "manifest.json").write_text(manifest.to_json())
    click.echo(f"manifest: {out_dir / 'manifest.json'}")


@main.command()
@click.option("--root", required=True, type=click.Path(exists=True))
@click.option("--latency-ms", type=float, default=PAPER_LATENCY_MS,
              show_default=True)
@click.option("--jitter-ms", type=float, default=0.0, show_default=True)
@click.option("--bandwidth", type=int, default=0, show_default=True)
@click.option("--max-concurrent", type=int, default=0, show_default=True)
@click.option("--port", type=int, default=8641, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def serve(root, latency_ms, jitter_ms, bandwidth, max_concurrent, port, host,
          seed):
    """Serve a directory over HTTP range requests with injected latency."""
    profile = SourceProfile(latency_ms=latency_ms, jitter_ms=jitter_ms,
                            bandwidth_cap=bandwidth,
                            max_concurrent=max_concurrent, seed=seed)
    server = start_server(root, profile, (host, port))
    click.echo(f"serving {root} at {server.url} "
               f"(latency {latency_ms} ms); Ctrl-C to stop")
    try:
        while True:
            import time

            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True),
              help="manifest.json from `prepare`")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--source", type=click.Choice(["local", "sim", "remote"]),
              default="sim", show_default=True)
@click.option("--url", default=None, help="base URL for --source remote")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="append per-epoch JSONL records here")
@click.option("--verify", type=int, default=0, show_default=True,
              help="patches per epoch to check against the reference reader")
@profile_options
def bench(data, config_path, source, url, seed, log_path, verify,
          latency_ms, jitter_ms, bandwidth, max_concurrent, profile_seed,
          paper):
    """Run one benchmark trial and print mean±std throughput."""
    config = load_config_file(config_path)
    if paper:
        from dataclasses import replace

        config = replace(config, epochs=PAPER_EPOCHS,
                         patches_per_epoch=PAPER_EPOCH_PATCHES)
    profile = _profile_from_flags(latency_ms, jitter_ms, bandwidth,
                                  max_concurrent, profile_seed, paper)
    dataset = make_dataset(data, source, url, profile)
    result = run_trial(config, dataset, seed=seed, log_path=log_path,
                       verify_patches=verify)
    stats = result.per_epoch[-1]
    click.echo(
        f"throughput: {result.mean_mbps:.2f} ± {result.std_mbps:.2f} MB/s "
        f"over {config.epochs} epoch(s)"
    )
    click.echo(
        f"last epoch: {stats.patches_delivered} patches, "
        f"{stats.tiles_fetched} tiles, {stats.network_bytes} network bytes, "
        f"{stats.elapsed:.2f} s"
    )


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--source", type=click.Choice(["local", "sim", "remote"]),
              default="sim", show_default=True)
@click.option("--url", default=None)
@click.option("--trials", type=int, default=100, show_default=True)
@click.option("--study", "study_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gamma", type=float, default=0.25, show_default=True)
@click.option("--n-startup", type=int, default=10, show_default=True)
@click.option("--n-candidates", type=int, default=24, show_default=True)
@click.option("--prior-weight", type=float, default=1.0, show_default=True)
@click.option("--resume", is_flag=True, help="continue an existing study file")
@click.option("--base-config", "base_config_path", type=click.Path(exists=True),
              default=None, help="run constants (epochs, patches, batch)")
@click.option("--model", "use_model", is_flag=True,
              help="search the closed-form loader model instead of real runs")
@profile_options
def tune(data, source, url, trials, study_path, seed, gamma, n_startup,
         n_candidates, prior_weight, resume, base_config_path, use_model,
         latency_ms, jitter_ms, bandwidth, max_concurrent, profile_seed,
         paper):
    """TPE search over the loader configuration space."""
    profile = _profile_from_flags(latency_ms, jitter_ms, bandwidth,
                                  max_concurrent, profile_seed, paper)
    base = (load_config_file(base_config_path)
            if base_config_path else LoaderConfig(
                epochs=1, patches_per_epoch=64))
    if paper:
        from dataclasses import replace

        base = replace(base, epochs=PAPER_EPOCHS,
                       patches_per_epoch=PAPER_EPOCH_PATCHES)
    if use_model:
        manifest = load_manifest(data)
        objective = make_model_objective(profile, tile=manifest.tile,
                                         bands=manifest.bands)
    else:
        dataset = make_dataset(data, source, url, profile)
        objective = make_pipeline_objective(dataset)
    study = None
    if resume and Path(study_path).exists():
        study = load_study(study_path, default_space(), seed=seed)
        study.base_config = base
    study = run_study(
        default_space(), objective, n_trials=trials, seed=seed,
        base_config=base, log_path=study_path, study=study,
        gamma=gamma, n_candidates=n_candidates, n_startup=n_startup,
        prior_weight=prior_weight,
    )
    best = study.best
    if best is None:
        click.echo("no valid trials")
        sys.exit(2)
    click.echo(f"best objective: {best.objective:.2f} MB/s "
               f"(trial {best.trial_index})")
    for key, value in best.config.to_dict().items():
        click.echo(f"  {key} = {value}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--source", type=click.Choice(["local", "sim", "remote"]),
              default="sim", show_default=True)
@click.option("--url", default=None)
@click.option("--x", "param_x", required=True,
              help="first grid parameter (e.g. num_workers)")
@click.option("--y", "param_y", required=True,
              help="second grid parameter (e.g. num_threads)")
@click.option("--reps", type=int, default=5, show_default=True)
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True), help="pins the fixed parameters")
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--model", "use_model", is_flag=True,
              help="sweep the closed-form loader model instead of real runs")
@profile_options
def grid(data, source, url, param_x, param_y, reps, config_path, out_csv,
         seed, use_model, latency_ms, jitter_ms, bandwidth, max_concurrent,
         profile_seed, paper):
    """2D grid sweep of two parameters with repeated trials."""
    profile = _profile_from_flags(latency_ms, jitter_ms, bandwidth,
                                  max_concurrent, profile_seed, paper)
    fixed = load_config_file(config_path)
    if use_model:
        manifest = load_manifest(data)
        objective = make_model_objective(profile, tile=manifest.tile,
                                         bands=manifest.bands)
    else:
        dataset = make_dataset(data, source, url, profile)
        objective = make_pipeline_objective(dataset)
    try:
        result = grid_search(param_x, param_y, fixed, objective, reps=reps,
                             seed=seed)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    result.to_csv(out_csv)
    va, vb, mean = result.best()
    click.echo(f"wrote {out_csv}")
    click.echo(f"best cell: {param_x}={va}, {param_y}={vb} "
               f"({mean:.2f} MB/s)")


@main.command()
@click.option("--study", "study_path", required=True,
              type=click.Path(exists=True))
@click.option("--grid", "grid_csvs", multiple=True, type=click.Path(exists=True),
              help="grid CSVs to render (repeatable)")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write markdown here instead of stdout")
@click.option("--top", type=int, default=5, show_default=True)
def report(study_path, grid_csvs, out_path, top):
    """Render a study (and optional grids) as markdown tables."""
    study = load_study(study_path)
    lines = ["# Benchmark report", "", "## Best configurations", ""]
    header = ("| rank | compression | patch_size | blocked | num_workers "
              "| num_threads | prefetch_factor | MB/s | best |")
    lines.append(header)
    lines.append("|" + "---|" * 9)
    ranked = sorted(
        (o for o in study.observations if o.valid),
        key=lambda o: -o.objective,
    )
    for rank, obs in enumerate(ranked[:top], 1):
        c = obs.config
        lines.append(
            f"| {rank} | {c.compression} | {c.patch_size} | {c.blocked} "
            f"| {c.num_workers} | {c.num_threads} | {c.prefetch_factor} "
            f"| {obs.objective:.2f} | {'*' if rank == 1 else ''} |"
        )
    n_valid = sum(1 for o in study.observations if o.valid)
    lines += ["", f"{len(study.observations)} trials, {n_valid} valid."]

    if n_valid >= 30:
        lines += ["", "## Parameter importance", "",
                  "| parameter | importance (%) |", "|---|---|"]
        for name, pct in importance(study):
            lines.append(f"| {name} | {pct:.2f} |")

    for csv_path in grid_csvs:
        lines += ["", f"## Grid: {Path(csv_path).name}", ""]
        lines += _grid_markdown(csv_path)

    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


def _grid_markdown(csv_path) -> List[str]:
    rows = Path(csv_path).read_text().splitlines()
    head = rows[0].split(",")
    a_name, b_name = head[0], head[1]
    cells = []
    for row in rows[1:]:
        va, vb, mean, std, n_ok = row.split(",")
        if mean:
            cells.append((va, vb, float(mean), float(std)))
    col_best = {}
    overall = max(c[2] for c in cells) if cells else None
    for va, vb, mean, std in cells:
        if vb not in col_best or mean > col_best[vb]:
            col_best[vb] = mean
    out = [f"| {a_name} | {b_name} | MB/s | best |", "|---|---|---|---|"]
    for va, vb, mean, std in cells:
        marker = ""
        if mean == overall:
            marker = "overall"
        elif mean == col_best[vb]:
            marker = "column"
        out.append(f"| {va} | {vb} | {mean:.2f} ± {std:.2f} | {marker} |")
    return out


def entrypoint(argv=None) -> int:
    """Console entry with the documented exit-code contract."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except CogStreamError as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(entrypoint())
