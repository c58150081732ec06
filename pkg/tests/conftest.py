import struct
from pathlib import Path

import numpy as np
import pytest

from cogstream import synth
from cogstream.cog import write_cog
from cogstream.codecs import VARIANTS
from cogstream.pipeline import SceneEntry

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def small_scene():
    """700x600x4 smooth scene; edge tiles on both axes at tile=512."""
    return synth.generate_synthetic_scene(700, 600, 4, seed=11, smoothness=0.8)


@pytest.fixture(scope="session")
def paper_scene():
    """2048x2048x4 scene matching the benchmark fixture geometry."""
    return synth.generate_synthetic_scene(2048, 2048, 4, seed=1, smoothness=0.8)


def build_dataset_dir(tmp_dir: Path, scenes, tile=512, keys=None):
    """Write scenes x variants to a directory; returns SceneEntry list."""
    keys = keys or list(VARIANTS)
    entries = []
    for i, pixels in enumerate(scenes):
        scene_id = f"scene{i:04d}"
        variants = {}
        for key in keys:
            path = tmp_dir / f"{scene_id}_{key}.tif"
            path.write_bytes(write_cog(pixels, VARIANTS[key], tile=tile))
            variants[key] = str(path)
        entries.append(SceneEntry(scene_id, variants))
    return entries


@pytest.fixture(scope="session")
def bench_dir(tmp_path_factory, paper_scene):
    """Two 2048^2 scenes x all six variants, shared across the session."""
    out = tmp_path_factory.mktemp("bench_scenes")
    second = synth.generate_synthetic_scene(2048, 2048, 4, seed=2,
                                            smoothness=0.8)
    entries = build_dataset_dir(out, [paper_scene, second])
    return out, entries, [paper_scene, second]


@pytest.fixture(scope="session")
def quick_dir(tmp_path_factory):
    """One 1024^2 scene, a fast dataset for pipeline mechanics tests."""
    out = tmp_path_factory.mktemp("quick_scenes")
    scene = synth.generate_synthetic_scene(1024, 1024, 4, seed=5,
                                           smoothness=0.8)
    entries = build_dataset_dir(out, [scene])
    return out, entries, [scene]


def make_tiff(tags, payload=b"", byteorder="<", magic=42):
    """Hand-craft a minimal classic TIFF for parser error-path tests.

    tags: list of (tag, type, values). Values must fit inline (<= 4 bytes).
    """
    entries = sorted(tags, key=lambda t: t[0])
    ifd_off = 8
    out = bytearray()
    out += struct.pack(byteorder + "2sHI",
                       b"II" if byteorder == "<" else b"MM", magic, ifd_off)
    out += struct.pack(byteorder + "H", len(entries))
    type_fmt = {1: "B", 3: "H", 4: "I"}
    type_size = {1: 1, 3: 2, 4: 4}
    for tag, typ, values in entries:
        packed = struct.pack(
            byteorder + str(len(values)) + type_fmt[typ], *values
        )
        assert len(packed) <= 4, "inline values only"
        out += struct.pack(byteorder + "HHI", tag, typ, len(values))
        out += packed.ljust(4, b"\0")
    out += struct.pack(byteorder + "I", 0)
    out += payload
    return bytes(out)


# --- acceptance reporting -------------------------------------------------------

ACCEPTANCE_RESULTS = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number:2d}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
