import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from garment_nerf.generator import GeneratorSchedule, pretrain_generator  # noqa: E402
from garment_nerf.geometry import Mesh  # noqa: E402
from garment_nerf.model import ModelConfig  # noqa: E402
from garment_nerf.synthdata import SceneConfig, build_dataset  # noqa: E402
from garment_nerf.training import TrainConfig  # noqa: E402

torch.set_num_threads(1)


def tiny_scene(**kw) -> SceneConfig:
    base = dict(image_size=64, n_cameras=4, n_train_frames=20, n_unseen_frames=4, n_novel_view_frames=3,
                warmup_frames=3)
    base.update(kw)
    return SceneConfig(**base)


def tiny_model(**kw) -> ModelConfig:
    base = dict(uv_resolution=32, image_size=64, n_samples=8, encoder_width=0.25, nerf_width=32, decomp_hidden=16)
    base.update(kw)
    return ModelConfig(**base)


def tiny_train(**kw) -> TrainConfig:
    base = dict(iterations=4, checkpoint_every=2, log_every=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    return build_dataset(tiny_scene())


@pytest.fixture(scope="session")
def tiny_generator(tiny_dataset):
    s = GeneratorSchedule(steps=3, texture_resolution=(32, 32), texture_channels=4, width_mult=0.25, log_every=0)
    return pretrain_generator(tiny_dataset, s)


def cube_mesh(size=1.0) -> Mesh:
    """Axis-aligned cube [0, size]^3 with outward-facing triangles."""
    v = np.array([[x, y, z] for x in (0, size) for y in (0, size) for z in (0, size)], dtype=np.float64)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return Mesh(v, np.array(tris))


def random_mesh(rng, n_tris=None) -> Mesh:
    """Perturbed sphere-like mesh with at most 500 triangles."""
    n_lon = int(rng.integers(4, 16))
    n_lat = int(rng.integers(3, 12))
    th = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    ph = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    pts = [[0, 0, 1]] + [[np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)] for t in th for p in ph] + [[0, 0, -1]]
    v = np.array(pts) * rng.uniform(0.5, 2.0, 3) + rng.normal(0, 0.05, (len(pts), 3))
    tris = []
    for j in range(n_lon):
        tris.append((0, 1 + j, 1 + (j + 1) % n_lon))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a = 1 + i * n_lon + j
            b = 1 + i * n_lon + (j + 1) % n_lon
            tris += [(a, a + n_lon, b), (b, a + n_lon, b + n_lon)]
    last = len(pts) - 1
    base = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        tris.append((base + j, last, base + (j + 1) % n_lon))
    tris = np.array(tris)
    assert len(tris) <= 500
    return Mesh(v, tris)


# ---------------------------------------------------------------- acceptance summary

CRITERIA = {
    1: "closest point vs exhaustive scan",
    2: "info-map oracles",
    3: "volume rendering",
    4: "compositing and recolor",
    5: "loss formulas",
    6: "full-scale shape audit",
    7: "desk convergence",
    8: "freeze and determinism",
    9: "ablation harness",
    10: "metric self-checks",
}
_acceptance: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    n = int(report.nodeid.split("test_criterion_")[1][:2])
    if report.when == "call" or report.outcome != "passed":
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        if _acceptance.get(n) != "FAIL":
            _acceptance[n] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        terminalreporter.write_line(f"criterion {n:2d} ({name}): {_acceptance.get(n, 'NOT RUN')}")
