from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]
DEFAULT_SCENARIO = REPO / "scenarios" / "default.json"


@pytest.fixture(scope="session")
def default_scenario_path() -> Path:
    return DEFAULT_SCENARIO


@pytest.fixture()
def default_scenario_dict() -> dict:
    return json.loads(DEFAULT_SCENARIO.read_text())


def write_scenario(tmp_path: Path, data: dict, name: str = "scenario.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def march_ray(world, origin, direction, max_range, step=1e-3):
    """Brute-force ray-marching oracle: first sample point inside any box."""
    from dronecourier.world import is_occupied_batch

    n_steps = int(max_range / step)
    ts = (np.arange(n_steps) + 1) * step
    for lo in range(0, n_steps, 2000):
        chunk = ts[lo:lo + 2000]
        pts = origin + chunk[:, None] * direction
        hits = is_occupied_batch(world, pts)
        if hits.any():
            return float(chunk[np.argmax(hits)])
    return None


def fill_buffer_from_world(buf, world, free_elsewhere=True):
    """Rasterize the ground-truth boxes into the ring buffer (test oracle)."""
    from dronecourier.mapping import CellState
    from dronecourier.world import is_occupied_batch

    n = buf.n
    idx = np.indices((n, n, n)).reshape(3, -1).T + buf.offset
    centers = (idx + 0.5) * buf.resolution
    occ = is_occupied_batch(world, centers)
    states = np.where(occ, np.uint8(CellState.OCCUPIED),
                      np.uint8(CellState.FREE if free_elsewhere else CellState.UNKNOWN))
    slots = idx & buf.mask
    buf.cells[slots[:, 0], slots[:, 1], slots[:, 2]] = states
