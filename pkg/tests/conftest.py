"""
Shared pytest fixtures for the YOdar test suite.

Golden values live in tests/golden/<name>.json and are compared to 1e-12. A missing
golden file fails the test; with YODAR_UPDATE_GOLDEN=1 the current value is written
instead.
"""

import json
import math
from pathlib import Path
from typing import Any, Callable

import pytest

from src.shared.config import (
    BoostConfig,
    CameraSimConfig,
    NetworkConfig,
    RadarSimConfig,
    RunConfig,
    SplitConfig,
    TrainSchedule,
    WorldConfig,
    settings,
)
from src.shared.models import CameraModel, ImageGrid

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def grid() -> ImageGrid:
    return ImageGrid()


@pytest.fixture
def small_grid() -> ImageGrid:
    """Eight slices of ten pixels."""
    return ImageGrid(width_px=80, height_px=60, n_slices=8)


@pytest.fixture
def camera() -> CameraModel:
    return CameraModel()


def _assert_matches(current: Any, expected: Any, where: str) -> None:
    if isinstance(expected, float) or isinstance(current, float):
        assert math.isclose(current, expected, rel_tol=1e-12, abs_tol=1e-12), f"{where}: {current} != {expected}"
    elif isinstance(expected, list):
        assert isinstance(current, list) and len(current) == len(expected), f"{where}: length differs"
        for i, (c, e) in enumerate(zip(current, expected)):
            _assert_matches(c, e, f"{where}[{i}]")
    elif isinstance(expected, dict):
        assert isinstance(current, dict) and set(current) == set(expected), f"{where}: keys differ"
        for key in expected:
            _assert_matches(current[key], expected[key], f"{where}.{key}")
    else:
        assert current == expected, f"{where}: {current!r} != {expected!r}"


@pytest.fixture
def golden() -> Callable[[str, Any], None]:
    def check(name: str, value: Any) -> None:
        path = GOLDEN_DIR / f"{name}.json"
        # Round-trip through JSON so tuples and lists compare alike.
        current = json.loads(json.dumps(value))
        if not path.exists():
            if not settings.update_golden:
                pytest.fail(f"golden file {path.name} is missing; pin it with YODAR_UPDATE_GOLDEN=1")
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(current, indent=2, sort_keys=True) + "\n")
            return
        _assert_matches(current, json.loads(path.read_text()), name)

    return check


def make_tiny_run_config() -> RunConfig:
    """A seconds-scale configuration that still exercises every pipeline stage."""
    return RunConfig(
        seed=7,
        world=WorldConfig(vehicles_per_scene=(1, 4)),
        camera_sim=CameraSimConfig(),
        radar_sim=RadarSimConfig(),
        network=NetworkConfig(width=4),
        train_schedule=TrainSchedule(phases=[(2, 1e-3), (1, 1e-4)], batch_size=16),
        boost=BoostConfig(n_rounds=10, max_depth=2),
        splits=SplitConfig(
            scenes={"train": 24, "val": 8, "test": 12},
            night_fraction={"train": 0.09, "val": 0.09, "test": 1.0},
        ),
    )


@pytest.fixture
def tiny_run_config() -> RunConfig:
    return make_tiny_run_config()


@pytest.fixture(scope="session")
def finished_run(tmp_path_factory) -> Path:
    """Run directory of one complete tiny pipeline run, shared by the whole session."""
    from src.pipeline.commands import cmd_run

    run_dir = tmp_path_factory.mktemp("first") / "run"
    cmd_run(make_tiny_run_config(), run_dir)
    return run_dir
