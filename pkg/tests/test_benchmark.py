"""
Multi-seed night benchmark.

Runs the default configuration end to end for seeds 1 to 3, which takes minutes per
seed. Enabled with YODAR_RUN_BENCHMARK=1.
"""

import numpy as np
import pytest

from src.pipeline.commands import cmd_run
from src.shared.config import RunConfig, settings

SEEDS = (1, 2, 3)

pytestmark = [
    pytest.mark.benchmark,
    pytest.mark.skipif(not settings.run_benchmark, reason="set YODAR_RUN_BENCHMARK=1 to run"),
]


@pytest.fixture(scope="module")
def reports(tmp_path_factory):
    return {seed: cmd_run(RunConfig().with_seed(seed), tmp_path_factory.mktemp(f"seed{seed}")) for seed in SEEDS}


def test_fused_map_beats_camera_on_every_seed(reports):
    for seed, report in reports.items():
        fused, camera = report.summary("fused"), report.summary("camera")
        assert fused.mean_ap >= camera.mean_ap + 0.03, f"seed {seed}"


def test_fused_finds_more_vehicles_in_most_distance_bins(reports):
    fused = np.mean([[b.tp_matched for b in r.distance_bins["fused"]] for r in reports.values()], axis=0)
    camera = np.mean([[b.tp_matched for b in r.distance_bins["camera"]] for r in reports.values()], axis=0)
    assert len(fused) == 10
    assert int(np.sum(fused >= camera)) >= 8


def test_camera_needs_more_false_positives_for_the_same_hits(reports):
    for seed, report in reports.items():
        rows = {row.status: row for row in report.threshold_table}
        assert "matched" in rows, f"seed {seed}"
        matched, fused = rows["matched"], rows["fused"]
        assert abs(matched.tp - fused.tp) <= max(1.0, 0.01 * fused.tp), f"seed {seed}"
        assert matched.fp >= 1.5 * fused.fp, f"seed {seed}"
