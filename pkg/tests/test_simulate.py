import json

import numpy as np
import pytest

from test_session import build_tiny_dataset, tiny_config
from twoafc.datasets import DatasetManifest, ImageRecord, save_dataset
from twoafc.simulate import run_simulation


class TestRunSimulation:
    def test_zero_rounds_leaves_batch_unanswered(self, tmp_path):
        build_tiny_dataset(tmp_path / "data")
        report = run_simulation(tmp_path / "run", tiny_config(tmp_path / "data"), rounds=0)
        assert report.rounds_run == 0
        assert report.answers_total == 0
        assert report.levels is None
        body = json.loads((tmp_path / "run" / "report.json").read_text())
        assert body["rounds_run"] == 0

    def test_two_rounds_emit_artifacts(self, tmp_path):
        build_tiny_dataset(tmp_path / "data")
        report = run_simulation(tmp_path / "run", tiny_config(tmp_path / "data"),
                                rounds=2, max_level=2)
        assert report.rounds_run >= 1
        assert report.answers_total >= 6
        assert (tmp_path / "run" / "dendrogram.json").exists()
        assert (tmp_path / "run" / "dendrogram.newick").exists()
        assert (tmp_path / "run" / "level_report.csv").exists()
        assert report.levels is not None
        assert [row[0] for row in report.levels.rows] == [0, 1, 2]
        for row in report.per_round:
            assert "family_nmi_3" in row

    def test_requires_oracle(self, tmp_path):
        build_tiny_dataset(tmp_path / "data")
        config = tiny_config(tmp_path / "data", oracle=None)
        with pytest.raises(Exception):
            run_simulation(tmp_path / "run", config, rounds=1)

    def test_deterministic_given_seeds(self, tmp_path):
        build_tiny_dataset(tmp_path / "data")
        a = run_simulation(tmp_path / "a", tiny_config(tmp_path / "data"), rounds=2, max_level=1)
        b = run_simulation(tmp_path / "b", tiny_config(tmp_path / "data"), rounds=2, max_level=1)
        assert a.to_json() == b.to_json()

    def test_early_stop_at_threshold(self, tmp_path):
        build_tiny_dataset(tmp_path / "data")
        report = run_simulation(tmp_path / "run", tiny_config(tmp_path / "data"),
                                rounds=4, stop_at_family_nmi=0.0)
        assert report.rounds_run == 1  # any NMI >= 0 stops immediately

    def test_labeled_dataset_path(self, tmp_path, rng):
        # no attribute tuples: the oracle answers from labels + pixel tie-break
        records = [
            ImageRecord(id=f"lab{i:02d}",
                        pixels=rng.integers(0, 256, (12, 12, 3), dtype=np.uint8),
                        label=i % 3)
            for i in range(12)
        ]
        manifest = DatasetManifest(name="labeled", image_shape=(12, 12, 3), count=12,
                                   train_ids=[r.id for r in records])
        save_dataset(tmp_path / "data", manifest, records)
        report = run_simulation(tmp_path / "run", tiny_config(tmp_path / "data"),
                                rounds=1, max_level=2)
        assert report.rounds_run == 1
        assert report.answers_total == 6
        assert report.levels is not None  # scored against the integer labels
        assert report.final_family_nmi_3 is None  # no shape families here
