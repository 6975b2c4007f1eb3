"""Small-scale runs of the validation drivers; full-size runs are manual."""

from __future__ import annotations

import math
import tempfile

import pytest

from voxblend.errors import VoxblendError
from voxblend.validations._common import corpus_data
from voxblend.validations.ordering import run_ordering
from voxblend.validations.overfit import run_overfit
from voxblend.validations.realtime import run_realtime
from voxblend.validations.smoothness import run_smoothness


def test_overfit_driver_runs() -> None:
    result = run_overfit(seed=1, frames=20, hidden=4, epochs=3, lr=1e-2, batch_size=10)
    assert len(result.history) == 3
    assert math.isfinite(result.rmse) and 0.0 <= result.rmse < 1.0
    assert result.passed == (result.rmse < 0.05)
    assert result.smoothed_increases >= 0


def test_ordering_driver_runs(tmp_path) -> None:
    result = run_ordering(seeds=(0,), minutes=0.1, clips=2, hidden=3, epochs=1, work_dir=tmp_path)
    assert len(result.runs) == 1
    run = result.runs[0]
    assert run.full_rmse > 0.0 and run.plain_rmse > 0.0
    assert result.passed == run.ordered
    assert (tmp_path / "seed0" / "manifest.txt").exists()


def test_smoothness_driver_runs(tmp_path) -> None:
    result = run_smoothness(seeds=(1,), minutes=0.1, clips=2, hidden=3, epochs=1, work_dir=tmp_path)
    run = result.runs[0]
    assert run.smooth_jitter >= 0.0 and run.plain_jitter >= 0.0
    assert result.passed == run.passed
    with pytest.raises(VoxblendError):
        run_smoothness(seeds=(1,), w2=0.0, work_dir=tmp_path)


def test_realtime_driver_runs() -> None:
    report = run_realtime(windows=3, hidden=4)
    assert report.n_windows == 3
    assert "realtime=" in report.format_table()


def test_corpus_data_cleans_up_its_scratch_directory(tmp_path, monkeypatch) -> None:
    monkeypatch.setattr(tempfile, "tempdir", str(tmp_path))
    data = corpus_data(seed=2, minutes=0.1, clips=2)
    assert len(data.train) > 0 and data.val is not None
    assert list(tmp_path.iterdir()) == []
