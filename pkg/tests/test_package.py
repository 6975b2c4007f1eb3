"""Smoke tests for the voxblend package surface."""

import voxblend
from voxblend import __version__
from voxblend.cli import main


def test_version_is_semver_like() -> None:
    parts = __version__.split(".")
    assert len(parts) >= 3
    assert all(part.isdigit() for part in parts[:3])


def test_public_names() -> None:
    assert issubclass(voxblend.VoxblendError, RuntimeError)
    assert voxblend.FeatureConfig().n_columns == 39


def test_help_and_version_exit_cleanly(capsys) -> None:
    assert main(["--help"]) == 0
    assert "infer" in capsys.readouterr().out
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
