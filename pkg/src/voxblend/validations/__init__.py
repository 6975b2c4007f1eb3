"""Long-running acceptance experiments, runnable as ``python -m voxblend.validations.<name>``."""
