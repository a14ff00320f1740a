"""Experiment orchestration: synthetic data, training runs, sweeps and I/O."""
