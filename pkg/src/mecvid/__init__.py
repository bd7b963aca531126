"""Cooperative multi-bitrate video caching, transcoding and delivery optimizer
for MC-NOMA edge networks: problem model, solvers, baselines and an
experiment harness."""

__version__ = "0.1.0"
