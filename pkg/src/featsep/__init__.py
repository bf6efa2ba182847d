"""Desk-scale testbed for spatial/timbre feature preference in multi-channel
source separation: dataset simulation, separator and suppressor training,
SI-SDR evaluation, and balanced-training experiments."""

__version__ = "0.1.0"
