"""pulsezero: global exploration and classical baselines for quantum control pulses."""

__version__ = "0.1.0"
