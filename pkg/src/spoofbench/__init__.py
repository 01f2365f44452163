"""spoofbench: re-implemented audio spoof detectors under one training and scoring protocol."""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
LABELS = ("bonafide", "spoof")
