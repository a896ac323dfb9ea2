"""aerialforge: hybrid DSP/NN graph runtime, pluggable PUSCH channel
estimators, engine blob format, and a TDL uplink link-level simulator."""

__version__ = "0.1.0"
