"""Out-of-distribution detection for FMCW radar range-doppler streams.

Pipeline: raw ADC frame cubes -> range FFT -> MTI -> doppler FFT -> range-doppler
images -> sliding-window respiration accumulation (RESPD) -> one-encoder /
multi-decoder reconstruction network -> multi-threshold ID/OOD verdicts.
"""

__version__ = "0.1.0"
