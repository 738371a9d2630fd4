"""Learned and conventional FM speech demodulation at complex baseband."""

from fmnd.dsp import (
    AudioSignal,
    BasebandSignal,
    FmParams,
    fm_modulate_baseband,
    instantaneous_frequency,
    integrate_phase,
    resample,
)

__all__ = [
    "AudioSignal",
    "BasebandSignal",
    "FmParams",
    "fm_modulate_baseband",
    "instantaneous_frequency",
    "integrate_phase",
    "resample",
]
