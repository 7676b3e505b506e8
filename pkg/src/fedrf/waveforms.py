"""Synthetic fingerprinted baseband waveforms.

Each transmitter is characterized by a small set of hardware impairments
(IQ imbalance, DC offset, cubic PA nonlinearity, carrier frequency offset,
oscillator phase noise). A waveform is produced by passing random unit-power
QPSK symbols through the transmitter's impairment chain and then through an
AWGN channel at a requested SNR.

All generation is float64 and fully deterministic given the seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

# Uniform draw ranges for the impairment parameters. Chosen so that classes
# stay separable at 10 dB SNR while individual impairments remain subtle.
GAIN_IMBALANCE_RANGE = (0.9, 1.1)
PHASE_IMBALANCE_RANGE = (-math.radians(5.0), math.radians(5.0))
DC_OFFSET_RANGE = (-0.05, 0.05)
CFO_RANGE = (-0.01, 0.01)  # cycles per sample
PHASE_NOISE_STD_RANGE = (0.0, 0.01)  # radians per sample step
PA_CUBIC_RANGE = (-0.05, 0.05)

_QPSK_POINTS = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2.0)


@dataclass(frozen=True)
class TransmitterProfile:
    """Hardware impairment parameters fingerprinting one transmitter.

    ``iq_gain_imbalance`` is the Q-branch gain relative to the I branch and
    ``iq_phase_imbalance`` the Q-branch phase skew in radians; both are 1/0
    for an ideal transmitter. ``cfo_norm`` is the carrier frequency offset in
    cycles per sample. ``phase_noise_std`` is the per-step standard deviation
    of the oscillator phase random walk.
    """

    transmitter_id: int
    iq_gain_imbalance: float
    iq_phase_imbalance: float
    dc_offset_i: float
    dc_offset_q: float
    cfo_norm: float
    phase_noise_std: float
    pa_cubic_coeff: float

    def impairment_tuple(self) -> tuple:
        """All impairment fields (everything except the id)."""
        return tuple(
            getattr(self, f.name) for f in fields(self) if f.name != "transmitter_id"
        )


def identity_profile(transmitter_id: int = 0) -> TransmitterProfile:
    """Profile whose impairment chain is the exact identity map."""
    return TransmitterProfile(
        transmitter_id=transmitter_id,
        iq_gain_imbalance=1.0,
        iq_phase_imbalance=0.0,
        dc_offset_i=0.0,
        dc_offset_q=0.0,
        cfo_norm=0.0,
        phase_noise_std=0.0,
        pa_cubic_coeff=0.0,
    )


def record_stream(master_seed: int, transmitter_id: int, record_index: int) -> np.random.Generator:
    """Independent RNG stream for one dataset record.

    Derived from (seed, transmitter, record) so per-record generation is
    schedule-independent and can run in any order.
    """
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, transmitter_id, record_index))
    )


def synth_transmitter_profile(master_seed: int, transmitter_id: int) -> TransmitterProfile:
    """Draw a transmitter's impairment parameters.

    Deterministic function of (master_seed, transmitter_id); distinct ids
    yield distinct parameter tuples with probability one.
    """
    if transmitter_id < 0:
        raise ValueError("transmitter_id must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, transmitter_id)))
    return TransmitterProfile(
        transmitter_id=transmitter_id,
        iq_gain_imbalance=rng.uniform(*GAIN_IMBALANCE_RANGE),
        iq_phase_imbalance=rng.uniform(*PHASE_IMBALANCE_RANGE),
        dc_offset_i=rng.uniform(*DC_OFFSET_RANGE),
        dc_offset_q=rng.uniform(*DC_OFFSET_RANGE),
        cfo_norm=rng.uniform(*CFO_RANGE),
        phase_noise_std=rng.uniform(*PHASE_NOISE_STD_RANGE),
        pa_cubic_coeff=rng.uniform(*PA_CUBIC_RANGE),
    )


def qpsk_symbols(length: int, rng: np.random.Generator) -> np.ndarray:
    """Random unit-power QPSK symbols, one symbol per sample."""
    if length < 2:
        raise ValueError("waveform length must be >= 2")
    return _QPSK_POINTS[rng.integers(0, 4, size=length)]


def apply_fingerprint(
    profile: TransmitterProfile, symbols: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Pass symbols through the transmitter impairment chain.

    Stages, in order: IQ imbalance, DC offset, cubic PA nonlinearity, CFO
    rotation exp(j*2*pi*cfo_norm*k), cumulative phase-noise random walk.
    The identity profile reproduces the input exactly.
    """
    x = np.asarray(symbols, dtype=np.complex128)
    if not np.all(np.isfinite(x)):
        raise ValueError("input symbols must be finite")
    n = x.shape[0]

    i = x.real
    q = profile.iq_gain_imbalance * (
        x.imag * math.cos(profile.iq_phase_imbalance)
        + x.real * math.sin(profile.iq_phase_imbalance)
    )
    x = i + 1j * q
    x = x + (profile.dc_offset_i + 1j * profile.dc_offset_q)
    x = x + profile.pa_cubic_coeff * (np.abs(x) ** 2) * x
    x = x * np.exp(2j * np.pi * profile.cfo_norm * np.arange(n))
    walk = np.cumsum(rng.normal(0.0, profile.phase_noise_std, size=n))
    x = x * np.exp(1j * walk)
    return x


def add_awgn(waveform: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add complex white Gaussian noise at the requested SNR.

    Noise power is set so signal_power / noise_power = 10^(snr_db/10), with
    independent real and imaginary components carrying half the noise
    variance each. ``snr_db = inf`` returns the input unchanged.
    """
    x = np.asarray(waveform, dtype=np.complex128)
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    signal_power = float(np.mean(np.abs(x) ** 2))
    if signal_power == 0.0:
        raise ValueError("zero-power signal: SNR scaling undefined for finite snr_db")
    noise_power = signal_power / (10.0 ** (snr_db / 10.0))
    s = math.sqrt(noise_power / 2.0)
    noise = rng.normal(0.0, s, size=x.shape[0]) + 1j * rng.normal(0.0, s, size=x.shape[0])
    return x + noise


def check_waveform(w: np.ndarray) -> None:
    """Validate the basic waveform contract (length >= 2, finite, 1-D complex)."""
    w = np.asarray(w)
    if w.ndim != 1 or w.shape[0] < 2:
        raise ValueError("waveform must be 1-D with length >= 2")
    if not np.all(np.isfinite(w)):
        raise ValueError("waveform contains non-finite samples")
