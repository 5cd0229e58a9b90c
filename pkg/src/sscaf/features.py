"""Deterministic DSP front end.

Framing uses a 46 ms Hamming window with hop = floor(window * (1 - 1/3)),
i.e. 736/490 samples at the canonical 16 kHz rate, which yields 489 frames
over a 15 s clip before the crop to 480.  Mel filters use the HTK scale
(2595 * log10(1 + f/700)) with triangles linear in Hz and each filter's
weights normalized to sum to 1.  A-weighting is applied per frame in the
frequency domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip
from .errors import ConfigError, InputError

WINDOW_MS = 46.0
OVERLAP = 1.0 / 3.0
N_FRAMES = 480
N_MELS = 64
F_LO_HZ = 50.0
LOG_FLOOR_EPS = 1e-10
SILENCE_FLOOR_DB = -120.0


@dataclass
class Spectrogram:
    """Per-frame power spectrum: (frames, window/2 + 1), entries >= 0."""

    power: np.ndarray
    sample_rate: int
    window: int
    hop: int

    @property
    def frame_rate(self):
        return self.sample_rate / self.hop

    @property
    def bin_freqs(self):
        return np.arange(self.power.shape[1]) * self.sample_rate / self.window


@dataclass
class FeaturePair:
    """Model input: (480, 64) log-Mel matrix and (480,) frame-RMS track."""

    mel: np.ndarray
    rms: np.ndarray

    def __post_init__(self):
        self.mel = np.asarray(self.mel, dtype=np.float32)
        self.rms = np.asarray(self.rms, dtype=np.float32)
        if self.mel.shape != (N_FRAMES, N_MELS):
            raise InputError(f"mel features must be {(N_FRAMES, N_MELS)}, got {self.mel.shape}")
        if self.rms.shape != (N_FRAMES,):
            raise InputError(f"rms features must be ({N_FRAMES},), got {self.rms.shape}")


@dataclass
class LevelSummary:
    """A-weighted equivalent level relative to digital full scale, dB."""

    laeq_db: float


def window_hop_samples(sample_rate, window_ms=WINDOW_MS, overlap=OVERLAP):
    window = int(round(window_ms / 1000.0 * sample_rate))
    hop = int(window * (1.0 - overlap))
    return window, hop


def frame_count(n_samples, window, hop):
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def _frame_signal(x, window, hop):
    n = frame_count(len(x), window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def stft(clip: AudioClip, window_ms=WINDOW_MS, overlap=OVERLAP) -> Spectrogram:
    """Hamming-windowed power spectrogram, bins 0..window/2."""
    window, hop = window_hop_samples(clip.sample_rate, window_ms, overlap)
    if len(clip.samples) < window:
        raise InputError(
            f"clip of {len(clip.samples)} samples shorter than one window ({window})"
        )
    frames = _frame_signal(clip.samples, window, hop)
    spectrum = np.fft.rfft(frames * np.hamming(window), axis=1)
    power = np.abs(spectrum) ** 2
    return Spectrogram(power, clip.sample_rate, window, hop)


def mel_scale(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, window, n_mels=N_MELS, f_lo=F_LO_HZ, f_hi=None):
    """(n_mels, window/2 + 1) triangular filters, each row summing to 1."""
    if f_hi is None:
        f_hi = sample_rate / 2.0
    if n_mels < 1:
        raise ConfigError(f"n_mels must be >= 1, got {n_mels}")
    if f_lo >= f_hi:
        raise ConfigError(f"f_lo {f_lo} must be below f_hi {f_hi}")
    corners = mel_to_hz(np.linspace(mel_scale(f_lo), mel_scale(f_hi), n_mels + 2))
    bin_freqs = np.arange(window // 2 + 1) * sample_rate / window
    bank = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = corners[m], corners[m + 1], corners[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
        total = bank[m].sum()
        if total == 0.0:
            raise ConfigError(
                f"mel filter {m} covers no FFT bins; window {window} too short "
                f"for {n_mels} filters over [{f_lo}, {f_hi}] Hz"
            )
        bank[m] /= total
    return bank


def log_mel(spec: Spectrogram, n_mels=N_MELS, f_lo=F_LO_HZ, f_hi=None):
    """ln(mel-filtered power + 1e-10) per frame: (frames, n_mels)."""
    bank = mel_filterbank(spec.sample_rate, spec.window, n_mels, f_lo, f_hi)
    return np.log(spec.power @ bank.T + LOG_FLOOR_EPS)


def frame_rms(clip: AudioClip, window_ms=WINDOW_MS, overlap=OVERLAP):
    """Per-frame RMS on unwindowed frames; framing matches stft."""
    window, hop = window_hop_samples(clip.sample_rate, window_ms, overlap)
    if len(clip.samples) < window:
        raise InputError(
            f"clip of {len(clip.samples)} samples shorter than one window ({window})"
        )
    frames = _frame_signal(clip.samples, window, hop)
    return np.sqrt(np.mean(frames ** 2, axis=1))


def extract_features(clip: AudioClip) -> FeaturePair:
    """Log-Mel and RMS streams, cropped (or padded) to exactly 480 frames.

    The crop keeps frames 0..479; shorter clips are padded with the log
    floor / zero.  Both streams share the stft framing, so their frame
    indices line up.
    """
    spec = stft(clip)
    mel = log_mel(spec)
    rms = frame_rms(clip)
    n = mel.shape[0]
    if n >= N_FRAMES:
        mel = mel[:N_FRAMES]
        rms = rms[:N_FRAMES]
    else:
        mel_pad = np.full((N_FRAMES - n, mel.shape[1]), np.log(LOG_FLOOR_EPS))
        mel = np.vstack([mel, mel_pad])
        rms = np.concatenate([rms, np.zeros(N_FRAMES - n)])
    return FeaturePair(mel, rms)


# ----------------------------------------------------------------------
# A-weighted equivalent level
# ----------------------------------------------------------------------

def a_weighting_db(freqs):
    """A-weighting gain in dB (0 dB at 1 kHz) from the analog pole formula."""
    f = np.asarray(freqs, dtype=np.float64)
    f2 = f ** 2

    def response(f2):
        num = (12194.0 ** 2) * f2 ** 2
        den = (
            (f2 + 20.6 ** 2)
            * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
            * (f2 + 12194.0 ** 2)
        )
        return num / den

    with np.errstate(divide="ignore"):
        gain = 20.0 * np.log10(response(f2) / response(np.array(1000.0 ** 2)))
    return gain


def a_weighted_leq(clip: AudioClip) -> LevelSummary:
    """Equivalent A-weighted level over the clip, dB re digital full scale.

    Power spectra are A-weighted per frame and averaged over frames; clips
    shorter than one window are zero-padded up to it.  An all-zero clip
    returns the -120 dB floor.
    """
    if len(clip.samples) == 0:
        raise InputError("a_weighted_leq of an empty clip")
    window, _ = window_hop_samples(clip.sample_rate)
    samples = clip.samples
    if len(samples) < window:
        samples = np.concatenate([samples, np.zeros(window - len(samples))])
        clip = AudioClip(samples, clip.sample_rate)
    spec = stft(clip)
    gain = 10.0 ** (a_weighting_db(spec.bin_freqs) / 10.0)
    gain[spec.bin_freqs == 0.0] = 0.0
    # conjugate-symmetry weights so the weighted bin sum matches frame energy
    sym = np.full(spec.power.shape[1], 2.0)
    sym[0] = 1.0
    if spec.window % 2 == 0:
        sym[-1] = 1.0
    w = np.hamming(spec.window)
    frame_power = (spec.power * (gain * sym)).sum(axis=1) / (spec.window * np.sum(w ** 2))
    mean_power = float(np.mean(frame_power))
    if mean_power <= 0.0:
        return LevelSummary(SILENCE_FLOOR_DB)
    return LevelSummary(max(10.0 * np.log10(mean_power), SILENCE_FLOOR_DB))
