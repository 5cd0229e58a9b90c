"""Audio file I/O, dataset manifests, and the SNR-controlled mixing harness.

WAV support covers RIFF/WAVE containers holding 16-bit PCM or IEEE float32,
mono or stereo; stereo is downmixed to mono by channel mean on load and
integer PCM is normalized by full scale (32768).  Files are always written
back as 16-bit PCM.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    AudioFormatError,
    DegenerateInputError,
    InputError,
    ManifestError,
    UnsupportedAudioError,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000
CLIP_SECONDS = 15.0
NOISE_SEGMENT_SECONDS = 5.0

#: The 24 recognized sound-source classes, in canonical column order.
SOURCE_LABELS = (
    "Aircraft", "Bells", "Bird tweets", "Bus", "Car", "Children",
    "Construction", "Dog bark", "Footsteps", "General traffic", "Horn",
    "Laughter", "Motorcycle", "Music", "Non-identifiable", "Rail",
    "Rustling leaves", "Screeching brakes", "Shouting", "Siren", "Speech",
    "Ventilation", "Water", "Other",
)
N_SOURCES = len(SOURCE_LABELS)

#: Sentinel SNR meaning "add no noise at all" (control condition).
NO_NOISE_SNR = math.inf


@dataclass
class AudioClip:
    """Mono sample buffer in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError(f"AudioClip stores mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("AudioClip samples must be finite")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def rms(self):
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass
class ClipRecord:
    """One manifest row: audio path, 24 binary source labels, annoyance."""

    clip_id: str
    path: str
    labels: tuple
    annoyance: float

    def __post_init__(self):
        self.labels = tuple(bool(v) for v in self.labels)
        if len(self.labels) != N_SOURCES:
            raise ManifestError(
                f"record '{self.clip_id}': expected {N_SOURCES} labels, got {len(self.labels)}"
            )
        if not (1.0 <= self.annoyance <= 10.0):
            raise ManifestError(
                f"record '{self.clip_id}': annoyance {self.annoyance} outside [1, 10]"
            )

    def label_array(self):
        return np.array(self.labels, dtype=np.float32)


@dataclass
class DatasetManifest:
    records: list
    split: str = "train"

    def __post_init__(self):
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate clip_ids in manifest: {dupes}")

    def __len__(self):
        return len(self.records)

    def label_matrix(self):
        return np.array([r.labels for r in self.records], dtype=np.float32)

    def annoyance_vector(self):
        return np.array([r.annoyance for r in self.records], dtype=np.float64)


@dataclass
class MixSpec:
    """Noise insertions for one base clip.

    1 to 3 noise segments of ~5 s each, inserted at per-segment offsets
    (seconds); ``snr_db`` fixes the scaled-segment RMS relative to the
    overlapped base-region RMS.  ``math.inf`` is the no-noise control.
    """

    noise_clips: list
    insert_offsets: list
    snr_db: float = 0.0
    base_record: ClipRecord | None = None

    def __post_init__(self):
        if not (1 <= len(self.noise_clips) <= 3):
            raise InputError(f"MixSpec needs 1-3 noise clips, got {len(self.noise_clips)}")
        if len(self.insert_offsets) != len(self.noise_clips):
            raise InputError("one insert offset per noise clip required")


# ----------------------------------------------------------------------
# WAV I/O
# ----------------------------------------------------------------------

_PCM16_FULL_SCALE = 32768.0


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 RIFF/WAVE file as a normalized mono clip."""
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises plain ValueError on bad containers
        raise AudioFormatError(f"{path}: malformed WAV container ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_FULL_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedAudioError(
            f"{path}: unsupported sample encoding {data.dtype}; need PCM16 or float32"
        )

    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise UnsupportedAudioError(
                f"{path}: {samples.shape[1]} channels; only mono/stereo supported"
            )
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise AudioFormatError(f"{path}: unexpected data layout {samples.shape}")
    return AudioClip(samples, int(rate))


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as 16-bit PCM, clipping samples to [-1, 1] first."""
    if not np.all(np.isfinite(clip.samples)):
        raise InputError("cannot write non-finite samples")
    quantized = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(str(path), clip.sample_rate, quantized)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling to ``target_rate``."""
    if target_rate <= 0:
        raise InputError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_in = len(clip.samples)
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n_in), clip.samples)
    return AudioClip(out, target_rate)


# ----------------------------------------------------------------------
# SNR mixing
# ----------------------------------------------------------------------

def mix_at_snr(base: AudioClip, spec: MixSpec) -> AudioClip:
    """Add the spec's noise segments into ``base`` at the requested SNR.

    Each segment is scaled so 20*log10(rms_base_region / rms_scaled_noise)
    equals ``spec.snr_db``, where the base region is the stretch of the
    *original* base signal the segment overlaps.  The result is not
    re-normalized; clipping is logged, not prevented.
    """
    out = base.samples.copy()
    if spec.snr_db == NO_NOISE_SNR:
        return AudioClip(out, base.sample_rate)

    for noise, offset in zip(spec.noise_clips, spec.insert_offsets):
        if noise.sample_rate != base.sample_rate:
            raise InputError(
                f"noise rate {noise.sample_rate} != base rate {base.sample_rate}"
            )
        start = int(round(offset * base.sample_rate))
        stop = start + len(noise.samples)
        if start < 0 or stop > len(base.samples):
            raise InputError(
                f"insertion at {offset:.3f}s (samples {start}:{stop}) "
                f"does not fit in a {base.duration:.3f}s base clip"
            )
        noise_rms = noise.rms()
        if noise_rms == 0.0:
            raise DegenerateInputError("zero-RMS noise segment: SNR scale undefined")
        region_rms = float(np.sqrt(np.mean(base.samples[start:stop] ** 2)))
        target_noise_rms = region_rms / (10.0 ** (spec.snr_db / 20.0))
        out[start:stop] += (target_noise_rms / noise_rms) * noise.samples

    n_clipped = int(np.count_nonzero(np.abs(out) > 1.0))
    if n_clipped:
        logger.warning("mix_at_snr: %d samples exceed full scale after mixing", n_clipped)
    return AudioClip(out, base.sample_rate)


def noise_scale_for_snr(base_region: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Scale factor applied to ``noise`` so the mix realizes ``snr_db``."""
    noise_rms = float(np.sqrt(np.mean(np.asarray(noise, dtype=np.float64) ** 2)))
    if noise_rms == 0.0:
        raise DegenerateInputError("zero-RMS noise segment: SNR scale undefined")
    region_rms = float(np.sqrt(np.mean(np.asarray(base_region, dtype=np.float64) ** 2)))
    return region_rms / (10.0 ** (snr_db / 20.0)) / noise_rms


# ----------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------

_MANIFEST_COLUMNS = ("clip_id", "path", "annoyance") + SOURCE_LABELS


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write the manifest as UTF-8 CSV; annoyance keeps 6 decimal digits."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_MANIFEST_COLUMNS)
    for rec in manifest.records:
        writer.writerow(
            [rec.clip_id, rec.path, f"{rec.annoyance:.6f}"]
            + [str(int(v)) for v in rec.labels]
        )
    path.write_text(buf.getvalue(), encoding="utf-8")


def load_manifest(path, split="train") -> DatasetManifest:
    """Parse and validate a manifest CSV; errors name the offending row."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest file") from None
        if tuple(header) != _MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: bad header; expected {len(_MANIFEST_COLUMNS)} columns "
                f"starting with clip_id,path,annoyance"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(_MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path} row {lineno}: expected {len(_MANIFEST_COLUMNS)} "
                    f"columns, got {len(row)}"
                )
            clip_id, clip_path, annoy_s = row[0], row[1], row[2]
            try:
                annoyance = float(annoy_s)
            except ValueError:
                raise ManifestError(
                    f"{path} row {lineno}: annoyance '{annoy_s}' is not a number"
                ) from None
            if not (1.0 <= annoyance <= 10.0):
                raise ManifestError(
                    f"{path} row {lineno}: annoyance {annoyance} outside [1, 10]"
                )
            labels = []
            for col, val in zip(SOURCE_LABELS, row[3:]):
                if val not in ("0", "1"):
                    raise ManifestError(
                        f"{path} row {lineno}: label '{col}' must be 0 or 1, got '{val}'"
                    )
                labels.append(val == "1")
            try:
                records.append(ClipRecord(clip_id, clip_path, tuple(labels), annoyance))
            except ManifestError as exc:
                raise ManifestError(f"{path} row {lineno}: {exc}") from None
    return DatasetManifest(records, split=split)


def resolve_clip_path(manifest_path, record: ClipRecord) -> Path:
    """Record paths are taken relative to the manifest's directory."""
    p = Path(record.path)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p
