"""Synthetic soundscape generation.

Each 15 s clip is a low-level noise floor plus 1-4 archetype events drawn
from a small registry of parameterized signal families (harmonic stacks,
sweeps, chirps, filtered and amplitude-modulated noise).  Labels reflect
the archetypes present; the annoyance rating follows a fixed documented
rule:

    annoyance = clamp(2.0 + sum(per-source weights present)
                          + 1.5 * level_term, 1, 10)

where level_term maps the clip's A-weighted level from [-50, -15] dBFS
onto [0, 1].  Generation is deterministic: each clip derives its RNG from
(seed, crc32(clip_id)), so clips may be generated in any order or in
parallel with identical results.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (
    CLIP_SECONDS,
    DEFAULT_SAMPLE_RATE,
    NOISE_SEGMENT_SECONDS,
    SOURCE_LABELS,
    AudioClip,
    ClipRecord,
    DatasetManifest,
    save_manifest,
    write_wav,
)
from .errors import ConfigError
from .features import a_weighted_leq

ANNOYANCE_BASE = 2.0
LEVEL_COEFF = 1.5
LEVEL_DB_LO = -50.0
LEVEL_DB_HI = -15.0


@dataclass(frozen=True)
class Archetype:
    """A named synthetic source: a renderer plus label slot and weight."""

    name: str
    kind: str
    label: str
    weight: float


#: Built-in archetypes; configs choose a subset and may override
#: weight.<name> and label.<name>.
ARCHETYPES = {
    "engine": Archetype("engine", "engine", "Motorcycle", 3.0),
    "siren": Archetype("siren", "siren", "Siren", 2.5),
    "hammer": Archetype("hammer", "hammer", "Construction", 2.0),
    "bell": Archetype("bell", "bell", "Bells", 0.5),
    "chatter": Archetype("chatter", "chatter", "Speech", 0.2),
    "wind": Archetype("wind", "wind", "Rustling leaves", -0.5),
    "bird": Archetype("bird", "bird", "Bird tweets", -1.0),
    "water_drip": Archetype("water_drip", "water_drip", "Water", -1.5),
}

DEFAULT_ARCHETYPES = tuple(ARCHETYPES)


@dataclass
class SynthConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    train_clips: int = 300
    val_clips: int = 50
    test_clips: int = 100
    archetypes: tuple = DEFAULT_ARCHETYPES
    weights: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    min_events: int = 1
    max_events: int = 4
    noise_floor_db: float = -55.0
    clip_seconds: float = CLIP_SECONDS

    def __post_init__(self):
        if len(self.archetypes) == 0:
            raise ConfigError("config must name at least one archetype")
        if len(self.archetypes) > len(SOURCE_LABELS):
            raise ConfigError(f"at most {len(SOURCE_LABELS)} archetypes supported")
        unknown = [a for a in self.archetypes if a not in ARCHETYPES]
        if unknown:
            raise ConfigError(f"unknown archetypes {unknown}; known: {sorted(ARCHETYPES)}")
        if not (0 <= self.min_events <= self.max_events):
            raise ConfigError(
                f"bad event range [{self.min_events}, {self.max_events}]"
            )
        for name, label in self.labels.items():
            if label not in SOURCE_LABELS:
                raise ConfigError(f"label override '{label}' for '{name}' is not canonical")

    def resolved(self, name: str) -> Archetype:
        base = ARCHETYPES[name]
        return Archetype(
            name,
            base.kind,
            self.labels.get(name, base.label),
            float(self.weights.get(name, base.weight)),
        )


# ----------------------------------------------------------------------
# plain key-value config files
# ----------------------------------------------------------------------

def parse_kv_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment; order-free."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def synth_config_from_kv(kv: dict) -> SynthConfig:
    cfg = SynthConfig()
    ints = {"sample_rate", "train_clips", "val_clips", "test_clips",
            "min_events", "max_events"}
    floats = {"noise_floor_db", "clip_seconds"}
    weights, labels = {}, {}
    fields = {}
    for key, value in kv.items():
        if key in ints:
            fields[key] = int(value)
        elif key in floats:
            fields[key] = float(value)
        elif key == "archetypes":
            fields["archetypes"] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key.startswith("weight."):
            weights[key[len("weight."):]] = float(value)
        elif key.startswith("label."):
            labels[key[len("label."):]] = value
        else:
            raise ConfigError(f"unknown synth config key '{key}'")
    return SynthConfig(weights=weights, labels=labels, **fields)


# ----------------------------------------------------------------------
# signal families
# ----------------------------------------------------------------------

def _attack_release(n, sr, attack=0.05, release=0.1):
    env = np.ones(n)
    a = min(int(attack * sr), n // 2)
    r = min(int(release * sr), n // 2)
    if a:
        env[:a] = np.linspace(0.0, 1.0, a)
    if r:
        env[-r:] = np.linspace(1.0, 0.0, r)
    return env


def _band_noise(rng, n, sr, f_lo, f_hi):
    x = rng.standard_normal(n)
    spectrum = np.fft.rfft(x)
    freqs = np.arange(len(spectrum)) * sr / n
    spectrum[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    y = np.fft.irfft(spectrum, n)
    peak = np.abs(y).max()
    return y / peak if peak > 0 else y


def _normalize_peak(x):
    peak = np.abs(x).max()
    return x / peak if peak > 0 else x


def render_archetype(kind, rng, sr, duration):
    """Render one event of the given family; peak-normalized to 1."""
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    if kind == "engine":
        f0 = rng.uniform(70.0, 110.0)
        sig = sum(np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h
                  for h in range(1, 7))
        am = 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(10.0, 20.0) * t)
        sig = sig * am + 0.25 * _band_noise(rng, n, sr, 40.0, 400.0)
    elif kind == "siren":
        rate = rng.uniform(0.4, 0.9)
        # triangular sweep between 600 and 1400 Hz
        phase01 = (t * rate) % 1.0
        tri = 1.0 - np.abs(2.0 * phase01 - 1.0)
        freq = 600.0 + 800.0 * tri
        sig = np.sin(2 * np.pi * np.cumsum(freq) / sr)
    elif kind == "hammer":
        rate = rng.uniform(1.0, 3.0)
        sig = np.zeros(n)
        hit_len = int(0.08 * sr)
        for start in np.arange(rng.uniform(0, 0.3), duration, 1.0 / rate):
            i = int(start * sr)
            if i + hit_len > n:
                break
            burst = _band_noise(rng, hit_len, sr, 1000.0, 3000.0)
            sig[i:i + hit_len] += burst * np.exp(-np.arange(hit_len) / (0.015 * sr))
    elif kind == "bell":
        sig = np.zeros(n)
        f0 = rng.uniform(500.0, 900.0)
        strikes = rng.integers(2, 4)
        for start in np.sort(rng.uniform(0, max(duration - 1.0, 0.1), strikes)):
            i = int(start * sr)
            tail = np.arange(n - i) / sr
            decay = np.exp(-tail / rng.uniform(0.5, 1.2))
            sig[i:] += decay * (np.sin(2 * np.pi * f0 * tail)
                                + 0.6 * np.sin(2 * np.pi * 2.76 * f0 * tail))
    elif kind == "chatter":
        syllables = np.abs(np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t
                                  + rng.uniform(0, 2 * np.pi)))
        sig = _band_noise(rng, n, sr, 300.0, 3000.0) * (0.3 + 0.7 * syllables)
    elif kind == "wind":
        am = 1.0 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * t)
        sig = _band_noise(rng, n, sr, 20.0, 500.0) * am
    elif kind == "bird":
        sig = np.zeros(n)
        step = rng.uniform(0.25, 0.6)
        for start in np.arange(rng.uniform(0, 0.2), duration, step):
            chirp_len = int(rng.uniform(0.08, 0.15) * sr)
            i = int(start * sr)
            if i + chirp_len > n:
                break
            ct = np.arange(chirp_len) / sr
            f_start = rng.uniform(2000.0, 3000.0)
            f_end = f_start + rng.uniform(1000.0, 1500.0)
            freq = np.linspace(f_start, f_end, chirp_len)
            chirp = np.sin(2 * np.pi * np.cumsum(freq) / sr)
            sig[i:i + chirp_len] += chirp * np.hanning(chirp_len)
    elif kind == "water_drip":
        sig = np.zeros(n)
        rate = rng.uniform(0.8, 2.0)
        for start in np.arange(rng.uniform(0, 0.5), duration, 1.0 / rate):
            drip_len = int(rng.uniform(0.03, 0.06) * sr)
            i = int(start * sr)
            if i + drip_len > n:
                break
            dt = np.arange(drip_len) / sr
            f = rng.uniform(1000.0, 2000.0)
            sig[i:i + drip_len] += (np.sin(2 * np.pi * f * dt)
                                    * np.exp(-dt / 0.012))
    else:
        raise ConfigError(f"unknown archetype kind '{kind}'")
    return _normalize_peak(sig) * _attack_release(n, sr)


def clip_rng(seed, clip_id):
    """Per-clip RNG: hash-split so generation order never matters."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(clip_id.encode("utf-8"))])
    )


def annoyance_rating(weight_sum, laeq_db):
    """The documented synthetic annoyance rule."""
    level_term = np.clip((laeq_db - LEVEL_DB_LO) / (LEVEL_DB_HI - LEVEL_DB_LO), 0.0, 1.0)
    return float(np.clip(ANNOYANCE_BASE + weight_sum + LEVEL_COEFF * level_term, 1.0, 10.0))


def synthesize_clip(cfg: SynthConfig, seed, clip_id):
    """Render one clip; returns (AudioClip, labels tuple, annoyance)."""
    rng = clip_rng(seed, clip_id)
    sr = cfg.sample_rate
    n = int(round(cfg.clip_seconds * sr))
    floor_rms = 10.0 ** (cfg.noise_floor_db / 20.0)
    samples = rng.standard_normal(n) * floor_rms

    n_events = int(rng.integers(cfg.min_events, cfg.max_events + 1))
    present = set()
    for _ in range(n_events):
        arche = cfg.resolved(cfg.archetypes[int(rng.integers(len(cfg.archetypes)))])
        duration = float(rng.uniform(3.0, min(6.0, cfg.clip_seconds)))
        onset = float(rng.uniform(0.0, cfg.clip_seconds - duration))
        amplitude = float(rng.uniform(0.05, 0.25))
        event = render_archetype(arche.kind, rng, sr, duration) * amplitude
        start = int(round(onset * sr))
        stop = min(start + len(event), n)
        samples[start:stop] += event[:stop - start]
        present.add(arche.name)

    clip = AudioClip(samples, sr)
    labels = [False] * len(SOURCE_LABELS)
    weight_sum = 0.0
    for name in present:
        arche = cfg.resolved(name)
        labels[SOURCE_LABELS.index(arche.label)] = True
        weight_sum += arche.weight
    laeq = a_weighted_leq(clip).laeq_db
    return clip, tuple(labels), annoyance_rating(weight_sum, laeq)


def generate_synthetic_dataset(cfg: SynthConfig, seed, out_dir):
    """Write wavs + one manifest per split; returns {split: manifest path}."""
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    counts = {"train": cfg.train_clips, "val": cfg.val_clips, "test": cfg.test_clips}
    manifest_paths = {}
    for split, count in counts.items():
        records = []
        for i in range(count):
            clip_id = f"{split}-{i:05d}"
            clip, labels, annoyance = synthesize_clip(cfg, seed, clip_id)
            rel_path = Path("audio") / f"{clip_id}.wav"
            write_wav(clip, out_dir / rel_path)
            records.append(ClipRecord(clip_id, str(rel_path), labels, annoyance))
        manifest_path = out_dir / f"{split}.csv"
        save_manifest(DatasetManifest(records, split=split), manifest_path)
        manifest_paths[split] = manifest_path
    return manifest_paths


def generate_noise_bank(cfg: SynthConfig, seed, out_dir, samples_per_source=5,
                        seconds=NOISE_SEGMENT_SECONDS):
    """5 s archetype samples for the mixing harness: noise/<name>/<i>.wav."""
    out_dir = Path(out_dir)
    paths = {}
    for name in cfg.archetypes:
        arche = cfg.resolved(name)
        src_dir = out_dir / name
        src_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for i in range(samples_per_source):
            rng = clip_rng(seed, f"noise-{name}-{i:04d}")
            sig = render_archetype(arche.kind, rng, cfg.sample_rate, seconds) * 0.3
            path = src_dir / f"{name}-{i:04d}.wav"
            write_wav(AudioClip(sig, cfg.sample_rate), path)
            files.append(path)
        paths[name] = files
    return paths
