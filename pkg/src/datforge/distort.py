"""Corpus synthesis, distortion generators, and the split protocol.

The training-time target split mixes three distortion kinds (additive noise
from a procedural bank, gaussian noise, reverb) in proportions 0.3/0.4/0.3
with SNR drawn uniformly from [10, 20] dB.  The unseen test configuration
uses disjoint noise generators and reverb decays never seen in training.
"""

from __future__ import annotations

import hashlib
import json
import wave as _wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FormatError, PolicyError

DEFAULT_SR = 16000

ADDITIVE_BANK = "additive_bank"
GAUSSIAN = "gaussian"
REVERB = "reverb"
CLEAN = "clean"

TRAIN_KINDS = (ADDITIVE_BANK, GAUSSIAN, REVERB)
TRAIN_PROPORTIONS = (0.3, 0.4, 0.3)
CONTINUAL_KINDS = (ADDITIVE_BANK, GAUSSIAN, REVERB, CLEAN)
CONTINUAL_PROPORTIONS = (0.25, 0.25, 0.25, 0.25)

KIND_TO_DOMAIN = {CLEAN: 0, ADDITIVE_BANK: 1, GAUSSIAN: 2, REVERB: 3}

TRAIN_NOISE_FAMILIES = ("babble", "bandnoise", "clicks")
UNSEEN_NOISE_FAMILIES = ("chirp", "am_narrowband")
TRAIN_T60S = (0.2, 0.5, 0.8)
UNSEEN_T60S = (0.3, 1.2)

SNR_RANGE_DB = (10.0, 20.0)


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for per-example generators."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SR
    gain_applied: float = 1.0  # peak-normalization gain, 1.0 if none

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError("Waveform: empty sample array")

    def power(self) -> float:
        return float(np.mean(self.samples**2))


def _peak_normalize(samples: np.ndarray, sr: int) -> Waveform:
    peak = np.max(np.abs(samples))
    if peak > 1.0:
        return Waveform(samples / peak, sr, gain_applied=1.0 / peak)
    return Waveform(samples, sr)


@dataclass
class DistortionSpec:
    kind: str
    seed: int
    snr_db: float | None = None
    ir_id: float | None = None  # reverb decay T60 in seconds
    family: str | None = None  # additive noise family name

    def __post_init__(self):
        if self.kind not in (*TRAIN_KINDS, CLEAN):
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        additive = self.kind in (ADDITIVE_BANK, GAUSSIAN)
        if additive != (self.snr_db is not None):
            raise ValueError(f"snr_db must be present iff kind is additive (kind={self.kind})")
        if (self.kind == REVERB) != (self.ir_id is not None):
            raise ValueError("ir_id must be present iff kind is reverb")


@dataclass
class LabeledClip:
    clip_id: str
    waveform: Waveform
    label: int


@dataclass
class TargetClip:
    """A distorted, domain-labeled clip whose class label is hidden from training."""

    clip_id: str
    waveform: Waveform
    spec: DistortionSpec
    domain: int
    _hidden_label: int = field(repr=False, default=-1)


@dataclass
class ContinualClip:
    """Input/target pair for the denoising pretraining stage."""

    clip_id: str
    waveform: Waveform  # possibly distorted input
    clean: Waveform
    kind: str


@dataclass
class CorpusSplit:
    S: list[LabeledClip]
    T: list[TargetClip]
    test_clean: list[LabeledClip]
    test_seen: list[LabeledClip]
    test_unseen: list[LabeledClip]

    def oracle_labeled_target(self, purpose: str) -> list[LabeledClip]:
        """Class labels of T, readable by the oracle training path only."""
        if purpose != "oracle":
            raise PolicyError(
                f"target-split class labels are oracle-only (purpose={purpose!r})"
            )
        return [
            LabeledClip(c.clip_id, c.waveform, c._hidden_label) for c in self.T
        ]


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def class_fundamental_hz(label: int) -> float:
    return 220.0 * 2.0 ** (label / 4.0)


def synth_corpus(n_per_class: int, classes: int, seed: int,
                 duration_s: float = 1.0, sr: int = DEFAULT_SR,
                 id_prefix: str = "clip") -> list[LabeledClip]:
    """Balanced clean tone-pair corpus: fundamental + 3rd harmonic per class."""
    if classes < 2 or n_per_class < 1:
        raise ValueError("need classes >= 2 and n_per_class >= 1")
    t = np.arange(int(round(duration_s * sr))) / sr
    clips = []
    idx = 0
    for label in range(classes):
        f0 = class_fundamental_hz(label)
        for _ in range(n_per_class):
            rng = np.random.default_rng(derive_seed(seed, idx))
            amp = rng.uniform(0.3, 0.8)
            ph1, ph2 = rng.uniform(0.0, 2 * np.pi, size=2)
            raw = np.sin(2 * np.pi * f0 * t + ph1) + 0.5 * np.sin(2 * np.pi * 3 * f0 * t + ph2)
            env = 0.85 + 0.15 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
            samples = amp * env * raw / np.max(np.abs(raw))
            clips.append(LabeledClip(f"{id_prefix}-{idx:05d}", Waveform(samples, sr), label))
            idx += 1
    return clips


# ---------------------------------------------------------------------------
# noise bank
# ---------------------------------------------------------------------------

def _tone_burst_babble(n, sr, rng):
    # bursts concentrated where the corpus classes live, so they actually mask
    out = np.zeros(n)
    for _ in range(8):
        freq = rng.uniform(150.0, 1600.0)
        dur = int(rng.uniform(0.1, 0.6) * sr)
        start = int(rng.integers(0, max(1, n - dur)))
        t = np.arange(dur) / sr
        burst = np.hanning(dur) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        stop = min(start + dur, n)
        out[start:stop] += burst[: stop - start]
    return out


def _band_noise(n, sr, rng, center=None, width=None):
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    if center is None:
        center = rng.uniform(200.0, 2500.0)
    if width is None:
        width = rng.uniform(200.0, 1200.0)
    mask = (freqs >= center - width / 2) & (freqs <= center + width / 2)
    if not mask.any():
        mask[1] = True
    return np.fft.irfft(spec * mask, n)


def _clicks(n, sr, rng):
    out = np.zeros(n)
    for _ in range(int(rng.integers(20, 60))):
        out[rng.integers(0, n)] += rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
    kernel = np.exp(-np.arange(int(0.005 * sr)) / (0.001 * sr))
    return np.convolve(out, kernel)[:n]


def _chirp(n, sr, rng):
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 500.0)
    f1 = rng.uniform(1000.0, 4000.0)
    dur = t[-1] if n > 1 else 1.0
    return np.sin(2 * np.pi * (f0 * t + (f1 - f0) / (2 * dur) * t**2))


def _am_narrowband(n, sr, rng):
    carrier = _band_noise(n, sr, rng, center=rng.uniform(200.0, 1500.0), width=100.0)
    t = np.arange(n) / sr
    mod = 1.0 + 0.8 * np.sin(2 * np.pi * rng.uniform(2.0, 8.0) * t)
    return carrier * mod


def _with_broadband_bed(gen):
    # each family keeps its character on top of a broadband bed, like real
    # recorded noise; purely narrowband noise would leave most feature bands
    # at the silence floor
    def wrapped(n, sr, rng):
        character = gen(n, sr, rng)
        rms = np.sqrt(np.mean(character**2)) or 1.0
        return character + 0.6 * rms * rng.standard_normal(n)

    return wrapped


_NOISE_GENERATORS = {
    "babble": _with_broadband_bed(_tone_burst_babble),
    "bandnoise": _with_broadband_bed(_band_noise),
    "clicks": _with_broadband_bed(_clicks),
    "chirp": _with_broadband_bed(_chirp),
    "am_narrowband": _with_broadband_bed(_am_narrowband),
}


class ProceduralNoiseBank:
    """Deterministic stand-in for a real noise corpus, with disjoint seen/unseen pools."""

    def draw(self, pool: str, n: int, sr: int, seed: int) -> tuple[np.ndarray, str]:
        families = TRAIN_NOISE_FAMILIES if pool == "train" else UNSEEN_NOISE_FAMILIES
        rng = np.random.default_rng(seed)
        family = families[int(rng.integers(len(families)))]
        return _NOISE_GENERATORS[family](n, sr, rng), family


class WavNoiseBank:
    """Noise clips from a user-supplied WAV directory, hash-partitioned seen/unseen."""

    def __init__(self, noise_dir):
        paths = sorted(Path(noise_dir).glob("*.wav"))
        if not paths:
            raise ValueError(f"no WAV files in noise directory {noise_dir}")
        self.pools = {"train": [], "unseen": []}
        for p in paths:
            digest = hashlib.sha256(p.name.encode()).digest()
            self.pools["train" if digest[0] % 2 == 0 else "unseen"].append(p)
        for pool, files in self.pools.items():
            if not files:
                raise ValueError(f"noise directory leaves the {pool!r} pool empty")

    def draw(self, pool: str, n: int, sr: int, seed: int) -> tuple[np.ndarray, str]:
        rng = np.random.default_rng(seed)
        files = self.pools[pool]
        path = files[int(rng.integers(len(files)))]
        clip = read_wav(path).samples
        reps = int(np.ceil(n / clip.size))
        return np.tile(clip, reps)[:n], path.name


# ---------------------------------------------------------------------------
# distortion generators
# ---------------------------------------------------------------------------

def snr_gain(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain g so that 10*log10(P_clean / P_{g*noise}) == snr_db."""
    p_clean = float(np.mean(clean**2))
    p_noise = float(np.mean(noise**2))
    if p_noise == 0.0:
        raise ValueError("mix_at_snr: noise is silent (zero power)")
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(clean: Waveform, noise, snr_db: float) -> Waveform:
    """Add noise scaled to the requested SNR; peak-normalize the result if needed."""
    noise = noise.samples if isinstance(noise, Waveform) else np.asarray(noise, dtype=np.float64)
    n = clean.samples.size
    if noise.size < n:
        noise = np.tile(noise, int(np.ceil(n / noise.size)))
    noise = noise[:n]
    g = snr_gain(clean.samples, noise, snr_db)
    return _peak_normalize(clean.samples + g * noise, clean.sample_rate)


def add_gaussian(clean: Waveform, snr_db: float, seed: int) -> Waveform:
    rng = np.random.default_rng(seed)
    return mix_at_snr(clean, rng.standard_normal(clean.samples.size), snr_db)


def make_impulse_response(t60_s: float, seed: int, sr: int = DEFAULT_SR) -> np.ndarray:
    """Exponentially decaying noise IR with unit direct path and the given T60."""
    rng = np.random.default_rng(seed)
    n = max(2, int(t60_s * sr))
    decay = np.exp(-np.arange(n) / sr * (np.log(1000.0) / t60_s))
    ir = 0.3 * rng.standard_normal(n) * decay
    ir[0] = 1.0
    return ir


def apply_reverb(clean: Waveform, ir: np.ndarray) -> Waveform:
    ir = np.asarray(ir, dtype=np.float64)
    if ir.size == 0:
        raise ValueError("apply_reverb: empty impulse response")
    if ir[0] == 0.0:
        raise ValueError("apply_reverb: impulse response must have a direct path (ir[0] != 0)")
    out = np.convolve(clean.samples, ir)[: clean.samples.size]
    return _peak_normalize(out, clean.sample_rate)


def apply_spec(clean: Waveform, spec: DistortionSpec, bank=None, pool: str = "train") -> Waveform:
    """Materialize one distortion spec deterministically."""
    if spec.kind == CLEAN:
        return clean
    if spec.kind == GAUSSIAN:
        return add_gaussian(clean, spec.snr_db, spec.seed)
    if spec.kind == ADDITIVE_BANK:
        bank = bank or ProceduralNoiseBank()
        noise, _family = bank.draw(pool, clean.samples.size, clean.sample_rate, spec.seed)
        return mix_at_snr(clean, noise, spec.snr_db)
    ir = make_impulse_response(spec.ir_id, spec.seed, clean.sample_rate)
    return apply_reverb(clean, ir)


# ---------------------------------------------------------------------------
# split protocol
# ---------------------------------------------------------------------------

def largest_remainder_counts(n: int, proportions) -> list[int]:
    """Integer counts summing to n; ties in remainder broken by position order."""
    raw = [n * p for p in proportions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _assign_kinds(n: int, kinds, proportions, rng) -> list[str]:
    counts = largest_remainder_counts(n, proportions)
    assignment = [k for k, c in zip(kinds, counts) for _ in range(c)]
    return [assignment[i] for i in rng.permutation(n)]


def _make_spec(kind: str, seed: int, rng, pool: str) -> DistortionSpec:
    if kind in (ADDITIVE_BANK, GAUSSIAN):
        return DistortionSpec(kind, seed, snr_db=float(rng.uniform(*SNR_RANGE_DB)))
    if kind == REVERB:
        t60s = TRAIN_T60S if pool == "train" else UNSEEN_T60S
        return DistortionSpec(kind, seed, ir_id=float(t60s[int(rng.integers(len(t60s)))]))
    return DistortionSpec(CLEAN, seed)


def _distort_clips(clips, kinds, seed, bank, pool):
    out = []
    for i, (clip, kind) in enumerate(zip(clips, kinds)):
        child = derive_seed(seed, i)
        rng = np.random.default_rng(child)
        spec = _make_spec(kind, child, rng, pool)
        out.append((apply_spec(clip.waveform, spec, bank, pool), spec))
    return out


def build_splits(corpus: list[LabeledClip], seed: int,
                 test_corpus: list[LabeledClip] | None = None,
                 noise_bank=None) -> CorpusSplit:
    """50/50 clean/noisy split of the training corpus plus the three test sets."""
    if len(corpus) < 10:
        raise ValueError(f"corpus too small to split ({len(corpus)} < 10)")
    bank = noise_bank or ProceduralNoiseBank()
    rng = np.random.default_rng(derive_seed(seed, 0))
    perm = rng.permutation(len(corpus))
    half = len(corpus) // 2
    s_clips = [corpus[i] for i in perm[:half]]
    t_clips = [corpus[i] for i in perm[half : 2 * half]]

    kinds = _assign_kinds(len(t_clips), TRAIN_KINDS, TRAIN_PROPORTIONS, rng)
    target = []
    for clip, (wav, spec) in zip(t_clips, _distort_clips(t_clips, kinds, derive_seed(seed, 1), bank, "train")):
        target.append(TargetClip(clip.clip_id, wav, spec, KIND_TO_DOMAIN[spec.kind], clip.label))

    test_clean: list[LabeledClip] = []
    test_seen: list[LabeledClip] = []
    test_unseen: list[LabeledClip] = []
    if test_corpus:
        test_clean = list(test_corpus)
        seen_kinds = _assign_kinds(len(test_corpus), TRAIN_KINDS, TRAIN_PROPORTIONS, rng)
        for clip, (wav, _spec) in zip(
            test_corpus, _distort_clips(test_corpus, seen_kinds, derive_seed(seed, 2), bank, "train")
        ):
            test_seen.append(LabeledClip(clip.clip_id, wav, clip.label))
        unseen_kinds = _assign_kinds(len(test_corpus), (ADDITIVE_BANK, REVERB), (0.7, 0.3), rng)
        for clip, (wav, _spec) in zip(
            test_corpus, _distort_clips(test_corpus, unseen_kinds, derive_seed(seed, 3), bank, "unseen")
        ):
            test_unseen.append(LabeledClip(clip.clip_id, wav, clip.label))
    return CorpusSplit(s_clips, target, test_clean, test_seen, test_unseen)


def build_continual_set(waveforms: list[Waveform], seed: int, noise_bank=None) -> list[ContinualClip]:
    """Unlabeled continual-training set: distortion kinds + clean in 0.25 proportions each."""
    bank = noise_bank or ProceduralNoiseBank()
    rng = np.random.default_rng(derive_seed(seed, 0))
    kinds = _assign_kinds(len(waveforms), CONTINUAL_KINDS, CONTINUAL_PROPORTIONS, rng)
    out = []
    for i, (wav, kind) in enumerate(zip(waveforms, kinds)):
        child = derive_seed(seed, 1, i)
        spec = _make_spec(kind, child, np.random.default_rng(child), "train")
        out.append(ContinualClip(f"cont-{i:05d}", apply_spec(wav, spec, bank, "train"), wav, kind))
    return out


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

FEATURE_FLOOR = 1e-8
N_BANDS = 64
WINDOW_S = 0.025
HOP_S = 0.010


@lru_cache(maxsize=8)
def _triangular_filterbank(n_bins: int, n_bands: int) -> np.ndarray:
    centers = np.linspace(0, n_bins - 1, n_bands + 2)
    fb = np.zeros((n_bands, n_bins))
    bins = np.arange(n_bins)
    for k in range(n_bands):
        left, mid, right = centers[k], centers[k + 1], centers[k + 2]
        up = (bins - left) / max(mid - left, 1e-12)
        down = (right - bins) / max(right - mid, 1e-12)
        fb[k] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def featurize(w: Waveform, n_bands: int = N_BANDS) -> np.ndarray:
    """Per-frame log magnitudes of triangular frequency bands (T x n_bands)."""
    window = int(round(WINDOW_S * w.sample_rate))
    hop = int(round(HOP_S * w.sample_rate))
    n = w.samples.size
    if n < window:
        raise ValueError(f"clip of {n} samples shorter than one {window}-sample window")
    t = (n - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    frames = w.samples[idx] * np.hanning(window)  # hann window tames spectral leakage
    mags = np.abs(np.fft.rfft(frames, axis=1))
    fb = _triangular_filterbank(mags.shape[1], n_bands)
    return np.log(np.maximum(mags @ fb.T, FEATURE_FLOOR))


# ---------------------------------------------------------------------------
# WAV + manifest I/O
# ---------------------------------------------------------------------------

def write_wav(path, w: Waveform):
    """16-bit PCM mono little-endian RIFF."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with _wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path, expect_sr: int = DEFAULT_SR) -> Waveform:
    try:
        f = _wave.open(str(path), "rb")
    except (_wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    with f:
        if f.getnchannels() != 1:
            raise FormatError(f"{path}: nchannels={f.getnchannels()}, expected mono")
        if f.getsampwidth() != 2:
            raise FormatError(f"{path}: sampwidth={f.getsampwidth()} bytes, expected 16-bit PCM")
        if f.getcomptype() != "NONE":
            raise FormatError(f"{path}: comptype={f.getcomptype()!r}, expected uncompressed PCM")
        if expect_sr is not None and f.getframerate() != expect_sr:
            raise FormatError(f"{path}: framerate={f.getframerate()}, expected {expect_sr}")
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    if pcm.size == 0:
        raise FormatError(f"{path}: zero frames")
    return Waveform(pcm.astype(np.float64) / 32767.0, f.getframerate())


def manifest_entries(split: CorpusSplit) -> list[dict]:
    entries = []
    for clip in split.S:
        entries.append({"id": clip.clip_id, "path": "synthetic", "class": clip.label,
                        "domain": 0, "distortion": CLEAN, "snr_db": None, "split": "S"})
    for clip in split.T:
        entries.append({"id": clip.clip_id, "path": "synthetic", "class": None,
                        "domain": clip.domain, "distortion": clip.spec.kind,
                        "snr_db": clip.spec.snr_db, "split": "T"})
    for name, clips in (("test_clean", split.test_clean), ("test_seen", split.test_seen),
                        ("test_unseen", split.test_unseen)):
        for clip in clips:
            entries.append({"id": clip.clip_id, "path": "synthetic", "class": clip.label,
                            "domain": None, "distortion": None, "snr_db": None, "split": name})
    return entries


def write_manifest(path, entries: list[dict]):
    with open(path, "w") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
