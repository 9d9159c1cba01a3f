"""Audio ingestion, protocol files, and the synthetic replay corpus.

Protocol lines are whitespace separated::

    <utterance_id> <label> [<config>] [<env_id>]

``label`` is ``bonafide`` or a spoof token (``spoof``/``replay``/``spoofed``).
``config`` is a two-letter replay configuration, attacker-to-talker distance
then loudspeaker quality (``AA`` .. ``CC``), or ``-``. ``env_id`` is free text
or ``-``.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import soundfile as sf
from scipy import signal

from .errors import ConfigError, FormatError, InputError, ParseError

BONAFIDE = "bonafide"
SPOOF = "spoof"
UNKNOWN = "unknown"
LABELS = (BONAFIDE, SPOOF, UNKNOWN)
CLASSES = ("A", "B", "C")
SPOOF_TOKENS = frozenset({"spoof", "replay", "spoofed"})
DEFAULT_RATE = 16000


@dataclass(frozen=True)
class AudioClip:
    utterance_id: str
    samples: np.ndarray
    sample_rate: int = DEFAULT_RATE
    label: str = UNKNOWN
    attacker_distance: str | None = None
    speaker_quality: str | None = None
    env_id: str = "-"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise InputError(f"{self.utterance_id}: sample_rate must be positive")
        if samples.ndim != 1 or samples.size == 0:
            raise InputError(f"{self.utterance_id}: samples must be a non-empty 1-D sequence")
        if np.abs(samples).max() > 1.0:
            raise InputError(f"{self.utterance_id}: samples outside [-1, 1]")
        if self.label not in LABELS:
            raise InputError(f"{self.utterance_id}: unknown label {self.label!r}")
        for tag in (self.attacker_distance, self.speaker_quality):
            if tag is not None and tag not in CLASSES:
                raise InputError(f"{self.utterance_id}: replay tag {tag!r} not in A/B/C")
        if (self.attacker_distance or self.speaker_quality) and self.label != SPOOF:
            raise InputError(f"{self.utterance_id}: replay configuration tags require label spoof")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def config(self):
        """Two-letter replay configuration such as ``"AB"``, or None."""
        if self.attacker_distance and self.speaker_quality:
            return self.attacker_distance + self.speaker_quality
        return None

    def with_samples(self, samples):
        return AudioClip(self.utterance_id, samples, self.sample_rate, self.label,
                         self.attacker_distance, self.speaker_quality, self.env_id)

    def with_entry(self, entry):
        return AudioClip(self.utterance_id, self.samples, self.sample_rate, entry.label,
                         entry.attacker_distance, entry.speaker_quality, entry.env_id)


@dataclass(frozen=True)
class ProtocolEntry:
    utterance_id: str
    label: str
    attacker_distance: str | None = None
    speaker_quality: str | None = None
    env_id: str = "-"

    def to_line(self):
        config = (self.attacker_distance or "-") + (self.speaker_quality or "-")
        config = "-" if config == "--" else config
        return f"{self.utterance_id} {self.label} {config} {self.env_id or '-'}"


# I/O -------------------------------------------------------------------------

def _linear_resample(x, rate_in, rate_out):
    n_out = int(round(x.size * rate_out / rate_in))
    t_out = np.arange(n_out) * (rate_in / rate_out)
    return np.interp(t_out, np.arange(x.size), x)


def read_audio(path, resample=False, target_rate=DEFAULT_RATE):
    """Load a mono PCM16/float WAV or FLAC file.

    Integer samples are scaled by 1/32768. Files at a rate other than
    ``target_rate`` are rejected unless ``resample`` is set, in which case they
    are linearly resampled.
    """
    path = Path(path)
    try:
        info = sf.info(str(path))
    except (RuntimeError, sf.LibsndfileError) as exc:
        raise OSError(f"cannot read audio file {path}: {exc}") from exc
    if info.channels != 1:
        raise FormatError(f"{path}: expected mono audio, got {info.channels} channels")
    if info.subtype == "PCM_16":
        data, rate = sf.read(str(path), dtype="int16", always_2d=False)
        samples = data.astype(np.float64) / 32768.0
    elif info.subtype in ("FLOAT", "DOUBLE"):
        samples, rate = sf.read(str(path), dtype="float64", always_2d=False)
        if samples.size and np.abs(samples).max() > 1.0:
            raise FormatError(f"{path}: float samples outside [-1, 1]")
    else:
        raise FormatError(f"{path}: unsupported sample format {info.subtype}")
    if samples.size == 0:
        raise FormatError(f"{path}: no samples")
    if rate != target_rate:
        if not resample:
            raise FormatError(f"{path}: sample rate {rate} Hz, expected {target_rate} (use resample)")
        samples = np.clip(_linear_resample(samples, rate, target_rate), -1.0, 1.0)
        rate = target_rate
    return AudioClip(path.stem, samples, int(rate))


def quantize_pcm16(samples):
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int16)


def atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_audio(path, clip, fmt="WAV"):
    """Write ``clip`` as 16-bit PCM (WAV or FLAC), atomically."""
    import io

    buf = io.BytesIO()
    sf.write(buf, quantize_pcm16(clip.samples), clip.sample_rate, subtype="PCM_16", format=fmt)
    atomic_write_bytes(path, buf.getvalue())


# protocol ---------------------------------------------------------------------

def _config_tags(token, lineno):
    if token in ("-", "--"):
        return None, None
    if len(token) != 2 or token[0] not in CLASSES or token[1] not in CLASSES:
        raise ParseError(f"line {lineno}: bad replay configuration token {token!r}")
    return token[0], token[1]


def parse_protocol(text):
    entries = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 2:
            raise ParseError(f"line {lineno}: expected at least utterance id and label")
        utt, token = fields[0], fields[1]
        if utt in seen:
            raise ParseError(f"line {lineno}: duplicate utterance id {utt!r} (first on line {seen[utt]})")
        seen[utt] = lineno
        if token == BONAFIDE:
            label = BONAFIDE
        elif token in SPOOF_TOKENS:
            label = SPOOF
        else:
            raise ParseError(f"line {lineno}: unknown label token {token!r}")
        dist, qual = _config_tags(fields[2], lineno) if len(fields) > 2 else (None, None)
        if label == BONAFIDE and dist is not None:
            raise ParseError(f"line {lineno}: bona-fide entry carries replay configuration {fields[2]!r}")
        env = fields[3] if len(fields) > 3 else "-"
        entries.append(ProtocolEntry(utt, label, dist, qual, env))
    return entries


def format_protocol(entries):
    return "".join(e.to_line() + "\n" for e in entries)


def join_protocol(entries, clips):
    """Attach labels to clips. Returns ``(joined, missing_ids)`` in protocol order."""
    by_id = {c.utterance_id: c for c in clips}
    joined, missing = [], []
    for e in entries:
        clip = by_id.get(e.utterance_id)
        if clip is None:
            missing.append(e.utterance_id)
        else:
            joined.append(clip.with_entry(e))
    return joined, missing


def write_corpus(root, clips, entries):
    root = Path(root)
    for clip in clips:
        write_audio(root / "wav" / f"{clip.utterance_id}.wav", clip)
    atomic_write_bytes(root / "protocol.txt", format_protocol(entries).encode("utf-8"))


def load_corpus(root, resample=False):
    """Read ``root/protocol.txt`` and the matching ``root/wav/<id>.wav`` files."""
    root = Path(root)
    proto = root / "protocol.txt"
    if not proto.exists():
        raise InputError(f"no protocol file at {proto}")
    entries = parse_protocol(proto.read_text(encoding="utf-8"))
    clips, missing = [], []
    for e in entries:
        wav = root / "wav" / f"{e.utterance_id}.wav"
        if not wav.exists():
            missing.append(e.utterance_id)
            continue
        clips.append(read_audio(wav, resample=resample))
    if missing:
        raise InputError(f"{len(missing)} protocol entries have no audio, e.g. {missing[:3]}")
    joined, _ = join_protocol(entries, clips)
    return joined


# synthetic corpus --------------------------------------------------------------

@dataclass
class SynthConfig:
    """Desk-scale replay corpus parameters.

    The replay chain applied to spoofs is: attacker recording at a distance
    (attenuation plus extra reverberant pickup), loudspeaker low-pass, the
    room reverberation shared with bona-fide speech, then white noise.
    """

    n_speakers: int = 4
    n_utts_per_class: int = 20
    duration_range: tuple = (0.8, 1.4)
    replay_lowpass_cutoff: dict = field(default_factory=lambda: {"A": 7800.0, "B": 6500.0, "C": 4000.0})
    reverb_decay: dict = field(default_factory=lambda: {"a": 0.15, "b": 0.3, "c": 0.5})
    distance_gain: dict = field(default_factory=lambda: {"A": 0.85, "B": 0.6, "C": 0.4})
    distance_wet: dict = field(default_factory=lambda: {"A": 0.1, "B": 0.25, "C": 0.45})
    room_wet: float = 0.15
    noise_snr_db: float = 30.0
    level_jitter_db: float = 6.0
    rng_seed: int = 0
    sample_rate: int = DEFAULT_RATE
    utt_prefix: str = "U"

    def validate(self):
        if self.n_speakers < 1 or self.n_utts_per_class < 1:
            raise ConfigError("n_speakers and n_utts_per_class must be >= 1")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad duration_range {self.duration_range}")
        nyq = self.sample_rate / 2
        for q in CLASSES:
            if q not in self.replay_lowpass_cutoff or q not in self.distance_gain or q not in self.distance_wet:
                raise ConfigError(f"class {q} missing from replay parameters")
            if not 0 < self.replay_lowpass_cutoff[q] < nyq:
                raise ConfigError(f"cutoff for quality {q} must lie in (0, {nyq})")
        if not self.reverb_decay or any(d <= 0 for d in self.reverb_decay.values()):
            raise ConfigError("reverb decays must be positive")
        if not math.isfinite(self.noise_snr_db):
            raise ConfigError("noise_snr_db must be finite")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "duration_range" in d:
            d["duration_range"] = tuple(d["duration_range"])
        return cls(**d).validate()


@dataclass(frozen=True)
class SpeakerModel:
    f0: float
    formants: tuple
    bandwidths: tuple
    breath: float


def make_speaker(rng):
    f0 = rng.uniform(95.0, 230.0)
    shift = rng.uniform(0.85, 1.2)
    formants = tuple(f * shift * rng.uniform(0.95, 1.05) for f in (600.0, 1500.0, 2600.0, 3600.0, 5200.0))
    bandwidths = (90.0, 120.0, 180.0, 250.0, 400.0)
    return SpeakerModel(f0, formants, bandwidths, rng.uniform(0.05, 0.12))


def _envelope(freqs, spk):
    env = np.full_like(freqs, 0.02)
    for fc, bw in zip(spk.formants, spk.bandwidths):
        env += 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return env


def render_speech(spk, n, rate, rng):
    """Harmonic-plus-noise utterance with a speaker-dependent formant envelope."""
    t = np.arange(n) / rate
    f0 = spk.f0 * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)))
    f0 *= rng.uniform(0.92, 1.08)
    phase = 2 * np.pi * np.cumsum(f0) / rate
    n_harm = int((rate / 2) // f0.max())
    k = np.arange(1, n_harm + 1)
    amps = _envelope(k * f0.mean(), spk) / np.sqrt(k)
    voiced = np.sin(np.outer(phase, k) + rng.uniform(0, 2 * np.pi, n_harm)) @ amps
    # syllabic amplitude modulation
    syll = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(3.0, 5.5) * t + rng.uniform(0, 2 * np.pi)) ** 2
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1 / rate)
    breath = np.fft.irfft(spec * np.sqrt(_envelope(freqs, spk) + 0.3), n)
    x = syll * voiced / (np.std(voiced) + 1e-12) + spk.breath * breath / (np.std(breath) + 1e-12)
    return x / np.abs(x).max()


def room_impulse_response(decay, rate, rng):
    """Exponentially decaying noise tail; ``decay`` is the 60 dB decay time in seconds."""
    n = int(decay * rate)
    t = np.arange(n) / rate
    h = rng.standard_normal(n) * np.exp(-6.9078 * t / decay)
    h[0] = 0.0
    return h / np.sqrt((h * h).sum())


def _reverb(x, decay, wet, rate, rng):
    tail = signal.fftconvolve(x, room_impulse_response(decay, rate, rng))[: x.size]
    return x + wet * tail


def lowpass(x, cutoff, rate):
    """Order-10 Chebyshev-II low-pass with its 60 dB stopband starting at ``cutoff``."""
    sos = signal.cheby2(10, 60, cutoff, btype="low", fs=rate, output="sos")
    return signal.sosfilt(sos, x)


def add_noise(x, snr_db, rng):
    power = np.mean(x * x)
    noise = rng.standard_normal(x.size) * np.sqrt(power / 10 ** (snr_db / 10))
    return x + noise


def apply_replay(x, distance, quality, room, cfg, rng):
    """Pass a clean utterance through the replay chain for one configuration."""
    rate = cfg.sample_rate
    rec = cfg.distance_gain[distance] * _reverb(x, cfg.reverb_decay[room], cfg.distance_wet[distance], rate, rng)
    played = lowpass(rec, cfg.replay_lowpass_cutoff[quality], rate)
    return add_noise(_reverb(played, cfg.reverb_decay[room], cfg.room_wet, rate, rng), cfg.noise_snr_db, rng)


def apply_bonafide(x, room, cfg, rng):
    return add_noise(_reverb(x, cfg.reverb_decay[room], cfg.room_wet, cfg.sample_rate, rng), cfg.noise_snr_db, rng)


def _finish(x):
    peak = np.abs(x).max()
    return x / peak * 0.99 if peak > 0.99 else x


def synthesize_corpus(cfg):
    """Balanced bona-fide/replay corpus; bit-identical for identical configs."""
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    rate = cfg.sample_rate
    speakers = [make_speaker(rng) for _ in range(cfg.n_speakers)]
    rooms = sorted(cfg.reverb_decay)
    configs = [(d, q) for d in CLASSES for q in CLASSES]
    clips, entries = [], []
    lo, hi = cfg.duration_range
    for i in range(2 * cfg.n_utts_per_class):
        spoof = i % 2 == 1
        spk = speakers[(i // 2) % cfg.n_speakers]
        n = int(rng.uniform(lo, hi) * rate)
        room = rooms[int(rng.integers(len(rooms)))]
        level = 0.5 * 10 ** (-rng.uniform(0, cfg.level_jitter_db) / 20)
        x = level * render_speech(spk, n, rate, rng)
        uid = f"{cfg.utt_prefix}{i:05d}"
        env = f"room{room}"
        if spoof:
            d, q = configs[(i // 2) % len(configs)]
            y = apply_replay(x, d, q, room, cfg, rng)
            entry = ProtocolEntry(uid, SPOOF, d, q, env)
        else:
            y = apply_bonafide(x, room, cfg, rng)
            entry = ProtocolEntry(uid, BONAFIDE, None, None, env)
        # match what a PCM16 round trip would store
        y = quantize_pcm16(_finish(y)).astype(np.float64) / 32768.0
        clips.append(AudioClip(uid, y, rate).with_entry(entry))
        entries.append(entry)
    return clips, entries
