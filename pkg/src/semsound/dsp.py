"""Signal side of the codec: additive synthesis, STFT magnitudes, peak features."""

from __future__ import annotations

import hashlib
import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidFraming
from .events import EventKind, SoundScene, note_pitch

DEFAULT_SAMPLE_RATE = 8000
DEFAULT_FRAME_LENGTH = 256
DEFAULT_HOP = 128
RAMP_SECONDS = 0.01
MAX_PEAKS = 5
NOISE_FLOOR = 1e-3

_SPEECH_GRID = tuple(range(300, 3001, 100))
_AMBIENT_LOW = (50, 60, 70)
# at least 90 Hz above the low partial so the two Hann main lobes stay apart
_AMBIENT_HIGH = (160, 170, 180, 190)


def stable_hash(label: str) -> int:
    """64-bit digest of ``label``; identical across processes and platforms."""
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "big")


def partials(kind: EventKind, entity: str) -> tuple[float, ...]:
    """Sinusoid frequencies (Hz) that stand for ``entity`` in the synthetic sound model."""
    kind = EventKind(kind)
    if kind is EventKind.MUSIC:
        return (440.0 * 2.0 ** ((note_pitch(entity) - 69) / 12.0),)
    if kind is EventKind.SPEECH:
        picked: list[int] = []
        i = 0
        while len(picked) < 3:
            f = _SPEECH_GRID[stable_hash(f"{entity}/formant/{i}") % len(_SPEECH_GRID)]
            if f not in picked:
                picked.append(f)
            i += 1
        return tuple(float(f) for f in sorted(picked))
    h = stable_hash(f"{entity}/ambient")
    return (
        float(_AMBIENT_LOW[h % len(_AMBIENT_LOW)]),
        float(_AMBIENT_HIGH[(h >> 16) % len(_AMBIENT_HIGH)]),
    )


@dataclass(eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.clip(np.asarray(self.samples, dtype=float), -1.0, 1.0)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def envelope(n: int, sample_rate: int) -> np.ndarray:
    """Linear attack/release ramps of 10 ms (shorter events get a triangle)."""
    ramp = max(1, round(RAMP_SECONDS * sample_rate))
    i = np.arange(n, dtype=float)
    return np.minimum(1.0, np.minimum((i + 1) / ramp, (n - i) / ramp))


def tone(kind: EventKind, entity: str, n: int, sample_rate: int) -> np.ndarray:
    """Enveloped unit-peak sum of the entity's partials, ``n`` samples long."""
    freqs = partials(kind, entity)
    t = np.arange(n, dtype=float) / sample_rate
    sig = np.zeros(n)
    for f in freqs:
        sig += np.sin(2.0 * np.pi * f * t)
    return sig * envelope(n, sample_rate) / len(freqs)


def event_span(onset: float, duration: float, sample_rate: int) -> tuple[int, int]:
    start = int(round(onset * sample_rate))
    return start, int(round((onset + duration) * sample_rate))


def synthesize(scene: SoundScene, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    if sample_rate < 4000:
        raise ValueError(f"sample_rate must be >= 4000, got {sample_rate}")
    n = int(round(scene.length * sample_rate))
    out = np.zeros(n)
    for ev in scene.events:
        start, stop = event_span(ev.onset, ev.duration, sample_rate)
        stop = min(stop, n)
        if stop <= start:
            continue
        out[start:stop] += ev.salience * tone(ev.kind, ev.entity, stop - start, sample_rate)
    return Waveform(out, sample_rate)


@dataclass(eq=False)
class Spectrogram:
    """Magnitude STFT; rows are frames, columns are bins ``0..N/2``."""

    frames: np.ndarray
    frame_length: int
    hop: int
    sample_rate: int

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.frame_length

    def frame_time(self, index: int) -> float:
        # frame centre, so a detected onset lands within one hop of the true one
        return (index * self.hop + self.frame_length / 2) / self.sample_rate


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, frame_length: int, hop: int) -> int:
    if n_samples == 0:
        return 0
    return 1 + math.ceil(max(0, n_samples - frame_length) / hop)


def spectrogram(
    w: Waveform, frame_length: int = DEFAULT_FRAME_LENGTH, hop: int = DEFAULT_HOP
) -> Spectrogram:
    if frame_length < 64 or frame_length > 1024 or frame_length & (frame_length - 1):
        raise InvalidFraming(f"frame_length must be a power of two in [64, 1024], got {frame_length}")
    if not 0 < hop <= frame_length:
        raise InvalidFraming(f"hop must be in (0, frame_length], got {hop}")
    x = np.asarray(w.samples, dtype=float)
    count = frame_count(len(x), frame_length, hop)
    padded = np.zeros((count - 1) * hop + frame_length if count else 0)
    padded[: len(x)] = x
    if count:
        idx = np.arange(frame_length)[None, :] + hop * np.arange(count)[:, None]
        mags = np.abs(np.fft.rfft(padded[idx] * hann(frame_length), axis=1))
    else:
        mags = np.zeros((0, frame_length // 2 + 1))
    return Spectrogram(mags, frame_length, hop, w.sample_rate)


@dataclass(frozen=True)
class FeatureFrame:
    time: float
    peaks: tuple[tuple[float, float], ...]
    energy: float


def extract_features(s: Spectrogram) -> list[FeatureFrame]:
    mags = s.frames
    if mags.size == 0:
        return []
    floor = NOISE_FLOOR * float(mags.max())
    out = []
    for i, row in enumerate(mags):
        energy = float(np.sum(row * row))
        peaks: list[tuple[float, float]] = []
        if floor > 0:
            left = np.concatenate(([-np.inf], row[:-1]))
            right = np.concatenate((row[1:], [-np.inf]))
            found = np.nonzero((row > floor) & (row > left) & (row >= right))[0]
            ranked = sorted(found, key=lambda k: (-row[k], k))[:MAX_PEAKS]
            peaks = [(float(k * s.bin_hz), float(row[k])) for k in ranked]
        out.append(FeatureFrame(s.frame_time(i), tuple(peaks), energy))
    return out


def write_wav(path: str | Path, channels: Sequence[Waveform]) -> None:
    """Write 16-bit little-endian PCM; one or two channels of equal rate."""
    if not 1 <= len(channels) <= 2:
        raise ValueError("write_wav supports one or two channels")
    rate = channels[0].sample_rate
    n = max(len(c) for c in channels)
    data = np.zeros((n, len(channels)))
    for j, c in enumerate(channels):
        data[: len(c), j] = c.samples
    pcm = np.round(np.clip(data, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(len(channels))
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> list[Waveform]:
    with wave.open(str(path), "rb") as fh:
        nch = fh.getnchannels()
        rate = fh.getframerate()
        raw = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    data = raw.reshape(-1, nch).astype(float) / 32767
    return [Waveform(data[:, j], rate) for j in range(nch)]
