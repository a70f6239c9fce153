"""Acoustic features: log-Mel filterbank, F0, per-speaker Z-norm, synthesis, TPF1 files."""

from __future__ import annotations

import struct
import wave
import zlib
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    FormatError,
    LengthMismatch,
    NegativeFrequency,
    NonFiniteSample,
    TooShort,
    UnknownTemplate,
)
from .ipa import TONE_LETTERS, VOICE_MARKS, Category, default_feature_table, parse_phone

NUM_MEL = 40
WINDOW_MS = 25
SHIFT_MS = 10
LOG_FLOOR = 1e-10
ZNORM_EPS = 1e-8
F0_MIN = 50.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.3
SAMPLE_RATES = (8000, 16000)

TPF_MAGIC = b"TPF1"


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, F) float32
    utt_id: str = ""
    speaker_id: str = ""
    frame_shift_ms: int = SHIFT_MS
    window_ms: int = WINDOW_MS

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def has_f0(self) -> bool:
        return self.dim == NUM_MEL + 1


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency(f"negative frequency {f.min()}")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_params(sample_rate: int) -> tuple[int, int, int]:
    """(window samples, shift samples, FFT size)."""
    if sample_rate not in SAMPLE_RATES:
        raise DataError(f"unsupported sample rate {sample_rate}; expected one of {SAMPLE_RATES}")
    win = sample_rate * WINDOW_MS // 1000
    shift = sample_rate * SHIFT_MS // 1000
    nfft = 1 << (win - 1).bit_length()
    return win, shift, nfft


def num_frames(num_samples: int, sample_rate: int) -> int:
    win, shift, _ = frame_params(sample_rate)
    return 1 + (num_samples - win) // shift


def _frames(samples, sample_rate) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("expected a mono waveform")
    if not np.all(np.isfinite(x)):
        raise NonFiniteSample("waveform contains NaN or infinite samples")
    win, shift, _ = frame_params(sample_rate)
    if len(x) < win:
        raise TooShort(f"{len(x)} samples is shorter than one {win}-sample window")
    T = 1 + (len(x) - win) // shift
    idx = np.arange(win)[None, :] + shift * np.arange(T)[:, None]
    return x[idx]


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, nfft: int, num_filters: int = NUM_MEL) -> np.ndarray:
    """(num_filters, nfft//2+1) triangular filters spaced evenly on the Mel scale, 0 Hz to Nyquist."""
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), num_filters + 2))
    bins_hz = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((num_filters, len(bins_hz)))
    for i in range(num_filters):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bins_hz - lo) / (mid - lo)
        falling = (hi - bins_hz) / (hi - mid)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def filter_centers(sample_rate: int, num_filters: int = NUM_MEL) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), num_filters + 2))[1:-1]


def log_mel(samples, sample_rate: int, utt_id: str = "", speaker_id: str = "") -> FeatureMatrix:
    frames = _frames(samples, sample_rate)
    win, _, nfft = frame_params(sample_rate)
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n=nfft)) ** 2 / nfft
    energies = spec @ mel_filterbank(sample_rate, nfft).T
    feats = np.log(np.maximum(energies, LOG_FLOOR))
    return FeatureMatrix(feats.astype(np.float32), utt_id, speaker_id)


def extract_f0(samples, sample_rate: int) -> np.ndarray:
    """Per-frame F0 in Hz on the log-Mel frame grid, 0 for unvoiced frames.

    Normalized autocorrelation of each Hamming-windowed frame. The period is
    the lag maximizing correlation times overlap fraction, which keeps
    multiples of the true period from winning on short overlaps; the frame
    is voiced when the correlation at that lag reaches the threshold.
    """
    frames = _frames(samples, sample_rate) * np.hamming(frame_params(sample_rate)[0])
    W = frames.shape[1]
    lags = np.arange(int(np.ceil(sample_rate / F0_MAX)), int(sample_rate / F0_MIN) + 1)
    lags = lags[lags < W - 1]
    out = np.zeros(len(frames))
    for t, fr in enumerate(frames):
        if fr @ fr < 1e-12:
            continue
        r = np.empty(len(lags))
        for i, k in enumerate(lags):
            a, b = fr[:-k], fr[k:]
            denom = np.sqrt((a @ a) * (b @ b))
            r[i] = (a @ b) / denom if denom > 0 else 0.0
        i = int(np.argmax(r * (1.0 - lags / W)))
        if r[i] < VOICING_THRESHOLD:
            continue
        lag = float(lags[i])
        if 0 < i < len(lags) - 1:
            y0, y1, y2 = r[i - 1], r[i], r[i + 1]
            curv = y0 - 2 * y1 + y2
            if curv < 0:
                lag += 0.5 * (y0 - y2) / curv
        f0 = sample_rate / lag
        if F0_MIN <= f0 <= F0_MAX:
            out[t] = f0
    return out


def append_f0(mel: FeatureMatrix, f0: Sequence[float]) -> FeatureMatrix:
    f0 = np.asarray(f0, dtype=np.float64)
    if len(f0) != mel.num_frames:
        raise LengthMismatch(f"{len(f0)} F0 values for {mel.num_frames} frames")
    col = np.where(f0 > 0, hz_to_mel(np.maximum(f0, 0.0)), 0.0)
    frames = np.hstack([mel.frames, col[:, None].astype(mel.frames.dtype)])
    return replace(mel, frames=frames)


def znorm_per_speaker(mats: Sequence[FeatureMatrix]) -> list[FeatureMatrix]:
    """Normalize every dimension to zero mean, unit variance over each speaker's frames."""
    stats = {}
    for spk in sorted({m.speaker_id for m in mats}):
        pooled = np.vstack([m.frames for m in mats if m.speaker_id == spk]).astype(np.float64)
        mean = pooled.mean(axis=0)
        var = pooled.var(axis=0)
        stats[spk] = (mean, np.sqrt(np.maximum(var, ZNORM_EPS)))
    out = []
    for m in mats:
        mean, std = stats[m.speaker_id]
        frames = ((m.frames.astype(np.float64) - mean) / std).astype(m.frames.dtype)
        out.append(replace(m, frames=frames))
    return out


# --- synthetic features -----------------------------------------------------

PITCH_CHANNELS = (36, 37, 38, 39)
SPECTRAL_CHANNELS = 36
TEMPLATE_SEED = 20200501


@dataclass(frozen=True)
class Segment:
    phone: str
    frames: int
    tones: tuple[str, ...] = ()


@dataclass(frozen=True)
class SynthPlan:
    """Per-syllable segments with tone glyphs and frame durations."""

    syllables: tuple[tuple[Segment, ...], ...]

    def to_json(self) -> list:
        return [[[s.phone, s.frames, "".join(s.tones)] for s in syl] for syl in self.syllables]

    @classmethod
    def from_json(cls, data) -> "SynthPlan":
        return cls(tuple(tuple(Segment(p, int(n), tuple(t)) for p, n, t in syl) for syl in data))

    @property
    def num_frames(self) -> int:
        return sum(s.frames for syl in self.syllables for s in syl)


@lru_cache(maxsize=1)
def _projection() -> np.ndarray:
    return np.random.default_rng(TEMPLATE_SEED).normal(size=(12, SPECTRAL_CHANNELS)) / 2.0


def _feature_code(phone: str) -> np.ndarray:
    try:
        sym = parse_phone(phone)
    except DataError as exc:
        raise UnknownTemplate(f"no template for {phone!r}") from exc
    v = default_feature_table().vector(sym)
    if v.category is Category.CONSONANT:
        code = [1, 0, v.place / 10, v.manner / 8, v.voicing, 0, 0, 0, 0, 0]
    else:
        code = [0, 1, 0, 0, 0, v.height / 3, v.backness / 2, v.rounding,
                v.off_height / 3, v.off_backness / 2]
    return np.array(code + [v.length, v.aspiration], dtype=np.float64)


@lru_cache(maxsize=None)
def phone_template(phone: str, dim: int = NUM_MEL) -> np.ndarray:
    """Fixed spectral template: projection of IPA features plus a symbol-specific residual.

    Phones with similar features get similar templates, so shared or nearby
    phones look alike across languages.
    """
    base = _feature_code(phone) @ _projection()
    residual = np.random.default_rng(zlib.crc32(phone.encode("utf-8"))).normal(size=SPECTRAL_CHANNELS)
    out = np.zeros(dim)
    out[:SPECTRAL_CHANNELS] = 2.0 * base + 0.6 * residual
    return out


@lru_cache(maxsize=None)
def voice_template(mark: str, dim: int = NUM_MEL) -> np.ndarray:
    out = np.zeros(dim)
    out[:SPECTRAL_CHANNELS] = np.random.default_rng(zlib.crc32(("voice:" + mark).encode())).normal(
        size=SPECTRAL_CHANNELS)
    return out


def pitch_value(level_digit: float) -> float:
    """Pitch-proxy channel value for a Chao digit 1..5."""
    return float(level_digit) - 3.0


def pitch_hz(level_digit: float) -> float:
    return 80.0 + 30.0 * float(level_digit)


def pitch_track(tones: Sequence[str], frames: int) -> np.ndarray:
    """Chao digits interpolated linearly across the segment (3 for toneless)."""
    digits = [TONE_LETTERS[g] // 11 for g in tones if g in TONE_LETTERS] or [3]
    if len(digits) == 1 or frames == 1:
        return np.full(frames, float(digits[0]))
    knots = np.linspace(0.0, frames - 1, len(digits))
    return np.interp(np.arange(frames), knots, digits)


def synth_features(plan: SynthPlan, seed: int, noise: float = 0.3, with_f0: bool = False,
                   utt_id: str = "", speaker_id: str = "") -> FeatureMatrix:
    rng = np.random.default_rng(seed)
    rows = []
    f0_mel = []
    for syl in plan.syllables:
        for seg in syl:
            if seg.frames < 1:
                raise DataError(f"segment {seg.phone!r} has no frames")
            block = np.tile(phone_template(seg.phone), (seg.frames, 1))
            voiced = _is_vowel(seg.phone)
            if voiced:
                track = pitch_track(seg.tones, seg.frames)
                for ch in PITCH_CHANNELS:
                    block[:, ch] = [pitch_value(d) for d in track]
                items = [g for g in seg.tones if g in TONE_LETTERS or g in VOICE_MARKS]
                for pos, g in enumerate(items):
                    if g in VOICE_MARKS:
                        lo = pos * seg.frames // len(items)
                        hi = max(lo + 1, (pos + 1) * seg.frames // len(items))
                        block[lo:hi] += voice_template(g)
                f0_mel.extend(hz_to_mel(pitch_hz(d)) for d in track)
            else:
                f0_mel.extend([0.0] * seg.frames)
            rows.append(block)
    if not rows:
        raise DataError("synthesis plan has no segments")
    frames = np.vstack(rows)
    if noise > 0:
        frames = frames + rng.normal(scale=noise, size=frames.shape)
    if with_f0:
        frames = np.hstack([frames, np.array(f0_mel)[:, None]])
    return FeatureMatrix(frames.astype(np.float32), utt_id, speaker_id)


@lru_cache(maxsize=None)
def _is_vowel(phone: str) -> bool:
    try:
        return parse_phone(phone).category is Category.VOWEL
    except DataError as exc:
        raise UnknownTemplate(f"no template for {phone!r}") from exc


# --- TPF1 float blocks -------------------------------------------------------

def pack_tpf(matrix) -> bytes:
    a = np.asarray(matrix)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise FormatError("TPF1 blocks hold 2-D matrices")
    T, F = a.shape
    return TPF_MAGIC + struct.pack("<II", T, F) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def unpack_tpf(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if buf[offset:offset + 4] != TPF_MAGIC:
        raise FormatError("bad TPF1 magic")
    T, F = struct.unpack_from("<II", buf, offset + 4)
    start = offset + 12
    end = start + 4 * T * F
    if end > len(buf):
        raise FormatError("truncated TPF1 block")
    data = np.frombuffer(buf[start:end], dtype="<f4").reshape(T, F).astype(np.float32)
    return data, end


def write_tpf(path, matrix) -> None:
    Path(path).write_bytes(pack_tpf(matrix))


def read_tpf(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    data, end = unpack_tpf(buf)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after TPF1 block")
    return data


def read_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM mono WAV -> (samples in [-1, 1), sample rate)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate: int) -> None:
    data = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(data.tobytes())


def featurize_audio(samples, sample_rate: int, with_f0: bool = False, utt_id: str = "",
                    speaker_id: str = "") -> FeatureMatrix:
    mel = log_mel(samples, sample_rate, utt_id, speaker_id)
    if with_f0:
        mel = append_f0(mel, extract_f0(samples, sample_rate))
    return mel
