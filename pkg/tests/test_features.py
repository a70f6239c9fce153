import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tonectc.errors import FormatError, LengthMismatch, NegativeFrequency, NonFiniteSample, TooShort, UnknownTemplate
from tonectc.features import (
    LOG_FLOOR,
    PITCH_CHANNELS,
    FeatureMatrix,
    Segment,
    SynthPlan,
    append_f0,
    extract_f0,
    featurize_audio,
    hz_to_mel,
    log_mel,
    num_frames,
    pack_tpf,
    phone_template,
    read_tpf,
    read_wav,
    synth_features,
    unpack_tpf,
    write_tpf,
    write_wav,
    znorm_per_speaker,
)

SR = 16000


def test_framing_one_second():
    assert log_mel(np.random.default_rng(0).normal(size=SR), SR).frames.shape == (98, 40)
    assert num_frames(SR, SR) == 98
    assert log_mel(np.zeros(8000), 8000).num_frames == 98


def test_too_short_and_non_finite():
    with pytest.raises(TooShort):
        log_mel(np.zeros(399), SR)
    assert log_mel(np.zeros(400), SR).num_frames == 1
    with pytest.raises(NonFiniteSample):
        log_mel(np.array([0.0] * 399 + [np.nan]), SR)


def test_silence_hits_floor():
    frames = log_mel(np.zeros(SR // 2), SR).frames
    assert np.all(frames == np.float32(math.log(LOG_FLOOR)))


def test_pure_tone_peaks_at_nearest_filter():
    t = np.arange(SR) / SR
    frames = log_mel(np.sin(2 * np.pi * 1000 * t), SR).frames
    # independent evaluation of the filter centers on the Mel scale
    top = 2595 * math.log10(1 + 8000 / 700)
    centers = [700 * (10 ** (top * (i + 1) / 41 / 2595) - 1) for i in range(40)]
    nearest = min(range(40), key=lambda i: abs(centers[i] - 1000))
    assert nearest == 13
    assert np.all(frames.argmax(axis=1) == nearest)


def test_hz_to_mel_examples():
    assert hz_to_mel(0) == 0
    assert hz_to_mel(700) == pytest.approx(781.17, abs=0.005)
    assert hz_to_mel(1000) == pytest.approx(999.99, abs=0.01)
    with pytest.raises(NegativeFrequency):
        hz_to_mel(-1)


@given(st.floats(0, 8000), st.floats(0, 8000))
def test_hz_to_mel_monotonic(a, b):
    if a < b:
        assert hz_to_mel(a) < hz_to_mel(b)


def pulse_train(f0, seconds=0.5, sr=SR):
    x = np.zeros(int(seconds * sr))
    x[:: int(round(sr / f0))] = 1.0
    return x


def test_f0_pulse_train():
    f0 = extract_f0(pulse_train(200), SR)
    voiced = f0[f0 > 0]
    assert len(voiced) >= 0.9 * len(f0)
    assert np.all(np.abs(voiced - 200) <= 5)
    assert len(f0) == log_mel(pulse_train(200), SR).num_frames


def test_f0_noise_and_silence():
    noise = np.random.default_rng(3).normal(size=SR)
    assert np.mean(extract_f0(noise, SR) == 0) >= 0.9
    assert not extract_f0(np.zeros(SR // 4), SR).any()


def test_f0_range():
    for hz in (80, 150, 320):
        f0 = extract_f0(pulse_train(hz), SR)
        assert np.all((f0 == 0) | ((f0 >= 50) & (f0 <= 500)))


def test_append_f0():
    mel = FeatureMatrix(np.zeros((3, 40), dtype=np.float32))
    out = append_f0(mel, [0.0, 700.0, 0.0])
    assert out.dim == 41 and out.has_f0
    assert out.frames[1, 40] == pytest.approx(781.17, abs=0.01)
    assert out.frames[0, 40] == 0 and out.frames[2, 40] == 0
    assert not append_f0(mel, [0, 0, 0]).frames[:, 40].any()
    with pytest.raises(LengthMismatch):
        append_f0(mel, [1.0])


def test_featurize_with_f0_is_41_dims():
    assert featurize_audio(pulse_train(200), SR, with_f0=True).dim == 41


def _fm(rows, spk):
    return FeatureMatrix(np.asarray(rows, dtype=np.float32), speaker_id=spk)


def test_znorm_examples():
    (single,) = znorm_per_speaker([_fm([[3.0, -2.0]], "a")])
    assert not single.frames.any()
    a, b = znorm_per_speaker([_fm([[1.0, 5.0], [3.0, 5.0]], "s"), _fm([[5.0, 5.0]], "s")])
    # pooled column 0 is 1,3,5: mean 3, population std sqrt(8/3)
    std = math.sqrt(8 / 3)
    assert a.frames[:, 0] == pytest.approx([-2 / std, 0.0], abs=1e-6)
    assert b.frames[0, 0] == pytest.approx(2 / std, abs=1e-6)
    assert not a.frames[:, 1].any() and not b.frames[:, 1].any()


def test_znorm_speakers_are_separate(rng):
    mats = [_fm(rng.normal(loc=i, size=(5, 4)), f"s{i % 2}") for i in range(4)]
    out = znorm_per_speaker(mats)
    for spk in ("s0", "s1"):
        pooled = np.vstack([m.frames for m in out if m.speaker_id == spk]).astype(np.float64)
        assert np.allclose(pooled.mean(axis=0), 0, atol=1e-5)
        assert np.allclose(pooled.var(axis=0), 1, atol=1e-4)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_znorm_idempotent(T, seed):
    m = _fm(np.random.default_rng(seed).normal(size=(T, 3)) * 4 + 1, "s")
    once = znorm_per_speaker([m])
    twice = znorm_per_speaker(once)
    assert np.max(np.abs(once[0].frames - twice[0].frames)) < 1e-6


def test_synth_template_without_noise():
    plan = SynthPlan(((Segment("m", 10),),))
    out = synth_features(plan, seed=0, noise=0.0)
    assert out.frames.shape == (10, 40)
    assert np.all(out.frames == out.frames[0])
    assert np.allclose(out.frames[0], phone_template("m"), atol=1e-6)


def test_synth_falling_tone():
    plan = SynthPlan(((Segment("a", 10, ("˥", "˩")),),))
    pitch = synth_features(plan, seed=0, noise=0.0).frames[:, PITCH_CHANNELS[0]]
    assert np.all(np.diff(pitch) < 0)
    assert np.allclose(np.diff(pitch), np.diff(pitch)[0], atol=1e-6)


def test_synth_f0_channel_and_determinism():
    plan = SynthPlan(((Segment("t", 3), Segment("a", 6, ("˧",))),))
    a = synth_features(plan, seed=5, with_f0=True)
    b = synth_features(plan, seed=5, with_f0=True)
    assert a.dim == 41 and a.frames.tobytes() == b.frames.tobytes()
    assert not a.frames[:3, 40].any() and np.all(a.frames[3:, 40] > 0)
    assert synth_features(plan, seed=6).frames.tobytes() != a.frames[:, :40].tobytes()


def test_synth_unknown_template():
    with pytest.raises(UnknownTemplate):
        synth_features(SynthPlan(((Segment("q", 3),),)), seed=0)


def test_plan_json_round_trip():
    plan = SynthPlan(((Segment("t", 3), Segment("a", 6, ("˧", "ʔ", "˥"))),))
    assert SynthPlan.from_json(plan.to_json()) == plan


def test_tpf_layout(tmp_path):
    m = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = pack_tpf(m)
    assert buf[:4] == b"TPF1" and buf[4:12] == bytes([2, 0, 0, 0, 3, 0, 0, 0])
    assert len(buf) == 12 + 24
    write_tpf(tmp_path / "x.tpf", m)
    assert np.array_equal(read_tpf(tmp_path / "x.tpf"), m)
    assert unpack_tpf(buf + buf, 36)[1] == 72
    with pytest.raises(FormatError):
        unpack_tpf(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        unpack_tpf(buf[:-1])


def test_wav_round_trip(tmp_path):
    x = 0.5 * np.sin(np.linspace(0, 100, 800))
    write_wav(tmp_path / "a.wav", x, 8000)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 8000 and np.max(np.abs(x - y)) < 1e-4
