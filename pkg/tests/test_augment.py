import numpy as np
import pytest

from slowcpc.audio_io import CpcBatch, write_wav
from slowcpc.augment import (
    NoiseCache,
    add_bandlimited_noise,
    augment_future,
    bandpass,
    impulse_response,
    pitch_shift,
    reverb,
    rt60_for_room,
)
from slowcpc.config import AugmentConfig
from slowcpc.errors import EmptyNoiseCache, SilentSignal

SR = 16000


def tone(freq, seconds=0.5):
    return np.sin(2 * np.pi * freq * np.arange(int(SR * seconds)) / SR)


def peak_hz(x):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=8 * len(x)))
    return np.argmax(spec) * SR / (8 * len(x))


def chirp(seconds=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return np.sin(2 * np.pi * (150 * t + 800 * t ** 2)) * (0.6 + 0.4 * np.sin(2 * np.pi * 4 * t))


def test_pitch_zero_is_identity():
    x = chirp()
    assert np.array_equal(pitch_shift(x, 0), x)


@pytest.mark.parametrize("shift,target", [(600, 880.0), (-600, 220.0)])
def test_pitch_octave_fixtures(shift, target):
    y = pitch_shift(tone(440), shift)
    assert abs(peak_hz(y) / target - 1) <= 0.02


@pytest.mark.parametrize("freq", [100, 250, 700, 1300, 2000])
@pytest.mark.parametrize("shift", [-600, -300, 300, 600])
def test_pitch_ratio_law(freq, shift):
    x = tone(freq)
    y = pitch_shift(x, shift)
    assert len(y) == len(x)
    assert abs(peak_hz(y) / freq / 2 ** (shift / 600) - 1) <= 0.02


def test_pitch_rejects_large_shift():
    with pytest.raises(ValueError):
        pitch_shift(tone(200), 700)


def test_bandpass_attenuation():
    h = bandpass(np.r_[1.0, np.zeros(SR - 1)])
    mag = np.abs(np.fft.rfft(h))  # 1 Hz bins
    db = lambda f: 20 * np.log10(mag[f])
    assert db(40) <= db(160) - 20
    assert db(480) <= db(160) - 20


def test_noise_infinite_snr_is_identity():
    x = chirp()
    y = add_bandlimited_noise(x, np.random.default_rng(0).normal(size=len(x)), np.inf, np.random.default_rng(1))
    assert np.array_equal(y, x)


@pytest.mark.parametrize("seed", range(4))
def test_noise_snr_is_exact(seed):
    rng = np.random.default_rng(seed)
    x = chirp() * rng.uniform(0.1, 1.0)
    noise = rng.normal(size=len(x) + 3000)
    y = add_bandlimited_noise(x, noise, 10.0, np.random.default_rng(seed))
    added = y - x
    snr = 10 * np.log10(np.mean(x ** 2) / np.mean(added ** 2))
    assert abs(snr - 10.0) <= 0.5
    assert len(y) == len(x)


def test_noise_silent_signal():
    with pytest.raises(SilentSignal):
        add_bandlimited_noise(np.zeros(100), np.ones(100), 10.0, np.random.default_rng(0))


def test_reverb_small_room_correlates():
    # the tail is a random draw, so the bound is checked on the mean over draws
    x = chirp()
    corr = [np.corrcoef(x, reverb(x, 0.0, np.random.default_rng(s)))[0, 1] for s in range(50)]
    assert rt60_for_room(0.0) == 0.05
    assert np.mean(corr) >= 0.95
    assert min(corr) >= 0.85
    assert len(reverb(x, 0.0, np.random.default_rng(0))) == len(x)


def test_reverb_impulse_identity_and_determinism():
    imp = np.r_[1.0, np.zeros(3999)]
    y = reverb(imp, 40.0, np.random.default_rng(7))
    h = impulse_response(40.0, np.random.default_rng(7), len(imp))
    np.testing.assert_allclose(y[:len(h)], h, atol=1e-12)
    assert np.array_equal(reverb(chirp(), 70.0, np.random.default_rng(3)),
                          reverb(chirp(), 70.0, np.random.default_rng(3)))


def test_impulse_response_shape():
    h = impulse_response(100.0, np.random.default_rng(0))
    assert len(h) == 1 + round(0.75 * SR) and h[0] == 1.0
    assert np.sum(h[1:] ** 2) == pytest.approx(0.09)


def _batch(rng):
    rows = rng.normal(size=(3, 3200)).astype(np.float32) * 0.3
    return CpcBatch(rows, rows.copy(), ["a", "b", "c"], [("u", 0)] * 3)


@pytest.fixture
def noise_cache(tmp_path):
    rng = np.random.default_rng(0)
    write_wav(tmp_path / "n1.wav", rng.uniform(-0.5, 0.5, size=16000))
    write_wav(tmp_path / "n2.wav", rng.uniform(-0.5, 0.5, size=60000))
    return NoiseCache.load(tmp_path)


def test_noise_cache_clip_length(noise_cache):
    assert [len(c) for c in noise_cache.clips] == [48000, 48000]
    assert noise_cache.maybe_refresh(5) is noise_cache
    assert noise_cache.maybe_refresh(100_000) is not noise_cache


def test_augment_policies(noise_cache):
    rng = np.random.default_rng(0)
    batch = _batch(rng)
    all_ops = ("pitch", "reverb", "noise")
    out = augment_future(batch, AugmentConfig(p_clean=1.0, enabled_ops=all_ops), noise_cache, rng)
    assert np.array_equal(out.future_source, batch.future_source)
    out = augment_future(batch, AugmentConfig(p_clean=0.0), noise_cache, rng)
    assert np.array_equal(out.future_source, batch.future_source)
    past = batch.past_windows.copy()
    out = augment_future(batch, AugmentConfig(p_clean=0.0, enabled_ops=all_ops), noise_cache, rng)
    assert np.array_equal(out.past_windows, past)
    assert not np.array_equal(out.future_source, past)
    assert out.future_source.shape == past.shape and out.future_source.dtype == past.dtype


def test_augment_deterministic(noise_cache):
    cfg = AugmentConfig(p_clean=0.0, enabled_ops=("pitch", "reverb", "noise"))
    a = augment_future(_batch(np.random.default_rng(1)), cfg, noise_cache, np.random.default_rng(2))
    b = augment_future(_batch(np.random.default_rng(1)), cfg, noise_cache, np.random.default_rng(2))
    assert np.array_equal(a.future_source, b.future_source)


def test_augment_empty_cache():
    with pytest.raises(EmptyNoiseCache):
        augment_future(_batch(np.random.default_rng(0)), AugmentConfig(enabled_ops=("noise",)),
                       NoiseCache(), np.random.default_rng(0))


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(p_clean=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(pitch_range=(10, -10))
