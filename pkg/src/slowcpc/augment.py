"""Time-domain augmentation applied to the future branch of a CPC batch."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import SAMPLE_RATE, CpcBatch, load_wav
from .config import AugmentConfig
from .errors import EmptyNoiseCache, SilentSignal

NOISE_CLIP_SAMPLES = 3 * SAMPLE_RATE
NOISE_SLICE_SAMPLES = 20480
BAND_HZ = (80.0, 240.0)

_BANDPASS_SOS = signal.butter(4, BAND_HZ, btype="bandpass", fs=SAMPLE_RATE, output="sos")


@dataclass
class NoiseCache:
    clips: list[np.ndarray] = field(default_factory=list)
    refresh_interval_steps: int = 100_000
    source_dir: Path | None = None

    @classmethod
    def load(cls, noise_dir: str | Path, refresh_interval_steps: int = 100_000) -> "NoiseCache":
        """Load every WAV in ``noise_dir``, zero-padding or center-cropping to 3 s."""
        clips = []
        for p in sorted(Path(noise_dir).glob("*.wav")):
            x = load_wav(p).samples
            if len(x) < NOISE_CLIP_SAMPLES:
                x = np.pad(x, (0, NOISE_CLIP_SAMPLES - len(x)))
            else:
                off = (len(x) - NOISE_CLIP_SAMPLES) // 2
                x = x[off:off + NOISE_CLIP_SAMPLES]
            clips.append(x)
        return cls(clips, refresh_interval_steps, Path(noise_dir))

    def maybe_refresh(self, step: int) -> "NoiseCache":
        if self.source_dir is not None and step > 0 and step % self.refresh_interval_steps == 0:
            return NoiseCache.load(self.source_dir, self.refresh_interval_steps)
        return self


# --- pitch ------------------------------------------------------------------

def _wsola_stretch(x: np.ndarray, out_len: int, win: int = 400, hop: int = 160,
                   tol: int = 80) -> np.ndarray:
    """Waveform-similarity overlap-add: change duration to ``out_len``, keep pitch."""
    n = len(x)
    if n == out_len:
        return x.copy()
    speed = n / out_len
    window = np.hanning(win)
    pad = win + 2 * tol
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + int(speed * hop) + win)])
    n_frames = out_len // hop + 2
    out = np.zeros(n_frames * hop + win)
    norm = np.zeros_like(out)
    prev = None
    for k in range(n_frames):
        nominal = pad + int(round(k * hop * speed)) - win // 2
        if prev is None:
            pos = nominal
        else:
            target = xp[prev + hop:prev + hop + win]
            lo = max(nominal - tol, 0)
            region = xp[lo:nominal + tol + win]
            # cross-correlation of the natural continuation against each candidate offset
            cc = np.correlate(region, target, mode="valid")
            pos = lo + int(np.argmax(cc))
        out[k * hop:k * hop + win] += window * xp[pos:pos + win]
        norm[k * hop:k * hop + win] += window
        prev = pos
    out = out[win // 2:win // 2 + out_len]
    norm = norm[win // 2:win // 2 + out_len]
    return out / np.maximum(norm, 1e-3)


def pitch_shift(wave: np.ndarray, shift: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Shift pitch by ``shift`` hundredths of a tone (frequency ratio 2**(shift/600)).

    Time-stretches by the ratio with WSOLA (25 ms window, 10 ms hop, +/-5 ms
    search), then resamples back to the input length. Stretching at the
    original pitch keeps every period of a >= 100 Hz tone inside the search.
    """
    if abs(shift) > 600:
        raise ValueError("|shift| must be <= 600")
    x = np.asarray(wave, dtype=np.float64)
    if shift == 0:
        return x.copy()
    ratio = 2.0 ** (shift / 600.0)
    n = len(x)
    stretched = _wsola_stretch(x, max(int(round(n * ratio)), 1))
    return signal.resample(stretched, n)


# --- noise ------------------------------------------------------------------

def bandpass(x: np.ndarray) -> np.ndarray:
    return signal.sosfilt(_BANDPASS_SOS, np.asarray(x, dtype=np.float64))


def add_bandlimited_noise(wave: np.ndarray, noise: np.ndarray, snr_db: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Add 80-240 Hz band-passed noise at ``snr_db`` (mean-square powers).

    ``snr_db = inf`` disables the noise. A random contiguous crop of ``noise``
    of the wave's length is used.
    """
    x = np.asarray(wave, dtype=np.float64)
    if np.isinf(snr_db) and snr_db > 0:
        return x.copy()
    p_sig = float(np.mean(x ** 2))
    if p_sig < 1e-12:
        raise SilentSignal("signal power too small for an SNR to be defined")
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) < len(x):
        raise ValueError("noise shorter than wave")
    start = int(rng.integers(len(noise) - len(x) + 1))
    filt = bandpass(noise[start:start + len(x)])
    p_noise = float(np.mean(filt ** 2))
    if p_noise <= 0.0:
        return x.copy()
    scale = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return x + scale * filt


# --- reverb -----------------------------------------------------------------

def rt60_for_room(room_scale: float) -> float:
    return 0.05 + 0.7 * (room_scale / 100.0)


def impulse_response(room_scale: float, rng: np.random.Generator, length: int | None = None,
                     wet: float = 0.3) -> np.ndarray:
    """Mixed room response: dry unit impulse plus ``wet`` times a decaying noise tail.

    The tail is white noise under an exp envelope reaching -60 dB at RT60,
    scaled to unit energy, starting one sample after the direct path.
    """
    if not 0.0 <= room_scale <= 100.0:
        raise ValueError("room_scale must lie in [0, 100]")
    rt60 = rt60_for_room(room_scale)
    n_tail = int(round(rt60 * SAMPLE_RATE))
    t = np.arange(1, n_tail + 1) / SAMPLE_RATE
    tail = rng.standard_normal(n_tail) * np.exp(-np.log(1000.0) * t / rt60)
    tail /= np.sqrt(np.sum(tail ** 2))
    h = np.concatenate([[1.0], wet * tail])
    if length is not None:
        h = h[:length]
    return h


def reverb(wave: np.ndarray, room_scale: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(wave, dtype=np.float64)
    h = impulse_response(room_scale, rng, len(x))
    y = signal.fftconvolve(x, h)[: len(x)]
    peak_in = np.max(np.abs(x))
    peak_out = np.max(np.abs(y))
    if peak_out > 0:
        y *= peak_in / peak_out
    return y


# --- policy -----------------------------------------------------------------

def augment_future(batch: CpcBatch, cfg: AugmentConfig, cache: NoiseCache | None,
                   rng: np.random.Generator) -> CpcBatch:
    """Augment ``future_source`` rows (pitch -> reverb -> noise); never the past."""
    if "noise" in cfg.enabled_ops and (cache is None or not cache.clips):
        raise EmptyNoiseCache("noise augmentation enabled but no noise clips loaded")
    if rng.random() < cfg.p_clean or not cfg.enabled_ops:
        return batch
    future = np.array(batch.future_source, copy=True)
    for b in range(future.shape[0]):
        row = future[b].astype(np.float64)
        if "pitch" in cfg.enabled_ops:
            lo, hi = cfg.pitch_range
            row = pitch_shift(row, int(rng.integers(lo, hi + 1)), rng)
        if "reverb" in cfg.enabled_ops:
            row = reverb(row, float(rng.uniform(*cfg.room_scale_range)), rng)
        if "noise" in cfg.enabled_ops:
            clip = cache.clips[int(rng.integers(len(cache.clips)))]
            # random 1.28 s slice of the cached clip, cropped again to the row length
            n_slice = max(NOISE_SLICE_SAMPLES, len(row))
            if len(clip) < n_slice:
                clip = np.pad(clip, (0, n_slice - len(clip)))
            off = int(rng.integers(len(clip) - n_slice + 1))
            snr = float(rng.uniform(*cfg.snr_db_range))
            try:
                row = add_bandlimited_noise(row, clip[off:off + n_slice], snr, rng)
            except SilentSignal:
                pass
        future[b] = row
    return replace(batch, future_source=future.astype(batch.future_source.dtype))
