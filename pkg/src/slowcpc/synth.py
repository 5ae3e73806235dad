"""Synthetic phone-like corpus for desk-scale training and evaluation.

Each phone is a chord of three sines drawn once per corpus from its own
150 Hz band; each speaker transposes every chord by 2**(s/24) and weights
the three partials with a fixed spectral envelope.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import SAMPLE_RATE, write_wav
from .eval.abx import ITEM_HEADER

CROSSFADE_S = 0.005
PEAK = 0.9
SNR_DB = 30.0


@dataclass(frozen=True)
class SynthConfig:
    num_phones: int = 8
    num_speakers: int = 4
    utterances_per_speaker: int = 50
    segment_dur_range: tuple[float, float] = (0.05, 0.20)
    utterance_dur: float = 2.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.segment_dur_range
        if self.num_phones < 2:
            raise ValueError("num_phones must be >= 2")
        if not (0 < lo <= hi and self.utterance_dur > 0):
            raise ValueError("durations must be positive and ordered")
        if hi < 2 * lo and self.utterance_dur > hi:
            raise ValueError("segment_dur_range must satisfy hi >= 2 * lo")


def phone_label(p: int) -> str:
    return f"p{p}"


def speaker_label(s: int) -> str:
    return f"spk{s}"


def _segment_bounds(rng: np.random.Generator, total: int, lo: int, hi: int) -> list[int]:
    """Sample boundaries so every segment lies in [lo, hi] samples and they tile ``total``."""
    bounds = [0]
    remaining = total
    while remaining > hi:
        n = int(rng.integers(lo, min(hi, remaining - lo) + 1))
        bounds.append(bounds[-1] + n)
        remaining -= n
    bounds.append(total)
    return bounds


def _phone_sequence(rng: np.random.Generator, count: int, num_phones: int) -> list[int]:
    seq = [int(rng.integers(num_phones))]
    for _ in range(count - 1):
        nxt = int(rng.integers(num_phones - 1))
        seq.append(nxt + (nxt >= seq[-1]))
    return seq


def render_utterance(phones: list[int], bounds: list[int], freqs: np.ndarray,
                     ratio: float, gains: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    total = bounds[-1]
    half = int(round(CROSSFADE_S * SAMPLE_RATE / 2))
    out = np.zeros(total)
    for p, start, end in zip(phones, bounds[:-1], bounds[1:]):
        a = max(start - half, 0)
        b = min(end + half, total)
        t = np.arange(a, b) / SAMPLE_RATE
        phases = rng.uniform(0, 2 * np.pi, size=3)
        seg = sum(g * np.sin(2 * np.pi * f * ratio * t + ph)
                  for f, g, ph in zip(freqs[p], gains, phases))
        env = np.ones(b - a)
        ramp = 2 * half
        if start > 0:
            env[:ramp] = np.linspace(0.0, 1.0, ramp, endpoint=False)
        if end < total:
            env[-ramp:] = np.linspace(1.0, 0.0, ramp, endpoint=False)
        out[a:b] += env * seg
    out *= PEAK / np.max(np.abs(out))
    p_sig = np.mean(out ** 2)
    out += rng.standard_normal(total) * np.sqrt(p_sig / 10 ** (SNR_DB / 10))
    return np.clip(out, -1.0, 32767 / 32768)


def generate_synthetic_corpus(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write ``wav/``, ``ali/``, ``manifest.txt`` and ``items.item`` under ``out_dir``.

    Returns the manifest path.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "ali").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    freqs = np.stack([np.sort(rng.uniform(300 + 150 * p, 450 + 150 * p, size=3))
                      for p in range(cfg.num_phones)])
    gains = rng.uniform(0.4, 1.0, size=(cfg.num_speakers, 3))
    total = int(round(cfg.utterance_dur * SAMPLE_RATE))
    lo = int(round(cfg.segment_dur_range[0] * SAMPLE_RATE))
    hi = int(round(cfg.segment_dur_range[1] * SAMPLE_RATE))

    manifest, items = [], [ITEM_HEADER]
    for s in range(cfg.num_speakers):
        ratio = 2.0 ** (s / 24.0)
        spk = speaker_label(s)
        for u in range(cfg.utterances_per_speaker):
            uid = f"{spk}_u{u:03d}"
            bounds = _segment_bounds(rng, total, lo, hi)
            phones = _phone_sequence(rng, len(bounds) - 1, cfg.num_phones)
            wave = render_utterance(phones, bounds, freqs, ratio, gains[s], rng)
            write_wav(out / "wav" / f"{uid}.wav", wave)
            ali_lines = []
            for p, a, b in zip(phones, bounds[:-1], bounds[1:]):
                ali_lines.append(f"{a / SAMPLE_RATE:.6f} {b / SAMPLE_RATE:.6f} {phone_label(p)}")
            (out / "ali" / f"{uid}.txt").write_text("\n".join(ali_lines) + "\n", encoding="utf-8")
            manifest.append(f"{uid} wav/{uid}.wav {spk} ali/{uid}.txt")
            for k in range(1, len(phones) - 1):
                items.append(f"{uid} {bounds[k] / SAMPLE_RATE:.6f} {bounds[k + 1] / SAMPLE_RATE:.6f} "
                             f"{phone_label(phones[k])} {phone_label(phones[k - 1])} "
                             f"{phone_label(phones[k + 1])} {spk}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    (out / "items.item").write_text("\n".join(items) + "\n", encoding="utf-8")
    return out / "manifest.txt"
