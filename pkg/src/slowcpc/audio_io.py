"""WAV, manifest and alignment ingestion; training-window sampling."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadRate,
    MissingFile,
    NoEligibleUtterance,
    NotRiff,
    OverlapError,
    ParseError,
    UnsupportedFormat,
)

SAMPLE_RATE = 16000
FRAME_SHIFT_S = 0.01
SIL = "<sil>"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)


@dataclass
class AlignmentTrack:
    intervals: list[tuple[float, float, str]] = field(default_factory=list)


@dataclass
class Utterance:
    id: str
    wave_path: Path
    speaker: str
    alignment_path: Path | None = None
    num_samples: int = 0

    _alignment: AlignmentTrack | None = field(default=None, repr=False)

    @property
    def alignment(self) -> AlignmentTrack | None:
        if self._alignment is None and self.alignment_path is not None:
            self._alignment = load_alignments(self.alignment_path)
        return self._alignment


@dataclass
class Dataset:
    utterances: list[Utterance]
    root: Path

    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.utterances)

    def samples(self, index: int) -> np.ndarray:
        """Waveform samples of utterance ``index`` (cached after first load)."""
        if index not in self._cache:
            self._cache[index] = load_wav(self.utterances[index].wave_path).samples
        return self._cache[index]

    def speakers(self) -> list[str]:
        return sorted({u.speaker for u in self.utterances})


@dataclass
class CpcBatch:
    past_windows: np.ndarray
    future_source: np.ndarray
    speaker_ids: list[str]
    window_origin: list[tuple[str, int]]


def load_wav(path: str | Path) -> Waveform:
    """Read a 16 kHz mono 16-bit PCM WAV file, scaled to [-1, 1)."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotRiff(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise UnsupportedFormat(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise UnsupportedFormat(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise UnsupportedFormat(f"{path}: format tag {tag} is not PCM")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits}-bit samples, expected 16")
    if rate != SAMPLE_RATE:
        raise BadRate(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    n = len(payload) // 2
    if n == 0:
        raise UnsupportedFormat(f"{path}: no samples")
    pcm = np.frombuffer(payload[: 2 * n], dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write samples in [-1, 1] as 16-bit PCM mono (clipped, rounded)."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.astype("<i2").tobytes())


def _wav_num_samples(path: Path) -> int:
    return len(load_wav(path).samples)


def load_manifest(path: str | Path) -> Dataset:
    """Parse ``<utt-id> <wav> <speaker> [<alignment>]`` lines; paths are relative
    to the manifest's directory. Every WAV is parsed up front."""
    path = Path(path)
    root = path.parent.resolve()
    utts: list[Utterance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (3, 4):
            raise ParseError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
        uid = fields[0]
        if uid in seen:
            raise ParseError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        wav = (root / fields[1]).resolve()
        ali = (root / fields[3]).resolve() if len(fields) == 4 else None
        utts.append(Utterance(uid, wav, fields[2], ali))
    for u in utts:
        for p in (u.wave_path, u.alignment_path):
            if p is not None and not p.exists():
                raise MissingFile(f"missing file: {p}")
    for u in utts:
        u.num_samples = _wav_num_samples(u.wave_path)
    return Dataset(utts, root)


def parse_alignments(text: str, source: str = "<string>") -> AlignmentTrack:
    intervals = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise ParseError(f"{source}:{lineno}: expected '<start> <end> <label>'")
        try:
            start, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError(f"{source}:{lineno}: bad time value") from None
        if not start < end:
            raise ParseError(f"{source}:{lineno}: end {end} not after start {start}")
        intervals.append((start, end, fields[2]))
    intervals.sort(key=lambda iv: iv[0])
    for prev, cur in zip(intervals, intervals[1:]):
        if cur[0] < prev[1]:
            raise OverlapError(f"{source}: intervals {prev} and {cur} overlap")
    return AlignmentTrack(intervals)


def load_alignments(path: str | Path) -> AlignmentTrack:
    return parse_alignments(Path(path).read_text(encoding="utf-8"), str(path))


def frame_labels(track: AlignmentTrack, num_frames: int,
                 frame_shift_s: float = FRAME_SHIFT_S) -> list[str]:
    """Label frame i by the interval containing its center (i + 0.5) * shift.

    Containment is end-exclusive; uncovered frames get ``"<sil>"``.
    """
    starts = np.array([iv[0] for iv in track.intervals], dtype=np.float64)
    ends = np.array([iv[1] for iv in track.intervals], dtype=np.float64)
    labels = []
    for i in range(num_frames):
        t = (i + 0.5) * frame_shift_s
        k = int(np.searchsorted(starts, t, side="right")) - 1
        if k >= 0 and t < ends[k]:
            labels.append(track.intervals[k][2])
        else:
            labels.append(SIL)
    return labels


def sample_training_windows(dataset: Dataset, window_samples: int, batch_size: int,
                            rng: np.random.Generator) -> CpcBatch:
    if window_samples % 160:
        raise ValueError("window_samples must be a multiple of 160")
    eligible = [i for i, u in enumerate(dataset.utterances) if u.num_samples >= window_samples]
    if not eligible:
        raise NoEligibleUtterance(f"no utterance has >= {window_samples} samples")
    rows = np.empty((batch_size, window_samples), dtype=np.float32)
    speakers, origins = [], []
    for b in range(batch_size):
        i = eligible[int(rng.integers(len(eligible)))]
        utt = dataset.utterances[i]
        start = int(rng.integers(utt.num_samples - window_samples + 1))
        rows[b] = dataset.samples(i)[start:start + window_samples]
        speakers.append(utt.speaker)
        origins.append((utt.id, start))
    return CpcBatch(rows, rows.copy(), speakers, origins)
