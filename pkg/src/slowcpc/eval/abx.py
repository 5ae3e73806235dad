"""ABX phone discrimination with angular frame distance and DTW.

Cells are keyed by (phone A, phone B, shared context, speaker spec). A cell's
score is the mean over its triples of 1 if d(a, x) < d(b, x), 0.5 on a tie,
else 0; the reported error is 100 * (1 - unweighted mean of cell scores).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio_io import FRAME_SHIFT_S
from ..errors import NoValidCells, ParseError
from .features import SUFFIX, read_features

ITEM_HEADER = "#file onset offset #phone prev-phone next-phone speaker"


@dataclass
class AbxItem:
    features: np.ndarray
    phone: str
    context: tuple[str, str]
    speaker: str


@dataclass
class AbxCell:
    phone_a: str
    phone_b: str
    context: tuple[str, str]
    speakers: tuple[str, ...]
    triples: int
    score: float


@dataclass
class AbxReport:
    mode: str
    error_percent: float
    cells: list[AbxCell] = field(default_factory=list)


def frame_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between u and v divided by pi; 0.5 if either vector is zero.

    Uses the half-angle form 2*atan2(|u'-v'|, |u'+v'|) on unit vectors, which is
    exactly 0 for parallel and exactly 1 for opposite vectors.
    """
    return float(distance_matrix(np.atleast_2d(u), np.atleast_2d(v))[0, 0])


def distance_matrix(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """frame_distance over all (row of U, row of V) pairs."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    nu = np.linalg.norm(U, axis=1)
    nv = np.linalg.norm(V, axis=1)
    uh = U / np.where(nu > 0, nu, 1.0)[:, None]
    vh = V / np.where(nv > 0, nv, 1.0)[:, None]
    diff = np.linalg.norm(uh[:, None, :] - vh[None, :, :], axis=-1)
    summ = np.linalg.norm(uh[:, None, :] + vh[None, :, :], axis=-1)
    d = 2.0 * np.arctan2(diff, summ) / np.pi
    d[(nu == 0.0)[:, None] | (nv == 0.0)[None, :]] = 0.5
    return d


def dtw_distance(U: np.ndarray, V: np.ndarray) -> float:
    """Path-length-normalized DTW cost with steps (1,1), (1,0), (0,1).

    Every visited cell (the start cell included) adds its frame distance.
    Cost ties prefer the diagonal, then (1,0), then (0,1).
    """
    d = distance_matrix(U, V)
    n, m = d.shape
    cost = np.empty((n, m))
    steps = np.empty((n, m), dtype=np.int64)
    cost[0, 0] = d[0, 0]
    steps[0, 0] = 1
    for j in range(1, m):
        cost[0, j] = cost[0, j - 1] + d[0, j]
        steps[0, j] = steps[0, j - 1] + 1
    for i in range(1, n):
        cost[i, 0] = cost[i - 1, 0] + d[i, 0]
        steps[i, 0] = steps[i - 1, 0] + 1
        row_prev = cost[i - 1]
        for j in range(1, m):
            best = row_prev[j - 1]
            bi, bj = i - 1, j - 1
            if row_prev[j] < best:
                best = row_prev[j]
                bi, bj = i - 1, j
            if cost[i, j - 1] < best:
                best = cost[i, j - 1]
                bi, bj = i, j - 1
            cost[i, j] = best + d[i, j]
            steps[i, j] = steps[bi, bj] + 1
    return float(cost[-1, -1] / steps[-1, -1])


def _cell_score(d_ax: np.ndarray, d_bx: np.ndarray, same: np.ndarray | None) -> tuple[float, int]:
    """Score over triples given d(a,x) [A x X] and d(b,x) [B x X].

    ``same`` masks (a, x) pairs that are the same token.
    """
    cmp = d_ax[:, None, :] - d_bx[None, :, :]
    s = np.where(cmp < 0, 1.0, np.where(cmp == 0, 0.5, 0.0))
    if same is not None:
        s = s * (~same)[:, None, :]
        count = int((~same).sum()) * d_bx.shape[0]
    else:
        count = s.size
    if count == 0:
        return 0.0, 0
    return float(s.sum() / count), count


def abx_score(items: list[AbxItem], mode: str = "within") -> AbxReport:
    if mode not in ("within", "across"):
        raise ValueError("mode must be 'within' or 'across'")
    if len({it.phone for it in items}) < 2:
        raise NoValidCells("need at least two distinct phones")
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, it in enumerate(items):
        groups[(it.phone, tuple(it.context), it.speaker)].append(i)
    by_ctx: dict[tuple, dict[str, set]] = defaultdict(lambda: defaultdict(set))
    for phone, ctx, spk in groups:
        by_ctx[ctx][spk].add(phone)

    cache: dict[tuple[int, int], float] = {}

    def dist(i: int, j: int) -> float:
        key = (i, j)
        if key not in cache:
            cache[key] = dtw_distance(items[i].features, items[j].features)
        return cache[key]

    def block(rows: list[int], cols: list[int]) -> np.ndarray:
        return np.array([[dist(r, c) for c in cols] for r in rows], dtype=np.float64).reshape(len(rows), len(cols))

    cells: list[AbxCell] = []
    for ctx in sorted(by_ctx):
        spk_phones = by_ctx[ctx]
        speakers = sorted(spk_phones)
        for s1 in speakers:
            phones = sorted(spk_phones[s1])
            for a_ph in phones:
                for b_ph in phones:
                    if a_ph == b_ph:
                        continue
                    ga = groups[(a_ph, ctx, s1)]
                    gb = groups[(b_ph, ctx, s1)]
                    if mode == "within":
                        if len(ga) < 2:
                            continue
                        same = np.array([[a == x for x in ga] for a in ga])
                        score, n = _cell_score(block(ga, ga), block(gb, ga), same)
                        cells.append(AbxCell(a_ph, b_ph, ctx, (s1,), n, score))
                    else:
                        for s2 in speakers:
                            if s2 == s1 or a_ph not in spk_phones[s2]:
                                continue
                            gx = groups[(a_ph, ctx, s2)]
                            score, n = _cell_score(block(ga, gx), block(gb, gx), None)
                            cells.append(AbxCell(a_ph, b_ph, ctx, (s1, s2), n, score))
    if not cells:
        raise NoValidCells(f"no valid ABX cells in {mode} mode")
    # correctly rounded, so the result does not depend on cell order
    mean = math.fsum(c.score for c in cells) / len(cells)
    return AbxReport(mode, 100.0 * (1.0 - mean), cells)


def slice_frames(feats: np.ndarray, onset: float, offset: float,
                 frame_shift_s: float = FRAME_SHIFT_S) -> np.ndarray:
    """Frames whose center (i + 0.5) * shift lies in [onset, offset).

    Falls back to the single frame nearest the segment midpoint when none does.
    """
    centers = (np.arange(len(feats)) + 0.5) * frame_shift_s
    mask = (centers >= onset) & (centers < offset)
    if mask.any():
        return feats[mask]
    mid = 0.5 * (onset + offset)
    k = int(np.clip(np.floor(mid / frame_shift_s), 0, len(feats) - 1))
    return feats[k:k + 1]


def read_item_file(path: str | Path) -> list[tuple[str, float, float, str, str, str, str]]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split()
        if len(f) != 7:
            raise ParseError(f"{path}:{lineno}: expected 7 fields, got {len(f)}")
        try:
            records.append((f[0], float(f[1]), float(f[2]), f[3], f[4], f[5], f[6]))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad onset/offset") from None
    return records


def load_abx_items(feature_dirs: str | Path | list, item_file: str | Path) -> list[AbxItem]:
    """Slice ABX tokens out of per-utterance feature files.

    Several feature directories are concatenated column-wise (rows truncated
    to the shortest).
    """
    dirs = [feature_dirs] if isinstance(feature_dirs, (str, Path)) else list(feature_dirs)
    loaded: dict[str, np.ndarray] = {}
    items = []
    for name, onset, offset, phone, prev, nxt, spk in read_item_file(item_file):
        if name not in loaded:
            mats = [read_features(Path(d) / (name + SUFFIX)) for d in dirs]
            rows = min(m.shape[0] for m in mats)
            loaded[name] = np.concatenate([m[:rows] for m in mats], axis=1)
        items.append(AbxItem(slice_frames(loaded[name], onset, offset), phone, (prev, nxt), spk))
    return items


def write_abx_report(report: AbxReport, path: str | Path) -> None:
    lines = ["phone_a\tphone_b\tprev\tnext\tspeakers\ttriples\tscore"]
    for c in report.cells:
        lines.append(f"{c.phone_a}\t{c.phone_b}\t{c.context[0]}\t{c.context[1]}\t"
                     f"{','.join(c.speakers)}\t{c.triples}\t{c.score!r}")
    lines.append(f"# mode={report.mode}\terror_percent={report.error_percent!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
