import itertools
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from slowcpc.errors import NoValidCells
from slowcpc.eval.abx import (
    AbxItem,
    abx_score,
    dtw_distance,
    frame_distance,
    load_abx_items,
    slice_frames,
    write_abx_report,
)
from slowcpc.eval.features import write_features


def naive_angle(u, v):
    nu, nv = math.sqrt(sum(a * a for a in u)), math.sqrt(sum(b * b for b in v))
    if nu == 0 or nv == 0:
        return 0.5
    c = sum(a * b for a, b in zip(u, v)) / (nu * nv)
    return math.acos(max(-1.0, min(1.0, c))) / math.pi


def all_paths(n, m):
    """Every monotone path from (0,0) to (n-1,m-1) with unit steps."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                for rest in walk(i + di, j + dj):
                    yield [(i, j)] + rest
    return list(walk(0, 0))


def brute_dtw(U, V):
    best = None
    for path in all_paths(len(U), len(V)):
        cost = sum(naive_angle(U[i], V[j]) for i, j in path)
        if best is None or cost < best[0]:
            best = (cost, len(path))
    return best[0] / best[1]


def brute_abx(items, mode):
    """Enumerate every ordered (a, b, x) triple directly and average per cell."""
    cells = defaultdict(list)
    for ia, ib, ix in itertools.product(range(len(items)), repeat=3):
        a, b, x = items[ia], items[ib], items[ix]
        if a.phone == b.phone or x.phone != a.phone or ia == ix:
            continue
        if not (a.context == b.context == x.context):
            continue
        if a.speaker != b.speaker:
            continue
        if mode == "within" and x.speaker != a.speaker:
            continue
        if mode == "across" and x.speaker == a.speaker:
            continue
        dax = dtw_distance(a.features, x.features)
        dbx = dtw_distance(b.features, x.features)
        score = 1.0 if dax < dbx else (0.5 if dax == dbx else 0.0)
        spec = (a.speaker,) if mode == "within" else (a.speaker, x.speaker)
        cells[(a.phone, b.phone, a.context, spec)].append(score)
    if not cells:
        return None
    means = [math.fsum(v) / len(v) for v in cells.values()]
    return 100.0 * (1.0 - math.fsum(means) / len(means)), len(cells)


def random_items(rng, n, integer=False):
    items = []
    for _ in range(n):
        length = int(rng.integers(1, 5))
        if integer:
            feats = rng.integers(0, 2, size=(length, 3)).astype(float)
        else:
            feats = rng.normal(size=(length, 3))
        items.append(AbxItem(feats, f"p{rng.integers(3)}",
                             (f"c{rng.integers(2)}", "c0"), f"s{rng.integers(3)}"))
    return items


# --- frame distance and DTW -----------------------------------------------------

def test_frame_distance_fixtures():
    u = np.array([0.3, -1.2, 2.0])
    assert frame_distance(u, u) == 0.0
    assert frame_distance(u, 7.5 * u) == 0.0
    assert frame_distance([1, 0], [0, 3]) == pytest.approx(0.5, abs=1e-15)
    assert frame_distance(u, -u) == 1.0
    assert frame_distance([0, 0], [1, 2]) == 0.5


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)))
def test_frame_distance_matches_arccos(u, v):
    assert frame_distance(u, v) == pytest.approx(naive_angle(u, v), abs=1e-7)
    assert 0.0 <= frame_distance(u, v) <= 1.0


def test_dtw_fixtures():
    rng = np.random.default_rng(0)
    U = rng.normal(size=(6, 4))
    assert dtw_distance(U, U) == 0.0
    u, v = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    assert dtw_distance(u, v) == frame_distance(u[0], v[0])
    e1 = np.array([[1.0, 0.0]])
    assert dtw_distance(np.vstack([e1, e1]), e1) == 0.0


@pytest.mark.parametrize("seed", range(25))
def test_dtw_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(rng.integers(1, 5), 3))
    V = rng.normal(size=(rng.integers(1, 5), 3))
    assert dtw_distance(U, V) == pytest.approx(brute_dtw(U, V), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(3)), elements=st.floats(-5, 5)),
       arrays(np.float64, st.tuples(st.integers(1, 6), st.just(3)), elements=st.floats(-5, 5)))
def test_dtw_symmetric_and_self_zero(U, V):
    assert dtw_distance(U, V) == dtw_distance(V, U)
    if np.all(np.linalg.norm(U, axis=1) > 0):
        assert dtw_distance(U, U) == 0.0


def test_dtw_zero_frames_keep_half_distance():
    # zero vectors are 0.5 from everything, themselves included
    assert dtw_distance(np.zeros((2, 3)), np.zeros((2, 3))) == 0.5


# --- ABX --------------------------------------------------------------------------

def test_abx_perfect_cell():
    a = AbxItem(np.array([[1.0, 0.0]]), "A", ("x", "y"), "s")
    x = AbxItem(np.array([[1.0, 0.0]]), "A", ("x", "y"), "s")
    b = AbxItem(np.array([[0.0, 1.0]]), "B", ("x", "y"), "s")
    rep = abx_score([a, x, b], "within")
    assert rep.error_percent == 0.0
    assert len(rep.cells) == 1 and rep.cells[0].score == 1.0 and rep.cells[0].triples == 2


def test_abx_all_ties_is_fifty():
    f = np.array([[1.0, 1.0]])
    items = [AbxItem(f.copy(), ph, ("c", "c"), "s") for ph in "AABB"]
    assert abx_score(items, "within").error_percent == 50.0


def test_abx_requires_two_phones():
    with pytest.raises(NoValidCells):
        abx_score([AbxItem(np.ones((1, 2)), "A", ("c", "c"), "s")] * 3)


def test_abx_no_cells():
    items = [AbxItem(np.ones((1, 2)), "A", ("c", "c"), "s"), AbxItem(np.ones((1, 2)), "B", ("c", "c"), "s")]
    with pytest.raises(NoValidCells):
        abx_score(items, "within")
    with pytest.raises(NoValidCells):
        abx_score(items, "across")


@pytest.mark.parametrize("mode", ["within", "across"])
@pytest.mark.parametrize("seed", range(8))
def test_abx_matches_brute_force(mode, seed):
    rng = np.random.default_rng(seed)
    items = random_items(rng, 30, integer=bool(seed % 2))
    expect = brute_abx(items, mode)
    if expect is None:
        with pytest.raises(NoValidCells):
            abx_score(items, mode)
        return
    rep = abx_score(items, mode)
    assert rep.error_percent == expect[0]
    assert len(rep.cells) == expect[1]


def test_abx_scale_invariant():
    rng = np.random.default_rng(3)
    items = random_items(rng, 40)
    scaled = [AbxItem(it.features * 3.7, it.phone, it.context, it.speaker) for it in items]
    for mode in ("within", "across"):
        assert abx_score(items, mode).error_percent == abx_score(scaled, mode).error_percent


def test_abx_symmetrized_cells():
    rng = np.random.default_rng(1)
    rep = abx_score(random_items(rng, 40), "within")
    keys = {(c.phone_a, c.phone_b, c.context, c.speakers) for c in rep.cells}
    doubles = [k for k in keys if (k[1], k[0], k[2], k[3]) in keys]
    assert doubles


# --- item files -------------------------------------------------------------------

def test_slice_frames_center_rule():
    feats = np.arange(10, dtype=float)[:, None]
    np.testing.assert_array_equal(slice_frames(feats, 0.02, 0.05)[:, 0], [2, 3, 4])
    np.testing.assert_array_equal(slice_frames(feats, 0.031, 0.034)[:, 0], [3])


def test_load_items_and_report(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("u1", "u2"):
        write_features(tmp_path / f"{name}.cpcf", rng.normal(size=(30, 4)))
    item_file = tmp_path / "items.item"
    item_file.write_text("#file onset offset #phone prev-phone next-phone speaker\n"
                         "u1 0.00 0.05 A x y s1\nu1 0.10 0.15 A x y s1\nu2 0.05 0.12 B x y s1\n")
    items = load_abx_items(tmp_path, item_file)
    assert [it.features.shape for it in items] == [(5, 4), (5, 4), (7, 4)]
    assert items[2].context == ("x", "y")
    rep = abx_score(items, "within")
    write_abx_report(rep, tmp_path / "r.tsv")
    lines = (tmp_path / "r.tsv").read_text().splitlines()
    assert lines[0].startswith("phone_a\t") and len(lines) == 2 + len(rep.cells)
    both = load_abx_items([tmp_path, tmp_path], item_file)
    assert both[0].features.shape == (5, 8)
