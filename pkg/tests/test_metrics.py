import numpy as np
import pytest

from povnet import metrics
from povnet.errors import ConvergenceError, DegenerateMatrixError, MatrixKindError
from povnet.flows import FlowMatrix, MatrixKind
from povnet.metrics import Direction
from povnet.spatial import Level


def raw(values, ids=None):
    values = np.asarray(values)
    ids = tuple(ids or (f"N{k}" for k in range(values.shape[0])))
    return FlowMatrix(Level.REGION, MatrixKind.RAW, ids, values.astype(np.int64))


def normalized(values, ids=None):
    values = np.asarray(values, dtype=np.float64)
    ids = tuple(ids or (f"N{k}" for k in range(values.shape[0])))
    return FlowMatrix(Level.REGION, MatrixKind.NORMALIZED, ids, values)


def vec(ns, ids):
    return [ns.scores[u] for u in ids]


# ── activity ─────────────────────────────────────────────────────────


def test_activity_zero_matrix():
    m = raw(np.zeros((3, 3)))
    assert all(v == 0 for v in metrics.activity(m).scores.values())


def test_activity_outgoing_excludes_diagonal():
    m = raw([[7, 2, 3], [0, 0, 0], [0, 0, 0]])
    ns = metrics.activity(m, Direction.OUTGOING)
    assert ns.scores["N0"] == 5.0


def test_activity_directions():
    m = raw([[7, 2, 3], [1, 0, 0], [4, 0, 9]])
    ids = ("N0", "N1", "N2")
    out = metrics.activity(m, Direction.OUTGOING)
    inc = metrics.activity(m, Direction.INCOMING)
    within = metrics.activity(m, Direction.WITHIN)
    total = metrics.activity(m, Direction.TOTAL)
    assert vec(out, ids) == [5.0, 1.0, 4.0]
    assert vec(inc, ids) == [5.0, 2.0, 3.0]
    assert vec(within, ids) == [7.0, 0.0, 9.0]
    assert vec(total, ids) == [17.0, 3.0, 16.0]


def test_activity_diagonal_only():
    m = raw(np.diag([3, 5, 7]))
    assert all(v == 0 for v in metrics.activity(m, Direction.OUTGOING).scores.values())
    assert vec(metrics.activity(m, Direction.WITHIN), ("N0", "N1", "N2")) == [3.0, 5.0, 7.0]


def test_activity_measure_name_tracks_kind():
    assert metrics.activity(raw(np.ones((2, 2)))).measure == "activity_raw"
    assert metrics.activity(normalized([[0, 1], [1, 0]])).measure == "activity_normalized"


# ── eigenvector centrality ───────────────────────────────────────────


def test_eigenvector_complete_graph_uniform():
    n = 4
    m = normalized(np.ones((n, n)) - np.eye(n))
    ns = metrics.eigenvector_centrality(m)
    for v in ns.scores.values():
        assert v == pytest.approx(0.25, abs=1e-9)


def test_eigenvector_two_node_closed_form():
    # [[0, a], [b, 0]] has leading eigenvector proportional to (sqrt(a), sqrt(b));
    # for a=4, b=1 the L1-normalized vector is (2/3, 1/3)
    ns = metrics.eigenvector_centrality(normalized([[0.0, 4.0], [1.0, 0.0]]))
    assert ns.scores["N0"] == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert ns.scores["N1"] == pytest.approx(1.0 / 3.0, abs=1e-8)


def test_eigenvector_zero_matrix_degenerate():
    with pytest.raises(DegenerateMatrixError):
        metrics.eigenvector_centrality(normalized([[0.0]]))


def test_eigenvector_l1_normalized_and_nonnegative():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m = normalized(rng.random((6, 6)))
        ns = metrics.eigenvector_centrality(m)
        values = np.array(list(ns.scores.values()))
        assert abs(values.sum() - 1.0) < 1e-9
        assert np.all(values >= 0)


def test_eigenvector_non_convergence():
    m = normalized([[0.0, 1.0], [0.0, 0.0]])  # defective: no dominant eigenvector
    with pytest.raises(ConvergenceError):
        metrics.eigenvector_centrality(m, tol=1e-12, max_iter=50)


# ── pagerank ─────────────────────────────────────────────────────────


def test_pagerank_symmetric_ring_uniform():
    n = 5
    vals = np.zeros((n, n))
    for i in range(n):
        vals[i, (i + 1) % n] = 1.0
        vals[i, (i - 1) % n] = 1.0
    ns = metrics.pagerank(normalized(vals))
    for v in ns.scores.values():
        assert v == pytest.approx(0.2, abs=1e-9)


def test_pagerank_chain_with_dangling_node():
    # A->B, B->C, C dangling, d = 0.85: stationary distribution frozen from
    # a direct linear-system solve of the same transition structure
    vals = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]
    ns = metrics.pagerank(normalized(vals), damping=0.85)
    assert ns.scores["N0"] == pytest.approx(0.184416781927155, abs=1e-9)
    assert ns.scores["N1"] == pytest.approx(0.341171046565237, abs=1e-9)
    assert ns.scores["N2"] == pytest.approx(0.474412171507607, abs=1e-9)


def test_pagerank_teleport_only_limit():
    vals = [[0.0, 5.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]
    ns = metrics.pagerank(normalized(vals), damping=1e-12)
    for v in ns.scores.values():
        assert v == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_pagerank_sums_to_one_with_floor():
    rng = np.random.default_rng(3)
    d = 0.85
    for _ in range(20):
        vals = rng.random((8, 8)) * (rng.random((8, 8)) < 0.4)
        ns = metrics.pagerank(normalized(vals), damping=d)
        values = np.array(list(ns.scores.values()))
        assert abs(values.sum() - 1.0) < 1e-9
        assert np.all(values >= (1 - d) / 8 - 1e-12)


def test_pagerank_scale_invariance():
    rng = np.random.default_rng(9)
    vals = rng.random((6, 6))
    a = metrics.pagerank(normalized(vals))
    b = metrics.pagerank(normalized(vals * 1000.0))
    for u in a.scores:
        assert a.scores[u] == pytest.approx(b.scores[u], abs=1e-9)


def test_eigenvector_scale_invariance():
    rng = np.random.default_rng(10)
    vals = rng.random((6, 6))
    a = metrics.eigenvector_centrality(normalized(vals))
    b = metrics.eigenvector_centrality(normalized(vals * 1000.0))
    for u in a.scores:
        assert a.scores[u] == pytest.approx(b.scores[u], abs=1e-8)


def pagerank_oracle(vals: np.ndarray, damping: float) -> np.ndarray:
    """Dense brute-force stationary distribution: build the full Google
    matrix (dangling rows uniform) and solve the linear system."""
    n = vals.shape[0]
    out = vals.sum(axis=1)
    t = np.where(out[:, None] > 0, vals / np.where(out[:, None] > 0, out[:, None], 1.0),
                 1.0 / n)
    g = damping * t + (1.0 - damping) / n
    # stationary pi = g.T pi with sum(pi) = 1
    a = np.eye(n) - g.T
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return np.linalg.solve(a, b)


def test_pagerank_matches_dense_oracle():
    rng = np.random.default_rng(77)
    for _ in range(25):
        n = int(rng.integers(2, 30))
        vals = rng.random((n, n)) * (rng.random((n, n)) < 0.35)
        ns = metrics.pagerank(normalized(vals), damping=0.85, tol=1e-13)
        got = np.array([ns.scores[f"N{k}"] for k in range(n)])
        expected = pagerank_oracle(vals, 0.85)
        assert np.abs(got - expected).sum() < 1e-8


def test_pagerank_rejects_bad_damping():
    with pytest.raises(ValueError):
        metrics.pagerank(normalized([[0.0, 1.0], [1.0, 0.0]]), damping=1.0)


# ── gravity residual ─────────────────────────────────────────────────


def test_residual_zero_matrix():
    ns = metrics.gravity_residual(normalized(np.zeros((3, 3))))
    assert all(v == 0.0 for v in ns.scores.values())


def test_residual_row_sum():
    ns = metrics.gravity_residual(normalized([[0.0, 4.0, 2.5],
                                              [0.0, 0.0, 0.0],
                                              [1.0, 1.0, 0.0]]))
    assert ns.scores["N0"] == pytest.approx(6.5)
    assert ns.scores["N2"] == pytest.approx(2.0)


def test_residual_single_node():
    ns = metrics.gravity_residual(normalized([[0.0]]))
    assert ns.scores["N0"] == 0.0


def test_residual_rejects_raw():
    with pytest.raises(MatrixKindError):
        metrics.gravity_residual(raw(np.ones((2, 2))))


# ── introversion ─────────────────────────────────────────────────────


def test_introversion_all_within():
    ns = metrics.introversion(raw(np.diag([5, 3])))
    assert ns.scores["N0"] == 1.0
    assert ns.scores["N1"] == 1.0


def test_introversion_quarter():
    ns = metrics.introversion(raw([[5, 15, 0], [0, 1, 0], [0, 0, 1]]))
    assert ns.scores["N0"] == pytest.approx(0.25)


def test_introversion_zero_diagonal():
    ns = metrics.introversion(raw([[0, 10], [10, 0]]))
    assert ns.scores["N0"] == 0.0


def test_introversion_zero_row_warns():
    with pytest.warns(UserWarning, match="N1"):
        ns = metrics.introversion(raw([[1, 1], [0, 0]]))
    assert ns.scores["N1"] == 0.0


def test_introversion_in_unit_interval_and_matches_activity():
    rng = np.random.default_rng(21)
    for _ in range(50):
        m = raw(rng.integers(0, 20, size=(5, 5)))
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ns = metrics.introversion(m)
        within = metrics.activity(m, Direction.WITHIN).scores
        outgoing = metrics.activity(m, Direction.OUTGOING).scores
        for u, v in ns.scores.items():
            assert 0.0 <= v <= 1.0
            denom = within[u] + outgoing[u]
            if denom > 0:
                assert v == pytest.approx(within[u] / denom, rel=1e-12)


def test_introversion_rejects_normalized():
    with pytest.raises(MatrixKindError):
        metrics.introversion(normalized([[0.0, 1.0], [1.0, 0.0]]))


# ── symmetric uniform invariant ──────────────────────────────────────


def test_symmetric_equal_weights_uniform_scores():
    n = 6
    vals = np.ones((n, n)) - np.eye(n)
    m = normalized(vals * 3.7)
    for ns in (metrics.eigenvector_centrality(m), metrics.pagerank(m)):
        for v in ns.scores.values():
            assert v == pytest.approx(1.0 / n, abs=1e-9)


# ── serialization ────────────────────────────────────────────────────


def test_scores_csv_round_trip(tmp_path):
    m_raw = raw([[2, 3], [1, 4]], ids=("R1", "R2"))
    m_norm = normalized([[0.0, 1.5], [2.5, 0.0]], ids=("R1", "R2"))
    score_sets = [
        metrics.activity(m_raw, Direction.OUTGOING),
        metrics.pagerank(m_norm),
        metrics.gravity_residual(m_norm),
    ]
    path = tmp_path / "scores.csv"
    metrics.write_scores_csv(score_sets, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "unit_id,measure,direction,score"
    assert lines[1:] == sorted(lines[1:])
    back = metrics.read_scores_csv(path, Level.REGION)
    assert back[("pagerank", "")].scores == score_sets[1].scores
    assert back[("activity_raw", "outgoing")].direction is Direction.OUTGOING
    assert back[("activity_raw", "outgoing")].scores == score_sets[0].scores
