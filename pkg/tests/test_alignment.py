import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textssl import autodiff as ad
from textssl.alignment import (
    AlignmentResult,
    brute_force_shortest_path,
    cosine_distance_matrix,
    shortest_path,
    wvcr_loss,
)


class FakeTrace:
    def __init__(self, tokens, glimpses):
        self.tokens = tokens
        self.glimpses = glimpses


EOS = 99


def test_distance_matrix_zero_diagonal_for_identical_sequences():
    rng = np.random.default_rng(1)
    z = [ad.constant(rng.normal(size=6)) for _ in range(4)]
    d = cosine_distance_matrix(z, z)
    np.testing.assert_allclose(np.diag(d.values), np.zeros(4), atol=1e-12)


def test_distance_matrix_orthogonal_and_antiparallel():
    a = ad.constant([1.0, 0.0])
    b = ad.constant([0.0, 1.0])
    d = cosine_distance_matrix([a], [b])
    assert d.values[0, 0] == pytest.approx(1.0, abs=1e-12)
    d = cosine_distance_matrix([a], [ad.constant([-1.0, 0.0])])
    assert d.values[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_distance_matrix_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        cosine_distance_matrix([], [ad.constant([1.0])])


def test_shortest_path_single_cell():
    res = shortest_path(np.array([[0.3]]))
    assert res.total == pytest.approx(0.3)
    assert res.path == [(0, 0)]


def test_shortest_path_zero_diagonal():
    res = shortest_path(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert res.total == 0.0
    assert res.path == [(0, 0), (1, 1)]


def test_single_row_and_column_paths():
    row = np.array([[0.1, 0.2, 0.3]])
    assert brute_force_shortest_path(row) == pytest.approx(row.sum())
    assert shortest_path(row).total == pytest.approx(row.sum())
    col = row.T
    assert brute_force_shortest_path(col) == pytest.approx(col.sum())
    assert shortest_path(col).total == pytest.approx(col.sum())


def test_brute_force_guard():
    with pytest.raises(ValueError, match="7x7"):
        brute_force_shortest_path(np.zeros((8, 3)))


def test_matches_brute_force_on_random_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        shape = rng.integers(1, 7, size=2)
        d = rng.uniform(0.0, 2.0, size=shape)
        assert abs(shortest_path(d).total - brute_force_shortest_path(d)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_path_validity_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.0, 2.0, size=rng.integers(1, 7, size=2))
    res = shortest_path(d)
    # endpoints and step set
    assert res.path[0] == (0, 0)
    assert res.path[-1] == (d.shape[0] - 1, d.shape[1] - 1)
    for (i0, j0), (i1, j1) in zip(res.path, res.path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    # total equals the path's entry sum
    assert res.total == pytest.approx(sum(d[i, j] for i, j in res.path), abs=1e-9)
    # transpose symmetry
    assert res.total == pytest.approx(shortest_path(d.T).total, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_monotone_in_each_entry(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.0, 2.0, size=rng.integers(1, 6, size=2))
    base = shortest_path(d).total
    i = int(rng.integers(d.shape[0]))
    j = int(rng.integers(d.shape[1]))
    bumped = d.copy()
    bumped[i, j] += rng.uniform(0.0, 1.0)
    assert shortest_path(bumped).total >= base - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_zero_total_iff_zero_path(seed):
    rng = np.random.default_rng(seed)
    d = (rng.uniform(0.0, 2.0, size=(4, 4)) * rng.integers(0, 2, size=(4, 4))).astype(float)
    res = shortest_path(d)
    has_zero_path = res.total == 0.0
    if has_zero_path:
        assert all(d[i, j] == 0.0 for i, j in res.path)
    else:
        # every monotone path must carry positive cost
        assert brute_force_shortest_path(d) > 0.0


def test_wvcr_identical_sequences_zero_loss_and_gradient():
    rng = np.random.default_rng(3)
    vals = [rng.normal(size=8) for _ in range(3)]
    student = [ad.parameter(v.copy()) for v in vals]
    teacher = FakeTrace([0, 1, 2, EOS], [ad.constant(v) for v in vals] + [ad.constant(rng.normal(size=8))])
    strace = FakeTrace([0, 1, 2, EOS], student + [ad.constant(rng.normal(size=8))])
    loss, result = wvcr_loss(teacher, strace, eos_id=EOS)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    ad.backward(loss)
    for p in student:
        np.testing.assert_allclose(p.grad, np.zeros(8), atol=1e-12)
    assert result.path == [(0, 0), (1, 1), (2, 2)]


def test_wvcr_near_duplicate_beats_positional_matching():
    rng = np.random.default_rng(4)
    u = rng.normal(size=8)
    v = rng.normal(size=8)
    dup = u + 1e-4 * rng.normal(size=8)
    teacher = FakeTrace([0, 1, EOS], [ad.constant(u), ad.constant(v), ad.constant(u)])
    student_glimpses = [ad.constant(u), ad.constant(dup), ad.constant(v)]
    strace = FakeTrace([0, 0, 1, EOS], student_glimpses + [ad.constant(u)])
    loss, result = wvcr_loss(teacher, strace, eos_id=EOS)
    moves = [(i1 - i0, j1 - j0) for (i0, j0), (i1, j1) in zip(result.path, result.path[1:])]
    assert moves.count((0, 1)) == 1  # one horizontal move absorbs the duplicate
    one_to_one = sum(
        1.0 - np.dot(a, b.data) / (np.linalg.norm(a) * np.linalg.norm(b.data))
        for a, b in zip([u, v], student_glimpses)
    )
    assert loss.item() < one_to_one


def test_wvcr_gradient_passes_finite_differences():
    rng = np.random.default_rng(5)
    teacher_glimpses = [ad.constant(rng.normal(size=6)) for _ in range(3)]
    teacher = FakeTrace([0, 1, 2, EOS], teacher_glimpses + [ad.constant(rng.normal(size=6))])
    student = [ad.parameter(rng.normal(size=6) + 0.05 * k) for k in range(4)]

    def f(params):
        strace = FakeTrace([0, 0, 1, 2, EOS], list(params) + [ad.constant(np.ones(6))])
        loss, _ = wvcr_loss(teacher, strace, eos_id=EOS)
        return loss

    assert ad.grad_check(f, student) < 1e-4


def test_wvcr_empty_trace_contributes_zero():
    teacher = FakeTrace([EOS], [ad.constant(np.ones(4))])
    strace = FakeTrace([0, EOS], [ad.constant(np.ones(4))] * 2)
    loss, result = wvcr_loss(teacher, strace, eos_id=EOS)
    assert loss.item() == 0.0
    assert result is None
    assert not loss.requires_grad


def test_gradient_reaches_only_path_glimpses():
    rng = np.random.default_rng(6)
    teacher = FakeTrace([0, EOS], [ad.constant(rng.normal(size=5)), ad.constant(rng.normal(size=5))])
    student = [ad.parameter(rng.normal(size=5)) for _ in range(3)]
    strace = FakeTrace([0, 0, 0], student)  # truncated, no EOS
    loss, result = wvcr_loss(teacher, strace, eos_id=EOS)
    ad.backward(loss)
    on_path = {j for _, j in result.path}
    for j, p in enumerate(student):
        if j in on_path:
            assert np.any(p.grad != 0.0)
        else:
            assert p.grad is None
