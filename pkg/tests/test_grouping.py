import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msdatf.errors import ArgumentError
from msdatf.features import DEFeatureSet
from msdatf.grouping import (
    SubjectSignature,
    UndefinedCorrelationError,
    correlation_matrix,
    group_subjects,
    near_equal_sizes,
    partition,
    pearson,
    signature,
)


def planted(sizes, seed=0, noise=0.1):
    """Signatures scattered around mutually orthogonal, zero-mean centres."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((len(sizes), 310))
    raw -= raw.mean(axis=1, keepdims=True)
    q, _ = np.linalg.qr(raw.T)
    centres = q.T * np.sqrt(310)
    sigs, truth, k = [], [], 0
    for c, n in enumerate(sizes):
        members = []
        for _ in range(n):
            sid = f"s{k:02d}"
            sigs.append(SubjectSignature(sid, centres[c] + noise * rng.standard_normal(310)))
            members.append(sid)
            k += 1
        truth.append(members)
    # shuffle subject-id assignment relative to cluster membership
    perm = rng.permutation(len(sigs))
    rename = {f"s{i:02d}": f"s{perm[i]:02d}" for i in range(len(sigs))}
    sigs = [SubjectSignature(rename[s.subject_id], s.vector) for s in sigs]
    truth = [sorted(rename[m] for m in g) for g in truth]
    return sigs, truth


def canon(groups):
    return sorted(sorted(g) for g in groups)


# ------------------------------------------------------------------ pearson


def test_pearson_examples():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    assert pearson(a, a) == 1.0
    assert pearson(a, -2 * a + 7) == -1.0
    assert pearson(a, [1.0, 3.0, 2.0, 4.0]) == pytest.approx(0.8, abs=1e-15)


def test_pearson_constant_vector():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2**31 - 1))
def test_pearson_affine_invariance(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 20))
    assert abs(pearson(alpha * a + beta, b) - pearson(a, b)) < 1e-12


# ---------------------------------------------------------------- signature


def fset(de, sid="s01"):
    n = len(de)
    return DEFeatureSet(sid, ["t"] * n, np.arange(n), [0] * n, de)


def test_signature_examples():
    v = np.random.default_rng(0).standard_normal((1, 62, 5))
    assert np.array_equal(signature(fset(v)).vector, v.reshape(310))
    assert np.allclose(signature(fset(np.concatenate([v, -v]))).vector, 0)
    # electrode-major, band-minor
    assert signature(fset(v)).vector[7 * 5 + 2] == v[0, 7, 2]


def test_signature_order_invariant():
    de = np.random.default_rng(1).standard_normal((12, 62, 5))
    a = signature(fset(de)).vector
    b = signature(fset(de[::-1])).vector
    assert np.allclose(a, b, atol=1e-14)


def test_signature_empty():
    with pytest.raises(ArgumentError):
        signature(DEFeatureSet.empty("s01"))


def test_correlation_matrix_properties():
    sigs, _ = planted([3, 3])
    c = correlation_matrix(sigs)
    assert np.array_equal(c, c.T) and np.all(np.diag(c) == 1.0)
    assert np.all(np.abs(c) <= 1.0)


# ---------------------------------------------------------------- partition


def test_near_equal_sizes():
    assert near_equal_sizes(14, 4) == [4, 4, 3, 3]
    assert near_equal_sizes(4, 2) == [2, 2]
    with pytest.raises(ArgumentError):
        near_equal_sizes(2, 3)


def test_fourteen_subjects():
    sigs = [SubjectSignature(f"s{i:02d}", v)
            for i, v in enumerate(np.random.default_rng(0).standard_normal((14, 310)))]
    part = partition(sigs, K=4, sizes=[4, 4, 3, 3])
    assert sorted(len(g) for g in part.groups) == [3, 3, 4, 4]
    assert sorted(sum(part.groups, [])) == sorted(s.subject_id for s in sigs)


@pytest.mark.parametrize("seed", range(5))
def test_planted_clusters_recovered(seed):
    sigs, truth = planted([4, 4, 3, 3], seed=seed)
    c = correlation_matrix(sorted(sigs, key=lambda s: s.subject_id))
    part = partition(sigs, sizes=[4, 4, 3, 3])
    assert canon(part.groups) == canon(truth)
    # fixture really is planted: within > 0.9, across < 0.1
    gid = part.group_of()
    ids = part.subject_ids
    same = np.array([[gid[a] == gid[b] for b in ids] for a in ids])
    off = ~np.eye(len(ids), dtype=bool)
    assert c[same & off].min() > 0.9 and np.abs(c[~same]).max() < 0.1


@pytest.mark.parametrize("seed", range(5))
def test_partition_invariant_to_input_order(seed):
    sigs, _ = planted([4, 4, 3, 3], seed=seed, noise=2.0)
    base = partition(sigs, sizes=[4, 4, 3, 3]).groups
    rng = np.random.default_rng(seed)
    for _ in range(3):
        shuffled = [sigs[i] for i in rng.permutation(len(sigs))]
        assert partition(shuffled, sizes=[4, 4, 3, 3]).groups == base


def test_identical_signatures_tie_break_by_id():
    v = np.random.default_rng(0).standard_normal(310)
    sigs = [SubjectSignature(f"s{i:02d}", v.copy()) for i in (5, 2, 0, 3, 1, 4)]
    part = partition(sigs, sizes=[3, 3])
    assert part.groups == partition(list(reversed(sigs)), sizes=[3, 3]).groups
    assert part.groups == [["s00", "s01", "s02"], ["s03", "s04", "s05"]]


def test_infeasible_sizes():
    sigs, _ = planted([2, 2])
    with pytest.raises(ArgumentError):
        partition(sigs, sizes=[3, 3])
    with pytest.raises(ArgumentError):
        partition(sigs, K=3, sizes=[2, 2])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1), st.data())
def test_partition_is_exact_cover(n, seed, data):
    k = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    sigs = [SubjectSignature(f"s{i:02d}", rng.standard_normal(20)) for i in range(n)]
    part = partition(sigs, K=k)
    members = sum(part.groups, [])
    assert sorted(members) == sorted(s.subject_id for s in sigs)
    assert sorted((len(g) for g in part.groups), reverse=True) == near_equal_sizes(n, k)


def test_group_subjects_caps_k():
    rng = np.random.default_rng(0)
    sets = [fset(rng.standard_normal((3, 62, 5)), sid=f"s{i}") for i in range(2)]
    part = group_subjects(sets, K=4)
    assert part.K == 2 and all(len(g) == 1 for g in part.groups)
