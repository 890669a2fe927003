"""Group source subjects into K domains by Pearson correlation of label-free signatures."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ArgumentError
from .features import N_FEATURES, DEFeatureSet


class UndefinedCorrelationError(ArgumentError):
    kind = "undefined_correlation"


@dataclass
class SubjectSignature:
    subject_id: str
    vector: np.ndarray


@dataclass
class DomainPartition:
    groups: list          # K lists of subject ids
    corr: np.ndarray      # S x S, rows/cols follow ``subject_ids``
    subject_ids: list

    @property
    def K(self):
        return len(self.groups)

    def group_of(self):
        return {sid: g for g, members in enumerate(self.groups) for sid in members}


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ArgumentError("pearson needs two 1-d vectors of equal length >= 2")
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = da @ da, db @ db
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    # one square root of the product keeps pearson(a, a) exactly 1
    return float(np.clip((da @ db) / np.sqrt(saa * sbb), -1.0, 1.0))


def signature(features: DEFeatureSet) -> SubjectSignature:
    """Mean DE matrix over all entries, flattened electrode-major, band-minor."""
    if len(features) == 0:
        raise ArgumentError(f"subject {features.subject_id} has no feature entries")
    vec = features.de.mean(axis=0).reshape(N_FEATURES)
    return SubjectSignature(features.subject_id, vec)


def correlation_matrix(signatures):
    s = len(signatures)
    corr = np.eye(s)
    for i in range(s):
        for j in range(i + 1, s):
            corr[i, j] = corr[j, i] = pearson(signatures[i].vector, signatures[j].vector)
    return corr


def near_equal_sizes(n, k):
    """``n`` items into ``k`` groups, larger groups first (14, 4 -> [4, 4, 3, 3])."""
    if k < 1 or k > n:
        raise ArgumentError(f"cannot split {n} subjects into {k} groups")
    q, r = divmod(n, k)
    return [q + 1] * r + [q] * (k - r)


@lru_cache(maxsize=None)
def _packable(clusters, bins):
    """Can cluster sizes be merged into groups of exactly ``bins`` sizes?"""
    if not clusters:
        return all(b == 0 for b in bins)
    first, rest = clusters[0], clusters[1:]
    tried = set()
    for i, cap in enumerate(bins):
        if cap >= first and cap not in tried:
            tried.add(cap)
            nb = list(bins)
            nb[i] -= first
            if _packable(rest, tuple(sorted(nb, reverse=True))):
                return True
    return False


def _feasible(sizes, budgets):
    return _packable(tuple(sorted(sizes, reverse=True)), tuple(sorted(budgets, reverse=True)))


def partition(signatures, K=None, sizes=None) -> DomainPartition:
    """Greedy average-linkage agglomeration under fixed group sizes.

    Clusters start as singletons. At each step the pair of clusters with the
    highest mean cross-correlation is merged, provided the resulting cluster
    sizes can still be completed into the requested ``sizes``. Ties go to the
    lexicographically smallest subject ids, which makes the result independent
    of input order.
    """
    sigs = sorted(signatures, key=lambda s: s.subject_id)
    ids = [s.subject_id for s in sigs]
    if len(set(ids)) != len(ids):
        raise ArgumentError("duplicate subject ids")
    n = len(sigs)
    if sizes is None:
        if K is None:
            raise ArgumentError("give K or sizes")
        sizes = near_equal_sizes(n, K)
    sizes = sorted((int(s) for s in sizes), reverse=True)
    if K is not None and K != len(sizes):
        raise ArgumentError(f"K={K} but {len(sizes)} sizes given")
    if sum(sizes) != n or min(sizes) < 1:
        raise ArgumentError(f"sizes {sizes} infeasible for {n} subjects")
    corr = correlation_matrix(sigs)

    clusters = [(i,) for i in range(n)]
    while len(clusters) > len(sizes):
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                ca, cb = clusters[a], clusters[b]
                aff = float(np.mean(corr[np.ix_(ca, cb)]))
                key = (-aff, ca, cb)
                if best is not None and key >= best[0]:
                    continue
                trial = [len(c) for k, c in enumerate(clusters) if k not in (a, b)]
                if _feasible(trial + [len(ca) + len(cb)], sizes):
                    best = (key, a, b)
        _, a, b = best
        merged = tuple(sorted(clusters[a] + clusters[b]))
        clusters = [c for k, c in enumerate(clusters) if k not in (a, b)] + [merged]
        clusters.sort()

    clusters.sort(key=lambda c: (-len(c), c))
    groups = [[ids[i] for i in c] for c in clusters]
    return DomainPartition(groups, corr, ids)


def group_subjects(feature_sets, K=4, sizes=None):
    """Convenience wrapper: signatures from feature sets, then :func:`partition`."""
    sigs = [signature(fs) for fs in feature_sets]
    k = min(K, len(sigs)) if sizes is None else None
    return partition(sigs, K=k, sizes=sizes)
