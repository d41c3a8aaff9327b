"""Comparison inference methods: plain beam search, the two-criteria union
beam, and two exact oracles (full enumeration and lattice forward-backward).

Beam search keeps the top ``width`` fully specified prefixes and silently
drops everything else, so pruned assignments end with exactly zero mass; the
oracles are the ground truth the approximate methods are measured against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import UsageError
from .models import ChainModel, FiniteHistoryModel


def _top_indices(scores: np.ndarray, width: int) -> np.ndarray:
    """Ascending indices of the top ``width`` scores, earlier index on ties."""
    n = len(scores)
    if width >= n:
        return np.arange(n, dtype=np.int64)
    part = np.argpartition(-scores, width - 1)[:width]
    threshold = scores[part].min()
    above = np.flatnonzero(scores > threshold)
    ties = np.flatnonzero(scores == threshold)[: width - len(above)]
    return np.sort(np.concatenate([above, ties]))


@dataclass
class BeamResult:
    """Surviving hypotheses per position, with backpointers for decoding."""

    observations: Sequence
    width: int
    labels: list[np.ndarray]   # per position, hypothesis labels
    parents: list[np.ndarray]  # per position, index into the previous beam
    scores: list[np.ndarray]   # per position, cumulative log mass

    @property
    def n(self) -> int:
        return len(self.labels)

    def log_partition_estimate(self) -> float:
        """Log mass of the surviving final hypotheses; a lower bound."""
        return float(logsumexp(self.scores[-1]))

    def paths(self) -> np.ndarray:
        """Full label paths of the final beam, shape (n, final width)."""
        n = self.n
        out = np.empty((n, len(self.labels[-1])), dtype=np.int64)
        cur = np.arange(len(self.labels[-1]))
        for i in range(n - 1, -1, -1):
            out[i] = self.labels[i][cur]
            cur = self.parents[i][cur]
        return out

    def decode(self) -> np.ndarray:
        best = int(np.argmax(self.scores[-1]))
        path = np.empty(self.n, dtype=np.int64)
        cur = best
        for i in range(self.n - 1, -1, -1):
            path[i] = self.labels[i][cur]
            cur = self.parents[i][cur]
        return path

    def label_marginals(self, num_labels: int) -> list[np.ndarray]:
        """Posterior over labels per position, restricted to the beam support."""
        final = self.scores[-1]
        weights = np.exp(final - logsumexp(final))
        paths = self.paths()
        out = []
        for i in range(self.n):
            marg = np.zeros(num_labels)
            np.add.at(marg, paths[i], weights)
            out.append(marg)
        return out

    def assignment_log_mass(self, assignment: Sequence[int]) -> float:
        """Score of a full assignment if it survived; -inf if pruned."""
        y = np.asarray(assignment, dtype=np.int64)
        if len(y) != self.n:
            raise UsageError("assignment length does not match the beam")
        hits = np.flatnonzero((self.paths() == y[:, None]).all(axis=0))
        if len(hits) == 0:
            return -np.inf
        return float(self.scores[-1][hits[0]])


def beam_search(model: ChainModel, x: Sequence, width: int) -> BeamResult:
    """Classic top-``width`` pruning over fully specified prefixes."""
    if width < 1:
        raise UsageError("width must be >= 1")
    n = len(x)
    if n == 0:
        raise UsageError("empty observation sequence")
    scores = np.zeros(1)
    hist = np.array([model.start_hist()], dtype=np.int64)
    all_labels, all_parents, all_scores = [], [], []
    for i in range(1, n + 1):
        k = model.num_labels(i)
        w = model.log_weight_matrix(i, hist, x[i - 1])
        cand = (scores[:, None] + w).ravel()  # hypothesis-major
        sel = _top_indices(cand, width)
        parents = sel // k
        labels = sel % k
        scores = cand[sel]
        hist = model.extend_hist(hist[parents], labels, i)
        all_labels.append(labels.astype(np.int64))
        all_parents.append(parents.astype(np.int64))
        all_scores.append(scores)
    return BeamResult(x, width, all_labels, all_parents, all_scores)


@dataclass
class HybridResult:
    """Union beam under two scoring criteria; estimates use the first."""

    observations: Sequence
    width: int
    labels: list[np.ndarray]
    parents: list[np.ndarray]
    scores_a: list[np.ndarray]
    scores_b: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.labels)

    def _as_beam(self) -> BeamResult:
        return BeamResult(self.observations, self.width, self.labels,
                          self.parents, self.scores_a)

    def log_partition_estimate(self) -> float:
        return self._as_beam().log_partition_estimate()

    def paths(self) -> np.ndarray:
        return self._as_beam().paths()

    def decode(self) -> np.ndarray:
        return self._as_beam().decode()

    def label_marginals(self, num_labels: int) -> list[np.ndarray]:
        return self._as_beam().label_marginals(num_labels)

    def prefixes(self, i: int) -> set[tuple[int, ...]]:
        """Set of surviving prefixes after position ``i`` (1-based)."""
        cur = np.arange(len(self.labels[i - 1]))
        rows = []
        for t in range(i - 1, -1, -1):
            rows.append(self.labels[t][cur])
            cur = self.parents[t][cur]
        rows.reverse()
        return {tuple(int(r[c]) for r in rows) for c in range(len(cur))}


def hybrid_union(
    model_a: ChainModel, x: Sequence, width: int, model_b: ChainModel
) -> HybridResult:
    """Expand one shared beam, pruned to the union of each criterion's top-B.

    Both criteria score the same hypotheses cumulatively; at every step each
    keeps its own top ``width`` and the union (at most ``2 * width`` entries)
    is carried forward.
    """
    if width < 1:
        raise UsageError("width must be >= 1")
    n = len(x)
    if n == 0:
        raise UsageError("empty observation sequence")
    for i in range(1, n + 1):
        if model_a.num_labels(i) != model_b.num_labels(i):
            raise UsageError(f"criteria disagree on the labels at position {i}")
    sa = np.zeros(1)
    sb = np.zeros(1)
    hist_a = np.array([model_a.start_hist()], dtype=np.int64)
    hist_b = np.array([model_b.start_hist()], dtype=np.int64)
    all_labels, all_parents, all_sa, all_sb = [], [], [], []
    for i in range(1, n + 1):
        k = model_a.num_labels(i)
        wa = model_a.log_weight_matrix(i, hist_a, x[i - 1])
        wb = model_b.log_weight_matrix(i, hist_b, x[i - 1])
        cand_a = (sa[:, None] + wa).ravel()
        cand_b = (sb[:, None] + wb).ravel()
        sel = np.union1d(_top_indices(cand_a, width), _top_indices(cand_b, width))
        parents = sel // k
        labels = sel % k
        sa, sb = cand_a[sel], cand_b[sel]
        hist_a = model_a.extend_hist(hist_a[parents], labels, i)
        hist_b = model_b.extend_hist(hist_b[parents], labels, i)
        all_labels.append(labels.astype(np.int64))
        all_parents.append(parents.astype(np.int64))
        all_sa.append(sa)
        all_sb.append(sb)
    return HybridResult(x, width, all_labels, all_parents, all_sa, all_sb)


@dataclass
class OracleResult:
    """Exact quantities from full enumeration."""

    sizes: tuple[int, ...]
    log_masses: np.ndarray          # flat, first position slowest
    log_z: float
    marginals: list[np.ndarray]

    def posterior_table(self) -> np.ndarray:
        return np.exp(self.log_masses - self.log_z).reshape(self.sizes)

    def assignment_log_mass(self, assignment: Sequence[int]) -> float:
        idx = 0
        for size, y in zip(self.sizes, assignment):
            idx = idx * size + int(y)
        return float(self.log_masses[idx])


def brute_force_oracle(model: ChainModel, x: Sequence, cap: int = 1_000_000) -> OracleResult:
    """Enumerate every assignment, scoring with full (untruncated) histories."""
    n = len(x)
    if n == 0:
        raise UsageError("empty observation sequence")
    sizes = tuple(model.num_labels(i) for i in range(1, n + 1))
    total = 1
    for s in sizes:
        total *= s
    if total > cap:
        raise UsageError(f"{total} assignments exceed the enumeration cap {cap}")
    log_masses = np.empty(total)
    prefix = [0] * n
    cursor = 0

    def descend(i: int, acc: float) -> None:
        nonlocal cursor
        for y in range(sizes[i - 1]):
            mass = acc + model.log_weight(i, tuple(prefix[: i - 1]), y, x[i - 1])
            if i == n:
                log_masses[cursor] = mass
                cursor += 1
            else:
                prefix[i - 1] = y
                descend(i + 1, mass)

    descend(1, 0.0)
    log_z = float(logsumexp(log_masses))
    tensor = log_masses.reshape(sizes)
    marginals = []
    for i in range(n):
        axes = tuple(a for a in range(n) if a != i)
        marginals.append(np.exp(logsumexp(tensor, axis=axes) - log_z))
    return OracleResult(sizes, log_masses, log_z, marginals)


@dataclass
class ExactResult:
    """Exact partition and marginals from lattice forward-backward."""

    log_z: float
    marginals: list[np.ndarray]


def exact_forward_backward(
    model: FiniteHistoryModel, x: Sequence, cap: int = 1_000_000
) -> ExactResult:
    """Standard forward-backward over full (order-1)-suffix states.

    Exact for any model of the declared order; requires the finite-history
    protocol since states are history ids.
    """
    if not hasattr(model, "hist_count"):
        raise UsageError("exact_forward_backward needs a finite-history model")
    n = len(x)
    if n == 0:
        raise UsageError("empty observation sequence")
    k = model.num_labels(1)
    if k ** (model.order - 1) > cap:
        raise UsageError(
            f"{k ** (model.order - 1)} states exceed the state cap {cap}"
        )
    s = model.hist_count
    ids = np.arange(s, dtype=np.int64)
    push = model.extend_hist(
        np.repeat(ids, k), np.tile(np.arange(k, dtype=np.int64), s), 1
    ).reshape(s, k)

    alpha = np.full(s, -np.inf)
    alpha[model.start_hist()] = 0.0
    alphas = []
    for i in range(1, n + 1):
        w = model.log_weight_matrix(i, ids, x[i - 1])
        alphas.append(alpha)
        contrib = alpha[:, None] + w
        peak = np.full(s, -np.inf)
        np.maximum.at(peak, push.ravel(), contrib.ravel())
        safe = np.where(np.isfinite(peak), peak, 0.0)
        acc = np.zeros(s)
        np.add.at(acc, push.ravel(), np.exp(contrib.ravel() - safe[push.ravel()]))
        alpha = np.full(s, -np.inf)
        nz = acc > 0.0
        alpha[nz] = safe[nz] + np.log(acc[nz])
    log_z = float(logsumexp(alpha))

    beta = np.zeros(s)
    marginals: list[np.ndarray] = []
    for i in range(n, 0, -1):
        w = model.log_weight_matrix(i, ids, x[i - 1])
        contrib = w + beta[push]
        with np.errstate(invalid="ignore"):
            m = logsumexp(alphas[i - 1][:, None] + contrib, axis=0)
        marginals.append(np.exp(m - log_z))
        beta = logsumexp(contrib, axis=1)
    marginals.reverse()
    return ExactResult(log_z, marginals)
