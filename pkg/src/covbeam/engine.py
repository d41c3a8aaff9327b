"""Width-bounded chain inference whose state sets always cover the space.

Each position is processed in three steps. Expand: every retained context is
extended by every label, giving a candidate pool that is born sorted with a
valid adjacency-lcs array. Select: the ``width`` candidates with the highest
forward score are marked active. Merge: a single backwards sweep with a stack
turns active candidates into retained contexts and folds every inactive
candidate into its least ancestor among them; a fresh root is always retained,
so the level still partitions the whole assignment space and no prefix ever
loses its mass. A backward pass then yields the normalizer, edge posteriors,
and posterior decodes of the induced distribution.

Levels are stored as arrays (scores, suffix lengths, history ids, parent
links); suffixes are reconstructed on demand by walking parents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import contexts as ctx
from .errors import InferenceError, UsageError
from .models import ChainModel

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

_INF32 = np.int32(2 ** 30)


@njit(cache=True)
def _merge_kernel(lcs, lens, active):
    """Backwards stack sweep assigning every candidate to a retained context.

    Returns (target, kept, out_lcs): ``target[j]`` is the output slot that
    absorbs candidate ``j``; ``kept[m]`` is the candidate a retained slot was
    promoted from (-1 for the root, which occupies the last slot); ``out_lcs``
    is the adjacency-lcs array of the output. Output slots are in sorted
    order. The sweep runs from the lexicographically greatest candidate down,
    maintaining the running min of lcs values; a stack entry whose suffix is
    longer than the running min cannot contain the current candidate and is
    popped.
    """
    n = lcs.shape[0]
    n_active = 0
    for j in range(n):
        if active[j]:
            n_active += 1
    m = n_active + 1
    target = np.empty(n, np.int32)
    kept = np.empty(m, np.int32)
    out_lcs = np.empty(m - 1, np.int32)
    stack_len = np.empty(m, np.int32)
    stack_slot = np.empty(m, np.int32)
    # root sentinel: empty suffix, final (= greatest) slot
    top = 0
    stack_len[0] = 0
    stack_slot[0] = m - 1
    kept[m - 1] = -1
    slot = m - 2
    run = _INF32
    for j in range(n - 1, -1, -1):
        if lcs[j] < run:
            run = lcs[j]
        while run < stack_len[top]:
            top -= 1
        if active[j]:
            kept[slot] = j
            out_lcs[slot] = run
            target[j] = slot
            top += 1
            stack_len[top] = lens[j]
            stack_slot[top] = slot
            slot -= 1
            run = _INF32
        else:
            target[j] = stack_slot[top]
    return target, kept, out_lcs


def _segment_logsumexp(values: np.ndarray, segments: np.ndarray, n: int) -> np.ndarray:
    """Per-segment logsumexp; empty segments come out as -inf."""
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, segments, values)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    acc = np.zeros(n)
    np.add.at(acc, segments, np.exp(values - safe[segments]))
    out = np.full(n, -np.inf)
    nz = acc > 0.0
    out[nz] = safe[nz] + np.log(acc[nz])
    return out


@dataclass
class ScoredLevel:
    """Retained contexts at one position, sorted, with scores attached.

    ``parent_candidate[m]`` indexes the candidate pool this level was merged
    from (-1 for the root entry, which is always last); together with the
    previous level it reconstructs suffixes. ``log_forward`` is rescaled so
    its maximum is 0; ``shift`` records the subtracted constant.
    """

    position: int
    prev: Optional["ScoredLevel"]
    num_labels: int                      # labels available at this position
    parent_candidate: np.ndarray         # int32 (M,)
    suffix_len: np.ndarray               # int32 (M,)
    lcs: np.ndarray                      # int32 (M-1,)
    hist: np.ndarray                     # int64 (M,) model history ids
    log_forward: np.ndarray              # float64 (M,), max-shifted
    shift: float
    log_backward: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.parent_candidate)

    def suffix(self, m: int) -> tuple[int, ...]:
        """Concrete suffix of entry ``m``, reconstructed via parent links."""
        out = []
        lvl: Optional[ScoredLevel] = self
        while lvl is not None and lvl.suffix_len[m] > 0:
            pc = int(lvl.parent_candidate[m])
            m_prev = len(lvl.prev)
            out.append(pc // m_prev)
            m = pc % m_prev
            lvl = lvl.prev
        return tuple(reversed(out))

    def context(self, m: int) -> ctx.Context:
        return ctx.Context(self.position, self.suffix(m))

    def to_context_level(self) -> ctx.Level:
        entries = [self.context(m) for m in range(len(self))]
        return ctx.Level(self.position, entries, [int(v) for v in self.lcs])


@dataclass
class Expansion:
    """One position's candidate pool: every retained context times every label.

    Candidates are ordered label-major (all extensions by label 0 first),
    which keeps them sorted. ``lcs[j]`` links candidate ``j`` to ``j+1``; the
    final entry is 0 and doubles as the link to the root that the merge will
    retain. ``active`` and ``target`` are filled by :func:`select_active` and
    :func:`merge_level`.
    """

    position: int
    prev: ScoredLevel
    num_labels: int
    log_weight: np.ndarray               # float64 (E,)
    log_forward: np.ndarray              # float64 (E,)
    lcs: np.ndarray                      # int32 (E,)
    active: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.log_forward)

    def parent(self, j: int) -> int:
        return j % len(self.prev)

    def label(self, j: int) -> int:
        return j // len(self.prev)

    def suffix(self, j: int) -> tuple[int, ...]:
        return self.prev.suffix(self.parent(j)) + (self.label(j),)

    def suffixes(self) -> list[tuple[int, ...]]:
        return [self.suffix(j) for j in range(len(self))]


def start_level(model: ChainModel) -> ScoredLevel:
    """Virtual level before position 1: a single root with unit mass."""
    return ScoredLevel(
        position=0,
        prev=None,
        num_labels=0,
        parent_candidate=np.array([-1], dtype=np.int32),
        suffix_len=np.array([0], dtype=np.int32),
        lcs=np.zeros(0, dtype=np.int32),
        hist=np.array([model.start_hist()], dtype=np.int64),
        log_forward=np.zeros(1),
        shift=0.0,
    )


def expand_level(prev: ScoredLevel, model: ChainModel, x) -> Expansion:
    """Extend every retained context by every label at the next position.

    The pool inherits sortedness from the previous level: within one label
    block the order is the previous order and the lcs values grow by one;
    block boundaries (and the final entry) get lcs 0 since the trailing
    labels differ there.
    """
    position = prev.position + 1
    k = model.num_labels(position)
    if k < 1:
        raise UsageError(f"no labels at position {position}")
    m = len(prev)
    w = model.log_weight_matrix(position, prev.hist, x)
    if not np.all(np.isfinite(w)):
        raise InferenceError(f"non-finite log weight at position {position}")
    log_fwd = (prev.log_forward[None, :] + w.T).ravel()
    block = np.append(prev.lcs + 1, np.int32(0)).astype(np.int32)
    return Expansion(
        position=position,
        prev=prev,
        num_labels=k,
        log_weight=np.ascontiguousarray(w.T).ravel(),
        log_forward=log_fwd,
        lcs=np.tile(block, k),
    )


def select_active(expansion: Expansion, width: int) -> None:
    """Mark the ``width`` candidates with the highest forward score.

    Boundary ties are broken toward earlier (lexicographically smaller)
    candidates, which makes the pass deterministic.
    """
    if width < 1:
        raise UsageError("width must be >= 1")
    _select(expansion, width)


def _select(expansion: Expansion, width: int) -> None:
    n = len(expansion)
    active = np.zeros(n, dtype=bool)
    if width >= n:
        active[:] = True
    elif width > 0:
        fwd = expansion.log_forward
        part = np.argpartition(-fwd, width - 1)[:width]
        threshold = fwd[part].min()
        above = fwd > threshold
        active[above] = True
        remaining = width - int(above.sum())
        if remaining > 0:
            ties = np.flatnonzero(fwd == threshold)
            active[ties[:remaining]] = True
    expansion.active = active


def merge_level(expansion: Expansion, model: ChainModel) -> ScoredLevel:
    """Fold every candidate into the retained set and aggregate forward mass.

    Active candidates are promoted in place; every inactive candidate is
    absorbed by its least ancestor (the retained context with the longest
    suffix still containing it), with the always-retained root as the
    fallback. Total forward mass is conserved exactly up to float round-off.
    """
    if expansion.active is None:
        raise UsageError("select_active must run before merge_level")
    prev = expansion.prev
    m_prev = len(prev)
    e = len(expansion)
    parents = np.arange(e, dtype=np.int64) % m_prev
    lens = prev.suffix_len[parents].astype(np.int32) + 1
    target, kept, out_lcs = _merge_kernel(
        expansion.lcs, lens, expansion.active.view(np.uint8)
    )
    expansion.target = target
    m = len(kept)
    log_fwd = _segment_logsumexp(expansion.log_forward, target, m)
    shift = float(log_fwd.max())
    log_fwd = log_fwd - shift

    suffix_len = np.zeros(m, dtype=np.int32)
    hist = np.empty(m, dtype=np.int64)
    promoted = kept[:-1]
    if len(promoted):
        suffix_len[:-1] = lens[promoted]
        hist[:-1] = model.extend_hist(
            prev.hist[promoted % m_prev], promoted // m_prev, expansion.position
        )
    hist[-1] = model.start_hist()
    return ScoredLevel(
        position=expansion.position,
        prev=prev,
        num_labels=expansion.num_labels,
        parent_candidate=kept,
        suffix_len=suffix_len,
        lcs=out_lcs,
        hist=hist,
        log_forward=log_fwd,
        shift=shift,
    )


@dataclass
class Trellis:
    """All levels of one inference run plus normalization bookkeeping."""

    observations: Sequence
    width: int
    root_in_budget: bool
    start: ScoredLevel
    levels: list[ScoredLevel]
    edge_target: list[np.ndarray]
    log_z: Optional[float] = None
    _cumshift: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.levels)

    def level(self, i: int) -> ScoredLevel:
        """Level at 1-based position ``i`` (0 gives the virtual start)."""
        return self.start if i == 0 else self.levels[i - 1]

    def cumulative_shift(self, i: int) -> float:
        """Sum of forward rescaling constants through position ``i``."""
        if self._cumshift is None:
            self._cumshift = np.concatenate(
                [[0.0], np.cumsum([lvl.shift for lvl in self.levels])]
            )
        return float(self._cumshift[i])

    def context_level(self, i: int) -> ctx.Level:
        return self.level(i).to_context_level()


def forward_pass(
    model: ChainModel,
    x: Sequence,
    width: int,
    root_in_budget: bool = False,
) -> Trellis:
    """Run expand / select / merge over the whole chain.

    ``width`` counts retained concrete contexts; the root is retained on top
    of it unless ``root_in_budget`` is set, in which case one slot of the
    budget is spent on the root.
    """
    n = len(x)
    if n == 0:
        raise UsageError("empty observation sequence")
    if width < 1:
        raise UsageError("width must be >= 1")
    concrete = width - 1 if root_in_budget else width
    prev = start_level(model)
    levels: list[ScoredLevel] = []
    edge_target: list[np.ndarray] = []
    for i in range(n):
        expansion = expand_level(prev, model, x[i])
        _select(expansion, concrete)
        prev = merge_level(expansion, model)
        levels.append(prev)
        edge_target.append(expansion.target)
    return Trellis(
        observations=x,
        width=width,
        root_in_budget=root_in_budget,
        start=levels[0].prev,
        levels=levels,
        edge_target=edge_target,
    )


def backward_pass(trellis: Trellis, model: ChainModel) -> None:
    """Propagate backward scores and cache the log normalizer.

    Every candidate inherits the backward score of the context that absorbed
    it; every retained context sums, over the next position's labels, its
    expansion weight times the child's backward score. Backward scores carry
    no rescaling (log space is stable enough on its own).
    """
    n = trellis.n
    last = trellis.levels[-1]
    last.log_backward = np.zeros(len(last))
    for i in range(n - 1, 0, -1):
        lvl = trellis.levels[i - 1]
        nxt = trellis.levels[i]
        k = nxt.num_labels
        w = model.log_weight_matrix(i + 1, lvl.hist, trellis.observations[i])
        child_bwd = nxt.log_backward[trellis.edge_target[i]].reshape(k, len(lvl))
        lvl.log_backward = logsumexp(child_bwd + w.T, axis=0)
    trellis.log_z = float(
        logsumexp(last.log_forward) + trellis.cumulative_shift(n)
    )


def log_partition(trellis: Trellis) -> float:
    """Log of the induced model's total unnormalized mass."""
    if trellis.log_z is None:
        raise UsageError("log_partition requires forward and backward passes")
    return trellis.log_z


def level_log_mass(trellis: Trellis, i: int) -> float:
    """Total forward-times-backward mass summed at position ``i``.

    Equal to the log partition at every position; exposed for the
    self-consistency checks.
    """
    lvl = trellis.level(i)
    if lvl.log_backward is None:
        raise UsageError("backward_pass has not run")
    return float(
        logsumexp(lvl.log_forward + lvl.log_backward) + trellis.cumulative_shift(i)
    )


def _edge_scores(trellis: Trellis, model: ChainModel, i: int):
    """Forward, weight, and backward arrays for the candidates at position i."""
    prev = trellis.level(i - 1)
    lvl = trellis.levels[i - 1]
    k = lvl.num_labels
    w = model.log_weight_matrix(i, prev.hist, trellis.observations[i - 1])
    e_fwd = (prev.log_forward[None, :] + w.T).ravel()
    e_bwd = lvl.log_backward[trellis.edge_target[i - 1]]
    return e_fwd, np.ascontiguousarray(w.T).ravel(), e_bwd, k, len(prev)


def edge_posteriors(
    trellis: Trellis,
    model: ChainModel,
    visitor: Callable[[ctx.Context, int, int, float], None],
) -> None:
    """Call ``visitor(parent_context, label, position, mass)`` per candidate.

    Masses at one position sum to 1: a candidate's forward times backward is
    its total posterior mass under the induced model. Intended for inspection
    and small-scale tests; bulk consumers should use
    :func:`label_marginals`.
    """
    if trellis.log_z is None:
        raise UsageError("edge_posteriors requires forward and backward passes")
    for i in range(1, trellis.n + 1):
        e_fwd, _, e_bwd, k, m_prev = _edge_scores(trellis, model, i)
        post = np.exp(
            e_fwd + e_bwd + trellis.cumulative_shift(i - 1) - trellis.log_z
        )
        parents = [trellis.level(i - 1).context(m) for m in range(m_prev)]
        for j in range(k * m_prev):
            visitor(parents[j % m_prev], j // m_prev, i, float(post[j]))


def label_marginals(trellis: Trellis, model: ChainModel) -> list[np.ndarray]:
    """Posterior label distribution at each position, one array per position."""
    if trellis.log_z is None:
        raise UsageError("label_marginals requires forward and backward passes")
    out = []
    for i in range(1, trellis.n + 1):
        e_fwd, _, e_bwd, k, m_prev = _edge_scores(trellis, model, i)
        post = np.exp(
            e_fwd + e_bwd + trellis.cumulative_shift(i - 1) - trellis.log_z
        )
        out.append(post.reshape(k, m_prev).sum(axis=1))
    return out


def decode(trellis: Trellis, model: ChainModel) -> np.ndarray:
    """Position-wise posterior decode; ties go to the smallest label."""
    return np.array(
        [int(np.argmax(m)) for m in label_marginals(trellis, model)],
        dtype=np.int64,
    )


def path_owners(trellis: Trellis, assignment: Sequence[int]) -> list[int]:
    """Owner entry index at every level for one full assignment.

    Follows the merge structure: the owner at position i is the entry that
    absorbed the extension of the previous owner by ``assignment[i-1]``. This
    coincides with the longest-suffix-match owner and costs O(1) per level.
    """
    owners = []
    m = 0
    for i in range(1, trellis.n + 1):
        m_prev = len(trellis.level(i - 1))
        y = int(assignment[i - 1])
        if not (0 <= y < trellis.levels[i - 1].num_labels):
            raise UsageError(f"label {y} out of range at position {i}")
        m = int(trellis.edge_target[i - 1][y * m_prev + m])
        owners.append(m)
    return owners


def induced_log_mass_batch(
    trellis: Trellis, model: ChainModel, assignments: np.ndarray
) -> np.ndarray:
    """Unnormalized induced-model log mass of full assignments, batched.

    ``assignments`` has shape (batch, n). The induced model scores each step
    with the conditioning information of the owning context, so every
    assignment keeps strictly positive mass whenever weights are positive.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    if assignments.ndim != 2 or assignments.shape[1] != trellis.n:
        raise UsageError("assignments must have shape (batch, n)")
    batch = assignments.shape[0]
    owner = np.zeros(batch, dtype=np.int64)
    total = np.zeros(batch)
    for i in range(1, trellis.n + 1):
        prev = trellis.level(i - 1)
        y = assignments[:, i - 1]
        if y.min(initial=0) < 0 or y.max(initial=0) >= trellis.levels[i - 1].num_labels:
            raise UsageError(f"label out of range at position {i}")
        w = model.log_weight_matrix(i, prev.hist, trellis.observations[i - 1])
        total += w[owner, y]
        owner = trellis.edge_target[i - 1][y * len(prev) + owner]
    return total


def induced_log_mass(trellis: Trellis, model: ChainModel, assignment) -> float:
    return float(
        induced_log_mass_batch(trellis, model, np.asarray([assignment]))[0]
    )


TRELLIS_DUMP_FORMAT = "covbeam-trellis"
TRELLIS_DUMP_VERSION = 1


def dump_trellis(trellis: Trellis, model: ChainModel, fp) -> None:
    """Write one JSON record per retained context and per candidate.

    Line-delimited; the first line is a header with format and version.
    Suffixes are reconstructed, so this is meant for small trellises.
    """
    header = {
        "format": TRELLIS_DUMP_FORMAT,
        "version": TRELLIS_DUMP_VERSION,
        "n": trellis.n,
        "width": trellis.width,
        "log_z": trellis.log_z,
    }
    fp.write(json.dumps(header) + "\n")
    for i in range(1, trellis.n + 1):
        lvl = trellis.levels[i - 1]
        bwd = lvl.log_backward
        for m in range(len(lvl)):
            rec = {
                "kind": "context",
                "position": i,
                "suffix": list(lvl.suffix(m)),
                "log_forward": float(lvl.log_forward[m]),
                "log_backward": None if bwd is None else float(bwd[m]),
                "shift": trellis.cumulative_shift(i),
            }
            fp.write(json.dumps(rec) + "\n")
        if bwd is None:
            continue
        e_fwd, e_w, e_bwd, k, m_prev = _edge_scores(trellis, model, i)
        target = trellis.edge_target[i - 1]
        promoted = lvl.parent_candidate[target] == np.arange(len(target))
        for j in range(k * m_prev):
            rec = {
                "kind": "edge",
                "position": i,
                "parent": int(j % m_prev),
                "label": int(j // m_prev),
                "log_weight": float(e_w[j]),
                "log_forward": float(e_fwd[j]),
                "log_backward": float(e_bwd[j]),
                "active": bool(promoted[j]),
                "target": int(target[j]),
            }
            fp.write(json.dumps(rec) + "\n")
