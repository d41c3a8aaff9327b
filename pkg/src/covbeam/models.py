"""Position-wise scoring models consumed by the inference engine.

A chain model assigns a log weight to extending a context by one label at a
given position, conditioned on at most the last ``order - 1`` labels of the
context's suffix and on the observation at that position. Two concrete
families are provided: smoothed n-gram language models and a noisy-channel
model (language model times an emission table) for substitution-cipher
decipherment.

For speed, models also expose a vectorized protocol in which conditioning
histories are integer ids: the engine carries one id per retained context and
asks for a whole ``(contexts, labels)`` weight matrix per position.
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UsageError

#: Character classes kept by the default text normalization.
DEFAULT_KEEP = "abcdefghijklmnopqrstuvwxyz "

#: Refuse to build weight tables larger than this many histories.
MAX_TABLE_HISTORIES = 5_000_000


def normalize_text(text: str, lowercase: bool = True, keep: str = DEFAULT_KEEP) -> str:
    """Lowercase, map whitespace runs to single spaces, drop everything else.

    ``keep`` is the whitelist of characters retained after the whitespace
    mapping; it should contain the space if runs of dropped characters are
    not to glue words together.
    """
    if lowercase:
        text = text.lower()
    out = []
    kept = set(keep)
    last_space = True  # also strips leading spaces
    for ch in text:
        if ch.isspace():
            ch = " "
        if ch not in kept:
            continue
        if ch == " ":
            if last_space:
                continue
            last_space = True
        else:
            last_space = False
        out.append(ch)
    while out and out[-1] == " ":
        out.pop()
    return "".join(out)


def load_corpus(path, lowercase: bool = True, keep: str = DEFAULT_KEEP) -> str:
    with open(path, "r", encoding="utf-8") as fp:
        return normalize_text(fp.read(), lowercase=lowercase, keep=keep)


class HistoryCoder:
    """Bijection between bounded label histories and dense integer ids.

    Histories are tuples of the last ``<= order - 1`` labels over a single
    alphabet of size ``num_labels``. Ids enumerate histories by length, the
    empty history first; within a length block the history is read as a
    base-``num_labels`` number, oldest label most significant.
    """

    def __init__(self, num_labels: int, order: int):
        if num_labels < 1 or order < 1:
            raise UsageError("need num_labels >= 1 and order >= 1")
        self.num_labels = num_labels
        self.order = order
        self.offsets = [0]
        for t in range(order - 1):
            self.offsets.append(self.offsets[-1] + num_labels ** t)
        self.count = self.offsets[-1] + num_labels ** (order - 1)
        if self.count > MAX_TABLE_HISTORIES:
            raise UsageError(
                f"history table with {self.count} entries exceeds the "
                f"{MAX_TABLE_HISTORIES} cap; lower the order or alphabet size"
            )
        self._push: Optional[np.ndarray] = None

    def encode(self, history: Sequence[int]) -> int:
        h = tuple(history)[max(0, len(history) - (self.order - 1)):]
        idx = 0
        for lab in h:
            idx = idx * self.num_labels + lab
        return self.offsets[len(h)] + idx

    def decode(self, hist_id: int) -> tuple[int, ...]:
        for t in range(self.order - 1, -1, -1):
            if hist_id >= self.offsets[t]:
                idx = hist_id - self.offsets[t]
                out = []
                for _ in range(t):
                    out.append(idx % self.num_labels)
                    idx //= self.num_labels
                return tuple(reversed(out))
        raise UsageError(f"bad history id {hist_id}")

    def push_table(self) -> np.ndarray:
        """``push_table[h, y]`` = id of history ``h`` extended by label ``y``."""
        if self._push is None:
            k, n = self.num_labels, self.count
            table = np.empty((n, k), dtype=np.int64)
            for h in range(n):
                hist = self.decode(h)
                for y in range(k):
                    table[h, y] = self.encode(hist + (y,))
            self._push = table
        return self._push

    def all_histories(self) -> list[tuple[int, ...]]:
        return [self.decode(h) for h in range(self.count)]


class ChainModel(abc.ABC):
    """Scoring interface: log weights for extending contexts along the chain.

    ``order`` bounds the usable history: the weight at any position may
    depend only on the last ``order - 1`` labels of the context suffix (plus
    the label being added and the observation). Weights must be finite.
    """

    order: int

    @abc.abstractmethod
    def num_labels(self, position: int) -> int:
        ...

    @abc.abstractmethod
    def log_weight(self, position: int, suffix: Sequence[int], y: int, x) -> float:
        """Log weight of label ``y`` at ``position`` after ``suffix``, given x."""

    # Vectorized protocol -------------------------------------------------

    @abc.abstractmethod
    def start_hist(self) -> int:
        """History id of the empty (root) conditioning context."""

    @abc.abstractmethod
    def extend_hist(self, hist: np.ndarray, label: np.ndarray, position: int) -> np.ndarray:
        """Elementwise history extension by one label."""

    @abc.abstractmethod
    def log_weight_matrix(self, position: int, hist: np.ndarray, x) -> np.ndarray:
        """Matrix of log weights, shape ``(len(hist), num_labels(position))``."""


class FiniteHistoryModel(ChainModel):
    """Base for models over one alphabet whose histories fit a small id space."""

    def __init__(self, num_labels: int, order: int):
        self.order = order
        self._k = num_labels
        self.coder = HistoryCoder(num_labels, order)

    def num_labels(self, position: int) -> int:
        return self._k

    @property
    def hist_count(self) -> int:
        return self.coder.count

    def start_hist(self) -> int:
        return 0

    def extend_hist(self, hist, label, position):
        return self.coder.push_table()[hist, label]

    def log_weight(self, position, suffix, y, x) -> float:
        h = self.coder.encode(suffix)
        row = self.log_weight_matrix(position, np.array([h], dtype=np.int64), x)
        return float(row[0, y])


class TabularChainModel(FiniteHistoryModel):
    """Explicit per-position log-weight tables, mainly for tests and oracles.

    ``tables[i-1][h, y]`` is the log weight of label ``y`` at position ``i``
    given history id ``h``; with ``stationary=True`` a single table is shared
    by every position. Observations are ignored (bake them into the tables).
    """

    def __init__(self, tables, num_labels: int, order: int, n: Optional[int] = None):
        super().__init__(num_labels, order)
        if isinstance(tables, np.ndarray):
            if n is None:
                raise UsageError("stationary table needs an explicit length n")
            self._tables = None
            self._shared = np.asarray(tables, dtype=float)
            self.n = n
        else:
            self._tables = [np.asarray(t, dtype=float) for t in tables]
            self._shared = None
            self.n = len(self._tables)
        for t in [self._shared] if self._shared is not None else self._tables:
            if t.shape != (self.coder.count, num_labels):
                raise UsageError(
                    f"table shape {t.shape} does not match "
                    f"({self.coder.count}, {num_labels})"
                )

    @classmethod
    def random(
        cls,
        n: int,
        num_labels: int,
        order: int,
        rng: np.random.Generator,
        low: float = 0.2,
        high: float = 3.0,
        stationary: bool = False,
    ) -> "TabularChainModel":
        """Positive random weights, log-stored; every history row is filled."""
        coder = HistoryCoder(num_labels, order)
        shape = (coder.count, num_labels)
        if stationary:
            return cls(np.log(rng.uniform(low, high, shape)), num_labels, order, n=n)
        tables = [np.log(rng.uniform(low, high, shape)) for _ in range(n)]
        return cls(tables, num_labels, order)

    def table(self, position: int) -> np.ndarray:
        return self._shared if self._shared is not None else self._tables[position - 1]

    def log_weight(self, position, suffix, y, x) -> float:
        return float(self.table(position)[self.coder.encode(suffix), y])

    def log_weight_matrix(self, position, hist, x) -> np.ndarray:
        return self.table(position)[hist]


# --------------------------------------------------------------------------
# n-gram language models
# --------------------------------------------------------------------------

SMOOTHING_MODES = ("absolute", "laplace")

LM_FORMAT = "covbeam-ngram-lm"
LM_VERSION = 1


class NgramLM:
    """Order-``k`` n-gram model over symbols with two smoothing modes.

    ``absolute``: interpolated absolute discounting; each history level
    subtracts ``discount`` from every seen count and gives the freed mass to
    the next-shorter history, bottoming out in a Laplace-smoothed unigram.
    ``laplace``: additive smoothing at the queried history length directly.
    Probabilities are strictly positive in both modes, and histories of any
    length up to ``order - 1`` are first-class queries.
    """

    def __init__(
        self,
        alphabet: Sequence[str],
        order: int,
        counts: dict[tuple[int, ...], np.ndarray],
        mode: str = "absolute",
        discount: float = 0.25,
        epsilon: float = 0.01,
    ):
        if order < 1:
            raise UsageError("order must be >= 1")
        if mode not in SMOOTHING_MODES:
            raise UsageError(f"unknown smoothing mode {mode!r}")
        if not (0.0 < discount < 1.0):
            raise UsageError("discount must lie in (0, 1)")
        if epsilon <= 0.0:
            raise UsageError("epsilon must be positive")
        self.alphabet = tuple(alphabet)
        self.order = order
        self.mode = mode
        self.discount = discount
        self.epsilon = epsilon
        self.counts = {h: np.asarray(c, dtype=float) for h, c in counts.items()}
        self._totals = {h: float(c.sum()) for h, c in self.counts.items()}
        self._distinct = {h: int((c > 0).sum()) for h, c in self.counts.items()}
        self._index = {s: i for i, s in enumerate(self.alphabet)}
        self._log_table: Optional[np.ndarray] = None

    # -- fitting -----------------------------------------------------------

    @classmethod
    def fit(
        cls,
        corpus: Sequence[str],
        order: int,
        mode: str = "absolute",
        discount: float = 0.25,
        epsilon: float = 0.01,
        alphabet: Optional[Sequence[str]] = None,
    ) -> "NgramLM":
        corpus = list(corpus)
        if not corpus:
            raise UsageError("corpus is empty")
        if alphabet is None:
            alphabet = sorted(set(corpus))
        else:
            alphabet = list(alphabet)
            bad = sorted(set(corpus) - set(alphabet))
            if bad:
                raise UsageError(f"corpus symbols outside declared alphabet: {bad}")
        index = {s: i for i, s in enumerate(alphabet)}
        ids = [index[s] for s in corpus]
        k = len(alphabet)
        counts: dict[tuple[int, ...], np.ndarray] = {}
        for length in range(order):
            for t in range(length, len(ids)):
                h = tuple(ids[t - length:t])
                row = counts.get(h)
                if row is None:
                    row = counts[h] = np.zeros(k)
                row[ids[t]] += 1.0
        return cls(alphabet, order, counts, mode=mode, discount=discount,
                   epsilon=epsilon)

    def with_mode(self, mode: str) -> "NgramLM":
        """Same counts under the other smoothing mode."""
        return NgramLM(self.alphabet, self.order, self.counts, mode=mode,
                       discount=self.discount, epsilon=self.epsilon)

    # -- probabilities -------------------------------------------------------

    @property
    def num_labels(self) -> int:
        return len(self.alphabet)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise UsageError(f"symbol {symbol!r} not in the model alphabet")

    def prob(self, history: Sequence[int], y: int) -> float:
        """p(y | history); histories longer than order-1 use their tail."""
        h = tuple(history)[max(0, len(history) - (self.order - 1)):]
        return self._prob(h, y)

    def _prob(self, h: tuple[int, ...], y: int) -> float:
        k = len(self.alphabet)
        eps = self.epsilon
        if self.mode == "laplace":
            row = self.counts.get(h)
            cy = float(row[y]) if row is not None else 0.0
            ch = self._totals.get(h, 0.0)
            return (cy + eps) / (ch + eps * k)
        # absolute discounting
        if not h:
            row = self.counts.get(())
            cy = float(row[y]) if row is not None else 0.0
            n = self._totals.get((), 0.0)
            return (cy + eps) / (n + eps * k)
        row = self.counts.get(h)
        if row is None or self._totals[h] == 0.0:
            return self._prob(h[1:], y)
        ch = self._totals[h]
        d = self.discount
        seen = max(float(row[y]) - d, 0.0) / ch
        backoff = d * self._distinct[h] / ch
        return seen + backoff * self._prob(h[1:], y)

    def log_prob_table(self) -> np.ndarray:
        """Dense ``(histories, labels)`` log-probability table over all ids."""
        if self._log_table is None:
            coder = HistoryCoder(len(self.alphabet), self.order)
            table = np.empty((coder.count, len(self.alphabet)))
            for hid, hist in enumerate(coder.all_histories()):
                for y in range(len(self.alphabet)):
                    table[hid, y] = math.log(self._prob(hist, y))
            self._log_table = table
        return self._log_table

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        items = sorted(self.counts.items())
        return {
            "format": LM_FORMAT,
            "version": LM_VERSION,
            "order": self.order,
            "mode": self.mode,
            "discount": self.discount,
            "epsilon": self.epsilon,
            "alphabet": list(self.alphabet),
            "counts": [
                [[self.alphabet[c] for c in h], [int(v) for v in row]]
                for h, row in items
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NgramLM":
        if data.get("format") != LM_FORMAT:
            raise UsageError(f"not a {LM_FORMAT} record")
        if data.get("version") != LM_VERSION:
            raise UsageError(f"unsupported LM format version {data.get('version')}")
        alphabet = list(data["alphabet"])
        index = {s: i for i, s in enumerate(alphabet)}
        counts = {
            tuple(index[s] for s in h): np.array(row, dtype=float)
            for h, row in data["counts"]
        }
        return cls(alphabet, data["order"], counts, mode=data["mode"],
                   discount=data["discount"], epsilon=data["epsilon"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(self.to_dict(), fp)
            fp.write("\n")

    @classmethod
    def load(cls, path) -> "NgramLM":
        with open(path, "r", encoding="utf-8") as fp:
            return cls.from_dict(json.load(fp))


def fit_ngram(corpus, order, mode="absolute", discount=0.25, epsilon=0.01,
              alphabet=None) -> NgramLM:
    """Count-and-smooth an n-gram model from a symbol sequence."""
    return NgramLM.fit(corpus, order, mode=mode, discount=discount,
                       epsilon=epsilon, alphabet=alphabet)


def lm_prob(lm: NgramLM, history: Sequence[int], y: int) -> float:
    """p(y | history) under the model's smoothing mode."""
    return lm.prob(history, y)


# --------------------------------------------------------------------------
# emission channel
# --------------------------------------------------------------------------


@dataclass
class ChannelModel:
    """Laplace-smoothed emission table p(x | y) for the noisy channel.

    Held as expected counts; probabilities are
    ``(counts[y, x] + eps) / (counts[y].sum() + eps * |X|)``, so rows always
    normalize exactly and stay strictly positive.
    """

    counts: np.ndarray  # shape (|Y|, |X|)
    epsilon: float = 0.01

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != 2:
            raise UsageError("channel counts must be a 2-d array")
        if self.epsilon <= 0.0:
            raise UsageError("epsilon must be positive")
        self._log: Optional[np.ndarray] = None

    @classmethod
    def uniform(cls, num_plain: int, num_cipher: int, epsilon: float = 0.01):
        return cls(np.zeros((num_plain, num_cipher)), epsilon)

    @classmethod
    def from_counts(cls, counts: np.ndarray, epsilon: float = 0.01):
        return cls(np.array(counts, dtype=float), epsilon)

    @property
    def num_plain(self) -> int:
        return self.counts.shape[0]

    @property
    def num_cipher(self) -> int:
        return self.counts.shape[1]

    def prob(self, y: int, x: int) -> float:
        row = self.counts[y]
        return (row[x] + self.epsilon) / (row.sum() + self.epsilon * len(row))

    def matrix(self) -> np.ndarray:
        denom = self.counts.sum(axis=1, keepdims=True) + self.epsilon * self.num_cipher
        return (self.counts + self.epsilon) / denom

    def log_matrix(self) -> np.ndarray:
        if self._log is None:
            self._log = np.log(self.matrix())
        return self._log

    def argmax_mapping(self) -> np.ndarray:
        """Most likely cipher symbol per plain symbol (ties: lowest index)."""
        return np.argmax(self.matrix(), axis=1)


def channel_prob(channel: ChannelModel, y: int, x: int) -> float:
    return channel.prob(y, x)


def cipher_log_weight(lm: NgramLM, channel: ChannelModel, position: int,
                      suffix: Sequence[int], y: int, x: int) -> float:
    """Log weight of the decipherment chain: LM continuation times emission."""
    return math.log(lm.prob(suffix, y)) + math.log(channel.prob(y, x))


# --------------------------------------------------------------------------
# chain-model adapters
# --------------------------------------------------------------------------


class LanguageChainModel(FiniteHistoryModel):
    """Chain weights from an n-gram model alone; observations are ignored."""

    def __init__(self, lm: NgramLM):
        super().__init__(lm.num_labels, lm.order)
        self.lm = lm
        self._table = lm.log_prob_table()

    def log_weight(self, position, suffix, y, x) -> float:
        return float(self._table[self.coder.encode(suffix), y])

    def log_weight_matrix(self, position, hist, x) -> np.ndarray:
        return self._table[hist]


class CipherChainModel(FiniteHistoryModel):
    """Noisy-channel decipherment weights: LM prior times channel emission.

    Labels are plaintext symbols (the LM alphabet); observations are cipher
    symbol ids.
    """

    def __init__(self, lm: NgramLM, channel: ChannelModel):
        if channel.num_plain != lm.num_labels:
            raise UsageError(
                f"channel has {channel.num_plain} plain rows, LM alphabet has "
                f"{lm.num_labels}"
            )
        super().__init__(lm.num_labels, lm.order)
        self.lm = lm
        self.channel = channel
        self._lm_table = lm.log_prob_table()
        self._chan_log = channel.log_matrix()

    def log_weight(self, position, suffix, y, x) -> float:
        return float(self._lm_table[self.coder.encode(suffix), y]
                     + self._chan_log[y, x])

    def log_weight_matrix(self, position, hist, x) -> np.ndarray:
        return self._lm_table[hist] + self._chan_log[:, x][None, :]
