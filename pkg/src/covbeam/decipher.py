"""Substitution-cipher decipherment by EM with a pluggable E-step.

The generative story: a plaintext drawn from an n-gram language model passes
through an unknown one-to-one symbol substitution. EM starts from an exactly
uniform channel, estimates per-position plaintext posteriors with the chosen
inference method, re-fits the channel from the expected (plain, cipher)
counts with Laplace smoothing, and repeats. With an exact E-step the data
log-likelihood is non-decreasing; with approximate E-steps it is only logged.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import baselines, engine
from .errors import UsageError
from .models import ChannelModel, CipherChainModel, NgramLM, normalize_text

INSTANCE_FORMAT = "covbeam-cipher-instance"
INSTANCE_VERSION = 1

RUN_FORMAT = "covbeam-em-run"
RUN_VERSION = 1

EM_METHODS = ("rcms", "beam", "hybrid", "exact")


@dataclass
class CipherInstance:
    """A ciphertext with its alphabets and, when known, the gold answer."""

    plain_alphabet: tuple[str, ...]
    cipher_alphabet: tuple[str, ...]
    ciphertext: str
    gold_mapping: Optional[dict[str, str]] = None
    gold_plaintext: Optional[str] = None

    def __post_init__(self):
        self.plain_alphabet = tuple(self.plain_alphabet)
        self.cipher_alphabet = tuple(self.cipher_alphabet)
        bad = sorted(set(self.ciphertext) - set(self.cipher_alphabet))
        if bad:
            raise UsageError(f"ciphertext symbols outside the cipher alphabet: {bad}")
        if self.gold_mapping is not None:
            values = list(self.gold_mapping.values())
            if len(set(values)) != len(values):
                raise UsageError("gold mapping is not injective")

    @property
    def n(self) -> int:
        return len(self.ciphertext)

    def cipher_ids(self) -> np.ndarray:
        index = {s: i for i, s in enumerate(self.cipher_alphabet)}
        return np.array([index[c] for c in self.ciphertext], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "format": INSTANCE_FORMAT,
            "version": INSTANCE_VERSION,
            "plain_alphabet": list(self.plain_alphabet),
            "cipher_alphabet": list(self.cipher_alphabet),
            "ciphertext": self.ciphertext,
            "gold_mapping": self.gold_mapping,
            "gold_plaintext": self.gold_plaintext,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CipherInstance":
        if data.get("format") != INSTANCE_FORMAT:
            raise UsageError(f"not a {INSTANCE_FORMAT} record")
        if data.get("version") != INSTANCE_VERSION:
            raise UsageError(f"unsupported instance version {data.get('version')}")
        return cls(
            plain_alphabet=tuple(data["plain_alphabet"]),
            cipher_alphabet=tuple(data["cipher_alphabet"]),
            ciphertext=data["ciphertext"],
            gold_mapping=data.get("gold_mapping"),
            gold_plaintext=data.get("gold_plaintext"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(self.to_dict(), fp)
            fp.write("\n")

    @classmethod
    def load(cls, path) -> "CipherInstance":
        with open(path, "r", encoding="utf-8") as fp:
            return cls.from_dict(json.load(fp))


def generate_cipher(
    corpus_text: str,
    length: int,
    seed: int,
    lowercase: bool = True,
    keep: Optional[str] = None,
    permutation: Optional[Sequence[int]] = None,
) -> CipherInstance:
    """Sample a plaintext slice and encrypt it with a random substitution.

    The plain alphabet is the whole normalized corpus alphabet (so it does
    not depend on the sampled slice); the cipher alphabet is the same symbol
    set under a seeded uniform random permutation. Pass ``permutation`` to
    pin the substitution explicitly (e.g. the identity in tests).
    """
    kwargs = {} if keep is None else {"keep": keep}
    text = normalize_text(corpus_text, lowercase=lowercase, **kwargs)
    if len(text) < length:
        raise UsageError(
            f"corpus has {len(text)} usable symbols, need at least {length}"
        )
    if length < 1:
        raise UsageError("plaintext length must be >= 1")
    alphabet = tuple(sorted(set(text)))
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, len(text) - length + 1))
    plaintext = text[start:start + length]
    if permutation is None:
        perm = rng.permutation(len(alphabet))
    else:
        perm = np.asarray(permutation, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(len(alphabet))):
            raise UsageError("permutation must be a bijection over the alphabet")
    mapping = {alphabet[y]: alphabet[perm[y]] for y in range(len(alphabet))}
    ciphertext = "".join(mapping[c] for c in plaintext)
    return CipherInstance(
        plain_alphabet=alphabet,
        cipher_alphabet=alphabet,
        ciphertext=ciphertext,
        gold_mapping=mapping,
        gold_plaintext=plaintext,
    )


@dataclass
class EMRun:
    """Outcome of one EM decipherment run."""

    method: str
    width: int
    log_likelihoods: list[float]
    channel: ChannelModel
    decoded: str
    iterations_run: int
    wall_time_s: float
    map_accuracy: Optional[float] = None
    token_accuracy: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "format": RUN_FORMAT,
            "version": RUN_VERSION,
            "method": self.method,
            "width": self.width,
            "log_likelihoods": self.log_likelihoods,
            "channel_counts": self.channel.counts.tolist(),
            "channel_epsilon": self.channel.epsilon,
            "decoded": self.decoded,
            "iterations_run": self.iterations_run,
            "wall_time_s": self.wall_time_s,
            "map_accuracy": self.map_accuracy,
            "token_accuracy": self.token_accuracy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EMRun":
        if data.get("format") != RUN_FORMAT:
            raise UsageError(f"not a {RUN_FORMAT} record")
        return cls(
            method=data["method"],
            width=data["width"],
            log_likelihoods=list(data["log_likelihoods"]),
            channel=ChannelModel(np.array(data["channel_counts"]),
                                 data["channel_epsilon"]),
            decoded=data["decoded"],
            iterations_run=data["iterations_run"],
            wall_time_s=data["wall_time_s"],
            map_accuracy=data.get("map_accuracy"),
            token_accuracy=data.get("token_accuracy"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(self.to_dict(), fp)
            fp.write("\n")

    @classmethod
    def load(cls, path) -> "EMRun":
        with open(path, "r", encoding="utf-8") as fp:
            return cls.from_dict(json.load(fp))


def _e_step(method, model, x, width, alt_model, oracle_cap):
    """One posterior computation: (log-likelihood, per-position marginals)."""
    if method == "rcms":
        trellis = engine.forward_pass(model, x, width)
        engine.backward_pass(trellis, model)
        return engine.log_partition(trellis), engine.label_marginals(trellis, model)
    if method == "beam":
        res = baselines.beam_search(model, x, width)
        return res.log_partition_estimate(), res.label_marginals(model.num_labels(1))
    if method == "hybrid":
        res = baselines.hybrid_union(model, x, width, alt_model)
        return res.log_partition_estimate(), res.label_marginals(model.num_labels(1))
    if method == "exact":
        res = baselines.exact_forward_backward(model, x, cap=oracle_cap)
        return res.log_z, res.marginals
    raise UsageError(f"unknown method {method!r}; expected one of {EM_METHODS}")


def _decode(method, model, x, width, alt_model, oracle_cap) -> np.ndarray:
    if method == "rcms":
        trellis = engine.forward_pass(model, x, width)
        engine.backward_pass(trellis, model)
        return engine.decode(trellis, model)
    if method == "beam":
        return baselines.beam_search(model, x, width).decode()
    if method == "hybrid":
        return baselines.hybrid_union(model, x, width, alt_model).decode()
    res = baselines.exact_forward_backward(model, x, cap=oracle_cap)
    return np.array([int(np.argmax(m)) for m in res.marginals], dtype=np.int64)


def run_em(
    instance: CipherInstance,
    lm: NgramLM,
    iterations: int = 20,
    width: int = 100,
    method: str = "rcms",
    ll_tol: float = 1e-4,
    channel_epsilon: float = 0.01,
    alt_lm: Optional[NgramLM] = None,
    oracle_cap: int = 1_000_000,
) -> EMRun:
    """EM decipherment with the chosen inference method as the E-step.

    The channel starts exactly uniform, so runs are deterministic. For the
    hybrid method the second criterion defaults to the same counts under the
    other smoothing mode. Early-stops when the relative log-likelihood change
    drops below ``ll_tol`` (0 disables). Wall time covers inference and the
    M-steps only.
    """
    if iterations < 1:
        raise UsageError("iterations must be >= 1")
    if method not in EM_METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {EM_METHODS}")
    missing = sorted(set(instance.plain_alphabet) - set(lm.alphabet))
    if missing:
        raise UsageError(f"instance plain symbols missing from the LM: {missing}")
    if method == "hybrid" and alt_lm is None:
        alt_lm = lm.with_mode(
            "laplace" if lm.mode == "absolute" else "absolute"
        )

    x = instance.cipher_ids()
    num_plain = lm.num_labels
    num_cipher = len(instance.cipher_alphabet)
    channel = ChannelModel.uniform(num_plain, num_cipher, channel_epsilon)
    positions_by_symbol = [np.flatnonzero(x == c) for c in range(num_cipher)]

    started = time.perf_counter()
    lls: list[float] = []
    for _ in range(iterations):
        model = CipherChainModel(lm, channel)
        alt_model = CipherChainModel(alt_lm, channel) if method == "hybrid" else None
        ll, marginals = _e_step(method, model, x, width, alt_model, oracle_cap)
        lls.append(float(ll))
        marg = np.asarray(marginals)
        counts = np.zeros((num_plain, num_cipher))
        for c, pos in enumerate(positions_by_symbol):
            if len(pos):
                counts[:, c] = marg[pos].sum(axis=0)
        channel = ChannelModel.from_counts(counts, channel_epsilon)
        if ll_tol > 0 and len(lls) > 1:
            change = abs(lls[-1] - lls[-2]) / max(abs(lls[-2]), 1e-300)
            if change < ll_tol:
                break

    model = CipherChainModel(lm, channel)
    alt_model = CipherChainModel(alt_lm, channel) if method == "hybrid" else None
    decoded_ids = _decode(method, model, x, width, alt_model, oracle_cap)
    wall = time.perf_counter() - started

    decoded = "".join(lm.alphabet[y] for y in decoded_ids)
    run = EMRun(
        method=method,
        width=width,
        log_likelihoods=lls,
        channel=channel,
        decoded=decoded,
        iterations_run=len(lls),
        wall_time_s=wall,
    )
    if instance.gold_mapping is not None and instance.gold_plaintext is not None:
        run.map_accuracy, run.token_accuracy = mapping_accuracy(run, instance, lm)
    return run


def mapping_accuracy(
    run: EMRun, instance: CipherInstance, lm: NgramLM
) -> tuple[float, float]:
    """Symbol-mapping accuracy and decoded-token accuracy against the gold.

    Mapping accuracy: fraction of plain symbols whose channel argmax matches
    the gold substitution (argmax ties go to the lowest cipher index). Token
    accuracy: fraction of decoded positions equal to the gold plaintext.
    """
    if instance.gold_mapping is None or instance.gold_plaintext is None:
        raise UsageError("instance has no gold answer")
    pred = run.channel.argmax_mapping()
    hits = 0
    for y_sym in instance.plain_alphabet:
        want = instance.gold_mapping[y_sym]
        got = instance.cipher_alphabet[pred[lm.index(y_sym)]]
        hits += int(got == want)
    map_acc = hits / len(instance.plain_alphabet)
    gold = instance.gold_plaintext
    if len(run.decoded) != len(gold):
        raise UsageError("decoded text and gold plaintext differ in length")
    token_acc = sum(a == b for a, b in zip(run.decoded, gold)) / len(gold)
    return map_acc, token_acc
