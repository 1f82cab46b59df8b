"""Score providers and emission-logit composition.

Vocabulary logits add a language-model log-probability to the encoder logit
of the same token; name-class logits add the class-LM log-probability of
``@name`` instead. The output distribution is a softmax over blank, the
vocabulary block and the name block, with entries masked to ``-inf``
excluded from normalization.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import FormatError, TokenSeq

NEG_INF = float("-inf")
BOS = -1
EOS = -2
NORM_TOL = 1e-9


class DegenerateDistributionError(ValueError):
    pass


class InventoryError(ValueError):
    pass


class MissingPriorError(KeyError):
    pass


@dataclass(frozen=True)
class EncoderScores:
    """Per-frame encoder logits, shape ``(T, V)``."""

    logits: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.logits, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"encoder logits must be T x V with T >= 1, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("encoder logits must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "logits", a)

    @property
    def T(self) -> int:
        return self.logits.shape[0]

    @property
    def V(self) -> int:
        return self.logits.shape[1]

    def frame(self, t: int) -> np.ndarray:
        if not 0 <= t < self.T:
            raise IndexError(f"frame {t} out of range [0, {self.T})")
        return self.logits[t]


# --- language models ---------------------------------------------------------


class LanguageModel:
    """Stateful next-token distribution over ``vocab_size`` surface tokens,
    plus ``@name`` (id ``vocab_size``) for a class-based model.

    Subclasses implement ``initial_state``, ``_scores`` and ``advance``.
    States are hashable values owned by the caller.
    """

    vocab_size: int
    has_class: bool = False
    eos: bool = False

    @property
    def inventory_size(self) -> int:
        return self.vocab_size + (1 if self.has_class else 0)

    @property
    def class_id(self) -> int:
        if not self.has_class:
            raise InventoryError("model has no @name class")
        return self.vocab_size

    def initial_state(self) -> Hashable:
        raise NotImplementedError

    def advance(self, state: Hashable, token: int) -> Hashable:
        raise NotImplementedError

    def _scores(self, state: Hashable) -> np.ndarray:
        raise NotImplementedError

    def logprobs(self, state: Hashable) -> np.ndarray:
        """Log-probabilities over the inventory, with EOS appended last when modeled."""
        return self._scores(state)

    def eos_logprob(self, state: Hashable) -> float:
        if not self.eos:
            return 0.0
        return float(self.logprobs(state)[-1])

    def check_token(self, token: int) -> int:
        if not 0 <= token < self.inventory_size:
            raise InventoryError(f"token {token} outside LM inventory of size {self.inventory_size}")
        return token

    def step(self, state: Hashable, token: int) -> Tuple[float, Hashable]:
        self.check_token(token)
        return float(self.logprobs(state)[token]), self.advance(state, token)


class NgramLM(LanguageModel):
    """Dense n-gram table without backoff.

    ``table`` maps a context tuple of length ``order - 1`` (padded on the left
    with ``BOS``) to linear probabilities over the inventory, plus EOS when
    ``eos`` is set.
    """

    def __init__(self, order: int, vocab_size: int, table: Mapping[Tuple[int, ...], Sequence[float]],
                 has_class: bool = False, eos: bool = False):
        if order < 1:
            raise ValueError("n-gram order must be >= 1")
        self.order = order
        self.vocab_size = vocab_size
        self.has_class = has_class
        self.eos = eos
        width = self.inventory_size + (1 if eos else 0)
        self._table: Dict[Tuple[int, ...], np.ndarray] = {}
        self._probs: Dict[Tuple[int, ...], np.ndarray] = {}
        for ctx, probs in table.items():
            ctx = tuple(int(c) for c in ctx)
            p = np.asarray(probs, dtype=np.float64)
            if len(ctx) != order - 1:
                raise ValueError(f"context {ctx} has wrong length for order {order}")
            if p.shape != (width,):
                raise ValueError(f"context {ctx}: expected {width} probabilities, got {p.shape}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
                raise ValueError(f"context {ctx}: probabilities do not sum to 1 (sum={p.sum()!r})")
            with np.errstate(divide="ignore"):
                lp = np.log(p)
            lp.setflags(write=False)
            self._table[ctx] = lp
            self._probs[ctx] = p

    def initial_state(self):
        return (BOS,) * (self.order - 1)

    def advance(self, state, token):
        if self.order == 1:
            return ()
        return (tuple(state) + (int(token),))[1:]

    def _scores(self, state):
        try:
            return self._table[tuple(state)]
        except KeyError:
            raise InventoryError(f"n-gram context {state} missing from dense table") from None

    def prob(self, context: Sequence[int], token: int) -> float:
        self._scores(tuple(context))
        return float(self._probs[tuple(context)][token])

    def contexts(self):
        return list(self._table)

    def to_json(self) -> dict:
        entries = []
        width = self.inventory_size + (1 if self.eos else 0)
        for ctx, p in self._probs.items():
            for tok in range(width):
                out_tok = EOS if (self.eos and tok == width - 1) else tok
                entries.append([*ctx, out_tok, float(p[tok])])
        return {"order": self.order, "class": self.has_class, "eos": self.eos, "entries": entries}

    @classmethod
    def from_json(cls, obj: dict, vocab_size: int) -> "NgramLM":
        order = int(obj["order"])
        has_class = bool(obj.get("class", False))
        eos = bool(obj.get("eos", False))
        width = vocab_size + (1 if has_class else 0) + (1 if eos else 0)
        table: Dict[Tuple[int, ...], np.ndarray] = {}
        for row in obj["entries"]:
            *ctx, tok, p = row
            tok = int(tok)
            if tok == EOS:
                if not eos:
                    raise ValueError("EOS entry in a model without eos")
                tok = width - 1
            if not 0 <= tok < width:
                raise ValueError(f"token {tok} outside inventory")
            table.setdefault(tuple(int(c) for c in ctx), np.zeros(width))[tok] = float(p)
        return cls(order, vocab_size, table, has_class=has_class, eos=eos)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x)
    return x - (m + np.log(np.sum(np.exp(x - m))))


@dataclass(frozen=True)
class RnnWeights:
    embed: np.ndarray       # (n_in, H)
    recurrent: np.ndarray   # (H, H)
    bias: np.ndarray        # (H,)

    def __post_init__(self):
        for name in ("embed", "recurrent", "bias"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        h = self.recurrent.shape[0]
        if self.recurrent.shape != (h, h) or self.embed.shape[1] != h or self.bias.shape != (h,):
            raise ValueError("inconsistent recurrent weight shapes")

    @property
    def hidden(self) -> int:
        return self.recurrent.shape[0]

    def step(self, h: Tuple[float, ...], token: int) -> Tuple[float, ...]:
        x = self.embed[token] + self.recurrent @ np.asarray(h) + self.bias
        return tuple(np.tanh(x).tolist())


class RnnLM(LanguageModel):
    """Single-layer tanh recurrence with a softmax output layer."""

    def __init__(self, vocab_size: int, cell: RnnWeights, output: np.ndarray, output_bias: np.ndarray,
                 has_class: bool = False, eos: bool = False):
        self.vocab_size = vocab_size
        self.has_class = has_class
        self.eos = eos
        self.cell = cell
        self.output = np.asarray(output, dtype=np.float64)
        self.output_bias = np.asarray(output_bias, dtype=np.float64)
        width = self.inventory_size + (1 if eos else 0)
        if self.output.shape != (width, cell.hidden) or self.output_bias.shape != (width,):
            raise ValueError(f"output layer must be {width} x {cell.hidden}")
        if cell.embed.shape[0] != self.inventory_size:
            raise ValueError(f"embedding must have {self.inventory_size} rows")

    def initial_state(self):
        return (0.0,) * self.cell.hidden

    def advance(self, state, token):
        return self.cell.step(state, self.check_token(token))

    def _scores(self, state):
        return _log_softmax(self.output @ np.asarray(state) + self.output_bias)

    def to_json(self) -> dict:
        return {
            "class": self.has_class,
            "eos": self.eos,
            "dims": {"hidden": self.cell.hidden},
            "embed": self.cell.embed.tolist(),
            "recurrent": self.cell.recurrent.tolist(),
            "bias": self.cell.bias.tolist(),
            "output": self.output.tolist(),
            "output_bias": self.output_bias.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict, vocab_size: int) -> "RnnLM":
        cell = RnnWeights(obj["embed"], obj["recurrent"], obj["bias"])
        return cls(vocab_size, cell, obj["output"], obj["output_bias"],
                   has_class=bool(obj.get("class", False)), eos=bool(obj.get("eos", False)))


# --- blank scorers -------------------------------------------------------------


class BlankScorer:
    """Blank logit as a function of (frame, blank-predictor state).

    The state follows the full surface-token history, in-class tokens included.
    """

    def initial_state(self) -> Hashable:
        raise NotImplementedError

    def advance(self, state: Hashable, token: int) -> Hashable:
        raise NotImplementedError

    def logit(self, t: int, state: Hashable) -> float:
        raise NotImplementedError


HASH_MULT = 31


def history_bucket(history: Sequence[int], buckets: int) -> int:
    b = 0
    for tok in history:
        b = (b * HASH_MULT + int(tok) + 1) % buckets
    return b


class TableBlankScorer(BlankScorer):
    """Blank logits looked up in a ``T x B`` table indexed by a history hash.

    ``hashing="poly"`` hashes the token history polynomially; ``"length"``
    buckets by history length only.
    """

    def __init__(self, table, hashing: str = "poly"):
        if hashing not in ("poly", "length"):
            raise ValueError(f"unknown blank hashing {hashing!r}")
        self.hashing = hashing
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] < 1 or table.shape[1] < 1:
            raise ValueError(f"blank table must be T x B, got shape {table.shape}")
        if not np.all(np.isfinite(table)):
            raise ValueError("blank table must be finite")
        table.setflags(write=False)
        self.table = table

    @property
    def buckets(self) -> int:
        return self.table.shape[1]

    def initial_state(self):
        return 0

    def advance(self, state, token):
        if self.hashing == "length":
            return min(state + 1, self.buckets - 1)
        return (state * HASH_MULT + int(token) + 1) % self.buckets

    def logit(self, t, state):
        return float(self.table[t, state])


class RnnBlankScorer(BlankScorer):
    """Recurrent blank predictor: ``w . h + frame_bias[t]``."""

    def __init__(self, cell: RnnWeights, weight, frame_bias):
        self.cell = cell
        self.weight = np.asarray(weight, dtype=np.float64)
        self.frame_bias = np.asarray(frame_bias, dtype=np.float64)
        if self.weight.shape != (cell.hidden,):
            raise ValueError("blank weight must match hidden size")

    def initial_state(self):
        return (0.0,) * self.cell.hidden

    def advance(self, state, token):
        return self.cell.step(state, token)

    def logit(self, t, state):
        return float(self.weight @ np.asarray(state) + self.frame_bias[t])


@dataclass(frozen=True)
class NamePrior:
    """Optional log P(name | @name); disabled (all zeros) when ``logprobs`` is None."""

    logprobs: Optional[Mapping[TokenSeq, float]] = None

    def __post_init__(self):
        if self.logprobs is not None:
            lp = {tuple(k): float(v) for k, v in self.logprobs.items()}
            total = sum(math.exp(v) for v in lp.values())
            if total > 1.0 + NORM_TOL:
                raise ValueError(f"name prior sums to {total} > 1")
            object.__setattr__(self, "logprobs", lp)

    @property
    def enabled(self) -> bool:
        return self.logprobs is not None

    def __call__(self, name: Sequence[int]) -> float:
        if self.logprobs is None:
            return 0.0
        try:
            return self.logprobs[tuple(name)]
        except KeyError:
            raise MissingPriorError(f"no prior for name {tuple(name)}") from None

    @classmethod
    def uniform(cls, names) -> "NamePrior":
        names = list(dict.fromkeys(tuple(n) for n in names))
        return cls({n: -math.log(len(names)) for n in names})


# --- logit composition -----------------------------------------------------------


def fnt_vocab_logits(enc: EncoderScores, t: int, lm: LanguageModel, lm_state) -> np.ndarray:
    """Vocabulary logits: LM log-prob plus encoder logit, surface tokens only."""
    z = enc.frame(t)
    return lm.logprobs(lm_state)[: lm.vocab_size] + z


def cfnt_name_logits(enc: EncoderScores, t: int, class_lm: LanguageModel, lm_state, entry: bool) -> np.ndarray:
    """Name-class logits before trie masking.

    The ``@name`` log-prob is charged once per name occurrence, on the entry
    token; continuation tokens carry the encoder logit alone.
    """
    z = enc.frame(t)
    if not entry:
        return z.copy()
    return class_lm.logprobs(lm_state)[class_lm.class_id] + z


def compose(blank_logit: float, voc_logits: np.ndarray, name_logits: Optional[np.ndarray] = None) -> np.ndarray:
    parts = [np.array([blank_logit], dtype=np.float64), np.asarray(voc_logits, dtype=np.float64)]
    if name_logits is not None:
        parts.append(np.asarray(name_logits, dtype=np.float64))
    return np.concatenate(parts)


def mask_logits(logits: np.ndarray, allowed) -> np.ndarray:
    out = np.full_like(logits, NEG_INF)
    idx = sorted(allowed)
    if idx:
        out[idx] = logits[idx]
    return out


def log_softmax_live(logits: np.ndarray) -> np.ndarray:
    """Log-softmax over the finite entries; ``-inf`` entries stay ``-inf``.

    Only live entries enter the sum, so a fully masked block changes nothing
    bit-wise relative to dropping the block.
    """
    x = np.asarray(logits, dtype=np.float64)
    if np.any(np.isnan(x)) or np.any(x == np.inf):
        raise DegenerateDistributionError("logits contain NaN or +inf")
    live = np.isfinite(x)
    if not live.any():
        raise DegenerateDistributionError("every output entry is masked")
    vals = x[live]
    m = np.max(vals)
    lse = m + np.log(np.sum(np.exp(vals - m)))
    out = np.full_like(x, NEG_INF)
    out[live] = vals - lse
    return out


def emit_logprobs(blank_logit: float, voc_logits, name_logits=None) -> np.ndarray:
    return log_softmax_live(compose(blank_logit, voc_logits, name_logits))


def emit_distribution(blank_logit: float, voc_logits, name_logits) -> np.ndarray:
    """Probabilities over ``[blank, vocabulary block, name block]`` (length 2V+1)."""
    return np.exp(emit_logprobs(blank_logit, voc_logits, name_logits))


def lm_sequence_logprob(lm: LanguageModel, seq: Sequence[int]) -> float:
    state = lm.initial_state()
    total = 0.0
    for tok in seq:
        lp, state = lm.step(state, int(tok))
        total += lp
    return total + lm.eos_logprob(state)


def class_factored_logprob(context: Sequence[int], name: Sequence[int], class_lm: LanguageModel,
                           prior: NamePrior = NamePrior()) -> float:
    """log P(@name | context) + log P(name | @name)."""
    state = class_lm.initial_state()
    for tok in context:
        state = class_lm.advance(state, class_lm.check_token(int(tok)))
    return float(class_lm.logprobs(state)[class_lm.class_id]) + prior(name)


# --- files ---------------------------------------------------------------------------


def lm_to_json(lm: LanguageModel, vocab_hash: Optional[str] = None) -> dict:
    obj = {"vocab_size": lm.vocab_size}
    if vocab_hash is not None:
        obj["vocab_hash"] = vocab_hash
    if isinstance(lm, NgramLM):
        obj["type"] = "ngram"
        obj["ngram"] = lm.to_json()
    elif isinstance(lm, RnnLM):
        obj["type"] = "rnn"
        obj["rnn"] = lm.to_json()
    else:
        raise TypeError(f"cannot serialize {type(lm).__name__}")
    return obj


def lm_from_json(obj: dict) -> LanguageModel:
    try:
        kind = obj["type"]
        vocab_size = int(obj["vocab_size"])
        if kind == "ngram":
            return NgramLM.from_json(obj["ngram"], vocab_size)
        if kind == "rnn":
            return RnnLM.from_json(obj["rnn"], vocab_size)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad model description: {e}") from None
    raise FormatError(f"unknown model type {kind!r}")


def load_model(path, vocab_hash: Optional[str] = None) -> Tuple[LanguageModel, dict]:
    """Load ``model.json``; returns the LM and the raw object (for blank weights)."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: {e}") from None
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: expected a JSON object")
    if vocab_hash is not None and obj.get("vocab_hash") not in (None, vocab_hash):
        raise FormatError(f"{path}: vocabulary hash {obj['vocab_hash']} does not match {vocab_hash}")
    return lm_from_json(obj), obj


def save_model(lm: LanguageModel, path, vocab_hash: Optional[str] = None, blank: Optional[dict] = None) -> None:
    obj = lm_to_json(lm, vocab_hash)
    if blank is not None:
        obj["blank"] = blank
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


@dataclass(frozen=True)
class Utterance:
    """One row of ``scores.jsonl``."""

    enc: EncoderScores
    blank_table: Optional[np.ndarray] = None
    blank_bias: Optional[np.ndarray] = None
    blank_hash: str = "poly"


def blank_scorer_for(utt: Utterance, model_obj: Optional[dict] = None) -> BlankScorer:
    if utt.blank_table is not None:
        return TableBlankScorer(utt.blank_table, utt.blank_hash)
    if model_obj is not None and "blank" in model_obj:
        b = model_obj["blank"]
        cell = RnnWeights(b["embed"], b["recurrent"], b["bias"])
        bias = utt.blank_bias if utt.blank_bias is not None else np.zeros(utt.enc.T)
        return RnnBlankScorer(cell, b["weight"], bias)
    return TableBlankScorer(np.zeros((utt.enc.T, 1)))


def load_scores(path, vocab_size: Optional[int] = None, vocab=None) -> list:
    from .core import read_jsonl

    out = []
    for i, row in enumerate(read_jsonl(path, vocab)):
        try:
            enc = EncoderScores(np.asarray(row["logits"], dtype=np.float64))
            if "T" in row and int(row["T"]) != enc.T:
                raise ValueError(f"T={row['T']} but logits have {enc.T} frames")
            if vocab_size is not None and enc.V != vocab_size:
                raise ValueError(f"logits have {enc.V} columns, vocabulary has {vocab_size}")
            table = row.get("blank_table")
            bias = row.get("blank_bias")
            out.append(Utterance(
                enc,
                None if table is None else np.asarray(table, dtype=np.float64),
                None if bias is None else np.asarray(bias, dtype=np.float64),
                row.get("blank_hash", "poly"),
            ))
        except (KeyError, ValueError) as e:
            raise FormatError(f"{path}: utterance {i}: {e}") from None
    return out


def save_scores(utts: Sequence[Utterance], path, vocab=None) -> None:
    from .core import header_line

    with open(path, "w", encoding="utf-8") as f:
        if vocab is not None:
            f.write(header_line(vocab) + "\n")
        for u in utts:
            row = {"T": u.enc.T, "logits": u.enc.logits.tolist()}
            if u.blank_table is not None:
                row["blank_table"] = u.blank_table.tolist()
                row["blank_hash"] = u.blank_hash
            if u.blank_bias is not None:
                row["blank_bias"] = u.blank_bias.tolist()
            f.write(json.dumps(row) + "\n")


def all_contexts(order: int, inventory: int):
    """Every padded context a dense table of this order must cover."""
    syms = [BOS] + list(range(inventory))
    out = []
    for ctx in itertools.product(syms, repeat=order - 1):
        # BOS may only pad on the left
        seen_tok = False
        ok = True
        for c in ctx:
            if c == BOS and seen_tok:
                ok = False
                break
            if c != BOS:
                seen_tok = True
        if ok:
            out.append(ctx)
    return out
