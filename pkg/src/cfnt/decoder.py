"""Frame-synchronous transducer search for FNT and class-based C-FNT.

Each hypothesis carries a per-token status:

* ``S0`` outside the name class, previous token outside too
* ``S1`` first token of a name
* ``S2`` later token of the same name
* ``S3`` first outside token after a completed name

Inside the class the vocabulary-LM state is frozen; leaving the class feeds
``@name`` to the LM once. Name tokens are restricted to trie children.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .name_trie import NameTrie, TrieCursor
from .scoring import (
    NEG_INF,
    BlankScorer,
    EncoderScores,
    LanguageModel,
    NamePrior,
    cfnt_name_logits,
    emit_logprobs,
    fnt_vocab_logits,
    mask_logits,
)


class Status(enum.IntEnum):
    S0 = 0
    S1 = 1
    S2 = 2
    S3 = 3


OUTSIDE = (Status.S0, Status.S3)
LEGAL_NEXT = {
    Status.S0: frozenset({Status.S0, Status.S1}),
    Status.S1: frozenset({Status.S2, Status.S3}),
    Status.S2: frozenset({Status.S2, Status.S3}),
    Status.S3: frozenset({Status.S0, Status.S1}),
}


def legal_statuses(statuses: Sequence[Status]) -> bool:
    prev = Status.S0
    for s in statuses:
        if s not in LEGAL_NEXT[prev]:
            return False
        prev = s
    return True


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    dynamic_beam: bool = False
    in_class_budget: Optional[int] = None
    max_symbols_per_frame: int = 8

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.in_class_budget is not None and self.in_class_budget < 0:
            raise ValueError("in_class_budget must be >= 0")
        if self.max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be >= 1")

    @property
    def budget(self) -> int:
        return self.beam_size if self.in_class_budget is None else self.in_class_budget


@dataclass(frozen=True)
class Hypothesis:
    tokens: Tuple[int, ...] = ()
    statuses: Tuple[Status, ...] = ()
    score: float = 0.0
    lm_state: Hashable = None
    blank_state: Hashable = None
    cursor: Optional[TrieCursor] = None
    frame: int = 0
    name_spans: Tuple[Tuple[int, int, int], ...] = ()
    name_start: Optional[int] = None

    @property
    def status(self) -> Status:
        return self.statuses[-1] if self.statuses else Status.S0

    @property
    def in_class(self) -> bool:
        return self.cursor is not None

    @property
    def key(self):
        return self.tokens, self.statuses

    def to_json(self, vocab=None) -> dict:
        toks = vocab.strings(self.tokens) if vocab is not None else list(self.tokens)
        return {
            "tokens": toks,
            "statuses": [s.name for s in self.statuses],
            "score": self.score,
            "name_spans": [list(s) for s in self.name_spans],
        }


@dataclass(frozen=True)
class BeamEvent:
    """What an observer is told alongside a beam snapshot."""

    frame: int
    final: bool
    retain_s0: bool
    names: Optional[Sequence[Tuple[int, ...]]]


# Observers are called with (beam, event) after every frame and once on the
# finalized n-best list.
BeamObserver = Callable[[Sequence[Hypothesis], BeamEvent], None]
OBSERVERS: List[BeamObserver] = []


def _rank(h: Hypothesis, done: bool):
    return (-h.score, len(h.tokens), h.tokens, h.statuses, 0 if done else 1)


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _merge(pool: Dict, h: Hypothesis) -> None:
    old = pool.get(h.key)
    if old is None:
        pool[h.key] = h
    else:
        pool[h.key] = replace(old, score=_logaddexp(old.score, h.score))


def _prune(items: List[Tuple[Hypothesis, bool]], cfg: DecodeConfig, retain_s0: bool) -> List[Tuple[Hypothesis, bool]]:
    ranked = sorted(items, key=lambda p: _rank(*p))
    if cfg.dynamic_beam:
        outside = [p for p in ranked if not p[0].in_class][: cfg.beam_size]
        inside = [p for p in ranked if p[0].in_class][: cfg.budget]
        kept = sorted(outside + inside, key=lambda p: _rank(*p))
    else:
        outside = None
        kept = ranked[: cfg.beam_size]
    # An in-progress S0 item suffices: its blank extension re-enters the next
    # pool, so the end-of-frame beam (all finished items) keeps an S0 member.
    if retain_s0 and not any(h.status == Status.S0 for h, _ in kept):
        best = next((p for p in ranked if p[0].status == Status.S0), None)
        if best is not None:
            # evict the weakest competitor of the S0 hypothesis
            group = kept if outside is None else outside
            if len(group) >= cfg.beam_size:
                victim = group[-1]
                kept = [p for p in kept if p is not victim]
            kept = sorted(kept + [best], key=lambda p: _rank(*p))
    return kept


class _Expander:
    """Scores the 1 + V (FNT) or 1 + 2V (C-FNT) outcomes of a hypothesis."""

    def __init__(self, enc: EncoderScores, blank: BlankScorer, lm: LanguageModel,
                 trie: Optional[NameTrie], prior: NamePrior):
        self.enc = enc
        self.blank = blank
        self.lm = lm
        self.trie = trie
        self.prior = prior
        self.V = enc.V
        if lm.vocab_size != enc.V:
            raise ValueError(f"LM vocabulary size {lm.vocab_size} != encoder width {enc.V}")
        if trie is not None:
            lm.class_id  # raises when the LM has no @name
            self.root_allowed = trie.allowed_tokens(trie.start())

    def initial(self) -> Hypothesis:
        return Hypothesis(lm_state=self.lm.initial_state(), blank_state=self.blank.initial_state(),
                          cursor=None)

    def logprobs(self, h: Hypothesis, t: int):
        b = self.blank.logit(t, h.blank_state)
        if self.trie is None:
            return emit_logprobs(b, fnt_vocab_logits(self.enc, t, self.lm, h.lm_state)), None
        exit_state = None
        if h.cursor is None:
            voc = fnt_vocab_logits(self.enc, t, self.lm, h.lm_state)
            name = mask_logits(cfnt_name_logits(self.enc, t, self.lm, h.lm_state, entry=True), self.root_allowed)
        else:
            accepting, _ = self.trie.is_accepting(h.cursor)
            if accepting:
                exit_state = self.lm.advance(h.lm_state, self.lm.class_id)
                voc = fnt_vocab_logits(self.enc, t, self.lm, exit_state)
            else:
                voc = np.full(self.V, NEG_INF)
            name = mask_logits(cfnt_name_logits(self.enc, t, self.lm, h.lm_state, entry=False),
                               self.trie.allowed_tokens(h.cursor))
        return emit_logprobs(b, voc, name), exit_state

    def close_name(self, h: Hypothesis, end: int) -> Tuple[Tuple[int, int, int], float]:
        _, idx = self.trie.is_accepting(h.cursor)
        span = (h.name_start, end, idx)
        return span, self.prior(self.trie.names[idx])

    def extend(self, h: Hypothesis, lp: np.ndarray, exit_state, tok: int, in_name_block: bool, t: int) -> Hypothesis:
        V = self.V
        score = float(h.score + lp[1 + V + tok if in_name_block else 1 + tok])
        tokens = h.tokens + (tok,)
        b_state = self.blank.advance(h.blank_state, tok)
        if not in_name_block:
            if h.cursor is None:
                return Hypothesis(tokens, h.statuses + (Status.S0,), score, self.lm.advance(h.lm_state, tok),
                                  b_state, None, t, h.name_spans, None)
            span, prior = self.close_name(h, len(h.tokens))
            return Hypothesis(tokens, h.statuses + (Status.S3,), score + prior, self.lm.advance(exit_state, tok),
                              b_state, None, t, h.name_spans + (span,), None)
        if h.cursor is None:
            cursor = self.trie.step(self.trie.start(), tok)
            return Hypothesis(tokens, h.statuses + (Status.S1,), score, h.lm_state, b_state, cursor, t,
                              h.name_spans, len(h.tokens))
        cursor = self.trie.step(h.cursor, tok)
        return Hypothesis(tokens, h.statuses + (Status.S2,), score, h.lm_state, b_state, cursor, t,
                          h.name_spans, h.name_start)

    def finalize(self, h: Hypothesis, drop_incomplete: bool) -> Optional[Hypothesis]:
        if h.cursor is None:
            return h
        accepting, _ = self.trie.is_accepting(h.cursor)
        if not accepting:
            return None if drop_incomplete else h
        span, prior = self.close_name(h, len(h.tokens))
        return replace(h, score=h.score + prior, lm_state=self.lm.advance(h.lm_state, self.lm.class_id),
                       cursor=None, name_spans=h.name_spans + (span,), name_start=None)


def _top_tokens(lp: np.ndarray, lo: int, hi: int, k: int) -> List[int]:
    """Indices in ``[lo, hi)`` of the ``k`` best finite entries, ties to the lower index."""
    block = lp[lo:hi]
    idx = [i for i in np.flatnonzero(np.isfinite(block))]
    idx.sort(key=lambda i: (-block[i], i))
    return [int(i) for i in idx[:k]]


def _search(ex: _Expander, cfg: DecodeConfig, retain_s0: bool, drop_incomplete: bool) -> List[Hypothesis]:
    T, V = ex.enc.T, ex.V
    names = None if ex.trie is None else ex.trie.names
    beam = [ex.initial()]
    per_group = cfg.beam_size
    in_group = cfg.budget if cfg.dynamic_beam else cfg.beam_size
    for t in range(T):
        done: Dict = {}
        current = beam
        for r in range(cfg.max_symbols_per_frame + 1):
            expansions: Dict = {}
            for h in current:
                lp, exit_state = ex.logprobs(h, t)
                _merge(done, replace(h, score=float(h.score + lp[0]), frame=t + 1))
                if r == cfg.max_symbols_per_frame:
                    continue
                for tok in _top_tokens(lp, 1, 1 + V, per_group):
                    _merge(expansions, ex.extend(h, lp, exit_state, tok, False, t))
                if ex.trie is not None:
                    for tok in _top_tokens(lp, 1 + V, 1 + 2 * V, in_group):
                        _merge(expansions, ex.extend(h, lp, exit_state, tok, True, t))
            pool = [(h, True) for h in done.values()] + [(h, False) for h in expansions.values()]
            kept = _prune(pool, cfg, retain_s0)
            done = {h.key: h for h, d in kept if d}
            current = [h for h, d in kept if not d]
            if not current:
                break
        beam = sorted(done.values(), key=lambda h: _rank(h, True))
        for obs in OBSERVERS:
            obs(beam, BeamEvent(t, False, retain_s0, names))
    final = []
    for h in beam:
        f = ex.finalize(h, drop_incomplete)
        if f is not None:
            final.append(f)
    final.sort(key=lambda h: _rank(h, True))
    final = final[: cfg.beam_size]
    for obs in OBSERVERS:
        obs(final, BeamEvent(T, True, retain_s0, names))
    return final


def fnt_beam_search(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel,
                    cfg: DecodeConfig = DecodeConfig()) -> List[Hypothesis]:
    """Beam search over the blank + vocabulary distribution.

    Hypotheses with the same token sequence are merged by log-sum-exp.
    A class LM may be passed; only its surface-token entries are used.
    """
    return _search(_Expander(enc, blank, lm, None, NamePrior()), cfg, retain_s0=True, drop_incomplete=True)


def cfnt_beam_search(enc: EncoderScores, blank: BlankScorer, class_lm: LanguageModel, trie: NameTrie,
                     cfg: DecodeConfig = DecodeConfig(), prior: NamePrior = NamePrior()) -> List[Hypothesis]:
    """C-FNT beam search with the status machine and trie-constrained name block.

    Hypotheses are merged on (tokens, statuses). At least one S0 hypothesis
    survives every pruning step. With ``cfg.dynamic_beam`` the in-class
    hypotheses get ``cfg.budget`` slots of their own. Hypotheses still inside
    an unfinished name at the last frame are dropped.
    """
    return _search(_Expander(enc, blank, class_lm, trie, prior), cfg, retain_s0=True, drop_incomplete=True)


def cfnt_greedy(enc: EncoderScores, blank: BlankScorer, class_lm: LanguageModel, trie: NameTrie,
                max_symbols_per_frame: int = 8, prior: NamePrior = NamePrior()) -> Hypothesis:
    """Single-beam C-FNT search without S0 retention.

    May end inside an unfinished name; the hypothesis is returned as is.
    """
    cfg = DecodeConfig(beam_size=1, max_symbols_per_frame=max_symbols_per_frame)
    return _search(_Expander(enc, blank, class_lm, trie, prior), cfg, retain_s0=False, drop_incomplete=False)[0]


def fnt_greedy(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel,
               max_symbols_per_frame: int = 8) -> Hypothesis:
    lm_state, b_state = lm.initial_state(), blank.initial_state()
    tokens: List[int] = []
    score = 0.0
    for t in range(enc.T):
        for emitted in range(max_symbols_per_frame + 1):
            lp = emit_logprobs(blank.logit(t, b_state), fnt_vocab_logits(enc, t, lm, lm_state))
            k = 0 if emitted == max_symbols_per_frame else int(np.argmax(lp))
            score += lp[k]
            if k == 0:
                break
            tok = k - 1
            tokens.append(tok)
            lm_state = lm.advance(lm_state, tok)
            b_state = blank.advance(b_state, tok)
    return Hypothesis(tuple(tokens), (Status.S0,) * len(tokens), float(score), lm_state, b_state,
                      None, enc.T, (), None)
