"""Transducer alignment lattice under the factorized emission model.

At lattice node ``(t, u)`` the model emits either blank, moving to frame
``t + 1``, or the next label, moving to ``u + 1``. A complete alignment of
``U`` labels over ``T`` frames ends with the blank that leaves frame
``T - 1``, so there are ``C(T + U - 1, U)`` of them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .scoring import (
    BlankScorer,
    EncoderScores,
    LanguageModel,
    emit_logprobs,
    fnt_vocab_logits,
    lm_sequence_logprob,
)

BRUTE_FORCE_LIMIT = 16
BLANK = -1


class EmptyInputError(ValueError):
    pass


class OracleScaleError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lambda_f: float = 0.1

    def __post_init__(self):
        if not (self.lambda_f >= 0 and math.isfinite(self.lambda_f)):
            raise ValueError(f"lambda_f must be a finite value >= 0, got {self.lambda_f}")


def node_logprobs(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel, Y: Sequence[int]) -> List[List[np.ndarray]]:
    """Emission log-distributions ``[blank, tokens...]`` for every node ``(t, u)``."""
    lm_state = lm.initial_state()
    b_state = blank.initial_state()
    per_u = []
    for u in range(len(Y) + 1):
        per_u.append([
            emit_logprobs(blank.logit(t, b_state), fnt_vocab_logits(enc, t, lm, lm_state))
            for t in range(enc.T)
        ])
        if u < len(Y):
            lm_state = lm.advance(lm_state, Y[u])
            b_state = blank.advance(b_state, Y[u])
    # index as [t][u]
    return [[per_u[u][t] for u in range(len(Y) + 1)] for t in range(enc.T)]


def forward_logprob(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel, Y: Sequence[int]) -> float:
    """log P(Y | x) by the (t, u) forward recursion."""
    if enc.T == 0:
        raise EmptyInputError("no frames")
    Y = tuple(int(y) for y in Y)
    lp = node_logprobs(enc, blank, lm, Y)
    T, U = enc.T, len(Y)
    alpha = np.full((T, U + 1), -np.inf)
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                a = 0.0
            else:
                a = -np.inf
                if t > 0:
                    a = np.logaddexp(a, alpha[t - 1, u] + lp[t - 1][u][0])
                if u > 0:
                    a = np.logaddexp(a, alpha[t, u - 1] + lp[t][u - 1][1 + Y[u - 1]])
            alpha[t, u] = a
    return float(alpha[T - 1, U] + lp[T - 1][U][0])


def alignments(T: int, U: int) -> Iterator[Tuple[int, ...]]:
    """Every alignment as a tuple of ``BLANK`` / label positions ``0..U-1``."""
    n = T + U - 1
    for emit_pos in itertools.combinations(range(n), U):
        seq = [BLANK] * n
        for k, p in enumerate(emit_pos):
            seq[p] = k
        yield tuple(seq) + (BLANK,)


def alignment_logprob(alignment: Sequence[int], enc: EncoderScores, blank: BlankScorer,
                      lm: LanguageModel, Y: Sequence[int]) -> float:
    t, u = 0, 0
    lm_state, b_state = lm.initial_state(), blank.initial_state()
    total = 0.0
    for sym in alignment:
        lp = emit_logprobs(blank.logit(t, b_state), fnt_vocab_logits(enc, t, lm, lm_state))
        if sym == BLANK:
            total += lp[0]
            t += 1
        else:
            tok = Y[u]
            total += lp[1 + tok]
            lm_state = lm.advance(lm_state, tok)
            b_state = blank.advance(b_state, tok)
            u += 1
    assert t == enc.T and u == len(Y)
    return float(total)


def brute_force_logprob(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel, Y: Sequence[int]) -> float:
    """Same quantity as ``forward_logprob``, by enumerating every alignment."""
    Y = tuple(int(y) for y in Y)
    if enc.T == 0:
        raise EmptyInputError("no frames")
    if enc.T + len(Y) > BRUTE_FORCE_LIMIT:
        raise OracleScaleError(f"T + U = {enc.T + len(Y)} exceeds enumeration limit {BRUTE_FORCE_LIMIT}")
    terms = [alignment_logprob(a, enc, blank, lm, Y) for a in alignments(enc.T, len(Y))]
    m = max(terms)
    if m == -math.inf:
        return m
    return float(m + math.log(math.fsum(math.exp(x - m) for x in terms)))


def fnt_loss(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel, Y: Sequence[int],
             cfg: LossConfig = LossConfig()) -> float:
    """Transducer loss plus the weighted LM cross-entropy term."""
    if cfg.lambda_f == 0:
        return transducer_loss(enc, blank, lm, Y)
    return transducer_loss(enc, blank, lm, Y) - cfg.lambda_f * lm_sequence_logprob(lm, Y)


def transducer_loss(enc: EncoderScores, blank: BlankScorer, lm: LanguageModel, Y: Sequence[int]) -> float:
    return -forward_logprob(enc, blank, lm, Y)
