"""Word error rate and alignment-anchored entity precision / recall / F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

from .core import NameList, TaggedSentence, Vocabulary, surface, token_span_to_words
from .name_trie import NameTrie

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"

# (op, ref index or None, hyp index or None)
AlignOp = Tuple[str, Optional[int], Optional[int]]


class PairingError(ValueError):
    pass


class ModeError(ValueError):
    pass


def word_align(ref: Sequence[str], hyp: Sequence[str]) -> List[AlignOp]:
    """Minimum-edit alignment with unit costs.

    The backtrace runs from the end and prefers match, then substitution,
    then deletion, then insertion among equal-cost predecessors.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            d[i][j] = min(diag, d[i - 1][j] + 1, d[i][j - 1] + 1)
    ops: List[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i][j] == d[i - 1][j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            ops.append((DEL, i - 1, None))
            i -= 1
        else:
            ops.append((INS, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def edit_distance(ops: Sequence[AlignOp]) -> int:
    return sum(op != MATCH for op, _, _ in ops)


@dataclass
class EvalReport:
    wer: float = 0.0
    ref_words: int = 0
    hits: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    entity_precision: float = 0.0
    entity_recall: float = 0.0
    entity_f1: float = 0.0
    ref_entities: int = 0
    hyp_entities: int = 0
    correct_entities: int = 0
    recalled_entities: int = 0
    degenerate: bool = False
    per_utt: Optional[List[dict]] = None

    def to_dict(self, per_utt: bool = False) -> dict:
        d = asdict(self)
        if not per_utt:
            d.pop("per_utt")
        return d


def wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> EvalReport:
    """Corpus WER: pooled edit operations over pooled reference length."""
    if len(refs) != len(hyps):
        raise PairingError(f"{len(refs)} references but {len(hyps)} hypotheses")
    rep = EvalReport(per_utt=[])
    for ref, hyp in zip(refs, hyps):
        counts = {MATCH: 0, SUB: 0, DEL: 0, INS: 0}
        for op, _, _ in word_align(ref, hyp):
            counts[op] += 1
        rep.hits += counts[MATCH]
        rep.substitutions += counts[SUB]
        rep.deletions += counts[DEL]
        rep.insertions += counts[INS]
        rep.ref_words += len(ref)
        rep.per_utt.append({
            "ref_words": len(ref),
            "errors": counts[SUB] + counts[DEL] + counts[INS],
        })
    errors = rep.substitutions + rep.deletions + rep.insertions
    rep.wer = errors / max(1, rep.ref_words)
    return rep


@dataclass(frozen=True)
class DecodedUtterance:
    """Top hypothesis of one utterance; ``name_spans`` is None for plain output."""

    tokens: Tuple[int, ...]
    name_spans: Optional[Tuple[Tuple[int, int], ...]] = None


def _ratio(num: int, den: int) -> Tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def entity_prf(refs: Sequence[TaggedSentence], hyps: Sequence[DecodedUtterance], vocab: Vocabulary,
               names: Optional[NameList] = None, mode: str = "spans") -> EvalReport:
    """Occurrence-level entity scores over word-aligned sentences.

    A reference entity is recalled when every word in it aligns as a match.
    A hypothesized entity is correct when every word in it aligns as a match
    onto exactly the words of a reference entity.
    """
    if len(refs) != len(hyps):
        raise PairingError(f"{len(refs)} references but {len(hyps)} hypotheses")
    if mode not in ("spans", "match"):
        raise ModeError(f"unknown entity mode {mode!r}")
    trie = None
    if mode == "match":
        if names is None:
            raise ModeError("mode 'match' needs a name list")
        trie = NameTrie.build(names)
    rep = EvalReport(per_utt=[])
    for k, (ref, hyp) in enumerate(zip(refs, hyps)):
        if mode == "spans":
            if hyp.name_spans is None:
                raise ModeError(f"utterance {k}: mode 'spans' needs hypotheses with name spans")
            hyp_spans = [tuple(s[:2]) for s in hyp.name_spans]
        else:
            hyp_spans = [(s, e) for s, e, _ in trie.longest_matches(hyp.tokens)]
        ref_words = surface(ref.tokens, vocab).split()
        hyp_words = surface(hyp.tokens, vocab).split()
        ops = word_align(ref_words, hyp_words)
        ref_ok = [False] * len(ref_words)
        hyp_to_ref = [None] * len(hyp_words)
        for op, i, j in ops:
            if op == MATCH:
                ref_ok[i] = True
                hyp_to_ref[j] = i
        ref_ents = {token_span_to_words(s, ref.tokens, vocab) for s in ref.entity_spans}
        recalled = sum(all(ref_ok[i] for i in range(a, b)) for a, b in ref_ents)
        correct = 0
        for span in hyp_spans:
            a, b = token_span_to_words(span, hyp.tokens, vocab)
            mapped = [hyp_to_ref[j] for j in range(a, b)]
            if None in mapped:
                continue
            if mapped == list(range(mapped[0], mapped[0] + len(mapped))) and (mapped[0], mapped[-1] + 1) in ref_ents:
                correct += 1
        rep.ref_entities += len(ref.entity_spans)
        rep.hyp_entities += len(hyp_spans)
        rep.recalled_entities += recalled
        rep.correct_entities += correct
        rep.per_utt.append({
            "ref_entities": len(ref.entity_spans),
            "hyp_entities": len(hyp_spans),
            "recalled": recalled,
            "correct": correct,
        })
    rep.entity_precision, p_deg = _ratio(rep.correct_entities, rep.hyp_entities)
    rep.entity_recall, r_deg = _ratio(rep.recalled_entities, rep.ref_entities)
    p, r = rep.entity_precision, rep.entity_recall
    rep.entity_f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    rep.degenerate = p_deg or r_deg
    return rep


def evaluate(refs: Sequence[TaggedSentence], hyps: Sequence[DecodedUtterance], vocab: Vocabulary,
             names: Optional[NameList] = None, mode: str = "spans") -> EvalReport:
    """WER and entity scores in one report."""
    w = wer([surface(r.tokens, vocab).split() for r in refs],
            [surface(h.tokens, vocab).split() for h in hyps])
    e = entity_prf(refs, hyps, vocab, names, mode)
    per_utt = [{**a, **b} for a, b in zip(w.per_utt, e.per_utt)]
    return EvalReport(
        wer=w.wer, ref_words=w.ref_words, hits=w.hits, substitutions=w.substitutions,
        deletions=w.deletions, insertions=w.insertions,
        entity_precision=e.entity_precision, entity_recall=e.entity_recall, entity_f1=e.entity_f1,
        ref_entities=e.ref_entities, hyp_entities=e.hyp_entities, correct_entities=e.correct_entities,
        recalled_entities=e.recalled_entities, degenerate=e.degenerate, per_utt=per_utt,
    )
