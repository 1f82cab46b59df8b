"""Seeded toy instances: vocabularies, LMs, score tables, names and corpora.

All randomness comes from ``numpy.random.default_rng(seed)``; the same seed
and spec give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    CLASS_TAG,
    NameList,
    TaggedSentence,
    TokenSeq,
    Vocabulary,
    save_names,
    save_refs,
    save_vocab,
    surface,
)
from .name_trie import NameTrie
from .scoring import (
    BOS,
    EncoderScores,
    NgramLM,
    RnnLM,
    RnnWeights,
    TableBlankScorer,
    Utterance,
    save_model,
    save_scores,
)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    V: int = 24
    t_range: Tuple[int, int] = (8, 16)
    u_range: Tuple[int, int] = (4, 10)
    n_names: int = 20
    name_len_range: Tuple[int, int] = (1, 3)
    class_bias: float = 4.0
    n_utts: int = 200
    n_train: int = 3000
    mix_ratio: float = 1.0
    name_rate: float = 0.8
    noise: float = 0.8
    blank_buckets: int = 16

    def validate(self) -> None:
        lo, hi = self.u_range
        if not 1 <= lo <= hi:
            raise SpecError(f"bad u_range {self.u_range}")
        if not 1 <= self.t_range[0] <= self.t_range[1]:
            raise SpecError(f"bad t_range {self.t_range}")
        nlo, nhi = self.name_len_range
        if not 1 <= nlo <= nhi:
            raise SpecError(f"bad name_len_range {self.name_len_range}")
        if nhi > hi:
            raise SpecError(f"names up to {nhi} tokens cannot fit utterances of at most {hi} tokens")
        if self.V < 8:
            raise SpecError("V must be at least 8 to hold common words, triggers and name pieces")
        if self.class_bias < 0 or self.mix_ratio < 0:
            raise SpecError("class_bias and mix_ratio must be >= 0")
        if self.n_names < 0 or self.n_utts < 1:
            raise SpecError("n_names must be >= 0 and n_utts >= 1")
        if self.blank_buckets <= hi:
            raise SpecError("blank_buckets must exceed the longest utterance")


_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _syllable(i: int) -> str:
    c = _CONSONANTS[i % len(_CONSONANTS)]
    v = _VOWELS[(i // len(_CONSONANTS)) % len(_VOWELS)]
    extra = i // (len(_CONSONANTS) * len(_VOWELS))
    return c + v + (str(extra) if extra else "")


def make_vocab(V: int) -> Tuple[Vocabulary, Dict[str, List[int]]]:
    """Common words, name-initial pieces and continuation pieces.

    Returns the vocabulary and the id groups ``common``, ``initial``, ``cont``.
    """
    n_init = max(3, V // 4)
    n_cont = max(2, V // 6)
    n_common = V - n_init - n_cont
    common = [_syllable(i) for i in range(n_common)]
    initial = [_syllable(i + n_common).capitalize() for i in range(n_init)]
    cont = ["_" + _syllable(i + n_common + n_init) for i in range(n_cont)]
    vocab = Vocabulary(tuple(common + initial + cont))
    groups = {
        "common": list(range(n_common)),
        "initial": list(range(n_common, n_common + n_init)),
        "cont": list(range(n_common + n_init, V)),
    }
    return vocab, groups


def _make_names(rng, groups, count: int, lens: Tuple[int, int], exclude=()) -> List[TokenSeq]:
    seen = set(exclude)
    out: List[TokenSeq] = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 200 * (count + 1):
            raise SpecError(f"cannot draw {count} distinct names of length {lens}")
        n = int(rng.integers(lens[0], lens[1] + 1))
        name = [int(rng.choice(groups["initial"]))]
        for _ in range(n - 1):
            pool = groups["cont"] if rng.random() < 0.7 else groups["initial"]
            name.append(int(rng.choice(pool)))
        name = tuple(name)
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


@dataclass
class _Grammar:
    words: List[int]
    triggers: List[int]
    start: np.ndarray
    trans: np.ndarray       # rows: previous word (index into words), plus a post-name row
    name_rate: float

    def _draw(self, rng, dist) -> int:
        return self.words[int(rng.choice(len(self.words), p=dist))]

    def sentence(self, rng, length: int, names: Sequence[TokenSeq]) -> TaggedSentence:
        pos = {w: i for i, w in enumerate(self.words)}
        toks: List[int] = []
        spans = []
        prev = None
        while len(toks) < length:
            w = self._draw(rng, self.start if prev is None else self.trans[prev])
            toks.append(w)
            prev = pos[w]
            if w in self.triggers and rng.random() < self.name_rate:
                fits = [n for n in names if len(toks) + len(n) <= length]
                if fits:
                    name = fits[int(rng.integers(len(fits)))]
                    spans.append((len(toks), len(toks) + len(name)))
                    toks.extend(name)
                    prev = len(self.words)
        return TaggedSentence(tuple(toks), tuple(spans))


def _grammar(rng, groups, name_rate: float) -> _Grammar:
    words = groups["common"]
    n = len(words)
    n_trig = max(2, n // 6)
    triggers = [int(w) for w in rng.choice(words, size=n_trig, replace=False)]
    start = rng.dirichlet(np.full(n, 1.0))
    trans = rng.dirichlet(np.full(n, 1.0), size=n + 1)
    return _Grammar(list(words), sorted(triggers), start, trans, name_rate)


def tag_corpus(corpus: Sequence[Sequence[int]], names: NameList, class_id: int) -> Tuple[List[TaggedSentence], List[TokenSeq]]:
    """Exact longest-match name tagging.

    Returns the tagged originals and the class-tagged variants in which every
    name occurrence is replaced by ``class_id``.
    """
    trie = NameTrie.build(names)
    tagged, replaced = [], []
    for seq in corpus:
        seq = tuple(seq)
        hits = trie.longest_matches(seq)
        tagged.append(TaggedSentence(seq, tuple((s, e) for s, e, _ in hits)))
        out: List[int] = []
        i = 0
        for s, e, _ in hits:
            out.extend(seq[i:s])
            out.append(class_id)
            i = e
        out.extend(seq[i:])
        replaced.append(tuple(out))
    return tagged, replaced


def bigram_counts(corpus: Sequence[Sequence[int]], inventory: int, weight: float = 1.0,
                  class_weight: Optional[Tuple[int, float]] = None) -> np.ndarray:
    """Weighted bigram counts; row ``inventory`` is the BOS context."""
    counts = np.zeros((inventory + 1, inventory))
    for seq in corpus:
        prev = inventory
        for tok in seq:
            w = weight
            if class_weight is not None and tok == class_weight[0]:
                w *= class_weight[1]
            counts[prev, tok] += w
            prev = tok
    return counts


def bigram_lm(counts: np.ndarray, vocab_size: int, has_class: bool, alpha: float = 0.05) -> NgramLM:
    inventory = counts.shape[1]
    table = {}
    for row in range(inventory + 1):
        c = counts[row] + alpha
        ctx = (BOS,) if row == inventory else (row,)
        table[ctx] = c / c.sum()
    return NgramLM(2, vocab_size, table, has_class=has_class)


@dataclass
class Instance:
    spec: GenSpec
    seed: int
    vocab: Vocabulary
    groups: Dict[str, List[int]]
    names: NameList
    word_lm: NgramLM
    class_lm: NgramLM
    refs: List[TaggedSentence]
    utts: List[Utterance]
    train_original: List[TokenSeq]
    train_tagged: List[TokenSeq]
    confusable: Dict[int, int]

    def blank(self, i: int) -> TableBlankScorer:
        u = self.utts[i]
        return TableBlankScorer(u.blank_table, u.blank_hash)


def _scores_for(rng, ref: TaggedSentence, spec: GenSpec, groups, confusable) -> Utterance:
    Y = ref.tokens
    U = len(Y)
    T = int(rng.integers(max(spec.t_range[0], U + 1), max(spec.t_range[1], U + 1) + 1))
    frames = np.sort(rng.choice(T, size=U, replace=False)) if U else np.array([], dtype=int)
    V = spec.V
    z = rng.normal(0.0, spec.noise, size=(T, V))
    in_name = set()
    for s, e in ref.entity_spans:
        in_name.update(range(s, e))
    for u, (tok, t) in enumerate(zip(Y, frames)):
        if u in in_name:
            z[t, tok] += 3.0
            z[t, confusable[tok]] += 2.7
        else:
            z[t, tok] += 4.0
    # blank buckets count emitted tokens: low blank while behind schedule
    B = spec.blank_buckets
    due = np.array([np.sum(frames <= t) for t in range(T)])
    behind = np.arange(B)[None, :] < due[:, None]
    table = np.where(behind, -2.0, 3.0) + rng.normal(0.0, 0.3, size=(T, B))
    return Utterance(EncoderScores(z), table, blank_hash="length")


def gen_instance(seed: int, spec: GenSpec = GenSpec()) -> Instance:
    spec.validate()
    rng = np.random.default_rng(seed)
    vocab, groups = make_vocab(spec.V)
    names = _make_names(rng, groups, spec.n_names, spec.name_len_range)
    background = _make_names(rng, groups, max(spec.n_names, 10), spec.name_len_range, exclude=names)
    grammar = _grammar(rng, groups, spec.name_rate)
    confusable = {p: int(rng.choice(groups["common"])) for p in groups["initial"] + groups["cont"]}

    lo, hi = spec.u_range
    train = [grammar.sentence(rng, int(rng.integers(lo, hi + 1)), background).tokens
             for _ in range(spec.n_train)]
    _, train_tagged = tag_corpus(train, NameList(tuple(background)), vocab.class_id)

    word_lm = bigram_lm(bigram_counts(train, spec.V), spec.V, has_class=False)
    inv = spec.V + 1
    class_counts = bigram_counts(train, inv) + bigram_counts(
        train_tagged, inv, spec.mix_ratio, class_weight=(vocab.class_id, spec.class_bias))
    class_lm = bigram_lm(class_counts, spec.V, has_class=True)

    refs = []
    while len(refs) < spec.n_utts:
        want_name = bool(names) and rng.random() < spec.name_rate
        s = grammar.sentence(rng, int(rng.integers(lo, hi + 1)), names)
        if bool(s.entity_spans) == want_name:
            refs.append(s)
    utts = [_scores_for(rng, r, spec, groups, confusable) for r in refs]
    return Instance(spec, seed, vocab, groups, NameList(tuple(names)), word_lm, class_lm, refs, utts,
                    train, train_tagged, confusable)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_instance(inst: Instance, out_dir) -> dict:
    """Write every artifact under ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v = inst.vocab
    save_vocab(v, out / "vocab.txt")
    save_names(inst.names, v, out / "names.txt")
    save_model(inst.word_lm, out / "word_lm.json", v.hash)
    save_model(inst.class_lm, out / "class_lm.json", v.hash)
    save_scores(inst.utts, out / "scores.jsonl", v)
    save_refs(inst.refs, v, out / "refs.jsonl")
    (out / "train_original.txt").write_text("".join(surface(s, v) + "\n" for s in inst.train_original),
                                            encoding="utf-8")
    (out / "train_tagged.txt").write_text("".join(_tagged_text(s, v) + "\n" for s in inst.train_tagged),
                                          encoding="utf-8")
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "seed": inst.seed,
        "spec": asdict(inst.spec),
        "vocab_hash": v.hash,
        "files": {name: _sha256(out / name) for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _tagged_text(seq: Sequence[int], vocab: Vocabulary) -> str:
    parts = []
    run: List[int] = []
    for t in seq:
        if t == vocab.class_id:
            if run:
                parts.append(surface(run, vocab))
                run = []
            parts.append(CLASS_TAG)
        else:
            run.append(t)
    if run:
        parts.append(surface(run, vocab))
    return " ".join(parts)


# --- small random instances for oracle checks -------------------------------------


def random_ngram_lm(rng, vocab_size: int, order: int = 2, has_class: bool = False, eos: bool = False) -> NgramLM:
    from .scoring import all_contexts

    inv = vocab_size + (1 if has_class else 0)
    width = inv + (1 if eos else 0)
    table = {ctx: rng.dirichlet(np.ones(width)) for ctx in all_contexts(order, inv)}
    return NgramLM(order, vocab_size, table, has_class=has_class, eos=eos)


def random_rnn_lm(rng, vocab_size: int, hidden: int = 4, has_class: bool = False) -> RnnLM:
    inv = vocab_size + (1 if has_class else 0)
    cell = RnnWeights(rng.normal(0, 1, (inv, hidden)), rng.normal(0, 0.5, (hidden, hidden)),
                      rng.normal(0, 0.1, hidden))
    return RnnLM(vocab_size, cell, rng.normal(0, 1, (inv, hidden)), rng.normal(0, 0.5, inv), has_class=has_class)


def random_instance(rng, T: int, V: int, lm_type: str = "ngram", has_class: bool = False,
                    scale: float = 1.0, buckets: int = 7):
    """Random encoder scores, blank table and LM."""
    enc = EncoderScores(rng.normal(0.0, scale, (T, V)))
    blank = TableBlankScorer(rng.normal(0.0, scale, (T, buckets)))
    if lm_type == "ngram":
        lm = random_ngram_lm(rng, V, has_class=has_class)
    elif lm_type == "rnn":
        lm = random_rnn_lm(rng, V, has_class=has_class)
    else:
        raise ValueError(f"unknown lm type {lm_type!r}")
    return enc, blank, lm
