"""Command-line entry point: gen, decode, eval, oracle and loss."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import FormatError, TokenizationError, load_names, load_refs, load_vocab, read_jsonl
from .decoder import DecodeConfig, cfnt_beam_search, cfnt_greedy, fnt_beam_search, fnt_greedy
from .evaluation import DecodedUtterance, ModeError, PairingError, evaluate
from .lattice import BRUTE_FORCE_LIMIT, LossConfig, OracleScaleError, brute_force_logprob, forward_logprob, fnt_loss
from .name_trie import NameTrie
from .scoring import InventoryError, blank_scorer_for, lm_sequence_logprob, load_model, load_scores
from .toygen import GenSpec, SpecError, gen_instance, random_instance, write_instance

log = logging.getLogger("cfnt")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
ORACLE_TOL = 1e-10

# errors that mean bad input rather than a failed check
INPUT_ERRORS = (FormatError, SpecError, PairingError, ModeError, TokenizationError, InventoryError,
                OracleScaleError, OSError, ValueError, KeyError)


class UsageError(ValueError):
    pass


# --- gen -------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = GenSpec(
        V=args.v,
        t_range=(args.t_min, args.t_max),
        u_range=(args.u_min, args.u_max),
        n_names=args.names,
        name_len_range=(1, args.name_len),
        class_bias=args.class_bias,
        n_utts=args.utts,
        n_train=args.train,
        mix_ratio=args.mix_ratio,
        name_rate=args.name_rate,
        noise=args.noise,
        blank_buckets=max(16, args.u_max + 1),
    )
    spec.validate()
    inst = gen_instance(args.seed, spec)
    manifest = write_instance(inst, args.out)
    log.info("wrote %d utterances to %s", len(inst.refs), args.out)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


# --- decode ----------------------------------------------------------------


def _load_trie(args, vocab) -> NameTrie:
    if args.empty_name_list:
        return NameTrie()
    if args.name_list is None:
        return NameTrie()
    return NameTrie.build(load_names(args.name_list, vocab))


def cmd_decode(args) -> int:
    vocab = load_vocab(args.vocab)
    lm, _ = load_model(args.model, vocab.hash)
    if lm.vocab_size != vocab.size:
        raise FormatError(f"model has {lm.vocab_size} surface tokens, vocabulary has {vocab.size}")
    utts = load_scores(args.scores, vocab.size, vocab)
    model_obj = json.loads(Path(args.model).read_text(encoding="utf-8"))
    cfnt = args.mode in ("cfnt", "greedy-cfnt")
    trie = _load_trie(args, vocab) if cfnt else NameTrie()
    if cfnt and not lm.has_class and not trie.empty:
        raise UsageError(f"mode {args.mode} with a name list needs a class LM")
    if args.mode in ("fnt", "greedy-fnt") and (args.name_list or args.empty_name_list):
        log.warning("name list ignored in mode %s", args.mode)
    cfg = DecodeConfig(beam_size=args.beam, dynamic_beam=args.dynamic_beam,
                       in_class_budget=args.in_class_budget, max_symbols_per_frame=args.max_symbols)

    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i, utt in enumerate(utts):
            blank = blank_scorer_for(utt, model_obj)
            if args.mode == "fnt":
                nbest = fnt_beam_search(utt.enc, blank, lm, cfg)
            elif args.mode == "cfnt":
                nbest = cfnt_beam_search(utt.enc, blank, lm, trie, cfg)
            elif args.mode == "greedy-fnt":
                nbest = [fnt_greedy(utt.enc, blank, lm, args.max_symbols)]
            else:
                nbest = [cfnt_greedy(utt.enc, blank, lm, trie, args.max_symbols)]
            for rank, h in enumerate(nbest):
                row = {"utt": i, "rank": rank, **h.to_json(vocab)}
                if not cfnt:
                    # plain output: entities can only be found by matching
                    row["name_spans"] = None
                out.write(json.dumps(row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("decoded %d utterances in mode %s", len(utts), args.mode)
    return EXIT_OK


# --- eval ------------------------------------------------------------------


def read_top1(path, vocab) -> List[DecodedUtterance]:
    """Rank-0 rows of a decode output file, in utterance order."""
    best = {}
    for row in read_jsonl(path, vocab):
        try:
            if row.get("rank", 0) != 0:
                continue
            spans = row.get("name_spans")
            best[int(row["utt"])] = DecodedUtterance(
                vocab.ids(row["tokens"]),
                None if spans is None else tuple((int(s[0]), int(s[1])) for s in spans),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"{path}: bad decode row: {e}") from None
    if sorted(best) != list(range(len(best))):
        raise FormatError(f"{path}: utterance ids are not 0..{len(best) - 1}")
    return [best[i] for i in range(len(best))]


def cmd_eval(args) -> int:
    vocab = load_vocab(args.vocab)
    refs = load_refs(args.refs, vocab)
    hyps = read_top1(args.hyps, vocab)
    names = load_names(args.name_list, vocab) if args.name_list else None
    rep = evaluate(refs, hyps, vocab, names, args.entity_mode)
    text = json.dumps(rep.to_dict(args.per_utt), indent=2, sort_keys=True) + "\n"
    figure = args.figure
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        if figure is None:
            figure = str(Path(args.out).with_suffix(".png"))
    else:
        sys.stdout.write(text)
    if figure and not args.no_figure:
        from .plotting import report_figure

        report_figure(rep, figure, title=args.title)
        log.info("figure written to %s", figure)
    if args.out:
        # the report went to a file; stdout gets a tab-delimited summary
        print("wer\tprecision\trecall\tf1")
        print("%.6f\t%.6f\t%.6f\t%.6f" % (rep.wer, rep.entity_precision, rep.entity_recall, rep.entity_f1))
    return EXIT_OK


# --- oracle ----------------------------------------------------------------


def oracle_trial(seed: int, max_t: int, max_u: int, lm=None, blank_buckets: int = 7):
    """One forward-vs-enumeration comparison; returns (difference, T, U, V)."""
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, max_t + 1))
    U = int(rng.integers(0, max_u + 1))
    if lm is None:
        V = int(rng.integers(2, 5))
        enc, blank, lm_ = random_instance(rng, T, V, lm_type=("ngram", "rnn")[seed % 2], buckets=blank_buckets)
    else:
        V = lm.vocab_size
        enc, blank, _ = random_instance(rng, T, V, buckets=blank_buckets)
        lm_ = lm
    Y = tuple(int(y) for y in rng.integers(0, V, size=U))
    d = abs(forward_logprob(enc, blank, lm_, Y) - brute_force_logprob(enc, blank, lm_, Y))
    return d, T, U, V


def cmd_oracle(args) -> int:
    if args.max_t < 1 or args.max_u < 0 or args.trials < 1:
        raise UsageError("need --max-t >= 1, --max-u >= 0, --trials >= 1")
    if args.max_t + args.max_u > BRUTE_FORCE_LIMIT:
        raise OracleScaleError(f"max T + U = {args.max_t + args.max_u} exceeds {BRUTE_FORCE_LIMIT}")
    lm = None
    if args.model:
        lm, _ = load_model(args.model)
    worst = 0.0
    for k in range(args.trials):
        seed = args.seed + k
        d, T, U, V = oracle_trial(seed, args.max_t, args.max_u, lm)
        worst = max(worst, d)
        if not d <= ORACLE_TOL:
            print(f"FAIL seed={seed} T={T} U={U} V={V} diff={d:.3e}")
            return EXIT_CHECK
    print(f"PASS trials={args.trials} max_abs_diff={worst:.3e}")
    return EXIT_OK


# --- loss ------------------------------------------------------------------


def cmd_loss(args) -> int:
    cfg = LossConfig(args.lambda_f)
    vocab = load_vocab(args.vocab)
    lm, model_obj = load_model(args.model, vocab.hash)
    utts = load_scores(args.scores, vocab.size, vocab)
    refs = load_refs(args.refs, vocab)
    if len(refs) != len(utts):
        raise PairingError(f"{len(refs)} references but {len(utts)} utterances")
    print("utt\tJ_t\tlm_logprob\tJ_f")
    for i, (utt, ref) in enumerate(zip(utts, refs)):
        blank = blank_scorer_for(utt, model_obj)
        j_t = -forward_logprob(utt.enc, blank, lm, ref.tokens)
        lm_lp = lm_sequence_logprob(lm, ref.tokens)
        j_f = fnt_loss(utt.enc, blank, lm, ref.tokens, cfg)
        print(f"{i}\t{j_t!r}\t{lm_lp!r}\t{j_f!r}")
    return EXIT_OK


# --- wiring ----------------------------------------------------------------


def _nonneg_float(s: str) -> float:
    x = float(s)
    if not (x >= 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got {s}")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfnt", description="Class-based factorized transducer toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded toy corpus")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--v", type=int, default=24, help="surface vocabulary size")
    g.add_argument("--names", type=int, default=20, help="name list size")
    g.add_argument("--name-len", type=int, default=3, help="longest name in tokens")
    g.add_argument("--u-min", type=int, default=4)
    g.add_argument("--u-max", type=int, default=10)
    g.add_argument("--t-min", type=int, default=8)
    g.add_argument("--t-max", type=int, default=16)
    g.add_argument("--utts", type=int, default=200)
    g.add_argument("--train", type=int, default=3000, help="LM training sentences")
    g.add_argument("--class-bias", type=float, default=4.0)
    g.add_argument("--mix-ratio", type=float, default=1.0, help="weight of the tagged LM stream")
    g.add_argument("--name-rate", type=float, default=0.8)
    g.add_argument("--noise", type=float, default=0.8)
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("decode", help="decode encoder scores")
    d.add_argument("--mode", choices=("fnt", "cfnt", "greedy-fnt", "greedy-cfnt"), default="cfnt")
    d.add_argument("--beam", type=int, default=5)
    d.add_argument("--dynamic-beam", action="store_true")
    d.add_argument("--in-class-budget", type=int, default=None)
    d.add_argument("--max-symbols", type=int, default=8, help="emissions allowed per frame")
    names = d.add_mutually_exclusive_group()
    names.add_argument("--name-list")
    names.add_argument("--empty-name-list", action="store_true")
    d.add_argument("--model", required=True)
    d.add_argument("--scores", required=True)
    d.add_argument("--vocab", required=True)
    d.add_argument("--out", help="output JSON lines (default stdout)")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score decodes against references")
    e.add_argument("--refs", required=True)
    e.add_argument("--hyps", required=True)
    e.add_argument("--vocab", required=True)
    e.add_argument("--name-list")
    e.add_argument("--entity-mode", choices=("spans", "match"), default="spans")
    e.add_argument("--out", help="report.json path (default stdout)")
    e.add_argument("--per-utt", action="store_true")
    e.add_argument("--figure", help="PNG path (default: next to --out)")
    e.add_argument("--no-figure", action="store_true")
    e.add_argument("--title", default=None)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="forward recursion vs alignment enumeration")
    o.add_argument("--max-t", type=int, default=4)
    o.add_argument("--max-u", type=int, default=3)
    o.add_argument("--trials", type=int, default=500)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--model", help="use this LM instead of random ones")
    o.set_defaults(func=cmd_oracle)

    lo = sub.add_parser("loss", help="per-utterance transducer and fused losses")
    lo.add_argument("--lambda-f", type=_nonneg_float, default=0.1)
    lo.add_argument("--model", required=True)
    lo.add_argument("--scores", required=True)
    lo.add_argument("--refs", required=True)
    lo.add_argument("--vocab", required=True)
    lo.set_defaults(func=cmd_loss)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"cfnt {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
