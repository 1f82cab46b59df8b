import json
import subprocess
import sys

import pytest

from cfnt.cli import EXIT_CHECK, EXIT_OK, EXIT_USAGE, main
from cfnt.core import Vocabulary, header_line, load_refs, load_vocab, save_vocab
from cfnt.lattice import forward_logprob
from cfnt.scoring import blank_scorer_for, lm_sequence_logprob, load_model, load_scores

GEN = ["--utts", "24", "--train", "500"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["gen", "--seed", "1", "--out", str(d), *GEN]) == EXIT_OK
    return d


def decode(capsys, corpus, out, *extra, model="class_lm.json"):
    args = ["decode", "--model", str(corpus / model), "--scores", str(corpus / "scores.jsonl"),
            "--vocab", str(corpus / "vocab.txt"), "--out", str(out), *extra]
    code, _, err = run(capsys, *args)
    assert code == EXIT_OK, err
    return [json.loads(line) for line in out.read_text().splitlines()]


def top1(rows):
    return {r["utt"]: r for r in rows if r["rank"] == 0}


class TestGen:
    def test_manifest_repeatable(self, capsys, tmp_path):
        _, a, _ = run(capsys, "gen", "--seed", "1", "--out", str(tmp_path / "a"), *GEN)
        _, b, _ = run(capsys, "gen", "--seed", "1", "--out", str(tmp_path / "b"), *GEN)
        assert a == b
        assert json.loads(a)["seed"] == 1

    def test_name_count(self, capsys, tmp_path):
        code, _, _ = run(capsys, "gen", "--v", "8", "--names", "5", "--out", str(tmp_path), *GEN)
        assert code == EXIT_OK
        lines = [ln for ln in (tmp_path / "names.txt").read_text().splitlines() if ln.strip()]
        assert len(lines) == 5

    def test_infeasible(self, capsys, tmp_path):
        code, _, err = run(capsys, "gen", "--name-len", "9", "--u-max", "4", "--out", str(tmp_path))
        assert code == EXIT_USAGE and "error" in err


class TestDecode:
    def test_reduction(self, capsys, corpus, tmp_path):
        a = decode(capsys, corpus, tmp_path / "f.jsonl", "--mode", "fnt")
        b = decode(capsys, corpus, tmp_path / "c.jsonl", "--mode", "cfnt", "--empty-name-list")
        assert [(r["utt"], r["tokens"], r["score"]) for r in a] == [(r["utt"], r["tokens"], r["score"]) for r in b]
        assert all(r["name_spans"] is None for r in a)

    def test_name_spans_populated(self, capsys, corpus, tmp_path):
        rows = top1(decode(capsys, corpus, tmp_path / "c.jsonl", "--mode", "cfnt",
                           "--name-list", str(corpus / "names.txt")))
        refs = load_refs(corpus / "refs.jsonl", load_vocab(corpus / "vocab.txt"))
        with_names = [i for i, r in enumerate(refs) if r.entity_spans]
        assert sum(bool(rows[i]["name_spans"]) for i in with_names) >= len(with_names) // 2
        for r in rows.values():
            for s, e, _ in r["name_spans"]:
                assert r["statuses"][s] == "S1"

    def test_dynamic_beam(self, capsys, corpus, tmp_path):
        names = ["--name-list", str(corpus / "names.txt")]
        fixed = top1(decode(capsys, corpus, tmp_path / "a.jsonl", "--mode", "cfnt", *names))
        dyn = top1(decode(capsys, corpus, tmp_path / "b.jsonl", "--mode", "cfnt", "--dynamic-beam", *names))
        assert fixed.keys() == dyn.keys()
        # dominance is not guaranteed per utterance; it must hold on most of them
        wins = sum(dyn[i]["score"] >= fixed[i]["score"] - 1e-12 for i in fixed)
        assert wins >= 0.9 * len(fixed)

    def test_greedy_modes(self, capsys, corpus, tmp_path):
        rows = decode(capsys, corpus, tmp_path / "g.jsonl", "--mode", "greedy-cfnt",
                      "--name-list", str(corpus / "names.txt"))
        assert [r["rank"] for r in rows] == [0] * 24
        rows = decode(capsys, corpus, tmp_path / "g2.jsonl", "--mode", "greedy-fnt", model="word_lm.json")
        assert len(rows) == 24

    def test_nbest_lines(self, capsys, corpus, tmp_path):
        rows = decode(capsys, corpus, tmp_path / "n.jsonl", "--mode", "fnt", "--beam", "3", model="word_lm.json")
        assert all(0 <= r["rank"] < 3 for r in rows)
        assert sorted({r["utt"] for r in rows}) == list(range(24))

    def test_vocab_mismatch(self, capsys, corpus, tmp_path):
        vocab = load_vocab(corpus / "vocab.txt")
        save_vocab(Vocabulary(vocab.tokens[::-1]), tmp_path / "other.txt")
        code, _, err = run(capsys, "decode", "--mode", "fnt", "--model", str(corpus / "word_lm.json"),
                           "--scores", str(corpus / "scores.jsonl"), "--vocab", str(tmp_path / "other.txt"))
        assert code == EXIT_USAGE and "hash" in err

    def test_class_lm_required(self, capsys, corpus):
        code, _, err = run(capsys, "decode", "--mode", "cfnt", "--model", str(corpus / "word_lm.json"),
                           "--scores", str(corpus / "scores.jsonl"), "--vocab", str(corpus / "vocab.txt"),
                           "--name-list", str(corpus / "names.txt"))
        assert code == EXIT_USAGE

    def test_deterministic(self, capsys, corpus, tmp_path):
        for name in ("x.jsonl", "y.jsonl"):
            decode(capsys, corpus, tmp_path / name, "--mode", "cfnt", "--dynamic-beam",
                   "--name-list", str(corpus / "names.txt"))
        assert (tmp_path / "x.jsonl").read_bytes() == (tmp_path / "y.jsonl").read_bytes()


EVAL_VOCAB = ("i", "will", "call", "loretta", "lynn", "flynn", "and", "john", "a", "b")


def eval_files(tmp_path, refs, hyps):
    vocab = Vocabulary(EVAL_VOCAB)
    save_vocab(vocab, tmp_path / "vocab.txt")
    with open(tmp_path / "refs.jsonl", "w") as f:
        f.write(header_line(vocab) + "\n")
        for text, spans in refs:
            f.write(json.dumps({"tokens": text.split(), "entity_spans": spans}) + "\n")
    with open(tmp_path / "hyps.jsonl", "w") as f:
        for i, (text, spans) in enumerate(hyps):
            f.write(json.dumps({"utt": i, "rank": 0, "tokens": text.split(), "name_spans": spans}) + "\n")
    return ["--refs", str(tmp_path / "refs.jsonl"), "--hyps", str(tmp_path / "hyps.jsonl"),
            "--vocab", str(tmp_path / "vocab.txt")]


class TestEval:
    def test_wer_example(self, capsys, tmp_path):
        args = eval_files(tmp_path, [("i will call loretta lynn", [[3, 5]])],
                          [("i will call loretta flynn", [])])
        code, out, _ = run(capsys, "eval", *args)
        assert code == EXIT_OK
        rep = json.loads(out)
        assert rep["wer"] == 0.2 and rep["substitutions"] == 1

    def test_half_half_with_report(self, capsys, tmp_path):
        args = eval_files(tmp_path, [("call loretta lynn and john", [[1, 3], [4, 5]])],
                          [("call loretta lynn and flynn", [[1, 3, 0], [4, 5, 1]])])
        out_path = tmp_path / "report.json"
        code, out, _ = run(capsys, "eval", *args, "--out", str(out_path), "--per-utt")
        assert code == EXIT_OK
        rep = json.loads(out_path.read_text())
        assert (rep["entity_precision"], rep["entity_recall"], rep["entity_f1"]) == (0.5, 0.5, 0.5)
        assert len(rep["per_utt"]) == 1
        header, values = out.splitlines()
        assert header.split("\t") == ["wer", "precision", "recall", "f1"]
        assert values.split("\t")[1:] == ["0.500000"] * 3
        png = tmp_path / "report.png"
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_degenerate(self, capsys, tmp_path):
        args = eval_files(tmp_path, [("a b", [])], [("a b", [])])
        code, out, _ = run(capsys, "eval", *args, "--no-figure")
        rep = json.loads(out)
        assert rep["entity_f1"] == 0.0 and rep["degenerate"] is True

    def test_pairing_error(self, capsys, tmp_path):
        args = eval_files(tmp_path, [("a", []), ("b", [])], [("a", [])])
        code, _, err = run(capsys, "eval", *args)
        assert code == EXIT_USAGE and "hypotheses" in err

    def test_spans_mode_needs_spans(self, capsys, tmp_path):
        args = eval_files(tmp_path, [("a", [])], [("a", None)])
        code, _, _ = run(capsys, "eval", *args)
        assert code == EXIT_USAGE

    def test_figure_deterministic(self, capsys, tmp_path):
        args = eval_files(tmp_path, [("call loretta lynn", [[1, 3]])], [("call loretta flynn", [])])
        run(capsys, "eval", *args, "--out", str(tmp_path / "r1.json"))
        run(capsys, "eval", *args, "--out", str(tmp_path / "r2.json"))
        assert (tmp_path / "r1.png").read_bytes() == (tmp_path / "r2.png").read_bytes()


class TestOracle:
    def test_acceptance_run(self, capsys):
        code, out, _ = run(capsys, "oracle", "--max-t", "4", "--max-u", "3", "--trials", "500")
        assert code == EXIT_OK and out.startswith("PASS trials=500")

    def test_trivial(self, capsys):
        code, out, _ = run(capsys, "oracle", "--max-t", "1", "--max-u", "0", "--trials", "1")
        assert code == EXIT_OK and out.startswith("PASS")

    def test_corrupt_model(self, capsys, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        code, _, _ = run(capsys, "oracle", "--trials", "1", "--model", str(tmp_path / "bad.json"))
        assert code == EXIT_USAGE

    def test_with_model(self, capsys, corpus):
        code, out, _ = run(capsys, "oracle", "--trials", "20", "--model", str(corpus / "word_lm.json"))
        assert code == EXIT_OK

    def test_mismatch_exit_code(self, capsys, monkeypatch):
        import cfnt.cli as cli

        monkeypatch.setattr(cli, "oracle_trial", lambda seed, t, u, lm=None: (1e-3, 1, 0, 2))
        code, out, _ = run(capsys, "oracle", "--trials", "3", "--seed", "7")
        assert code == EXIT_CHECK and out.startswith("FAIL seed=7")


class TestLoss:
    def loss_rows(self, capsys, corpus, *extra):
        code, out, err = run(capsys, "loss", "--model", str(corpus / "word_lm.json"),
                             "--scores", str(corpus / "scores.jsonl"), "--refs", str(corpus / "refs.jsonl"),
                             "--vocab", str(corpus / "vocab.txt"), *extra)
        assert code == EXIT_OK, err
        lines = out.splitlines()
        assert lines[0].split("\t") == ["utt", "J_t", "lm_logprob", "J_f"]
        return [[float(x) for x in ln.split("\t")] for ln in lines[1:]]

    def test_lambda_zero(self, capsys, corpus):
        for _, j_t, _, j_f in self.loss_rows(capsys, corpus, "--lambda-f", "0"):
            assert j_f == j_t

    def test_default_lambda_hand_composition(self, capsys, corpus):
        rows = self.loss_rows(capsys, corpus)
        vocab = load_vocab(corpus / "vocab.txt")
        lm, obj = load_model(corpus / "word_lm.json", vocab.hash)
        utts = load_scores(corpus / "scores.jsonl", vocab.size, vocab)
        refs = load_refs(corpus / "refs.jsonl", vocab)
        assert len(rows) == len(refs)
        for (i, j_t, lm_lp, j_f), utt, ref in zip(rows, utts, refs):
            fwd = forward_logprob(utt.enc, blank_scorer_for(utt, obj), lm, ref.tokens)
            assert j_t == -fwd
            assert lm_lp == lm_sequence_logprob(lm, ref.tokens)
            assert j_f == pytest.approx(-fwd - 0.1 * lm_lp, abs=1e-12)

    def test_negative_lambda(self, capsys, corpus):
        with pytest.raises(SystemExit) as e:
            main(["loss", "--lambda-f", "-1", "--model", "m", "--scores", "s", "--refs", "r", "--vocab", "v"])
        assert e.value.code == EXIT_USAGE


def test_module_entry_point(corpus):
    proc = subprocess.run([sys.executable, "-m", "cfnt.cli", "oracle", "--trials", "5"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("PASS")
