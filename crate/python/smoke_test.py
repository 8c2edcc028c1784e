"""Smoke test for the `nmt` extension module.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/nmt-*.whl
"""

import math
import sys

import nmt


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    return cond


def main():
    results = []

    toks = nmt.tokenize("እናንተ ያመናችሁ ሆይ!")
    results.append(check(toks == ["እናንተ", "ያመናችሁ", "ሆይ"], "tokenize amharic"))
    results.append(check(nmt.tokenize("يَكْتُبَ", keep_diacritics=False) == ["يكتب"], "strip diacritics"))

    cand = [["the"] * 7]
    ref = [["the", "cat", "is", "on", "the", "mat"]]
    results.append(check(abs(nmt.ngram_precision(cand, ref, 1) - 2 / 7) < 1e-12, "clipped unigram precision"))
    report = nmt.corpus_bleu(ref, ref, smoothing="none")
    results.append(check(report.bleu == 1.0, "identical bleu"))
    results.append(check(abs(nmt.brevity_penalty(3, 6) - math.exp(-1)) < 1e-12, "brevity penalty"))
    pp = nmt.perplexity([math.log(0.5), math.log(0.25)])
    results.append(check(abs(pp - 2.8284271) < 1e-6, "perplexity"))

    lstm = nmt.Model(12, 12, cell="lstm", d=8, d_h=12, seed=3)
    gru = nmt.Model(12, 12, cell="gru", d=8, d_h=12, seed=3)
    results.append(check(gru.param_count < lstm.param_count, "gru smaller than lstm"))
    ids, attn = lstm.greedy_decode([4, 5, 6], max_len=5)
    results.append(check(1 <= len(ids) <= 5 and all(abs(sum(a) - 1) < 1e-9 for a in attn), "greedy decode"))

    pairs = [([4, 5, 6], [4, 5, 6]), ([7, 8], [7, 8]), ([9, 10, 11], [9, 10, 11])]
    losses = gru.fit(pairs, epochs=30, batch=1, lr=0.01)
    results.append(check(len(losses) == 30 and losses[-1] < losses[0], "fit lowers loss"))
    loss, count = gru.sequence_loss([4, 5, 6], [4, 5, 6, nmt.EOS])
    results.append(check(count == 4 and loss >= 0, "sequence loss"))

    try:
        nmt.Model(12, 12, cell="rnn")
        results.append(check(False, "bad cell rejected"))
    except ValueError:
        results.append(check(True, "bad cell rejected"))

    try:
        nmt.Translator.load("/nonexistent/model.anmt")
        results.append(check(False, "missing checkpoint raises"))
    except OSError:
        results.append(check(True, "missing checkpoint raises"))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
