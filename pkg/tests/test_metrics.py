import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lenlab import metrics as MX
from lenlab import model as M
from lenlab.trainer import evaluate_loss


def lev_oracle(a, b):
    d = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    d[:, 0] = range(len(a) + 1)
    d[0, :] = range(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (a[i - 1] != b[j - 1]))
    return int(d[-1, -1])


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(x in it for x in sub)


def lcs_brute(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        if any(is_subsequence(c, long_) for c in itertools.combinations(short, k)):
            return k
    return 0


def test_levenshtein_matches_dp_oracle_on_1000_pairs():
    rng = random.Random(0)
    for _ in range(1000):
        a = "".join(rng.choice("abc d") for _ in range(rng.randint(0, 12)))
        b = "".join(rng.choice("abc d") for _ in range(rng.randint(0, 12)))
        assert MX.levenshtein(a, b) == lev_oracle(a, b)
    assert MX.levenshtein("kitten", "sitting") == 3


def test_levenshtein_similarity():
    assert MX.levenshtein_similarity("", "") == 1.0
    assert MX.levenshtein_similarity("abcd", "abce") == 0.75
    assert MX.levenshtein_similarity("ab", "") == 0.0


@given(st.lists(st.sampled_from("abcd"), max_size=12), st.lists(st.sampled_from("abcd"), max_size=12))
def test_lcs_matches_brute_force(a, b):
    assert MX.lcs_length(a, b) == lcs_brute(a, b)


def test_rouge_l_fixture():
    assert MX.rouge_l_prf("a c e", "a b c d e") == pytest.approx((1.0, 0.6, 0.75))
    assert MX.rouge_l_prf("", "") == (1.0, 1.0, 1.0)
    assert MX.rouge_l("x", "y") == 0.0


def test_chrf_fixture():
    # orders 1..4 give F = 3/4, 2/3, 1/2, 0; orders 5 and 6 have no n-grams
    assert round(MX.chrf("abcd", "abce"), 4) == 47.9167
    assert MX.chrf("a b", "ab") == 100.0
    assert MX.chrf("", "") == 100.0
    assert MX.chrf("x", "") == 0.0


def test_chrf_f_beta_weights_recall():
    # unigrams only: P = 1, R = 1/2, F2 = 5 * 0.5 / (4 + 0.5)
    assert MX.chrf("a", "ab", max_order=1) == pytest.approx(100 * 2.5 / 4.5)


def test_bleu_two_sentence_corpus():
    # clipped precisions 5/6, 3/4, 2/2, 1/1; equal lengths so no brevity penalty
    assert round(MX.bleu(["a b c d", "a b"], ["a b c d", "a c"]), 4) == round(100 * 0.625 ** 0.25, 4) == 88.9140


def test_bleu_smoothing_and_brevity():
    # precisions 2/3, 1/2, zero matches of 1 trigram -> 1/2, zero of 0 four-grams -> 1/1; BP = exp(1 - 4/3)
    want = 100 * math.exp(1 - 4 / 3) * (1 / 6) ** 0.25
    assert round(MX.bleu(["a b c"], ["a b d e"]), 4) == round(want, 4) == 45.7823
    assert MX.bleu(["x y"], ["a b"]) == 0.0
    assert MX.bleu([""], ["a"]) == 0.0
    with pytest.raises(ValueError):
        MX.bleu([], [])
    with pytest.raises(ValueError):
        MX.bleu(["a"], ["a", "b"])


def test_meteor_fixture():
    # m = 4, P = 1, R = 2/3, two chunks: F = (20/3) / (29/3) times 1 - 0.5 * (1/2)^3
    assert round(MX.meteor("a b c d", "a b x c d y"), 4) == round(20 / 29 * 0.9375, 4) == 0.6466
    assert MX.meteor("b a", "a b") == 0.5  # F = 1, two single-token chunks
    assert MX.meteor("a", "b") == 0.0
    assert MX.meteor("a b", "a b") == pytest.approx(1 - 0.5 / 8)


def test_exact_match_normalizes_whitespace():
    assert MX.exact_match(" a  b ", "a b") == 1
    assert MX.exact_match("a b", "ab") == 0


def test_cross_entropy_matches_trainer_loss():
    cfg = M.ModelConfig(12, "alibi", d_model=16, enc_layers=1, enc_heads=2, dec_layers=1, dec_heads=2,
                        enc_max_len=16, dec_max_len=6, head_dim=8, ffn_mult=2)
    m = M.build_model(cfg, seed=0)
    data = [([5, 6, 7], [8, 1]), ([9, 10], [11, 6, 1]), ([5], [1])]
    assert abs(MX.cross_entropy(m, data, batch_size=2) - evaluate_loss(m, data)) < 1e-6


def test_avg_and_mix_delta_values():
    assert MX.avg_delta(20, [10, 5]) == 62.5
    assert MX.round_half_even(MX.avg_delta(10.81, [2.91, 0.50])) == 84.23
    assert MX.round_half_even(MX.mix_delta(45.47, 42.97)) == 5.82
    assert MX.round_half_even(MX.mix_delta(9.85, 10.81)) == -8.88
    assert MX.avg_delta(0, [1]) is None and MX.mix_delta(1, 0) is None
    assert MX.round_half_even(0.125) == 0.12 and MX.round_half_even(0.135) == 0.14


def test_evaluate_aggregates():
    rep = MX.evaluate(["a b", "c"], ["a b", "d"], {"scheme": "t5"}, cross_entropy_value=1.5)
    assert rep.aggregates["exact_match"] == 50.0
    assert rep.aggregates["levenshtein"] == 50.0
    assert rep.aggregates["cross_entropy"] == 1.5
    assert [r["exact_match"] for r in rep.records] == [1, 0]
    assert rep.metadata == {"scheme": "t5"}


def full_matrix(value=lambda s, tr, te: 10.0):
    g = MX.GeneralizationMatrix()
    for s in ("alibi", "t5"):
        for tr in ("short", "medium", "long", "mix"):
            for te in MX.TRAIN_BUCKETS:
                g.set(s, tr, te, "exact_match", value(s, tr, te))
    return g


def test_matrix_deltas_and_missing_cells():
    g = full_matrix(lambda s, tr, te: 20.0 if tr == te else 10.0 if tr != "mix" else 25.0)
    assert g.avg_delta("t5", "short", "exact_match") == 50.0
    assert g.mix_delta("t5", "long", "exact_match") == 25.0
    del g.scores[("t5", "long", "short", "exact_match")]
    assert g.missing_cells(["alibi", "t5"], ["short", "medium", "long"]) == [("t5", "long", "short")]
    with pytest.raises(MX.IncompleteMatrixError, match=r"\(t5, long, short\)"):
        g.require_complete(["alibi", "t5"], ["short", "medium", "long"])
