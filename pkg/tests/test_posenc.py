import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lenlab import posenc as P
from lenlab.posenc import ConfigError, Kind, Mode, PositionalScheme


def t5_oracle(rel: int, bidirectional: bool, num_buckets: int = 32, max_distance: int = 128) -> int:
    """Bucket by counting crossed log-spaced thresholds, compared in exact integer arithmetic.

    Threshold k (1-based) sits at exact * (max_distance / exact) ** (k / n_log); a distance d
    crosses it iff d ** n_log * exact ** k >= max_distance ** k * exact ** n_log.
    """
    n = num_buckets // 2 if bidirectional else num_buckets
    offset = n if (bidirectional and rel > 0) else 0
    d = abs(rel) if bidirectional else max(-rel, 0)
    exact = n // 2
    if d < exact:
        return offset + d
    n_log = n - exact
    crossed = 0
    for k in range(1, n_log + 1):
        if d ** n_log * exact ** k >= max_distance ** k * exact ** n_log:
            crossed = k
    return offset + min(exact + crossed, n - 1)


def test_sinusoidal_table_values():
    tab = P.sinusoidal_table(50, 16)
    assert tab[0, 0::2].tolist() == [0.0] * 8 and tab[0, 1::2].tolist() == [1.0] * 8
    pos, i = 7, 3
    assert tab[pos, 2 * i] == pytest.approx(math.sin(pos / 10000 ** (2 * i / 16)))
    assert tab[pos, 2 * i + 1] == pytest.approx(math.cos(pos / 10000 ** (2 * i / 16)))
    with pytest.raises(ConfigError):
        P.sinusoidal_table(4, 5)


def test_alibi_slopes_eight_heads_exact():
    assert P.alibi_slopes(8) == [2.0 ** -k for k in range(1, 9)]
    s = P.alibi_slopes(4)
    assert s == [0.25, 0.0625, 0.015625, 0.00390625]


def test_alibi_causal_bias_structure():
    b = P.alibi_bias(12, 12, 8, Mode.CAUSAL)
    for h in range(8):
        assert np.all(np.diag(b[h]) == 0)
        assert np.all(b[h] <= 0)
        for i in range(12):
            row = b[h, i, : i + 1][::-1]  # distance 0, 1, 2, ...
            assert np.all(np.diff(row) < 0)


def test_alibi_bidirectional_symmetric():
    b = P.alibi_bias(9, 9, 4, Mode.BIDIRECTIONAL)
    assert np.allclose(b, b.transpose(0, 2, 1))
    assert b[0, 0, 5] == pytest.approx(-0.25 * 5)


@pytest.mark.parametrize("bidirectional", [True, False])
def test_t5_bucket_matches_oracle_exhaustively(bidirectional):
    rels = np.arange(-512, 513)
    got = P.t5_bucket(rels, bidirectional)
    want = [t5_oracle(int(r), bidirectional) for r in rels]
    assert got.tolist() == want


@pytest.mark.parametrize("bidirectional", [True, False])
def test_t5_bucket_monotone_and_saturating(bidirectional):
    for sign in (-1, 1) if bidirectional else (-1,):
        b = [P.t5_bucket(sign * d, bidirectional) for d in range(513)]
        assert all(x <= y for x, y in zip(b, b[1:]))
        assert len(set(b[128:])) == 1
    if not bidirectional:
        assert all(P.t5_bucket(d, False) == 0 for d in range(0, 50))


def test_xpos_zeta_and_envelope():
    z = P.xpos_zeta(16)
    assert np.all((z > 0) & (z < 1)) and np.all(np.diff(z) > 0)
    assert z[0] == pytest.approx(0.4 / 1.4)
    env = [P.xpos_envelope(d, 16) for d in range(10)]
    assert env[0] == 1.0 and all(a > b for a, b in zip(env, env[1:]))


def test_rotary_dot_product_depends_on_relative_position_only():
    r = np.random.default_rng(1)
    q, k = r.normal(size=(1, 1, 8)), r.normal(size=(1, 1, 8))
    from lenlab.tensor import Tensor

    def dot(i, j):
        qi = P.rotary_apply(Tensor(q, dtype=np.float64), [i]).data
        kj = P.rotary_apply(Tensor(k, dtype=np.float64), [j]).data
        return float((qi * kj).sum())

    assert dot(3, 1) == pytest.approx(dot(103, 101), abs=1e-9)
    assert dot(0, 0) == pytest.approx(float((q * k).sum()))


@given(st.sampled_from(list(Kind)), st.sampled_from(list(Mode)), st.integers(1, 128), st.integers(0, 10_000))
def test_relative_schemes_are_translation_invariant(kind, mode, offset, seed):
    r = np.random.default_rng(seed)
    x, wq, wk = r.normal(size=(32, 16)), r.normal(size=(16, 16)) / 4, r.normal(size=(16, 16)) / 4
    table = r.normal(size=(32, 4))
    sc = PositionalScheme(kind, d_model=16, n_heads=4)
    a = P.attention_scores(sc, x, wq, wk, 4, mode, 0, table)
    b = P.attention_scores(sc, x, wq, wk, 4, mode, offset, table)
    if kind is Kind.SINUSOIDAL:
        assert np.abs(a - b).max() > 1e-3
    else:
        assert np.abs(a - b).max() < 1e-9


def test_scheme_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        PositionalScheme(Kind.SINUSOIDAL, d_model=7)
    with pytest.raises(ConfigError):
        PositionalScheme(Kind.T5, t5_num_buckets=32, t5_max_distance=8)
    with pytest.raises(ConfigError):
        PositionalScheme.from_dict({"kind": "alibi", "bogus": 1})
    with pytest.raises(ValueError):
        PositionalScheme("nope")
    sc = PositionalScheme(Kind.XPOS, d_model=64)
    assert PositionalScheme.from_dict(sc.to_dict()) == sc
    assert PositionalScheme(Kind.SINUSOIDAL).injects_at_input
    assert all(PositionalScheme(k).is_relative for k in (Kind.XPOS, Kind.ALIBI, Kind.T5))
