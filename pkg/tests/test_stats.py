import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pacerbot.stats import betainc, f_sf, paired_t, rm_anova

HAND = [[1, 2, 3], [2, 3, 5], [3, 4, 4]]


@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0, 1))
def test_betainc_matches_reference(a, b, x):
    assert betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), abs=1e-12)


@pytest.mark.parametrize("df1,df2", [(1, 1), (2, 4), (2, 18), (3, 27), (10, 100)])
@pytest.mark.parametrize("f", [0.01, 0.5, 1.0, 3.0, 9.0, 40.0])
def test_f_tail_matches_reference(f, df1, df2):
    assert f_sf(f, df1, df2) == pytest.approx(scipy.stats.f.sf(f, df1, df2), abs=1e-10)


def test_f_tail_edges():
    assert f_sf(0.0, 2, 4) == 1.0 and f_sf(math.inf, 2, 4) == 0.0 and math.isnan(f_sf(math.nan, 2, 4))
    # For df1 = 2 the tail has the closed form (1 + df1 F / df2) ** (-df2 / 2).
    assert f_sf(9.0, 2, 4) == pytest.approx(1 / 30.25, abs=1e-14)


def test_betainc_domain():
    with pytest.raises(ValueError):
        betainc(0, 1, 0.5)
    assert betainc(2, 3, 0.0) == 0.0 and betainc(2, 3, 1.0) == 1.0


def test_hand_anova_table():
    r = rm_anova(HAND)
    assert r.ss_total == pytest.approx(12.0)
    assert r.ss_subjects == pytest.approx(14 / 3)
    assert r.ss_conditions == pytest.approx(6.0)
    assert r.ss_error == pytest.approx(4 / 3)
    assert r.df == (2, 4)
    assert r.F == pytest.approx(9.0)
    assert r.p == pytest.approx(1 / 30.25, abs=1e-12)
    assert not r.degenerate
    assert r.summary() == "F(2,4)=9, p=0.0330579"
    assert "error" in r.table()


def test_degenerate_additive_matrix():
    r = rm_anova([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    assert r.ss_error == 0.0 and r.degenerate
    assert r.p == 0.0 and math.isinf(r.F)
    assert "p=<2.2e-16" in r.summary()


def test_no_condition_effect():
    r = rm_anova([[1, 1, 1], [2, 2, 2], [5, 5, 5]])
    assert r.F == 0.0 and r.p == 1.0


def test_no_condition_effect_with_noise():
    r = rm_anova([[1, 2, 0], [2, 1, 3], [3, 3, 3]])
    assert r.ss_conditions == pytest.approx(0.0, abs=1e-12)
    assert r.F == pytest.approx(0.0, abs=1e-12) and r.p == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_two_conditions_equal_paired_t_squared(seed):
    x = np.random.default_rng(seed).normal(size=(10, 2)) + [0.0, 0.4]
    r = rm_anova(x)
    t, df, p = paired_t(x[:, 0], x[:, 1])
    assert r.F == pytest.approx(t * t, rel=1e-10)
    assert r.p == pytest.approx(p, rel=1e-9)
    assert df == 9
    assert p == pytest.approx(scipy.stats.ttest_rel(x[:, 0], x[:, 1]).pvalue, rel=1e-9)


matrices = arrays(float, st.tuples(st.integers(2, 8), st.integers(2, 5)), elements=st.floats(-10, 10))


def _not_degenerate(x):
    return not rm_anova(x).degenerate and rm_anova(x).ss_error > 1e-6 * max(rm_anova(x).ss_total, 1e-9)


@given(matrices, st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.floats(-5, 5), st.floats(0.1, 10))
def test_invariances(x, subj_shift, c, scale):
    if not _not_degenerate(x):
        return
    F = rm_anova(x).F
    shifted = x + np.array(subj_shift[: x.shape[0]])[:, None]
    assert rm_anova(shifted).F == pytest.approx(F, rel=1e-6, abs=1e-9)
    assert rm_anova(x + c).F == pytest.approx(F, rel=1e-6, abs=1e-9)
    assert rm_anova(x * scale).F == pytest.approx(F, rel=1e-6, abs=1e-9)


@given(matrices)
def test_p_in_unit_interval_and_ss_partition(x):
    r = rm_anova(x)
    assert 0.0 <= r.p <= 1.0
    assert r.ss_subjects + r.ss_conditions + r.ss_error == pytest.approx(r.ss_total, rel=1e-9, abs=1e-9)


def test_paired_with_scipy_reference_anova():
    x = np.random.default_rng(3).normal(size=(10, 3)) + [0.0, 0.3, 0.6]
    r = rm_anova(x)
    # Two-way additive model residual from ordinary least squares.
    n, k = x.shape
    design = np.column_stack([np.ones(n * k)] + [np.repeat(np.eye(n)[:, i], k) for i in range(1, n)]
                             + [np.tile(np.eye(k)[:, j], n) for j in range(1, k)])
    coef, *_ = np.linalg.lstsq(design, x.ravel(), rcond=None)
    sse = float(np.sum((x.ravel() - design @ coef) ** 2))
    assert r.ss_error == pytest.approx(sse, rel=1e-10)


@pytest.mark.parametrize("bad", [[[1, 2, 3]], [[1], [2]], [1, 2, 3], [[1, 2], [3, math.nan]]])
def test_input_errors(bad):
    with pytest.raises(ValueError):
        rm_anova(bad)
