from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from monorefine.model import DimensionScores, MarginConfig
from monorefine.objective import (
    DomainError,
    aggregate_uncertainty,
    composite_objective,
    is_perfect,
    lcb_confidence,
    lower_confidence_bound,
    plugin_estimator,
    strictly_improves,
)

unit = st.floats(0, 1)
open_unit = st.floats(1e-9, 1 - 1e-9)
margin = st.floats(0, 1)


class TestCompositeObjective:
    def test_ideal(self):
        assert composite_objective(1, 1, 1, 1) == 1.0

    def test_mask(self):
        assert composite_objective(0, 0.9, 0.9, 0.9) == 0.0

    def test_hand_sum(self):
        assert composite_objective(1, 0.55, 0.80, 0.51) == pytest.approx(0.62, abs=1e-12)

    @pytest.mark.parametrize("args", [(2, 0.5, 0.5, 0.5), (1, 1.1, 0, 0), (1, 0, -0.1, 0),
                                      (1, 0, 0, float("nan"))])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            composite_objective(*args)


class TestPluginEstimator:
    def test_mask_and_perfect(self):
        assert plugin_estimator(DimensionScores(0, 0.7, 0.1, 0.2)) == 0.0
        assert plugin_estimator(DimensionScores(1, 1, 1, 1)) == 1.0
        assert is_perfect(plugin_estimator(DimensionScores(1, 1, 1, 1)))

    def test_hand_value(self):
        # (0.75 + 0.6667 + 0.5) / 3
        assert plugin_estimator(DimensionScores(1, 0.75, 0.6667, 0.5)) == pytest.approx(0.6389, abs=1e-12)


class TestAggregateUncertainty:
    def test_values(self):
        assert aggregate_uncertainty(0.05, 0.05, 0.05) == pytest.approx(0.142625, abs=1e-15)
        assert aggregate_uncertainty(0.5, 0.5, 0.5) == pytest.approx(0.875, abs=1e-15)
        assert aggregate_uncertainty(0.1, 1e-12, 1e-12) == pytest.approx(0.1, abs=1e-11)

    @pytest.mark.parametrize("d", [0.0, 1.0, -0.1, 1.5])
    def test_boundaries(self, d):
        with pytest.raises(DomainError):
            aggregate_uncertainty(d, 0.1, 0.1)

    @given(open_unit, open_unit, open_unit)
    def test_symmetric_and_inside(self, a, b, c):
        v = aggregate_uncertainty(a, b, c)
        assert 0 < v < 1 or v == pytest.approx(1.0)
        assert v == pytest.approx(aggregate_uncertainty(c, a, b), abs=1e-15)
        assert v == pytest.approx(aggregate_uncertainty(b, c, a), abs=1e-15)

    @given(open_unit, open_unit, open_unit, open_unit)
    def test_monotone(self, a, a2, b, c):
        lo, hi = sorted((a, a2))
        assert aggregate_uncertainty(lo, b, c) <= aggregate_uncertainty(hi, b, c) + 1e-15

    def test_confidence(self):
        assert lcb_confidence(MarginConfig()) == pytest.approx(0.857375, abs=1e-15)


class TestLowerConfidenceBound:
    def test_examples(self):
        m = MarginConfig(margin_lp=0.1, margin_mc=0.1, margin_fq=0.1)
        assert lower_confidence_bound(DimensionScores(0, 1, 1, 1), m) == 0.0
        assert lower_confidence_bound(DimensionScores(1, 1, 1, 1), MarginConfig()) == 1.0
        assert lower_confidence_bound(DimensionScores(1, 0.8, 0.9, 0.7), m) == pytest.approx(0.7, abs=1e-12)

    def test_not_clamped(self):
        m = MarginConfig(margin_lp=0.5, margin_mc=0.5, margin_fq=0.5)
        assert lower_confidence_bound(DimensionScores(1, 0.1, 0.1, 0.1), m) == pytest.approx(-0.4)

    @given(unit, unit, unit, margin, margin, margin)
    def test_ordering(self, lp, mc, fq, a, b, c):
        s = DimensionScores(1, lp, mc, fq)
        m = MarginConfig(margin_lp=a, margin_mc=b, margin_fq=c)
        lcb, est = lower_confidence_bound(s, m), plugin_estimator(s)
        assert lcb <= est + 1e-15
        if a == b == c == 0:
            assert lcb == est

    @given(unit, unit, unit, margin, margin, margin)
    def test_mask_annihilation(self, lp, mc, fq, a, b, c):
        s = DimensionScores(0, lp, mc, fq)
        m = MarginConfig(margin_lp=a, margin_mc=b, margin_fq=c)
        assert composite_objective(0, lp, mc, fq) == plugin_estimator(s) == lower_confidence_bound(s, m) == 0.0

    @given(unit, unit, unit, unit, margin)
    def test_monotone_in_soft_scores(self, lp, lp2, mc, fq, mg):
        lo, hi = sorted((lp, lp2))
        m = MarginConfig(margin_lp=mg)
        a, b = DimensionScores(1, lo, mc, fq), DimensionScores(1, hi, mc, fq)
        assert composite_objective(1, lo, mc, fq) <= composite_objective(1, hi, mc, fq)
        assert plugin_estimator(a) <= plugin_estimator(b)
        assert lower_confidence_bound(a, m) <= lower_confidence_bound(b, m)


class TestStrictlyImproves:
    def test_examples(self):
        assert strictly_improves(0.6, 0.5, 0)
        assert not strictly_improves(0.5, 0.5, 0)
        assert not strictly_improves(0.500001, 0.5, 1e-3)
        assert strictly_improves(0.0, -1.0)

    def test_rejects(self):
        with pytest.raises(DomainError):
            strictly_improves(0.6, 0.5, -1e-9)
        with pytest.raises(DomainError):
            strictly_improves(float("inf"), 0.5)

    @given(unit, unit, unit, unit, unit, unit)
    def test_scale_free(self, a1, a2, a3, b1, b2, b3):
        # exact rational comparison of the unnormalized sums decides the same way
        ja = composite_objective(1, a1, a2, a3)
        jb = composite_objective(1, b1, b2, b3)
        sa = Fraction(a1) + Fraction(a2) + Fraction(a3)
        sb = Fraction(b1) + Fraction(b2) + Fraction(b3)
        if abs(sa - sb) > Fraction(1, 10**9):
            assert strictly_improves(ja, jb) == (sa > sb)
