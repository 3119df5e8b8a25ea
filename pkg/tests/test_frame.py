"""Fixed point, frames, transfers, level quadruples and chord certificates."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qneumann.pl1d import PL1D, InversionError, Vec2
from qneumann.frame import (
    DirectionFrame,
    NeumannSpec,
    classify_region,
    default_lambda_samples,
    example_frame,
    find_gamma,
    fixed_point,
    homogeneous_spec,
    level_quadruple,
    normalize,
    search_frame,
    slope_condition,
    transfer_set,
    verify_frame,
)

LAMS = default_lambda_samples()


def flat_spec():
    return NeumannSpec(PL1D.constant(0.0), PL1D.constant(0.0))


def skew_spec():
    """Worked homogeneous instance with a non-convex second map."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return homogeneous_spec(0.5, 0.25, 0.2, 0.4)


def skew_frame():
    return example_frame("homogeneous", alpha1=0.5, alpha2=0.25, alpha10=0.2, alpha20=0.4)


class TestSpecValidation:
    def test_tail_rejected(self):
        with pytest.raises(ValueError):
            NeumannSpec(PL1D((0.0,), (0.2, 1.1), 0.0), PL1D.constant(0.0))

    def test_decreasing_rejected(self):
        with pytest.raises(ValueError):
            NeumannSpec(PL1D.affine(-0.2), PL1D.constant(0.0))

    def test_nonconvex_warns_but_builds(self):
        with pytest.warns(UserWarning):
            spec = homogeneous_spec(0.5, 0.25, 0.2, 0.4)
        assert spec.gamma2 == 0.25


class TestFixedPoint:
    def test_flat(self):
        assert fixed_point(flat_spec()) == Vec2(0.0, 0.0)

    def test_one_sided_shift(self):
        spec = NeumannSpec(PL1D((0.0,), (0.0, 0.5), 1.0), PL1D.constant(0.0))
        assert fixed_point(spec) == Vec2(1.0, 0.0)

    def test_affine_pair(self):
        spec = NeumannSpec(PL1D.affine(0.2, 2.0), PL1D.affine(0.5, 1.0))
        a = fixed_point(spec)
        assert math.isclose(a.x1, 22 / 9, rel_tol=0, abs_tol=1e-14)
        assert math.isclose(a.x2, 20 / 9, rel_tol=0, abs_tol=1e-14)

    def test_residual_bound(self):
        spec = NeumannSpec(
            PL1D((-1.0, 1.0), (0.1, 0.3, 0.6), 0.5), PL1D((0.0,), (0.2, 0.7), 0.3)
        )
        a = fixed_point(spec)
        assert abs(a.x1 - spec.h1.eval(a.x2)) <= 1e-12
        assert abs(a.x2 - spec.h2.eval(a.x1)) <= 1e-12


class TestNormalize:
    def test_flat_unchanged(self):
        ns = normalize(flat_spec())
        assert ns.a == Vec2(0.0, 0.0)
        assert ns.h1.eval(5.0) == 0.0

    def test_one_sided_shift(self):
        spec = NeumannSpec(PL1D((0.0,), (0.0, 0.5), 1.0), PL1D.constant(0.0))
        ns = normalize(spec)
        assert ns.h1.breakpoints == (0.0,)
        assert ns.h1.slopes == (0.0, 0.5)
        assert ns.h1.eval(0.0) == 0.0
        assert ns.h1.eval(2.0) == 1.0

    def test_affine_shift_cancels_constants(self):
        spec = NeumannSpec(PL1D.affine(0.2, 2.0), PL1D.affine(0.5, 1.0))
        ns = normalize(spec)
        assert ns.h1.slopes == (0.2,)
        assert ns.h2.slopes == (0.5,)
        assert ns.h1.eval(0.0) == 0.0
        assert ns.h2.eval(0.0) == 0.0

    def test_exact_zero_at_origin(self):
        spec = NeumannSpec(
            PL1D((-1.0, 1.0), (0.1, 0.3, 0.6), 0.5), PL1D((0.0,), (0.2, 0.7), 0.3)
        )
        ns = normalize(spec)
        assert ns.h1.eval(0.0) == 0.0
        assert ns.h2.eval(0.0) == 0.0


class TestClassify:
    def test_quadrants(self):
        ns = normalize(flat_spec())
        assert classify_region(ns, Vec2(1.0, 1.0)) == frozenset({"P"})
        assert classify_region(ns, Vec2(-1.0, 1.0)) == frozenset({"Q"})
        assert classify_region(ns, Vec2(1.0, -1.0)) == frozenset({"R"})
        assert classify_region(ns, Vec2(-1.0, -1.0)) == frozenset({"S"})

    def test_boundary_double_tag(self):
        ns = normalize(flat_spec())
        assert classify_region(ns, Vec2(0.0, 1.0)) == frozenset({"P", "Q"})
        assert classify_region(ns, Vec2(0.0, 0.0)) == frozenset({"P", "Q", "R", "S"})


class TestExampleFrame:
    def test_symmetric(self):
        fr = example_frame("homogeneous", alpha1=0.0, alpha2=0.0)
        assert fr.v0 == Vec2(1.0, 1.0)
        assert fr.v1 == Vec2(-1.0, 1.0)
        assert fr.v2 == Vec2(1.0, -1.0)

    def test_convex_pair(self):
        fr = example_frame("homogeneous", alpha1=0.5, alpha2=0.25)
        assert fr.v0 == Vec2(6 / 7, 4 / 7)
        assert fr.v1 == Vec2(-1.0, 1.5)
        assert fr.v2 == Vec2(1.25, -1.0)

    def test_skew_pair(self):
        fr = skew_frame()
        assert math.isclose(fr.v1.x1, -1.75, abs_tol=1e-12)
        assert fr.v1.x2 == 1.875
        assert math.isclose(fr.v2.x1, 25 / 19, abs_tol=1e-15)
        assert math.isclose(fr.v2.x2, -24 / 19, abs_tol=1e-15)
        assert math.isclose(fr.gamma, 0.75, abs_tol=1e-12)

    def test_flat_side(self):
        fr = example_frame("flat_side", alpha1=0.5, alpha10=0.0, alpha2=0.0, eps0=1.0)
        assert fr.v0 == Vec2(1.0, 1.0)
        assert fr.v1 == Vec2(-1.0, 2.0)
        assert fr.v2 == Vec2(1.0, -1.0)
        assert fr.gamma == 0.5

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            example_frame("homogeneous", alpha1=1.0, alpha2=0.0)
        with pytest.raises(ValueError):
            example_frame("flat_side", alpha1=0.5, eps0=0.0)
        with pytest.raises(ValueError):
            example_frame("spiral", alpha1=0.5)

    def test_gamma_range_enforced(self):
        with pytest.raises(ValueError):
            DirectionFrame(Vec2(1, 1), Vec2(-1, 1), Vec2(1, -1), 1.0)


class TestVerifyFrame:
    def test_flat_pass(self):
        rep = verify_frame(
            example_frame("homogeneous", alpha1=0.0, alpha2=0.0), normalize(flat_spec())
        )
        assert rep.ok
        assert rep.eps1 == 1.0
        assert min(rep.cond_v1) == 1.0 and min(rep.cond_v2) == 1.0

    def test_sign_pattern_fail(self):
        bad = DirectionFrame(Vec2(1.0, 1.0), Vec2(1.0, 1.0), Vec2(1.0, -1.0), 0.5)
        rep = verify_frame(bad, normalize(flat_spec()))
        assert not rep.sign_ok and not rep.ok

    def test_skew_pass(self):
        rep = verify_frame(skew_frame(), normalize(skew_spec()))
        assert rep.ok
        assert rep.eps1 > 0.7 and rep.eps2 > 0.99


class TestTransfers:
    def test_flat_identities(self):
        ts = transfer_set(
            example_frame("homogeneous", alpha1=0.0, alpha2=0.0), normalize(flat_spec())
        )
        for t in (0.0, 1.0, 3.5):
            assert ts.f1.eval(t) == t
            assert ts.f2.eval(t) == t
            assert ts.g1.eval(t) == t
            assert ts.p1.eval(-t) == t
            assert ts.q1.eval(-t) == t
            assert ts.q2.eval(-t) == t

    def test_normalized_identity_on_right_half(self):
        ts = transfer_set(skew_frame(), normalize(skew_spec()))
        assert ts.f1.eval(3.0) == pytest.approx(3.0, abs=1e-12)
        assert ts.g1.eval(3.0) == pytest.approx(3.0, abs=1e-12)
        assert ts.p1.eval(-3.0) == pytest.approx(3.0, abs=1e-12)

    def test_all_vanish_at_origin(self):
        ts = transfer_set(skew_frame(), normalize(skew_spec()))
        for f in (ts.f1, ts.f2, ts.g1, ts.g2, ts.p1, ts.p2, ts.q1, ts.q2):
            assert f.eval(0.0) == 0.0


class TestLevelQuadruple:
    def test_flat_level_two(self):
        ns = normalize(flat_spec())
        ts = transfer_set(example_frame("homogeneous", alpha1=0.0, alpha2=0.0), ns)
        qd = level_quadruple(ts, ns, 2.0)
        assert qd.x_pq == Vec2(0.0, 2.0)
        assert qd.x_pr == Vec2(2.0, 0.0)
        assert qd.x_qs == Vec2(-2.0, 0.0)
        assert qd.x_rs == Vec2(0.0, -2.0)
        assert qd.mu == 2.0 and qd.nu == 2.0

    def test_skew_level_one(self):
        ns = normalize(skew_spec())
        ts = transfer_set(skew_frame(), ns)
        qd = level_quadruple(ts, ns, 1.0)
        assert qd.x_pq.x1 == pytest.approx(0.5, abs=1e-12)
        assert qd.x_pq.x2 == pytest.approx(1.0, abs=1e-12)
        assert qd.x_pr.x1 == pytest.approx(1.0, abs=1e-12)
        assert qd.x_pr.x2 == pytest.approx(0.25, abs=1e-12)
        assert qd.x_qs.x1 == pytest.approx(-1.0, abs=1e-12)
        assert qd.x_qs.x2 == pytest.approx(-0.4, abs=1e-12)
        assert qd.x_rs.x1 == pytest.approx(-0.2, abs=1e-12)
        assert qd.x_rs.x2 == pytest.approx(-1.0, abs=1e-12)

    def test_level_must_be_positive(self):
        ns = normalize(flat_spec())
        ts = transfer_set(example_frame("homogeneous", alpha1=0.0, alpha2=0.0), ns)
        with pytest.raises(ValueError):
            level_quadruple(ts, ns, 0.0)

    @given(st.floats(1e-3, 1e3))
    @settings(max_examples=60, deadline=None)
    def test_defining_relations(self, lam):
        ns = normalize(skew_spec())
        fr = skew_frame()
        ts = transfer_set(fr, ns)
        qd = level_quadruple(ts, ns, lam)
        # on-curve residuals
        assert abs(qd.x_pq.x1 - ns.h1.eval(qd.x_pq.x2)) <= 1e-12 * max(1, lam)
        assert abs(qd.x_pr.x2 - ns.h2.eval(qd.x_pr.x1)) <= 1e-12 * max(1, lam)
        assert abs(qd.x_qs.x2 - ns.h2.eval(qd.x_qs.x1)) <= 1e-12 * max(1, lam)
        assert abs(qd.x_rs.x1 - ns.h1.eval(qd.x_rs.x2)) <= 1e-12 * max(1, lam)
        # level and matching values
        assert fr.v0.dot(qd.x_pq) == pytest.approx(lam, rel=1e-12)
        assert fr.v0.dot(qd.x_pr) == pytest.approx(lam, rel=1e-12)
        assert fr.v1.dot(qd.x_qs) == pytest.approx(qd.lam1, rel=1e-12, abs=1e-12)
        assert fr.v2.dot(qd.x_rs) == pytest.approx(qd.lam2, rel=1e-12, abs=1e-12)
        # negative-side points sit in the open third quadrant
        assert qd.x_qs.x1 < 0 and qd.x_qs.x2 < 0 or qd.x_qs.x2 == 0.0
        assert qd.mu > 0 and qd.nu > 0

    def test_mu_nu_strictly_increasing(self):
        ns = normalize(skew_spec())
        ts = transfer_set(skew_frame(), ns)
        rows = [level_quadruple(ts, ns, float(l)) for l in LAMS]
        mus = [r.mu for r in rows]
        nus = [r.nu for r in rows]
        assert all(b > a for a, b in zip(mus, mus[1:]))
        assert all(b > a for a, b in zip(nus, nus[1:]))


class TestSlopeCondition:
    def test_flat_slope_minus_one(self):
        ns = normalize(flat_spec())
        ts = transfer_set(example_frame("homogeneous", alpha1=0.0, alpha2=0.0), ns)
        rows = slope_condition(ts, ns, 0.5, [1.0, 2.0, 4.0])
        assert [r.slope for r in rows] == [-1.0, -1.0, -1.0]
        assert all(r.ok for r in rows)

    def test_skew_constant_slope(self):
        ns = normalize(skew_spec())
        ts = transfer_set(skew_frame(), ns)
        rows = slope_condition(ts, ns, 0.7, LAMS)
        for r in rows:
            assert r.slope == pytest.approx(-0.75, abs=1e-10)
            assert r.ok

    def test_tight_gamma_fails(self):
        ns = normalize(skew_spec())
        ts = transfer_set(skew_frame(), ns)
        rows = slope_condition(ts, ns, 0.8, LAMS)
        assert not any(r.in_band for r in rows)

    def test_wrap_points(self):
        ns = normalize(skew_spec())
        ts = transfer_set(skew_frame(), ns)
        for r in slope_condition(ts, ns, 0.7, LAMS):
            assert r.r1 <= r.t_qs + 1e-9
            assert r.r2 <= r.s_rs + 1e-9

    def test_gamma_validation(self):
        ns = normalize(flat_spec())
        ts = transfer_set(example_frame("homogeneous", alpha1=0.0, alpha2=0.0), ns)
        with pytest.raises(ValueError):
            slope_condition(ts, ns, 0.0, [1.0])


class TestFindGamma:
    def test_flat_hits_cap(self):
        ns = normalize(flat_spec())
        ts = transfer_set(example_frame("homogeneous", alpha1=0.0, alpha2=0.0), ns)
        assert find_gamma(ts, ns, LAMS) == 0.9999

    def test_skew_three_quarters(self):
        ns = normalize(skew_spec())
        ts = transfer_set(skew_frame(), ns)
        g = find_gamma(ts, ns, LAMS)
        assert g == pytest.approx(0.75, abs=1e-4)

    def test_absent_when_slope_degenerates(self):
        # nearly flat chord: certified parameter below the search grid
        spec = NeumannSpec(
            PL1D.constant(0.0), PL1D((0.0,), (0.99995, 0.99995), 0.0)
        )
        ns = normalize(spec)
        fr = example_frame(
            "homogeneous", alpha1=0.0, alpha2=0.99995, alpha10=0.0, alpha20=0.99995
        )
        ts = transfer_set(fr, ns)
        assert verify_frame(fr, ns).ok
        assert find_gamma(ts, ns, [1.0, 10.0]) is None


class TestSearchFrame:
    def test_finds_frame_for_flat(self):
        ns = normalize(flat_spec())
        fr = search_frame(ns, [0.5, 1.0, 2.0], step_deg=15.0)
        assert fr is not None
        assert verify_frame(fr, ns).ok
        rows = slope_condition(transfer_set(fr, ns), ns, fr.gamma, [0.5, 1.0, 2.0])
        assert all(r.in_band for r in rows)


class TestFrameJson:
    def test_roundtrip(self):
        fr = skew_frame()
        assert DirectionFrame.from_json(fr.to_json()) == fr
