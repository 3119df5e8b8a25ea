"""Grid fields, discrete conjugation, and the smoothing pipeline."""

import numpy as np
import pytest

from qneumann.frame import DirectionFrame, NeumannSpec, normalize
from qneumann.gridfield import SENTINEL, GridField2D
from qneumann.legendre import (
    ConjugationPlan,
    biconjugate,
    boundary_sign_audit,
    build_phi_eps,
    build_test_function,
    c11_audit,
    conjugate2d,
    duality_roundtrip,
    epsilon_bound,
    epsilon_zero,
    growth_audit,
    moreau_cross_check,
    warmup,
    young_fenchel_check,
)
from qneumann.envelope import build_psi
from qneumann.pl1d import PL1D, Vec2


@pytest.fixture(scope="module", autouse=True)
def _compiled():
    warmup()


@pytest.fixture(scope="module")
def flat_bundle():
    spec = NeumannSpec(PL1D.constant(0.0), PL1D.constant(0.0))
    frame = DirectionFrame(Vec2(1.0, 1.0), Vec2(-1.0, 1.0), Vec2(1.0, -1.0), 0.5)
    return spec, build_psi(frame, normalize(spec), radius=8.0, n=513)


class TestGridField:
    def test_centered_contains_origin(self):
        f = GridField2D.from_function(2.0, 9, lambda a, b: a + b)
        assert f.axis1[4] == 0.0
        assert f.axis2[4] == 0.0
        assert f.value_at(Vec2(0.0, 0.0)) == 0.0
        assert f.node(0, 0) == Vec2(-2.0, -2.0)

    def test_validation(self):
        with pytest.raises(ValueError, match="2-D"):
            GridField2D(Vec2(0, 0), (1.0, 1.0), np.zeros(3))
        with pytest.raises(ValueError, match="positive"):
            GridField2D(Vec2(0, 0), (0.0, 1.0), np.zeros((2, 2)))
        with pytest.raises(ValueError, match="no finite"):
            GridField2D(Vec2(0, 0), (1.0, 1.0), np.full((2, 2), SENTINEL))
        with pytest.raises(ValueError, match="finite"):
            GridField2D(Vec2(0, 0), (1.0, 1.0), np.array([[np.nan, 0.0], [0.0, 0.0]]))

    def test_off_window_lookup_raises(self):
        f = GridField2D.from_function(1.0, 5, lambda a, b: a * b)
        with pytest.raises(ValueError, match="outside"):
            f.value_at(Vec2(3.0, 0.0))

    def test_interp_matches_bilinear(self):
        f = GridField2D.from_function(1.0, 3, lambda a, b: 2 * a + 3 * b)
        # affine data is reproduced exactly between nodes
        assert f.interp(0.25, -0.4) == pytest.approx(2 * 0.25 + 3 * -0.4, abs=1e-14)

    def test_subwindow(self):
        f = GridField2D.from_function(4.0, 17, lambda a, b: a + b)
        g = f.subwindow(2.0)
        assert g.shape == (9, 9)
        assert g.axis1[0] == -2.0
        assert g.value_at(Vec2(1.0, -1.5)) == f.value_at(Vec2(1.0, -1.5))

    def test_save_load_roundtrip(self, tmp_path):
        f = GridField2D.from_function(2.0, 7, lambda a, b: a * a - b)
        p = tmp_path / "field.npz"
        f.save(p)
        g = GridField2D.load(p)
        assert g.origin == f.origin
        assert g.spacing == f.spacing
        assert np.array_equal(g.values, f.values)

    def test_csv_layout(self, tmp_path):
        f = GridField2D.from_function(1.0, 3, lambda a, b: a + b)
        p = tmp_path / "field.csv"
        f.to_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,value"
        assert len(lines) == 1 + 9
        assert lines[1].split(",") == ["-1", "-1", "-2"]


class TestConjugateOracles:
    def test_square_norm(self):
        # (|p|^2)* = |x|^2 / 4
        f = GridField2D.from_function(4.0, 257, lambda a, b: a * a + b * b)
        g = conjugate2d(f, ConjugationPlan(4.0, 257, 2.0, 129))
        assert g.value_at(Vec2(2.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
        assert g.value_at(Vec2(0.0, 0.0)) == 0.0

    def test_scaled_square(self):
        # (|p|^2 / 4)* = |x|^2
        f = GridField2D.from_function(8.0, 513, lambda a, b: 0.25 * (a * a + b * b))
        g = conjugate2d(f, ConjugationPlan(8.0, 513, 2.0, 129))
        assert g.value_at(Vec2(1.0, 1.0)) == pytest.approx(2.0, abs=1e-12)

    def test_box_indicator(self):
        # support function of the unit box is the 1-norm
        def ind(a, b):
            v = np.zeros_like(a)
            v[(np.abs(a) > 1 + 1e-12) | (np.abs(b) > 1 + 1e-12)] = SENTINEL
            return v

        f = GridField2D.from_function(2.0, 129, ind)
        g = conjugate2d(f, ConjugationPlan(2.0, 129, 4.0, 129))
        assert g.value_at(Vec2(3.0, -2.0)) == 5.0

    def test_two_point_chord(self):
        # only (\pm 1, 0) present: conjugate is |x1|, envelope fills the chord
        vals = np.full((3, 1), SENTINEL)
        vals[0, 0] = 0.0
        vals[2, 0] = 0.0
        f = GridField2D(Vec2(-1.0, 0.0), (1.0, 1.0), vals)
        g = conjugate2d(f, ConjugationPlan(1.0, 3, 2.0, 9))
        x1, _ = g.meshgrid()
        assert np.array_equal(g.values, np.abs(x1))
        env = biconjugate(f, ConjugationPlan(1.0, 3, 2.0, 9))
        assert env.value_at(Vec2(0.0, 0.0)) == 0.0

    def test_biconjugate_fixes_convex_data(self):
        f = GridField2D.from_function(2.0, 65, lambda a, b: np.abs(a) + 0.5 * np.abs(b))
        env = biconjugate(f, ConjugationPlan(2.0, 65, 2.0, 65))
        assert np.max(np.abs(env.values - f.values)) <= 1e-9

    def test_empty_input_rejected(self):
        vals = np.full((3, 3), SENTINEL)
        vals[1, 1] = 0.0
        f = GridField2D(Vec2(-1.0, -1.0), (1.0, 1.0), vals)
        # fine with one point; a fully masked row is skipped, not fatal
        g = conjugate2d(f, ConjugationPlan(1.0, 3, 1.0, 5))
        assert np.max(np.abs(g.values)) == 0.0


class TestConjugateAgainstBrute:
    def test_random_fields(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n, m = 17, 13
            ps = np.linspace(-2.0, 2.0, n)
            xs = np.linspace(-3.0, 3.0, m)
            vals = rng.normal(size=(n, n)).cumsum(axis=0)
            if rng.random() < 0.5:
                mask = rng.random(size=(n, n)) < 0.2
                mask[n // 2, n // 2] = False
                vals = np.where(mask, SENTINEL, vals)
            f = GridField2D(Vec2(-2.0, -2.0), (ps[1] - ps[0], ps[1] - ps[0]), vals)
            g = conjugate2d(f, ConjugationPlan(2.0, n, 3.0, m))
            P1, P2 = np.meshgrid(ps, ps, indexing="ij")
            finite = vals < 1e29
            for i, x1 in enumerate(xs):
                for j, x2 in enumerate(xs):
                    brute = np.max((x1 * P1 + x2 * P2 - vals)[finite])
                    assert g.values[i, j] == pytest.approx(brute, abs=1e-10)

    def test_order_reversal(self):
        # pointwise larger input gives pointwise smaller conjugate
        f = GridField2D.from_function(2.0, 33, lambda a, b: a * a + b * b)
        g = GridField2D.from_function(2.0, 33, lambda a, b: a * a + b * b + 1.0)
        plan = ConjugationPlan(2.0, 33, 1.0, 17)
        cf = conjugate2d(f, plan)
        cg = conjugate2d(g, plan)
        assert np.all(cg.values <= cf.values + 1e-12)


class TestPlan:
    def test_for_phi_windows(self):
        plan = ConjugationPlan.for_phi(0.3, x_radius=8.0, x_n=513)
        assert plan.dual_radius == 8.0
        assert plan.dual_n == 513
        assert plan.primal_radius == 64.0
        assert plan.primal_n == 2049
        assert plan.primal_spacing == pytest.approx(2.0 * plan.dual_spacing)

    def test_validation(self):
        with pytest.raises(ValueError, match="radius"):
            ConjugationPlan(-1.0, 9, 1.0, 9)
        with pytest.raises(ValueError, match="node count"):
            ConjugationPlan(1.0, 1, 1.0, 9)
        with pytest.raises(ValueError, match="eps"):
            ConjugationPlan.for_phi(0.0, 8.0, 513)


class TestEpsilonRange:
    def test_flat_values(self, flat_bundle):
        _, bundle = flat_bundle
        assert epsilon_zero(bundle.frame) == 0.5
        bound = epsilon_bound(bundle.frame, min(bundle.delta, bundle.grad_lo))
        assert bound == pytest.approx(0.35355339059327373, abs=1e-12)

    def test_bad_delta(self, flat_bundle):
        _, bundle = flat_bundle
        with pytest.raises(ValueError, match="positive"):
            epsilon_bound(bundle.frame, 0.0)

    def test_eps_refusal_quotes_bound(self, flat_bundle):
        _, bundle = flat_bundle
        with pytest.raises(ValueError, match="admissible range"):
            build_phi_eps(bundle, 0.36)
        with pytest.raises(ValueError, match="admissible range"):
            build_phi_eps(bundle, -0.1)


@pytest.fixture(scope="module")
def tf30(flat_bundle):
    _, bundle = flat_bundle
    return build_phi_eps(bundle, 0.3)


@pytest.fixture(scope="module")
def tf25(flat_bundle):
    _, bundle = flat_bundle
    return build_phi_eps(bundle, 0.25)


@pytest.fixture(scope="module")
def shifted_tf():
    spec = NeumannSpec(PL1D((0.0,), (0.0, 0.5), 1.0), PL1D.constant(0.0))
    nspec = normalize(spec)
    from qneumann.frame import example_frame

    frame = example_frame("flat_side", alpha1=0.5)
    bundle = build_psi(frame, nspec, radius=8.0, n=513)
    eps = 0.9 * epsilon_bound(frame, min(bundle.delta, bundle.grad_lo))
    tf = build_test_function(build_phi_eps(bundle, eps), nspec.a)
    return spec, bundle, tf


class TestPhiPipeline:
    def test_values_at_origin_and_axis(self, tf25):
        assert tf25.phi.value_at(Vec2(0.0, 0.0)) == 0.0
        # sampled conjugate sits just under the true value 0.2
        v = tf25.phi.value_at(Vec2(1.0, 0.0))
        assert 0.2 - tf25.gap <= v <= 0.2

    def test_reported_constants(self, tf25):
        assert tf25.lower_coeff == pytest.approx(1.0 / 9.0, abs=1e-12)
        assert tf25.upper_coeff == pytest.approx(0.2, abs=1e-15)

    def test_gradient_is_subgradient(self, tf25):
        # the stored argmax supports the field from below at a shifted node
        i, j = tf25.phi.index_of(Vec2(1.0, 1.0))
        g1 = tf25.grad1.values[i, j]
        g2 = tf25.grad2.values[i, j]
        base = tf25.phi.values[i, j]
        for di, dj in ((1, 0), (0, 1), (-1, 0), (0, -1), (3, -2)):
            step = tf25.phi.values[i + di, j + dj] - base
            move = di * tf25.phi.spacing[0] * g1 + dj * tf25.phi.spacing[1] * g2
            assert step >= move - 1e-12

    def test_sign_audit_flat(self, tf30, flat_bundle):
        spec, _ = flat_bundle
        rep = boundary_sign_audit(tf30, spec)
        assert rep.ok
        assert rep.violations == 0
        assert rep.worst <= 0.0

    def test_c11_audit(self, tf25, tf30):
        for tf in (tf25, tf30):
            rep = c11_audit(tf)
            assert rep.ok, rep
        assert c11_audit(tf25).lip_bound == pytest.approx(2.1)

    def test_moreau_identity(self, tf30, flat_bundle):
        _, bundle = flat_bundle
        pts = [Vec2(1.0, 0.0), Vec2(-2.0, -3.0), Vec2(0.5, -0.25), Vec2(0.0, 0.0)]
        assert moreau_cross_check(tf30, bundle, pts) <= 1e-9

    def test_duality_roundtrip(self, tf30, flat_bundle):
        _, bundle = flat_bundle
        rt = duality_roundtrip(tf30, bundle, n=257)
        assert rt["relative"] <= 1e-3

    def test_young_fenchel(self, tf30, flat_bundle):
        _, bundle = flat_bundle
        rep = young_fenchel_check(tf30, bundle)
        assert rep["ok"]
        assert rep["worst_equality_gap"] == 0.0

    def test_convexity_of_field(self, tf30):
        vals = tf30.phi.values
        mid = 0.5 * (vals[:-2, :] + vals[2:, :])
        assert np.min(mid - vals[1:-1, :]) >= -1e-12
        mid = 0.5 * (vals[:, :-2] + vals[:, 2:])
        assert np.min(mid - vals[:, 1:-1]) >= -1e-12


class TestShiftedTestFunction:
    def test_growth_certificates(self, shifted_tf):
        spec, bundle, tf = shifted_tf
        assert bundle.delta == pytest.approx(1.0, abs=1e-9)
        assert bundle.C == pytest.approx(np.sqrt(5.0), abs=1e-9)
        assert tf.shift == Vec2(1.0, 0.0)
        rep = growth_audit(tf)
        assert rep["ok"], rep

    def test_sign_audit(self, shifted_tf):
        spec, _, tf = shifted_tf
        rep = boundary_sign_audit(tf, spec)
        assert rep.ok, rep

    def test_linear_part_in_values(self, shifted_tf):
        _, _, tf = shifted_tf
        f = tf.f_values()
        i, j = tf.phi.index_of(Vec2(2.0, 0.0))
        assert f[i, j] == pytest.approx(tf.phi.values[i, j] + 2.0, abs=1e-12)
        g1, g2 = tf.grad_values()
        assert g1[i, j] == pytest.approx(tf.grad1.values[i, j] + 1.0, abs=1e-12)
        assert g2[i, j] == tf.grad2.values[i, j]
