"""Discrete Legendre transforms and the regularized test-function layer.

The 2-D conjugate ``f*(x) = sup_p (x . p - f(p))`` factorizes into two
sweeps of a 1-D transform, each linear in the node count: a lower convex
hull over the primal nodes followed by a monotone sweep over the sorted
dual nodes.  Values at or above ``SENTINEL_CUT`` are treated as ``+inf``
(absent); ``-SENTINEL`` marks rows with no finite entry after the first
pass so the second pass can skip them.

On top of the transform sits the smoothing pipeline: given an envelope
``psi`` with certified growth constants, ``eta = psi^2 + eps |p|^2`` is
conjugated into ``phi_eps``, whose gradient is read off the maximizing
node.  Audit helpers check the boundary sign conditions, the C^{1,1}
bound and quadratic sandwich, the Moreau identity, and the duality
roundtrip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .frame import DirectionFrame, NeumannSpec
from .gridfield import SENTINEL, SENTINEL_CUT, GridField2D
from .pl1d import Vec2

__all__ = [
    "ConjugationPlan",
    "conjugate2d",
    "biconjugate",
    "epsilon_zero",
    "epsilon_bound",
    "TestFunction",
    "build_phi_eps",
    "build_test_function",
    "SignAuditReport",
    "boundary_sign_audit",
    "C11AuditReport",
    "c11_audit",
    "growth_audit",
    "moreau_cross_check",
    "duality_roundtrip",
    "young_fenchel_check",
]


# ---------------------------------------------------------------------------
# transform kernels


@njit(cache=True)
def _llt_rows(ts, rows, ss, out, arg, want_arg):
    """Row-wise discrete Legendre transform.

    For each row ``r``: ``out[r, m] = max_k (ss[m] * ts[k] - rows[r, k])``
    over the finite entries.  ``arg[r, m]`` receives the maximizing node
    when requested.  Rows with no finite entry yield ``-SENTINEL``.
    """
    n = ts.size
    m = ss.size
    ht = np.empty(n)
    hy = np.empty(n)
    for r in range(rows.shape[0]):
        ys = rows[r]
        # lower convex hull of the finite graph points, slopes increasing
        h = 0
        for k in range(n):
            y = ys[k]
            if y >= 1e29:
                continue
            t = ts[k]
            while h >= 2 and (hy[h - 1] - hy[h - 2]) * (t - ht[h - 1]) >= (
                y - hy[h - 1]
            ) * (ht[h - 1] - ht[h - 2]):
                h -= 1
            ht[h] = t
            hy[h] = y
            h += 1
        if h == 0:
            for j in range(m):
                out[r, j] = -1e30
                if want_arg:
                    arg[r, j] = 0.0
            continue
        v = 0
        for j in range(m):
            s = ss[j]
            while v + 1 < h and (hy[v + 1] - hy[v]) <= s * (ht[v + 1] - ht[v]):
                v += 1
            out[r, j] = s * ht[v] - hy[v]
            if want_arg:
                arg[r, j] = ht[v]
    return 0


def _conjugate_grid(
    p1s: NDArray[np.float64],
    p2s: NDArray[np.float64],
    values: NDArray[np.float64],
    x1s: NDArray[np.float64],
    x2s: NDArray[np.float64],
    want_arg: bool,
):
    """Two-pass 2-D conjugate; returns (out, argmax_p1, argmax_p2)."""
    n2 = p2s.size
    m1, m2 = x1s.size, x2s.size
    rows = np.ascontiguousarray(values.T)  # (n2, n1): fixed p2 per row
    a = np.empty((n2, m1))
    t1 = np.empty((n2, m1)) if want_arg else np.empty((1, 1))
    _llt_rows(p1s, rows, x1s, a, t1, want_arg)

    rows2 = np.ascontiguousarray(-a.T)  # (m1, n2); -(-SENTINEL) excluded
    out = np.empty((m1, m2))
    t2 = np.empty((m1, m2)) if want_arg else np.empty((1, 1))
    _llt_rows(p2s, rows2, x2s, out, t2, want_arg)
    if np.any(out <= -SENTINEL_CUT):
        raise ValueError("conjugate undefined: input has no finite values")
    if not want_arg:
        return out, None, None
    dp2 = p2s[1] - p2s[0] if n2 > 1 else 1.0
    j = np.rint((t2 - p2s[0]) / dp2).astype(np.int64)
    j = np.clip(j, 0, n2 - 1)
    p1arg = t1[j, np.arange(m1)[:, None]]
    return out, p1arg, t2


def warmup() -> None:
    """Force kernel compilation so later calls run at full speed."""
    ts = np.array([0.0, 1.0])
    rows = np.zeros((1, 2))
    out = np.empty((1, 2))
    _llt_rows(ts, rows, ts, out, out.copy(), False)


# ---------------------------------------------------------------------------
# plans and the public transform API


def _pow2_at_least(x: float) -> float:
    if x <= 0:
        raise ValueError(f"need a positive target, got {x}")
    return float(2.0 ** math.ceil(math.log2(x)))


@dataclass(frozen=True)
class ConjugationPlan:
    """Matched primal and dual windows for one conjugation."""

    primal_radius: float
    primal_n: int
    dual_radius: float
    dual_n: int

    def __post_init__(self) -> None:
        for r, n, side in (
            (self.primal_radius, self.primal_n, "primal"),
            (self.dual_radius, self.dual_n, "dual"),
        ):
            if r <= 0:
                raise ValueError(f"{side} radius must be positive, got {r}")
            if n < 2:
                raise ValueError(f"{side} node count must be at least 2, got {n}")

    @property
    def primal_spacing(self) -> float:
        return 2.0 * self.primal_radius / (self.primal_n - 1)

    @property
    def dual_spacing(self) -> float:
        return 2.0 * self.dual_radius / (self.dual_n - 1)

    @staticmethod
    def for_phi(
        eps: float,
        x_radius: float,
        x_n: int,
        margin: float = 1.25,
        spacing_ratio: float = 2.0,
    ) -> "ConjugationPlan":
        """Window pair for ``phi_eps`` on ``[-x_radius, x_radius]^2``.

        The primal (p) radius covers the maximizer bound ``|p*| <= |x|/eps``
        with the given margin, rounded up to a power of two so aligned
        slopes stay on dual nodes; the p spacing is tied to the x spacing
        to keep the gradient quantization a fixed multiple.
        """
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        dx = 2.0 * x_radius / (x_n - 1)
        dp = spacing_ratio * dx
        p_radius = _pow2_at_least(x_radius / eps * margin)
        half = math.ceil(p_radius / dp - 1e-12)
        return ConjugationPlan(
            primal_radius=half * dp, primal_n=2 * half + 1, dual_radius=x_radius, dual_n=x_n
        )


def _centered_axis(radius: float, n: int) -> NDArray[np.float64]:
    return -radius + (2.0 * radius / (n - 1)) * np.arange(n)


def conjugate2d(
    field: GridField2D, plan: ConjugationPlan, with_argmax: bool = False
):
    """Discrete conjugate of ``field`` sampled on the plan's dual window.

    Returns the conjugate field, plus the two argmax coordinate fields
    when ``with_argmax`` is set (the maximizing primal node per output
    node, a true subgradient of the piecewise affine result).
    """
    x1s = _centered_axis(plan.dual_radius, plan.dual_n)
    out, a1, a2 = _conjugate_grid(
        field.axis1, field.axis2, field.values, x1s, x1s, with_argmax
    )
    origin, spacing = GridField2D.centered(plan.dual_radius, plan.dual_n)
    g = GridField2D(origin=origin, spacing=spacing, values=out)
    if not with_argmax:
        return g
    return (
        g,
        GridField2D(origin=origin, spacing=spacing, values=a1),
        GridField2D(origin=origin, spacing=spacing, values=a2),
    )


def biconjugate(field: GridField2D, plan: ConjugationPlan) -> GridField2D:
    """Convex envelope of the sampled data: conjugate twice.

    The intermediate slope window is the plan's dual side; the output
    returns to the field's own window.  Exact at the nodes whenever the
    envelope's active slopes lie on dual nodes.
    """
    star = conjugate2d(field, plan)
    n1 = field.values.shape[0]
    r1 = 0.5 * field.spacing[0] * (n1 - 1)
    back = ConjugationPlan(
        primal_radius=plan.dual_radius, primal_n=plan.dual_n, dual_radius=r1, dual_n=n1
    )
    return conjugate2d(star, back)


# ---------------------------------------------------------------------------
# admissible smoothing range


def epsilon_zero(frame: DirectionFrame) -> float:
    """Smallest of the frame's axis margins and the wrap slope."""
    v0, v1, v2 = frame.v0, frame.v1, frame.v2
    return min(v0.x1, v0.x2, -v1.x1, v1.x2, v2.x1, -v2.x2, frame.gamma)


def epsilon_bound(frame: DirectionFrame, delta_certified: float) -> float:
    """Upper limit for the smoothing parameter ``eps``.

    Scales the frame margin by the certified coercivity ``delta`` squared
    over the largest frame vector norm, so every admissible ``eps`` keeps
    the smoothed gradients inside the cone bounds.
    """
    if delta_certified <= 0:
        raise ValueError(f"certified delta must be positive, got {delta_certified}")
    norms = [
        frame.v0.norm(),
        frame.v1.norm(),
        frame.v2.norm(),
        frame.m_gamma.norm(),
        frame.n_gamma.norm(),
    ]
    return epsilon_zero(frame) * delta_certified**2 / max(norms)


# ---------------------------------------------------------------------------
# phi_eps construction


@dataclass
class TestFunction:
    """Smoothed conjugate ``phi_eps`` with gradient fields and constants.

    ``phi`` holds the raw conjugate; a linear shift turns it into the
    test function ``f(x) = phi_eps(x) + a . x`` whose values and
    gradients are exposed through ``f_values`` and ``grad_values``.
    ``gap`` bounds the one-sided discretization deficit of the conjugate
    (true value minus sampled value), from the primal node spacing and
    the quadratic growth of ``eta``.
    """

    phi: GridField2D
    grad1: GridField2D
    grad2: GridField2D
    eps: float
    plan: ConjugationPlan
    delta_certified: float
    C_certified: float
    shift: Vec2 = field(default_factory=lambda: Vec2(0.0, 0.0))
    eps_limit: float = 0.0

    @property
    def lower_coeff(self) -> float:
        """Quadratic lower constant for the unshifted ``phi_eps``."""
        return 1.0 / (4.0 * (self.eps + self.C_certified**2))

    @property
    def upper_coeff(self) -> float:
        """Quadratic upper constant for the unshifted ``phi_eps``."""
        return 1.0 / (4.0 * (self.eps + self.delta_certified**2))

    @property
    def gap(self) -> float:
        dp = self.plan.primal_spacing
        return (self.eps + self.C_certified**2) * dp * dp / 4.0

    def f_values(self) -> NDArray[np.float64]:
        x1, x2 = self.phi.meshgrid()
        return self.phi.values + self.shift.x1 * x1 + self.shift.x2 * x2

    def grad_values(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return self.grad1.values + self.shift.x1, self.grad2.values + self.shift.x2

    def growth_constants(self) -> tuple[float, float]:
        """Constants ``(d, C)`` with ``d|x|^2 - C <= f <= C(|x|^2 + 1)``."""
        a = self.shift.norm()
        if a == 0.0:
            return self.lower_coeff, self.upper_coeff
        d = 0.5 * self.lower_coeff
        c_low = a * a / (2.0 * self.lower_coeff)
        c_high = self.upper_coeff + 0.5 + 0.5 * a * a
        return d, max(c_low, c_high)


def build_phi_eps(bundle, eps: float, plan: ConjugationPlan | None = None) -> TestFunction:
    """Conjugate ``eta = psi^2 + eps |p|^2`` into a smooth test function.

    ``bundle`` must expose the envelope interface: ``frame``, certified
    constants ``delta``, ``C``, ``grad_lo``, and a vectorized pointwise
    ``evaluate(X1, X2)``.  Refuses any ``eps`` at or above the admissible
    bound.  The gradient fields hold the maximizing primal node, a true
    subgradient of the discrete conjugate.
    """
    delta_cert = min(bundle.delta, bundle.grad_lo)
    limit = epsilon_bound(bundle.frame, delta_cert)
    if not 0.0 < eps < limit:
        raise ValueError(
            f"eps = {eps} outside the admissible range (0, {limit:.6g}) "
            f"for certified delta = {delta_cert:.6g}"
        )
    if plan is None:
        plan = ConjugationPlan.for_phi(eps, x_radius=8.0, x_n=513)

    ps = _centered_axis(plan.primal_radius, plan.primal_n)
    P1, P2 = np.meshgrid(ps, ps, indexing="ij")
    psi = np.asarray(bundle.evaluate(P1, P2), dtype=float)
    eta = psi * psi + eps * (P1 * P1 + P2 * P2)
    origin, spacing = GridField2D.centered(plan.primal_radius, plan.primal_n)
    eta_field = GridField2D(origin=origin, spacing=spacing, values=eta)
    phi, g1, g2 = conjugate2d(eta_field, plan, with_argmax=True)
    return TestFunction(
        phi=phi,
        grad1=g1,
        grad2=g2,
        eps=eps,
        plan=plan,
        delta_certified=delta_cert,
        C_certified=bundle.C,
        eps_limit=limit,
    )


def build_test_function(tf: TestFunction, a: Vec2) -> TestFunction:
    """Attach the linear part ``a . x`` matching a fixed point shift."""
    return TestFunction(
        phi=tf.phi,
        grad1=tf.grad1,
        grad2=tf.grad2,
        eps=tf.eps,
        plan=tf.plan,
        delta_certified=tf.delta_certified,
        C_certified=tf.C_certified,
        shift=a,
        eps_limit=tf.eps_limit,
    )


# ---------------------------------------------------------------------------
# audits


def _gradient_error_estimate(tf: TestFunction) -> float:
    """Sup-norm error bound for the argmax gradient field.

    Node quantization contributes the primal spacing; the conjugation
    deficit moves the maximizer by at most ``sqrt(gap / strong
    convexity)`` with modulus ``eps + delta^2``.
    """
    dp = tf.plan.primal_spacing
    return dp + math.sqrt(tf.gap / (tf.eps + tf.delta_certified**2))


@dataclass
class SignAuditReport:
    tol: float
    violations: int
    worst: float
    worst_at: Vec2
    ok: bool


def boundary_sign_audit(
    tf: TestFunction, spec: NeumannSpec, tol: float | None = None
) -> SignAuditReport:
    """Check the boundary operator signs of ``Df`` over the whole grid.

    Requires ``H1(Df) >= -tol`` where ``x1 <= 0`` and ``<= tol`` where
    ``x1 >= 0``, and the mirrored statement for ``H2``.  The default
    tolerance is ten times the gradient error estimate scaled by the
    boundary map's Lipschitz growth.
    """
    g1, g2 = tf.grad_values()
    h1 = spec.h1.eval_many(g2)
    h2 = spec.h2.eval_many(g1)
    H1 = -g1 + h1
    H2 = -g2 + h2
    if tol is None:
        lip = max(
            [1.0]
            + [abs(s) for s in spec.h1.slopes]
            + [abs(s) for s in spec.h2.slopes]
        )
        tol = 10.0 * (1.0 + lip) * _gradient_error_estimate(tf)

    x1, x2 = tf.phi.meshgrid()
    # sign defect: how far each condition digs into the forbidden side
    bad = np.full_like(H1, -np.inf)
    np.maximum(bad, np.where(x1 <= 0.0, -H1, -np.inf), out=bad)
    np.maximum(bad, np.where(x1 >= 0.0, H1, -np.inf), out=bad)
    np.maximum(bad, np.where(x2 <= 0.0, -H2, -np.inf), out=bad)
    np.maximum(bad, np.where(x2 >= 0.0, H2, -np.inf), out=bad)
    worst_idx = np.unravel_index(np.argmax(bad), bad.shape)
    worst = float(bad[worst_idx])
    count = int(np.count_nonzero(bad > tol))
    return SignAuditReport(
        tol=float(tol),
        violations=count,
        worst=worst,
        worst_at=tf.phi.node(*map(int, worst_idx)),
        ok=count == 0,
    )


@dataclass
class C11AuditReport:
    lip_estimate: float
    lip_bound: float
    sandwich_lower_margin: float
    sandwich_upper_margin: float
    allowance: float
    ok: bool


def c11_audit(tf: TestFunction, lip_slack: float = 1.05) -> C11AuditReport:
    """Gradient Lipschitz estimate and the quadratic sandwich.

    The finite-difference Lipschitz estimate of the argmax gradient must
    stay below ``1/(2 eps)`` with the given slack.  The difference stride
    is chosen long enough that gradient quantization (one primal node)
    contributes at most a few percent of the bound.  The sandwich
    ``lower_coeff |x|^2 <= phi <= upper_coeff |x|^2`` is checked at all
    nodes; the lower side carries an explicit allowance for the one-sided
    conjugation deficit (the sampled conjugate never exceeds the true
    one), four times the pointwise gap bound to cover both coordinates
    and kink crossings.
    """
    d = tf.phi.spacing[0]
    ratio = tf.plan.primal_spacing / d
    n = min(tf.phi.shape)
    k = max(1, min((n - 1) // 8, math.ceil(ratio * 2.0 * tf.eps / 0.04)))
    est = 0.0
    for g in (tf.grad1.values, tf.grad2.values):
        est = max(est, float(np.max(np.abs(g[k:, :] - g[:-k, :]))) / (k * d))
        est = max(est, float(np.max(np.abs(g[:, k:] - g[:, :-k]))) / (k * tf.phi.spacing[1]))
    bound = lip_slack / (2.0 * tf.eps)

    x1, x2 = tf.phi.meshgrid()
    r2 = x1 * x1 + x2 * x2
    allowance = 4.0 * tf.gap
    lower_margin = float(np.min(tf.phi.values - tf.lower_coeff * r2 + allowance))
    upper_margin = float(np.min(tf.upper_coeff * r2 - tf.phi.values + 1e-12))
    return C11AuditReport(
        lip_estimate=est,
        lip_bound=bound,
        sandwich_lower_margin=lower_margin,
        sandwich_upper_margin=upper_margin,
        allowance=allowance,
        ok=(est <= bound) and lower_margin >= 0.0 and upper_margin >= 0.0,
    )


def growth_audit(tf: TestFunction) -> dict:
    """Gridwise check of ``d|x|^2 - C <= f <= C(|x|^2 + 1)``."""
    d, c = tf.growth_constants()
    f = tf.f_values()
    x1, x2 = tf.phi.meshgrid()
    r2 = x1 * x1 + x2 * x2
    allowance = 4.0 * tf.gap
    lower = float(np.min(f - (d * r2 - c) + allowance))
    upper = float(np.min(c * (r2 + 1.0) - f))
    return {
        "d": d,
        "C": c,
        "lower_margin": lower,
        "upper_margin": upper,
        "ok": lower >= 0.0 and upper >= 0.0,
    }


@njit(cache=True)
def _moreau_min(psi2, p1s, p2s, eps, c1, c2):
    best = 1e300
    for i in range(p1s.size):
        d1 = p1s[i] - c1
        for j in range(p2s.size):
            d2 = p2s[j] - c2
            v = psi2[i, j] + eps * (d1 * d1 + d2 * d2)
            if v < best:
                best = v
    return best


def moreau_cross_check(tf: TestFunction, bundle, points: list[Vec2]) -> float:
    """Largest discrepancy between the conjugate and the Moreau route.

    Evaluates ``|x|^2/(4 eps) - min_p (psi(p)^2 + eps |p - x/(2 eps)|^2)``
    over the same primal grid and compares with the stored ``phi_eps`` at
    each requested node.
    """
    ps = _centered_axis(tf.plan.primal_radius, tf.plan.primal_n)
    P1, P2 = np.meshgrid(ps, ps, indexing="ij")
    psi = np.asarray(bundle.evaluate(P1, P2), dtype=float)
    psi2 = psi * psi
    worst = 0.0
    for x in points:
        c1 = x.x1 / (2.0 * tf.eps)
        c2 = x.x2 / (2.0 * tf.eps)
        env = _moreau_min(psi2, ps, ps, tf.eps, c1, c2)
        via = (x.x1 * x.x1 + x.x2 * x.x2) / (4.0 * tf.eps) - env
        worst = max(worst, abs(via - tf.phi.value_at(x)))
    return worst


def duality_roundtrip(
    tf: TestFunction, bundle, n: int = 1025, radius: float | None = None
) -> dict:
    """Conjugate ``phi_eps`` back and compare with ``eta`` on an inner window.

    The window radius defaults to a conservative fraction of the region
    where the back-conjugation's maximizer stays inside the x window.
    Returns the relative sup error against the scale ``sup |eta|``.
    """
    if radius is None:
        x_rad = tf.plan.dual_radius
        radius = 0.8 * x_rad / (2.0 * (tf.C_certified**2 + tf.eps))
    back = ConjugationPlan(
        primal_radius=tf.plan.dual_radius,
        primal_n=tf.plan.dual_n,
        dual_radius=radius,
        dual_n=n,
    )
    eta_back = conjugate2d(tf.phi, back)
    Q1, Q2 = eta_back.meshgrid()
    psi = np.asarray(bundle.evaluate(Q1, Q2), dtype=float)
    eta_exact = psi * psi + tf.eps * (Q1 * Q1 + Q2 * Q2)
    scale = float(np.max(np.abs(eta_exact)))
    err = float(np.max(np.abs(eta_back.values - eta_exact)))
    return {"radius": radius, "scale": scale, "sup_error": err, "relative": err / scale}


def young_fenchel_check(
    tf: TestFunction, bundle, count: int = 200, seed: int = 0
) -> dict:
    """Sampled Young inequality ``x . p <= phi(x) + eta(p)`` with equality
    at the maximizing node."""
    rng = np.random.default_rng(seed)
    n1, n2 = tf.phi.shape
    ii = rng.integers(0, n1, size=count)
    jj = rng.integers(0, n2, size=count)
    x1 = tf.phi.axis1[ii]
    x2 = tf.phi.axis2[jj]
    ps = _centered_axis(tf.plan.primal_radius, tf.plan.primal_n)
    kk = rng.integers(0, ps.size, size=count)
    ll = rng.integers(0, ps.size, size=count)
    p1 = ps[kk]
    p2 = ps[ll]
    psi = np.asarray(bundle.evaluate(p1, p2), dtype=float)
    eta = psi * psi + tf.eps * (p1 * p1 + p2 * p2)
    phi = tf.phi.values[ii, jj]
    slack = phi + eta - (x1 * p1 + x2 * p2)
    worst_ineq = float(np.min(slack))

    # equality at the stored argmax
    g1 = tf.grad1.values[ii, jj]
    g2 = tf.grad2.values[ii, jj]
    psi_g = np.asarray(bundle.evaluate(g1, g2), dtype=float)
    eta_g = psi_g * psi_g + tf.eps * (g1 * g1 + g2 * g2)
    eq_gap = float(np.max(np.abs(phi + eta_g - (x1 * g1 + x2 * g2))))
    return {
        "worst_inequality_slack": worst_ineq,
        "worst_equality_gap": eq_gap,
        "ok": worst_ineq >= -1e-9 and eq_gap <= 1e-9 * max(1.0, float(np.max(np.abs(phi)))),
    }
