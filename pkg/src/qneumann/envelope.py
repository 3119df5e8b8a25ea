"""Polyhedral gauge envelope built from a verified direction frame.

Three piecewise-linear components cover the regions where one of the
frame directions is active; their pointwise maximum, restricted away
from the lower-left region and convexified, is the envelope ``psi``.
Two routes to ``psi`` live here:

* an exact evaluator: the component formulas where they are trusted,
  and on the lower-left region a bisection for the level whose chord
  passes through the point (level sets are convex, so the boundary
  there is the straight chord between the two curve points);
* a grid build through a double discrete Legendre transform, which is
  what the certification pipeline audits (and is exact at the nodes
  whenever the active slopes land on dual-grid nodes).

The bundle produced by the grid build carries certified growth
constants and least-squares subgradient fields, and exposes the exact
evaluator for downstream consumers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .frame import DirectionFrame, NormalizedSpec, TransferSet, transfer_set
from .gridfield import SENTINEL, GridField2D
from .legendre import ConjugationPlan, conjugate2d
from .pl1d import PL1D, Vec2, compose_through_inverse, pl_compose, pl_inverse

__all__ = [
    "PsiComponents",
    "psi_components",
    "PsiEvaluator",
    "PsiBundle",
    "build_psi",
    "chi",
    "chi_many",
    "NormalConeReport",
    "normal_cone_audit",
]


# ---------------------------------------------------------------------------
# component formulas


@dataclass(frozen=True)
class PsiComponents:
    psi0: float
    psi1: float
    psi2: float
    psi_tilde: float


def _branch_maps(ts: TransferSet) -> tuple[PL1D, PL1D]:
    """Level reparameterizations carrying each side branch to the scale
    of the first one."""
    return (
        compose_through_inverse(ts.f1, ts.g1, "nonneg"),
        compose_through_inverse(ts.f2, ts.g2, "nonneg"),
    )


def psi_components(frame: DirectionFrame, ts: TransferSet, x: Vec2) -> PsiComponents:
    """The three envelope components and their maximum at one point."""
    F1, F2 = _branch_maps(ts)
    psi0 = max(frame.v0.dot(x), 0.0)
    psi1 = F1.eval(max(frame.v1.dot(x), 0.0))
    psi2 = F2.eval(max(frame.v2.dot(x), 0.0))
    return PsiComponents(psi0, psi1, psi2, max(psi0, psi1, psi2))


# ---------------------------------------------------------------------------
# exact evaluator


@njit(cache=True)
def _pl_eval_nb(t, bps, vals, slopes, anchor):
    n = bps.size
    if n == 0:
        return anchor + slopes[0] * t
    if t == 0.0:
        return anchor
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) // 2
        if bps[mid] <= t:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return vals[0] + slopes[0] * (t - bps[0])
    return vals[lo - 1] + slopes[lo] * (t - bps[lo - 1])


@njit(cache=True)
def _chord_side(
    lam, x1, x2,
    t1b, t1v, t1s, t1a,
    t2b, t2v, t2s, t2a,
    h1b, h1v, h1s, h1a,
    h2b, h2v, h2s, h2a,
):
    tq = _pl_eval_nb(lam, t1b, t1v, t1s, t1a)
    xq1 = tq
    xq2 = _pl_eval_nb(tq, h2b, h2v, h2s, h2a)
    tr = _pl_eval_nb(lam, t2b, t2v, t2s, t2a)
    xr1 = _pl_eval_nb(tr, h1b, h1v, h1s, h1a)
    xr2 = tr
    return (xr1 - xq1) * (x2 - xq2) - (xr2 - xq2) * (x1 - xq1)


@njit(cache=True)
def _chord_levels(
    xs1, xs2, orient, scale, iters,
    t1b, t1v, t1s, t1a,
    t2b, t2v, t2s, t2a,
    h1b, h1v, h1s, h1a,
    h2b, h2v, h2s, h2a,
):
    out = np.empty(xs1.size)
    for k in range(xs1.size):
        x1 = xs1[k]
        x2 = xs2[k]
        hi = scale * (abs(x1) + abs(x2) + 1.0)
        grew = 0
        while (
            orient
            * _chord_side(
                hi, x1, x2,
                t1b, t1v, t1s, t1a, t2b, t2v, t2s, t2a,
                h1b, h1v, h1s, h1a, h2b, h2v, h2s, h2a,
            )
            <= 0.0
            and grew < 200
        ):
            hi *= 2.0
            grew += 1
        lo = 0.0
        for _ in range(iters):
            lam = 0.5 * (lo + hi)
            c = orient * _chord_side(
                lam, x1, x2,
                t1b, t1v, t1s, t1a, t2b, t2v, t2s, t2a,
                h1b, h1v, h1s, h1a, h2b, h2v, h2s, h2a,
            )
            if c > 0.0:
                hi = lam
            else:
                lo = lam
        out[k] = 0.5 * (lo + hi)
    return out


def _pl_arrays(f: PL1D):
    return f._bps, f._values, f._slopes, float(f.anchor_value)


class PsiEvaluator:
    """Pointwise-exact envelope evaluation on the whole plane."""

    def __init__(self, frame: DirectionFrame, nspec: NormalizedSpec):
        self.frame = frame
        self.nspec = nspec
        self.ts = transfer_set(frame, nspec)
        self.F1, self.F2 = _branch_maps(self.ts)
        # level -> curve parameter chains for the two chord endpoints
        a1 = compose_through_inverse(self.ts.g1, self.ts.f1, "nonneg")
        a2 = compose_through_inverse(self.ts.g2, self.ts.f2, "nonneg")
        self.t_qs = pl_compose(pl_inverse(self.ts.p1, "nonpos"), a1)
        self.t_rs = pl_compose(pl_inverse(self.ts.p2, "nonpos"), a2)
        self._arrays = (
            _pl_arrays(self.t_qs)
            + _pl_arrays(self.t_rs)
            + _pl_arrays(nspec.h1)
            + _pl_arrays(nspec.h2)
        )
        side0 = _chord_side(1.0, 0.0, 0.0, *self._arrays)
        if side0 == 0.0:
            raise ValueError("degenerate chord geometry at level 1")
        self._orient = 1.0 if side0 > 0.0 else -1.0
        norms = [frame.v0.norm(), frame.v1.norm(), frame.v2.norm()]
        self._scale = max(norms) * max(1.0, 1.0 / frame.gamma)

    def chord(self, lam: float) -> tuple[Vec2, Vec2]:
        """Endpoints of the level-``lam`` chord across the lower-left region."""
        tq = self.t_qs.eval(lam)
        tr = self.t_rs.eval(lam)
        return (
            Vec2(tq, self.nspec.h2.eval(tq)),
            Vec2(self.nspec.h1.eval(tr), tr),
        )

    def tilde_many(self, X1, X2) -> NDArray[np.float64]:
        """Component maximum (trusted outside the lower-left region)."""
        X1 = np.asarray(X1, dtype=float)
        X2 = np.asarray(X2, dtype=float)
        v0 = self.frame.v0
        v1 = self.frame.v1
        v2 = self.frame.v2
        p0 = np.maximum(v0.x1 * X1 + v0.x2 * X2, 0.0)
        p1 = self.F1.eval_many(np.maximum(v1.x1 * X1 + v1.x2 * X2, 0.0))
        p2 = self.F2.eval_many(np.maximum(v2.x1 * X1 + v2.x2 * X2, 0.0))
        return np.maximum(np.maximum(p0, p1), p2)

    def lower_left_mask(self, X1, X2) -> NDArray[np.bool_]:
        X1 = np.asarray(X1, dtype=float)
        X2 = np.asarray(X2, dtype=float)
        d1 = X1 - self.nspec.h1.eval_many(X2)
        d2 = X2 - self.nspec.h2.eval_many(X1)
        return (d1 < 0.0) & (d2 < 0.0)

    def restricted_many(self, X1, X2) -> NDArray[np.float64]:
        """Component maximum with the lower-left region blanked out."""
        out = self.tilde_many(X1, X2)
        out[self.lower_left_mask(X1, X2)] = SENTINEL
        return out

    def many(self, X1, X2) -> NDArray[np.float64]:
        X1 = np.asarray(X1, dtype=float)
        X2 = np.asarray(X2, dtype=float)
        out = self.tilde_many(X1, X2)
        mask = self.lower_left_mask(X1, X2)
        if np.any(mask):
            lam = _chord_levels(
                np.ascontiguousarray(X1[mask], dtype=float).ravel(),
                np.ascontiguousarray(X2[mask], dtype=float).ravel(),
                self._orient,
                self._scale,
                100,
                *self._arrays,
            )
            out[mask] = lam
        return out

    __call__ = many

    def at(self, x: Vec2) -> float:
        return float(self.many(np.array([x.x1]), np.array([x.x2]))[0])


# ---------------------------------------------------------------------------
# grid build


def _lsq_gradients(values: NDArray[np.float64], d: float):
    """Least-squares plane slopes from the 5x5 stencil around each
    interior node (margin 2)."""
    n1, n2 = values.shape
    g1 = np.zeros((n1 - 4, n2 - 4))
    g2 = np.zeros((n1 - 4, n2 - 4))
    for a in range(-2, 3):
        for b in range(-2, 3):
            block = values[2 + a : n1 - 2 + a, 2 + b : n2 - 2 + b]
            if a:
                g1 += a * block
            if b:
                g2 += b * block
    g1 /= 50.0 * d
    g2 /= 50.0 * d
    return g1, g2


@dataclass
class PsiBundle:
    """Certified envelope field with growth constants and subgradients."""

    field: GridField2D
    grad1: GridField2D
    grad2: GridField2D
    delta: float
    C: float
    grad_lo: float
    grad_hi: float
    frame: DirectionFrame
    nspec: NormalizedSpec
    evaluator: PsiEvaluator
    dual_radius: float
    dual_n: int
    warnings: list[str] = dataclass_field(default_factory=list)
    diagnostics: dict = dataclass_field(default_factory=dict)

    def evaluate(self, X1, X2) -> NDArray[np.float64]:
        return self.evaluator.many(X1, X2)


def _active_gradient_components(frame: DirectionFrame, F1: PL1D, F2: PL1D) -> list[float]:
    comps = [frame.v0.x1, frame.v0.x2]
    for s in F1.slopes:
        comps += [s * frame.v1.x1, s * frame.v1.x2]
    for s in F2.slopes:
        comps += [s * frame.v2.x1, s * frame.v2.x2]
    return comps


def build_psi(
    frame: DirectionFrame,
    nspec: NormalizedSpec,
    radius: float = 8.0,
    n: int = 513,
    window_factor: float = 4.0,
    dual_radius: float | None = None,
    dual_n: int | None = None,
) -> PsiBundle:
    """Grid the envelope on ``[-radius, radius]^2`` with ``n^2`` nodes.

    The restricted component maximum is sampled on a window enlarged by
    ``window_factor`` (so hull truncation cannot reach the inner region),
    conjugated onto a slope window wide enough for every active gradient,
    and conjugated back onto the requested window.  Growth constants and
    subgradient norms exclude the ``2 * spacing`` neighborhood of the
    origin, where any finite stencil straddles the apex.
    """
    if n < 9:
        raise ValueError(f"need at least 9 nodes per side, got {n}")
    ev = PsiEvaluator(frame, nspec)
    d = 2.0 * radius / (n - 1)
    big_half = int(round(window_factor * radius / d))
    big_radius = big_half * d
    big_n = 2 * big_half + 1

    X1, X2 = np.meshgrid(
        -big_radius + d * np.arange(big_n), -big_radius + d * np.arange(big_n), indexing="ij"
    )
    restricted = ev.restricted_many(X1, X2)
    origin, spacing = GridField2D.centered(big_radius, big_n)
    big_field = GridField2D(origin=origin, spacing=spacing, values=restricted)

    warnings_list: list[str] = []
    comps = _active_gradient_components(frame, ev.F1, ev.F2)
    gmax = max(abs(c) for c in comps)
    if dual_radius is None:
        dual_radius = 2.0 ** math.ceil(math.log2(1.25 * gmax))
    if dual_n is None:
        dual_n = n
    dd = 2.0 * dual_radius / (dual_n - 1)
    off_grid = [c for c in comps if abs(c / dd - round(c / dd)) > 1e-9]
    if off_grid:
        warnings_list.append(
            f"{len(off_grid)} active gradient components fall between slope nodes "
            f"(spacing {dd:.3g}); node values carry an O(spacing) envelope error"
        )

    to_dual = ConjugationPlan(
        primal_radius=big_radius, primal_n=big_n, dual_radius=dual_radius, dual_n=dual_n
    )
    star = conjugate2d(big_field, to_dual)
    back = ConjugationPlan(
        primal_radius=dual_radius, primal_n=dual_n, dual_radius=radius, dual_n=n
    )
    psi_field = conjugate2d(star, back)

    x1, x2 = psi_field.meshgrid()
    rinf = np.maximum(np.abs(x1), np.abs(x2))
    away = rinf > 2.0 * d + 1e-12
    r = np.hypot(x1, x2)
    ratios = psi_field.values[away] / r[away]
    delta = float(np.min(ratios))
    cmax = float(np.max(ratios))

    g1, g2 = _lsq_gradients(psi_field.values, d)
    ginner_origin = Vec2(float(x1[2, 0]), float(x2[0, 2]))
    gfield1 = GridField2D(origin=ginner_origin, spacing=spacing, values=g1)
    gfield2 = GridField2D(origin=ginner_origin, spacing=spacing, values=g2)
    norms = np.hypot(g1, g2)
    away_in = away[2:-2, 2:-2]
    grad_lo = float(np.min(norms[away_in]))
    grad_hi = float(np.max(norms[away_in]))

    # supporting-plane validation on a subsample of stencils
    stride = max(1, (n - 4) // 64)
    core = psi_field.values[2:-2, 2:-2]
    worst_support = 0.0
    for a in range(-2, 3):
        for b in range(-2, 3):
            block = psi_field.values[2 + a : n - 2 + a, 2 + b : n - 2 + b]
            deficit = core + d * (a * g1 + b * g2) - block
            worst_support = max(worst_support, float(np.max(deficit[::stride, ::stride])))
    if worst_support > 4.0 * d * max(1.0, grad_hi):
        warnings_list.append(
            f"supporting-plane deficit {worst_support:.3g} exceeds the coarse-grid "
            f"threshold; the grid may be too coarse for reliable subgradients"
        )

    trusted = ~ev.lower_left_mask(x1, x2)
    dev = float(np.max(np.abs(psi_field.values[trusted] - ev.tilde_many(x1, x2)[trusted])))
    diagnostics = {
        "component_deviation": dev,
        "support_plane_deficit": worst_support,
        "gradient_components": sorted(set(round(c, 12) for c in comps)),
    }
    return PsiBundle(
        field=psi_field,
        grad1=gfield1,
        grad2=gfield2,
        delta=delta,
        C=cmax,
        grad_lo=grad_lo,
        grad_hi=grad_hi,
        frame=frame,
        nspec=nspec,
        evaluator=ev,
        dual_radius=dual_radius,
        dual_n=dual_n,
        warnings=warnings_list,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# wrap minorants


def _wrap_maps(frame: DirectionFrame, ts: TransferSet) -> tuple[PL1D, PL1D]:
    F1, F2 = _branch_maps(ts)
    w1 = compose_through_inverse(ts.p1, ts.q1, "nonpos")
    w2 = compose_through_inverse(ts.p2, ts.q2, "nonpos")
    return pl_compose(F1, w1), pl_compose(F2, w2)


def chi(frame: DirectionFrame, ts: TransferSet, index: int, x: Vec2) -> float:
    """Wrap minorant touching the envelope on one curve.

    ``index = 1`` wraps past the first curve (driven by the slope
    direction paired with it), ``index = 2`` past the second.
    """
    c1, c2 = _wrap_maps(frame, ts)
    if index == 1:
        return c1.eval(max(frame.m_gamma.dot(x), 0.0))
    if index == 2:
        return c2.eval(max(frame.n_gamma.dot(x), 0.0))
    raise ValueError(f"index must be 1 or 2, got {index}")


def chi_many(
    frame: DirectionFrame, ts: TransferSet, index: int, X1, X2
) -> NDArray[np.float64]:
    c1, c2 = _wrap_maps(frame, ts)
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if index == 1:
        m = frame.m_gamma
        return c1.eval_many(np.maximum(m.x1 * X1 + m.x2 * X2, 0.0))
    if index == 2:
        nv = frame.n_gamma
        return c2.eval_many(np.maximum(nv.x1 * X1 + nv.x2 * X2, 0.0))
    raise ValueError(f"index must be 1 or 2, got {index}")


# ---------------------------------------------------------------------------
# normal cone audit


@dataclass
class NormalConeReport:
    level: float
    samples: int
    failures: list[tuple[Vec2, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


def _in_cone(g: NDArray[np.float64], u: Vec2, w: Vec2, tol: float) -> bool:
    det = u.x1 * w.x2 - u.x2 * w.x1
    if det == 0.0:
        return False
    a = (g[0] * w.x2 - g[1] * w.x1) / det
    b = (u.x1 * g[1] - u.x2 * g[0]) / det
    return a >= -tol and b >= -tol


def normal_cone_audit(
    ev: PsiEvaluator,
    lam: float,
    per_arc: int = 9,
    fd_step: float = 1e-5,
    tol: float = 1e-6,
) -> NormalConeReport:
    """Check sampled envelope subgradients against the cone bounds.

    Walks the four arcs of the level set (the three straight component
    pieces and the chord), estimates subgradients by central differences,
    and requires membership in every cone prescribed for the sample's
    position relative to the two curves.
    """
    from .frame import level_quadruple

    quad = level_quadruple(ev.ts, ev.nspec, lam)
    frame = ev.frame
    arcs = [
        (quad.x_pq, quad.x_pr),
        (quad.x_pq, quad.x_qs),
        (quad.x_pr, quad.x_rs),
        (quad.x_qs, quad.x_rs),
    ]
    failures: list[tuple[Vec2, str]] = []
    count = 0
    for a, b in arcs:
        for i in range(per_arc):
            th = i / (per_arc - 1) if per_arc > 1 else 0.5
            y = Vec2(a.x1 + th * (b.x1 - a.x1), a.x2 + th * (b.x2 - a.x2))
            h = fd_step * max(1.0, abs(y.x1), abs(y.x2))
            g = np.array(
                [
                    (ev.at(Vec2(y.x1 + h, y.x2)) - ev.at(Vec2(y.x1 - h, y.x2))) / (2 * h),
                    (ev.at(Vec2(y.x1, y.x2 + h)) - ev.at(Vec2(y.x1, y.x2 - h))) / (2 * h),
                ]
            )
            nrm = float(np.hypot(g[0], g[1]))
            if nrm == 0.0:
                failures.append((y, "vanishing sampled gradient"))
                continue
            g = g / nrm
            d1 = y.x1 - ev.nspec.h1.eval(y.x2)
            d2 = y.x2 - ev.nspec.h2.eval(y.x1)
            side_tol = 2 * h
            cones = []
            if d1 < -side_tol:
                cones.append(("left of curve 1", frame.v1, frame.n_gamma))
            if d2 < -side_tol:
                cones.append(("below curve 2", frame.v2, frame.m_gamma))
            if d1 > side_tol:
                cones.append(("right of curve 1", frame.v0, frame.v2))
            if d2 > side_tol:
                cones.append(("above curve 2", frame.v0, frame.v1))
            count += 1
            for name, u, w in cones:
                if not _in_cone(g, u, w, tol):
                    failures.append((y, f"subgradient outside cone ({name})"))
    return NormalConeReport(level=lam, samples=count, failures=failures)
