"""Quadrant geometry induced by a pair of convex boundary maps.

The two boundary conditions carve the plane into four regions separated
by the curves ``x1 = h1(x2)`` and ``x2 = h2(x1)``.  A direction frame
``(v0, v1, v2)`` is admissible when each direction points uniformly
outward through the boundary curve it crosses; the continuum of
inequalities reduces to four dot products against the extreme slopes of
the boundary maps.  All derived objects (transfer maps between the two
curves, the four marked points on a level curve, the slope certificate
for the third-quadrant chord) are exact PL computations.

Conventions: ``gamma`` denotes the chord-slope certificate parameter in
``(0, 1)``; the associated probe directions are ``m = (-1, -gamma)`` and
``n = (-gamma, -1)``.  ``alpha_i`` is the slope of ``h_i`` at ``+inf``
and ``alpha_i0`` its slope just left of ``0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pl1d import (
    PL1D,
    InversionError,
    Vec2,
    check_h_admissible,
    graph_transfer,
    invert_monotone,
)

__all__ = [
    "NeumannSpec",
    "NormalizedSpec",
    "DirectionFrame",
    "TransferSet",
    "LevelQuadruple",
    "FrameReport",
    "SlopeRow",
    "fixed_point",
    "normalize",
    "classify_region",
    "example_frame",
    "homogeneous_spec",
    "verify_frame",
    "transfer_set",
    "level_quadruple",
    "slope_condition",
    "find_gamma",
    "default_lambda_samples",
    "search_frame",
]

GAMMA_GRID = 1e-4  # resolution of the certificate search


@dataclass(frozen=True)
class NeumannSpec:
    """Pair of admissible boundary maps.

    Raises ValueError at construction when either map is decreasing
    somewhere or has tail slope >= 1; those two properties carry the
    whole geometric pipeline.  Non-convex maps are admitted with a
    warning: the frame and chord certificates only read slope bounds,
    but envelope-layer convexity guarantees may fail.
    """

    h1: PL1D
    h2: PL1D

    def __post_init__(self) -> None:
        for name, h in (("h1", self.h1), ("h2", self.h2)):
            diag = check_h_admissible(h)
            if not (diag.nondecreasing and diag.tail_ok):
                raise ValueError(f"{name} inadmissible: {diag.message}")
            if not diag.convex:
                warnings.warn(
                    f"{name} is not convex; envelope-layer guarantees may degrade",
                    stacklevel=2,
                )

    @property
    def gamma1(self) -> float:
        return self.h1.tail_slope(+1)

    @property
    def gamma2(self) -> float:
        return self.h2.tail_slope(+1)


def fixed_point(spec: NeumannSpec, tol: float = 1e-12, max_iter: int = 10000) -> Vec2:
    """Unique point with ``a1 = h1(a2)`` and ``a2 = h2(a1)``.

    Iterates the contraction and, at every step, attempts an exact solve
    of the two active affine pieces; the solve is accepted only when the
    residual against the true maps is below ``tol``.
    """

    def affine_at(h: PL1D, t: float) -> tuple[float, float]:
        s = h.one_sided_slopes(t)[1]
        return h.eval(t) - s * t, s

    x1, x2 = 0.0, 0.0
    for _ in range(max_iter):
        c1, s1 = affine_at(spec.h1, x2)
        c2, s2 = affine_at(spec.h2, x1)
        den = 1.0 - s1 * s2
        if den > 0.0:
            a2 = (c2 + s2 * c1) / den
            a1 = c1 + s1 * a2
            if abs(a1 - spec.h1.eval(a2)) <= tol and abs(a2 - spec.h2.eval(a1)) <= tol:
                return Vec2(a1, a2)
        x1, x2 = spec.h1.eval(x2), spec.h2.eval(x1)
    raise RuntimeError(f"fixed point did not settle within {max_iter} iterations")


@dataclass(frozen=True)
class NormalizedSpec:
    """Boundary maps recentred so both curves pass through the origin."""

    base: NeumannSpec
    a: Vec2
    h1: PL1D
    h2: PL1D

    @property
    def alpha1(self) -> float:
        return self.h1.tail_slope(+1)

    @property
    def alpha2(self) -> float:
        return self.h2.tail_slope(+1)

    @property
    def alpha10(self) -> float:
        return self.h1.one_sided_slopes(0.0)[0]

    @property
    def alpha20(self) -> float:
        return self.h2.one_sided_slopes(0.0)[0]


def normalize(spec: NeumannSpec) -> NormalizedSpec:
    """Translate the fixed point of the boundary maps to the origin.

    The recentred maps are forced to vanish at ``0`` exactly (stored
    origin value set to zero); the forcing offset is bounded by the
    fixed-point residual.
    """
    a = fixed_point(spec)
    s1 = spec.h1.shifted(a.x2)
    s2 = spec.h2.shifted(a.x1)
    h1t = PL1D(s1.breakpoints, s1.slopes, 0.0)
    h2t = PL1D(s2.breakpoints, s2.slopes, 0.0)
    return NormalizedSpec(base=spec, a=a, h1=h1t, h2=h2t)


def classify_region(nspec: NormalizedSpec, x: Vec2) -> frozenset[str]:
    """Region tags containing ``x``; points on a curve carry both tags.

    ``P``: right of curve 1 and above curve 2; ``Q``: left of curve 1,
    above curve 2; ``R``: right of curve 1, below curve 2; ``S``: left
    and below.
    """
    d1 = x.x1 - nspec.h1.eval(x.x2)
    d2 = x.x2 - nspec.h2.eval(x.x1)
    tags = set()
    if d1 >= 0 and d2 >= 0:
        tags.add("P")
    if d1 <= 0 and d2 >= 0:
        tags.add("Q")
    if d1 >= 0 and d2 <= 0:
        tags.add("R")
    if d1 <= 0 and d2 <= 0:
        tags.add("S")
    return frozenset(tags)


@dataclass(frozen=True)
class DirectionFrame:
    """Admissible sweep directions and the chord-slope parameter."""

    v0: Vec2
    v1: Vec2
    v2: Vec2
    gamma: float

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def m_gamma(self) -> Vec2:
        return Vec2(-1.0, -self.gamma)

    @property
    def n_gamma(self) -> Vec2:
        return Vec2(-self.gamma, -1.0)

    def to_json(self) -> dict:
        return {
            "v0": [self.v0.x1, self.v0.x2],
            "v1": [self.v1.x1, self.v1.x2],
            "v2": [self.v2.x1, self.v2.x2],
            "gamma": self.gamma,
        }

    @staticmethod
    def from_json(obj: dict) -> "DirectionFrame":
        return DirectionFrame(
            v0=Vec2(*obj["v0"]),
            v1=Vec2(*obj["v1"]),
            v2=Vec2(*obj["v2"]),
            gamma=float(obj["gamma"]),
        )


GAMMA_CAP = 1.0 - GAMMA_GRID  # strict interior cap for derived gammas


def homogeneous_spec(
    alpha1: float, alpha2: float, alpha10: float = 0.0, alpha20: float = 0.0
) -> NeumannSpec:
    """Positively homogeneous boundary maps with one kink at the origin."""
    return NeumannSpec(
        h1=PL1D((0.0,), (alpha10, alpha1), 0.0),
        h2=PL1D((0.0,), (alpha20, alpha2), 0.0),
    )


def _homogeneous_frame(
    alpha1: float, alpha2: float, alpha10: float, alpha20: float
) -> DirectionFrame:
    for name, val in (
        ("alpha1", alpha1),
        ("alpha2", alpha2),
        ("alpha10", alpha10),
        ("alpha20", alpha20),
    ):
        if not (0.0 <= val < 1.0):
            raise ValueError(f"{name} must lie in [0, 1), got {val}")
    v0 = Vec2((1 - alpha2) / (1 - alpha1 * alpha2), (1 - alpha1) / (1 - alpha1 * alpha2))
    v1 = Vec2(-(1 + alpha20) / (1 - alpha1 * alpha20), (1 + alpha1) / (1 - alpha1 * alpha20))
    v2 = Vec2((1 + alpha2) / (1 - alpha10 * alpha2), -(1 + alpha10) / (1 - alpha10 * alpha2))
    gamma = min((1 - alpha20) / (1 - alpha10), (1 - alpha10) / (1 - alpha20), GAMMA_CAP)
    return DirectionFrame(v0=v0, v1=v1, v2=v2, gamma=gamma)


def _flat_side_frame(
    alpha1: float, alpha10: float, alpha2: float, eps0: float
) -> DirectionFrame:
    """Frame for maps whose second component is flat left of the origin."""
    if not (0.0 <= alpha10 < 1.0):
        raise ValueError(f"alpha10 must lie in [0, 1), got {alpha10}")
    if eps0 <= 0.0:
        raise ValueError(f"eps0 margin must be positive, got {eps0}")
    beta0 = eps0 + alpha10 / (1.0 - alpha10)
    beta = alpha1 + beta0 * (1.0 + alpha1)
    gamma = min((1 - alpha2) / ((1 + alpha2) * beta), (1 - alpha10) * eps0, GAMMA_CAP)
    return DirectionFrame(v0=Vec2(1.0, 1.0), v1=Vec2(-1.0, beta), v2=Vec2(1.0, -1.0), gamma=gamma)


def example_frame(kind: str, **params: float) -> DirectionFrame:
    """Closed-form frames for the two worked families.

    ``homogeneous`` takes ``alpha1, alpha2, alpha10, alpha20``;
    ``flat_side`` takes ``alpha1, alpha10, alpha2, eps0``.
    """
    if kind == "homogeneous":
        return _homogeneous_frame(
            params["alpha1"], params["alpha2"],
            params.get("alpha10", 0.0), params.get("alpha20", 0.0),
        )
    if kind == "flat_side":
        return _flat_side_frame(
            params["alpha1"], params.get("alpha10", 0.0),
            params.get("alpha2", 0.0), params.get("eps0", 1.0),
        )
    raise ValueError(f"unknown frame family {kind!r}")


@dataclass(frozen=True)
class TransferSet:
    """The eight level/chord transfer maps attached to a verified frame."""

    f1: PL1D
    f2: PL1D
    g1: PL1D
    g2: PL1D
    p1: PL1D
    p2: PL1D
    q1: PL1D
    q2: PL1D


def transfer_set(frame: DirectionFrame, nspec: NormalizedSpec) -> TransferSet:
    """Graph projections of the two curves onto the frame directions.

    ``f_i`` and ``g_i`` are uniformly increasing on the right half-line,
    ``p_i`` uniformly decreasing and ``q_i`` at least unit-decreasing on
    the left half-line; all vanish at the origin.
    """
    return TransferSet(
        f1=graph_transfer(frame.v0, 1, nspec.h1),
        f2=graph_transfer(frame.v0, 2, nspec.h2),
        g1=graph_transfer(frame.v1, 1, nspec.h1),
        g2=graph_transfer(frame.v2, 2, nspec.h2),
        p1=graph_transfer(frame.v1, 2, nspec.h2),
        p2=graph_transfer(frame.v2, 1, nspec.h1),
        q1=graph_transfer(frame.m_gamma, 2, nspec.h2),
        q2=graph_transfer(frame.n_gamma, 1, nspec.h1),
    )


@dataclass(frozen=True)
class FrameReport:
    """Sign pattern, reduced dot-product margins and monotonicity margins."""

    sign_ok: bool
    cond_v1: tuple[float, float]
    cond_v2: tuple[float, float]
    eps1: float
    eps2: float
    q_margin: float
    ok: bool


def verify_frame(frame: DirectionFrame, nspec: NormalizedSpec) -> FrameReport:
    """Check frame admissibility against a normalized spec.

    The continuum conditions reduce to dot products against the extreme
    slopes: ``v1`` must clear ``(alpha1, 1)`` and ``(-1, -alpha20)``,
    ``v2`` must clear ``(1, alpha2)`` and ``(-alpha10, -1)``.  The
    transfer monotonicity margins ``eps1`` (increase of f, g on the right)
    and ``eps2`` (decrease of p on the left) are read off the PL slopes.
    """
    v0, v1, v2 = frame.v0, frame.v1, frame.v2
    sign_ok = (
        v0.x1 > 0 and v0.x2 > 0 and v1.x1 < 0 and v1.x2 > 0 and v2.x1 > 0 and v2.x2 < 0
    )
    c1 = (v1.dot(Vec2(nspec.alpha1, 1.0)), v1.dot(Vec2(-1.0, -nspec.alpha20)))
    c2 = (v2.dot(Vec2(1.0, nspec.alpha2)), v2.dot(Vec2(-nspec.alpha10, -1.0)))
    ts = transfer_set(frame, nspec)
    eps1 = min(
        ts.f1.min_slope_on("nonneg"),
        ts.f2.min_slope_on("nonneg"),
        ts.g1.min_slope_on("nonneg"),
        ts.g2.min_slope_on("nonneg"),
    )
    eps2 = -max(ts.p1.max_slope_on("nonpos"), ts.p2.max_slope_on("nonpos"))
    q_margin = -1.0 - max(ts.q1.max_slope_on("nonpos"), ts.q2.max_slope_on("nonpos"))
    ok = (
        sign_ok
        and min(c1) > 0.0
        and min(c2) > 0.0
        and eps1 > 0.0
        and eps2 > 0.0
        and q_margin >= -1e-12
    )
    return FrameReport(
        sign_ok=sign_ok, cond_v1=c1, cond_v2=c2, eps1=eps1, eps2=eps2,
        q_margin=q_margin, ok=ok,
    )


@dataclass(frozen=True)
class LevelQuadruple:
    """The four marked points of one level curve and its chord values."""

    lam: float
    x_pq: Vec2
    x_pr: Vec2
    x_qs: Vec2
    x_rs: Vec2
    mu: float
    nu: float
    lam1: float
    lam2: float


def _graph1(nspec: NormalizedSpec, t: float) -> Vec2:
    return Vec2(nspec.h1.eval(t), t)


def _graph2(nspec: NormalizedSpec, t: float) -> Vec2:
    return Vec2(t, nspec.h2.eval(t))


def level_quadruple(ts: TransferSet, nspec: NormalizedSpec, lam: float) -> LevelQuadruple:
    """Marked points where the level-``lam`` curve crosses the two
    boundary curves, on the positive and the negative side.

    Requires ``lam > 0``; inversion failures propagate with the level
    attached.
    """
    if lam <= 0.0:
        raise ValueError(f"level must be positive, got {lam}")
    try:
        t_pq = invert_monotone(ts.f1, lam, "nonneg")
        t_pr = invert_monotone(ts.f2, lam, "nonneg")
        lam1 = ts.g1.eval(t_pq)
        lam2 = ts.g2.eval(t_pr)
        s_qs = invert_monotone(ts.p1, lam1, "nonpos")
        s_rs = invert_monotone(ts.p2, lam2, "nonpos")
    except InversionError as e:
        raise InversionError(f"level {lam}: {e}") from e
    x_qs = _graph2(nspec, s_qs)
    x_rs = _graph1(nspec, s_rs)
    return LevelQuadruple(
        lam=lam,
        x_pq=_graph1(nspec, t_pq),
        x_pr=_graph2(nspec, t_pr),
        x_qs=x_qs,
        x_rs=x_rs,
        mu=ts.q1.eval(s_qs),
        nu=ts.q2.eval(s_rs),
        lam1=lam1,
        lam2=lam2,
    )


def default_lambda_samples(count: int = 64, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    """Log-spaced certification levels."""
    return np.geomspace(lo, hi, count)


@dataclass(frozen=True)
class SlopeRow:
    """Chord certificate data at one level."""

    lam: float
    slope: float
    in_band: bool
    mu: float
    nu: float
    r1: float
    t_qs: float
    r2: float
    s_rs: float
    wrap_ok: bool

    @property
    def ok(self) -> bool:
        return self.in_band and self.wrap_ok


def slope_condition(
    ts: TransferSet,
    nspec: NormalizedSpec,
    gamma: float,
    lams: Sequence[float],
    tol: float = 1e-9,
) -> list[SlopeRow]:
    """Certify the third-quadrant chord slope at each sampled level.

    The chord joining the two negative-side marked points must have slope
    in ``[-1/gamma, -gamma]``.  Each row also records the wrap points
    ``r1 <= t`` and ``r2 <= s``: where the probe lines through the chord
    endpoints re-cross the opposite boundary curves.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    m_g = Vec2(-1.0, -gamma)
    n_g = Vec2(-gamma, -1.0)
    w_m = graph_transfer(m_g, 1, nspec.h1)
    w_n = graph_transfer(n_g, 2, nspec.h2)
    rows = []
    for lam in lams:
        quad = level_quadruple(ts, nspec, float(lam))
        dx = quad.x_rs.x1 - quad.x_qs.x1
        dy = quad.x_rs.x2 - quad.x_qs.x2
        mu = m_g.dot(quad.x_qs)
        nu = n_g.dot(quad.x_rs)
        if dx <= 0.0:
            rows.append(SlopeRow(float(lam), math.inf, False, mu, nu,
                                 math.nan, quad.x_qs.x1, math.nan, quad.x_rs.x2, False))
            continue
        slope = dy / dx
        in_band = (-1.0 / gamma - tol) <= slope <= (-gamma + tol)
        r2 = invert_monotone(w_m, mu, "nonpos")
        r1 = invert_monotone(w_n, nu, "nonpos")
        t_qs = quad.x_qs.x1
        s_rs = quad.x_rs.x2
        wrap_ok = (r1 <= t_qs + tol) and (r2 <= s_rs + tol)
        rows.append(SlopeRow(float(lam), slope, in_band, mu, nu, r1, t_qs, r2, s_rs, wrap_ok))
    return rows


def find_gamma(
    ts: TransferSet, nspec: NormalizedSpec, lams: Sequence[float]
) -> float | None:
    """Most permissive certificate parameter on a 1e-4 grid, if any.

    Bisects on the monotone pass predicate over ``(0, 1)`` and snaps the
    result to the grid; ``None`` when no grid value in the open interval
    certifies every sampled level.
    """

    def passes(g: float) -> bool:
        return all(r.in_band for r in slope_condition(ts, nspec, g, lams))

    lo, hi = 0.0, 1.0
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        return None
    snapped = min(round(lo / GAMMA_GRID) * GAMMA_GRID, 1.0 - GAMMA_GRID)
    if snapped > 0.0 and passes(snapped):
        return snapped
    snapped = math.floor(lo / GAMMA_GRID) * GAMMA_GRID
    if snapped > 0.0 and passes(snapped):
        return snapped
    return None


def search_frame(
    nspec: NormalizedSpec,
    lams: Sequence[float],
    step_deg: float = 1.0,
    coarse_levels: int = 9,
) -> DirectionFrame | None:
    """Heuristic grid search for an admissible frame (``v0 = (1, 1)``).

    Scans unit directions for ``v1`` (second quadrant) and ``v2`` (fourth
    quadrant) at the given angular resolution, keeps candidates passing
    the reduced inequalities, and picks the pair maximizing the certified
    chord parameter on a coarse level set.  Heuristic only: failure to
    find a frame does not prove none exists.
    """
    v0 = Vec2(1.0, 1.0)
    coarse = default_lambda_samples(coarse_levels)
    a1, a2 = nspec.alpha1, nspec.alpha2
    a10, a20 = nspec.alpha10, nspec.alpha20
    best: tuple[float, Vec2, Vec2] | None = None
    angles1 = np.arange(90.0 + step_deg, 180.0, step_deg)
    angles2 = np.arange(-90.0 + step_deg, 0.0, step_deg)
    cands1 = []
    for th in angles1:
        v1 = Vec2(math.cos(math.radians(th)), math.sin(math.radians(th)))
        if v1.dot(Vec2(a1, 1.0)) > 0 and v1.dot(Vec2(-1.0, -a20)) > 0:
            cands1.append(v1)
    cands2 = []
    for th in angles2:
        v2 = Vec2(math.cos(math.radians(th)), math.sin(math.radians(th)))
        if v2.dot(Vec2(1.0, a2)) > 0 and v2.dot(Vec2(-a10, -1.0)) > 0:
            cands2.append(v2)
    for v1 in cands1:
        for v2 in cands2:
            probe = DirectionFrame(v0=v0, v1=v1, v2=v2, gamma=0.5)
            tset = transfer_set(probe, nspec)
            try:
                cap = min(
                    min(-r.slope, -1.0 / r.slope)
                    for r in slope_condition(tset, nspec, 0.5, coarse)
                    if math.isfinite(r.slope) and r.slope < 0.0
                )
            except (ValueError, InversionError):
                continue
            if best is None or cap > best[0]:
                best = (cap, v1, v2)
    if best is None:
        return None
    _, v1, v2 = best
    probe = DirectionFrame(v0=v0, v1=v1, v2=v2, gamma=0.5)
    tset = transfer_set(probe, nspec)
    gamma = find_gamma(tset, nspec, lams)
    if gamma is None:
        return None
    frame = DirectionFrame(v0=v0, v1=v1, v2=v2, gamma=gamma)
    return frame if verify_frame(frame, nspec).ok else None
