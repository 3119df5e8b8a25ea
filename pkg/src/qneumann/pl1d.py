"""Exact arithmetic on one-dimensional piecewise-linear functions.

The boundary data of the quadrant Neumann problem consists of convex,
nondecreasing piecewise-linear (PL) scalar functions with finitely many
kinks and explicitly stored tail slopes.  Working with PL data keeps
every derived quantity downstream exactly computable: composing with a
linear map is slope arithmetic, inverting a monotone PL function is a
breakpoint search plus one linear solve, and composing a PL function
with the inverse of another PL function on a shared breakpoint set is
again PL.  No iterative root finding enters the geometric layer.

Representation: strictly increasing breakpoints ``b_0 < ... < b_{k-1}``,
``k+1`` interval slopes (slope ``s_0`` to the left of ``b_0``, ``s_k``
to the right of ``b_{k-1}``), and the function value at ``t = 0``.
Anchoring at the origin makes "vanishes at 0" an exact stored property,
which every derived transfer map relies on; the JSON encoding instead
records the value at the first breakpoint and is converted on the way
in and out.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Vec2",
    "PL1D",
    "HAdmissibility",
    "InversionError",
    "check_h_admissible",
    "invert_monotone",
    "graph_transfer",
    "compose_through_inverse",
    "pl_inverse",
    "pl_compose",
]

HalfLine = Literal["full", "nonneg", "nonpos"]


class InversionError(ValueError):
    """PL inversion is ill posed: the function is not uniformly monotone
    on the requested half-line, or the target lies outside its range."""


class Vec2(NamedTuple):
    """Point or direction in the plane."""

    x1: float
    x2: float

    def dot(self, other: "Vec2") -> float:
        return self.x1 * other.x1 + self.x2 * other.x2

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x1, -self.x2)

    def scaled(self, c: float) -> "Vec2":
        return Vec2(c * self.x1, c * self.x2)

    def plus(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x1 + other.x1, self.x2 + other.x2)

    def minus(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x1 - other.x1, self.x2 - other.x2)

    def norm(self) -> float:
        return float(np.hypot(self.x1, self.x2))

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x1, self.x2], dtype=float)


@dataclass(frozen=True)
class PL1D:
    """Piecewise-linear function on the whole line.

    Args:
        breakpoints: strictly increasing kink locations (may be empty).
        slopes: interval slopes, ``len(breakpoints) + 1`` of them.
        anchor_value: function value at ``t = 0``.
    """

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    anchor_value: float

    def __post_init__(self) -> None:
        bps = tuple(float(b) for b in self.breakpoints)
        slopes = tuple(float(s) for s in self.slopes)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "anchor_value", float(self.anchor_value))
        if len(slopes) != len(bps) + 1:
            raise ValueError(
                f"need {len(bps) + 1} slopes for {len(bps)} breakpoints, got {len(slopes)}"
            )
        arr = np.asarray(bps)
        if arr.size and not np.all(np.diff(arr) > 0):
            raise ValueError(f"breakpoints must be strictly increasing, got {bps}")
        if not np.all(np.isfinite(arr)) or not np.all(np.isfinite(slopes)):
            raise ValueError("breakpoints and slopes must be finite")
        if not np.isfinite(self.anchor_value):
            raise ValueError("anchor value must be finite")

    # -- constructors ---------------------------------------------------

    @staticmethod
    def constant(c: float) -> "PL1D":
        return PL1D((), (0.0,), c)

    @staticmethod
    def affine(slope: float, value_at_0: float = 0.0) -> "PL1D":
        return PL1D((), (slope,), value_at_0)

    @staticmethod
    def from_json(obj: dict) -> "PL1D":
        if "constant" in obj:
            return PL1D.constant(float(obj["constant"]))
        bps = tuple(obj["breakpoints"])
        slopes = tuple(obj["slopes"])
        r = float(obj["value_at_first_breakpoint"])
        if not bps:
            return PL1D((), slopes, r)
        probe = PL1D(bps, slopes, 0.0)
        return PL1D(bps, slopes, r - probe.eval(bps[0]))

    def to_json(self) -> dict:
        first = self.eval(self.breakpoints[0]) if self.breakpoints else self.anchor_value
        return {
            "breakpoints": list(self.breakpoints),
            "slopes": list(self.slopes),
            "value_at_first_breakpoint": first,
        }

    # -- cached arrays --------------------------------------------------

    @cached_property
    def _bps(self) -> NDArray[np.float64]:
        return np.asarray(self.breakpoints, dtype=float)

    @cached_property
    def _slopes(self) -> NDArray[np.float64]:
        return np.asarray(self.slopes, dtype=float)

    @cached_property
    def _values(self) -> NDArray[np.float64]:
        # values at the breakpoints, accumulated outward from t = 0
        k = len(self.breakpoints)
        vals = np.empty(k)
        if not k:
            return vals
        j0 = int(np.searchsorted(self._bps, 0.0, side="right"))
        if j0 < k:
            vals[j0] = self.anchor_value + self.slopes[j0] * self.breakpoints[j0]
            for j in range(j0 + 1, k):
                vals[j] = vals[j - 1] + self.slopes[j] * (
                    self.breakpoints[j] - self.breakpoints[j - 1]
                )
        if j0 > 0:
            vals[j0 - 1] = self.anchor_value + self.slopes[j0] * self.breakpoints[j0 - 1]
            for j in range(j0 - 2, -1, -1):
                vals[j] = vals[j + 1] + self.slopes[j + 1] * (
                    self.breakpoints[j] - self.breakpoints[j + 1]
                )
        return vals

    # -- evaluation -----------------------------------------------------

    def eval(self, t: float) -> float:
        if t == 0.0:
            return self.anchor_value
        if not self.breakpoints:
            return self.anchor_value + self.slopes[0] * t
        i = int(np.searchsorted(self._bps, t, side="right"))
        if i == 0:
            return float(self._values[0]) + self.slopes[0] * (t - self.breakpoints[0])
        return float(self._values[i - 1]) + self.slopes[i] * (t - self.breakpoints[i - 1])

    __call__ = eval

    def eval_many(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float)
        if not self.breakpoints:
            out = self.anchor_value + self.slopes[0] * t
        else:
            idx = np.searchsorted(self._bps, t, side="right")
            base = self._values[np.maximum(idx - 1, 0)]
            ref = self._bps[np.maximum(idx - 1, 0)]
            out = base + self._slopes[idx] * (t - ref)
        return np.where(t == 0.0, self.anchor_value, out)

    def one_sided_slopes(self, t: float) -> tuple[float, float]:
        """Left and right derivative at ``t``."""
        i = int(np.searchsorted(self._bps, t, side="left"))
        if i < len(self.breakpoints) and self.breakpoints[i] == t:
            return self.slopes[i], self.slopes[i + 1]
        j = int(np.searchsorted(self._bps, t, side="right"))
        return self.slopes[j], self.slopes[j]

    def tail_slope(self, direction: int) -> float:
        """Slope at ``+inf`` for ``direction > 0`` and at ``-inf`` otherwise."""
        return self.slopes[-1] if direction > 0 else self.slopes[0]

    def shifted(self, dt: float, dv: float = 0.0) -> "PL1D":
        """The function ``t -> f(t + dt) + dv``."""
        bps = tuple(b - dt for b in self.breakpoints)
        return PL1D(bps, self.slopes, self.eval(dt) + dv)

    # -- slope queries --------------------------------------------------

    def _slope_slice(self, half: HalfLine) -> NDArray[np.float64]:
        if half == "nonneg":
            j = int(np.searchsorted(self._bps, 0.0, side="right"))
            return self._slopes[j:]
        if half == "nonpos":
            j = int(np.searchsorted(self._bps, 0.0, side="left"))
            return self._slopes[: j + 1]
        return self._slopes

    def min_slope_on(self, half: HalfLine) -> float:
        return float(np.min(self._slope_slice(half)))

    def max_slope_on(self, half: HalfLine) -> float:
        return float(np.max(self._slope_slice(half)))

    @property
    def is_convex(self) -> bool:
        return bool(np.all(np.diff(self._slopes) >= 0.0))

    @property
    def is_concave(self) -> bool:
        return bool(np.all(np.diff(self._slopes) <= 0.0))


@dataclass(frozen=True)
class HAdmissibility:
    """Diagnostics for a boundary-data candidate."""

    convex: bool
    nondecreasing: bool
    tail_slope: float
    tail_ok: bool
    ok: bool
    message: str


def check_h_admissible(f: PL1D) -> HAdmissibility:
    """Check convexity, monotonicity and the strict tail-slope cap.

    Admissible boundary data is convex, nondecreasing, and has slope at
    ``+inf`` strictly below one.
    """
    convex = f.is_convex
    nondecreasing = bool(np.all(f._slopes >= 0.0))
    gamma = f.tail_slope(+1)
    tail_ok = gamma < 1.0
    msgs = []
    if not convex:
        msgs.append(f"slopes {f.slopes} are not nondecreasing (not convex)")
    if not nondecreasing:
        bad = min(f.slopes)
        msgs.append(f"negative slope {bad} (not nondecreasing)")
    if not tail_ok:
        msgs.append(f"tail slope {gamma} is not < 1")
    return HAdmissibility(
        convex=convex,
        nondecreasing=nondecreasing,
        tail_slope=gamma,
        tail_ok=tail_ok,
        ok=convex and nondecreasing and tail_ok,
        message="; ".join(msgs) if msgs else "ok",
    )


def invert_monotone(f: PL1D, y: float, domain: HalfLine = "full") -> float:
    """Solve ``f(t) = y`` on a half-line where ``f`` is uniformly monotone.

    The solve is a breakpoint search plus one linear solve, so the result
    is exact up to rounding.  If ``y`` lands on a flat segment the
    endpoint nearest ``0`` is returned and a warning is emitted.

    Raises:
        InversionError: mixed slope signs on the domain (not monotone),
            or ``y`` outside the attained range.
    """
    sl = f._slope_slice(domain)
    has_pos = bool(np.any(sl > 0.0))
    has_neg = bool(np.any(sl < 0.0))
    if has_pos and has_neg:
        raise InversionError(
            f"not uniformly monotone on {domain!r}: slopes range "
            f"[{sl.min()}, {sl.max()}] mix signs"
        )
    if not (has_pos or has_neg):
        # flat on the whole domain
        v = f.eval(0.0)
        if v == y:
            warnings.warn("inversion target on a flat segment; returning endpoint nearest 0")
            return 0.0
        raise InversionError(f"target {y} outside range of a flat function (= {v})")

    # Node list in ascending t, with open ends described by (slope, anchor).
    if domain == "nonneg":
        ts = [0.0] + [b for b in f.breakpoints if b > 0.0]
        open_lo = None
        open_hi = f.tail_slope(+1)
    elif domain == "nonpos":
        ts = [b for b in f.breakpoints if b < 0.0] + [0.0]
        open_lo = f.tail_slope(-1)
        open_hi = None
    else:
        ts = list(f.breakpoints) if f.breakpoints else [0.0]
        open_lo = f.tail_slope(-1)
        open_hi = f.tail_slope(+1)
    vs = [f.eval(t) for t in ts]

    # exact node hits (plateau tie-break: endpoint nearest 0)
    hits = [t for t, v in zip(ts, vs) if v == y]
    if hits:
        flat_tail = (open_hi == 0.0 and vs[-1] == y) or (open_lo == 0.0 and vs[0] == y)
        if len(hits) > 1 or flat_tail:
            warnings.warn("inversion target on a flat segment; returning endpoint nearest 0")
        return min(hits, key=abs)

    # strict bracket inside a segment
    for i in range(len(ts) - 1):
        lo, hi = vs[i], vs[i + 1]
        if (y - lo) * (y - hi) < 0.0:
            s = f.one_sided_slopes(ts[i + 1])[0]
            return ts[i] + (y - lo) / s

    # open ends
    if open_hi is not None:
        gap = y - vs[-1]
        if gap != 0.0 and open_hi != 0.0 and gap / open_hi > 0.0:
            return ts[-1] + gap / open_hi
    if open_lo is not None:
        gap = y - vs[0]
        if gap != 0.0 and open_lo != 0.0 and gap / open_lo < 0.0:
            return ts[0] + gap / open_lo

    # targets a few ulps past an endpoint are rounding noise, not range errors
    tol = 4.0 * np.finfo(float).eps * max(1.0, abs(y), max(abs(v) for v in vs))
    near = [t for t, v in zip(ts, vs) if abs(v - y) <= tol]
    if near:
        return min(near, key=abs)
    raise InversionError(
        f"target {y} outside the range attained on {domain!r} "
        f"(node values span [{min(vs)}, {max(vs)}])"
    )


def graph_transfer(v: Vec2, axis: int, h: PL1D) -> PL1D:
    """Project the graph of ``h`` onto a direction.

    For ``axis == 1`` the graph map is ``t -> (h(t), t)`` and the result
    is ``t -> v1*h(t) + v2*t``; for ``axis == 2`` it is ``t -> (t, h(t))``
    giving ``v1*t + v2*h(t)``.  Breakpoints are inherited from ``h``.
    """
    if axis == 1:
        slopes = tuple(v.x1 * s + v.x2 for s in h.slopes)
        cv = v.x1
    elif axis == 2:
        slopes = tuple(v.x2 * s + v.x1 for s in h.slopes)
        cv = v.x2
    else:
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    return PL1D(h.breakpoints, slopes, cv * h.anchor_value)


def compose_through_inverse(outer: PL1D, inner: PL1D, half: HalfLine) -> PL1D:
    """Exact PL representation of ``outer o inner^{-1}`` on ``inner(half)``.

    ``outer`` and ``inner`` must share their breakpoint set and satisfy
    ``inner(0) = 0``; ``inner`` must be strictly monotone on the requested
    half-line.  The result is defined (and used) on ``[0, inf)``; its
    extension past the represented range reuses the adjacent slope.
    """
    if outer.breakpoints != inner.breakpoints:
        raise ValueError("composition requires a shared breakpoint set")
    if abs(inner.eval(0.0)) > 1e-12:
        raise ValueError(f"inner map must vanish at 0, got {inner.eval(0.0)}")
    bps = inner._bps
    slopes_o, slopes_i = outer._slopes, inner._slopes
    if half == "nonneg":
        ts = [b for b in inner.breakpoints if b > 0.0]
        j0 = int(np.searchsorted(bps, 0.0, side="right"))
        idxs = [j0] + [j0 + 1 + k for k in range(len(ts))]
    elif half == "nonpos":
        below = [b for b in inner.breakpoints if b < 0.0]
        ts = list(reversed(below))  # walk order: towards -inf
        j0 = int(np.searchsorted(bps, 0.0, side="left"))
        idxs = [j0] + [j0 - 1 - k for k in range(len(ts))]
    else:
        raise ValueError("half must be 'nonneg' or 'nonpos'")
    for j in idxs:
        if slopes_i[j] == 0.0:
            raise InversionError(f"inner map has a flat interval (index {j}) on {half!r}")
    ratios = [slopes_o[j] / slopes_i[j] for j in idxs]
    if not ts:
        return PL1D((), (ratios[0],), outer.eval(0.0))
    us = [inner.eval(t) for t in ts]  # ascending in walk order, all > 0
    return PL1D(tuple(us), tuple(ratios), outer.eval(0.0))


def pl_inverse(f: PL1D, domain: HalfLine) -> PL1D:
    """Exact PL representation of ``f^{-1}`` restricted to a half-line.

    ``f`` must vanish at 0 and be strictly monotone on the half-line.
    The result ``g`` satisfies ``g(f(t)) = t`` there (up to rounding in
    the reciprocal slopes); past the represented range it extends with
    the adjacent slope.
    """
    if domain not in ("nonneg", "nonpos"):
        raise ValueError("domain must be 'nonneg' or 'nonpos'")
    if abs(f.eval(0.0)) > 1e-12:
        raise InversionError(f"pl_inverse requires f(0) = 0, got {f.eval(0.0)}")
    if domain == "nonneg":
        nodes = [0.0] + [b for b in f.breakpoints if b > 0.0]
        piece = [f.one_sided_slopes(t)[1] for t in nodes]  # slope past each node
    else:
        nodes = [0.0] + [b for b in reversed(f.breakpoints) if b < 0.0]
        piece = [f.one_sided_slopes(t)[0] for t in nodes]
    for s in piece:
        if s == 0.0:
            raise InversionError(f"flat interval on {domain!r}; not invertible")
    signs = {s > 0.0 for s in piece}
    if len(signs) > 1:
        raise InversionError(f"mixed slope signs on {domain!r}; not monotone")
    us = [f.eval(t) for t in nodes]  # walk order away from 0, us[0] = 0
    recip = [1.0 / s for s in piece]
    if len(nodes) == 1:
        return PL1D((), (recip[0],), 0.0)
    if us[1] > us[0]:  # image grows along the walk
        return PL1D(tuple(us[1:]), tuple(recip), 0.0)
    return PL1D(tuple(reversed(us[1:])), tuple(reversed(recip)), 0.0)


def pl_compose(outer: PL1D, inner: PL1D, domain: HalfLine = "nonneg") -> PL1D:
    """Exact PL representation of ``t -> outer(inner(t))`` on ``[0, inf)``.

    ``inner`` must be uniformly monotone there.  Breakpoints are the
    inner breakpoints plus the preimages of outer breakpoints that the
    inner image crosses; slopes are exact products of one-sided slopes
    sampled inside each piece.
    """
    if domain != "nonneg":
        raise ValueError("pl_compose currently supports the 'nonneg' domain only")
    sl = inner._slope_slice("nonneg")
    if np.any(sl > 0.0) and np.any(sl < 0.0):
        raise InversionError("inner map is not monotone on [0, inf)")
    cand = {b for b in inner.breakpoints if b > 0.0}
    for c in outer.breakpoints:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                t = invert_monotone(inner, c, "nonneg")
        except InversionError:
            continue
        if t > 0.0:
            cand.add(t)
    bps = sorted(cand)
    anchor = outer.eval(inner.eval(0.0))

    def product_slope(t: float) -> float:
        si = inner.one_sided_slopes(t)[1]
        if si == 0.0:
            return 0.0
        u = inner.eval(t)
        so = outer.one_sided_slopes(u)[1] if si > 0.0 else outer.one_sided_slopes(u)[0]
        return so * si

    if not bps:
        return PL1D((), (product_slope(1.0),), anchor)
    mids = [bps[0] / 2.0]
    for a, b in zip(bps, bps[1:]):
        mids.append(a + (b - a) / 2.0)
    mids.append(bps[-1] + max(1.0, abs(bps[-1])))
    return PL1D(tuple(bps), tuple(product_slope(m) for m in mids), anchor)
