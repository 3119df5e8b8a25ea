"""Pipeline orchestration and report emission.

Five stages, each mapping to one layer of the package:

``check``
    boundary-map admissibility plus the chord-slope certificate.
``frame``
    direction-frame resolution (explicit, worked example, or search)
    and verification of the frame inequalities.
``psi``
    envelope field with growth constants, exported as CSV together
    with level-curve polylines for plotting.
``testfn``
    regularized test function with sign, Lipschitz, growth and
    cross-check audits.
``solve``
    finite-difference solve of a configured operator with comparison,
    monotonicity and strictness audits.

Each stage writes its artifacts next to a fingerprint keyed on the
slice of the config it depends on, chained through its upstream stage.
Rerunning with an unchanged config leaves fresh artifacts untouched;
running a later stage in isolation requires fresh upstream artifacts.

Exit codes: 0 when every certified audit passes, 1 when an audit fails,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .pl1d import Vec2, InversionError
from .gridfield import GridField2D
from .frame import (
    DirectionFrame,
    default_lambda_samples,
    example_frame,
    find_gamma,
    fixed_point,
    level_quadruple,
    normalize,
    search_frame,
    slope_condition,
    transfer_set,
    verify_frame,
)
from .envelope import build_psi
from .legendre import (
    boundary_sign_audit,
    build_phi_eps,
    build_test_function,
    c11_audit,
    epsilon_bound,
    epsilon_zero,
    growth_audit,
    moreau_cross_check,
)
from .solver import (
    SolverDivergence,
    check_operator,
    comparison_audit,
    discretize,
    linear_operator,
    monotonicity_probe,
    solve,
    strictness_probe,
    sub_supersolution,
)
from .config import ConfigError, PipelineConfig, dump_json, fingerprint, load_config

__all__ = ["main", "run_command", "export_artifacts"]

STAGE_ORDER = ("check", "frame", "psi", "testfn", "solve")

_UPSTREAM = {
    "check": None,
    "frame": "check",
    "psi": "frame",
    "testfn": "psi",
    "solve": "check",
}

_ARTIFACTS = {
    "check": ("check.json",),
    "frame": ("frame.json",),
    "psi": ("psi.json", "psi.csv", "psi_levels.json"),
    "testfn": ("testfn.json", "phi.csv"),
    "solve": ("solve.json", "solution.csv"),
}


def _vec(v: Vec2) -> list[float]:
    return [float(v.x1), float(v.x2)]


class _Pipeline:
    """Stage runner with in-memory object reuse and on-disk caching."""

    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.nspec = normalize(cfg.spec)
        self.lams = [float(l) for l in default_lambda_samples(
            int(cfg.grids["lambda_samples"]))]
        self._resolved = False
        self._frame: DirectionFrame | None = None
        self._gamma: float | None = None
        self._rows = None
        self._reason: str | None = None
        self._bundle = None
        self._fps = self._fingerprints()

    # -- fingerprints ----------------------------------------------------

    def _fingerprints(self) -> dict[str, str]:
        raw = self.cfg.raw
        subsets = {
            "check": {
                "spec": raw["spec"],
                "frame": raw["frame"],
                "gamma": raw["gamma"],
                "lambda_samples": raw["grids"]["lambda_samples"],
            },
            "frame": {},
            "psi": {"grids": raw["grids"]},
            "testfn": {"epsilon": raw["epsilon"]},
            "solve": {"spec": raw["spec"], "solver": raw["solver"]},
        }
        fps: dict[str, str] = {}
        for stage in STAGE_ORDER:
            up = _UPSTREAM[stage]
            fps[stage] = fingerprint({
                "stage": stage,
                "config": subsets[stage],
                "upstream": fps[up] if up else "",
            })
        return fps

    def is_fresh(self, stage: str) -> bool:
        fp_file = self.out / f"{stage}.fp"
        if not fp_file.exists():
            return False
        if fp_file.read_text().strip() != self._fps[stage]:
            return False
        return all((self.out / name).exists() for name in _ARTIFACTS[stage])

    def _mark(self, stage: str) -> None:
        (self.out / f"{stage}.fp").write_text(self._fps[stage] + "\n")

    def load_payload(self, stage: str) -> dict:
        with open(self.out / f"{stage}.json") as fh:
            return json.load(fh)

    # -- shared objects --------------------------------------------------

    def _resolve(self) -> None:
        """Resolve the frame and chord parameter once per process."""
        if self._resolved:
            return
        self._resolved = True
        fc = self.cfg.frame_cfg
        mode = fc["mode"]
        probe: DirectionFrame | None = None
        if mode == "explicit":
            probe = DirectionFrame(
                Vec2(*fc["v0"]), Vec2(*fc["v1"]), Vec2(*fc["v2"]), 0.5)
        elif mode == "example":
            try:
                probe = example_frame(fc["kind"], **fc.get("params", {}))
            except KeyError as exc:
                raise ConfigError(
                    f"/frame/params: missing parameter {exc.args[0]!r} for "
                    f"family {fc['kind']!r}") from exc
            except ValueError as exc:
                raise ConfigError(f"/frame: {exc}") from exc
        else:
            probe = search_frame(self.nspec, self.lams)
            if probe is None:
                self._reason = "frame search found no admissible frame"
                return
        ts = transfer_set(probe, self.nspec)
        if self.cfg.gamma == "auto":
            try:
                gamma = find_gamma(ts, self.nspec, self.lams)
            except (InversionError, ValueError) as exc:
                self._reason = f"chord certificate not evaluable: {exc}"
                return
            if gamma is None:
                self._reason = (
                    "no chord parameter in (0, 1) certifies every sampled "
                    "level")
                return
        else:
            gamma = float(self.cfg.gamma)
        self._gamma = gamma
        try:
            rows = slope_condition(ts, self.nspec, gamma, self.lams)
        except (InversionError, ValueError) as exc:
            self._reason = f"chord certificate not evaluable: {exc}"
            return
        self._rows = rows
        bad = sum(1 for r in rows if not r.ok)
        if bad:
            self._reason = (
                f"chord-slope certificate fails at {bad} of {len(rows)} "
                f"sampled levels for gamma={gamma}")
            return
        self._frame = DirectionFrame(probe.v0, probe.v1, probe.v2, gamma)

    def frame(self) -> DirectionFrame | None:
        self._resolve()
        return self._frame

    def bundle(self):
        if self._bundle is None:
            frame = self.frame()
            if frame is None:
                raise ConfigError(self._reason or "no certified frame")
            g = self.cfg.grids
            self._bundle = build_psi(
                frame,
                self.nspec,
                radius=float(g["psi_radius"]),
                n=int(g["psi_n"]),
                window_factor=float(g["window_factor"]),
                dual_n=int(g["dual_n"]) if "dual_n" in g else None,
            )
        return self._bundle

    # -- stages ----------------------------------------------------------

    def run(self, stage: str) -> tuple[bool, dict]:
        if self.is_fresh(stage):
            payload = self.load_payload(stage)
            return bool(payload.get("ok")), payload
        ok, payload = getattr(self, f"_run_{stage}")()
        payload["ok"] = ok
        (self.out / f"{stage}.json").write_text(dump_json(payload))
        self._mark(stage)
        return ok, payload

    def _run_check(self) -> tuple[bool, dict]:
        self._resolve()
        spec = self.cfg.spec
        payload: dict = {
            "boundary_maps": {
                "h1_tail_slope": spec.gamma1,
                "h2_tail_slope": spec.gamma2,
                "admissible": True,
            },
            "gamma_mode": "auto" if self.cfg.gamma == "auto" else "explicit",
            "gamma": self._gamma,
            "lambda_count": len(self.lams),
        }
        if self._rows is not None:
            finite = [r.slope for r in self._rows if np.isfinite(r.slope)]
            payload["chord"] = {
                "levels_checked": len(self._rows),
                "levels_failed": sum(1 for r in self._rows if not r.ok),
                "slope_min": min(finite) if finite else None,
                "slope_max": max(finite) if finite else None,
            }
        if self._reason is not None:
            payload["reason"] = self._reason
        return self._frame is not None, payload

    def _run_frame(self) -> tuple[bool, dict]:
        frame = self.frame()
        if frame is None:
            return False, {"reason": self._reason}
        rep = verify_frame(frame, self.nspec)
        a = fixed_point(self.cfg.spec)
        payload = {
            **frame.to_json(),
            "fixed_point": _vec(a),
            "verify": {
                "sign_ok": rep.sign_ok,
                "cond_v1": list(rep.cond_v1),
                "cond_v2": list(rep.cond_v2),
                "eps1": rep.eps1,
                "eps2": rep.eps2,
                "q_margin": rep.q_margin,
                "ok": rep.ok,
            },
        }
        return rep.ok, payload

    def _run_psi(self) -> tuple[bool, dict]:
        bundle = self.bundle()
        bundle.field.to_csv(self.out / "psi.csv")
        frame = bundle.frame
        ts = transfer_set(frame, self.nspec)
        levels = []
        for lam in self.cfg.grids["level_curves"]:
            try:
                quad = level_quadruple(ts, self.nspec, float(lam))
            except (InversionError, ValueError) as exc:
                levels.append({"lambda": float(lam), "error": str(exc)})
                continue
            pts = {
                "x_pq": _vec(quad.x_pq),
                "x_pr": _vec(quad.x_pr),
                "x_qs": _vec(quad.x_qs),
                "x_rs": _vec(quad.x_rs),
            }
            levels.append({
                "lambda": float(lam),
                "points": pts,
                "polyline": [pts["x_qs"], pts["x_pq"], pts["x_pr"],
                             pts["x_rs"]],
                "closed": True,
            })
        (self.out / "psi_levels.json").write_text(dump_json({"levels": levels}))
        payload = {
            "delta": bundle.delta,
            "C": bundle.C,
            "grad_lo": bundle.grad_lo,
            "grad_hi": bundle.grad_hi,
            "dual_radius": bundle.dual_radius,
            "dual_n": bundle.dual_n,
            "diagnostics": {
                k: v for k, v in bundle.diagnostics.items()
                if isinstance(v, (int, float, str, bool))
            },
            "warnings": list(bundle.warnings),
        }
        return True, payload

    def _run_testfn(self) -> tuple[bool, dict]:
        bundle = self.bundle()
        frame = bundle.frame
        delta_cert = min(bundle.delta, bundle.grad_lo)
        eps0 = epsilon_zero(frame)
        eps_max = epsilon_bound(frame, delta_cert)
        eps = 0.9 * eps_max if self.cfg.epsilon == "auto" \
            else float(self.cfg.epsilon)
        payload: dict = {
            "epsilon_0": eps0,
            "epsilon_max": eps_max,
            "epsilon": eps,
        }
        try:
            phi = build_phi_eps(bundle, eps)
        except ValueError as exc:
            payload["reason"] = str(exc)
            print(f"testfn: {exc}", file=sys.stderr)
            return False, payload
        tf = build_test_function(phi, self.nspec.a)
        sign = boundary_sign_audit(tf, self.cfg.spec)
        lip = c11_audit(tf)
        growth = growth_audit(tf)
        rng = np.random.default_rng(0)
        # sample grid nodes: value_at is exact there, so the check sees
        # only the dual-grid quantization covered by the gap allowance
        n_phi = tf.phi.values.shape[0]
        idx = rng.integers(0, n_phi, size=(20, 2))
        pts = [tf.phi.node(int(i), int(j)) for i, j in idx]
        moreau = moreau_cross_check(tf, bundle, pts)
        moreau_tol = max(1e-6, 4.0 * tf.gap)
        moreau_ok = moreau <= moreau_tol
        payload.update({
            "delta_certified": tf.delta_certified,
            "C_certified": tf.C_certified,
            "delta_prime": tf.lower_coeff,
            "C_prime": tf.upper_coeff,
            "gap": tf.gap,
            "shift": _vec(tf.shift),
            "audits": {
                "sign": {
                    "tol": sign.tol,
                    "violations": sign.violations,
                    "worst": sign.worst,
                    "ok": sign.ok,
                },
                "gradient_lipschitz": {
                    "estimate": lip.lip_estimate,
                    "bound": lip.lip_bound,
                    "sandwich_lower_margin": lip.sandwich_lower_margin,
                    "sandwich_upper_margin": lip.sandwich_upper_margin,
                    "allowance": lip.allowance,
                    "ok": lip.ok,
                },
                "growth": growth,
                "moreau_max_discrepancy": moreau,
                "moreau_tol": moreau_tol,
                "moreau_ok": moreau_ok,
            },
        })
        g1, g2 = tf.grad_values()
        f_field = GridField2D(tf.phi.origin, tf.phi.spacing, tf.f_values())
        f_field.to_csv(
            self.out / "phi.csv",
            columns=("x1", "x2", "phi", "g1", "g2"),
            extra=[g1, g2],
        )
        ok = sign.ok and lip.ok and growth["ok"] and moreau_ok
        return ok, payload

    def _run_solve(self) -> tuple[bool, dict]:
        sc = self.cfg.solver
        opc = sc["operator"]
        gcfg = opc["g"]
        if gcfg["kind"] == "constant":
            gval = float(gcfg["value"])
        else:
            amp = float(gcfg["amplitude"])
            gval = lambda x1, x2: amp * np.cos(x1) * np.cos(x2)
        try:
            op = linear_operator(
                A=tuple(tuple(row) for row in opc["A"]),
                b=tuple(opc["b"]),
                g=gval,
                mu=float(opc["mu"]),
            )
        except ValueError as exc:
            raise ConfigError(f"/solver/operator: {exc}") from exc
        opdiag = check_operator(op)
        R, n = float(sc["R"]), int(sc["n"])
        if sc["far_bc"] == "dirichlet_zero":
            dp = discretize(self.cfg.spec, op, R, n, far_bc="dirichlet",
                            far_values=lambda x1, x2: np.zeros_like(x1))
        else:
            dp = discretize(self.cfg.spec, op, R, n, far_bc="sandwich")
        v_band, w_band, c1, c2 = sub_supersolution(self.cfg.spec, op, R, n)
        payload: dict = {
            "operator_check": opdiag,
            "C1": c1,
            "C2": c2,
            "R": R,
            "n": n,
            "far_bc": sc["far_bc"],
        }
        try:
            rep = solve(dp, 0.0, tol=float(sc["tol"]),
                        max_iter=int(sc["max_iter"]))
        except SolverDivergence as exc:
            payload["reason"] = "iteration diverged"
            payload["residual_trace"] = list(exc.trace)
            return False, payload
        comp = comparison_audit(rep.u, v_band, w_band)
        mono = monotonicity_probe(dp, rep.u)
        strict = strictness_probe(dp, rep.u)
        rep.u.to_csv(self.out / "solution.csv")
        payload.update({
            "iterations": rep.iterations,
            "residual_inf": rep.residual_inf,
            "converged": rep.converged,
            "sandwich_ok": rep.sandwich_ok,
            "comparison": comp,
            "monotonicity": mono,
            "strictness": strict,
        })
        ok = (opdiag["ok"] and rep.converged and comp["ok"] and mono["ok"]
              and strict["ok"])
        return ok, payload


def export_artifacts(out: Path, stages: dict[str, dict]) -> list[Path]:
    """Write the merged report for the completed stages.

    No completed stages means nothing to report: no files are written.
    """
    if not stages:
        return []
    constants: dict = {}
    if "frame" in stages and "v0" in stages["frame"]:
        fr = stages["frame"]
        constants.update({
            "a": fr["fixed_point"],
            "v0": fr["v0"],
            "v1": fr["v1"],
            "v2": fr["v2"],
            "gamma": fr["gamma"],
        })
    elif "check" in stages and stages["check"].get("gamma") is not None:
        constants["gamma"] = stages["check"]["gamma"]
    if "psi" in stages and "delta" in stages["psi"]:
        ps = stages["psi"]
        constants.update({
            "delta": ps["delta"],
            "C": ps["C"],
            "grad_lo": ps["grad_lo"],
            "grad_hi": ps["grad_hi"],
        })
    if "testfn" in stages:
        tf = stages["testfn"]
        for src, dst in (
            ("epsilon_0", "epsilon_0"),
            ("epsilon_max", "epsilon_max"),
            ("epsilon", "epsilon"),
            ("delta_prime", "delta_prime"),
            ("C_prime", "C_prime"),
        ):
            if src in tf:
                constants[dst] = tf[src]
        if "audits" in tf:
            constants["lip_grad"] = tf["audits"]["gradient_lipschitz"][
                "estimate"]
    if "solve" in stages:
        sv = stages["solve"]
        if "C1" in sv:
            constants["C1"] = sv["C1"]
            constants["C2"] = sv["C2"]
    report = {
        "ok": all(bool(p.get("ok")) for p in stages.values()),
        "constants": constants,
        "stages": stages,
    }
    path = out / "report.json"
    path.write_text(dump_json(report))
    return [path]


def run_command(cfg: PipelineConfig, cmd: str, out: Path | None = None) -> int:
    """Run one stage (or ``all``) and refresh the merged report."""
    if cmd not in STAGE_ORDER and cmd != "all":
        raise ConfigError(f"unknown command {cmd!r}")
    out = Path(out) if out is not None else Path(cfg.output_dir or "qneumann-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc

    pipe = _Pipeline(cfg, out)
    todo = STAGE_ORDER if cmd == "all" else (cmd,)
    if cmd != "all":
        missing = []
        up = _UPSTREAM[cmd]
        while up is not None:
            if not pipe.is_fresh(up):
                missing.append(up)
            up = _UPSTREAM[up]
        if missing:
            raise ConfigError(
                f"missing upstream artifact for '{cmd}': run "
                f"{', '.join(repr(s) for s in reversed(missing))} first")

    status = 0
    ran: dict[str, dict] = {}
    for stage in todo:
        ok, payload = pipe.run(stage)
        ran[stage] = payload
        if not ok:
            status = 1
            if stage in ("check", "frame"):
                break

    merged: dict[str, dict] = {}
    for stage in STAGE_ORDER:
        if stage in ran:
            merged[stage] = ran[stage]
        elif pipe.is_fresh(stage):
            merged[stage] = pipe.load_payload(stage)
    export_artifacts(out, merged)
    return status


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qneumann",
        description="Certified construction pipeline for the quadrant "
                    "Neumann problem.")
    parser.add_argument("command", choices=list(STAGE_ORDER) + ["all"])
    parser.add_argument("--config", required=True, help="path to JSON config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--grid", type=int, default=None,
                        help="override envelope grid resolution (2^k + 1)")
    parser.add_argument("--lambda-samples", type=int, default=None,
                        dest="lambda_samples",
                        help="override the number of certificate levels")
    args = parser.parse_args(argv)

    threads = os.environ.get("QNEUMANN_THREADS")
    if threads:
        import numba

        try:
            want = max(1, int(threads))
        except ValueError:
            print(f"config error: QNEUMANN_THREADS={threads!r} is not an "
                  "integer", file=sys.stderr)
            return 2
        numba.set_num_threads(min(want, numba.config.NUMBA_NUM_THREADS))

    try:
        cfg = load_config(args.config)
        if args.grid is not None:
            if args.grid < 9 or ((args.grid - 1) & (args.grid - 2)):
                raise ConfigError(
                    f"--grid: resolution {args.grid} must be a power of two "
                    "plus one (>= 9)")
            cfg.raw["grids"]["psi_n"] = args.grid
        if args.lambda_samples is not None:
            if args.lambda_samples < 1:
                raise ConfigError("--lambda-samples must be positive")
            cfg.raw["grids"]["lambda_samples"] = args.lambda_samples
        return run_command(cfg, args.command, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
