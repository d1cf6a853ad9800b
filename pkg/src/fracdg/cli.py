"""Command-line driver: ``fracdg <subcommand> --config cfg.json --out run_dir``.

Exit codes: 0 success, 1 audit failure, 2 config error, 3 numerical divergence.
Every file in the run directory except MANIFEST.json is a deterministic
function of the config and seed; wall times live only in the manifest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, parse_dg_params
from .dg_verify import (
    LEMMA_IDS,
    DGParams,
    audit_dg_membership,
    check_iteration_lemma,
    estimate_embedding_constants,
    growth_lemma_audit,
    isoperimetric_audit_frac,
    isoperimetric_audit_w1p,
    run_lemma_oracle,
)
from .errors import ConfigError, DegenerateRegionError, DivergenceError, HypothesisError
from .lattice import Grid, GridFunction
from .nonlocal_calculus import tail
from .parallel import set_threads
from .regularity import harnack_quotient, hoelder_fit, sup_bound_report, weak_harnack_report
from .reports import AuditReport
from .solve import solve, verify_minimality

log = logging.getLogger("fracdg")

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3

SUBCOMMAND_AUDITS = {
    "minimize": None,
    "solve": None,
    "verify-dg": ("dg", "sup_bound", "growth", "weak_harnack"),
    "verify-iso": ("iso_frac", "iso_w1p"),
    "hoelder": ("hoelder",),
    "harnack": ("harnack", "weak_harnack"),
    "tail": ("tail",),
}


# ---------------------------------------------------------------------------
# deterministic serialisation


def _clean(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _cell(v: Any) -> str:
    v = _clean(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(_cell(x) for x in v)
    return str(v)


def samples_csv(rep: AuditReport, title: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {title}\n")
    cols = rep.sample_columns()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rep.samples:
        w.writerow([_cell(row.get(c, "")) for c in cols])
    return buf.getvalue()


class RunDir:
    """Serialised writer for one run directory; tracks files for the manifest."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        (self.path / "audits").mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def write(self, rel: str, text: str) -> None:
        target = self.path / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", newline="") as fh:
            fh.write(text)
        if rel not in self.files:
            self.files.append(rel)

    def write_report(self, name: str, rep: AuditReport, title: str) -> None:
        self.write(f"audits/{name}.json", dumps(rep.to_dict()))
        self.write(f"audits/{name}.csv", samples_csv(rep, title))

    def manifest(self, extra: dict) -> None:
        hashes = {}
        for rel in sorted(self.files):
            hashes[rel] = hashlib.sha256((self.path / rel).read_bytes()).hexdigest()
        body = {"files": hashes, **extra}
        with open(self.path / "MANIFEST.json", "w") as fh:
            fh.write(dumps(body))


# ---------------------------------------------------------------------------
# audits


TITLES = {
    "dg": "De Giorgi class membership: implied Caccioppoli constant",
    "sup_bound": "local sup bound: implied constant",
    "hoelder": "Hoelder decay: (r, osc) pairs",
    "harnack": "Harnack quotient",
    "weak_harnack": "weak Harnack: implied constant",
    "growth": "growth lemma: delta sweep",
    "tail": "nonlocal tail",
    "iso_frac": "fractional isoperimetric estimate: implied constant",
    "iso_w1p": "W^{1,p} isoperimetric estimate: implied constant",
    "minimality": "local minimality probes",
}


def _params(cfg: ExperimentConfig, audit: dict) -> DGParams:
    return parse_dg_params(audit.get("params", {}), cfg.kernel.s, cfg.kernel.p, cfg.grid.dim)


def _subject(cfg: ExperimentConfig, audit: dict, u: GridFunction | None) -> GridFunction:
    if audit.get("of", "solution") == "u0" or u is None:
        return cfg.u0
    return u


def run_audit(cfg: ExperimentConfig, audit: dict, u: GridFunction | None) -> AuditReport:
    """Evaluate one configured audit on the solution ``u`` (or on u0 where requested)."""
    kind = audit["type"]
    s, p = cfg.kernel.s, cfg.kernel.p
    base = _subject(cfg, audit, u)
    w = base
    shift = audit.get("shift", 0.0)
    if shift:
        w = w.scaled(1.0, shift)
    try:
        if kind == "dg":
            return audit_dg_membership(w, cfg.omega, s, p, _params(cfg, audit), sign=audit.get("sign", "both"),
                                       H_budget=audit.get("H_budget"), quadrature=audit.get("quadrature", "lattice"))
        if kind == "sup_bound":
            return sup_bound_report(w, audit["x0"], audit["R"], s, p, _params(cfg, audit), audit["delta"], cfg.omega)
        if kind == "hoelder":
            fit = hoelder_fit(w, audit["x0"], audit["R_max"], audit.get("levels", 4), cfg.omega)
            rep = AuditReport("hoelder")
            rep.samples = [{"r": r, "osc": o} for r, o in zip(fit.radii, fit.oscillations)]
            rep.implied_constant = fit.C
            rep.worst_ratio = fit.residual
            rep.extra = fit.to_dict()
            ok = True
            if "alpha_min" in audit:
                ok &= not fit.undefined and fit.alpha >= audit["alpha_min"]
            if "residual_max" in audit:
                ok &= not fit.undefined and fit.residual <= audit["residual_max"]
            if fit.undefined:
                rep.notes.append("u is constant on the balls; the exponent is undefined")
            if fit.clipped:
                rep.notes.append(f"fitted slope {fit.raw_alpha:.4g} clipped to [0, 1]")
            rep.passed = bool(ok)
            return rep
        if kind == "harnack":
            if cfg.potential.variant == "zero":
                sup_value = 0.0
            elif cfg.mode == "equation":
                sup_value = cfg.potential.sup_abs_f(float(np.min(base.values)), float(np.max(base.values)))
            else:
                sup_value = cfg.potential.sup_abs_F(float(np.min(base.values)), float(np.max(base.values)))
            mode = "solution" if cfg.mode == "equation" else "minimizer"
            rep = harnack_quotient(w, audit["x0"], audit["R"], s, p, sup_value, mode, cfg.omega, cfg.kernel)
            if "Q_max" in audit:
                rep.passed = bool(rep.passed and rep.implied_constant <= audit["Q_max"])
            return rep
        if kind == "weak_harnack":
            return weak_harnack_report(w, audit["x0"], audit["R"], s, p, _params(cfg, audit), audit["q"], cfg.omega)
        if kind == "growth":
            return growth_lemma_audit(w, audit["x0"], audit["R"], s, p, _params(cfg, audit), audit["delta_grid"],
                                      audit.get("gamma", 0.5))
        if kind == "tail":
            val = tail(w, audit["x0"], audit["R"], s, p)
            rep = AuditReport("tail")
            rep.samples.append({"x0": audit["x0"], "R": audit["R"], "s": s, "p": p, "tail": val})
            rep.implied_constant = val
            rep.passed = bool(math.isfinite(val))
            return rep
        if kind == "iso_frac":
            return isoperimetric_audit_frac(w, audit["R"], audit["h_lev"], audit["k_lev"], s, p,
                                            audit.get("x0", [0.0] * cfg.grid.dim))
        if kind == "iso_w1p":
            return isoperimetric_audit_w1p(w, audit["ell"], audit["m"], audit.get("p", p), audit.get("R", 1.0),
                                           audit.get("x0", [0.0] * cfg.grid.dim))
        if kind == "minimality":
            if u is None:
                raise ConfigError("minimality audits need a solve")
            rep = verify_minimality(u, cfg.problem(), trials=audit.get("trials", 40), seed=cfg.seed)
            return rep
    except (HypothesisError, DegenerateRegionError) as exc:
        rep = AuditReport(kind)
        rep.applicable = False
        rep.passed = False
        rep.notes.append(f"{type(exc).__name__}: {exc}")
        return rep
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"audit {audit['name']}: {exc}") from exc
    raise ConfigError(f"unknown audit type {kind!r}")


def _audit_ok(rep: AuditReport) -> bool:
    return rep.passed or (not rep.applicable and rep.inequality in ("growth_lemma",))


# ---------------------------------------------------------------------------
# subcommands


def run_experiment(cfg: ExperimentConfig, command: str, out: Path) -> int:
    wanted = SUBCOMMAND_AUDITS[command]
    audits = [a for a in cfg.audits if wanted is None or a["type"] in wanted]
    if wanted is not None and not audits:
        raise ConfigError(f"config has no audits of type {wanted} for '{command}'")
    needs_solve = wanted is None or any(a.get("of", "solution") != "u0" for a in audits)
    if command == "minimize":
        cfg.mode = "minimize"
        cfg.raw["problem"]["mode"] = "minimize"
    run = RunDir(out)
    run.write("config.echo.json", dumps(cfg.echo()))
    walls: dict[str, float] = {}
    code = EXIT_OK
    u = None
    if needs_solve:
        t0 = time.perf_counter()
        try:
            u, rep = solve(cfg.problem())
        except DivergenceError as exc:
            log.error("solver diverged: %s", exc)
            run.write("solve_report.json", dumps({"converged": False, "message": str(exc)}))
            run.manifest(_manifest_extra(cfg, command, walls, EXIT_DIVERGENCE))
            return EXIT_DIVERGENCE
        walls["solve"] = time.perf_counter() - t0
        body = rep.to_dict()
        body.pop("wall_time", None)
        body["mode"] = cfg.mode
        run.write("solve_report.json", dumps(body))
        u.to_csv(run.path / "solution.csv")
        run.files.append("solution.csv")
        traj = "# energy per sweep\nsweep,energy,max_update\n" + "".join(
            f"{i},{e!r},{(rep.updates[i - 1] if i > 0 else 0.0)!r}\n" for i, e in enumerate(rep.trajectory))
        run.write("trajectory.csv", traj)
        log.info("solve: %s after %d sweeps", rep.message, rep.iterations)
        if not rep.converged:
            log.error("solver did not converge: %s", rep.message)
            code = EXIT_DIVERGENCE
    for audit in audits:
        t0 = time.perf_counter()
        rep = run_audit(cfg, audit, u)
        rep.seed = cfg.seed
        walls[f"audit:{audit['name']}"] = time.perf_counter() - t0
        run.write_report(audit["name"], rep, TITLES[audit["type"]])
        ok = _audit_ok(rep)
        log.info("audit %s: %s (implied constant %s)", audit["name"], "pass" if ok else "FAIL", rep.implied_constant)
        if not ok and code == EXIT_OK:
            code = EXIT_AUDIT
    run.manifest(_manifest_extra(cfg, command, walls, code))
    return code


def _manifest_extra(cfg: ExperimentConfig | None, command: str, walls: dict, code: int) -> dict:
    return {
        "command": command,
        "exit_code": code,
        "seed": cfg.seed if cfg is not None else None,
        "versions": {"fracdg": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "wall_times": walls,
    }


def selftest(out: Path | None, seed: int, draws: int = 100_000, flip: str | None = None) -> int:
    """Numeric lemma oracles, iteration lemma samples and explicit embedding audits."""
    run = RunDir(out) if out is not None else None
    reports: list[tuple[str, AuditReport]] = []
    for lemma in LEMMA_IDS:
        reports.append((f"lemma_{lemma}", run_lemma_oracle(lemma, draws, seed, flip=(flip == lemma))))
    reports.extend(_iteration_samples())
    reports.extend(_embedding_samples())
    code = EXIT_OK
    for name, rep in reports:
        if run is not None:
            run.write_report(name, rep, name)
        if not rep.passed:
            code = EXIT_AUDIT
            log.error("selftest %s failed; worst sample %s", name, dumps(rep.samples[:1]).strip())
        else:
            log.info("selftest %s: pass", name)
    if run is not None:
        run.manifest({"command": "selftest", "exit_code": code, "seed": seed, "draws": draws, "flip": flip,
                      "versions": {"fracdg": __version__}})
    return code


def _iteration_samples() -> list[tuple[str, AuditReport]]:
    out = []
    cases = [
        ("iteration_constant", lambda t: np.full_like(t, 2.0), 1.0, 1.0, 1.0, 1.0, 1.0, 0.5),
        ("iteration_power", lambda t: 0.1 / (2.0 - t) ** 2, 1.0, 0.5, 0.5, 2.0, 1.0, 0.5),
    ]
    for name, phi, A, B, D, alpha, beta, gamma in cases:
        out.append((name, check_iteration_lemma(phi, 0.5, 1.5, A, B, D, alpha, beta, gamma)))
    return out


def _embedding_samples() -> list[tuple[str, AuditReport]]:
    g = Grid((-1.25,), (1.25,), 1.0 / 64)
    x = g.centers[:, 0]
    fam = [GridFunction(g, np.sin(3 * x)), GridFunction(g, np.abs(x) ** 0.7), GridFunction(g, np.tanh(4 * x))]
    out = []
    for sigma, delta in ((0.25, 0.1), (0.4, 0.5), (0.5, 3.0)):
        rep = estimate_embedding_constants(fam, 0.6, 2.0, "lower_order", sigma=sigma, delta=delta)
        out.append((f"lower_order_sigma{sigma}_delta{delta}", rep))
    rep = estimate_embedding_constants(fam, 0.6, 2.0, "lower_order_q", sigma=0.3, q=1.5)
    out.append(("lower_order_q", rep))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracdg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("minimize", "solve", "verify-dg", "verify-iso", "hoelder", "harnack", "tail"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--h-override", type=float)
    st = sub.add_parser("selftest", parents=[common])
    st.add_argument("--out")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--threads", type=int)
    st.add_argument("--draws", type=int, default=100_000)
    st.add_argument("--flip", choices=LEMMA_IDS, help="negative control: reverse one lemma's inequality")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            set_threads(args.threads)
        if args.command == "selftest":
            return selftest(Path(args.out) if args.out else None, args.seed, args.draws, args.flip)
        cfg = load_config(args.config, seed=args.seed, h_override=args.h_override)
        out = args.out or cfg.out
        if not out:
            raise ConfigError("no output directory (--out or config 'out')")
        return run_experiment(cfg, args.command, Path(out))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("divergence: %s", exc)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
