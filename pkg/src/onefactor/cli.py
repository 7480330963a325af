"""Command-line front end.

    onefactor {classify,verify,profiles,timedep,solve} --config FILE [--out DIR] [--tol X]

Exit codes: 0 success, 1 check failed (residual above tolerance),
2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classify as cls
from . import pdesolve, solutions, timedep
from .expr import Expr, ExprError, ParseError, parse
from .expr.quad import QuadratureError
from .geometry import Grid, Metric1D, ModelError, ModelSpec
from .ode import IntegrationError

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# -- deterministic JSON ---------------------------------------------------------------


def _num(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(v, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON with sorted keys and 17-significant-digit floats."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(obj[k], indent + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, complex):
        return dumps({"re": obj.real, "im": obj.imag}, indent)
    return json.dumps(str(obj))


# -- configuration --------------------------------------------------------------------


@dataclass
class RunConfig:
    sections: dict
    constants: dict
    grid: Grid
    cond_tol: float = 1e-8
    residual_tol: float = 1e-8
    quad_tol: float = 1e-10
    name: str = "run"
    path: str = ""
    extra: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def expr(self, text: str) -> Expr:
        return parse(text, self.constants)

    def number(self, section: str, key: str, default=None) -> float:
        raw = self.section(section).get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"[{section}] {key} is required")
            return float(default)
        try:
            return float(parse(raw, self.constants).eval({}))
        except ExprError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {s: {k: _unquote(v) for k, v in parser.items(s)} for s in parser.sections()}
    constants = {}
    for k, v in sections.get("constants", {}).items():
        try:
            constants[k] = float(parse(v, constants).eval({}))
        except ExprError as exc:
            raise ConfigError(f"[constants] {k}: {exc}") from exc
    cfg = RunConfig(sections, constants, Grid(), path=path)
    try:
        cfg.grid = Grid(
            cfg.number("grid", "x_min", -1.0),
            cfg.number("grid", "x_max", 1.0),
            int(cfg.number("grid", "n_x", 401)),
            cfg.number("grid", "t_min", 0.0),
            cfg.number("grid", "t_max", 2.0),
            int(cfg.number("grid", "n_t", 201)),
        )
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    for key in ("cond_tol", "residual_tol", "quad_tol"):
        val = cfg.number("tol", key, getattr(cfg, key))
        if not val > 0:
            raise ConfigError(f"[tol] {key} must be positive")
        setattr(cfg, key, val)
    cfg.name = sections.get("output", {}).get("name", "run")
    return cfg


def build_model(cfg: RunConfig) -> ModelSpec:
    sec = cfg.section("model")
    coords = sec.get("coords", "x")
    if "heat_k" in sec:
        sigma = cls.heat_form_sigma(cfg.expr(sec["heat_k"]), cfg.number("model", "heat_c1", 0.0), cfg.grid)
    elif "sigma" in sec:
        sigma = cfg.expr(sec["sigma"])
    else:
        raise ConfigError("[model] needs sigma (or heat_K)")
    if "drift" in sec:
        return ModelSpec(sigma=sigma, drift=cfg.expr(sec["drift"]), coords=coords, name=cfg.name)
    missing = [k for k in ("kappa", "mu", "lambda") if k not in sec]
    if missing:
        raise ConfigError(f"[model] missing {', '.join(missing)} (or give drift)")
    return ModelSpec(
        sigma=sigma,
        kappa=cfg.expr(sec["kappa"]),
        mu=cfg.expr(sec["mu"]),
        lam=cfg.expr(sec["lambda"]),
        coords=coords,
        name=cfg.name,
    )


def _write(out: Path, name: str, text: str) -> str:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return str(path)


# -- subcommands ----------------------------------------------------------------------


def cmd_classify(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    sec = cfg.section("model")
    report = cls.classify(
        model,
        cfg.grid,
        tol=cfg.cond_tol,
        verify_tol=cfg.residual_tol,
        x_ref=cfg.number("model", "x_ref", 0.0),
        u_offset=cfg.number("model", "u_offset", 0.0),
    )
    doc = report.to_dict()
    doc["model"] = {k: sec[k] for k in sorted(sec)}
    _write(out, f"{cfg.name}_classify.json", dumps(doc) + "\n")
    print(f"case={report.case} extra={report.extra_count} total={report.total}")
    return EXIT_OK


_SELECTORS = (
    "schwartz",
    "exp-perturbation",
    "exp-perturbation-limit",
    "sine",
    "invariant",
    "expr",
    "stated-power-sigma",
    "stated-exp-sigma",
    "stated-sine",
    "stated-heat-constant",
)


def _selected_solution(cfg: RunConfig):
    sec = cfg.section("verify")
    sel = sec.get("selector", "")
    num = lambda k, d: cfg.number("verify", k, d)  # noqa: E731
    status, key, grid = None, "", None
    if sel == "schwartz":
        sol = solutions.schwartz_solution(num("kappa", 2.0), num("lambda", 0.1), num("mu", 0.3), num("sigma0", 0.2))
    elif sel in ("exp-perturbation", "exp-perturbation-limit"):
        eps = 0.0 if sel == "exp-perturbation-limit" else num("eps", 0.1)
        ex = solutions.example_family(
            "exp_perturbation", {"eps": eps, "m": num("m", 1.0), "c": num("c", 0.5), "x0": num("x0", 0.0)}
        )
        sol, grid = ex.solution, ex.grid
    elif sel == "sine":
        ex = solutions.example_family(
            "sine_perturbation", {"eps": num("eps", 0.1), "m": num("m", 1.0), "c": num("c", 0.5), "omega": num("omega", 1.0)}
        )
        sol, grid = ex.canonical, ex.grid
    elif sel == "invariant":
        sigma = cfg.expr(sec.get("sigma", "1"))
        sol = solutions.invariant_solution(
            Metric1D(sigma), num("m", 1.0), num("c", 0.0), num("x_ref", 0.0), num("u_offset", 0.0), num("scale", 1.0)
        )
    elif sel == "expr":
        if "lnf" not in sec:
            raise ConfigError("[verify] selector expr needs lnF")
        sol = solutions.ClosedFormSolution(cfg.expr(sec["lnf"]), build_model(cfg), {}, "user")
    elif sel.startswith("stated-"):
        kind = {
            "stated-power-sigma": "power_sigma",
            "stated-exp-sigma": "exp_sigma",
            "stated-sine": "sine_perturbation",
            "stated-heat-constant": "heat_constant",
        }.get(sel)
        if kind is None:
            raise ConfigError(f"unknown selector {sel!r}")
        params = {k: cfg.number("verify", k) for k in ("m", "c", "c1", "eps", "omega", "kappa", "mu") if k in sec}
        if "lambda" in sec:
            params["lambda"] = num("lambda", 0.0)
        if "drift_form" in sec:
            params["drift_form"] = sec["drift_form"]
        ex = solutions.example_family(kind, params)
        sol, status, key, grid = ex.solution, ex.status, ex.discrepancy, ex.grid
    else:
        raise ConfigError(f"unknown selector {sel!r}; choose from {', '.join(_SELECTORS)}")
    return sel, sol, status, key, grid


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    sel, sol, status, key, family_grid = _selected_solution(cfg)
    # worked examples carry their own validity window unless [grid] overrides it
    grid = cfg.grid if "grid" in cfg.sections or family_grid is None else family_grid
    rep = pdesolve.residual(sol.model, sol, grid)
    passed = rep.max <= cfg.residual_tol
    doc = {
        "selector": sel,
        "solution": str(sol),
        "residual": rep.to_dict(),
        "residual_tol": cfg.residual_tol,
        "grid": {"x": [grid.x_min, grid.x_max, grid.n_x], "t": [grid.t_min, grid.t_max, grid.n_t]},
        "passed": passed,
        "status": status or (solutions.PASS if passed else "fail"),
        "discrepancy": key,
        "discrepancy_note": solutions.DISCREPANCIES.get(key, ""),
    }
    _write(out, f"{cfg.name}_verify.json", dumps(doc) + "\n")
    print(f"selector={sel} max_residual={rep.max:.3e} passed={passed}")
    return EXIT_OK if passed else EXIT_CHECK


def _eps_tag(eps: float) -> str:
    return format(eps, "g")


def cmd_profiles(cfg: RunConfig, out: Path) -> int:
    sec = cfg.section("profiles")
    eps_list = [float(parse(v.strip(), cfg.constants).eval({})) for v in sec.get("eps", "0.1, 0.01").split(",")]
    families = [f.strip() for f in sec.get("families", "exp_perturbation, sine_perturbation").split(",")]
    t0 = cfg.number("profiles", "t0", 1.0)
    m, c = cfg.number("profiles", "m", 1.0), cfg.number("profiles", "c", 0.5)
    x0, omega = cfg.number("profiles", "x0", 0.0), cfg.number("profiles", "omega", 1.0)
    xs = cfg.grid.x
    written, checks, ok = [], [], True
    for fam in families:
        for eps in eps_list:
            params = {"eps": eps, "m": m, "c": c, "x_min": cfg.grid.x_min, "x_max": cfg.grid.x_max}
            params.update({"x0": x0} if fam == "exp_perturbation" else {"omega": omega})
            ex = solutions.example_family(fam, params)
            sol = ex.solution if fam == "exp_perturbation" else ex.canonical
            res = pdesolve.residual(sol.model, sol, ex.grid).max
            passed = res <= cfg.residual_tol
            ok &= passed
            checks.append({"family": fam, "eps": eps, "residual": res, "passed": passed})
            if not passed:
                continue
            rows = solutions.static_profile(sol, t0, xs)
            header = {"kind": fam, "eps": _eps_tag(eps), "m": format(m, "g"), "c": format(c, "g"), "t0": format(t0, "g")}
            name = f"{fam}_eps{_eps_tag(eps)}_t{format(t0, 'g')}.csv"
            written.append(_write(out, name, solutions.profile_csv(rows, header)))
    doc = {"files": [Path(p).name for p in written], "checks": checks}
    _write(out, f"{cfg.name}_profiles.json", dumps(doc) + "\n")
    print(f"wrote {len(written)} curves")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_timedep(cfg: RunConfig, out: Path) -> int:
    sec = cfg.section("timedep")
    model = timedep.TimeDepModel(
        cfg.expr(sec.get("p", "0")), cfg.expr(sec.get("q", "0")), cfg.expr(sec.get("sigma", "1"))
    )
    span = (cfg.number("timedep", "t_min", 0.0), cfg.number("timedep", "t_max", 2.0))
    basis = timedep.symmetry_basis(model, span)
    doc = basis.to_dict()
    doc["model"] = timedep.describe(model)
    doc["residual_tol"] = cfg.residual_tol
    passed = basis.residual_max <= cfg.residual_tol
    doc["passed"] = passed
    _write(out, f"{cfg.name}_timedep.json", dumps(doc) + "\n")
    print(f"dimension={basis.dimension} residual_max={basis.residual_max:.3e}")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    sec = cfg.section("solve")
    g = cfg.expr(sec.get("g", "exp(x)"))
    theta = cfg.number("solve", "theta", 0.5)
    extrap = sec.get("extrapolation", "quadratic")
    sol = pdesolve.solve_fd(model, g, cfg.grid, theta, extrapolation=extrap)
    doc = {"theta": theta, "extrapolation": extrap, "grid_residual": pdesolve.grid_residual(sol).to_dict()}
    if sec.get("compare") == "schwartz":
        if model.kappa is None:
            raise ConfigError("compare = schwartz needs kappa, mu and lambda")
        vals = [float(e.eval({})) for e in (model.kappa, model.lam, model.mu, model.sigma)]
        exact = solutions.schwartz_solution(*vals)
        var_is_s = model.coords == "S"
        s_vals = sol.x if var_is_s else np.exp(sol.x)
        ref = np.exp(exact.ln_f(sol.t[-1], s_vals))
        rel = np.abs(sol.F[-1] / ref - 1)[5:-5]
        doc["compare"] = {"against": "schwartz", "t": float(sol.t[-1]), "max_rel_error": float(rel.max())}
    _write(out, f"{cfg.name}_solve.csv", sol.to_csv())
    _write(out, f"{cfg.name}_solve.json", dumps(doc) + "\n")
    print(f"solved {sol.F.shape[0]}x{sol.F.shape[1]} grid")
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "verify": cmd_verify,
    "profiles": cmd_profiles,
    "timedep": cmd_timedep,
    "solve": cmd_solve,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onefactor", description="Symmetry analysis of one-factor pricing models.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI-style run configuration")
    ap.add_argument("--out", default="./out", help="output directory (default ./out)")
    ap.add_argument("--tol", type=float, default=None, help="override residual_tol")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.tol is not None:
            if not args.tol > 0:
                raise ConfigError("--tol must be positive")
            cfg.residual_tol = args.tol
        return COMMANDS[args.command](cfg, Path(args.out))
    except ParseError as exc:
        print(f"error: {exc} (offset {exc.offset})", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ModelError, ExprError, ValueError) as exc:
        if isinstance(exc, QuadratureError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, pdesolve.FDError, pdesolve.FlowError, RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
