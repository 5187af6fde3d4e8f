"""Command-line driver: ``stationary-scattering run --task <name> ...``.

Exit codes: 0 success, 2 validation failure, 3 numeric failure (strict mode),
4 input/output failure.  All JSON output is written with sorted keys and
carries the hash of the resolved configuration, so repeated runs with the same
configuration produce byte-identical files.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import ManifoldModel, ModelError, SpectralParameterError, builtin_model, builtin_names, critical_energy

TASKS = ("verify", "resolve", "dft", "smatrix", "benchmark1d", "counterexample")
DEFAULT_MODEL = {
    "verify": "euclidean",
    "resolve": "euclidean",
    "dft": "euclidean",
    "smatrix": "catenoid_asym",
    "benchmark1d": "square_well",
    "counterexample": "parabolic(0.5)",
}
DEFAULT_LAMBDA = {"benchmark1d": [0.3, 0.5, 1.0, 2.0], "smatrix": [10.0], "counterexample": [1.0]}
CONVENTIONS = {
    "reference_sphere": "S_r0, the inner boundary sphere of each end",
    "G": "L2 of S_r0 with its induced measure; coordinates in the orthonormal basis e_m = eps_m f(r0)^(-(d-1)/2)",
    "coefficients": "xi = exp(-+i Phi) sqrt(b) u_m, so the exact outgoing wave b^(-1/2) exp(i Phi) e_m has xi = e_m",
    "profiles": "half-density gauge u_m(r) = f(r)^((d-1)/2) <eps_m, phi(r, .)>",
    "eigenfunction": "phi ~ phi+[xi+] - phi-[xi-]",
}


class ValidationError(ValueError):
    pass


class NumericFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


def _parse_lambda(text):
    if text is None:
        return None
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad lambda list {text!r}") from exc
    if not vals:
        raise ValidationError("empty lambda list")
    return vals


def _parse_grid(text):
    out = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise ValidationError(f"bad grid item {part!r}; use n=<int>,Rmax=<float> or h=<float>")
        k, v = (s.strip() for s in part.split("=", 1))
        if k == "n":
            out["n"] = int(v)
        elif k in ("Rmax", "h"):
            out[k] = float(v)
        else:
            raise ValidationError(f"unknown grid key {k!r}")
    return out


def _load_model(spec):
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        try:
            return ManifoldModel.load(path)
        except OSError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"invalid model file {spec}: {exc}") from exc
    return builtin_model(spec)


def build_config(args):
    task = args.task
    model_spec = args.model or DEFAULT_MODEL[task]
    lam = _parse_lambda(args.lam)
    if lam is None:
        lam = DEFAULT_LAMBDA.get(task, [1.0])
    grid = _parse_grid(args.grid)
    try:
        source = json.loads(args.source) if args.source else {"name": "gaussian", "center": None, "width": 1.0, "mode": 0}
    except json.JSONDecodeError as exc:
        raise ValidationError(f"--source is not valid JSON: {exc}") from exc
    if not isinstance(source, dict):
        raise ValidationError("--source must be a JSON object")
    return {
        "task": task,
        "model": model_spec,
        "lambda": lam,
        "grid": grid,
        "modes": args.modes,
        "source": source,
        "beta": float(args.beta),
        "rmax_sweep": _parse_lambda(args.rmax_sweep) if args.rmax_sweep else None,
        "refine": bool(args.refine),
        "strict": bool(args.strict),
        "tol": args.tol,
        "version": __version__,
    }


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _write_json(out_dir, name, payload, cfg):
    body = {"config": cfg, "config_hash": config_hash(cfg), "conventions": CONVENTIONS, "result": payload}
    (out_dir / name).write_text(json.dumps(_plain(body), sort_keys=True, indent=1) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


# --------------------------------------------------------------------------
# tasks


def _grid_for(model, cfg, default_h):
    from .solver import RadialGrid

    g = cfg["grid"]
    R = g.get("Rmax", model.Rmax)
    if "n" in g:
        if model.coupling == "two_end_line":
            return RadialGrid(model.r0, R, g["n"], True)
        return RadialGrid(model.r0, R, g["n"], False)
    return RadialGrid.for_model(model, g.get("h", default_h), R)


def _basis_for(model, cfg):
    from .modes import build_mode_basis

    chart = model.ends[0]
    if chart.d == 1:
        return build_mode_basis(model)
    if cfg["modes"] is not None:
        if chart.angular == "circle":
            return build_mode_basis(model, count=cfg["modes"])
        return build_mode_basis(model, M=cfg["modes"])
    return build_mode_basis(model, 1 if chart.angular == "circle" else 1)


def _source(model, grid, basis, cfg):
    from .solver import source_profile

    spec = dict(cfg["source"])
    name = spec.pop("name", "gaussian")
    spec = {k: v for k, v in spec.items() if v is not None}
    try:
        return source_profile(name, grid, basis, model, **spec)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad source profile: {exc}") from exc


def _with_rmax(model, R):
    m = copy.deepcopy(model)
    for chart in m.ends:
        chart.Rmax = float(R)
    return m


def _require_radiation_energies(model, lams):
    lam0 = critical_energy(model).lambda0
    bad = [l for l in lams if l <= lam0 + 1e-3]
    if bad:
        raise ValidationError(f"lambda values {bad} do not exceed lambda0 = {lam0:.6g}")


def task_verify(model, cfg, out):
    from .conditions import verify_conditions

    from .geometry import effective_potential, liouville_potential

    rep = verify_conditions(model)
    d = rep.to_dict()
    gaps = []
    for chart in model.ends:
        if chart.kind == "warped":
            r = np.geomspace(chart.r0, chart.Rmax, 400)
            q = effective_potential(chart, r).q
            gaps.append(float(np.max(np.abs(q - chart.V(r) - liouville_potential(chart, r)))))
    # the half-density identity q - V = (f^((d-1)/2))'' / (2 f^((d-1)/2)) on warped ends
    d["liouville_identity_gap"] = max(gaps) if gaps else None
    _write_json(out, "conditions.json", d, cfg)
    return []


def task_resolve(model, cfg, out):
    from .solver import RadialGrid, besov_norms, greens_identity_check, radiation_residual, solve_resolvent

    _require_radiation_energies(model, cfg["lambda"])
    basis = _basis_for(model, cfg)
    grid = _grid_for(model, cfg, 0.05)
    psi = _source(model, grid, basis, cfg)
    results, flags = [], []
    for lam in cfg["lambda"]:
        sol = solve_resolvent(model, basis, grid, psi, lam, "radiation_outgoing")
        bn = besov_norms(sol.phi)
        rr = grid.radii(model)
        gc = greens_identity_check(sol, float(rr[len(rr) // 2]))
        rad = radiation_residual(sol, cfg["beta"])
        # adjoint identity <psi2, R(lam + i0) psi> = <R(lam - i0) psi2, psi> against a shifted source
        psi2 = psi.copy_with(np.roll(psi.u, len(grid.nodes) // 7, axis=1) * (1.0 + 0.5j))
        inc = solve_resolvent(model, basis, grid, psi2, lam, "radiation_incoming")
        lhs = psi2.inner(sol.phi)
        adj = abs(lhs - inc.phi.inner(psi)) / max(abs(lhs), 1e-300)
        herglotz = {
            f"{gam:g}": float(np.imag(psi.inner(solve_resolvent(model, basis, grid, psi, lam + 1j * gam, "damped").phi)))
            for gam in (1e-3, 1e-2, 1e-1, 1.0)
        }
        herglotz["0"] = float(np.imag(psi.inner(sol.phi)))
        sol.phi.to_csv(out / f"solution_lambda_{lam:g}.csv", two_end=grid.two_end)
        results.append(
            {
                "lambda": lam,
                "solve_residual": sol.residual,
                "B_star_norm": bn.B_star,
                "green_discrepancy": vars(gc),
                "radiation_residual": vars(rad),
                "adjoint_identity_gap": adj,
                "herglotz_imag": herglotz,
                "herglotz_sign_ok": min(herglotz.values()) >= 0.0,
            }
        )
    if cfg["rmax_sweep"]:
        h = cfg["grid"].get("h", 0.05)
        for row in results:
            ratios = {}
            for R in cfg["rmax_sweep"]:
                m_R = _with_rmax(model, R)
                g_R = RadialGrid.for_model(m_R, h)
                s_R = solve_resolvent(m_R, basis, g_R, _source(m_R, g_R, basis, cfg), row["lambda"], "radiation_outgoing")
                ratios[f"{R:g}"] = radiation_residual(s_R, cfg["beta"]).ratio
            row["radiation_bound_sweep"] = ratios
            row["radiation_bound_variation"] = max(ratios.values()) / min(ratios.values()) - 1.0
    _write_json(out, "resolve.json", results, cfg)
    return flags


def task_dft(model, cfg, out):
    from .fourier import dft

    _require_radiation_energies(model, cfg["lambda"])
    basis = _basis_for(model, cfg)
    grid = _grid_for(model, cfg, 0.05)
    psi = _source(model, grid, basis, cfg)
    results, flags = [], []
    for lam in cfg["lambda"]:
        for sign in (1, -1):
            d = dft(model, lam, sign, psi, basis, grid, tol=cfg["tol"])
            tag = "plus" if sign > 0 else "minus"
            d.trace.to_csv(out / f"xi_trace_{tag}_lambda_{lam:g}.csv")
            if not d.converged:
                flags.append(f"F{tag}({lam:g}) not converged: cauchy {d.cauchy:.3e}")
            results.append(
                {
                    "lambda": lam,
                    "sign": sign,
                    "xi": d.xi.to_dict(),
                    "xi_pointwise_at_1.5R": _plain(d.pointwise_mid.astype(complex).tolist()),
                    "cauchy": d.cauchy,
                    "converged": d.converged,
                    "parseval_lhs": d.parseval_lhs,
                    "parseval_rhs": d.parseval_rhs,
                    "parseval_relative_gap": d.parseval_gap / max(abs(d.parseval_rhs), 1e-300),
                }
            )
    _write_json(out, "dft.json", results, cfg)
    return flags


def task_smatrix(model, cfg, out):
    from .modes import build_mode_basis
    from .smatrix import build_smatrix
    from .solver import RadialGrid

    _require_radiation_energies(model, cfg["lambda"])
    chart = model.ends[0]
    if chart.d == 1:
        basis = build_mode_basis(model)
    else:
        basis = build_mode_basis(model, count=cfg["modes"] or 8)
    grid = _grid_for(model, cfg, 0.04)
    results, flags = [], []
    for lam in cfg["lambda"]:
        S = build_smatrix(model, lam, basis, grid, tol=cfg["tol"])
        flags += S.flags
        d = S.to_dict()
        d["column_norm_gaps"] = S.column_norm_gaps
        d["column_cauchy"] = S.column_cauchy
        if cfg["refine"]:
            fine = RadialGrid(grid.r0, grid.Rmax, 2 * grid.n, grid.two_end)
            S2 = build_smatrix(model, lam, basis, fine, tol=cfg["tol"])
            flags += S2.flags
            d2 = S2.to_dict()
            d["refined"] = {
                "h": fine.h,
                "defect": S2.defect,
                "sigma_min": d2["sigma_min"],
                "sigma_min_relative_change": {k: abs(d2["sigma_min"][k] / v - 1.0) for k, v in d["sigma_min"].items()},
                "column_norm_gaps": S2.column_norm_gaps,
            }
        results.append(d)
    _write_json(out, "smatrix.json", results, cfg)
    return flags


def task_benchmark1d(model, cfg, out):
    from .smatrix import benchmark_1d, write_benchmark_csv

    pot = model.potential
    if pot.name != "square_well":
        raise ValidationError("benchmark1d needs the square_well line model")
    g = cfg["grid"]
    Rmax = g.get("Rmax", model.Rmax)
    h = g.get("h", 2 * Rmax / g["n"] if "n" in g else 0.01)
    rows = benchmark_1d(cfg["lambda"], pot.params["depth"], pot.params["half_width"], h=h, Rmax=Rmax)
    write_benchmark_csv(rows, out / "benchmark1d.csv")
    payload = [vars(r) | {"flux_defect": abs(r.T2_computed + r.R2_computed - 1.0)} for r in rows]
    _write_json(out, "benchmark1d.json", payload, cfg)
    return []


def task_counterexample(model, cfg, out):
    from .counterexample import ParabolicModel, residual_decay, wkb_failure_demo

    chart = model.ends[0]
    if chart.kind != "parabolic":
        raise ValidationError("counterexample needs a parabolic model, e.g. parabolic(0.5)")
    kappa = chart.kappa
    g = cfg["grid"]
    pm = ParabolicModel(kappa, r0=chart.r0, Rmax=g.get("Rmax", 2048.0), h=g.get("h", 0.2))
    n_k = cfg["modes"] or 2
    results, flags = [], []
    for lam in cfg["lambda"]:
        for k in range(1, n_k + 1):
            if kappa <= 0.5:
                rep = wkb_failure_demo(pm, lam, k)
                rep.trace.to_csv(out / f"phase_trace_lambda_{lam:g}_k_{k}.csv")
                flags += [f for f in rep.flags if "expected" not in f]
                results.append(rep.to_dict())
            else:
                rd = residual_decay(pm, lam, k, plain=True)
                results.append(
                    {
                        "kappa": kappa,
                        "lambda": lam,
                        "k": k,
                        "residual_exponent_fit": rd.exponent,
                        "compensated_exponent_fit": rd.compensated_exponent,
                        "residual_in_B": rd.exponent > 1.0,
                        "note": "plain b = sqrt(2 lambda); no generalized eigenfunction asymptotics are claimed for kappa > 1/2",
                    }
                )
    _write_json(out, "counterexample.json", results, cfg)
    return flags


TASK_FUNCS = {
    "verify": task_verify,
    "resolve": task_resolve,
    "dft": task_dft,
    "smatrix": task_smatrix,
    "benchmark1d": task_benchmark1d,
    "counterexample": task_counterexample,
}


# --------------------------------------------------------------------------


def make_parser():
    p = argparse.ArgumentParser(prog="stationary-scattering", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--task", required=True, choices=TASKS)
    run.add_argument("--model", help="model JSON file or built-in name such as 'parabolic(0.5)'")
    run.add_argument("--lambda", dest="lam", help="comma-separated energies")
    run.add_argument("--grid", help="n=<int>,Rmax=<float> or h=<float>,Rmax=<float>")
    run.add_argument("--modes", type=int, help="number of angular modes")
    run.add_argument("--source", help='source profile as JSON, e.g. \'{"name": "gaussian", "center": 4, "width": 1, "mode": 0}\'')
    run.add_argument("--beta", type=float, default=0.0, help="radial weight exponent of the radiation residual (resolve)")
    run.add_argument("--rmax-sweep", help="comma-separated outer radii; resolve re-solves on each and compares radiation bounds")
    run.add_argument("--refine", action="store_true", help="smatrix: repeat on the grid h/2 and compare cross-end singular values")
    run.add_argument("--tol", type=float, default=1e-2, help="Cauchy tolerance for large-radius limits")
    run.add_argument("--strict", action="store_true", help="non-converged diagnostics give exit code 3")
    run.add_argument("--out", default="out", help="output directory")
    sub.add_parser("models", help="list built-in models")
    return p


def split_models(spec):
    """Split a comma-separated model list, keeping commas inside parentheses."""
    parts, depth, cur = [], 0, ""
    for ch in spec:
        depth += {"(": 1, ")": -1}.get(ch, 0)
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    parts.append(cur.strip())
    return [p for p in parts if p]


def _out_name(spec):
    base = Path(spec).stem if spec.endswith(".json") else spec
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in base).strip("_")


def run(args) -> int:
    try:
        cfg = build_config(args)
        specs = split_models(cfg["model"])
        if not specs:
            raise ValidationError("empty model list")
        models = [_load_model(m) for m in specs]
    except (ValidationError, ModelError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    out = Path(args.out)
    flags = []
    for spec, model in zip(specs, models):
        sub = out if len(specs) == 1 else out / _out_name(spec)
        sub_cfg = cfg if len(specs) == 1 else dict(cfg, model=spec)
        try:
            sub.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return 4
        try:
            flags += TASK_FUNCS[cfg["task"]](model, sub_cfg, sub)
        except (ValidationError, ModelError, SpectralParameterError) as exc:
            print(f"validation error: {exc}", file=sys.stderr)
            return 2
        except OSError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return 4
        except (ArithmeticError, np.linalg.LinAlgError, NumericFailure) as exc:
            print(f"numeric failure: {exc}", file=sys.stderr)
            return 3
    for f in flags:
        print(f"flag: {f}", file=sys.stderr)
    if flags and cfg["strict"]:
        return 3
    print(f"wrote results to {out}")
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "models":
        print("\n".join(builtin_names()))
        return 0
    return run(args)


if __name__ == "__main__":
    raise SystemExit(main())
