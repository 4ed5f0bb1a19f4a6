"""Command-line entry point.

Exit codes: 0 success, 1 tolerance failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    HypothesisError,
    NormingError,
    empirical_g0,
    make_norming,
    theorem_hypotheses,
    theoretical_g0,
    verify_theorem,
)
from .lattice_model import FINITE, POWER_TAIL, ModelError, StepLaw, classify, is_aperiodic, load_model
from .occupation import CapacityError, GridSpec, auto_occupation, u_exact, u_sum
from .oracle import exact_enumeration, mc_containment, mc_paths, taboo_dp
from .renewal import RenewalError, estimate_p, invert_renewal

log = logging.getLogger("firstreturn")

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    return format(float(x), ".17g")


def _meta(law: StepLaw, args, **extra) -> dict:
    meta = {
        "tool": "firstreturn",
        "version": __version__,
        "fingerprint": law.fingerprint,
        "mode": getattr(args, "mode", None),
        "seed": getattr(args, "seed", None),
    }
    meta.update(extra)
    return meta


def write_csv(path: Path, meta: dict, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}={meta[key]}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(r if isinstance(r, str) else fmt(r) for r in row) + "\n")


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return fmt(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from None
    return out


def _load(args) -> StepLaw:
    if not args.model:
        raise InputError("--model is required")
    try:
        return load_model(args.model)
    except FileNotFoundError:
        raise InputError(f"model file {args.model} not found") from None
    except ModelError as exc:
        where = f" (field: {exc.field_name})" if exc.field_name else ""
        raise InputError(f"invalid model: {exc}{where}") from None


def _horizon(args) -> int:
    if args.n_max is None or args.n_max < 1:
        raise InputError("horizon must be >= 1 (--n-max)")
    return args.n_max


# --- commands ------------------------------------------------------------------------


def cmd_model_validate(args) -> int:
    law = _load(args)
    cls = classify(law)
    report = {"valid": True, "fingerprint": law.fingerprint, "family": law.family, **cls.to_dict()}
    if not cls.aperiodic:
        report["hint"] = "periodic walk: use lazify (a hold at the origin) to obtain an aperiodic variant"
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    if args.out:
        write_json(_out_dir(args) / "model.json", report)
    return EXIT_OK


def _occupation_for_compute(law: StepLaw, n_max: int, args):
    if args.mode == "rational":
        if not law.exact or law.family != FINITE:
            raise InputError("rational mode needs a finite-atoms law with rational probabilities")
        return u_exact(law, n_max, "rational"), "rational-dp"
    grid = GridSpec.parse(args.grid, law.dim) if args.grid else None
    return auto_occupation(law, n_max, args.tolerance or 1e-12, grid, args.workers)


def cmd_compute(args) -> int:
    law = _load(args)
    n_max = _horizon(args)
    out = _out_dir(args)
    u, decision = _occupation_for_compute(law, n_max, args)
    taus = invert_renewal(u)
    cls = classify(law)
    summary = {"method": u.method, "method_decision": decision, "horizon": n_max,
               "max_u_error": float(np.max(u.errors))}
    if u.grid is not None:
        summary["grid"] = list(u.grid.sizes)
    if not cls.drift_free:
        U, tail, bound = u_sum(u)
        summary["tail_model"] = "geometric (walk with drift)"
    elif cls.transient:
        plan = make_norming(law, cls)
        try:
            g0, _ = empirical_g0(u, plan)
            g0_source = "extrapolated"
        except ValueError:
            g0, _ = theoretical_g0(law, cls)
            g0_source = "theoretical"
        U, tail, bound = u_sum(u, plan, g0)
        summary["tail_model"] = f"g0 / C_n with g0 = {g0:.12g} ({g0_source}), eta = {plan.eta:g}"
    else:
        U = tail = bound = None
        summary["tail_model"] = f"recurrent (eta = {cls.eta:g}): sum of u_n diverges, p = 1"
    if U is not None:
        p, interval = estimate_p(U, bound)
        summary.update({"U": U, "U_tail": tail, "U_bound": bound, "p": p, "interval": list(interval),
                        "defect": 1.0 - p})
    else:
        summary.update({"p": 1.0, "interval": [1.0, 1.0], "defect": 0.0})
    meta = _meta(law, args, method=u.method)
    write_csv(out / "u.csv", meta, ["n", "u_n", "e_n"],
              ((n, u.values[n], u.errors[n]) for n in range(n_max + 1)))
    cum = taus.cumulative()
    write_csv(out / "p.csv", meta, ["n", "p_n", "P_n"],
              ((n, taus.values[n], cum[n]) for n in range(1, n_max + 1)))
    write_json(out / "summary.json", {**meta, **summary})
    print(json.dumps(_jsonable({k: summary[k] for k in ("p", "interval", "method")})))
    return EXIT_OK


def _tolerances(args, law: StepLaw) -> tuple[float, float]:
    if args.tolerance is not None:
        return args.tolerance, args.tolerance
    if law.family == POWER_TAIL:
        return 0.05, 0.05
    return 0.02, 0.03


def cmd_verify(args) -> int:
    law = _load(args)
    n_max = _horizon(args)
    reasons = theorem_hypotheses(law)
    if reasons:
        print("refused: " + "; ".join(reasons), file=sys.stderr)
        return EXIT_INPUT
    out = _out_dir(args)
    grid = GridSpec.parse(args.grid, law.dim) if args.grid else None
    report = verify_theorem(law, n_max, grid=grid, workers=args.workers)
    tol_ratio, tol_g0 = _tolerances(args, law)
    ok = report.ratio_gap <= tol_ratio and report.g0_gap <= tol_g0
    payload = {**_meta(law, args), **report.to_dict(),
               "tolerances": {"ratio_gap": tol_ratio, "g0_gap": tol_g0}, "passed": ok}
    write_json(out / "report.json", payload)
    u = report.u.as_float()
    pv = report.tau.as_float()
    plan = report.plan
    target = report.target
    rows = []
    for n in range(1, n_max + 1):
        cn = plan.C(n)
        rho = pv[n] / u[n] if u[n] > 0 else float("nan")
        rows.append((n, u[n], pv[n], cn * u[n], rho, target * report.g0_predicted / cn))
    write_csv(out / "verify.csv", _meta(law, args), ["n", "u_n", "p_n", "C_n_u_n", "rho_n", "predicted_p_n"], rows)
    print(f"ratio gap {report.ratio_gap:.3g} (tol {tol_ratio}), g0 gap {report.g0_gap:.3g} (tol {tol_g0})")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_oracle(args) -> int:
    law = _load(args)
    n_max = _horizon(args)
    if law.family != FINITE:
        raise InputError("the oracle chain needs a finite-atoms law")
    exact = args.mode == "rational"
    if exact and not law.exact:
        raise InputError("rational mode needs rational step probabilities")
    out = _out_dir(args)
    mode = "rational" if exact else "float"
    table = taboo_dp(law, n_max, mode)
    u = u_exact(law, n_max, mode)
    chain = invert_renewal(u)
    enum_limit = min(n_max, args.enum_max)
    rows = []
    chains_ok = True
    for n in range(1, n_max + 1):
        row = {"n": n, "u_n": u.values[n], "p_n_renewal": chain.values[n], "p_n_taboo": table.first_return[n]}
        if exact:
            agree = chain.values[n] == table.first_return[n]
        else:
            agree = abs(chain.values[n] - table.first_return[n]) <= 1e-12
        if law.exact and n <= enum_limit:
            eu, ep = exact_enumeration(law, n)
            row["u_n_enum"], row["p_n_enum"] = eu, ep
            if exact:
                agree &= eu == u.values[n] and ep == chain.values[n]
            else:
                agree &= abs(float(eu) - u.values[n]) <= 1e-12 and abs(float(ep) - chain.values[n]) <= 1e-12
        row["agree"] = bool(agree)
        chains_ok &= bool(agree)
        rows.append(row)
    est = mc_paths(law, n_max, args.trials, args.seed, args.workers)
    contain = mc_containment(est, u.as_float(), chain.as_float())
    ulo, uhi = est.u_interval()
    plo, phi = est.p_interval()
    mc_rows = [(n, int(est.hits[n]), est.u[n], ulo[n], uhi[n], int(est.first_returns[n]), est.p[n], plo[n], phi[n])
               for n in range(1, n_max + 1)]
    meta = _meta(law, args, trials=args.trials, interval="wilson 99%")
    write_csv(out / "mc.csv", meta, ["n", "hits", "u_hat", "u_lo", "u_hi", "first", "p_hat", "p_lo", "p_hi"], mc_rows)
    mc_ok = contain["fraction"] >= 0.95
    write_json(out / "oracle.json", {**meta, "chains_agree": chains_ok, "rows": rows,
                                     "mc_containment": contain, "passed": chains_ok and mc_ok})
    print(f"exact chains agree: {chains_ok}; MC containment {contain['fraction']:.3f}")
    return EXIT_OK if chains_ok and mc_ok else EXIT_TOLERANCE


def cmd_simulate(args) -> int:
    law = _load(args)
    n_max = _horizon(args)
    out = _out_dir(args)
    est = mc_paths(law, n_max, args.trials, args.seed, args.workers)
    ulo, uhi = est.u_interval()
    plo, phi = est.p_interval()
    rows = [(n, int(est.hits[n]), est.u[n], ulo[n], uhi[n], int(est.first_returns[n]), est.p[n], plo[n], phi[n])
            for n in range(1, n_max + 1)]
    meta = _meta(law, args, trials=args.trials, interval="wilson 99%")
    write_csv(out / "mc.csv", meta, ["n", "hits", "u_hat", "u_lo", "u_hi", "first", "p_hat", "p_lo", "p_hi"], rows)
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--n-max", type=int, dest="n_max", help="horizon N")
    common.add_argument("--grid", help="grid size M or M1,M2,... for the DFT sweep")
    common.add_argument("--mode", choices=("float", "rational"), default="float")
    common.add_argument("--seed", type=int, default=12345)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--tolerance", type=float, default=None)
    common.add_argument("--trials", type=int, default=100_000)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--enum-max", type=int, default=8, dest="enum_max",
                        help="largest n checked by path enumeration in the oracle command")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="firstreturn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    model = sub.add_parser("model", help="model file utilities")
    model_sub = model.add_subparsers(dest="model_command", required=True)
    validate = model_sub.add_parser("validate", parents=[common], help="validate and classify a model")
    validate.set_defaults(func=cmd_model_validate, out=None)
    sub.add_parser("compute", parents=[common], help="u_n, p_n and p").set_defaults(func=cmd_compute)
    sub.add_parser("verify", parents=[common], help="check p_n ~ (1-p)^2 g(0)/C_n").set_defaults(func=cmd_verify)
    sub.add_parser("oracle", parents=[common], help="compare exact chains and Monte Carlo").set_defaults(func=cmd_oracle)
    sub.add_parser("simulate", parents=[common], help="Monte Carlo estimates only").set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InputError, CapacityError, HypothesisError, NormingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, RenewalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
