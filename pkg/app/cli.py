"""
Batch front end: verify, classify, transform, simulate, catalog, serve.

Exit codes: 0 verified / matched / within tolerance, 1 refuted / no match /
drift exceeded / integration failure, 2 usage or input error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.config import get_settings, use_settings
from app.expr_core import DCEError, IntegrationFailure, PreconditionError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _read(path: str) -> str:
    return Path(path).read_text()


def _load_equation(path: str, assume: Optional[List[str]] = None):
    from app.equations import DCEquation, equation_from_text
    from app.parser import parse_assumption

    eq = equation_from_text(_read(path))
    if not assume:
        return eq
    extra = tuple(parse_assumption(text) for text in assume)
    return DCEquation(space=eq.space, chart=eq.chart, assumptions=eq.assumptions + extra, **eq.coefficients())


def _emit(args, model=None, text: str = "") -> None:
    if args.json and model is not None:
        print(model.to_json())
    else:
        print(text)


# ==================== COMMANDS ====================

def cmd_verify(args) -> int:
    from app.conslaw import cv_from_text, verify
    from app.models import VerificationReportModel
    from app.numlab import random_point_residual
    from app.parser import format_expr

    eq = _load_equation(args.eq, args.assume)
    cv = cv_from_text(_read(args.cv))
    report = verify(eq, cv)
    oracle = random_point_residual(eq, cv, n=args.oracle, seed=args.seed) if args.oracle else None
    tolerance = get_settings().tolerance
    lines = [report.verdict]
    if not report.verified:
        lines.append(f"residual: {format_expr(report.residual)}")
    if oracle is not None:
        lines.append(f"random-point residual ({args.oracle} points): {oracle:.3e} (tolerance {tolerance:.1e}): "
                     + ("within" if oracle < tolerance else "exceeded"))
        if report.verified and oracle >= tolerance:
            logger.warning("verified symbolically but the random-point residual %.3e exceeds %.1e", oracle, tolerance)
    model = VerificationReportModel.from_report(report, eq, cv, oracle, tolerance if oracle is not None else None)
    _emit(args, model, "\n".join(lines))
    return EXIT_OK if report.verified and (oracle is None or oracle < tolerance) else EXIT_FAIL


def cmd_classify(args) -> int:
    from app.catalog import classify
    from app.models import ClassificationResultModel

    result = classify(_load_equation(args.eq, args.assume))
    _emit(args, ClassificationResultModel.from_result(result), result.render())
    return EXIT_OK if result.matches else EXIT_FAIL


def cmd_transform(args) -> int:
    from app.conslaw import cv_from_text, cv_to_text
    from app.equations import equation_to_text, evolution_form, same_equation
    from app.models import TransformReportModel, VectorModel
    from app.parser import format_expr
    from app.transforms import PointTransformation, apply_point_to_evolution, element_from_text, push_conserved_vector

    eq = _load_equation(args.eq, args.assume)
    element = element_from_text(_read(args.tr))
    cv = cv_from_text(_read(args.cv)) if args.cv else None

    if isinstance(element, PointTransformation):
        image_rhs = apply_point_to_evolution(element, evolution_form(eq)).rhs
        image_text, same, kind, pt = f"u_t = {format_expr(image_rhs)}", None, "point", element
    else:
        image = element.apply_to_equation(eq)
        try:
            same = same_equation(eq, image)
        except PreconditionError:
            same = None
        image_text, kind, pt = equation_to_text(image).rstrip(), element.kind, element.point_transformation()
    image_cv = push_conserved_vector(pt, cv) if cv is not None else None

    lines = [image_text]
    if same is not None:
        lines.append(f"# same equation: {'yes' if same else 'no'}")
    if image_cv is not None:
        lines.append(cv_to_text(image_cv).rstrip())
    model = TransformReportModel(
        kind=kind,
        equation=eq.describe(),
        image=image_text,
        same_equation=same,
        vector=VectorModel.from_vector(cv) if cv is not None else None,
        image_vector=VectorModel.from_vector(image_cv) if image_cv is not None else None,
    )
    _emit(args, model, "\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from app.conslaw import cv_from_text
    from app.models import DriftReportModel
    from app.numlab import Grid, SolveConfig, monitor, write_csv
    from app.parser import parse_block

    eq = _load_equation(args.eq, args.assume)
    cv = cv_from_text(_read(args.cv))
    source = parse_block(_read(args.u0 or args.eq))
    if "u0" not in source.values:
        raise PreconditionError("no 'u0 = ...' line found for the initial profile")
    grid = Grid(x_lo=args.x_lo, x_hi=args.x_hi, n=args.n, boundary=args.boundary, values=tuple(args.values))
    cfg = SolveConfig(t_end=args.t_end, safety=args.safety, stride=args.stride)
    try:
        report = monitor(eq, cv, source.values["u0"], grid, cfg, label=Path(args.cv).stem, tolerance=args.drift_tol)
    except IntegrationFailure as error:
        print(f"integration failed at t = {error.time:g}: {error}", file=sys.stderr)
        return EXIT_FAIL
    if args.csv:
        write_csv(report, args.csv)
    text = f"drift {report.drift:.3e} (tolerance {report.tolerance:.1e}): " + (
        "conserved" if report.within_tolerance else "not conserved"
    )
    _emit(args, DriftReportModel.from_report(report), text)
    return EXIT_OK if report.within_tolerance else EXIT_FAIL


def cmd_catalog(args) -> int:
    from app.catalog import CASES, NOTE_REDUCTIONS, case_to_dict, export_catalog, get_case, list_cases
    from app.models import CatalogCaseModel, CatalogModel

    if args.action == "list":
        cases = list_cases(args.family) if args.family else list(CASES)
        _emit(args, CatalogModel(cases=[CatalogCaseModel(**case_to_dict(c)) for c in cases]),
              "\n".join(f"{c.id}: {'; '.join(c.constraints)}" for c in cases))
    elif args.action == "show":
        case = get_case(args.case_id)
        reductions = [r for r in NOTE_REDUCTIONS if r.startswith(case.id + " ")]
        text = case.render() + "".join(f"\n  reduction: {r}" for r in reductions)
        _emit(args, CatalogCaseModel(**case_to_dict(case)), text)
    else:
        print(CatalogModel(**export_catalog()).to_json())
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    settings = get_settings()
    uvicorn.run("main:app", host=args.host or settings.host, port=args.port or settings.port)
    return EXIT_OK


# ==================== PARSER ====================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable report")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", type=float, default=None, help="oracle tolerance")
    common.add_argument("--budget", type=int, default=None, help="rewrite depth budget")
    common.add_argument("--assume", action="append", default=[], help='sign assumption, e.g. "x > 1"')
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="dce", description="Conservation laws of diffusion-convection equations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="check D_tF + D_xG = 0 on solutions")
    p.add_argument("--eq", required=True)
    p.add_argument("--cv", required=True)
    p.add_argument("--oracle", type=int, default=0, metavar="N", help="also evaluate at N random jet points")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("classify", parents=[common], help="match a g = 1 equation against the catalog")
    p.add_argument("--eq", required=True)
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("transform", parents=[common], help="apply an equivalence element")
    p.add_argument("--eq", required=True)
    p.add_argument("--tr", required=True)
    p.add_argument("--cv")
    p.set_defaults(handler=cmd_transform)

    p = sub.add_parser("simulate", parents=[common], help="integrate numerically and monitor int F dx")
    p.add_argument("--eq", required=True)
    p.add_argument("--cv", required=True)
    p.add_argument("--u0", help="file with a 'u0 = ...' line (default: the equation file)")
    p.add_argument("--x-lo", type=float, default=0.0)
    p.add_argument("--x-hi", type=float, default=1.0)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--boundary", choices=["periodic", "dirichlet", "noflux"], default="periodic")
    p.add_argument("--values", type=float, nargs=2, default=[0.0, 0.0], metavar=("LEFT", "RIGHT"))
    p.add_argument("--t-end", type=float, default=0.01)
    p.add_argument("--safety", type=float, default=0.4)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--drift-tol", type=float, default=None)
    p.add_argument("--csv")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("catalog", parents=[common], help="inspect the classification lists")
    p.add_argument("action", choices=["list", "show", "export"])
    p.add_argument("case_id", nargs="?")
    p.add_argument("--family", type=int, choices=[3, 4])
    p.set_defaults(handler=cmd_catalog)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP API")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(handler=cmd_serve)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_INPUT if error.code else EXIT_OK
    if args.command == "catalog" and args.action == "show" and not args.case_id:
        print("catalog show needs a case id", file=sys.stderr)
        return EXIT_INPUT

    settings = get_settings().override(seed=args.seed, tolerance=args.tol, rewrite_depth=args.budget)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else settings.log_level
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    use_settings(settings)
    try:
        return args.handler(args)
    except (DCEError, OSError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        use_settings(None)


def main() -> None:
    sys.exit(run())
