"""Instance ingestion, the dispatch/pricing pipeline, and report rendering.

Input files are JSON; regions can be given as half-space ``bounds`` or as
sampled ``vertices`` (converted on load). Reports render as a fixed-width
table, JSON, or sectioned CSV, and rendering is deterministic byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from typing import Any

from . import dispatch as dispatch_mod
from . import pricing as pricing_mod
from .model import (
    CostCoefficients,
    DemandBid,
    GeneratorSpec,
    MarketInstance,
    ValidationError,
    validate_instance,
)
from .qpsolver import NumericalFailure
from .region import DegenerateInput, HalfSpace, OperatingRegion, halfspaces_from_vertices

__all__ = [
    "ParseError",
    "RunConfig",
    "ValidationError",
    "console_entry",
    "instance_to_mapping",
    "main",
    "parse_instance",
    "render_instance",
    "render_report",
    "run_pipeline",
]

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_INPUT_ERROR = 2
EXIT_SOLVER_FAILURE = 3


class ParseError(ValueError):
    """Malformed input file; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    input_path: str
    command: str  # dispatch | price | run | region
    mode: str = "per-vector"
    output_format: str = "table"  # table | json | csv
    tolerance: float = 1e-8
    output_path: str | None = None


def _require(obj: dict, key: str, path: str) -> Any:
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: expected an object")
    if key not in obj:
        raise ParseError(f"{path}.{key}: missing required field")
    return obj[key]


def _number(obj: dict, key: str, path: str) -> float:
    value = _require(obj, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{path}.{key}: expected a number, got {value!r}")
    return float(value)


def _string(obj: dict, key: str, path: str) -> str:
    value = _require(obj, key, path)
    if not isinstance(value, str):
        raise ParseError(f"{path}.{key}: expected a string, got {value!r}")
    return value


def _parse_region(obj: Any, path: str) -> OperatingRegion:
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: expected an object")
    if ("bounds" in obj) == ("vertices" in obj):
        raise ParseError(f"{path}: give exactly one of 'bounds' or 'vertices'")
    if "bounds" in obj:
        bounds = obj["bounds"]
        if not isinstance(bounds, list) or not bounds:
            raise ParseError(f"{path}.bounds: expected a non-empty list")
        halfspaces = []
        for k, entry in enumerate(bounds):
            sub = f"{path}.bounds[{k}]"
            kp = _number(entry, "kp", sub)
            kh = _number(entry, "kh", sub)
            k0 = _number(entry, "k0", sub)
            try:
                halfspaces.append(HalfSpace(kp=kp, kh=kh, k0=k0))
            except ValueError as exc:
                raise ParseError(f"{sub}: {exc}") from exc
        return OperatingRegion(bounds=tuple(halfspaces))
    vertices = obj["vertices"]
    if not isinstance(vertices, list):
        raise ParseError(f"{path}.vertices: expected a list of [p, h] pairs")
    points = []
    for k, entry in enumerate(vertices):
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in entry)
        ):
            raise ParseError(f"{path}.vertices[{k}]: expected a [p, h] number pair")
        points.append((float(entry[0]), float(entry[1])))
    try:
        return halfspaces_from_vertices(points)
    except DegenerateInput as exc:
        raise ParseError(f"{path}.vertices: {exc}") from exc


def _parse_demand(obj: Any, vector: str, path: str) -> DemandBid:
    return DemandBid(
        id=_string(obj, "id", path),
        vector=vector,
        max_quantity=_number(obj, "max_demand_mwh", path),
        bid=_number(obj, "bid_usd_per_mwh", path),
    )


def parse_instance(text: bytes | str) -> MarketInstance:
    """Parse and validate an instance file; raises ParseError / ValidationError."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError("top level: expected an object")

    label = raw.get("label", "")
    if not isinstance(label, str):
        raise ParseError(f"label: expected a string, got {label!r}")

    generators = []
    gen_list = _require(raw, "generators", "top level")
    if not isinstance(gen_list, list):
        raise ParseError("generators: expected a list")
    for k, entry in enumerate(gen_list):
        path = f"generators[{k}]"
        cost_obj = _require(entry, "cost", path)
        cost = CostCoefficients(
            c2p=_number(cost_obj, "c2p", f"{path}.cost"),
            c1p=_number(cost_obj, "c1p", f"{path}.cost"),
            c2h=_number(cost_obj, "c2h", f"{path}.cost"),
            c1h=_number(cost_obj, "c1h", f"{path}.cost"),
            chp=_number(cost_obj, "chp", f"{path}.cost"),
            c0=_number(cost_obj, "c0", f"{path}.cost"),
        )
        region = _parse_region(_require(entry, "region", path), f"{path}.region")
        generators.append(GeneratorSpec(id=_string(entry, "id", path), cost=cost, region=region))

    electric = []
    for k, entry in enumerate(raw.get("electric_demands", [])):
        electric.append(_parse_demand(entry, "electricity", f"electric_demands[{k}]"))
    heat = []
    for k, entry in enumerate(raw.get("heat_demands", [])):
        heat.append(_parse_demand(entry, "heat", f"heat_demands[{k}]"))

    inst = MarketInstance(
        generators=tuple(generators),
        electric_demands=tuple(electric),
        heat_demands=tuple(heat),
        label=label,
    )
    violations = validate_instance(inst)
    if violations:
        raise ValidationError(violations)
    return inst


def instance_to_mapping(inst: MarketInstance) -> dict:
    """Instance as the input JSON schema (bounds form)."""
    return {
        "label": inst.label,
        "generators": [
            {
                "id": gen.id,
                "cost": {
                    "c2p": gen.cost.c2p,
                    "c1p": gen.cost.c1p,
                    "c2h": gen.cost.c2h,
                    "c1h": gen.cost.c1h,
                    "chp": gen.cost.chp,
                    "c0": gen.cost.c0,
                },
                "region": {
                    "bounds": [
                        {"kp": hs.kp, "kh": hs.kh, "k0": hs.k0} for hs in gen.region.bounds
                    ]
                },
            }
            for gen in inst.generators
        ],
        "electric_demands": [
            {"id": b.id, "max_demand_mwh": b.max_quantity, "bid_usd_per_mwh": b.bid}
            for b in inst.electric_demands
        ],
        "heat_demands": [
            {"id": b.id, "max_demand_mwh": b.max_quantity, "bid_usd_per_mwh": b.bid}
            for b in inst.heat_demands
        ],
    }


def render_instance(inst: MarketInstance) -> bytes:
    return (json.dumps(instance_to_mapping(inst), indent=2) + "\n").encode("utf-8")


def _dispatch_payload(inst: MarketInstance, sol, diag) -> dict:
    demands = []
    for bid in inst.electric_demands:
        q = sol.electric_demand[bid.id]
        demands.append(
            {
                "id": bid.id,
                "vector": "electricity",
                "quantity_mwh": q,
                "max_demand_mwh": bid.max_quantity,
                "bid_usd_per_mwh": bid.bid,
                "surplus_usd": q * (bid.bid - sol.price_electricity),
                "dispatched": bid.id in sol.dispatched_electric_demands,
            }
        )
    for bid in inst.heat_demands:
        q = sol.heat_demand[bid.id]
        demands.append(
            {
                "id": bid.id,
                "vector": "heat",
                "quantity_mwh": q,
                "max_demand_mwh": bid.max_quantity,
                "bid_usd_per_mwh": bid.bid,
                "surplus_usd": q * (bid.bid - sol.price_heat),
                "dispatched": bid.id in sol.dispatched_heat_demands,
            }
        )
    generators = []
    surplus = {(row.agent, row.vector): row.surplus for row in sol.surplus_rows if row.side == "generation"}
    for gen in inst.generators:
        p, h = sol.generation(gen.id)
        generators.append(
            {
                "id": gen.id,
                "kind": gen.kind,
                "p_mwh": p,
                "h_mwh": h,
                "electric_surplus_usd": surplus.get((gen.id, "electricity"), 0.0),
                "heat_surplus_usd": surplus.get((gen.id, "heat"), 0.0),
            }
        )
    recovery = []
    for rec in diag.generators:
        for row in (rec.electric, rec.heat):
            if row is None:
                continue
            recovery.append(
                {
                    "generator": row.generator,
                    "vector": row.vector,
                    "marginal_cost_usd_per_mwh": row.marginal_cost,
                    "price_usd_per_mwh": row.price,
                    "gap_usd_per_mwh": row.gap,
                    "recovered": row.recovered,
                    "active_bounds": list(rec.active_bounds),
                    "bound_classes": {str(l): cls for l, cls in rec.bound_classes.items()},
                }
            )
    return {
        "label": sol.label,
        "lambda": sol.price_electricity,
        "gamma": sol.price_heat,
        "objective_welfare": sol.objective_welfare,
        "settlement_welfare": sol.settlement_welfare,
        "demands": demands,
        "generators": generators,
        "boundary_duals": [
            {"generator": gid, "bound": l, "mu": mu}
            for (gid, l), mu in sorted(sol.boundary_duals.items())
        ],
        "recovery": recovery,
        "cost_recovery_failed": diag.any_failure,
    }


def _pricing_payload(pricing, settlement) -> dict:
    uplifts = [
        {
            "id": row.agent,
            "side": row.side,
            "vector": row.vector,
            "quantity_mwh": row.quantity,
            "uplift_paid_usd_per_mwh": row.uplift_paid,
            "uplift_charged_usd_per_mwh": row.uplift_charged,
            "money_flow_usd": row.money_flow,
            "surplus_usd": row.surplus,
        }
        for row in settlement.rows
    ]
    return {
        "mode": pricing.mode,
        "lambda_pm": pricing.price_electricity,
        "gamma_pm": pricing.price_heat,
        "uplift_objective": pricing.uplift_objective,
        "settlement_welfare": pricing.settlement_welfare,
        "uplifts": uplifts,
        "totals": [
            {
                "vector": t.vector,
                "collected_usd": t.collected,
                "disbursed_usd": t.disbursed,
                "residual_usd": t.residual,
            }
            for t in settlement.totals
        ],
        "neutrality_residual_electricity": settlement.neutrality_electricity,
        "neutrality_residual_heat": settlement.neutrality_heat,
        "recovery_before": [
            {"generator": g, "vector": v, "recovered": ok}
            for (g, v), ok in sorted(settlement.recovery_before.items())
        ],
        "recovery_after": [
            {"generator": g, "vector": v, "recovered": ok}
            for (g, v), ok in sorted(settlement.recovery_after.items())
        ],
    }


def _money(value: float) -> str:
    # Avoid the "-0.00" artifact in fixed tables.
    if abs(value) < 0.005:
        value = 0.0
    return f"{value:.2f}"


def _render_table(payload: dict) -> str:
    lines: list[str] = []
    label = payload.get("label", "")
    lines.append(f"scenario: {label}" if label else "scenario: (unnamed)")
    lines.append(
        f"prices [$/MWh]: lambda = {_money(payload['lambda'])}   gamma = {_money(payload['gamma'])}"
    )
    lines.append(
        f"welfare [$]: objective = {_money(payload['objective_welfare'])}   "
        f"settlement = {_money(payload['settlement_welfare'])}"
    )
    lines.append("")
    lines.append(f"{'user':<12}{'vector':<14}{'demand':>12}{'bid':>10}{'surplus':>12}")
    for row in payload["demands"]:
        lines.append(
            f"{row['id']:<12}{row['vector']:<14}{row['quantity_mwh']:>12.2f}"
            f"{row['bid_usd_per_mwh']:>10.2f}{_money(row['surplus_usd']):>12}"
        )
    lines.append("")
    lines.append(f"{'generator':<12}{'p [MWh]':>10}{'h [MWh]':>10}{'e-surplus':>12}{'h-surplus':>12}")
    for row in payload["generators"]:
        lines.append(
            f"{row['id']:<12}{row['p_mwh']:>10.2f}{row['h_mwh']:>10.2f}"
            f"{_money(row['electric_surplus_usd']):>12}{_money(row['heat_surplus_usd']):>12}"
        )
    if payload["recovery"]:
        lines.append("")
        lines.append(f"{'generator':<12}{'vector':<14}{'marg.cost':>10}{'price':>10}{'gap':>10}  recovered")
        for row in payload["recovery"]:
            lines.append(
                f"{row['generator']:<12}{row['vector']:<14}"
                f"{row['marginal_cost_usd_per_mwh']:>10.2f}{row['price_usd_per_mwh']:>10.2f}"
                f"{row['gap_usd_per_mwh']:>10.2f}  {'yes' if row['recovered'] else 'NO'}"
            )
    pricing = payload.get("pricing")
    if payload.get("pricing_applied") is not None:
        lines.append("")
        lines.append(f"pricing_applied: {'true' if payload['pricing_applied'] else 'false'}")
    if pricing is not None:
        lines.append(
            f"corrected prices [$/MWh] ({pricing['mode']}): "
            f"lambda_pm = {_money(pricing['lambda_pm'])}   gamma_pm = {_money(pricing['gamma_pm'])}"
        )
        lines.append(
            f"uplift bill = {_money(pricing['uplift_objective'])}   "
            f"settlement welfare = {_money(pricing['settlement_welfare'])}"
        )
        lines.append("")
        lines.append(
            f"{'agent':<12}{'side':<12}{'vector':<14}{'quantity':>10}{'paid':>10}{'charged':>10}{'surplus':>12}"
        )
        for row in pricing["uplifts"]:
            lines.append(
                f"{row['id']:<12}{row['side']:<12}{row['vector']:<14}{row['quantity_mwh']:>10.2f}"
                f"{_money(row['uplift_paid_usd_per_mwh']):>10}{_money(row['uplift_charged_usd_per_mwh']):>10}"
                f"{_money(row['surplus_usd']):>12}"
            )
    return "\n".join(lines) + "\n"


def _render_csv(payload: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")

    out.write("# prices\n")
    writer.writerow(["field", "value"])
    writer.writerow(["label", payload.get("label", "")])
    writer.writerow(["lambda", repr(payload["lambda"])])
    writer.writerow(["gamma", repr(payload["gamma"])])
    writer.writerow(["objective_welfare", repr(payload["objective_welfare"])])
    writer.writerow(["settlement_welfare", repr(payload["settlement_welfare"])])
    if payload.get("pricing_applied") is not None:
        writer.writerow(["pricing_applied", str(payload["pricing_applied"]).lower()])

    out.write("# demands\n")
    writer.writerow(["id", "vector", "quantity_mwh", "bid_usd_per_mwh", "surplus_usd"])
    for row in payload["demands"]:
        writer.writerow(
            [row["id"], row["vector"], repr(row["quantity_mwh"]), repr(row["bid_usd_per_mwh"]), repr(row["surplus_usd"])]
        )

    out.write("# generators\n")
    writer.writerow(["id", "kind", "p_mwh", "h_mwh", "electric_surplus_usd", "heat_surplus_usd"])
    for row in payload["generators"]:
        writer.writerow(
            [
                row["id"], row["kind"], repr(row["p_mwh"]), repr(row["h_mwh"]),
                repr(row["electric_surplus_usd"]), repr(row["heat_surplus_usd"]),
            ]
        )

    out.write("# recovery\n")
    writer.writerow(["generator", "vector", "marginal_cost", "price", "gap", "recovered"])
    for row in payload["recovery"]:
        writer.writerow(
            [
                row["generator"], row["vector"], repr(row["marginal_cost_usd_per_mwh"]),
                repr(row["price_usd_per_mwh"]), repr(row["gap_usd_per_mwh"]), str(row["recovered"]).lower(),
            ]
        )

    pricing = payload.get("pricing")
    if pricing is not None:
        out.write("# pricing\n")
        writer.writerow(["field", "value"])
        writer.writerow(["mode", pricing["mode"]])
        writer.writerow(["lambda_pm", repr(pricing["lambda_pm"])])
        writer.writerow(["gamma_pm", repr(pricing["gamma_pm"])])
        writer.writerow(["uplift_objective", repr(pricing["uplift_objective"])])
        writer.writerow(["settlement_welfare", repr(pricing["settlement_welfare"])])
        out.write("# uplifts\n")
        writer.writerow(
            ["id", "side", "vector", "quantity_mwh", "uplift_paid_usd_per_mwh",
             "uplift_charged_usd_per_mwh", "money_flow_usd", "surplus_usd"]
        )
        for row in pricing["uplifts"]:
            writer.writerow(
                [
                    row["id"], row["side"], row["vector"], repr(row["quantity_mwh"]),
                    repr(row["uplift_paid_usd_per_mwh"]), repr(row["uplift_charged_usd_per_mwh"]),
                    repr(row["money_flow_usd"]), repr(row["surplus_usd"]),
                ]
            )
    return out.getvalue()


def render_report(payload: dict, output_format: str = "table") -> bytes:
    """Render a pipeline payload deterministically in the requested format."""
    if output_format == "json":
        return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")
    if output_format == "csv":
        return _render_csv(payload).encode("utf-8")
    if output_format == "table":
        return _render_table(payload).encode("utf-8")
    raise ValueError(f"unknown output format {output_format!r}")


def run_pipeline(cfg: RunConfig) -> tuple[int, bytes]:
    """Execute one command; returns (exit code, rendered report or error text)."""
    try:
        with open(cfg.input_path, "rb") as fh:
            text = fh.read()
    except OSError as exc:
        return EXIT_INPUT_ERROR, f"error: cannot read {cfg.input_path}: {exc}\n".encode()

    try:
        inst = parse_instance(text)
    except ParseError as exc:
        return EXIT_INPUT_ERROR, f"error: {exc}\n".encode()
    except ValidationError as exc:
        lines = "\n".join(f"  - {v}" for v in exc.violations)
        return EXIT_INPUT_ERROR, f"error: invalid instance:\n{lines}\n".encode()

    if cfg.command == "region":
        return EXIT_OK, render_instance(inst)

    try:
        sol = dispatch_mod.solve_ihpd(inst, tol=cfg.tolerance)
        diag = dispatch_mod.diagnose_recovery(inst, sol)
        payload = _dispatch_payload(inst, sol, diag)
        if cfg.command == "dispatch":
            pass
        elif cfg.command in ("price", "run"):
            apply_pricing = cfg.command == "price" or diag.any_failure
            payload["pricing_applied"] = apply_pricing
            if apply_pricing:
                pricing = pricing_mod.solve_pm(inst, sol, cfg.mode, tol=cfg.tolerance)
                settlement = pricing_mod.settle(inst, sol, pricing)
                payload["pricing"] = _pricing_payload(pricing, settlement)
        else:
            return EXIT_INPUT_ERROR, f"error: unknown command {cfg.command!r}\n".encode()
    except dispatch_mod.Infeasible as exc:
        return EXIT_INFEASIBLE, f"error: infeasible: {exc}\n".encode()
    except (dispatch_mod.SolverFailure, NumericalFailure) as exc:
        return EXIT_SOLVER_FAILURE, f"error: solver failure: {exc}\n".encode()

    return EXIT_OK, render_report(payload, cfg.output_format)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ihpm",
        description="Integrated heat and power market clearing: dispatch, prices, uplifts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_mode: bool) -> None:
        p.add_argument("file", help="instance JSON file")
        if with_mode:
            p.add_argument(
                "--mode", choices=["per-vector", "net"], default="per-vector",
                help="cost-recovery scope for generators",
            )
        p.add_argument("--format", choices=["table", "json", "csv"], default="table")
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")

    add_common(sub.add_parser("dispatch", help="solve the dispatch and report prices"), False)
    add_common(sub.add_parser("price", help="dispatch, then always run uplift pricing"), True)
    add_common(sub.add_parser("run", help="dispatch, price only if cost recovery fails"), True)

    region = sub.add_parser("region", help="region utilities")
    region_sub = region.add_subparsers(dest="region_command", required=True)
    conv = region_sub.add_parser(
        "vertices-to-halfspaces", help="rewrite vertex-form regions as half-spaces"
    )
    conv.add_argument("file", help="instance JSON file")
    conv.add_argument("--out", default=None, help="output path (default: stdout)")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "region":
        cfg = RunConfig(input_path=args.file, command="region", output_path=args.out)
    else:
        if args.tol <= 0:
            print("error: --tol must be positive", file=sys.stderr)
            return EXIT_INPUT_ERROR
        cfg = RunConfig(
            input_path=args.file,
            command=args.command,
            mode=getattr(args, "mode", "per-vector"),
            output_format=args.format,
            tolerance=args.tol,
            output_path=args.out,
        )
    code, payload = run_pipeline(cfg)
    if code == EXIT_OK:
        if cfg.output_path:
            with open(cfg.output_path, "wb") as fh:
                fh.write(payload)
        else:
            sys.stdout.buffer.write(payload)
            sys.stdout.buffer.flush()
    else:
        sys.stderr.buffer.write(payload)
        sys.stderr.buffer.flush()
    return code


def console_entry() -> None:
    sys.exit(main())
