"""Command-line front end: ``qss run``, ``qss bounds`` and ``qss sweep``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 internal
invariant violation.

Repetition k of a batch with master seed S runs with the 64-bit seed drawn
from ``numpy.random.SeedSequence([S, k])`` (see ``rep_seed``), so any single
repetition can be replayed on its own.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analysis
from .adversary import AttackKind, AttackStrategy
from .analysis import OverlapParams
from .errors import ConfigError, IncompleteError, QSSError, StateError
from .protocol import ProtocolConfig, run

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4

CONFIG_KEYS = ("m", "n", "N", "mode", "seed", "sample_fraction", "min_samples", "epsilon_r", "filter_enabled", "pauli_set", "decoy_counts")
RUN_KEYS = CONFIG_KEYS + ("reps", "attack", "i0", "i1", "x", "q", "z", "force_last", "jobs")
CSV_HEADER = ("param", "value", "runs", "detection_rate", "error_rate", "predicted_error_lb", "attacker_accuracy", "key_agreement")


def rep_seed(master: int, k: int) -> int:
    """Seed of repetition k: first 64 bits of SeedSequence([master, k])."""
    return int(np.random.SeedSequence([int(master), int(k)]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class RunSpec:
    config: ProtocolConfig
    attack: AttackStrategy | None
    repetitions: int = 1
    out: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")


def _one(spec_cfg: dict, attack: AttackStrategy | None, k: int):
    cfg = ProtocolConfig.from_dict({**spec_cfg, "seed": rep_seed(spec_cfg["seed"], k)})
    return run(cfg, attack)


def execute(spec: RunSpec) -> list:
    """All repetitions of a spec, in repetition order whatever the worker count."""
    base = spec.config.to_dict()
    ks = range(spec.repetitions)
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            return list(pool.map(_one, [base] * len(ks), [spec.attack] * len(ks), ks))
    return [_one(base, spec.attack, k) for k in ks]


def _rep_summary(k: int, tr) -> dict:
    d = {
        "rep": k,
        "seed": tr.config.seed,
        "aborted": tr.aborted,
        "abort_step": tr.abort_step,
        "abort_cause": tr.abort_cause,
        "key_length": len(tr.group_key),
        "key_agreement": (tr.group_key == tr.predicted_key) if not tr.aborted else None,
        "checked": list(tr.checked_stats(analysis.BOB_STAGES)),
    }
    if tr.eve is not None:
        d["eve"] = tr.eve.to_dict()
    return d


def run_report(spec: RunSpec) -> dict:
    transcripts = execute(spec)
    summary = analysis.empirical_report(transcripts)
    return {
        "command": "run",
        "config": spec.config.to_dict(),
        "attack": None if spec.attack is None else spec.attack.to_dict(),
        "repetitions": spec.repetitions,
        "seed_scheme": "rep k uses SeedSequence([seed, k]).generate_state(1, uint64)[0]",
        "detection": summary.detection_rate,
        "key_agreement": summary.key_agreement_rate,
        "attacker_accuracy": summary.attacker_accuracy,
        "summary": summary.to_dict(),
        "runs": [_rep_summary(k, t) for k, t in enumerate(transcripts)],
    }


# --------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_protocol_flags(p: argparse.ArgumentParser) -> None:
    # every default is None so a --config file can fill it in; flags win
    p.add_argument("--config", help="JSON file of settings mirroring these flags")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--mode", choices=["original", "improved"])
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-fraction", dest="sample_fraction", type=float)
    p.add_argument("--min-samples", dest="min_samples", type=int)
    p.add_argument("--epsilon-r", dest="epsilon_r", type=float)
    p.add_argument("--filter", dest="filter_enabled", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--pauli-set", dest="pauli_set", choices=["four", "three012", "three013"])
    p.add_argument("--decoy-counts", dest="decoy_counts", type=_int_list)
    p.add_argument("--reps", type=int)
    p.add_argument("--attack", choices=["none"] + [k.value for k in AttackKind])
    p.add_argument("--i0", type=int)
    p.add_argument("--i1", help="interception point: Alice index or 'bobs'")
    p.add_argument("--x", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--z", type=float)
    p.add_argument("--force-last", dest="force_last", action="store_true", default=None)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="report path (default: stdout)")


def _merged(args) -> dict:
    vals: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                vals = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(vals, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(vals) - set(RUN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in RUN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            vals[key] = v
    return vals


def _attack_from(vals: dict) -> AttackStrategy | None:
    kind = vals.get("attack") or "none"
    if kind == "none":
        return None
    i1 = vals.get("i1", "bobs")
    if isinstance(i1, str) and i1 != "bobs":
        try:
            i1 = int(i1)
        except ValueError:
            raise ConfigError(f"--i1 must be an Alice index or 'bobs', got {i1!r}") from None
    params = None
    if kind == AttackKind.FAKE_SIGNAL_GENERAL.value:
        x, q, z = (vals.get(k) for k in ("x", "q", "z"))
        op = OverlapParams.epr() if x is None and q is None and z is None else OverlapParams(x or 0.0, q or 0.0, 0.5 if z is None else z)
        params = op.realize()
    return AttackStrategy(AttackKind(kind), int(vals.get("i0", 1)), i1, params, bool(vals.get("force_last", False)))


def spec_from(vals: dict, out: str | None = None) -> RunSpec:
    cfg = ProtocolConfig.from_dict({k: vals[k] for k in CONFIG_KEYS if k in vals})
    return RunSpec(cfg, _attack_from(vals), int(vals.get("reps", 1)), out, int(vals.get("jobs", 1)))


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_run(args) -> int:
    vals = _merged(args)
    spec = spec_from(vals, args.out)
    _emit(_dump(run_report(spec)), spec.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    report: dict = {"command": "bounds"}
    if args.epr or not any(v is not None for v in (args.x, args.q, args.z)):
        p = OverlapParams.epr()
    else:
        p = OverlapParams(args.x or 0.0, args.q or 0.0, 0.5 if args.z is None else args.z)
    rep = analysis.bound_report(p)
    report["bounds"] = rep.to_dict()
    lines = [
        f"x={p.x:.6f} q={p.q:.6f} z={p.z:.6f} t={p.t:.6f}",
        f"p1={rep.p1:.6f} p2={rep.p2:.6f} sum={rep.overlap_sum_direct:.6f}",
        f"sum_formula={rep.overlap_sum_formula:.6f} formula_mismatch={rep.formula_mismatch}",
    ]
    if args.minimize:
        best, value = analysis.minimize_overlap(seed=args.seed)
        report["minimum"] = {"x": best.x, "q": best.q, "z": best.z, "value": value}
        lines.append(f"argmin x={best.x:.6f} q={best.q:.6f} z={best.z:.6f} min={value:.6f}")
    print("\n".join(lines))
    if args.out:
        _emit(_dump(report), args.out)
    return EXIT_OK


SWEEP_PARAMS = {"m": int, "n": int, "sample-fraction": float, "attack": str}


def cmd_sweep(args) -> int:
    raw = [v.strip() for v in (args.values or "").split(",") if v.strip()]
    if not raw:
        raise ConfigError("sweep needs a non-empty --values list")
    conv = SWEEP_PARAMS[args.param]
    try:
        values = [conv(v) for v in raw]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value: {exc}") from None
    base = _merged(args)
    key = args.param.replace("-", "_")
    rows, cells = [], []
    for v in values:
        vals = {**base, key: v}
        spec = spec_from(vals)
        summary = analysis.empirical_report(execute(spec))
        m = spec.config.m
        row = {
            "param": args.param,
            "value": v,
            "runs": summary.runs,
            "detection_rate": summary.detection_rate,
            "error_rate": summary.pooled_error_rate,
            "predicted_error_lb": analysis.analytic_predictions(m)["error_rate_lb"],
            "attacker_accuracy": summary.attacker_accuracy,
            "key_agreement": summary.key_agreement_rate,
        }
        rows.append(row)
        cells.append({"config": spec.config.to_dict(), "attack": None if spec.attack is None else spec.attack.to_dict(), "summary": summary.to_dict()})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(buf.getvalue())
    report = {"command": "sweep", "param": args.param, "values": values, "rows": rows, "cells": cells}
    if args.out:
        _emit(_dump(report), args.out)
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qss", description="Quantum secret sharing simulator and bound calculator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="seeded protocol runs, honest or attacked")
    _add_protocol_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_b = sub.add_parser("bounds", help="discrimination bounds and overlap sums")
    p_b.add_argument("--epr", action="store_true", help="use the maximally entangled point")
    p_b.add_argument("--x", type=float)
    p_b.add_argument("--q", type=float)
    p_b.add_argument("--z", type=float)
    p_b.add_argument("--minimize", action="store_true")
    p_b.add_argument("--seed", type=int)
    p_b.add_argument("--out")
    p_b.set_defaults(func=cmd_bounds)

    p_s = sub.add_parser("sweep", help="one table row per parameter value")
    _add_protocol_flags(p_s)
    p_s.add_argument("--param", choices=sorted(SWEEP_PARAMS), required=True)
    p_s.add_argument("--values", help="comma-separated values")
    p_s.add_argument("--csv", help="CSV table path")
    p_s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (StateError, IncompleteError, AssertionError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (QSSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
