"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 partial failure (an
incomplete cell or a verification mismatch).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .casegen import Case, CaseSet, calibration_report
from .errors import ConfigError, HarnessError
from .jsonl import read_jsonl, write_jsonl
from .regimes import DecisionRecord
from .runner import (
    ExperimentConfig,
    ablation_text,
    build_case_sets,
    derive_reports,
    run_ablations,
    run_experiment,
    run_sensitivity,
    verify_run,
)
from .scoring import TAU_GRID, compute_cdl, compute_diu, model_only, score_deferral

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

log = logging.getLogger("govharness")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 42)")
    common.add_argument("--n", type=int, help="cases per condition (default 300)")
    common.add_argument("--adapter", help="scripted[:profile] or remote[:url]")
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--conditions", type=_str_list, help="comma list from S0,S1,S2,S3")
    grid.add_argument("--regimes", type=_str_list, help="comma list from R1,R2")
    grid.add_argument("--ablation", help="control or one of A1..A4")
    grid.add_argument("--bootstrap-b", type=int, dest="bootstrap_b")
    grid.add_argument("--tau", type=float)
    grid.add_argument("--fvs-q", type=float, dest="fvs_q")
    grid.add_argument("--iota-target", type=float, dest="iota_target")
    grid.add_argument("--esd-seeds", type=_int_list, dest="esd_seeds", help="three comma-separated seeds")
    grid.add_argument("--no-interventions", action="store_false", dest="interventions", default=None)
    grid.add_argument("--workers", type=int, dest="max_workers")

    p = argparse.ArgumentParser(prog="govharness", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"govharness {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common, grid], help="write case sets and calibration moments")
    sub.add_parser("run", parents=[common, grid], help="run the regime x condition grid")
    ab = sub.add_parser("ablate", parents=[common, grid], help="control and single-ablation rows for R2")
    ab.add_argument("--which", type=_str_list, default=("control", "A1", "A2", "A3", "A4"))
    sens = sub.add_parser("sensitivity", parents=[common, grid], help="joint generation-parameter sweep")
    sens.add_argument("--levels", type=lambda s: tuple(float(x) for x in s.split(",")), default=None)
    sc = sub.add_parser("score", parents=[common], help="score deferrals in a records file")
    sc.add_argument("records", type=Path)
    sc.add_argument("--cases", type=Path, help="cases file, enables case-detail matching")
    sc.add_argument("--tau", type=float, default=None)
    sub.add_parser("report", parents=[common], help="re-derive reports from a run directory")
    sub.add_parser("verify", parents=[common], help="re-derive reports and check the manifest digests")
    return p


_GRID_KEYS = (
    "conditions", "regimes", "ablation", "bootstrap_b", "tau", "fvs_q", "iota_target", "esd_seeds",
    "interventions", "max_workers",
)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, Any] = {"seed": args.seed, "n": args.n, "adapter": args.adapter, "out_dir": args.out}
    for key in _GRID_KEYS:
        overrides[key] = getattr(args, key, None)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.from_mapping(overrides)


def _cmd_generate(args: argparse.Namespace) -> int:
    config = build_config(args)
    out = Path(config.out_dir)
    sets: dict[str, CaseSet] = build_case_sets(config)
    for cond, cases in sets.items():
        path = write_jsonl(out / "cases" / f"{cond}.jsonl", cases.to_records())
        print(f"{cond}: {len(cases)} cases -> {path}")
    report = calibration_report(sets[config.conditions[0]])
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "reports" / "calibration.csv").write_text(report.to_csv())
    p = report.pooled
    print(
        f"pooled: risk {p.risk_mean:.3f}  completeness {p.completeness_mean:.3f}  flags {p.flag_mean:.3f}  "
        f"gt_determinacy {p.gt_determinacy:.3f}  pregate {p.pregate_rate:.3f}"
    )
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    bundle = run_experiment(config)
    for cond, table in bundle.msup.items():
        print(f"== {cond}")
        print(table.to_text())
    for cell in bundle.cells:
        if not cell.complete:
            print(f"incomplete cell: {cell.regime}/{cell.condition}", file=sys.stderr)
    print(f"bundle digest {bundle.manifest['bundle_digest']}")
    return EXIT_OK if bundle.complete else EXIT_PARTIAL


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = build_config(args)
    rows = run_ablations(config, args.which)
    print(ablation_text(rows), end="")
    return EXIT_OK if all(r["complete"] for r in rows) else EXIT_PARTIAL


def _cmd_sensitivity(args: argparse.Namespace) -> int:
    config = build_config(args)
    rows = run_sensitivity(config, args.levels) if args.levels else run_sensitivity(config)
    print(f"{'level':>6}  {'gt_det':>7}  {'delta':>7}  {'gates':>6}")
    for r in rows:
        print(f"{r['level']:+6.2f}  {r['gt_determinacy']:7.3f}  {r['delta_gt_determinacy']:+7.3f}  {r['gate_activation']:6.3f}")
    return EXIT_OK


def _cmd_score(args: argparse.Namespace) -> int:
    tau = args.tau if args.tau is not None else 0.3
    if not 0.0 < tau < 1.0:
        raise ConfigError("tau must lie in (0, 1)")
    cases: dict[str, Case] = {}
    if args.cases:
        cases = {d["id"]: Case.from_dict(d) for d in read_jsonl(args.cases)}
    records = [DecisionRecord.from_dict(d) for d in read_jsonl(args.records)]
    scores = [score_deferral(r, tau, case=cases.get(r.case_id)) for r in records if r.decision.value == "DEFER"]
    if args.out:
        write_jsonl(args.out, (s.to_dict() for s in scores))
    llm = model_only(scores)
    summary = {
        "records": len(records),
        "deferrals": len(scores),
        "cdl": compute_cdl(scores, tau),
        "diu": compute_diu(scores),
        "cdl_llm": compute_cdl(llm, tau),
        "diu_llm": compute_diu(llm),
        "tau_sweep": {str(t): compute_cdl(scores, t) for t in TAU_GRID},
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _run_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or "runs/default")
    if not (out / "manifest.json").exists():
        raise ConfigError(f"{out} has no manifest.json; is it a run directory?")
    return out


def _cmd_report(args: argparse.Namespace) -> int:
    out = _run_dir(args)
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    config = ExperimentConfig.from_mapping(cfg | {"out_dir": str(out)})
    cells, msup, written = derive_reports(out, config)
    for cond, table in msup.items():
        print(f"== {cond}")
        print(table.to_text())
    for path in sorted(str(p) for p in written.values()):
        log.info("wrote %s", path)
    return EXIT_OK if all(c.complete for c in cells) else EXIT_PARTIAL


def _cmd_verify(args: argparse.Namespace) -> int:
    ok, problems = verify_run(_run_dir(args))
    for p in problems:
        print(p, file=sys.stderr)
    print("verified" if ok else f"{len(problems)} problem(s)")
    return EXIT_OK if ok else EXIT_PARTIAL


COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "sensitivity": _cmd_sensitivity,
    "score": _cmd_score,
    "report": _cmd_report,
    "verify": _cmd_verify,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HarnessError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
