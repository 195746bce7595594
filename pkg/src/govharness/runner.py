"""Experiment orchestration: the regime x condition grid, ablations, sensitivity.

``run_experiment`` writes raw logs first (cases, decision records, paired
intervention trials, audit trails) and then derives every report from those
files alone, so ``verify`` can recompute the whole bundle from disk.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .casegen import STRESS_TAGS, Case, CaseSet, GenParams, apply_stress, calibration_report, generate_cases
from .decisions import Decision
from .errors import ConfigError
from .interventions import run_esd, run_fsr, run_fvs
from .jsonl import dumps, read_jsonl, write_jsonl
from .models import DecisionModel, make_model
from .regimes import AblationConfig, DecisionRecord, run_cell
from .scoring import DEFAULT_TAU, TAU_GRID, RationaleScore, compute_cdl, compute_diu, model_only, score_deferral
from .stats import (
    LabelData,
    MSUPTable,
    PairedSample,
    RatioData,
    adjust_results,
    bootstrap_delta,
    confusion_matrix,
    accuracy,
    macro_f1,
    mcc_multiclass,
)

log = logging.getLogger(__name__)

REGIMES = ("R1", "R2")
ABLATIONS = ("control", "A1", "A2", "A3", "A4")
SENSITIVITY_LEVELS = (-0.20, -0.10, 0.0, 0.10, 0.20)
DEFAULT_ESD_SEEDS = (104_729, 224_737, 350_377)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 300
    seed: int = 42
    conditions: tuple[str, ...] = STRESS_TAGS
    regimes: tuple[str, ...] = REGIMES
    ablation: str = "control"
    adapter: str = "scripted:vacuous-compliant"
    adapter_params: Mapping[str, Any] = field(default_factory=dict)
    bootstrap_b: int = 10_000
    tau: float = DEFAULT_TAU
    out_dir: str = "runs/default"
    gen_params: Mapping[str, Any] = field(default_factory=dict)
    fvs_q: float = 0.20
    iota_target: float = 0.10
    esd_seeds: tuple[int, int, int] = DEFAULT_ESD_SEEDS
    interventions: bool = True
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        bad = set(self.conditions) - set(STRESS_TAGS)
        if bad:
            raise ConfigError(f"unknown conditions {sorted(bad)}")
        bad = set(self.regimes) - set(REGIMES)
        if bad:
            raise ConfigError(f"unknown regimes {sorted(bad)}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if len(self.esd_seeds) != 3 or len(set(self.esd_seeds)) != 3:
            raise ConfigError("esd_seeds must be three distinct integers")
        parse_ablation(self.ablation)
        self.params()

    def params(self) -> GenParams:
        return GenParams.from_mapping(self.gen_params) if self.gen_params else GenParams()

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["conditions"] = list(self.conditions)
        d["regimes"] = list(self.regimes)
        d["esd_seeds"] = list(self.esd_seeds)
        d["adapter_params"] = dict(self.adapter_params)
        d["gen_params"] = dict(self.gen_params)
        return d

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("max_workers")
        return hashlib.sha256(dumps(d).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        for key in ("conditions", "regimes", "esd_seeds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | Path, **overrides: Any) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data)


def parse_ablation(name: str) -> AblationConfig:
    """``control``, ``A1``..``A4``; combinations such as ``A1+A2`` are rejected."""
    parts = [p.strip() for p in name.replace(",", "+").split("+") if p.strip()]
    if len(parts) > 1:
        flags = {"A1": "disable_i6q", "A2": "agent_internal_cefl", "A3": "observable_entropy", "A4": "disable_defer"}
        unknown = [p for p in parts if p not in flags]
        if unknown:
            raise ConfigError(f"unknown ablation {unknown[0]!r}")
        return AblationConfig(**{flags[p]: True for p in parts})  # raises ConfigError
    return AblationConfig.from_name(parts[0] if parts else "control")


# -------------------------------------------------------------------- metrics


@dataclass
class MetricReport:
    regime: str
    condition: str
    ablation: str
    n: int
    n_deferrals: int
    cdl: float | None
    diu: float | None
    cdl_llm: float | None
    diu_llm: float | None
    gor: float
    pregate_rate: float
    fsr: float | None
    fvs: float | None
    esd: float | None
    e_exploit: float | None
    e_leakage: float | None
    e_integrity: float | None
    mcc: float | None
    f1: float | None
    acc: float | None
    mean_retries: float | None
    cefl_spread: float | None
    e3_pass_rate: float | None
    complete: bool = True

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


REPORT_FIELDS = tuple(f.name for f in dataclasses.fields(MetricReport))


def score_records(
    records: Sequence[DecisionRecord], cases: Mapping[str, Case], tau: float = DEFAULT_TAU
) -> list[RationaleScore]:
    return [score_deferral(r, tau, case=cases.get(r.case_id)) for r in records if r.decision is Decision.DEFER]


def _task_metrics(records: Sequence[DecisionRecord]) -> tuple[float | None, float | None, float | None]:
    rows = [r for r in records if r.ground_truth is not None]
    if not rows:
        return None, None, None
    m = confusion_matrix([r.ground_truth for r in rows], [r.decision for r in rows])
    return mcc_multiclass(m), macro_f1(m), accuracy(m)


def _mean(values: Iterable[float]) -> float | None:
    v = list(values)
    return float(np.mean(v)) if v else None


def cell_report(
    records: Sequence[DecisionRecord],
    cases: Mapping[str, Case],
    *,
    condition: str,
    tau: float = DEFAULT_TAU,
    fsr_pairs: Sequence[Mapping[str, Any]] | None = None,
    fvs_trials: Sequence[Mapping[str, Any]] | None = None,
    esd_probes: Sequence[Mapping[str, Any]] | None = None,
    complete: bool = True,
) -> MetricReport:
    regime = records[0].regime
    ablation = records[0].ablation
    scores = score_records(records, cases, tau)
    llm = model_only(scores)
    no_defer = ablation == "A4"
    mcc, f1, acc = _task_metrics(records)
    reached = [r for r in records if not r.pre_gated and regime == "R2"]
    spreads = [r.candidate_audit["spread"] for r in records if r.candidate_audit and "spread" in r.candidate_audit]
    commits = [r.commitment_audit for r in records if r.commitment_audit and r.commitment_audit.get("commitment")]
    esd_parts = _esd_parts(esd_probes) if esd_probes else None
    return MetricReport(
        regime=regime,
        condition=condition,
        ablation=ablation,
        n=len(records),
        n_deferrals=len(scores),
        cdl=None if no_defer else compute_cdl(scores, tau),
        diu=None if no_defer else compute_diu(scores),
        cdl_llm=None if no_defer else compute_cdl(llm, tau),
        diu_llm=None if no_defer else compute_diu(llm),
        gor=sum(r.mechanical for r in records) / len(records),
        pregate_rate=sum(r.pre_gated for r in records) / len(records),
        fsr=_mean(p["changed"] for p in fsr_pairs) if fsr_pairs else None,
        fvs=_mean(t["flagged"] for t in fvs_trials) if fvs_trials else None,
        esd=None if esd_parts is None else float(np.mean(esd_parts[:, 3])),
        e_exploit=None if esd_parts is None else float(np.mean(esd_parts[:, 0])),
        e_leakage=None if esd_parts is None else float(np.mean(esd_parts[:, 1])),
        e_integrity=None if esd_parts is None else float(np.mean(esd_parts[:, 2])),
        mcc=mcc,
        f1=f1,
        acc=acc,
        mean_retries=_mean(r.retries for r in reached) if regime == "R2" else None,
        cefl_spread=_mean(spreads),
        e3_pass_rate=_mean(bool(c.get("verified")) for c in commits),
        complete=complete,
    )


def _esd_parts(probes: Sequence[Mapping[str, Any]]) -> np.ndarray:
    """Per-case (exploit, leakage, integrity, mean) rows."""
    rows = [
        (float(p["exploited"]), float(p["leakage_hits"] > 0), float(p["integrity_failures"] > 0)) for p in probes
    ]
    a = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return np.column_stack([a, a.mean(axis=1)])


# --------------------------------------------------------------- paired stats


def _deferral_arrays(records: Sequence[DecisionRecord], cases: Mapping[str, Case], tau: float) -> tuple[np.ndarray, ...]:
    is_def = np.zeros(len(records))
    vac = np.zeros(len(records))
    gm = np.zeros(len(records))
    for i, r in enumerate(records):
        if r.decision is Decision.DEFER:
            s = score_deferral(r, tau, case=cases.get(r.case_id))
            is_def[i] = 1.0
            vac[i] = float(s.vacuous)
            gm[i] = s.geometric_mean
    return is_def, vac, gm


def msup_table(
    r1: Sequence[DecisionRecord],
    r2: Sequence[DecisionRecord],
    cases: Mapping[str, Case],
    *,
    b: int,
    seed: int,
    tau: float = DEFAULT_TAU,
    fsr: tuple[Sequence[Mapping[str, Any]], Sequence[Mapping[str, Any]]] | None = None,
    fvs: tuple[Sequence[Mapping[str, Any]], Sequence[Mapping[str, Any]]] | None = None,
    esd: tuple[Sequence[Mapping[str, Any]], Sequence[Mapping[str, Any]]] | None = None,
) -> MSUPTable:
    """Paired bootstrap of every metric for one condition, Holm-adjusted as a family."""
    ids = tuple(r.case_id for r in r1)
    if ids != tuple(r.case_id for r in r2):
        raise ConfigError("R1 and R2 records are not matched case by case")
    d1, v1, g1 = _deferral_arrays(r1, cases, tau)
    d2, v2, g2 = _deferral_arrays(r2, cases, tau)
    samples: list[tuple[str, PairedSample]] = [
        ("CDL", PairedSample(ids, RatioData(v1, d1), RatioData(v2, d2))),
        ("DIU", PairedSample(ids, RatioData(g1, d1), RatioData(g2, d2))),
        ("GOR", PairedSample(ids, RatioData.mean_of([x.mechanical for x in r1]), RatioData.mean_of([x.mechanical for x in r2]))),
    ]
    if fsr:
        a, c = fsr
        samples.append(("FSR", PairedSample(ids, RatioData.mean_of([p["changed"] for p in a]), RatioData.mean_of([p["changed"] for p in c]))))
    if fvs:
        a, c = fvs
        drop_ids = tuple(t["case_id"] for t in a)
        samples.append(("FVS", PairedSample(drop_ids, RatioData.mean_of([t["flagged"] for t in a]), RatioData.mean_of([t["flagged"] for t in c]))))
    if esd:
        a, c = esd
        samples.append(("ESD", PairedSample(ids, RatioData.mean_of(_esd_parts(a)[:, 3]), RatioData.mean_of(_esd_parts(c)[:, 3]))))
    truth = [x.ground_truth for x in r1]
    for metric, label in (("mcc", "MCC"), ("f1", "F1"), ("acc", "Acc")):
        samples.append(
            (
                label,
                PairedSample(
                    ids,
                    LabelData.from_decisions(truth, [x.decision for x in r1], metric),
                    LabelData.from_decisions(truth, [x.decision for x in r2], metric),
                ),
            )
        )
    results = [bootstrap_delta(s, b, seed) for _, s in samples]
    adjusted = adjust_results(results)
    return MSUPTable([(name, r) for (name, _), r in zip(samples, adjusted)])


# ------------------------------------------------------------------ file layout


def _cell_name(regime: str, condition: str, ablation: str = "control") -> str:
    return f"{regime}_{condition}" if ablation == "control" else f"{regime}_{condition}_{ablation}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v: Any) -> Any:
    if v is None:
        return "N/A"
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def build_case_sets(config: ExperimentConfig) -> dict[str, CaseSet]:
    """Baseline cases once; each condition is a transform of the same set."""
    base = generate_cases(config.n, config.seed, config.params())
    return {cond: apply_stress(base, cond, config.seed) for cond in config.conditions}


def _model(config: ExperimentConfig) -> DecisionModel:
    return make_model(config.adapter, **dict(config.adapter_params))


def _run_interventions(
    cases: CaseSet,
    regime: str,
    model: DecisionModel,
    ablation: AblationConfig,
    base: Sequence[DecisionRecord],
    config: ExperimentConfig,
) -> tuple[list[dict], list[dict], list[dict]]:
    pairs, _ = run_fsr(cases, regime, model, ablation, master_seed=config.seed, base_records=base)
    trials, _ = run_fvs(
        cases, regime, model, base,
        q=config.fvs_q, iota_target=config.iota_target, seed=config.seed, ablation=ablation, master_seed=config.seed,
    )
    probes, _ = run_esd(cases, regime, model, config.esd_seeds, ablation=ablation, master_seed=config.seed)
    return [p.to_dict() for p in pairs], [t.to_dict() for t in trials], [p.to_dict() for p in probes]


def _run_cell_to_disk(
    out: Path, cases: CaseSet, regime: str, model: DecisionModel, ablation: AblationConfig, config: ExperimentConfig
) -> bool:
    cell = run_cell(cases, regime, model, ablation, master_seed=config.seed, max_workers=config.max_workers)
    name = _cell_name(regime, cases.stress, ablation.name)
    write_jsonl(out / "records" / f"{name}.jsonl", (r.to_dict() for r in cell.records))
    if regime == "R2":
        write_jsonl(out / "audit" / f"gates_{name}.jsonl", (r.gate_audit for r in cell.records if r.gate_audit))
        write_jsonl(
            out / "audit" / f"primitives_{name}.jsonl",
            (
                {
                    "case_id": r.case_id,
                    "commitment": r.commitment_audit,
                    "candidates": r.candidate_audit,
                    "i6q": r.i6q,
                }
                for r in cell.records
                if not r.pre_gated
            ),
        )
    if config.interventions:
        pairs, trials, probes = _run_interventions(cases, regime, model, ablation, cell.records, config)
        write_jsonl(out / "interventions" / f"fsr_{name}.jsonl", pairs)
        write_jsonl(out / "interventions" / f"fvs_{name}.jsonl", trials)
        write_jsonl(out / "interventions" / f"esd_{name}.jsonl", probes)
    if cell.errors:
        write_jsonl(out / "errors" / f"{name}.jsonl", ({"case_id": k, "error": v} for k, v in sorted(cell.errors.items())))
    return cell.complete


def _load(path: Path) -> list[dict] | None:
    return list(read_jsonl(path)) if path.exists() else None


# ------------------------------------------------------------------ reporting


@dataclass
class ReportBundle:
    cells: list[MetricReport]
    msup: dict[str, MSUPTable]
    manifest: dict[str, Any]
    ablation: list[dict[str, Any]] | None = None
    sensitivity: list[dict[str, Any]] | None = None

    @property
    def complete(self) -> bool:
        return all(c.complete for c in self.cells)

    def cell(self, regime: str, condition: str) -> MetricReport:
        for c in self.cells:
            if c.regime == regime and c.condition == condition:
                return c
        raise KeyError((regime, condition))


def derive_reports(out_dir: str | Path, config: ExperimentConfig) -> tuple[list[MetricReport], dict[str, MSUPTable], dict[str, Path]]:
    """Recompute every report from the persisted logs in ``out_dir``."""
    out = Path(out_dir)
    cells: list[MetricReport] = []
    msup: dict[str, MSUPTable] = {}
    written: dict[str, Path] = {}
    ablation = parse_ablation(config.ablation).name
    for cond in config.conditions:
        cases = {c["id"]: Case.from_dict(c) for c in read_jsonl(out / "cases" / f"{cond}.jsonl")}
        by_regime: dict[str, list[DecisionRecord]] = {}
        extras: dict[str, tuple] = {}
        for regime in config.regimes:
            name = _cell_name(regime, cond, ablation if regime == "R2" else "control")
            records = [DecisionRecord.from_dict(d) for d in read_jsonl(out / "records" / f"{name}.jsonl")]
            fsr = _load(out / "interventions" / f"fsr_{name}.jsonl")
            fvs = _load(out / "interventions" / f"fvs_{name}.jsonl")
            esd = _load(out / "interventions" / f"esd_{name}.jsonl")
            complete = not (out / "errors" / f"{name}.jsonl").exists()
            cells.append(
                cell_report(records, cases, condition=cond, tau=config.tau, fsr_pairs=fsr, fvs_trials=fvs, esd_probes=esd, complete=complete)
            )
            scores = score_records(records, cases, config.tau)
            written[f"scores_{name}"] = write_jsonl(out / "scores" / f"{name}.jsonl", (s.to_dict() for s in scores))
            by_regime[regime] = records
            extras[regime] = (fsr, fvs, esd)
        if set(by_regime) == {"R1", "R2"}:
            e1, e2 = extras["R1"], extras["R2"]
            table = msup_table(
                by_regime["R1"], by_regime["R2"], cases,
                b=config.bootstrap_b, seed=config.seed, tau=config.tau,
                fsr=(e1[0], e2[0]) if e1[0] and e2[0] else None,
                fvs=(e1[1], e2[1]) if e1[1] and e2[1] else None,
                esd=(e1[2], e2[2]) if e1[2] and e2[2] else None,
            )
            msup[cond] = table
            written[f"msup_{cond}_csv"] = _write_text(out / "reports" / f"msup_{cond}.csv", table.to_csv())
            written[f"msup_{cond}_txt"] = _write_text(out / "reports" / f"msup_{cond}.txt", table.to_text())
    written["metrics"] = _write_text(out / "reports" / "metrics.csv", _csv([c.to_dict() for c in cells], REPORT_FIELDS))
    written["tau_sweep"] = _write_text(out / "reports" / "tau_sweep.csv", _tau_sweep_csv(out, config))
    return cells, msup, written


def _tau_sweep_csv(out: Path, config: ExperimentConfig) -> str:
    rows = []
    for path in sorted((out / "scores").glob("*.jsonl")):
        scores = [RationaleScore.from_dict(d) for d in read_jsonl(path)]
        row: dict[str, Any] = {"cell": path.stem}
        for t in TAU_GRID:
            row[f"cdl@{t}"] = compute_cdl(scores, t)
        rows.append(row)
    return _csv(rows, ["cell", *(f"cdl@{t}" for t in TAU_GRID)])


def _persisted(config: ExperimentConfig) -> dict[str, Any]:
    # execution-only settings stay out of the bundle so they cannot change digests
    d = config.to_dict()
    d.pop("out_dir")
    d.pop("max_workers")
    return d


def _manifest(out: Path, config: ExperimentConfig, model: DecisionModel) -> dict[str, Any]:
    files = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    return {
        "config": _persisted(config),
        "config_digest": config.digest(),
        "code_version": __version__,
        "adapter": model.name,
        "files": files,
        "bundle_digest": hashlib.sha256(dumps(files).encode()).hexdigest(),
    }


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Run every requested cell, persist logs, derive reports, write the manifest."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = _model(config)
    ablation = parse_ablation(config.ablation)
    case_sets = build_case_sets(config)
    _write_text(out / "config.yaml", yaml.safe_dump(_persisted(config), sort_keys=True))
    _write_text(out / "reports" / "calibration.csv", calibration_report(case_sets[config.conditions[0]]).to_csv())
    for cond, cases in case_sets.items():
        write_jsonl(out / "cases" / f"{cond}.jsonl", cases.to_records())
        for regime in config.regimes:
            abl = ablation if regime == "R2" else AblationConfig()
            if not _run_cell_to_disk(out, cases, regime, model, abl, config):
                log.warning("cell %s/%s incomplete", regime, cond)
    cells, msup, _ = derive_reports(out, config)
    manifest = _manifest(out, config, model)
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ReportBundle(cells, msup, manifest)


def verify_run(out_dir: str | Path) -> tuple[bool, list[str]]:
    """Re-derive reports from the logs and compare every file digest to the manifest."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = dict(manifest["config"])
    cfg["out_dir"] = str(out)
    config = ExperimentConfig.from_mapping(cfg)
    derive_reports(out, config)
    problems = []
    for rel, digest in manifest["files"].items():
        p = out / rel
        if not p.exists():
            problems.append(f"missing {rel}")
        elif _sha256(p) != digest:
            problems.append(f"digest mismatch {rel}")
    return not problems, problems


# ------------------------------------------------------------------ ablations

ABLATION_COLUMNS = ("ablation", "cdl", "diu", "cdl_llm", "fsr", "fvs", "esd", "gor", "mcc", "complete")


def run_ablations(config: ExperimentConfig, ablations: Sequence[str] = ABLATIONS) -> list[dict[str, Any]]:
    """Control plus one row per single ablation, R2 only, first configured condition."""
    out = Path(config.out_dir)
    model = _model(config)
    cond = config.conditions[0]
    cases = build_case_sets(dataclasses.replace(config, conditions=(cond,)))[cond]
    write_jsonl(out / "cases" / f"{cond}.jsonl", cases.to_records())
    case_map = cases.by_id()
    rows = []
    for name in ablations:
        abl = parse_ablation(name)
        complete = _run_cell_to_disk(out, cases, "R2", model, abl, config)
        cell = _cell_name("R2", cond, abl.name)
        records = [DecisionRecord.from_dict(d) for d in read_jsonl(out / "records" / f"{cell}.jsonl")]
        rep = cell_report(
            records, case_map, condition=cond, tau=config.tau,
            fsr_pairs=_load(out / "interventions" / f"fsr_{cell}.jsonl"),
            fvs_trials=_load(out / "interventions" / f"fvs_{cell}.jsonl"),
            esd_probes=_load(out / "interventions" / f"esd_{cell}.jsonl"),
            complete=complete,
        )
        rows.append({k: getattr(rep, k) for k in ABLATION_COLUMNS if k != "ablation"} | {"ablation": abl.name})
    _write_text(out / "reports" / "ablations.csv", _csv(rows, ABLATION_COLUMNS))
    _write_text(out / "reports" / "ablations.txt", ablation_text(rows))
    return rows


def ablation_text(rows: Sequence[Mapping[str, Any]]) -> str:
    cols = ABLATION_COLUMNS[:-1]
    lines = ["  ".join(f"{c:>9}" for c in cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append(f"{v:>9}" if isinstance(v, str) else ("      N/A" if v is None else f"{v:9.3f}"))
        lines.append("  ".join(cells))
    if any(r.get("cdl") is None for r in rows):
        lines.append("N/A: deferrals disabled, so CDL and DIU are undefined")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- sensitivity

SENSITIVITY_COLUMNS = (
    "level", "gt_determinacy", "risk_mean", "completeness_mean", "flag_mean", "gate_activation", "delta_gt_determinacy",
)


def run_sensitivity(config: ExperimentConfig, levels: Sequence[float] = SENSITIVITY_LEVELS) -> list[dict[str, Any]]:
    """Scale every generation parameter jointly and track determinacy and gate activation."""
    if 0.0 not in levels:
        raise ConfigError("sensitivity levels must include 0")
    base = config.params()
    rows = []
    for level in levels:
        params = base.scaled(1.0 + level).validate()
        pooled = calibration_report(generate_cases(config.n, config.seed, params)).pooled
        rows.append(
            {
                "level": level,
                "gt_determinacy": pooled.gt_determinacy,
                "risk_mean": pooled.risk_mean,
                "completeness_mean": pooled.completeness_mean,
                "flag_mean": pooled.flag_mean,
                "gate_activation": pooled.pregate_rate,
            }
        )
    ref = next(r for r in rows if r["level"] == 0.0)["gt_determinacy"]
    for r in rows:
        r["delta_gt_determinacy"] = r["gt_determinacy"] - ref
    _write_text(Path(config.out_dir) / "reports" / "sensitivity.csv", _csv(rows, SENSITIVITY_COLUMNS))
    return rows
