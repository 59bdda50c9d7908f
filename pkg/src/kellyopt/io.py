"""File formats: versioned JSON/CSV artifacts with atomic writes.

All floats serialize through Python's shortest-round-trip repr, so
write -> load -> write is byte-identical. Writers stage to a temp file in
the destination directory and rename into place, so readers never observe
a partial file and interrupted runs can resume safely.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

from .bounds import BoundEntry, BoundsProfile
from .core import Bet, Contract, ProblemInstance, Regime, VarianceLevel, bet_from_contract
from .errors import InputError
from .newton import SolveResult
from .scaling import EvalReport, MetricRow, XErrorRow
from .transform import ItmSolveResult

SCHEMA_VERSION = 1
_CSV_TAG = "# kellyopt-csv v{version} {kind}"


def write_text_atomic(path: str | Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json_atomic(path: str | Path, obj):
    write_text_atomic(path, json.dumps(obj, indent=2) + "\n")


def _csv_text(kind: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    buf.write(_CSV_TAG.format(version=SCHEMA_VERSION, kind=kind) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv_atomic(path: str | Path, kind: str, header: Sequence[str],
                     rows: Iterable[Sequence]):
    write_text_atomic(path, _csv_text(kind, header, rows))


def read_csv(path: str | Path, kind: str) -> tuple[list[str], list[list[str]]]:
    """Read a tagged CSV, checking its kind and version line."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    expected = _CSV_TAG.format(version=SCHEMA_VERSION, kind=kind)
    if lines[0] != expected:
        raise InputError(f"{path}: bad tag line {lines[0]!r}, expected {expected!r}")
    rows = list(csv.reader(lines[1:]))
    return rows[0], rows[1:]


# Instances -------------------------------------------------------------


def instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "regime": instance.regime.value,
            "variance_level": instance.variance_level.value,
            "seed": instance.seed,
            "N": instance.n_bets,
        },
        "contracts": [{"p": c.p, "q": c.q} for c in (instance.contracts or [])],
        "bets": [{"p": b.p, "b": b.b} for b in instance.bets],
    }


def _require(mapping: dict, field: str, path):
    if field not in mapping:
        raise InputError(f"{path}: missing field {field!r}")
    return mapping[field]


def instance_from_dict(doc: dict, path="<dict>") -> ProblemInstance:
    version = _require(doc, "schema_version", path)
    if version != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {version!r}")
    meta = _require(doc, "metadata", path)
    try:
        regime = Regime(_require(meta, "regime", f"{path}:metadata"))
        level = VarianceLevel(_require(meta, "variance_level", f"{path}:metadata"))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    seed = _require(meta, "seed", f"{path}:metadata")
    n = _require(meta, "N", f"{path}:metadata")
    contracts = tuple(
        Contract(q=_require(c, "q", f"{path}:contracts[{i}]"),
                 p=_require(c, "p", f"{path}:contracts[{i}]"))
        for i, c in enumerate(_require(doc, "contracts", path))
    )
    bets = tuple(
        Bet(p=_require(b, "p", f"{path}:bets[{i}]"),
            b=_require(b, "b", f"{path}:bets[{i}]"))
        for i, b in enumerate(_require(doc, "bets", path))
    )
    if len(bets) != n:
        raise InputError(f"{path}: metadata N={n} but {len(bets)} bets present")
    if contracts:
        if len(contracts) != len(bets):
            raise InputError(f"{path}: {len(contracts)} contracts vs {len(bets)} bets")
        for i, (c, bet) in enumerate(zip(contracts, bets)):
            derived = bet_from_contract(c)
            if derived is None or derived.p != bet.p or derived.b != bet.b:
                raise InputError(
                    f"{path}: bets[{i}] inconsistent with contracts[{i}]"
                )
    return ProblemInstance(bets=bets, regime=regime, variance_level=level,
                           seed=seed, contracts=contracts or None)


def save_instance(instance: ProblemInstance, path: str | Path):
    write_json_atomic(path, instance_to_dict(instance))


def load_instance(path: str | Path) -> ProblemInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    return instance_from_dict(doc, path=str(path))


# Solve results ---------------------------------------------------------


def result_to_dict(res: SolveResult, method: str) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "f_star": res.f,
        "w0": res.portfolio.w0,
        "weights": [float(v) for v in res.portfolio.w],
        "leverage": res.portfolio.leverage,
        "grad_norm": res.grad_norm,
        "iterations": res.n_iter,
        "cg_iterations": res.n_cg,
        "converged": res.converged,
    }
    if isinstance(res, ItmSolveResult):
        doc["quadrature"] = {
            "h": res.grid_h,
            "nodes_per_side": res.grid_m,
            "value_error_estimate": res.quadrature_error,
        }
    return doc


def save_result(res: SolveResult, method: str, path: str | Path):
    write_json_atomic(path, result_to_dict(res, method))


# Bounds profiles -------------------------------------------------------

PROFILE_HEADER = ["N", "n", "x", "f_lower", "f_upper", "shortfall", "selected_indices"]


def profile_rows(profile: BoundsProfile) -> list[list]:
    return [
        [profile.n_total, e.n, float(e.x), e.f_lower, e.f_upper, e.shortfall,
         ";".join(str(i) for i in e.selected)]
        for e in profile.entries
    ]


def save_profile_csv(profile: BoundsProfile, path: str | Path):
    write_csv_atomic(path, "bounds-profile", PROFILE_HEADER, profile_rows(profile))


def load_profile_csv(path: str | Path) -> BoundsProfile:
    header, rows = read_csv(path, "bounds-profile")
    if header != PROFILE_HEADER:
        raise InputError(f"{path}: unexpected columns {header}")
    entries = []
    n_total = None
    for row in rows:
        n_total = int(row[0])
        selected = tuple(int(s) for s in row[6].split(";") if s != "")
        entries.append(BoundEntry(n=int(row[1]), x=float(row[2]),
                                  f_lower=float(row[3]), f_upper=float(row[4]),
                                  shortfall=float(row[5]), selected=selected))
    if n_total is None:
        raise InputError(f"{path}: profile has no rows")
    return BoundsProfile(n_total=n_total, entries=tuple(entries))


def save_profile_json(profile: BoundsProfile, path: str | Path):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "N": profile.n_total,
        "entries": [
            {"n": e.n, "x": float(e.x), "f_lower": e.f_lower, "f_upper": e.f_upper,
             "shortfall": e.shortfall, "selected": list(e.selected)}
            for e in profile.entries
        ],
    }
    write_json_atomic(path, doc)


# Metric tables ---------------------------------------------------------

METRIC_HEADER = ["group", "count", "mse_mean", "mae_median", "r2_median"]
XERR_HEADER = ["x", "count", "abs_err_p10", "abs_err_p50", "abs_err_p90", "abs_err_mean"]


def metric_rows(rows: Sequence[MetricRow]) -> list[list]:
    return [[r.group, r.count, r.mse_mean, r.mae_median, r.r2_median] for r in rows]


def save_metric_csv(rows: Sequence[MetricRow], path: str | Path, kind: str):
    write_csv_atomic(path, kind, METRIC_HEADER, metric_rows(rows))


def save_xerror_csv(rows: Sequence[XErrorRow], path: str | Path):
    write_csv_atomic(
        path, "x-error", XERR_HEADER,
        [[r.x, r.count, r.abs_err_p10, r.abs_err_p50, r.abs_err_p90, r.abs_err_mean]
         for r in rows],
    )


def save_eval_report(report: EvalReport, out_dir: str | Path, prefix: str):
    out = Path(out_dir)
    save_metric_csv([report.overall, *report.per_regime], out / f"{prefix}_by_regime.csv",
                    "model-metrics")
    save_metric_csv([report.overall, *report.per_n], out / f"{prefix}_by_n.csv",
                    "model-metrics")
    save_xerror_csv(report.per_x, out / f"{prefix}_by_x.csv")
