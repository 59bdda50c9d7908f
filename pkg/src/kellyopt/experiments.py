"""Experiment orchestration: generation, validation, and scaling runs.

A run is a directory tree under the configured output path:

    instances/<regime>/<level>/N<k>/instance_00042.json
    checkpoints/...        per-cell JSON, written atomically, safe to resume
    tables/...             final CSV tables
    figures/...            per-curve data (observed, fitted, collapsed)
    manifest.json          every generated file with its seed coordinates

Cells (one per regime x variance x N) are independent; a worker pool can
process them in any order and the assembled outputs are byte-identical
because all content derives from per-cell seed streams and assembly sorts
by cell key. Completed cells are detected by their checkpoint file and
skipped on resume.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as kio
from .bounds import bounds_profile, certify_solve, greedy_lower, stepwise_lower
from .core import ProblemInstance, Regime, VarianceLevel
from .datagen import RngStream, calibrate_beta_concentration, generate_instance
from .errors import InputError
from .exhaustive import enumerate_scenarios, eval_portfolio
from .scaling import (
    FitMetrics,
    ScalingRecord,
    SigmoidParams,
    collapse_transform,
    compute_features,
    evaluate_model,
    fit_quality_summary,
    fit_sigmoid,
    sigmoid_eval,
    split_dataset,
    train_param_model,
)

DEFAULT_N_LIST = tuple(range(20, 201, 20))
VALIDATION_BOUND_SIZES = (2, 4, 6, 8)

# Shortfall curves feed sigmoid fits whose residuals are orders of
# magnitude above solver error, so scaling cells run the bound subsolves
# at a loose tolerance and skip the certification polish pass.
PROFILE_FIT_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    regimes: tuple[Regime, ...] = tuple(Regime)
    variance_levels: tuple[VarianceLevel, ...] = tuple(VarianceLevel)
    n_list: tuple[int, ...] = DEFAULT_N_LIST
    validation_n: int = 10
    instances_per_cell: int = 1000
    scale: float = 1.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    base_seed: int = 20240817
    out_dir: str = "runs/kelly"
    jobs: int = 1
    n_steps: int = 20
    beta_calibration_samples: int = 10**6
    solver: str = "auto"

    @property
    def cell_count(self) -> int:
        return max(1, round(self.instances_per_cell * self.scale))

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        kwargs = {}
        try:
            if "regimes" in doc:
                kwargs["regimes"] = tuple(Regime(r) for r in doc["regimes"])
            if "variance_levels" in doc:
                kwargs["variance_levels"] = tuple(
                    VarianceLevel(v) for v in doc["variance_levels"]
                )
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        for key in ("validation_n", "instances_per_cell", "base_seed", "jobs",
                    "n_steps", "beta_calibration_samples"):
            if key in doc:
                kwargs[key] = int(doc[key])
        if "n_list" in doc:
            kwargs["n_list"] = tuple(int(n) for n in doc["n_list"])
        if "seeds" in doc:
            kwargs["seeds"] = tuple(int(s) for s in doc["seeds"])
        if "scale" in doc:
            kwargs["scale"] = float(doc["scale"])
        if "out_dir" in doc:
            kwargs["out_dir"] = str(doc["out_dir"])
        if "solver" in doc:
            kwargs["solver"] = str(doc["solver"])
        unknown = set(doc) - {
            "regimes", "variance_levels", "n_list", "validation_n",
            "instances_per_cell", "scale", "seeds", "base_seed", "out_dir",
            "jobs", "n_steps", "beta_calibration_samples", "solver",
        }
        if unknown:
            raise InputError(f"unknown config fields: {sorted(unknown)}")
        return ExperimentConfig(**kwargs)


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(doc)


def _cell_key(regime: Regime, level: VarianceLevel, n: int) -> str:
    return f"{regime.value}_{level.value}_N{n}"


def instance_path(out_dir: str | Path, regime: Regime, level: VarianceLevel,
                  n: int, index: int) -> Path:
    return (Path(out_dir) / "instances" / regime.value / level.value
            / f"N{n}" / f"instance_{index:05d}.json")


def _beta_kappas(config: ExperimentConfig) -> dict[str, float]:
    """Pre-calibrate Beta concentrations so workers reuse one value."""
    if Regime.BETA not in config.regimes:
        return {}
    return {
        level.value: calibrate_beta_concentration(
            level, n_samples=config.beta_calibration_samples
        )
        for level in config.variance_levels
    }


# Generation ------------------------------------------------------------


def _gen_cell(args) -> dict:
    out_dir, regime_v, level_v, n, count, base_seed, kappa = args
    regime, level = Regime(regime_v), VarianceLevel(level_v)
    files = []
    for idx in range(count):
        stream = RngStream(base_seed=base_seed, regime=regime,
                           variance_level=level, n_bets=n, index=idx)
        inst = generate_instance(stream, kappa=kappa)
        path = instance_path(out_dir, regime, level, n, idx)
        kio.save_instance(inst, path)
        files.append({
            "path": str(path.relative_to(out_dir)),
            "regime": regime.value,
            "variance_level": level.value,
            "N": n,
            "index": idx,
            "seed": inst.seed,
        })
    return {"cell": _cell_key(regime, level, n), "files": files}


def gen_cells(config: ExperimentConfig, include_validation: bool = True):
    sizes = list(config.n_list)
    if include_validation and config.validation_n not in sizes:
        sizes.append(config.validation_n)
    for regime in config.regimes:
        for level in config.variance_levels:
            for n in sorted(sizes):
                yield regime, level, n


def run_gen(config: ExperimentConfig, force: bool = False,
            include_validation: bool = True) -> Path:
    out_dir = Path(config.out_dir)
    inst_root = out_dir / "instances"
    if inst_root.exists() and any(inst_root.rglob("*.json")) and not force:
        raise InputError(
            f"{inst_root} already contains instances; pass --force to regenerate"
        )
    kappas = _beta_kappas(config)
    tasks = [
        (str(out_dir), regime.value, level.value, n, config.cell_count,
         config.base_seed, kappas.get(level.value))
        for regime, level, n in gen_cells(config, include_validation)
    ]
    results = _run_tasks(_gen_cell, tasks, config.jobs)
    results.sort(key=lambda r: r["cell"])
    manifest = {
        "schema_version": kio.SCHEMA_VERSION,
        "base_seed": config.base_seed,
        "instances_per_cell": config.cell_count,
        "cells": [r["cell"] for r in results],
        "files": [f for r in results for f in r["files"]],
    }
    kio.write_json_atomic(out_dir / "manifest.json", manifest)
    return out_dir / "manifest.json"


def _run_tasks(fn, tasks, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _load_cell_instances(out_dir: str | Path, regime: Regime,
                         level: VarianceLevel, n: int) -> list[ProblemInstance]:
    cell_dir = instance_path(out_dir, regime, level, n, 0).parent
    paths = sorted(cell_dir.glob("instance_*.json"))
    if not paths:
        raise InputError(f"no instances found under {cell_dir}; run gen first")
    return [kio.load_instance(p) for p in paths]


# Validation (small-N oracle comparison and bound-family comparison) ----


def _validate_cell(args) -> dict:
    out_dir, regime_v, level_v, n = args
    regime, level = Regime(regime_v), VarianceLevel(level_v)
    ckpt = Path(out_dir) / "checkpoints" / f"validate_{_cell_key(regime, level, n)}.json"
    if ckpt.exists():
        return json.loads(ckpt.read_text())
    rows = []
    for inst in _load_cell_instances(out_dir, regime, level, n):
        # Certified solves: a bet pinned far below its tiny optimal weight
        # hides from the logit-space gradient norm, so plain-tolerance
        # solves can disagree in value by more than these tables claim.
        exh = certify_solve(inst.bets, "exhaustive")
        itm = certify_solve(inst.bets, "itm")
        table = enumerate_scenarios(inst.bets)
        reeval = eval_portfolio(table, itm.portfolio)
        cos = float(
            itm.portfolio.w @ exh.portfolio.w
            / (np.linalg.norm(itm.portfolio.w) * np.linalg.norm(exh.portfolio.w))
        )
        greedy_rel = {}
        step_chain = stepwise_lower(inst.bets, max(VALIDATION_BOUND_SIZES))
        step_f = {lb.n: lb.f for lb in step_chain}
        for size in VALIDATION_BOUND_SIZES:
            g = greedy_lower(inst.bets, size)
            greedy_rel[str(size)] = abs(g.f - step_f[size]) / abs(step_f[size])
        rows.append({
            "seed": inst.seed,
            "rel_df": abs(itm.f - exh.f) / abs(exh.f),
            "leverage_diff": abs(itm.portfolio.leverage - exh.portfolio.leverage),
            "cosine_diff": 1.0 - cos,
            "reeval_diff": abs(itm.f - reeval),
            "greedy_vs_stepwise": greedy_rel,
        })
    result = {"cell": _cell_key(regime, level, n), "regime": regime.value,
              "variance_level": level.value, "rows": rows}
    kio.write_json_atomic(ckpt, result)
    return result


def run_validate(config: ExperimentConfig) -> dict:
    out_dir = Path(config.out_dir)
    n = config.validation_n
    tasks = [(str(out_dir), regime.value, level.value, n)
             for regime in config.regimes for level in config.variance_levels]
    cells = _run_tasks(_validate_cell, tasks, config.jobs)
    cells.sort(key=lambda c: c["cell"])

    by_regime: dict[str, list[dict]] = {}
    for cell in cells:
        by_regime.setdefault(cell["regime"], []).extend(cell["rows"])

    oracle_rows = []
    bound_rows = []
    for regime in sorted(by_regime):
        rows = by_regime[regime]
        oracle_rows.append([
            regime, len(rows),
            max(r["rel_df"] for r in rows),
            max(r["leverage_diff"] for r in rows),
            max(r["cosine_diff"] for r in rows),
            max(r["reeval_diff"] for r in rows),
        ])
        for size in VALIDATION_BOUND_SIZES:
            diffs = [r["greedy_vs_stepwise"][str(size)] for r in rows]
            bound_rows.append([regime, size,
                               float(np.percentile(diffs, 90)),
                               float(np.max(diffs))])
    tables = Path(out_dir) / "tables"
    kio.write_csv_atomic(
        tables / "validation_oracle.csv", "validation-oracle",
        ["regime", "instances", "max_rel_f_diff", "max_leverage_diff",
         "max_cosine_diff", "max_reeval_diff"],
        oracle_rows,
    )
    kio.write_csv_atomic(
        tables / "validation_bounds.csv", "validation-bounds",
        ["regime", "n", "p90_rel_diff", "max_rel_diff"],
        bound_rows,
    )
    return {"oracle": oracle_rows, "bounds": bound_rows}


# Scaling ---------------------------------------------------------------


def curve_for_fit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop the x = 1 endpoint (its logit is infinite) and clip y into (0, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.clip(np.asarray(y, dtype=float), 1e-300, 1.0)
    keep = x < 1.0
    return x[keep], y[keep]


def _scaling_cell(args) -> dict:
    out_dir, regime_v, level_v, n, solver = args
    regime, level = Regime(regime_v), VarianceLevel(level_v)
    ckpt = Path(out_dir) / "checkpoints" / f"scaling_{_cell_key(regime, level, n)}.json"
    if ckpt.exists():
        return json.loads(ckpt.read_text())
    rows = []
    for idx, inst in enumerate(_load_cell_instances(out_dir, regime, level, n)):
        profile = bounds_profile(inst, solver=solver,
                                 tol=PROFILE_FIT_TOL, polish=False)
        x, y = curve_for_fit(profile.x, profile.y)
        params, metrics = fit_sigmoid(x, y, seed=inst.seed & 0xFFFFFFFF)
        rows.append({
            "index": idx,
            "seed": inst.seed,
            "features": [float(v) for v in compute_features(inst)],
            "x": [float(v) for v in x],
            "y": [float(v) for v in y],
            "fit": {"q": params.q, "v": params.v, "b": params.b},
            "fit_metrics": {"mse": metrics.mse, "mae": metrics.mae, "r2": metrics.r2},
        })
    result = {"cell": _cell_key(regime, level, n), "regime": regime.value,
              "variance_level": level.value, "N": n, "rows": rows}
    kio.write_json_atomic(ckpt, result)
    return result


def records_from_cells(cells: Sequence[dict]) -> list[ScalingRecord]:
    records = []
    for cell in sorted(cells, key=lambda c: c["cell"]):
        for row in cell["rows"]:
            records.append(ScalingRecord(
                regime=cell["regime"],
                variance_level=cell["variance_level"],
                n_bets=cell["N"],
                index=row["index"],
                features=np.array(row["features"]),
                x=np.array(row["x"]),
                y=np.array(row["y"]),
                fit_params=SigmoidParams(**row["fit"]),
                fit_metrics=FitMetrics(**row["fit_metrics"]),
            ))
    return records


def run_scaling(config: ExperimentConfig) -> dict:
    out_dir = Path(config.out_dir)
    tasks = [(str(out_dir), regime.value, level.value, n, config.solver)
             for regime, level, n in gen_cells(config, include_validation=False)]
    cells = _run_tasks(_scaling_cell, tasks, config.jobs)
    records = records_from_cells(cells)

    tables = out_dir / "tables"
    overall_fit, per_regime_fit = fit_quality_summary(records)
    kio.save_metric_csv([overall_fit, *per_regime_fit],
                        tables / "fit_quality.csv", "fit-quality")

    summary = {"fit_overall": overall_fit, "seeds": {}}
    overall_rows = []
    for seed in config.seeds:
        dataset = split_dataset(records, seed=seed)
        model = train_param_model(dataset)
        report = evaluate_model(model, dataset, tag="test")
        kio.save_eval_report(report, tables, f"model_seed{seed}")
        summary["seeds"][seed] = {"model": model, "report": report,
                                  "dataset": dataset}
        overall_rows.append([seed, model.ridge_lambda, model.val_mse,
                             report.overall.mse_mean, report.overall.mae_median,
                             report.overall.r2_median])
    kio.write_csv_atomic(
        tables / "model_by_seed.csv", "model-metrics-by-seed",
        ["seed", "ridge_lambda", "val_mse", "test_mse_mean",
         "test_mae_median", "test_r2_median"],
        overall_rows,
    )
    _write_figure_data(out_dir, records, summary, config)
    return summary


def _write_figure_data(out_dir: Path, records: Sequence[ScalingRecord],
                       summary: dict, config: ExperimentConfig):
    """Per-curve data: observed, fitted, predicted, and collapsed values."""
    first_seed = config.seeds[0]
    model = summary["seeds"][first_seed]["model"]
    rows = []
    for rec in records:
        pred_params = model.predict(rec.features)
        y_fit = sigmoid_eval(rec.x, rec.fit_params)
        y_pred = sigmoid_eval(rec.x, pred_params)
        z_col, y_tilde = collapse_transform(rec.x, rec.y, rec.fit_params)
        for j in range(len(rec.x)):
            rows.append([
                rec.regime, rec.variance_level, rec.n_bets, rec.index,
                float(rec.x[j]), float(rec.y[j]), float(np.atleast_1d(y_fit)[j]),
                float(np.atleast_1d(y_pred)[j]), float(z_col[j]), float(y_tilde[j]),
            ])
    kio.write_csv_atomic(
        out_dir / "figures" / "curves.csv", "curve-data",
        ["regime", "variance_level", "N", "index", "x", "y", "y_fit",
         "y_pred", "z_collapsed", "y_tilde"],
        rows,
    )
