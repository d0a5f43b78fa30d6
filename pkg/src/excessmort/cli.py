"""Command-line orchestration and file exporters.

Subcommands: ``validate``, ``fit``, ``excess``, ``moran``, ``lisa``,
``report``, ``synth``. Every flag has a config-file equivalent (INI
sections ``[inputs]``, ``[forest]``, ``[spatial]``, ``[run]``, and an
optional inline ``[periods]``); command-line flags win. ``--seed``
overrides the master seed everywhere.

Exit codes: 0 success, 2 data validation, 3 I/O, 4 numerical.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .counterfactual import (
    ExcessEstimate,
    combine_estimates,
    aggregate_excess,
    excess_by_unit,
    harvesting_summary,
    read_estimates,
    write_estimates,
)
from .errors import (
    DataError,
    EmptyEstimates,
    EmptyRecords,
    ExcessMortError,
    NonPositiveReferenceExcess,
    NumericalError,
)
from .forest import ForestConfig, fit_forest, load_forest, save_forest, split_train_test, evaluate_mse
from .panel import (
    DEFAULT_PERIODS,
    Municipality,
    PanelDataset,
    Period,
    assemble_rows,
    export_panel,
    fmt_number,
    load_panel,
    parse_periods_file,
    validate_periods,
    write_periods_file,
)
from .spatial import (
    bivariate_lisa,
    build_weights,
    global_moran_test,
    min_connectivity_threshold,
)
from .synth import SynthConfig, generate_panel, write_truth

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

DEFAULT_BIN_EDGES = (0.0, 20.0, 50.0, 100.0)


def derive_seed(master_seed: int, stream: int) -> int:
    """Stable 63-bit stage seed mixed from (master_seed, stream)."""
    state = np.random.SeedSequence((master_seed, stream)).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


@dataclass(frozen=True)
class RunConfig:
    mortality: str
    covariates: str
    geo: str
    periods: tuple = DEFAULT_PERIODS
    out_dir: str = "out"
    n_trees: int = 200
    mtry: int = 6
    min_leaf: int = 5
    max_depth: int | None = None
    train_fraction: float = 0.8
    threshold_km: float | None = None  # None = auto
    n_perm: int = 999
    alpha: float = 0.05
    master_seed: int = 0
    workers: int = 1


# GeoJSON exporters ---------------------------------------------------------


def _point_feature(municipality, properties: dict) -> dict:
    return {
        "type": "Feature",
        "geometry": {
            "type": "Point",
            "coordinates": [municipality.centroid_x_km, municipality.centroid_y_km],
        },
        "properties": properties,
    }


def _write_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def bin_index(excess_pct: float, bin_edges=DEFAULT_BIN_EDGES) -> int:
    """Bin slot for an excess percentage; edges close the bin on the left."""
    return int(np.searchsorted(np.asarray(bin_edges), excess_pct, side="right"))


def bin_labels(bin_edges=DEFAULT_BIN_EDGES) -> list[str]:
    edges = ["-inf"] + [format(e, "g") for e in bin_edges] + ["inf"]
    return [f"[{a},{b})" if a != "-inf" else f"({a},{b})" for a, b in zip(edges, edges[1:])]


def export_choropleth(
    estimates, panel: PanelDataset, path, legend_path=None, bin_edges=DEFAULT_BIN_EDGES
) -> dict:
    """Write binned per-unit excess percentages as GeoJSON point features.

    Units with an undefined percentage (zero predicted deaths) carry a null
    bin. Coordinates are the input planar kilometres, not lon/lat.
    """
    estimates = list(estimates)
    if not estimates:
        raise EmptyEstimates("no estimates to export")
    labels = bin_labels(bin_edges)
    features = []
    for e in sorted(estimates, key=lambda e: e.label):
        m = panel.municipality(e.label)
        if e.excess_pct is None:
            idx, label = None, None
        else:
            idx = bin_index(e.excess_pct, bin_edges)
            label = labels[idx]
        features.append(
            _point_feature(
                m,
                {
                    "unit_id": e.label,
                    "period": e.period,
                    "excess_pct": e.excess_pct,
                    "bin": idx,
                    "bin_label": label,
                },
            )
        )
    doc = {"type": "FeatureCollection", "features": features}
    _write_json(doc, path)
    if legend_path is not None:
        legend = {
            "bin_edges": list(bin_edges),
            "bins": [{"index": i, "label": lab} for i, lab in enumerate(labels)],
        }
        _write_json(legend, legend_path)
    return doc


def export_lisa(records, panel: PanelDataset, cluster_path, significance_path) -> None:
    """Write the cluster-class map and the significance-tier map."""
    records = list(records)
    if not records:
        raise EmptyRecords("no records to export")
    clusters, tiers = [], []
    for r in sorted(records, key=lambda r: r.unit_id):
        m = panel.municipality(r.unit_id)
        base = {"unit_id": r.unit_id, "local_i": r.local_i, "pseudo_p": r.pseudo_p}
        clusters.append(_point_feature(m, dict(base, cluster=r.cluster)))
        tiers.append(_point_feature(m, dict(base, tier=r.tier)))
    _write_json({"type": "FeatureCollection", "features": clusters}, cluster_path)
    _write_json({"type": "FeatureCollection", "features": tiers}, significance_path)


def write_lisa_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write("unit_id,local_I,pseudo_p,cluster,tier\n")
        for r in sorted(records, key=lambda r: r.unit_id):
            fh.write(
                f"{r.unit_id},{fmt_number(r.local_i)},{fmt_number(r.pseudo_p)},"
                f"{r.cluster},{r.tier}\n"
            )


# report orchestration -------------------------------------------------------


def _pct_str(pct: float | None) -> str:
    return "n/a" if pct is None else f"{pct:+.1f}%"


def _load_run_panel(config: RunConfig) -> PanelDataset:
    return load_panel(
        config.mortality, config.covariates, config.geo, periods=config.periods
    )


def _fit_period_forest(panel, period, config: RunConfig, period_index: int):
    years = [y for y in panel.years if y != max(panel.years)]
    rows = assemble_rows(panel, period, years)
    fc = ForestConfig(
        n_trees=config.n_trees,
        mtry=config.mtry,
        min_leaf=config.min_leaf,
        max_depth=config.max_depth,
        master_seed=derive_seed(config.master_seed, period_index),
        train_fraction=config.train_fraction,
    )
    train, test = split_train_test(rows, fc.train_fraction, fc.master_seed)
    forest = fit_forest(train, fc, n_workers=config.workers)
    mse = evaluate_mse(forest, test) if len(test) else None
    return forest, mse


def run_report(config: RunConfig) -> Path:
    """Run the full pipeline and write the report plus machine-readable files.

    Returns the output directory. Integer rounding happens only in
    ``report.txt``; every printed number is recomputable from the CSV/JSON
    files next to it.
    """
    panel = _load_run_panel(config)  # fail before any output is created
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target_year = max(panel.years)

    region_of = {m.unit_id: m.region for m in panel.municipalities}
    province_of = {m.unit_id: m.province for m in panel.municipalities}

    per_period_units: dict[str, list[ExcessEstimate]] = {}
    totals: list[ExcessEstimate] = []
    test_mses: dict[str, float | None] = {}
    agg_rows: list[tuple[str, str, ExcessEstimate]] = []
    for k, period in enumerate(panel.periods):
        forest, mse = _fit_period_forest(panel, period, config, k)
        estimates = excess_by_unit(forest, panel, period, year=target_year)
        per_period_units[period.name] = estimates
        test_mses[period.name] = mse
        write_estimates(estimates, out / f"excess_{period.name}.csv")
        export_choropleth(
            estimates,
            panel,
            out / f"choropleth_{period.name}.geojson",
            legend_path=out / "choropleth_legend.json",
        )
        total = combine_estimates(estimates, "total")
        totals.append(total)
        agg_rows.append(("total", "total", total))
        for group, est in aggregate_excess(estimates, region_of).items():
            agg_rows.append(("region", group, est))
        for group, est in aggregate_excess(estimates, province_of).items():
            agg_rows.append(("province", group, est))

    with open(out / "aggregates.csv", "w") as fh:
        fh.write("level,label,period,observed,predicted,excess,excess_pct\n")
        for level, label, est in agg_rows:
            pct = "" if est.excess_pct is None else fmt_number(est.excess_pct)
            fh.write(
                f"{level},{label},{est.period},{est.observed},"
                f"{fmt_number(est.predicted)},{fmt_number(est.excess)},{pct}\n"
            )

    harvesting: dict[str, dict] = {}
    whole = {
        "observed": sum(t.observed for t in totals),
        "predicted": sum(t.predicted for t in totals),
    }
    whole["excess"] = whole["observed"] - whole["predicted"]
    whole["excess_pct"] = (
        100.0 * whole["excess"] / whole["predicted"] if whole["predicted"] > 0 else None
    )
    try:
        hs = harvesting_summary(totals)
        harvesting["total"] = {
            "reference_period": panel.periods[0].name,
            "reference_excess": hs.reference_excess,
            "subsequent_deficit": hs.subsequent_deficit,
            "harvesting_ratio": hs.harvesting_ratio,
            "cumulative_excess": hs.cumulative_excess,
        }
    except NonPositiveReferenceExcess:
        harvesting["total"] = None
    for level, group_of in (("region", region_of), ("province", province_of)):
        grouped_by_period = [
            aggregate_excess(per_period_units[p.name], group_of) for p in panel.periods
        ]
        for group in sorted(set(group_of.values())):
            seq = [grouped[group] for grouped in grouped_by_period]
            try:
                hs = harvesting_summary(seq)
            except NonPositiveReferenceExcess:
                continue
            harvesting[f"{level}:{group}"] = {
                "reference_period": panel.periods[0].name,
                "reference_excess": hs.reference_excess,
                "subsequent_deficit": hs.subsequent_deficit,
                "harvesting_ratio": hs.harvesting_ratio,
                "cumulative_excess": hs.cumulative_excess,
            }
    _write_json({"harvesting": harvesting, "whole_period": whole}, out / "harvesting.json")
    _write_json({"held_out_mse": test_mses}, out / "model_fit.json")

    moran_results = {}
    lisa_counts: dict[str, dict[str, int]] = {}
    first = panel.periods[0]
    for k, later in enumerate(panel.periods[1:], start=1):
        pair = f"{first.name}_vs_{later.name}"
        x_units, x_vals, y_vals = _paired_pct(
            per_period_units[first.name], per_period_units[later.name]
        )
        if len(x_units) < 2:
            continue
        centroids = np.array(
            [
                [panel.municipality(u).centroid_x_km, panel.municipality(u).centroid_y_km]
                for u in x_units
            ]
        )
        threshold = (
            config.threshold_km
            if config.threshold_km is not None
            else min_connectivity_threshold(centroids)
        )
        weights = build_weights(centroids, threshold, unit_ids=x_units)
        seed = derive_seed(config.master_seed, 100 + k)
        result = global_moran_test(
            x_vals, y_vals, weights, n_perm=config.n_perm, master_seed=seed
        )
        moran_results[pair] = {
            "statistic": result.statistic,
            "n_permutations": result.n_permutations,
            "pseudo_p": result.pseudo_p,
            "threshold_km": threshold,
            "n_units": len(x_units),
        }
        records = bivariate_lisa(
            x_vals,
            y_vals,
            weights,
            n_perm=config.n_perm,
            master_seed=seed,
            alpha=config.alpha,
            n_workers=config.workers,
        )
        write_lisa_csv(records, out / f"lisa_{pair}.csv")
        export_lisa(
            records,
            panel,
            out / f"lisa_clusters_{pair}.geojson",
            out / f"lisa_significance_{pair}.geojson",
        )
        counts = {label: 0 for label in ("HH", "HL", "LH", "LL", "NS")}
        for r in records:
            counts[r.cluster] += 1
        lisa_counts[pair] = counts
    _write_json(moran_results, out / "moran.json")

    _write_report_text(
        out / "report.txt",
        panel,
        target_year,
        totals,
        agg_rows,
        harvesting,
        whole,
        moran_results,
        lisa_counts,
        test_mses,
        config,
    )
    return out


def _paired_pct(est_x, est_y):
    """Pair two per-unit estimate lists on units with defined percentages."""
    by_y = {e.label: e for e in est_y}
    units, xs, ys = [], [], []
    for e in sorted(est_x, key=lambda e: e.label):
        other = by_y.get(e.label)
        if other is None or e.excess_pct is None or other.excess_pct is None:
            continue
        units.append(e.label)
        xs.append(e.excess_pct)
        ys.append(other.excess_pct)
    return tuple(units), np.array(xs), np.array(ys)


def _write_report_text(
    path,
    panel,
    target_year,
    totals,
    agg_rows,
    harvesting,
    whole,
    moran_results,
    lisa_counts,
    test_mses,
    config,
):
    lines = []
    lines.append("EXCESS MORTALITY REPORT")
    lines.append("=======================")
    lines.append(
        f"units: {panel.n_units}  years: {panel.years[0]}-{panel.years[-1]}  "
        f"target year: {target_year}  master seed: {config.master_seed}"
    )
    lines.append("")
    for period, total in zip(panel.periods, totals):
        lines.append(
            f"Period {period.name} "
            f"({period.start[0]:02d}-{period.start[1]:02d}.."
            f"{period.end[0]:02d}-{period.end[1]:02d})"
        )
        lines.append(f"  observed deaths:   {total.observed}")
        lines.append(f"  predicted deaths:  {round(total.predicted)}")
        lines.append(f"  excess deaths:     {round(total.excess)}")
        lines.append(f"  excess:            {_pct_str(total.excess_pct)}")
        mse = test_mses.get(period.name)
        if mse is not None:
            lines.append(f"  held-out MSE:      {mse:.4f}")
        regions = [
            (label, est)
            for level, label, est in agg_rows
            if level == "region" and est.period == period.name
        ]
        for label, est in regions:
            lines.append(
                f"    region {label}: observed {est.observed}, "
                f"excess {round(est.excess)} ({_pct_str(est.excess_pct)})"
            )
        lines.append("")
    total_h = harvesting.get("total")
    lines.append("Mortality displacement")
    if total_h is None:
        lines.append("  undefined (reference-period excess not positive)")
    else:
        lines.append(
            f"  reference excess ({total_h['reference_period']}): "
            f"{round(total_h['reference_excess'])}"
        )
        lines.append(f"  subsequent deficit: {round(total_h['subsequent_deficit'])}")
        lines.append(f"  harvesting ratio:   {100 * total_h['harvesting_ratio']:.1f}%")
        lines.append(f"  cumulative excess:  {round(total_h['cumulative_excess'])}")
    lines.append(
        f"  whole period: observed {whole['observed']}, "
        f"predicted {round(whole['predicted'])}, "
        f"excess {round(whole['excess'])} ({_pct_str(whole['excess_pct'])})"
    )
    lines.append("")
    lines.append("Bivariate spatial autocorrelation")
    if not moran_results:
        lines.append("  not computed (fewer than two usable periods)")
    for pair, res in sorted(moran_results.items()):
        lines.append(
            f"  {pair}: I = {res['statistic']:.3f}, "
            f"pseudo p = {res['pseudo_p']:.3f} ({res['n_permutations']} permutations, "
            f"threshold {res['threshold_km']:.1f} km)"
        )
        counts = lisa_counts.get(pair)
        if counts:
            lines.append(
                "    clusters: "
                + ", ".join(f"{k} {counts[k]}" for k in ("HH", "HL", "LH", "LL", "NS"))
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# config / argument plumbing --------------------------------------------------


def _read_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    values: dict = {}
    if "inputs" in parser:
        sec = parser["inputs"]
        for key in ("mortality", "covariates", "geo", "periods"):
            if key in sec:
                values[key] = sec[key]
    if "forest" in parser:
        sec = parser["forest"]
        for key, cast in (
            ("trees", int),
            ("mtry", int),
            ("min_leaf", int),
            ("max_depth", int),
            ("train_fraction", float),
        ):
            if key in sec and sec[key] != "":
                values[key] = cast(sec[key])
    if "spatial" in parser:
        sec = parser["spatial"]
        if "threshold_km" in sec:
            values["threshold"] = sec["threshold_km"]
        if "n_perm" in sec:
            values["n_perm"] = int(sec["n_perm"])
        if "alpha" in sec:
            values["alpha"] = float(sec["alpha"])
    if "run" in parser:
        sec = parser["run"]
        if "seed" in sec:
            values["seed"] = int(sec["seed"])
        if "workers" in sec:
            values["workers"] = int(sec["workers"])
        if "out_dir" in sec:
            values["out_dir"] = sec["out_dir"]
    if "periods" in parser:
        values["inline_periods"] = _parse_inline_periods(parser)
    return values


def _parse_inline_periods(parser):
    periods = []
    for name, window in parser["periods"].items():
        start_s, end_s = window.split("..")
        sm, sd = (int(x) for x in start_s.strip().split("-"))
        em, ed = (int(x) for x in end_s.strip().split("-"))
        periods.append(Period(name, (sm, sd), (em, ed)))
    return validate_periods(periods)


def _merged(args, key, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return args._config_values.get(key, default)


def _resolve_periods(args):
    inline = args._config_values.get("inline_periods")
    periods_path = _merged(args, "periods")
    if periods_path:
        return parse_periods_file(periods_path)
    if inline:
        return inline
    return DEFAULT_PERIODS


def _resolve_threshold(args):
    raw = _merged(args, "threshold", "auto")
    if raw is None or str(raw).lower() == "auto":
        return None
    return float(raw)


def _build_run_config(args) -> RunConfig:
    mortality = _merged(args, "mortality")
    covariates = _merged(args, "covariates")
    geo = _merged(args, "geo")
    if not (mortality and covariates and geo):
        raise DataError("mortality, covariates, and geo inputs are all required")
    return RunConfig(
        mortality=mortality,
        covariates=covariates,
        geo=geo,
        periods=_resolve_periods(args),
        out_dir=str(_merged(args, "out_dir", "out")),
        n_trees=int(_merged(args, "trees", 200)),
        mtry=int(_merged(args, "mtry", 6)),
        min_leaf=int(_merged(args, "min_leaf", 5)),
        max_depth=_merged(args, "max_depth"),
        train_fraction=float(_merged(args, "train_fraction", 0.8)),
        threshold_km=_resolve_threshold(args),
        n_perm=int(_merged(args, "n_perm", 999)),
        alpha=float(_merged(args, "alpha", 0.05)),
        master_seed=int(_merged(args, "seed", 0)),
        workers=int(_merged(args, "workers", 1)),
    )


def _add_input_flags(sub):
    sub.add_argument("--mortality", help="mortality CSV (unit_id,date,deaths)")
    sub.add_argument("--covariates", help="covariate CSV")
    sub.add_argument("--geo", help="geo CSV")
    sub.add_argument("--periods", help="periods INI file")


def _add_common_flags(sub):
    sub.add_argument("--config", help="INI file with flag equivalents")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--workers", type=int, help="parallel workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="excessmort",
        description="Excess mortality, displacement, and spatial clustering toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("validate", help="load and validate the three input files")
    _add_input_flags(p)
    _add_common_flags(p)

    p = subs.add_parser("synth", help="generate a synthetic panel with known truth")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--units", type=int, default=100)
    p.add_argument("--shock-multiplier", type=float, default=1.0)
    p.add_argument("--affected-fraction", type=float, default=0.25)
    p.add_argument("--harvesting", type=float, default=0.0)
    p.add_argument(
        "--hotspot",
        help="cx,cy,radius in km: affected units fall inside this circle",
    )
    _add_common_flags(p)

    p = subs.add_parser("fit", help="train a forest for one period")
    _add_input_flags(p)
    _add_common_flags(p)
    p.add_argument("--period", required=True, help="period name to train for")
    p.add_argument("--out", required=True, help="output forest JSON")
    p.add_argument("--trees", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)

    p = subs.add_parser("excess", help="per-unit excess estimates for one period")
    _add_input_flags(p)
    _add_common_flags(p)
    p.add_argument("--forest", required=True, help="forest JSON from 'fit'")
    p.add_argument("--period", required=True)
    p.add_argument("--year", type=int, help="target year (default: last)")
    p.add_argument("--out", required=True, help="output estimates CSV")

    p = subs.add_parser("moran", help="global bivariate spatial autocorrelation")
    p.add_argument("--excess-x", dest="excess_x", required=True)
    p.add_argument("--excess-y", dest="excess_y", required=True)
    p.add_argument("--geo", required=True)
    p.add_argument("--threshold", help="distance band in km, or 'auto'")
    p.add_argument("--n-perm", dest="n_perm", type=int)
    p.add_argument("--out", required=True, help="output JSON")
    _add_common_flags(p)

    p = subs.add_parser("lisa", help="bivariate local clusters with permutation inference")
    p.add_argument("--excess-x", dest="excess_x", required=True)
    p.add_argument("--excess-y", dest="excess_y", required=True)
    p.add_argument("--geo", required=True)
    p.add_argument("--threshold", help="distance band in km, or 'auto'")
    p.add_argument("--n-perm", dest="n_perm", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out-prefix", dest="out_prefix", required=True)
    _add_common_flags(p)

    p = subs.add_parser("report", help="full pipeline: fit, excess, displacement, spatial")
    _add_input_flags(p)
    _add_common_flags(p)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--trees", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--threshold", help="distance band in km, or 'auto'")
    p.add_argument("--n-perm", dest="n_perm", type=int)
    p.add_argument("--alpha", type=float)

    return parser


def cmd_validate(args) -> int:
    config = _build_run_config(args)
    panel = _load_run_panel(config)
    print(
        f"ok: {panel.n_units} units, years {panel.years[0]}-{panel.years[-1]}, "
        f"{len(panel.periods)} periods, {panel.feb29_dropped} Feb 29 row(s) dropped"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    hotspot_center = hotspot_radius = None
    if args.hotspot:
        cx, cy, radius = (float(v) for v in args.hotspot.split(","))
        hotspot_center, hotspot_radius = (cx, cy), radius
    config = SynthConfig(
        n_units=args.units,
        shock_multiplier=args.shock_multiplier,
        affected_fraction=args.affected_fraction,
        harvesting_fraction=args.harvesting,
        hotspot_center=hotspot_center,
        hotspot_radius_km=hotspot_radius,
        master_seed=int(_merged(args, "seed", 0)),
    )
    panel, truth = generate_panel(config, n_workers=int(_merged(args, "workers", 1)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_panel(
        panel, out / "mortality.csv", out / "covariates.csv", out / "geo.csv"
    )
    write_periods_file(panel.periods, out / "periods.ini")
    write_truth(truth, out / "truth.csv")
    print(f"wrote synthetic panel ({panel.n_units} units) to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _build_run_config(args)
    panel = _load_run_panel(config)
    period = _find_period(panel, args.period)
    k = list(p.name for p in panel.periods).index(period.name)
    forest, mse = _fit_period_forest(panel, period, config, k)
    save_forest(forest, args.out)
    msg = f"wrote forest ({forest.n_trees} trees) to {args.out}"
    if mse is not None:
        msg += f"; held-out MSE {mse:.4f}"
    print(msg)
    return EXIT_OK


def _find_period(panel, name):
    for p in panel.periods:
        if p.name == name:
            return p
    raise DataError(
        f"period {name!r} not configured (have: "
        + ", ".join(p.name for p in panel.periods)
        + ")"
    )


def cmd_excess(args) -> int:
    config = _build_run_config(args)
    panel = _load_run_panel(config)
    period = _find_period(panel, args.period)
    forest = load_forest(args.forest)
    estimates = excess_by_unit(forest, panel, period, year=args.year)
    write_estimates(estimates, args.out)
    total = combine_estimates(estimates, "total")
    print(
        f"wrote {len(estimates)} estimates to {args.out} "
        f"(total excess {round(total.excess)}, {_pct_str(total.excess_pct)})"
    )
    return EXIT_OK


def _load_spatial_inputs(args):
    est_x = read_estimates(args.excess_x)
    est_y = read_estimates(args.excess_y)
    geo = pd.read_csv(args.geo, dtype={"unit_id": str}, float_precision="round_trip")
    coords = {
        str(r.unit_id): (float(r.x_km), float(r.y_km))
        for r in geo.itertuples(index=False)
    }
    by_y = {e.label: e for e in est_y}
    units, xs, ys = [], [], []
    for e in sorted(est_x, key=lambda e: e.label):
        o = by_y.get(e.label)
        if o is None or e.excess_pct is None or o.excess_pct is None:
            continue
        if e.label not in coords:
            raise DataError(f"unit {e.label!r} missing from geo file")
        units.append(e.label)
        xs.append(e.excess_pct)
        ys.append(o.excess_pct)
    if len(units) < 2:
        raise DataError("need at least two units with defined excess percentages")
    pts = np.array([coords[u] for u in units])
    raw = getattr(args, "threshold", None) or "auto"
    threshold = (
        min_connectivity_threshold(pts)
        if str(raw).lower() == "auto"
        else float(raw)
    )
    weights = build_weights(pts, threshold, unit_ids=tuple(units))
    return units, np.array(xs), np.array(ys), weights, threshold


def cmd_moran(args) -> int:
    units, xs, ys, weights, threshold = _load_spatial_inputs(args)
    n_perm = int(_merged(args, "n_perm", 999))
    seed = int(_merged(args, "seed", 0))
    result = global_moran_test(xs, ys, weights, n_perm=n_perm, master_seed=seed)
    doc = {
        "statistic": result.statistic,
        "n_permutations": result.n_permutations,
        "pseudo_p": result.pseudo_p,
        "threshold_km": threshold,
        "n_units": len(units),
    }
    _write_json(doc, args.out)
    print(
        f"global bivariate I = {result.statistic:.4f}, "
        f"pseudo p = {result.pseudo_p:.4f} ({n_perm} permutations)"
    )
    return EXIT_OK


def cmd_lisa(args) -> int:
    units, xs, ys, weights, threshold = _load_spatial_inputs(args)
    n_perm = int(_merged(args, "n_perm", 999))
    seed = int(_merged(args, "seed", 0))
    alpha = float(_merged(args, "alpha", 0.05))
    records = bivariate_lisa(
        xs,
        ys,
        weights,
        n_perm=n_perm,
        master_seed=seed,
        alpha=alpha,
        n_workers=int(_merged(args, "workers", 1)),
    )
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_lisa_csv(records, f"{prefix}.csv")
    geo = pd.read_csv(args.geo, dtype={"unit_id": str}, float_precision="round_trip")
    munis = tuple(
        Municipality(
            unit_id=str(r.unit_id),
            name=str(r.name),
            province=str(r.province),
            region=str(r.region),
            population=int(r.population),
            centroid_x_km=float(r.x_km),
            centroid_y_km=float(r.y_km),
        )
        for r in geo.sort_values("unit_id").itertuples(index=False)
        if str(r.unit_id) in set(units)
    )
    lookup_panel = PanelDataset(
        municipalities=munis, covariates={}, deaths={}, periods=(), years=()
    )
    export_lisa(
        records,
        lookup_panel,
        f"{prefix}_clusters.geojson",
        f"{prefix}_significance.geojson",
    )
    counts = {}
    for r in records:
        counts[r.cluster] = counts.get(r.cluster, 0) + 1
    print(
        f"lisa on {len(units)} units (threshold {threshold:.2f} km): "
        + ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    )
    return EXIT_OK


def cmd_report(args) -> int:
    config = _build_run_config(args)
    out = run_report(config)
    print(f"report written to {out}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "excess": cmd_excess,
    "moran": cmd_moran,
    "lisa": cmd_lisa,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._config_values = (
        _read_config_file(args.config) if getattr(args, "config", None) else {}
    )
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ExcessMortError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
