"""Excess mortality against the learned counterfactual, and displacement.

Excess is always ``observed - predicted`` on unrounded predicted counts;
percentages are recomputed from summed counts when aggregating (never
averaged) and integer rounding is left to the report layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import panel as panel_mod
from .errors import (
    MixedPeriods,
    NonPositiveReferenceExcess,
    UnitWithoutCovariates,
    UnknownYear,
)
from .forest import Forest, predict_rates
from .panel import PanelDataset, Period, assemble_rows, period_deaths


@dataclass(frozen=True)
class ExcessEstimate:
    """Observed vs counterfactual deaths for one unit (or aggregate) and period.

    ``excess_pct`` is None when ``predicted`` is zero (undefined share).
    """

    label: str
    period: str
    observed: int
    predicted: float
    excess: float
    excess_pct: float | None


@dataclass(frozen=True)
class HarvestingSummary:
    """Short-run mortality displacement relative to a reference period."""

    reference_excess: float
    subsequent_deficit: float
    harvesting_ratio: float
    cumulative_excess: float


def compute_excess(observed: int, predicted: float, label: str, period: str) -> ExcessEstimate:
    """Excess = observed - predicted; percentage share of the counterfactual."""
    if predicted < 0:
        raise ValueError(f"predicted deaths must be >= 0, got {predicted}")
    if observed < 0:
        raise ValueError(f"observed deaths must be >= 0, got {observed}")
    excess = observed - predicted
    pct = 100.0 * excess / predicted if predicted > 0 else None
    return ExcessEstimate(
        label=label,
        period=period,
        observed=int(observed),
        predicted=float(predicted),
        excess=float(excess),
        excess_pct=pct,
    )


def predict_counterfactual(
    forest: Forest, panel: PanelDataset, period: Period, year: int | None = None
) -> dict[str, float]:
    """Predicted no-shock death counts for every unit in the target year.

    The forest predicts a rate per 10,000 from the unit's target-year
    covariate row; the count is ``rate * population / 10000``. By default the
    target year is the panel's last covered year.
    """
    if year is None:
        year = max(panel.years)
    if year not in panel.years:
        raise UnknownYear(f"year {year} not covered by the panel")
    for m in panel.municipalities:
        if m.unit_id not in panel.covariates:
            raise UnitWithoutCovariates(f"unit {m.unit_id!r} has no covariates")
    rows = assemble_rows(panel, period, [year])
    rates = predict_rates(forest, rows.features)
    out = {}
    for (unit_id, _), rate in zip(rows.keys, rates):
        pop = panel.municipality(unit_id).population
        out[unit_id] = float(rate) * pop / 10000.0
    return out


def intuitive_baseline(panel: PanelDataset, unit_id: str, period: Period, years=None) -> float:
    """Mean of the unit's period deaths over past years (default: all but the last)."""
    if years is None:
        last = max(panel.years)
        years = [y for y in panel.years if y != last]
    years = list(years)
    if not years:
        raise UnknownYear("intuitive baseline needs at least one year")
    counts = [period_deaths(panel, unit_id, y, period) for y in years]
    return float(np.mean(counts))


def excess_by_unit(
    forest: Forest, panel: PanelDataset, period: Period, year: int | None = None
) -> list[ExcessEstimate]:
    """Per-unit excess estimates for one period, in unit_id order."""
    if year is None:
        year = max(panel.years)
    predicted = predict_counterfactual(forest, panel, period, year)
    return [
        compute_excess(
            observed=period_deaths(panel, m.unit_id, year, period),
            predicted=predicted[m.unit_id],
            label=m.unit_id,
            period=period.name,
        )
        for m in panel.municipalities
    ]


def aggregate_excess(estimates, group_of) -> dict[str, ExcessEstimate]:
    """Aggregate estimates by group, summing counts and recomputing shares.

    ``group_of`` maps a unit label to its group label (a mapping or a
    callable); percentages are derived from the grouped sums, never averaged.
    All estimates must belong to one period.
    """
    estimates = list(estimates)
    if not estimates:
        return {}
    periods = {e.period for e in estimates}
    if len(periods) > 1:
        raise MixedPeriods(f"estimates span periods {sorted(periods)}")
    lookup = group_of if callable(group_of) else group_of.__getitem__
    observed: dict[str, int] = {}
    predicted: dict[str, float] = {}
    for e in estimates:
        g = lookup(e.label)
        observed[g] = observed.get(g, 0) + e.observed
        predicted[g] = predicted.get(g, 0.0) + e.predicted
    period = next(iter(periods))
    return {
        g: compute_excess(observed[g], predicted[g], g, period)
        for g in sorted(observed)
    }


def combine_estimates(estimates, label: str) -> ExcessEstimate:
    """Sum a list of same-period estimates into a single aggregate."""
    grouped = aggregate_excess(estimates, lambda _: label)
    return grouped[label]


def harvesting_summary(period_estimates) -> HarvestingSummary:
    """Displacement accounting over an ordered sequence of period aggregates.

    The first period anchors the reference excess; later periods contribute
    to the deficit only when their excess is negative.
    """
    period_estimates = list(period_estimates)
    if not period_estimates:
        raise ValueError("need at least one period estimate")
    reference = period_estimates[0].excess
    if reference <= 0:
        raise NonPositiveReferenceExcess(
            f"reference-period excess must be positive, got {reference}"
        )
    deficit = sum(max(0.0, -e.excess) for e in period_estimates[1:])
    cumulative = sum(e.excess for e in period_estimates)
    return HarvestingSummary(
        reference_excess=float(reference),
        subsequent_deficit=float(deficit),
        harvesting_ratio=float(deficit / reference),
        cumulative_excess=float(cumulative),
    )


# delimited-text exchange ---------------------------------------------------

ESTIMATE_COLUMNS = ("unit_id", "period", "observed", "predicted", "excess", "excess_pct")


def write_estimates(estimates, path) -> None:
    """Write estimates as delimited text; floats keep full precision."""
    with open(path, "w") as fh:
        fh.write(",".join(ESTIMATE_COLUMNS) + "\n")
        for e in estimates:
            pct = "" if e.excess_pct is None else panel_mod.fmt_number(e.excess_pct)
            fh.write(
                f"{e.label},{e.period},{e.observed},"
                f"{panel_mod.fmt_number(e.predicted)},{panel_mod.fmt_number(e.excess)},{pct}\n"
            )


def read_estimates(path) -> list[ExcessEstimate]:
    df = pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")
    missing = [c for c in ESTIMATE_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
    out = []
    for row in df.itertuples(index=False):
        pct = None if pd.isna(row.excess_pct) else float(row.excess_pct)
        out.append(
            ExcessEstimate(
                label=str(row.unit_id),
                period=str(row.period),
                observed=int(row.observed),
                predicted=float(row.predicted),
                excess=float(row.excess),
                excess_pct=pct,
            )
        )
    return out
