"""Synthetic mortality panels with known ground truth.

Daily deaths are Poisson draws whose intensity is a log-linear function of
the unit's covariates (an annual rate per 10,000 scaled by population),
modulated by a cosine seasonal factor that averages to one over the year.
In the final year, affected units get their shock-period intensity
multiplied by ``shock_multiplier``, and the intensity of the next period is
reduced so that the expected removed deaths equal ``harvesting_fraction``
times the expected extra shock deaths. The generator is deterministic: unit
``i`` draws everything from a generator seeded with ``(master_seed, i)``
(coordinates first, so hotspot membership can be resolved before the main
pass), and the affected-set draw uses the slot ``n_units``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ._parallel import run_chunked
from .errors import InfeasibleHarvesting, MisalignedTruth
from .panel import (
    COVARIATE_NAMES,
    DAYS_PER_YEAR,
    DEFAULT_PERIODS,
    Municipality,
    PanelDataset,
    Period,
    validate_periods,
)

_SEASON_PEAK_DAY = 14  # mid-January mortality peak

# Annual log-rate link: rate per 10k = base * exp(coefficients . covariates).
# Defaults weight only bounded covariates so the raw-scale link stays tame;
# they give a mean around 110 deaths per 10k with ~20% spread across units.
_DEFAULT_COEFFICIENTS: dict[str, float] = {
    "share_male": -0.5,
    "share_65plus": 3.0,
    "share_65plus_male": 0.8,
    "share_80plus": 5.0,
    "pm10": 0.008,
    "urbanization_degree": -0.03,
}
DEFAULT_BASE_RATE_PER_10K = 40.0
DEFAULT_COEFFICIENT_VECTOR: tuple[float, ...] = tuple(
    _DEFAULT_COEFFICIENTS.get(name, 0.0) for name in COVARIATE_NAMES
)


@dataclass(frozen=True)
class SynthConfig:
    n_units: int
    years: tuple[int, ...] = (2015, 2016, 2017, 2018, 2019, 2020)
    periods: tuple[Period, ...] = DEFAULT_PERIODS
    base_rate_per_10k: float = DEFAULT_BASE_RATE_PER_10K
    baseline_coefficients: tuple[float, ...] = DEFAULT_COEFFICIENT_VECTOR
    seasonality_amplitude: float = 0.2
    shock_period: str = "first_wave"
    shock_multiplier: float = 1.0
    affected_fraction: float = 0.25
    hotspot_center: tuple[float, float] | None = None
    hotspot_radius_km: float | None = None
    harvesting_fraction: float = 0.0
    population_range: tuple[int, int] = (500, 500_000)
    master_seed: int = 0

    def __post_init__(self):
        if self.n_units < 1:
            raise ValueError("n_units must be positive")
        if len(self.baseline_coefficients) != len(COVARIATE_NAMES):
            raise ValueError(
                f"baseline_coefficients must have {len(COVARIATE_NAMES)} entries"
            )
        if self.shock_multiplier < 1.0:
            raise ValueError("shock_multiplier must be >= 1")
        if not 0.0 <= self.affected_fraction <= 1.0:
            raise ValueError("affected_fraction must be in [0, 1]")
        if not 0.0 <= self.harvesting_fraction <= 1.0:
            raise ValueError("harvesting_fraction must be in [0, 1]")
        if not 0.0 <= self.seasonality_amplitude < 1.0:
            raise ValueError("seasonality_amplitude must be in [0, 1)")
        if (self.hotspot_center is None) != (self.hotspot_radius_km is None):
            raise ValueError("hotspot_center and hotspot_radius_km go together")
        validate_periods(self.periods)
        if self.shock_period not in {p.name for p in self.periods}:
            raise ValueError(f"shock_period {self.shock_period!r} not configured")

    @property
    def shock_year(self) -> int:
        return max(self.years)

    @property
    def side_km(self) -> float:
        """Square study-area side; ~4 km spacing between scattered units."""
        return float(np.ceil(np.sqrt(self.n_units)) * 4.0)

    def shock_index(self) -> int:
        return next(
            i for i, p in enumerate(self.periods) if p.name == self.shock_period
        )


@dataclass(frozen=True)
class SynthTruth:
    """Expected (noise-free) quantities behind a generated panel."""

    table: pd.DataFrame  # unit_id, period, expected_baseline, expected_excess, expected_displaced
    affected: tuple[str, ...]
    harvesting_fraction: float
    period_order: tuple[str, ...]

    def expected(self, unit_id: str, period: str, column: str) -> float:
        t = self.table
        row = t[(t.unit_id == unit_id) & (t.period == period)]
        if row.empty:
            raise KeyError((unit_id, period))
        return float(row[column].iloc[0])


@dataclass(frozen=True)
class RecoveryMetrics:
    bias: float
    mae: float
    estimated_ratio: float | None
    true_ratio: float | None
    ratio_abs_error: float | None


def _unit_id(i: int, n: int) -> str:
    width = max(4, len(str(n - 1)))
    return f"U{i:0{width}d}"


def _seasonal_profile(amplitude: float) -> np.ndarray:
    days = np.arange(DAYS_PER_YEAR)
    return 1.0 + amplitude * np.cos(2.0 * np.pi * (days - _SEASON_PEAK_DAY) / DAYS_PER_YEAR)


def _unit_coords(i: int, config: SynthConfig) -> tuple[float, float]:
    # coordinates are the first two draws of the unit's stream
    rng = np.random.default_rng((config.master_seed, i))
    x = float(rng.uniform(0.0, config.side_km))
    y = float(rng.uniform(0.0, config.side_km))
    return x, y


def _generate_unit_range(start, stop, config: SynthConfig, affected_flags):
    season = _seasonal_profile(config.seasonality_amplitude)
    coeffs = np.asarray(config.baseline_coefficients)
    shock = config.periods[config.shock_index()]
    follow = (
        config.periods[config.shock_index() + 1]
        if config.shock_index() + 1 < len(config.periods)
        else None
    )
    out = []
    for i in range(start, stop):
        rng = np.random.default_rng((config.master_seed, i))
        x = float(rng.uniform(0.0, config.side_km))
        y = float(rng.uniform(0.0, config.side_km))

        share_male = rng.uniform(0.46, 0.54)
        share_65 = rng.uniform(0.15, 0.30)
        share_65_male = share_65 * rng.uniform(0.40, 0.47)
        share_80 = share_65 * rng.uniform(0.22, 0.38)
        share_80_male = share_80 * rng.uniform(0.30, 0.40)
        lo, hi = config.population_range
        population = int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))
        population = max(population, 1)
        n_employees = float(round(population * rng.uniform(0.15, 0.45)))
        share_manufacturing = rng.uniform(0.02, 0.40)
        pm10 = rng.uniform(12.0, 42.0)
        area_km2 = np.exp(rng.uniform(np.log(2.0), np.log(250.0)))
        pop_density = population / area_km2
        urbanization = 1.0 + (population > 5000) + (population > 50000)
        has_hospital = float(rng.random() < min(0.85, 0.02 + population / 120000.0))
        neighbor_hospital = float(rng.random() < 0.35 + 0.25 * has_hospital)
        road_deaths = float(rng.poisson(population * 5e-5))

        vec = np.zeros(len(COVARIATE_NAMES))
        named = {
            "share_male": share_male,
            "share_65plus": share_65,
            "share_65plus_male": share_65_male,
            "share_80plus": share_80,
            "share_80plus_male": share_80_male,
            "resident_population": float(population),
            "n_employees": n_employees,
            "share_manufacturing": share_manufacturing,
            "pm10": pm10,
            "pop_density": pop_density,
            "urbanization_degree": urbanization,
            "has_hospital": has_hospital,
            "neighbor_has_hospital": neighbor_hospital,
            "road_deaths_prev_year": road_deaths,
        }
        for name, value in named.items():
            vec[COVARIATE_NAMES.index(name)] = value

        rate_per_10k = config.base_rate_per_10k * float(np.exp(coeffs @ vec))
        annual_deaths = rate_per_10k * population / 10000.0
        # stand-ins for the year before coverage; the loader re-derives
        # these covariates per row year from the death series itself
        vec[COVARIATE_NAMES.index("deaths_prev_year")] = float(round(annual_deaths))
        vec[COVARIATE_NAMES.index("deaths_7wk_pre_outbreak")] = float(
            round(annual_deaths * 49.0 / 365.0)
        )

        lam = annual_deaths / DAYS_PER_YEAR * season
        affected = bool(affected_flags[i])
        shock_sl = slice(shock.start_index, shock.end_index + 1)
        follow_sl = (
            slice(follow.start_index, follow.end_index + 1) if follow else None
        )
        extra = (config.shock_multiplier - 1.0) * float(lam[shock_sl].sum())
        displaced = config.harvesting_fraction * extra if affected else 0.0

        lam_shock_year = lam.copy()
        if affected and config.shock_multiplier > 1.0:
            lam_shock_year[shock_sl] *= config.shock_multiplier
            if displaced > 0.0:
                if follow_sl is None:
                    raise InfeasibleHarvesting(
                        "harvesting_fraction > 0 needs a period after the shock period"
                    )
                follow_base = float(lam[follow_sl].sum())
                rho = displaced / follow_base
                if rho > 1.0:
                    raise InfeasibleHarvesting(
                        f"unit {_unit_id(i, config.n_units)}: removing "
                        f"{displaced:.1f} expected deaths exceeds the following "
                        f"window's {follow_base:.1f}"
                    )
                lam_shock_year[follow_sl] *= 1.0 - rho

        deaths = {}
        for year in sorted(config.years):
            lam_year = lam_shock_year if year == config.shock_year else lam
            deaths[year] = rng.poisson(lam_year).astype(np.int64)

        truth_rows = []
        for k, p in enumerate(config.periods):
            sl = slice(p.start_index, p.end_index + 1)
            baseline = float(lam[sl].sum())
            if affected and p.name == shock.name:
                excess = extra
            elif affected and follow is not None and p.name == follow.name:
                excess = -displaced
            else:
                excess = 0.0
            disp = displaced if (affected and follow is not None and p.name == follow.name) else 0.0
            truth_rows.append((p.name, baseline, excess, disp))

        out.append(
            {
                "x": x,
                "y": y,
                "population": population,
                "covariates": vec,
                "deaths": deaths,
                "truth_rows": truth_rows,
            }
        )
    return out


def generate_panel(config: SynthConfig, n_workers: int = 1) -> tuple[PanelDataset, SynthTruth]:
    """Draw a panel plus its analytic truth table (deterministic in the seed)."""
    n = config.n_units
    if config.hotspot_center is not None:
        cx, cy = config.hotspot_center
        flags = np.zeros(n, dtype=bool)
        for i in range(n):
            x, y = _unit_coords(i, config)
            flags[i] = (x - cx) ** 2 + (y - cy) ** 2 <= config.hotspot_radius_km**2
    else:
        k = int(round(config.affected_fraction * n))
        rng = np.random.default_rng((config.master_seed, n))
        chosen = rng.permutation(n)[:k]
        flags = np.zeros(n, dtype=bool)
        flags[chosen] = True
    if config.shock_multiplier == 1.0:
        flags = np.zeros(n, dtype=bool)

    payloads = run_chunked(
        _generate_unit_range, n, n_workers, args=(config, flags)
    )

    municipalities = []
    covariates = {}
    deaths = {}
    truth_records = []
    side = config.side_km
    for i, payload in enumerate(payloads):
        uid = _unit_id(i, n)
        x, y = payload["x"], payload["y"]
        province = f"P{int(4 * x // side)}{int(4 * y // side)}"
        region = f"R{int(2 * x // side)}{int(2 * y // side)}"
        municipalities.append(
            Municipality(
                unit_id=uid,
                name=f"Synth {uid}",
                province=province,
                region=region,
                population=payload["population"],
                centroid_x_km=x,
                centroid_y_km=y,
            )
        )
        covariates[uid] = payload["covariates"]
        deaths[uid] = payload["deaths"]
        for period_name, baseline, excess, disp in payload["truth_rows"]:
            truth_records.append(
                {
                    "unit_id": uid,
                    "period": period_name,
                    "expected_baseline": baseline,
                    "expected_excess": excess,
                    "expected_displaced": disp,
                }
            )

    panel = PanelDataset(
        municipalities=tuple(municipalities),
        covariates=covariates,
        deaths=deaths,
        periods=config.periods,
        years=tuple(sorted(config.years)),
    )
    truth = SynthTruth(
        table=pd.DataFrame.from_records(truth_records),
        affected=tuple(
            _unit_id(i, n) for i in range(n) if flags[i]
        ),
        harvesting_fraction=config.harvesting_fraction,
        period_order=tuple(p.name for p in config.periods),
    )
    return panel, truth


def evaluate_recovery(estimates, truth: SynthTruth) -> RecoveryMetrics:
    """Error metrics of per-unit excess estimates against the synthetic truth."""
    est = {(e.label, e.period): e for e in estimates}
    truth_keys = {
        (row.unit_id, row.period) for row in truth.table.itertuples(index=False)
    }
    if set(est) != truth_keys:
        missing = sorted(truth_keys - set(est))[:3]
        extra = sorted(set(est) - truth_keys)[:3]
        raise MisalignedTruth(
            f"estimates and truth keys differ (missing {missing}, extra {extra})"
        )

    errors = np.array(
        [
            est[(row.unit_id, row.period)].excess - row.expected_excess
            for row in truth.table.itertuples(index=False)
        ]
    )
    bias = float(errors.mean())
    mae = float(np.abs(errors).mean())

    ref_period = truth.period_order[0]
    per_period_excess = {
        p: sum(e.excess for (label, period), e in est.items() if period == p)
        for p in truth.period_order
    }
    true_by_period = truth.table.groupby("period")["expected_excess"].sum()
    true_ref = float(true_by_period.get(ref_period, 0.0))
    estimated_ratio = true_ratio = ratio_err = None
    if true_ref > 0:
        true_deficit = sum(
            max(0.0, -float(true_by_period[p])) for p in truth.period_order[1:]
        )
        true_ratio = true_deficit / true_ref
        est_ref = per_period_excess[ref_period]
        if est_ref > 0:
            est_deficit = sum(
                max(0.0, -per_period_excess[p]) for p in truth.period_order[1:]
            )
            estimated_ratio = est_deficit / est_ref
            ratio_err = abs(estimated_ratio - true_ratio)
    return RecoveryMetrics(
        bias=bias,
        mae=mae,
        estimated_ratio=estimated_ratio,
        true_ratio=true_ratio,
        ratio_abs_error=ratio_err,
    )


def write_truth(truth: SynthTruth, path) -> None:
    truth.table.to_csv(path, index=False)
