"""Shared helpers: small hand-built panels written as the three input files."""

import numpy as np
import pytest

from excessmort.panel import COVARIATE_NAMES

BASE_COVARIATES = {
    "share_male": 0.49,
    "share_65plus": 0.22,
    "share_65plus_male": 0.09,
    "share_80plus": 0.07,
    "share_80plus_male": 0.025,
    "resident_population": 10000,
    "deaths_prev_year": 110,
    "deaths_7wk_pre_outbreak": 15,
    "n_employees": 3000,
    "share_manufacturing": 0.2,
    "pm10": 25.0,
    "pop_density": 120.0,
    "urbanization_degree": 2,
    "has_hospital": 0,
    "neighbor_has_hospital": 1,
    "road_deaths_prev_year": 1,
}


def covariate_row(unit_id, **overrides):
    values = dict(BASE_COVARIATES, **overrides)
    return unit_id + "," + ",".join(str(values[c]) for c in COVARIATE_NAMES)


def write_inputs(tmp_path, units, deaths, covariate_overrides=None):
    """Write the three input CSVs; returns their paths.

    units: list of (unit_id, population, x_km, y_km) tuples.
    deaths: list of (unit_id, iso_date, count) tuples.
    """
    covariate_overrides = covariate_overrides or {}
    geo = tmp_path / "geo.csv"
    cov = tmp_path / "covariates.csv"
    mort = tmp_path / "mortality.csv"
    with open(geo, "w") as fh:
        fh.write("unit_id,name,province,region,population,x_km,y_km\n")
        for uid, pop, x, y in units:
            fh.write(f"{uid},Town {uid},P1,R1,{pop},{x},{y}\n")
    with open(cov, "w") as fh:
        fh.write("unit_id," + ",".join(COVARIATE_NAMES) + "\n")
        for uid, pop, _, _ in units:
            overrides = dict(covariate_overrides.get(uid, {}))
            overrides.setdefault("resident_population", pop)
            fh.write(covariate_row(uid, **overrides) + "\n")
    with open(mort, "w") as fh:
        fh.write("unit_id,date,deaths\n")
        for uid, date, count in deaths:
            fh.write(f"{uid},{date},{count}\n")
    return mort, cov, geo


def yearly_rows(unit_id, years, per_day=0, extras=()):
    """Sparse coverage rows: Jan 1 anchor per year (or one row per day)."""
    rows = []
    for year in years:
        if per_day:
            for month, ndays in enumerate(
                (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31), start=1
            ):
                for day in range(1, ndays + 1):
                    rows.append((unit_id, f"{year}-{month:02d}-{day:02d}", per_day))
        else:
            rows.append((unit_id, f"{year}-01-01", 0))
    rows.extend(extras)
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(20210203)
