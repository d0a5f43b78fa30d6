"""Municipality mortality panel: loading, validation, and row assembly.

The panel joins three delimited text files (mortality, covariates, geo) into
an immutable :class:`PanelDataset`. All dates live in a 365-day calendar:
February 29 rows are dropped at load time (with a counted warning) so that
every year has identical day slots and period sums stay comparable across
years.

Input schemas (comma-separated, header row required):

* mortality file: ``unit_id, date, deaths`` with ISO-8601 dates. Days with
  zero deaths may be omitted, but every unit must appear at least once in
  every covered year.
* covariate file: ``unit_id`` followed by the 16 columns of
  :data:`COVARIATE_NAMES`, in any column order.
* geo file: ``unit_id, name, province, region, population, x_km, y_km``
  with planar projected centroid coordinates in kilometers.
"""

from __future__ import annotations

import configparser
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DuplicateDay,
    IncompleteCoverage,
    InvalidCovariate,
    InvalidPeriod,
    MissingColumn,
    NegativeCount,
    UnknownUnit,
    UnknownYear,
    ZeroPopulation,
)

COVARIATE_NAMES: tuple[str, ...] = (
    "share_male",
    "share_65plus",
    "share_65plus_male",
    "share_80plus",
    "share_80plus_male",
    "resident_population",
    "deaths_prev_year",
    "deaths_7wk_pre_outbreak",
    "n_employees",
    "share_manufacturing",
    "pm10",
    "pop_density",
    "urbanization_degree",
    "has_hospital",
    "neighbor_has_hospital",
    "road_deaths_prev_year",
)

N_COVARIATES = len(COVARIATE_NAMES)

_SHARE_COVARIATES = frozenset(
    c for c in COVARIATE_NAMES if c.startswith("share_")
)
_BINARY_COVARIATES = frozenset({"has_hospital", "neighbor_has_hospital"})

# Covariates re-derived per row year from the death series; the remaining
# columns are treated as static unit attributes.
DEATHS_PREV_YEAR = COVARIATE_NAMES.index("deaths_prev_year")
DEATHS_7WK_PRE_OUTBREAK = COVARIATE_NAMES.index("deaths_7wk_pre_outbreak")

# 365-day calendar (no leap day)
_MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_OFFSETS = tuple(int(x) for x in np.concatenate([[0], np.cumsum(_MONTH_DAYS)]))
DAYS_PER_YEAR = 365

_PRE_OUTBREAK_DAYS = 49  # seven weeks

GEO_COLUMNS = ("unit_id", "name", "province", "region", "population", "x_km", "y_km")
MORTALITY_COLUMNS = ("unit_id", "date", "deaths")


def day_index(month: int, day: int) -> int:
    """0-based slot of (month, day) in the 365-day calendar."""
    if not 1 <= month <= 12:
        raise InvalidPeriod(f"month out of range: {month}")
    if not 1 <= day <= _MONTH_DAYS[month - 1]:
        raise InvalidPeriod(f"day out of range for month {month}: {day}")
    return _MONTH_OFFSETS[month - 1] + day - 1


def month_day(index: int) -> tuple[int, int]:
    """Inverse of :func:`day_index`."""
    if not 0 <= index < DAYS_PER_YEAR:
        raise InvalidPeriod(f"day index out of range: {index}")
    month = int(np.searchsorted(_MONTH_OFFSETS, index, side="right"))
    return month, index - _MONTH_OFFSETS[month - 1] + 1


@dataclass(frozen=True)
class Period:
    """A named within-year date window, bounds inclusive."""

    name: str
    start: tuple[int, int]
    end: tuple[int, int]

    def __post_init__(self):
        if self.start_index > self.end_index:
            raise InvalidPeriod(f"period {self.name!r}: start after end")

    @property
    def start_index(self) -> int:
        return day_index(*self.start)

    @property
    def end_index(self) -> int:
        return day_index(*self.end)

    @property
    def n_days(self) -> int:
        return self.end_index - self.start_index + 1


DEFAULT_PERIODS: tuple[Period, ...] = (
    Period("first_wave", (2, 21), (5, 31)),
    Period("summer_break", (6, 1), (9, 30)),
    Period("second_wave_onset", (10, 1), (11, 30)),
)


def validate_periods(periods) -> tuple[Period, ...]:
    """Check pairwise non-overlap and return the periods as a tuple."""
    periods = tuple(periods)
    seen = {}
    for p in periods:
        if p.name in seen:
            raise InvalidPeriod(f"duplicate period name {p.name!r}")
        seen[p.name] = p
    ordered = sorted(periods, key=lambda p: p.start_index)
    for a, b in zip(ordered, ordered[1:]):
        if b.start_index <= a.end_index:
            raise InvalidPeriod(f"periods {a.name!r} and {b.name!r} overlap")
    return periods


@dataclass(frozen=True)
class Municipality:
    unit_id: str
    name: str
    province: str
    region: str
    population: int
    centroid_x_km: float
    centroid_y_km: float


@dataclass(frozen=True)
class DeathSeries:
    """One observed day of deaths for one unit."""

    unit_id: str
    year: int
    month: int
    day: int
    count: int


@dataclass(frozen=True)
class TrainingRows:
    """Aligned feature matrix, targets, and (unit, year) row keys."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] = COVARIATE_NAMES
    keys: tuple[tuple[str, int], ...] | None = None

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices) -> "TrainingRows":
        indices = np.asarray(indices, dtype=np.intp)
        keys = None
        if self.keys is not None:
            keys = tuple(self.keys[i] for i in indices)
        return TrainingRows(
            features=self.features[indices],
            targets=self.targets[indices],
            feature_names=self.feature_names,
            keys=keys,
        )


@dataclass
class PanelDataset:
    """Validated, analysis-ready mortality panel.

    Treated as immutable after construction; all downstream modules only
    read from it.
    """

    municipalities: tuple[Municipality, ...]
    covariates: dict[str, np.ndarray]
    deaths: dict[str, dict[int, np.ndarray]]
    periods: tuple[Period, ...]
    years: tuple[int, ...]
    feb29_dropped: int = 0
    _by_id: dict[str, Municipality] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {m.unit_id: m for m in self.municipalities}

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(m.unit_id for m in self.municipalities)

    @property
    def n_units(self) -> int:
        return len(self.municipalities)

    def municipality(self, unit_id: str) -> Municipality:
        try:
            return self._by_id[unit_id]
        except KeyError:
            raise UnknownUnit(f"unknown unit {unit_id!r}") from None

    def centroids(self) -> np.ndarray:
        """(n, 2) array of centroid coordinates in unit_id order."""
        return np.array(
            [[m.centroid_x_km, m.centroid_y_km] for m in self.municipalities]
        )

    def iter_deaths(self):
        """Yield one :class:`DeathSeries` per recorded nonzero day."""
        for m in self.municipalities:
            for year in self.years:
                counts = self.deaths[m.unit_id][year]
                for idx in np.nonzero(counts)[0]:
                    month, day = month_day(int(idx))
                    yield DeathSeries(m.unit_id, year, month, day, int(counts[idx]))

    def equals(self, other: "PanelDataset") -> bool:
        if self.municipalities != other.municipalities:
            return False
        if self.periods != other.periods or self.years != other.years:
            return False
        if set(self.covariates) != set(other.covariates):
            return False
        for uid, vec in self.covariates.items():
            if not np.array_equal(vec, other.covariates[uid]):
                return False
        for uid in self.covariates:
            for year in self.years:
                if not np.array_equal(self.deaths[uid][year], other.deaths[uid][year]):
                    return False
        return True


def _require_columns(df: pd.DataFrame, required, path) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")


def _read_table(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    # round_trip parsing keeps export -> load lossless for float columns
    return pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")


def load_panel(
    mortality_file,
    covariate_file,
    geo_file,
    periods=DEFAULT_PERIODS,
    years=None,
) -> PanelDataset:
    """Load and validate the three panel input files.

    February 29 rows are dropped (a warning reports the count). Units whose
    death series does not touch every covered year are rejected together in
    one :class:`IncompleteCoverage` error. ``years`` pins the expected
    coverage; by default it is the union of years present in the mortality
    file.
    """
    periods = validate_periods(periods)

    geo = _read_table(geo_file)
    _require_columns(geo, GEO_COLUMNS, geo_file)
    if geo["unit_id"].duplicated().any():
        dup = geo.loc[geo["unit_id"].duplicated(), "unit_id"].iloc[0]
        raise DataError(f"{geo_file}: duplicate unit_id {dup!r}")

    municipalities = []
    for row in geo.sort_values("unit_id").itertuples(index=False):
        population = int(row.population)
        if population <= 0:
            raise NegativeCount(
                f"unit {row.unit_id!r}: population must be positive, got {population}"
            )
        x, y = float(row.x_km), float(row.y_km)
        if not (np.isfinite(x) and np.isfinite(y)):
            raise DataError(f"unit {row.unit_id!r}: non-finite centroid coordinates")
        municipalities.append(
            Municipality(
                unit_id=str(row.unit_id),
                name=str(row.name),
                province=str(row.province),
                region=str(row.region),
                population=population,
                centroid_x_km=x,
                centroid_y_km=y,
            )
        )
    known_units = {m.unit_id for m in municipalities}

    cov = _read_table(covariate_file)
    _require_columns(cov, ("unit_id",) + COVARIATE_NAMES, covariate_file)
    covariates: dict[str, np.ndarray] = {}
    for row in cov.itertuples(index=False):
        uid = str(row.unit_id)
        if uid not in known_units:
            raise UnknownUnit(f"{covariate_file}: unit {uid!r} not in geo file")
        if uid in covariates:
            raise DataError(f"{covariate_file}: duplicate unit_id {uid!r}")
        covariates[uid] = _validate_covariates(uid, row)
    lacking = sorted(known_units - set(covariates))
    if lacking:
        raise UnknownUnit(
            "unit(s) without covariate vector: " + ", ".join(lacking)
        )

    mort = _read_table(mortality_file)
    _require_columns(mort, MORTALITY_COLUMNS, mortality_file)
    deaths, years_found, feb29_dropped = _build_death_arrays(
        mort, known_units, mortality_file
    )
    if feb29_dropped:
        warnings.warn(
            f"dropped {feb29_dropped} February 29 row(s) from {mortality_file}",
            stacklevel=2,
        )

    years = tuple(sorted(years_found if years is None else years))
    if not years:
        raise DataError(f"{mortality_file}: no usable mortality rows")
    incomplete = []
    for m in municipalities:
        unit_years = deaths.get(m.unit_id, {})
        if any(y not in unit_years for y in years):
            incomplete.append(m.unit_id)
        else:
            # fill years outside the pinned range defensively
            deaths[m.unit_id] = {
                y: unit_years.get(y, np.zeros(DAYS_PER_YEAR, dtype=np.int64))
                for y in years
            }
    if incomplete:
        raise IncompleteCoverage(
            "unit(s) with incomplete year coverage: " + ", ".join(sorted(incomplete))
        )

    return PanelDataset(
        municipalities=tuple(municipalities),
        covariates=covariates,
        deaths=deaths,
        periods=periods,
        years=years,
        feb29_dropped=feb29_dropped,
    )


def _validate_covariates(uid: str, row) -> np.ndarray:
    vec = np.empty(N_COVARIATES)
    for i, name in enumerate(COVARIATE_NAMES):
        value = getattr(row, name)
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise InvalidCovariate(
                f"unit {uid!r}: covariate {name!r} is not numeric: {value!r}"
            ) from None
        if not np.isfinite(value):
            raise InvalidCovariate(f"unit {uid!r}: covariate {name!r} is missing")
        if name in _BINARY_COVARIATES and value not in (0.0, 1.0):
            raise InvalidCovariate(
                f"unit {uid!r}: covariate {name!r} must be 0 or 1, got {value}"
            )
        if name in _SHARE_COVARIATES and not 0.0 <= value <= 1.0:
            raise InvalidCovariate(
                f"unit {uid!r}: covariate {name!r} outside [0, 1]: {value}"
            )
        if name not in _SHARE_COVARIATES and value < 0.0:
            raise InvalidCovariate(
                f"unit {uid!r}: covariate {name!r} is negative: {value}"
            )
        vec[i] = value
    return vec


def _build_death_arrays(mort: pd.DataFrame, known_units, path):
    mort = mort.copy()
    try:
        dates = pd.to_datetime(mort["date"], format="%Y-%m-%d")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable date: {exc}") from None
    counts = pd.to_numeric(mort["deaths"], errors="coerce")
    if counts.isna().any():
        bad = mort.loc[counts.isna()].iloc[0]
        raise DataError(
            f"{path}: non-numeric death count for unit {bad.unit_id!r} on {bad.date}"
        )
    if (counts < 0).any():
        bad = mort.loc[counts < 0].iloc[0]
        raise NegativeCount(
            f"{path}: negative death count for unit {bad.unit_id!r} on {bad.date}"
        )
    dup_mask = mort.duplicated(subset=["unit_id", "date"])
    if dup_mask.any():
        bad = mort.loc[dup_mask].iloc[0]
        raise DuplicateDay(
            f"{path}: duplicate day for unit {bad.unit_id!r} on {bad.date}"
        )

    month = dates.dt.month.to_numpy()
    day = dates.dt.day.to_numpy()
    year = dates.dt.year.to_numpy()
    unit = mort["unit_id"].astype(str).to_numpy()
    count = counts.to_numpy().astype(np.int64)

    unknown = ~np.isin(unit, list(known_units))
    if unknown.any():
        raise UnknownUnit(
            f"{path}: unit {unit[unknown][0]!r} not in geo file"
        )

    feb29 = (month == 2) & (day == 29)
    feb29_dropped = int(feb29.sum())
    if feb29_dropped:
        keep = ~feb29
        month, day, year, unit, count = (
            month[keep],
            day[keep],
            year[keep],
            unit[keep],
            count[keep],
        )

    offsets = np.asarray(_MONTH_OFFSETS[:12])
    doy = offsets[month - 1] + day - 1

    deaths: dict[str, dict[int, np.ndarray]] = {}
    if len(unit) == 0:
        return deaths, set(), feb29_dropped
    order = np.lexsort((doy, year, unit))
    unit, year, doy, count = unit[order], year[order], doy[order], count[order]
    boundaries = np.flatnonzero(
        np.r_[True, (unit[1:] != unit[:-1]) | (year[1:] != year[:-1])]
    )
    years_found: set[int] = set()
    for start, stop in zip(boundaries, np.r_[boundaries[1:], len(unit)]):
        uid, yr = unit[start], int(year[start])
        arr = np.zeros(DAYS_PER_YEAR, dtype=np.int64)
        arr[doy[start:stop]] = count[start:stop]
        deaths.setdefault(uid, {})[yr] = arr
        years_found.add(yr)
    return deaths, years_found, feb29_dropped


def period_deaths(panel: PanelDataset, unit_id: str, year: int, period: Period) -> int:
    """Cumulative deaths for a unit within a period of one year."""
    m = panel.municipality(unit_id)  # raises UnknownUnit
    if year not in panel.years:
        raise UnknownYear(f"year {year} not covered by the panel")
    counts = panel.deaths[m.unit_id][year]
    return int(counts[period.start_index : period.end_index + 1].sum())


def death_rate(count: int, population: int) -> float:
    """Deaths per 10,000 inhabitants."""
    if population <= 0:
        raise ZeroPopulation(f"population must be positive, got {population}")
    if count < 0:
        raise NegativeCount(f"death count must be non-negative, got {count}")
    return 10000.0 * count / population


def pre_outbreak_window(panel: PanelDataset) -> tuple[int, int]:
    """Half-open day-index window of the seven weeks before the first period.

    Anchored at the first configured period's start day and clipped at
    January 1; with the default configuration this is January 3 through
    February 20.
    """
    anchor = (
        panel.periods[0].start_index if panel.periods else day_index(2, 21)
    )
    return max(0, anchor - _PRE_OUTBREAK_DAYS), anchor


def assemble_rows(panel: PanelDataset, period: Period, years) -> TrainingRows:
    """One feature/target row per (municipality, year) pair.

    Features are the 16 covariates with the death-derived ones re-measured
    for the row's year: ``deaths_prev_year`` is the unit's total deaths in
    the preceding covered year (the static file value stands in when the
    preceding year is outside coverage) and ``deaths_7wk_pre_outbreak`` is
    the unit's deaths in the pre-outbreak window of the row's year. The
    target is the period death rate per 10,000. Rows are ordered by unit_id
    then year.
    """
    years = list(years)
    for y in years:
        if y not in panel.years:
            raise UnknownYear(f"year {y} not covered by the panel")

    window_start, window_stop = pre_outbreak_window(panel)
    n_rows = panel.n_units * len(years)
    features = np.empty((n_rows, N_COVARIATES))
    targets = np.empty(n_rows)
    keys = []
    r = 0
    for m in panel.municipalities:
        base = panel.covariates[m.unit_id]
        unit_years = panel.deaths[m.unit_id]
        for y in years:
            vec = base.copy()
            if (y - 1) in unit_years:
                vec[DEATHS_PREV_YEAR] = float(unit_years[y - 1].sum())
            vec[DEATHS_7WK_PRE_OUTBREAK] = float(
                unit_years[y][window_start:window_stop].sum()
            )
            features[r] = vec
            targets[r] = death_rate(
                int(unit_years[y][period.start_index : period.end_index + 1].sum()),
                m.population,
            )
            keys.append((m.unit_id, y))
            r += 1
    return TrainingRows(
        features=features,
        targets=targets,
        feature_names=COVARIATE_NAMES,
        keys=tuple(keys),
    )


# file round-trip ---------------------------------------------------------


def fmt_number(value: float) -> str:
    """Exact round-trip text for a float; plain digits for integral values."""
    f = float(value)
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def export_panel(panel: PanelDataset, mortality_file, covariate_file, geo_file) -> None:
    """Write the three input files back out.

    Zero-death days are omitted, except that each (unit, year) keeps at
    least one row (January 1) so coverage survives a reload. Reloading the
    exported files reproduces an equal dataset.
    """
    with open(geo_file, "w") as fh:
        fh.write(",".join(GEO_COLUMNS) + "\n")
        for m in panel.municipalities:
            fh.write(
                f"{m.unit_id},{m.name},{m.province},{m.region},"
                f"{m.population},{fmt_number(m.centroid_x_km)},{fmt_number(m.centroid_y_km)}\n"
            )

    with open(covariate_file, "w") as fh:
        fh.write("unit_id," + ",".join(COVARIATE_NAMES) + "\n")
        for m in panel.municipalities:
            vec = panel.covariates[m.unit_id]
            fh.write(m.unit_id + "," + ",".join(fmt_number(v) for v in vec) + "\n")

    with open(mortality_file, "w") as fh:
        fh.write(",".join(MORTALITY_COLUMNS) + "\n")
        for m in panel.municipalities:
            for year in panel.years:
                counts = panel.deaths[m.unit_id][year]
                nonzero = np.nonzero(counts)[0]
                if len(nonzero) == 0 or nonzero[0] != 0:
                    fh.write(f"{m.unit_id},{year}-01-01,{counts[0]}\n")
                for idx in nonzero:
                    month, day = month_day(int(idx))
                    fh.write(
                        f"{m.unit_id},{year}-{month:02d}-{day:02d},{counts[idx]}\n"
                    )


# period configuration ------------------------------------------------------


def parse_periods_file(path) -> tuple[Period, ...]:
    """Read a periods config: a ``[periods]`` section of name = MM-DD..MM-DD."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"periods file not found: {path}")
    if "periods" not in parser:
        raise InvalidPeriod(f"{path}: missing [periods] section")
    periods = []
    for name, window in parser["periods"].items():
        try:
            start_s, end_s = window.split("..")
            sm, sd = (int(x) for x in start_s.strip().split("-"))
            em, ed = (int(x) for x in end_s.strip().split("-"))
        except ValueError:
            raise InvalidPeriod(
                f"{path}: period {name!r} must look like MM-DD..MM-DD, got {window!r}"
            ) from None
        periods.append(Period(name, (sm, sd), (em, ed)))
    return validate_periods(periods)


def write_periods_file(periods, path) -> None:
    with open(path, "w") as fh:
        fh.write("[periods]\n")
        for p in periods:
            fh.write(
                f"{p.name} = {p.start[0]:02d}-{p.start[1]:02d}"
                f"..{p.end[0]:02d}-{p.end[1]:02d}\n"
            )
