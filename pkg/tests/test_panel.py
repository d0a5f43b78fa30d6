import numpy as np
import pytest

from excessmort import errors
from excessmort.panel import (
    COVARIATE_NAMES,
    DEATHS_7WK_PRE_OUTBREAK,
    DEATHS_PREV_YEAR,
    DEFAULT_PERIODS,
    Period,
    assemble_rows,
    day_index,
    death_rate,
    export_panel,
    load_panel,
    month_day,
    parse_periods_file,
    period_deaths,
    validate_periods,
    write_periods_file,
)
from excessmort.synth import SynthConfig, generate_panel

from conftest import write_inputs, yearly_rows

YEARS = (2015, 2016, 2017, 2018, 2019, 2020)
FIRST_WAVE, SUMMER, SECOND = DEFAULT_PERIODS


def load_small(tmp_path, deaths, units=(("A", 10000, 0.0, 0.0),), **kwargs):
    mort, cov, geo = write_inputs(tmp_path, list(units), deaths, **kwargs)
    return load_panel(mort, cov, geo)


class TestCalendar:
    def test_day_index_round_trip(self):
        for idx in range(365):
            assert day_index(*month_day(idx)) == idx

    def test_feb_29_is_not_a_slot(self):
        with pytest.raises(errors.InvalidPeriod):
            day_index(2, 29)

    def test_known_anchors(self):
        assert day_index(1, 1) == 0
        assert day_index(12, 31) == 364
        assert day_index(2, 21) == 51


class TestPeriods:
    def test_default_periods_do_not_overlap(self):
        validate_periods(DEFAULT_PERIODS)

    def test_overlap_rejected(self):
        with pytest.raises(errors.InvalidPeriod):
            validate_periods(
                [Period("a", (1, 1), (3, 1)), Period("b", (2, 1), (4, 1))]
            )

    def test_start_after_end_rejected(self):
        with pytest.raises(errors.InvalidPeriod):
            Period("bad", (5, 1), (2, 1))

    def test_periods_file_round_trip(self, tmp_path):
        path = tmp_path / "periods.ini"
        write_periods_file(DEFAULT_PERIODS, path)
        assert parse_periods_file(path) == DEFAULT_PERIODS


class TestLoadPanel:
    def test_minimal_well_formed_input(self, tmp_path):
        panel = load_small(tmp_path, yearly_rows("A", YEARS))
        assert panel.n_units == 1
        assert panel.years == YEARS
        assert panel.feb29_dropped == 0

    def test_feb29_dropped_with_counted_warning(self, tmp_path):
        rows = yearly_rows("A", YEARS, extras=[("A", "2020-02-29", 3)])
        with pytest.warns(UserWarning, match="February 29"):
            panel = load_small(tmp_path, rows)
        assert panel.feb29_dropped == 1
        # the dropped count never reaches any slot
        assert panel.deaths["A"][2020].sum() == 0

    def test_missing_year_is_incomplete_coverage(self, tmp_path):
        rows = yearly_rows("A", [y for y in YEARS if y != 2017])
        rows += yearly_rows("B", YEARS)
        with pytest.raises(errors.IncompleteCoverage, match="A"):
            load_small(
                tmp_path, rows, units=(("A", 10000, 0.0, 0.0), ("B", 500, 1.0, 1.0))
            )

    def test_missing_column(self, tmp_path):
        mort, cov, geo = write_inputs(
            tmp_path, [("A", 1000, 0, 0)], yearly_rows("A", YEARS)
        )
        mort.write_text("unit_id,deaths\nA,1\n")
        with pytest.raises(errors.MissingColumn, match="date"):
            load_panel(mort, cov, geo)

    def test_negative_count(self, tmp_path):
        rows = yearly_rows("A", YEARS, extras=[("A", "2018-03-04", -2)])
        with pytest.raises(errors.NegativeCount, match="A"):
            load_small(tmp_path, rows)

    def test_duplicate_day(self, tmp_path):
        rows = yearly_rows("A", YEARS) + [
            ("A", "2019-07-07", 1),
            ("A", "2019-07-07", 2),
        ]
        with pytest.raises(errors.DuplicateDay, match="2019-07-07"):
            load_small(tmp_path, rows)

    def test_unknown_unit_in_mortality(self, tmp_path):
        rows = yearly_rows("A", YEARS) + [("GHOST", "2015-02-02", 1)]
        with pytest.raises(errors.UnknownUnit, match="GHOST"):
            load_small(tmp_path, rows)

    def test_municipality_without_covariates(self, tmp_path):
        mort, cov, geo = write_inputs(
            tmp_path, [("A", 1000, 0, 0)], yearly_rows("A", YEARS)
        )
        with open(geo, "a") as fh:
            fh.write("B,Town B,P1,R1,900,4.0,4.0\n")
        with open(mort, "a") as fh:
            for year in YEARS:
                fh.write(f"B,{year}-01-01,0\n")
        with pytest.raises(errors.UnknownUnit, match="B"):
            load_panel(mort, cov, geo)

    def test_invalid_share_covariate(self, tmp_path):
        with pytest.raises(errors.InvalidCovariate, match="share_65plus"):
            load_small(
                tmp_path,
                yearly_rows("A", YEARS),
                covariate_overrides={"A": {"share_65plus": 1.7}},
            )

    def test_missing_covariate_cell(self, tmp_path):
        with pytest.raises(errors.InvalidCovariate, match="pm10"):
            load_small(
                tmp_path,
                yearly_rows("A", YEARS),
                covariate_overrides={"A": {"pm10": "nan"}},
            )

    def test_nonpositive_population(self, tmp_path):
        with pytest.raises(errors.NegativeCount, match="population"):
            load_small(tmp_path, yearly_rows("A", YEARS), units=(("A", 0, 0.0, 0.0),))

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_panel(tmp_path / "no.csv", tmp_path / "no.csv", tmp_path / "no.csv")


class TestPeriodDeaths:
    def test_one_death_per_day_summer(self, tmp_path):
        panel = load_small(tmp_path, yearly_rows("A", YEARS, per_day=1))
        assert period_deaths(panel, "A", 2016, SUMMER) == 122  # 30+31+31+30

    def test_feb29_only_unit_contributes_zero(self, tmp_path):
        rows = yearly_rows("A", YEARS, extras=[("A", "2020-02-29", 9)])
        with pytest.warns(UserWarning):
            panel = load_small(tmp_path, rows)
        assert period_deaths(panel, "A", 2020, FIRST_WAVE) == 0

    def test_inclusive_bounds(self, tmp_path):
        rows = yearly_rows(
            "A", YEARS, extras=[("A", "2019-03-01", 5), ("A", "2019-05-31", 7)]
        )
        panel = load_small(tmp_path, rows)
        assert period_deaths(panel, "A", 2019, FIRST_WAVE) == 12

    def test_unknown_unit_and_year(self, tmp_path):
        panel = load_small(tmp_path, yearly_rows("A", YEARS))
        with pytest.raises(errors.UnknownUnit):
            period_deaths(panel, "Z", 2016, SUMMER)
        with pytest.raises(errors.UnknownYear):
            period_deaths(panel, "A", 2013, SUMMER)

    def test_partition_of_year(self, rng):
        # periods plus the residual days always rebuild the year total
        config = SynthConfig(n_units=12, master_seed=5)
        panel, _ = generate_panel(config)
        residual_days = 365 - sum(p.n_days for p in panel.periods)
        assert residual_days > 0
        for uid in panel.unit_ids[:5]:
            for year in panel.years:
                total = int(panel.deaths[uid][year].sum())
                in_periods = sum(
                    period_deaths(panel, uid, year, p) for p in panel.periods
                )
                covered = np.zeros(365, dtype=bool)
                for p in panel.periods:
                    covered[p.start_index : p.end_index + 1] = True
                residual = int(panel.deaths[uid][year][~covered].sum())
                assert in_periods + residual == total


class TestDeathRate:
    def test_unit_population(self):
        assert death_rate(50, 10000) == 50.0

    def test_zero_deaths(self):
        assert death_rate(0, 12345) == 0.0

    def test_hand_arithmetic(self):
        assert death_rate(13, 6500) == pytest.approx(20.0)

    def test_zero_population(self):
        with pytest.raises(errors.ZeroPopulation):
            death_rate(5, 0)


class TestAssembleRows:
    def make_panel(self, tmp_path):
        units = [("A", 10000, 0.0, 0.0), ("B", 5000, 3.0, 0.0), ("C", 800, 0.0, 4.0)]
        rows = []
        for uid, _, _, _ in units:
            rows += yearly_rows(uid, YEARS)
        # unit A: 20 deaths inside the first wave of 2016
        rows += [("A", "2016-03-10", 20)]
        # unit A: prior-year (2015) total of 7
        rows += [("A", "2015-08-01", 7)]
        # unit A: 4 deaths in the 2018 pre-outbreak window (Jan 3 - Feb 20)
        rows += [("A", "2018-01-03", 1), ("A", "2018-02-20", 3)]
        return load_small(tmp_path, rows, units=units)

    def test_shape(self, tmp_path):
        panel = self.make_panel(tmp_path)
        rows = assemble_rows(panel, FIRST_WAVE, [2015, 2016, 2017, 2018, 2019])
        assert rows.features.shape == (15, 16)
        assert rows.targets.shape == (15,)
        assert rows.keys[0] == ("A", 2015)

    def test_target_is_rate(self, tmp_path):
        panel = self.make_panel(tmp_path)
        rows = assemble_rows(panel, FIRST_WAVE, [2016])
        target_a = rows.targets[rows.keys.index(("A", 2016))]
        assert target_a == pytest.approx(20.0)  # 20 deaths / 10000 pop

    def test_deterministic(self, tmp_path):
        panel = self.make_panel(tmp_path)
        years = [2015, 2016, 2017, 2018, 2019]
        r1 = assemble_rows(panel, FIRST_WAVE, years)
        r2 = assemble_rows(panel, FIRST_WAVE, years)
        assert np.array_equal(r1.features, r2.features)
        assert np.array_equal(r1.targets, r2.targets)
        assert r1.keys == r2.keys

    def test_prev_year_deaths_derived(self, tmp_path):
        panel = self.make_panel(tmp_path)
        rows = assemble_rows(panel, FIRST_WAVE, [2015, 2016])
        i2016 = rows.keys.index(("A", 2016))
        assert rows.features[i2016, DEATHS_PREV_YEAR] == 7.0
        # 2015 has no covered prior year: static file value stands in
        i2015 = rows.keys.index(("A", 2015))
        assert rows.features[i2015, DEATHS_PREV_YEAR] == 110.0

    def test_pre_outbreak_window_derived(self, tmp_path):
        panel = self.make_panel(tmp_path)
        rows = assemble_rows(panel, FIRST_WAVE, [2018])
        i = rows.keys.index(("A", 2018))
        assert rows.features[i, DEATHS_7WK_PRE_OUTBREAK] == 4.0

    def test_unknown_year_propagates(self, tmp_path):
        panel = self.make_panel(tmp_path)
        with pytest.raises(errors.UnknownYear):
            assemble_rows(panel, FIRST_WAVE, [2014])

    def test_static_covariates_copied(self, tmp_path):
        panel = self.make_panel(tmp_path)
        rows = assemble_rows(panel, FIRST_WAVE, [2016])
        i = rows.keys.index(("B", 2016))
        assert rows.features[i, COVARIATE_NAMES.index("resident_population")] == 5000


class TestRoundTrip:
    def test_export_then_load_is_equal(self, tmp_path):
        panel, _ = generate_panel(SynthConfig(n_units=15, master_seed=3))
        mort = tmp_path / "m.csv"
        cov = tmp_path / "c.csv"
        geo = tmp_path / "g.csv"
        export_panel(panel, mort, cov, geo)
        reloaded = load_panel(mort, cov, geo, periods=panel.periods)
        assert reloaded.equals(panel)
        assert reloaded.feb29_dropped == 0
