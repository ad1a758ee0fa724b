import json
from datetime import date

import numpy as np
import pytest

from epigrid import ingest
from epigrid.errors import EngineWarning, ParseError

from conftest import grid_regions, square_region

HEADER = "Year,Week,Country,Province,District,Disease,Number of cases,Number of deaths\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestSurveillanceCsv:
    def test_sample_row(self, tmp_path):
        path = write(tmp_path, "s.csv", HEADER + "2019,1,Burundi,Bururi,Matana,Malaria,511,1\n")
        records, report = ingest.parse_surveillance_csv(path)
        assert len(records) == 1
        rec = records[0]
        assert rec.cases == 511 and rec.deaths == 1
        assert rec.district == "Matana" and rec.disease == "Malaria"
        assert not report.row_errors

    def test_empty_file_with_header(self, tmp_path):
        path = write(tmp_path, "s.csv", HEADER)
        records, report = ingest.parse_surveillance_csv(path)
        assert records == [] and not report.row_errors

    def test_two_by_two_by_two_gives_eight_records(self, tmp_path):
        rows = []
        for disease in ("Malaria", "Cholera"):
            for district in ("A", "B"):
                for week in (1, 2):
                    rows.append(f"2019,{week},X,Pr,{district},{disease},3,0")
        path = write(tmp_path, "s.csv", HEADER + "\n".join(rows) + "\n")
        records, _ = ingest.parse_surveillance_csv(path)
        assert len(records) == 8
        # panel-complete: every (disease, district, week) combination present
        keys = {(r.disease, r.district, r.week) for r in records}
        assert len(keys) == 8

    def test_missing_header_column_fatal(self, tmp_path):
        path = write(tmp_path, "s.csv", "Year,Week,Country,Province,District,Disease,Number of cases\n")
        with pytest.raises(ParseError, match="deaths"):
            ingest.parse_surveillance_csv(path)

    def test_bad_count_rejected_with_line_number(self, tmp_path):
        path = write(
            tmp_path,
            "s.csv",
            HEADER + "2019,1,X,P,A,Malaria,many,0\n2019,2,X,P,A,Malaria,4,0\n",
        )
        records, report = ingest.parse_surveillance_csv(path)
        assert len(records) == 1
        assert len(report.row_errors) == 1
        assert report.row_errors[0].line == 2

    def test_duplicate_key_last_wins(self, tmp_path):
        path = write(
            tmp_path,
            "s.csv",
            HEADER + "2019,1,X,P,A,Malaria,4,0\n2019,1,X,P,A,Malaria,9,0\n",
        )
        with pytest.warns(EngineWarning, match="duplicate"):
            records, report = ingest.parse_surveillance_csv(path)
        assert len(records) == 1
        assert records[0].cases == 9
        assert report.duplicates == 1

    def test_deaths_exceeding_cases_warns_only(self, tmp_path):
        path = write(tmp_path, "s.csv", HEADER + "2019,1,X,P,A,Malaria,1,5\n")
        with pytest.warns(EngineWarning, match="deaths"):
            records, _ = ingest.parse_surveillance_csv(path)
        assert records[0].deaths == 5


class TestDistrictGeojson:
    @staticmethod
    def feature(adm_id, rings, gtype="Polygon", **props):
        properties = {"adm_id": adm_id, "name": f"N{adm_id}", "province": "P", "country": "C"}
        properties.update(props)
        return {
            "type": "Feature",
            "properties": properties,
            "geometry": {"type": gtype, "coordinates": rings},
        }

    @staticmethod
    def unit(x0, y0):
        return [[[x0, y0], [x0 + 1, y0], [x0 + 1, y0 + 1], [x0, y0 + 1], [x0, y0]]]

    def test_grid_of_unit_squares(self, tmp_path):
        doc = {
            "type": "FeatureCollection",
            "features": [self.feature(i, self.unit(i % 2, i // 2)) for i in range(4)],
        }
        path = write(tmp_path, "d.geojson", json.dumps(doc))
        regions = ingest.parse_district_geojson(path)
        assert [r.adm_id for r in regions] == [0, 1, 2, 3]
        from epigrid import geometry

        assert all(geometry.area(r.geometry) == pytest.approx(1.0) for r in regions)

    def test_unclosed_ring_fatal_names_feature(self, tmp_path):
        bad = [[[0, 0], [1, 0], [1, 1], [0, 1]]]
        doc = {"type": "FeatureCollection", "features": [self.feature(7, bad)]}
        path = write(tmp_path, "d.geojson", json.dumps(doc))
        with pytest.raises(ParseError, match="feature 0"):
            ingest.parse_district_geojson(path)

    def test_multipolygon_part_count(self, tmp_path):
        rings = [self.unit(0, 0), self.unit(5, 5)]
        doc = {
            "type": "FeatureCollection",
            "features": [self.feature(1, rings, gtype="MultiPolygon")],
        }
        path = write(tmp_path, "d.geojson", json.dumps(doc))
        regions = ingest.parse_district_geojson(path)
        assert len(regions[0].geometry.parts) == 2

    def test_non_polygonal_fatal(self, tmp_path):
        doc = {
            "type": "FeatureCollection",
            "features": [self.feature(1, [[0, 0], [1, 1]], gtype="LineString")],
        }
        path = write(tmp_path, "d.geojson", json.dumps(doc))
        with pytest.raises(ParseError, match="non-polygonal"):
            ingest.parse_district_geojson(path)

    def test_missing_adm_id_fatal(self, tmp_path):
        feat = self.feature(1, self.unit(0, 0))
        del feat["properties"]["adm_id"]
        doc = {"type": "FeatureCollection", "features": [feat]}
        path = write(tmp_path, "d.geojson", json.dumps(doc))
        with pytest.raises(ParseError, match="adm_id"):
            ingest.parse_district_geojson(path)


class TestAsciiGrid:
    def test_minimal_grid(self, tmp_path):
        text = (
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n"
            "1 2\n3 4\n"
        )
        grid = ingest.parse_ascii_grid(write(tmp_path, "g.asc", text))
        assert grid.nrows == 2 and grid.ncols == 2
        assert grid.values.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        # first data row is the northernmost
        assert grid.cell_centers_y()[0] == 1.5

    def test_nodata_sentinel(self, tmp_path):
        text = (
            "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -1\n"
            "-1 7\n"
        )
        grid = ingest.parse_ascii_grid(write(tmp_path, "g.asc", text))
        assert (grid.values == grid.nodata).tolist() == [[True, False]]

    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        grid = ingest.RasterGrid(
            ncols=10,
            nrows=10,
            xll=-1.25,
            yll=33.5,
            cellsize=0.04,
            nodata=-9999.0,
            values=rng.normal(size=(10, 10)),
        )
        path = tmp_path / "g.asc"
        ingest.write_ascii_grid(grid, path)
        back = ingest.parse_ascii_grid(path)
        assert np.array_equal(back.values, grid.values)
        assert (back.xll, back.yll, back.cellsize, back.nodata) == (
            grid.xll,
            grid.yll,
            grid.cellsize,
            grid.nodata,
        )

    def test_cell_count_mismatch_fatal(self, tmp_path):
        text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n"
        with pytest.raises(ParseError, match="expected 4 cells"):
            ingest.parse_ascii_grid(write(tmp_path, "g.asc", text))

    def test_bad_token_fatal_with_position(self, tmp_path):
        text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 oops\n"
        with pytest.raises(ParseError, match="line 7, field 2"):
            ingest.parse_ascii_grid(write(tmp_path, "g.asc", text))


class TestPointsCsv:
    def test_parse(self, tmp_path):
        path = write(tmp_path, "p.csv", "lon,lat,value\n1.5,2.5,0.3\n-1,0,2\n")
        points = ingest.parse_points_csv(path)
        assert len(points) == 2
        assert points.lons.tolist() == [1.5, -1.0]

    def test_bad_header(self, tmp_path):
        path = write(tmp_path, "p.csv", "x,y,value\n1,2,3\n")
        with pytest.raises(ParseError, match="lon"):
            ingest.parse_points_csv(path)


def records_for(entries):
    return [
        ingest.SurveillanceRecord(
            year=y, week=w, country="C", province="P", district=d, disease=dis, cases=c, deaths=0
        )
        for (y, w, d, dis, c) in entries
    ]


class TestBuildPanel:
    START = date(2019, 1, 1)

    def districts(self, n=2):
        return [square_region(i + 1, i, 0.0, name=f"D{i}") for i in range(n)]

    def test_eq1_slice(self):
        entries = [
            (2019, w, f"D{d}", disease, 2)
            for disease in ("m", "c")
            for d in range(2)
            for w in (1, 2)
        ]
        panel, report = ingest.build_panel(
            records_for(entries), self.districts(), self.START, 2, "m"
        )
        assert panel.flattened_length() == 4
        assert panel.counts.sum() == 8  # 4 cells x 2 cases, other disease excluded
        assert report.matched_rows == 4

    def test_no_records_zero_panel(self):
        panel, _ = ingest.build_panel([], self.districts(), self.START, 5, "m")
        assert panel.counts.shape == (1, 2, 5)
        assert panel.counts.sum() == 0

    def test_unmatched_names_reported_and_dropped(self):
        entries = [(2019, 1, "Nowhere", "m", 3), (2019, 1, "D0", "m", 2)]
        panel, report = ingest.build_panel(
            records_for(entries), self.districts(), self.START, 2, "m"
        )
        assert panel.counts.sum() == 2
        assert ("c", "p", "nowhere") in report.unmatched_names

    def test_out_of_range_dropped_with_warning(self):
        entries = [(2020, 40, "D0", "m", 3), (2019, 1, "D0", "m", 1)]
        with pytest.warns(EngineWarning, match="outside the panel window"):
            panel, report = ingest.build_panel(
                records_for(entries), self.districts(), self.START, 4, "m"
            )
        assert report.dropped_out_of_range == 1
        assert panel.counts.sum() == 1

    def test_ambiguous_district_fatal(self):
        districts = [square_region(1, 0, 0, name="Dup"), square_region(2, 1, 0, name="dup ")]
        with pytest.raises(ParseError, match="ambiguous"):
            ingest.build_panel([], districts, self.START, 1, "m")

    def test_case_insensitive_name_join(self):
        entries = [(2019, 1, " d0 ", "m", 4)]
        panel, report = ingest.build_panel(
            records_for(entries), self.districts(), self.START, 1, "m"
        )
        assert panel.counts.sum() == 4 and not report.unmatched_names

    def test_completeness_property(self):
        rng = np.random.default_rng(11)
        districts = grid_regions(3, 3)
        for _ in range(10):
            n_weeks = int(rng.integers(1, 9))
            n_rec = int(rng.integers(0, 12))
            entries = [
                (
                    2019,
                    int(rng.integers(1, n_weeks + 1)),
                    districts[rng.integers(len(districts))].name,
                    "m",
                    int(rng.integers(0, 50)),
                )
                for _ in range(n_rec)
            ]
            panel, _ = ingest.build_panel(records_for(entries), districts, self.START, n_weeks, "m")
            assert panel.flattened_length() == len(districts) * n_weeks

    def test_sum_preservation_and_idempotence(self):
        rng = np.random.default_rng(13)
        districts = grid_regions(3, 2)
        entries = [
            (
                2019,
                int(rng.integers(1, 7)),
                districts[rng.integers(len(districts))].name,
                "m",
                int(rng.integers(0, 9)),
            )
            for _ in range(40)
        ]
        records = records_for(entries)
        panel, report = ingest.build_panel(records, districts, self.START, 6, "m")
        in_range_total = sum(
            r.cases
            for r in records
            if 1 <= ingest.week_index(ingest.record_date(r.year, r.week), self.START) <= 6
        )
        assert panel.counts.sum() == in_range_total

        replayed = ingest.panel_to_records(panel, districts)
        panel2, _ = ingest.build_panel(replayed, districts, self.START, 6, "m")
        assert np.array_equal(panel.counts, panel2.counts)

    def test_idempotence_with_unaligned_start(self):
        districts = self.districts()
        entries = [(2019, 10, "D0", "m", 5), (2019, 30, "D1", "m", 2)]
        start = date(2019, 2, 20)  # not a multiple of 7 days past Jan 1
        panel, _ = ingest.build_panel(records_for(entries), districts, start, 30, "m")
        replayed = ingest.panel_to_records(panel, districts)
        panel2, _ = ingest.build_panel(replayed, districts, start, 30, "m")
        assert np.array_equal(panel.counts, panel2.counts)

    def test_empty_district_list_fatal(self):
        with pytest.raises(ParseError, match="empty"):
            ingest.build_panel([], [], self.START, 1, "m")
