import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgelfand.errors import OutputError
from pgelfand.fixedpoint import component_configs, trace_branch
from pgelfand.geometry import Field, SystemField, build_interval, build_mask_domain
from pgelfand.nonlinearity import Nonlinearity
from pgelfand.report import (
    BRANCH_COLUMNS,
    RunManifest,
    export_branch,
    export_field,
    format_float,
    import_field,
    read_branch_summary,
    write_json,
)


@pytest.fixture(scope="module")
def branch():
    g = build_mask_domain("square", 10)
    return trace_branch(g, 0.1, 4, Nonlinearity.parse("exp"), component_configs(1.5))


class TestFieldCsv:
    def test_zero_field_on_three_nodes(self, tmp_path):
        g = build_interval(1.0, 3)
        path = export_field(Field.zeros(g), tmp_path / "z.csv")
        assert path.read_text() == "i,x,value\n1,0.5,0\n"

    def test_square_row_count(self, tmp_path):
        g = build_mask_domain("square", 64)
        path = export_field(Field.zeros(g), tmp_path / "s.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "i,j,x,y,value"
        assert len(lines) == 3969 + 1

    def test_round_trip_is_exact(self, tmp_path):
        g = build_mask_domain("disc", 12)
        rng = np.random.default_rng(0)
        u = Field(g, rng.normal(size=g.n_interior) * 10.0 ** rng.integers(-300, 300, g.n_interior))
        back = import_field(export_field(u, tmp_path / "u.csv"), g)
        assert np.array_equal(back.values, u.values)

    def test_system_columns(self, tmp_path):
        g = build_interval(1.0, 5)
        s = SystemField(g, [[1.0, 2.0, 3.0], [-1.0, 0.1, 1e-300]])
        path = export_field(s, tmp_path / "s.csv")
        assert path.read_text().splitlines()[0] == "i,x,value_1,value_2"
        back = import_field(path, g)
        assert isinstance(back, SystemField) and np.array_equal(back.values, s.values)

    def test_rows_in_any_order(self, tmp_path):
        g = build_interval(1.0, 5)
        path = tmp_path / "u.csv"
        path.write_text("i,x,value\n3,0.75,3\n1,0.25,1\n2,0.5,2\n")
        assert import_field(path, g).values.tolist() == [1.0, 2.0, 3.0]

    def test_missing_node(self, tmp_path):
        g = build_interval(1.0, 5)
        path = tmp_path / "u.csv"
        path.write_text("i,x,value\n1,0.25,1\n2,0.5,2\n")
        with pytest.raises(OutputError, match="missing"):
            import_field(path, g)

    def test_exterior_node(self, tmp_path):
        g = build_interval(1.0, 5)
        path = tmp_path / "u.csv"
        path.write_text("i,x,value\n0,0,1\n1,0.25,1\n2,0.5,2\n")
        with pytest.raises(OutputError, match="not interior"):
            import_field(path, g)

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OutputError) as info:
            export_field(Field.zeros(build_interval(1.0, 3)), blocker / "sub" / "u.csv")
        assert "sub" in str(info.value)


class TestFloats:
    @settings(max_examples=200, deadline=None)
    @given(st.floats(allow_nan=False))
    def test_lossless(self, x):
        assert float(format_float(x)) == x

    def test_special_values(self):
        assert [format_float(v) for v in (math.nan, math.inf, -math.inf)] == ["nan", "inf", "-inf"]

    def test_seventeen_digits(self):
        assert format_float(0.1) == "0.10000000000000001"


class TestBranchCsv:
    def test_rows_and_trailer(self, tmp_path, branch):
        paths = export_branch(branch, tmp_path / "b.csv")
        assert len(paths) == 1
        lines = paths[0].read_text().splitlines()
        assert lines[0] == ",".join(BRANCH_COLUMNS)
        assert lines[-1] == "# termination: reached_lambda_max"
        rows, term = read_branch_summary(paths[0])
        assert term == branch.termination
        assert len(rows) == len(branch.points)
        lam = [r["lambda"] for r in rows]
        assert lam == sorted(lam) and len(set(lam)) == len(lam)

    def test_empty_branch_is_header_only(self, tmp_path):
        g = build_mask_domain("square", 8)
        empty = trace_branch(g, 0.0, 3, Nonlinearity.parse("exp"), component_configs(2.0))
        path = export_branch(empty, tmp_path / "e.csv")[0]
        assert path.read_text() == ",".join(BRANCH_COLUMNS) + "\n"

    def test_field_dumps(self, tmp_path, branch):
        paths = export_branch(branch, tmp_path / "b.csv", dump_fields=True)
        assert len(paths) == 1 + len(branch.points)
        last = import_field(paths[-1], branch.points[-1].u.grid)
        assert np.array_equal(last.values, branch.points[-1].u.values[0])

    def test_identical_bytes(self, tmp_path, branch):
        a = export_branch(branch, tmp_path / "a.csv")[0].read_bytes()
        b = export_branch(branch, tmp_path / "b.csv")[0].read_bytes()
        assert a == b


class TestJson:
    def test_sorted_and_strict(self, tmp_path):
        path = write_json({"b": np.float64(1.5), "a": [np.int64(2), math.inf, math.nan]}, tmp_path / "x.json")
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [2, "inf", "nan"], "b": 1.5}

    def test_objects_with_to_dict(self, tmp_path, branch):
        from pgelfand.fixedpoint import branch_lipschitz_check

        path = write_json(branch_lipschitz_check(branch), tmp_path / "q.json")
        assert "fitted_exponent" in json.loads(path.read_text())


class TestManifest:
    def test_relative_outputs_and_pinned_time(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        m = RunManifest(command="solve", config={"p": [1.5]}, seed=3, root=tmp_path)
        m.add(tmp_path / "b.csv")
        m.add([tmp_path / "a.json", tmp_path / "b.csv"])
        doc = json.loads(m.write(tmp_path / "manifest.json").read_text())
        assert doc["outputs"] == ["a.json", "b.csv"]
        assert doc["timestamp"] == "1970-01-01T00:00:00+00:00"
        assert doc["seed"] == 3 and doc["version"]
