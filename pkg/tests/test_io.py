import json

import numpy as np
import pytest

from pscca.exceptions import CountFileError
from pscca.io import (
    read_count_pair,
    read_counts,
    sniff_delimiter,
    write_counts,
    write_json,
    write_matrix,
    write_table,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestReadCounts:
    def test_comma(self, tmp_path):
        p = write(tmp_path, "a.csv", "gene,s1,s2,s3\ng1,0,1,2\ng2,3,4,5\n")
        y, names, samples = read_counts(p)
        np.testing.assert_array_equal(y, [[0, 1, 2], [3, 4, 5]])
        assert y.dtype == np.int64
        assert names == ["g1", "g2"] and samples == ["s1", "s2", "s3"]

    def test_tab(self, tmp_path):
        p = write(tmp_path, "a.tsv", "gene\ts1\ts2\ng1\t7\t8\n")
        y, _, samples = read_counts(p)
        np.testing.assert_array_equal(y, [[7, 8]])
        assert samples == ["s1", "s2"]

    def test_sniff(self):
        assert sniff_delimiter("a\tb,c") == "\t"
        assert sniff_delimiter("a,b") == ","

    def test_integer_valued_float_and_blank_lines(self, tmp_path):
        p = write(tmp_path, "a.csv", "f,s1,s2\ng1,1.0,2e1\n\ng2,0,3\n")
        y, names, _ = read_counts(p)
        np.testing.assert_array_equal(y, [[1, 20], [0, 3]])
        assert names == ["g1", "g2"]

    def test_crlf(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_bytes(b"f,s1,s2\r\ng1,1,2\r\n")
        np.testing.assert_array_equal(read_counts(p)[0], [[1, 2]])

    @pytest.mark.parametrize("body, where", [
        ("g1,1,-2\n", "line 2, column 3"),
        ("g1,1,2\ng2,NaN,1\n", "line 3, column 2"),
        ("g1,1.5,2\n", "line 2, column 2"),
        ("g1,abc,2\n", "line 2, column 2"),
        ("g1,1,\n", "line 2, column 3"),
        ("g1,1,2\ng2,1\n", "line 3: expected 3 fields, found 2"),
        ("g1,1,inf\n", "line 2, column 3"),
    ])
    def test_rejects_bad_cells(self, tmp_path, body, where):
        p = write(tmp_path, "bad.csv", "f,s1,s2\n" + body)
        with pytest.raises(CountFileError, match=where):
            read_counts(p)

    @pytest.mark.parametrize("text", ["", "f\ng1\n", "f,s1,s1\ng1,1,2\n", "f,s1\n",
                                      "f,s1\ng1,1\ng1,2\n"])
    def test_rejects_bad_structure(self, tmp_path, text):
        with pytest.raises(CountFileError):
            read_counts(write(tmp_path, "bad.csv", text))

    def test_error_is_value_error(self, tmp_path):
        with pytest.raises(ValueError):
            read_counts(write(tmp_path, "bad.csv", "f,s1\ng1,-1\n"))


class TestCountPair:
    def test_round_trip(self, tmp_path, rng):
        y1, y2 = rng.poisson(3, size=(3, 4)), rng.poisson(3, size=(2, 4))
        samples = ["a", "b", "c", "d"]
        p1 = write_counts(tmp_path / "y1.csv", y1, ["x1", "x2", "x3"], samples)
        p2 = write_counts(tmp_path / "y2.csv", y2, None, samples)
        data = read_count_pair(p1, p2)
        np.testing.assert_array_equal(data.y1, y1)
        np.testing.assert_array_equal(data.y2, y2)
        assert list(data.feature_names_2) == ["f1", "f2"] and list(data.sample_ids) == samples
        assert p1.read_text().splitlines()[0] == "feature,a,b,c,d"

    def test_sample_mismatch(self, tmp_path):
        p1 = write(tmp_path, "a.csv", "f,s1,s2\ng,1,2\n")
        p2 = write(tmp_path, "b.csv", "f,s2,s1\nh,1,2\n")
        with pytest.raises(CountFileError, match="sample IDs"):
            read_count_pair(p1, p2)


class TestWriters:
    def test_matrix_repr(self, tmp_path):
        p = write_matrix(tmp_path / "m.csv", [[0.1, 1 / 3]], ["r"], ["a", "b"])
        assert p.read_bytes() == b",a,b\nr,0.1,0.3333333333333333\n"

    def test_table(self, tmp_path):
        p = write_table(tmp_path / "t.csv", ("k", "v"), [(1, 0.5), ("x", 2.0)])
        assert p.read_text() == "k,v\n1,0.5\nx,2.0\n"

    def test_json_stable(self, tmp_path):
        obj = {"b": np.arange(2), "a": np.float64(1.5), "c": float("nan")}
        p = write_json(tmp_path / "x.json", obj)
        text = p.read_text()
        assert text.endswith("\n") and text.index('"a"') < text.index('"b"')
        assert json.loads(text)["b"] == [0, 1]
