import math

import numpy as np
import pytest

from gpsens.data import TransformRecord, generate_synthetic, load_csv, preprocess
from gpsens.errors import DataError, ValidationError
from gpsens.gp import Dataset


class TestSynthetic:
    def test_size_and_cluster(self):
        d = generate_synthetic(0)
        assert d.n == 35 and d.dim == 1
        x = d.X[:, 0]
        assert np.sum((x >= 1.9) & (x <= 2.1)) >= 10
        assert np.all((x >= 0.0) & (x <= 5.0))

    def test_deterministic(self):
        a, b = generate_synthetic(7), generate_synthetic(7)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        c = generate_synthetic(8)
        assert not np.array_equal(a.y, c.y)

    def test_noise_variance_monte_carlo(self):
        # residual variance against the true function across many regenerations
        resid = []
        for seed in range(1000):
            d = generate_synthetic(seed)
            x = d.X[:, 0]
            resid.extend(d.y - (x**2 / 2.0 + np.cos(np.pi * x)))
        resid = np.asarray(resid)
        var = resid.var()
        # 3 standard errors of a variance estimate from n iid draws
        se = 0.01 * math.sqrt(2.0 / resid.size)
        assert abs(var - 0.01) < 3.0 * se


class TestGenericCsv:
    def test_small_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n0.0,1.0\n0.5,2.0\n1.0,3.0\n")
        data, info = load_csv(p, "generic")
        assert data.n == 3 and info == {"rows": 3, "dropped": 0}
        np.testing.assert_array_equal(data.y, [1.0, 2.0, 3.0])

    def test_multicolumn_inputs(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,y\n0,1,2\n3,4,5\n")
        data, _ = load_csv(p, "generic")
        assert data.dim == 2
        np.testing.assert_array_equal(data.X, [[0.0, 1.0], [3.0, 4.0]])

    def test_malformed_cell_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n0.0,1.0\n0.5,oops\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(p, "generic")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(DataError):
            load_csv(p, "generic")

    def test_unknown_format(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n0,1\n")
        with pytest.raises(ValidationError):
            load_csv(p, "nope")


MAUNALOA_FIXTURE = '''" Comment line describing the station"
" another quoted header line"
"Yr", "Mn", "ExcelDate", "Date", "CO2", "seasonally", "fit"
1958, 3, 21259, 1958.2027, 315.71, 314.44, 316.19
1958, 4, 21290, 1958.2877, 317.45, 315.16, 317.30
1958, 5, 21320, 1958.3699, 317.51, 314.71, 317.86
1958, 6, 21351, 1958.4548, -99.99, -99.99, 317.24
1958, 7, 21381, 1958.5370, 315.86, 315.19, 315.86
1958, 8, 21412, 1958.6219, 314.93, 316.19, 314.51
1958, 9, 21443, 1958.7068, 313.21, 316.08, 313.33
1958,10, 21473, 1958.7890, -99.99, -99.99, 312.43
1958,11, 21504, 1958.8740, 313.33, 315.20, 312.38
1958,12, 21534, 1958.9562, 314.67, 315.43, 313.30
'''


class TestMaunaloaCsv:
    def test_fixture_with_missing_rows(self, tmp_path):
        p = tmp_path / "mlo.csv"
        p.write_text(MAUNALOA_FIXTURE)
        data, info = load_csv(p, "maunaloa")
        assert info == {"rows": 10, "dropped": 2}
        assert data.n == 8
        assert data.X[0, 0] == pytest.approx(1958.2027)
        assert data.y[0] == pytest.approx(315.71)

    def test_all_missing_errors(self, tmp_path):
        p = tmp_path / "mlo.csv"
        p.write_text('"h"\n1958, 3, 1, 1958.2, -99.99, 0, 0\n')
        with pytest.raises(DataError):
            load_csv(p, "maunaloa")

    def test_short_row_names_line(self, tmp_path):
        p = tmp_path / "mlo.csv"
        p.write_text('"h"\n1958, 3, 1\n')
        with pytest.raises(DataError, match="line 2"):
            load_csv(p, "maunaloa")


class TestPreprocess:
    def test_log_standardize_moments(self):
        d = Dataset([[0.0], [1.0], [2.0]], [math.e, math.e**2, math.e**3])
        out, record = preprocess(d, "log+standardize")
        assert out.y.mean() == pytest.approx(0.0, abs=1e-12)
        assert out.y.var(ddof=1) == pytest.approx(1.0, rel=1e-12)
        assert record.log and record.scale == pytest.approx(1.0)

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(50, 150, 20)
        d = Dataset(rng.normal(size=(20, 1)), y)
        for mode in ("none", "log", "standardize", "log+standardize"):
            out, record = preprocess(d, mode)
            np.testing.assert_allclose(record.invert(out.y), y, rtol=1e-12)
            np.testing.assert_allclose(record.apply(y), out.y, rtol=1e-12)

    def test_log_rejects_nonpositive_with_index(self):
        d = Dataset([[0.0], [1.0]], [1.0, -2.0])
        with pytest.raises(DataError, match="index 1"):
            preprocess(d, "log")

    def test_constant_outputs_rejected(self):
        d = Dataset([[0.0], [1.0]], [3.0, 3.0])
        with pytest.raises(DataError):
            preprocess(d, "standardize")

    def test_scalar_threshold_mapping(self):
        d = Dataset([[0.0], [1.0], [2.0]], [100.0, 110.0, 130.0])
        _, record = preprocess(d, "log+standardize")
        v = record.apply_scalar(130.0)
        assert record.invert_scalar(v) == pytest.approx(130.0, rel=1e-12)

    def test_unknown_mode(self):
        d = Dataset([[0.0]], [1.0])
        with pytest.raises(ValidationError):
            preprocess(d, "sqrt")
