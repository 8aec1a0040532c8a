"""Tests for counts files and CSV outputs."""

import numpy as np
import pytest


def _counts(n=50, t0=0.0, fs=10.0):
    from fibertwin.services.sim import CountSeries

    rng = np.random.default_rng(0)
    return CountSeries(
        bin_rate_fs=fs,
        t0=t0,
        n1=rng.poisson(5000, n).astype(np.int64),
        n2=rng.poisson(5000, n).astype(np.int64),
    )


def _write(tmp_path, text):
    path = tmp_path / "counts.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_counts_csv_round_trip(tmp_path):
    from fibertwin.utils.io import read_counts_csv, write_counts_csv

    original = _counts(t0=120.0)
    path = write_counts_csv(tmp_path / "counts.csv", original)
    loaded = read_counts_csv(path)

    assert path.read_text(encoding="utf-8").startswith("t_s,n1,n2\n120,")
    assert loaded.bin_rate_fs == 10.0
    assert loaded.t0 == pytest.approx(120.0)
    assert np.array_equal(loaded.n1, original.n1)
    assert np.array_equal(loaded.n2, original.n2)


@pytest.mark.parametrize(
    "text, row, message",
    [
        ("t_s,n1,n2\n0,1,2\n0.1,3\n", 2, "expected 3 columns"),
        ("t_s,n1,n2\n0,1,2\n0.1,x,4\n", 2, "cannot parse"),
        ("t_s,n1,n2\n0,1,2\n0.1,-3,4\n", 2, "non-negative"),
        ("t_s,n1,n2\n0,1,2\n0.1,3,4\n0.25,5,6\n", 3, "off the"),
    ],
)
def test_counts_csv_errors_name_the_row(tmp_path, text, row, message):
    from fibertwin.errors import FormatError
    from fibertwin.utils.io import read_counts_csv

    with pytest.raises(FormatError, match=message) as ei:
        read_counts_csv(_write(tmp_path, text))
    assert ei.value.row == row
    assert str(ei.value).startswith(f"row {row}: ")


def test_counts_csv_bad_header(tmp_path):
    from fibertwin.errors import FormatError
    from fibertwin.utils.io import read_counts_csv

    with pytest.raises(FormatError, match="header"):
        read_counts_csv(_write(tmp_path, "time,a,b\n0,1,2\n0.1,1,2\n"))


def test_counts_csv_needs_two_rows(tmp_path):
    from fibertwin.errors import FormatError
    from fibertwin.utils.io import read_counts_csv

    with pytest.raises(FormatError, match="2 data rows"):
        read_counts_csv(_write(tmp_path, "t_s,n1,n2\n0,1,2\n"))


def test_counts_binary_round_trip(tmp_path):
    from fibertwin.utils.io import BINARY_HEADER, read_counts_binary, write_counts_binary

    original = _counts(n=40, t0=3.5)
    path = write_counts_binary(tmp_path / "counts.bin", original)
    loaded = read_counts_binary(path)

    assert BINARY_HEADER.itemsize == 28
    assert path.stat().st_size == 28 + 40 * 8
    assert path.read_bytes()[:4] == b"KMF1"
    assert loaded.bin_rate_fs == 10.0
    assert loaded.t0 == 3.5
    assert np.array_equal(loaded.n1, original.n1)
    assert np.array_equal(loaded.n2, original.n2)


def test_counts_binary_is_byte_stable(tmp_path):
    from fibertwin.utils.io import write_counts_binary

    counts = _counts()
    first = write_counts_binary(tmp_path / "a.bin", counts).read_bytes()
    second = write_counts_binary(tmp_path / "b.bin", counts).read_bytes()
    assert first == second


def test_counts_binary_rejects_overflow(tmp_path):
    from fibertwin.errors import FormatError
    from fibertwin.services.sim import CountSeries
    from fibertwin.utils.io import write_counts_binary

    counts = CountSeries(bin_rate_fs=10.0, t0=0.0, n1=np.array([2**32], dtype=np.int64), n2=np.array([0]))
    with pytest.raises(FormatError, match="32-bit"):
        write_counts_binary(tmp_path / "big.bin", counts)


def test_counts_binary_rejects_corruption(tmp_path):
    from fibertwin.errors import FormatError
    from fibertwin.utils.io import read_counts_binary, write_counts_binary

    path = write_counts_binary(tmp_path / "counts.bin", _counts())
    raw = path.read_bytes()

    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="announces"):
        read_counts_binary(path)

    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_counts_binary(path)

    path.write_bytes(raw[:10])
    with pytest.raises(FormatError, match="shorter"):
        read_counts_binary(path)


def test_read_counts_detects_format(tmp_path):
    from fibertwin.utils.io import read_counts, write_counts_binary, write_counts_csv

    counts = _counts()
    from_csv = read_counts(write_counts_csv(tmp_path / "c.csv", counts))
    from_bin = read_counts(write_counts_binary(tmp_path / "c.bin", counts))

    assert np.array_equal(from_csv.n1, from_bin.n1)
    assert np.array_equal(from_csv.n2, from_bin.n2)


def test_write_table_csv_formats_floats(tmp_path):
    from fibertwin.utils.io import write_table_csv

    path = write_table_csv(tmp_path / "t.csv", ["name", "value"], [["a", 0.1], ["b", 2]])
    assert path.read_text(encoding="utf-8") == "name,value\na,0.10000000000000001\nb,2\n"


def test_write_lockin_csv_decimates(tmp_path):
    from fibertwin.services.dsp import LockInResult
    from fibertwin.utils.io import write_lockin_csv

    n = 100
    result = LockInResult(
        f_demod=0.1,
        lpf_cutoff=0.01,
        reference_phase=0.0,
        t=np.arange(n) / 10.0,
        i_series=np.full(n, 3e-4),
        q_series=np.full(n, 4e-4),
        i_mean=3e-4,
        i_sem=1e-5,
        q_mean=4e-4,
        n_effective=1.0,
    )
    lines = write_lockin_csv(tmp_path / "lockin.csv", result, step=10).read_text(encoding="utf-8").splitlines()

    assert lines[0] == "t_s,i_rad,q_rad,amplitude_rad"
    assert len(lines) == 11
    assert float(lines[1].split(",")[3]) == pytest.approx(5e-4)


def test_write_adev_csv_summary_block(tmp_path):
    from fibertwin.services.adev import AdevResult
    from fibertwin.utils.io import write_adev_csv

    result = AdevResult(
        taus=np.array([1.0, 2.0]),
        sigma=np.array([1e-3, 7e-4]),
        sigma_err=np.array([1e-5, 1e-5]),
        fit_level=1e-3,
        fit_slope=-0.5,
    )
    lines = write_adev_csv(tmp_path / "adev.csv", result).read_text(encoding="utf-8").splitlines()

    assert lines[:4] == ["# fit_level=0.001", "# fit_slope=-0.5", "# white_noise=true", "# edf_model=white"]
    assert lines[4] == "tau_s,sigma_rad,sigma_err_rad"
    assert len(lines) == 7
