"""Counts files and plot-ready CSV outputs.

Counts CSV has the header ``t_s,n1,n2`` with one row per bin (bin start time). The binary
form is a 28-byte little-endian header (magic ``KMF1``, fs, t0, n_bins) followed by
``n_bins`` interleaved pairs of 32-bit unsigned counts.
"""

import csv
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np
from loguru import logger

from fibertwin.errors import FormatError
from fibertwin.services.adev import AdevResult
from fibertwin.services.dsp import CalibrationResult, LockInResult
from fibertwin.services.sim import CountSeries

PathLike = Union[str, Path]

COUNTS_HEADER = ["t_s", "n1", "n2"]
BINARY_MAGIC = b"KMF1"
BINARY_HEADER = np.dtype([("magic", "S4"), ("fs", "<f8"), ("t0", "<f8"), ("n_bins", "<u8")])
BINARY_COUNTS = np.dtype("<u4")
MAX_COUNT = np.iinfo(np.uint32).max


def fmt(value: float) -> str:
    """Float with 17 significant digits, enough to round-trip."""
    return f"{value:.17g}"


def write_table_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV with LF line endings; floats get 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.debug(f"Wrote {path}")
    return path


def write_counts_csv(path: PathLike, cs: CountSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    starts = cs.bin_starts()
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(COUNTS_HEADER) + "\n")
        handle.writelines(f"{fmt(t)},{a},{b}\n" for t, a, b in zip(starts.tolist(), cs.n1.tolist(), cs.n2.tolist()))
    logger.debug(f"Wrote {len(cs)} bins to {path}")
    return path


def _parse_row(row: List[str], row_number: int) -> tuple[float, int, int]:
    if len(row) != 3:
        raise FormatError(f"expected 3 columns (t_s,n1,n2), got {len(row)}", row=row_number)
    try:
        t = float(row[0])
        n1 = int(row[1])
        n2 = int(row[2])
    except ValueError as e:
        raise FormatError(f"cannot parse {row!r}: {e}", row=row_number) from e
    if n1 < 0 or n2 < 0:
        raise FormatError("counts must be non-negative", row=row_number)
    return t, n1, n2


def read_counts_csv(path: PathLike) -> CountSeries:
    """Read a counts CSV; the bin rate is inferred from the time column.

    Raises:
        FormatError: Bad header, malformed rows or a non-uniform time grid, naming the data row.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COUNTS_HEADER:
            raise FormatError(f"{path}: expected header {','.join(COUNTS_HEADER)}, got {header}")
        parsed = [_parse_row(row, index) for index, row in enumerate(reader, start=1) if row]

    if len(parsed) < 2:
        raise FormatError(f"{path}: need at least 2 data rows to infer the bin rate")

    times = np.array([p[0] for p in parsed])
    step = times[1] - times[0]
    if not step > 0:
        raise FormatError("time column must increase", row=2)
    fs = float(f"{1 / step:.12g}")
    expected = times[0] + np.arange(times.size) / fs
    off_grid = np.flatnonzero(np.abs(times - expected) > 1e-3 / fs)
    if off_grid.size:
        raise FormatError(f"time {times[off_grid[0]]} is off the {fs} Hz bin grid", row=int(off_grid[0]) + 1)

    return CountSeries(
        bin_rate_fs=fs,
        t0=float(times[0]),
        n1=np.array([p[1] for p in parsed], dtype=np.int64),
        n2=np.array([p[2] for p in parsed], dtype=np.int64),
    )


def write_counts_binary(path: PathLike, cs: CountSeries) -> Path:
    """Write the binary counts format.

    Raises:
        FormatError: Counts that do not fit in 32 bits.
    """
    if len(cs) and max(int(cs.n1.max()), int(cs.n2.max())) > MAX_COUNT:
        raise FormatError("counts exceed the 32-bit range of the binary format")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    header = np.array([(BINARY_MAGIC, cs.bin_rate_fs, cs.t0, len(cs))], dtype=BINARY_HEADER)
    pairs = np.empty(2 * len(cs), dtype=BINARY_COUNTS)
    pairs[0::2] = cs.n1
    pairs[1::2] = cs.n2
    with path.open("wb") as handle:
        handle.write(header.tobytes())
        handle.write(pairs.tobytes())
    logger.debug(f"Wrote {len(cs)} bins to {path}")
    return path


def read_counts_binary(path: PathLike) -> CountSeries:
    """Read the binary counts format.

    Raises:
        FormatError: Wrong magic or a file length that does not match the header.
    """
    raw = Path(path).read_bytes()
    if len(raw) < BINARY_HEADER.itemsize:
        raise FormatError(f"{path}: file shorter than the {BINARY_HEADER.itemsize}-byte header")
    header = np.frombuffer(raw, dtype=BINARY_HEADER, count=1)[0]
    if header["magic"] != BINARY_MAGIC:
        raise FormatError(f"{path}: bad magic {header['magic']!r}")

    n_bins = int(header["n_bins"])
    body = raw[BINARY_HEADER.itemsize :]
    if len(body) != n_bins * 2 * BINARY_COUNTS.itemsize:
        raise FormatError(f"{path}: header announces {n_bins} bins, body holds {len(body)} bytes")
    pairs = np.frombuffer(body, dtype=BINARY_COUNTS)
    return CountSeries(
        bin_rate_fs=float(header["fs"]),
        t0=float(header["t0"]),
        n1=pairs[0::2].astype(np.int64),
        n2=pairs[1::2].astype(np.int64),
    )


def read_counts(path: PathLike) -> CountSeries:
    """Read counts in either format, chosen by magic bytes."""
    path = Path(path)
    with path.open("rb") as handle:
        magic = handle.read(len(BINARY_MAGIC))
    return read_counts_binary(path) if magic == BINARY_MAGIC else read_counts_csv(path)


def write_spectrum_csv(path: PathLike, frequencies: np.ndarray, asd: np.ndarray) -> Path:
    return write_table_csv(path, ["frequency_hz", "asd_rad_per_rthz"], zip(frequencies.tolist(), asd.tolist()))


def write_lockin_csv(path: PathLike, result: LockInResult, step: int = 1) -> Path:
    """I, Q and amplitude traces, every ``step``-th sample."""
    rows = zip(
        result.t[::step].tolist(),
        result.i_series[::step].tolist(),
        result.q_series[::step].tolist(),
        result.amplitude_series[::step].tolist(),
    )
    return write_table_csv(path, ["t_s", "i_rad", "q_rad", "amplitude_rad"], rows)


def write_calibration_csv(path: PathLike, calibrations: Sequence[CalibrationResult]) -> Path:
    rows = []
    for run, calibration in enumerate(calibrations):
        for index, (bounds, scale, amp, sem) in enumerate(
            zip(
                calibration.segment_bounds,
                calibration.per_segment_scale,
                calibration.dither_amplitudes,
                calibration.dither_sems,
            )
        ):
            rows.append([run, index, bounds[0], bounds[1], float(amp), float(sem), float(scale)])
    header = ["run", "segment", "start_bin", "stop_bin", "dither_rad", "dither_sem_rad", "scale"]
    return write_table_csv(path, header, rows)


def write_adev_csv(path: PathLike, result: AdevResult) -> Path:
    """ADEV table preceded by a ``# key=value`` fit summary block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {
        "fit_level": fmt(result.fit_level),
        "fit_slope": fmt(result.fit_slope),
        "white_noise": str(result.is_white).lower(),
        "edf_model": result.edf_model,
    }
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.writelines(f"# {key}={value}\n" for key, value in summary.items())
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["tau_s", "sigma_rad", "sigma_err_rad"])
        for tau, sigma, err in zip(result.taus.tolist(), result.sigma.tolist(), result.sigma_err.tolist()):
            writer.writerow([fmt(tau), fmt(sigma), fmt(err)])
    logger.debug(f"Wrote {path}")
    return path
