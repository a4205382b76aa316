"""Reconstruction metrics and evaluation sweeps.

Two normalized mean square errors per frequency, both in dB:

    magnitude: 10*log10( sum_p (|Ghat_p| - |G_p|)^2 / sum_p |G_p|^2 )
    complex:   10*log10( sum_p |Ghat_p - G_p|^2   / sum_p |G_p|^2 )

Sums run over all grid points of a room. Values are clamped at -300 dB
(exact reconstructions would otherwise be -inf); a zero-energy target is
an error. Aggregation over rooms averages the dB values.

Sweeps evaluate a reconstruction method over microphone counts or over
the T60 levels of paired datasets; masks are re-drawn per (record,
mic count) from each record's stored seed, so every method sees the
same microphone placements and reruns are reproducible.
"""

from __future__ import annotations

import csv
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import MicMask, SampleRecord, mask_seed_for, sample_mask
from .modal import FieldGrid

NMSE_FLOOR_DB = -300.0

# a reconstruction method: (record, mask) -> estimated full grid
Method = Callable[[SampleRecord, MicMask], FieldGrid]


def _as_data(x) -> np.ndarray:
    return x.data if isinstance(x, FieldGrid) else np.asarray(x)


def _nmse_db(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    if np.any(den == 0):
        raise ValueError("zero-energy target field; NMSE undefined")
    with np.errstate(divide="ignore"):
        vals = 10.0 * np.log10(num / den)
    return np.maximum(vals, NMSE_FLOOR_DB)


def nmse_curves(estimate, target) -> tuple[np.ndarray, np.ndarray]:
    """(complex, magnitude) NMSE per frequency, in dB, shape (K,) each."""
    est = _as_data(estimate)
    tgt = _as_data(target)
    if est.shape != tgt.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tgt.shape}")
    axes = tuple(range(est.ndim - 1))
    den = np.sum(np.abs(tgt) ** 2, axis=axes)
    num_c = np.sum(np.abs(est - tgt) ** 2, axis=axes)
    num_a = np.sum((np.abs(est) - np.abs(tgt)) ** 2, axis=axes)
    return _nmse_db(num_c, den), _nmse_db(num_a, den)


def nmse_complex(estimate, target) -> np.ndarray:
    return nmse_curves(estimate, target)[0]


def nmse_abs(estimate, target) -> np.ndarray:
    return nmse_curves(estimate, target)[1]


@dataclass
class MetricReport:
    """Mean dB curves over a set of rooms for one sweep setting."""

    sweep_key: str
    n_rooms: int
    freqs: tuple[float, ...]
    nmse_complex_db: np.ndarray
    nmse_abs_db: np.ndarray
    per_room_complex_db: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.nmse_complex_db = np.asarray(self.nmse_complex_db, dtype=np.float64)
        self.nmse_abs_db = np.asarray(self.nmse_abs_db, dtype=np.float64)
        k = len(self.freqs)
        if self.nmse_complex_db.shape != (k,) or self.nmse_abs_db.shape != (k,):
            raise ValueError("per-frequency curves must have shape (K,)")
        if not (np.all(np.isfinite(self.nmse_complex_db))
                and np.all(np.isfinite(self.nmse_abs_db))):
            raise ValueError("NMSE curves must be finite (clamped) dB values")

    @property
    def mean_complex_db(self) -> float:
        return float(self.nmse_complex_db.mean())

    @property
    def mean_abs_db(self) -> float:
        return float(self.nmse_abs_db.mean())


def evaluate_method(method: Method, records: Sequence[SampleRecord],
                    masks: Sequence[MicMask], sweep_key: str) -> MetricReport:
    """Run a method over (record, mask) pairs and average the dB curves."""
    if len(records) != len(masks):
        raise ValueError("records and masks must pair up")
    if not records:
        raise ValueError("no records to evaluate")
    freqs = records[0].field.freqs
    curves_c = np.empty((len(records), len(freqs)))
    curves_a = np.empty((len(records), len(freqs)))
    for i, (rec, mask) in enumerate(zip(records, masks)):
        est = method(rec, mask)
        curves_c[i], curves_a[i] = nmse_curves(est, rec.field)
    return MetricReport(
        sweep_key=sweep_key, n_rooms=len(records), freqs=freqs,
        nmse_complex_db=curves_c.mean(axis=0),
        nmse_abs_db=curves_a.mean(axis=0),
        per_room_complex_db=curves_c.mean(axis=1),
    )


def masks_for(records: Sequence[SampleRecord], m: int) -> list[MicMask]:
    """Canonical per-record masks at mic count m (seeded by the records)."""
    return [
        sample_mask(mask_seed_for(rec.seed, m), m,
                    rec.room.grid_w, rec.room.grid_h)
        for rec in records
    ]


def sweep_mics(method: Method, records: Sequence[SampleRecord],
               mic_counts: Sequence[int]) -> list[MetricReport]:
    """One report per microphone count, same rooms throughout."""
    return [
        evaluate_method(method, records, masks_for(records, m), sweep_key=str(m))
        for m in mic_counts
    ]


def sweep_t60(method: Method,
              records_by_level: Mapping[float, Sequence[SampleRecord]],
              m: int) -> list[MetricReport]:
    """One report per T60 level at a fixed microphone count."""
    return [
        evaluate_method(method, records_by_level[t60],
                        masks_for(records_by_level[t60], m),
                        sweep_key=f"{t60:g}")
        for t60 in sorted(records_by_level)
    ]


def kernel_method(lam: float = 0.01) -> Method:
    from . import kernel

    def run(record: SampleRecord, mask: MicMask) -> FieldGrid:
        return kernel.reconstruct_field(record, mask=mask, lam=lam)

    return run


def cvnn_method(model) -> Method:
    from .cvnn.training import predict_field

    def run(record: SampleRecord, mask: MicMask) -> FieldGrid:
        est = predict_field(model, record, mask=mask)
        return FieldGrid(data=est.astype(np.complex128),
                         freqs=record.field.freqs,
                         room_id=record.field.room_id)

    return run


CSV_COLUMNS = ("sweep_key", "freq_hz", "nmse_complex_db", "nmse_abs_db", "n_rooms")


def write_csv(path, reports: Sequence[MetricReport],
              method: str | None = None) -> None:
    """One row per (sweep setting, frequency).

    With a method name a leading `method` column is prepended, so rows
    from several methods can share one file.
    """
    cols = (("method",) if method is not None else ()) + CSV_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rep in reports:
            for k, f in enumerate(rep.freqs):
                row = (
                    rep.sweep_key, repr(float(f)),
                    repr(float(rep.nmse_complex_db[k])),
                    repr(float(rep.nmse_abs_db[k])),
                    rep.n_rooms,
                )
                writer.writerow((method,) + row if method is not None else row)


def append_csv_rows(rows: list[dict], reports: Sequence[MetricReport],
                    method: str) -> None:
    for rep in reports:
        for k, f in enumerate(rep.freqs):
            rows.append({
                "method": method, "sweep_key": rep.sweep_key,
                "freq_hz": float(f),
                "nmse_complex_db": float(rep.nmse_complex_db[k]),
                "nmse_abs_db": float(rep.nmse_abs_db[k]),
                "n_rooms": rep.n_rooms,
            })


def write_rows_csv(path, rows: list[dict], with_method: bool) -> None:
    cols = (("method",) if with_method else ()) + CSV_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("freq_hz", "nmse_complex_db", "nmse_abs_db"):
                out[key] = repr(float(out[key]))
            writer.writerow(out)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = dict(raw)
            for key in ("freq_hz", "nmse_complex_db", "nmse_abs_db"):
                if key in row and row[key] is not None:
                    row[key] = float(row[key])
            if "n_rooms" in row and row["n_rooms"] is not None:
                row["n_rooms"] = int(row["n_rooms"])
            rows.append(row)
        return rows
