"""Magnetic field models along the drop axis.

Two sources of truth: the ideal alternating square-wave gradient implied by
the tooth geometry, and ingested finite-element field-map exports. Only the
ideal model drives dynamics; field maps are ingested, fitted, and reported.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import MagnetGeometry


class FieldDomainError(ValueError):
    """Raised for field evaluation outside the modeled region (z < 0)."""


class FieldMapError(ValueError):
    """Raised for unusable field-map files."""


class MissingColumnError(FieldMapError):
    """Raised when a required column is absent from a field-map file."""


@dataclass(frozen=True)
class IdealToothField:
    """Square-wave gradient: Bx = sign(z)*B'*x + B0, sign flipping every tooth.

    The sign is +1 on [0, w*f) with w the tooth width and f the first-tooth
    fraction, and alternates at every breakpoint w*f + k*w after that. The
    sign is right-continuous at breakpoints so each boundary instant has an
    unambiguous owner segment.
    """

    geometry: MagnetGeometry

    def sign_at(self, z: float) -> int:
        if z < 0:
            raise FieldDomainError(f"z must be >= 0 (got {z!r})")
        w = self.geometry.tooth_width
        first = w * self.geometry.first_tooth_fraction
        if z < first:
            return 1
        index = 1 + int(math.floor((z - first) / w))
        return 1 if index % 2 == 0 else -1

    def evaluate(self, x: float, z: float) -> tuple[float, float]:
        """Return (Bx, dBx/dx) at transverse offset x and drop position z."""
        sigma = self.sign_at(z)
        grad = sigma * self.geometry.gradient_magnitude
        return grad * x + self.geometry.bias_field, grad

    def breakpoints(self, z_max: float) -> np.ndarray:
        """All sign-change positions in (0, z_max]."""
        w = self.geometry.tooth_width
        first = w * self.geometry.first_tooth_fraction
        if z_max < first:
            return np.empty(0)
        n = int(math.floor((z_max - first) / w)) + 1
        return first + w * np.arange(n)


@dataclass(frozen=True)
class FieldMap:
    """Sampled field gradients along the drop axis, sorted by z."""

    z: np.ndarray            # m
    dbx_dx: np.ndarray       # T/m
    dby_dx: Optional[np.ndarray] = None
    dbz_dx: Optional[np.ndarray] = None
    bx: Optional[np.ndarray] = None   # T, field at x = 0 if exported
    dropped_rows: int = 0    # NaN rows removed during ingestion

    def __post_init__(self):
        if len(self.z) < 2:
            raise FieldMapError("field map needs at least 2 usable samples")
        if not np.all(np.diff(self.z) > 0):
            raise FieldMapError("field map z values must be strictly increasing")


@dataclass(frozen=True)
class SquareWaveFit:
    avg_gradient_magnitude: float      # T/m
    fitted_pitch: Optional[float]      # m, None if no sign changes in range
    fitted_bias: Optional[float]       # T, None if no Bx column
    residual_rms: float                # T/m
    sign_changes: int


def ingest_field_map(path, column_spec: dict, gradient_unit: Optional[str] = None,
                     delimiter: Optional[str] = None) -> FieldMap:
    """Read a delimited field-map export with a header row.

    column_spec maps FieldMap fields to header names; "z" and "dbx_dx" are
    required, "dby_dx", "dbz_dx", and "bx" optional. Gradient columns are
    scaled to T/m; pass gradient_unit="T/mm" for millimetre exports, or leave
    None to sniff "/mm" from the header names. Rows containing NaN are dropped
    (counted), rows sharing a z value are averaged, and the result is sorted.
    """
    for required in ("z", "dbx_dx"):
        if required not in column_spec:
            raise MissingColumnError(f"column_spec must map {required!r} to a header name")

    with open(path, "r", encoding="utf-8", newline="") as fh:
        first_line = fh.readline()
        if not first_line:
            raise FieldMapError(f"{path}: empty file")
        if delimiter is None:
            delimiter = "\t" if "\t" in first_line else ","
        header = [h.strip() for h in first_line.rstrip("\n").split(delimiter)]
        rows = list(csv.reader(fh, delimiter=delimiter))

    indices = {}
    for fieldname, column in column_spec.items():
        if column not in header:
            raise MissingColumnError(
                f"{path}: column {column!r} (for {fieldname}) not in header {header}")
        indices[fieldname] = header.index(column)

    if gradient_unit is None:
        gradient_unit = "T/mm" if "/mm" in column_spec["dbx_dx"] else "T/m"
    if gradient_unit not in ("T/m", "T/mm"):
        raise FieldMapError(f"gradient_unit must be 'T/m' or 'T/mm' (got {gradient_unit!r})")
    scale = 1000.0 if gradient_unit == "T/mm" else 1.0

    names = list(indices)
    parsed = []
    dropped = 0
    for row in rows:
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            values = [float(row[indices[n]]) for n in names]
        except (ValueError, IndexError) as exc:
            raise FieldMapError(f"{path}: bad row {row!r}: {exc}") from exc
        if any(math.isnan(v) for v in values):
            dropped += 1
            continue
        parsed.append(values)

    if len(parsed) < 2:
        raise FieldMapError(f"{path}: fewer than 2 usable rows")

    data = np.asarray(parsed)
    cols = {n: data[:, i] for i, n in enumerate(names)}

    # average rows sharing a z value, then sort
    z_sorted, inverse = np.unique(cols["z"], return_inverse=True)
    averaged = {}
    counts = np.bincount(inverse)
    for n in names:
        if n == "z":
            continue
        averaged[n] = np.bincount(inverse, weights=cols[n]) / counts

    return FieldMap(
        z=z_sorted,
        dbx_dx=averaged["dbx_dx"] * scale,
        dby_dx=averaged["dby_dx"] * scale if "dby_dx" in averaged else None,
        dbz_dx=averaged["dbz_dx"] * scale if "dbz_dx" in averaged else None,
        bx=averaged.get("bx"),
        dropped_rows=dropped,
    )


def write_field_map_csv(fmap: FieldMap, path) -> None:
    """Export a FieldMap; ingest(write(m)) round-trips up to float repr."""
    columns = [("z", fmap.z), ("dbx_dx", fmap.dbx_dx)]
    for name in ("dby_dx", "dbz_dx", "bx"):
        values = getattr(fmap, name)
        if values is not None:
            columns.append((name, values))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([name for name, _ in columns])
        for i in range(len(fmap.z)):
            writer.writerow([repr(float(values[i])) for _, values in columns])


def _zero_crossings(z, values):
    """Interpolated positions where `values` changes sign."""
    crossings = []
    for i in range(len(values) - 1):
        a, b = values[i], values[i + 1]
        if a == 0.0:
            continue
        if a * b < 0:
            frac = a / (a - b)
            crossings.append(z[i] + frac * (z[i + 1] - z[i]))
        elif b == 0.0 and i + 2 < len(values) and a * values[i + 2] < 0:
            crossings.append(z[i + 1])
    return np.asarray(crossings)


def fit_square_wave(fmap: FieldMap, z_range: Optional[tuple[float, float]] = None) -> SquareWaveFit:
    """Average-magnitude square-wave fit of the x-gradient samples.

    The average magnitude and the rms residual are trapezoid-weighted over the
    requested range; the pitch is the mean spacing between interpolated sign
    changes, left unset when the gradient never changes sign.
    """
    z, grad = fmap.z, fmap.dbx_dx
    bx = fmap.bx
    if z_range is not None:
        lo, hi = z_range
        if lo < z[0] or hi > z[-1] or lo >= hi:
            raise FieldMapError(
                f"z_range {z_range!r} outside sample domain [{z[0]!r}, {z[-1]!r}]")
        mask = (z >= lo) & (z <= hi)
        z, grad = z[mask], grad[mask]
        bx = bx[mask] if bx is not None else None
        if len(z) < 2:
            raise FieldMapError("fewer than 2 samples in z_range")

    span = z[-1] - z[0]
    magnitude = np.abs(grad)
    avg = float(np.trapezoid(magnitude, z) / span)
    residual = float(np.sqrt(np.trapezoid((magnitude - avg) ** 2, z) / span))
    crossings = _zero_crossings(z, grad)
    pitch = float(np.mean(np.diff(crossings))) if len(crossings) >= 2 else None
    bias = float(np.trapezoid(bx, z) / span) if bx is not None else None
    return SquareWaveFit(
        avg_gradient_magnitude=avg,
        fitted_pitch=pitch,
        fitted_bias=bias,
        residual_rms=residual,
        sign_changes=int(len(crossings)),
    )
