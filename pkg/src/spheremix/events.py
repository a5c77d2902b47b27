"""Event-location datasets: lon/lat CSV ingestion and the unit-sphere
conversion used for geocoded point patterns.

The CSV contract is a header row `lon,lat` followed by one event per line,
both in degrees.  Conversion treats the globe as the unit sphere:

    x = (cos lat cos lon, cos lat sin lon, sin lat)

Rows with missing, non-numeric, or out-of-range values are rejected with an
error naming the offending line.  Duplicate locations are kept as-is.
"""

import csv
from dataclasses import dataclass

import numpy as np


class EventParseError(ValueError):
    """A dataset file failed validation; the message names the line."""


@dataclass(frozen=True)
class EventDataset:
    """N unit-norm points with provenance: points (N, 3), source text, and
    the original lon/lat rows (N, 2) when known."""

    points: np.ndarray
    source: str = ""
    original_rows: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("points must be a nonempty (N, 3) array")
        if np.any(np.abs(np.linalg.norm(pts, axis=1) - 1.0) > 1e-10):
            raise ValueError("every point must have unit norm")
        object.__setattr__(self, "points", pts)
        if self.original_rows is not None:
            rows = np.asarray(self.original_rows, dtype=float)
            if rows.shape != (pts.shape[0], 2):
                raise ValueError("original_rows must be (N, 2) lon/lat")
            object.__setattr__(self, "original_rows", rows)

    @property
    def n(self):
        return self.points.shape[0]


def lonlat_to_xyz(lon_deg, lat_deg):
    """Unit vectors from degrees: (0,0) -> (1,0,0), (0,90) -> (0,0,1)."""
    lon = np.radians(np.asarray(lon_deg, dtype=float))
    lat = np.radians(np.asarray(lat_deg, dtype=float))
    return np.stack([np.cos(lat) * np.cos(lon),
                     np.cos(lat) * np.sin(lon),
                     np.sin(lat)], axis=-1)


def xyz_to_lonlat(points):
    """Degrees (lon, lat) from unit vectors; lon in (-180, 180]."""
    points = np.asarray(points, dtype=float)
    lon = np.degrees(np.arctan2(points[..., 1], points[..., 0]))
    lat = np.degrees(np.arcsin(np.clip(points[..., 2], -1.0, 1.0)))
    return np.stack([lon, lat], axis=-1)


def load_events(path):
    """Parse a lon/lat CSV into an EventDataset.

    Raises EventParseError naming the line for a malformed header, an empty
    file, non-numeric fields, lat outside [-90, 90], or lon outside
    [-360, 360].
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EventParseError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != ["lon", "lat"]:
            raise EventParseError(
                f"{path}: line 1: expected header 'lon,lat', got "
                f"{','.join(header)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise EventParseError(
                    f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                lon, lat = float(row[0]), float(row[1])
            except ValueError:
                raise EventParseError(
                    f"{path}: line {lineno}: non-numeric value in "
                    f"{','.join(row)!r}") from None
            if not (np.isfinite(lon) and np.isfinite(lat)):
                raise EventParseError(
                    f"{path}: line {lineno}: non-finite value")
            if not -90.0 <= lat <= 90.0:
                raise EventParseError(
                    f"{path}: line {lineno}: lat {lat} outside [-90, 90]")
            if not -360.0 <= lon <= 360.0:
                raise EventParseError(
                    f"{path}: line {lineno}: lon {lon} outside [-360, 360]")
            rows.append((lon, lat))
    if not rows:
        raise EventParseError(f"{path}: no event rows")
    arr = np.asarray(rows)
    return EventDataset(lonlat_to_xyz(arr[:, 0], arr[:, 1]),
                        source=str(path), original_rows=arr)


def write_events(dataset, path):
    """Write an EventDataset as a lon/lat CSV; floats are formatted with 17
    significant digits so a load/write cycle is the identity."""
    rows = dataset.original_rows
    if rows is None:
        rows = xyz_to_lonlat(dataset.points)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lon", "lat"])
        for lon, lat in rows:
            writer.writerow([f"{lon:.17g}", f"{lat:.17g}"])
