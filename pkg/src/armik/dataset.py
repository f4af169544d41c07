"""Columnar float64 dataset container with a self-describing header.

File layout: an 8-byte magic, a little-endian uint64 header length, a JSON
header (column names, units, row count, free-form metadata), then one
contiguous little-endian float64 block per column in header order. Writes are
byte-deterministic for identical content, which the reproducibility contract
depends on; that is why this format is hand-rolled instead of reusing
archive-based containers that embed timestamps.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import DHJoint, ManipulatorConfig

MAGIC = b"ACOLDS01"


def column_names(dof: int) -> list[str]:
    """Canonical column order for a manipulator sample table."""
    names = []
    for j in range(1, dof + 1):
        names += [f"a_{j}", f"d_{j}", f"alpha_{j}", f"theta_deg_{j}", f"theta_rad_{j}", f"theta_off_{j}"]
    for j in range(1, dof + 1):
        for r in range(4):
            for c in range(4):
                names.append(f"A{j}_{r}{c}")
    names += ["x", "y", "z", "phi", "theta", "psi"]
    return names


def column_units(dof: int) -> list[str]:
    units = []
    for _ in range(dof):
        units += ["cm", "cm", "deg", "deg", "rad", "deg"]
    units += [""] * (16 * dof)
    units += ["cm", "cm", "cm", "deg", "deg", "deg"]
    return units


@dataclass
class Dataset:
    """Ordered mapping of equal-length float64 columns plus metadata."""

    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths: {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    @property
    def dof(self) -> int:
        return int(self.meta["dof"])

    def matrix(self, names: list[str]) -> np.ndarray:
        """Columns stacked into an (n_rows, len(names)) array."""
        return np.stack([self.columns[n] for n in names], axis=1)

    def row(self, i: int) -> dict[str, float]:
        return {name: float(col[i]) for name, col in self.columns.items()}

    def take(self, idx) -> "Dataset":
        return Dataset({n: c[idx].copy() for n, c in self.columns.items()}, dict(self.meta))

    def save(self, path) -> None:
        units = self.meta.get("units")
        header = {
            "columns": list(self.columns.keys()),
            "meta": {k: v for k, v in self.meta.items() if k != "units"},
            "rows": self.n_rows,
            "units": units if units is not None else column_units(self.dof),
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for col in self.columns.values():
                f.write(np.ascontiguousarray(col, dtype="<f8").tobytes())

    @staticmethod
    def load(path) -> "Dataset":
        raw = Path(path).read_bytes()
        if raw[: len(MAGIC)] != MAGIC:
            raise ValueError(f"{path}: not a columnar dataset file")
        (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
        start = len(MAGIC) + 8
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
        rows = header["rows"]
        offset = start + hlen
        columns: dict[str, np.ndarray] = {}
        for name in header["columns"]:
            end = offset + 8 * rows
            columns[name] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64)
            offset = end
        if offset != len(raw):
            raise ValueError(f"{path}: trailing bytes after column data")
        meta = dict(header["meta"])
        meta["units"] = header.get("units")
        return Dataset(columns, meta)

    def to_csv(self, path) -> None:
        """Delimited-text export; %.17g preserves float64 exactly."""
        names = list(self.columns.keys())
        mat = self.matrix(names) if names else np.zeros((0, 0))
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(names) + "\n")
            np.savetxt(f, mat, fmt="%.17g", delimiter=",")


def concat_datasets(datasets: list[Dataset]) -> Dataset:
    """Row-concatenation in the given order; metadata taken from the first."""
    if not datasets:
        raise ValueError("need at least one dataset")
    names = list(datasets[0].columns.keys())
    for ds in datasets[1:]:
        if list(ds.columns.keys()) != names:
            raise ValueError("datasets have mismatched column sets")
    cols = {n: np.concatenate([ds.columns[n] for ds in datasets]) for n in names}
    return Dataset(cols, dict(datasets[0].meta))


def config_from_row(row: dict[str, float], dof: int) -> ManipulatorConfig:
    """Rebuild the DH table of the manipulator a sample row came from."""
    joints = tuple(
        DHJoint(
            theta_off=row[f"theta_off_{j}"],
            a=row[f"a_{j}"],
            d=row[f"d_{j}"],
            alpha=row[f"alpha_{j}"],
        )
        for j in range(1, dof + 1)
    )
    return ManipulatorConfig(joints)
