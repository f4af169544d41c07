"""Manipulator-family sampling and collision-free, pairwise-distinct datasets.

A family is a set of manipulators sharing one DH template (per degree of
freedom) but differing in link lengths. Samples are joint-angle draws that
survive two rejection filters: a >1 degree infinity-norm distinctness rule
against everything already accepted for that configuration, and the
self/ground collision check.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, column_names
from .errors import SaturationError
from .kinematics import (
    CollisionVerdict,
    DHJoint,
    ManipulatorConfig,
    THETA_RANGE,
    check_collision,
    dh_matrix,
    forward_kinematics,
)
from .seeding import substream

# Link-length recursion: next = max(decay*prev + jitter*prev*delta, floor).
LENGTH_DECAY = 0.75
LENGTH_JITTER = 0.15
MIN_LINK_CM = 5.0

# Distinctness rule: reject a draw whose infinity-norm distance to some
# accepted draw is <= this threshold (degrees).
DISTINCT_DEG = 1.0

MAX_CONSECUTIVE_REJECTIONS = 1_000_000

VALIDATION_SAMPLES = 10_000


@dataclass(frozen=True)
class JointTemplate:
    """Per-joint DH template: fixed offset/twist and the sampled-length slot."""

    theta_off: float
    alpha: float
    slot: str  # "a" or "d"
    lo: float
    hi: float


# DH templates for the three supported manipulator families. Per joint the
# translational length lives in exactly one of the a/d slots; the other is 0.
JOINT_TABLES: dict[int, tuple[JointTemplate, ...]] = {
    3: (
        JointTemplate(0.0, 90.0, "d", 40.0, 60.0),
        JointTemplate(90.0, 0.0, "a", 24.0, 36.0),
        JointTemplate(0.0, 0.0, "a", 15.0, 20.0),
    ),
    5: (
        JointTemplate(0.0, 90.0, "d", 40.0, 60.0),
        JointTemplate(90.0, 0.0, "a", 24.0, 36.0),
        JointTemplate(0.0, 0.0, "a", 15.0, 20.0),
        JointTemplate(-90.0, -90.0, "a", 9.0, 13.0),
        JointTemplate(0.0, 0.0, "d", 5.0, 8.0),
    ),
    6: (
        JointTemplate(0.0, 90.0, "d", 40.0, 60.0),
        JointTemplate(90.0, 0.0, "a", 24.0, 36.0),
        JointTemplate(-90.0, -90.0, "a", 15.0, 20.0),
        JointTemplate(0.0, 90.0, "d", 9.0, 13.0),
        JointTemplate(0.0, -90.0, "a", 5.0, 8.0),
        JointTemplate(0.0, 0.0, "d", 5.0, 5.0),
    ),
}


@dataclass(frozen=True)
class FamilySpec:
    """How many configurations and samples to generate for one DOF."""

    dof: int
    n_configs: int
    samples_per_config: int
    seed: int

    def __post_init__(self):
        if self.dof not in JOINT_TABLES:
            raise ValueError(f"dof must be one of {sorted(JOINT_TABLES)}, got {self.dof}")
        if self.n_configs < 1:
            raise ValueError("n_configs must be positive")
        if self.samples_per_config < 1:
            raise ValueError("samples_per_config must be positive")

    @property
    def total_samples(self) -> int:
        return self.n_configs * self.samples_per_config


def sample_link_lengths(dof: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a link-length chain: first uniform in its range, then the decay
    recursion with the 5 cm floor."""
    rows = JOINT_TABLES[dof]
    u = np.empty(dof)
    u[0] = rng.uniform(rows[0].lo, rows[0].hi)
    for i in range(1, dof):
        delta = rng.uniform(-1.0, 1.0)
        u[i] = max(LENGTH_DECAY * u[i - 1] + delta * LENGTH_JITTER * u[i - 1], MIN_LINK_CM)
    return u


def config_from_lengths(dof: int, lengths) -> ManipulatorConfig:
    """Place link lengths into the template's a/d slots.

    Lengths are clipped into the template's per-joint range: the recursion
    alone can escape those ranges (and cannot reach a fixed-length slot like
    the 6-DOF tool joint), so the range is enforced here.
    """
    rows = JOINT_TABLES[dof]
    lengths = np.asarray(lengths, dtype=float)
    if lengths.shape != (dof,):
        raise ValueError(f"expected {dof} lengths, got shape {lengths.shape}")
    joints = []
    for row, u in zip(rows, lengths):
        length = float(min(max(u, row.lo), row.hi))
        a = length if row.slot == "a" else 0.0
        d = length if row.slot == "d" else 0.0
        joints.append(DHJoint(theta_off=row.theta_off, a=a, d=d, alpha=row.alpha))
    return ManipulatorConfig(tuple(joints))


def sample_family_configs(spec: FamilySpec) -> list[ManipulatorConfig]:
    rng = substream(spec.seed, "link-lengths")
    return [config_from_lengths(spec.dof, sample_link_lengths(spec.dof, rng)) for _ in range(spec.n_configs)]


class DistinctnessIndex:
    """Exact accelerator for the >1 degree infinity-norm distinctness rule.

    Angles are quantized to whole degrees; every vector within 1 degree
    infinity-norm of a query lies in one of the 3^dof cells adjacent to the
    query's cell, so probing those cells is equivalent to a full scan.
    Insert-if-distinct is serialized by a lock so concurrent producers for the
    same configuration cannot both claim a slot.
    """

    def __init__(self, dof: int):
        self.dof = dof
        self._cells: dict[int, list[tuple[float, ...]]] = {}
        self._count = 0
        self._lock = threading.Lock()
        base = 364  # fits floor values -1..360 shifted by +2, collision-free
        self._dims = [base**i for i in range(dof)]
        self._neighbor_offsets = [
            sum(d * w for d, w in zip(deltas, self._dims))
            for deltas in itertools.product((-1, 0, 1), repeat=dof)
        ]

    def __len__(self) -> int:
        return self._count

    def _key(self, theta) -> int:
        return sum((math.floor(t) + 2) * w for t, w in zip(theta, self._dims))

    def is_distinct(self, theta) -> bool:
        key = self._key(theta)
        cells = self._cells
        for off in self._neighbor_offsets:
            bucket = cells.get(key + off)
            if bucket is None:
                continue
            for stored in bucket:
                for s, t in zip(stored, theta):
                    if abs(s - t) > DISTINCT_DEG:
                        break
                else:
                    return False
        return True

    def insert(self, theta) -> None:
        entry = tuple(float(t) for t in theta)
        self._cells.setdefault(self._key(theta), []).append(entry)
        self._count += 1

    def insert_if_distinct(self, theta) -> bool:
        with self._lock:
            if not self.is_distinct(theta):
                return False
            self.insert(theta)
            return True


def generate_config_dataset(
    config: ManipulatorConfig,
    n_samples: int,
    rng: np.random.Generator,
    meta: dict | None = None,
) -> Dataset:
    """Rejection-sample a collision-free, pairwise-distinct dataset.

    Draw order is the determinism anchor: rejected draws consume RNG values
    but no dataset slots, so identical (seed, config) always yields identical
    bytes. Aborts if the configuration saturates (over MAX_CONSECUTIVE_REJECTIONS
    rejected draws in a row).
    """
    dof = config.dof
    lo, hi = THETA_RANGE
    index = DistinctnessIndex(dof)
    thetas = np.empty((n_samples, dof))
    poses = np.empty((n_samples, 6))
    mats = np.empty((n_samples, dof, 16))
    accepted = 0
    rejections = 0
    name = (meta or {}).get("config", "<unnamed>")
    while accepted < n_samples:
        if rejections > MAX_CONSECUTIVE_REJECTIONS:
            raise SaturationError(
                f"configuration {name}: {rejections} consecutive rejections "
                f"after {accepted} accepted samples"
            )
        theta = rng.uniform(lo, hi, dof)
        if not index.is_distinct(theta):
            rejections += 1
            continue
        pose, transforms = forward_kinematics(config, theta)
        if check_collision(config, transforms) is not CollisionVerdict.FREE:
            rejections += 1
            continue
        index.insert(theta)
        thetas[accepted] = theta
        poses[accepted] = pose.as_vector()
        for j, joint in enumerate(config.joints):
            mats[accepted, j] = dh_matrix(joint, float(theta[j])).reshape(16)
        accepted += 1
        rejections = 0
    return _assemble_dataset(config, thetas, poses, mats, meta)


def _assemble_dataset(config, thetas, poses, mats, meta) -> Dataset:
    dof = config.dof
    n = thetas.shape[0]
    cols: dict[str, np.ndarray] = {}
    for j, joint in enumerate(config.joints, start=1):
        cols[f"a_{j}"] = np.full(n, joint.a)
        cols[f"d_{j}"] = np.full(n, joint.d)
        cols[f"alpha_{j}"] = np.full(n, joint.alpha)
        cols[f"theta_deg_{j}"] = thetas[:, j - 1].copy()
        cols[f"theta_rad_{j}"] = thetas[:, j - 1] * (math.pi / 180.0)
        cols[f"theta_off_{j}"] = np.full(n, joint.theta_off)
    for j in range(1, dof + 1):
        for r in range(4):
            for c in range(4):
                cols[f"A{j}_{r}{c}"] = mats[:, j - 1, 4 * r + c].copy()
    for k, name in enumerate(["x", "y", "z", "phi", "theta", "psi"]):
        cols[name] = poses[:, k].copy()
    full_meta = {"dof": dof}
    full_meta.update(meta or {})
    ds = Dataset(cols, full_meta)
    assert list(cols.keys()) == column_names(dof)
    return ds


def split_family(configs: list[ManipulatorConfig]) -> tuple[list[int], int]:
    """Withhold the longest chain for extrapolation testing.

    Returns (training config indices, test config index); ties on total
    length go to the lowest index.
    """
    if len(configs) < 2:
        raise ValueError("need at least two configurations to split")
    reaches = [c.reach_cm for c in configs]
    test_id = int(np.argmax(reaches))  # argmax takes the first maximum
    train_ids = [i for i in range(len(configs)) if i != test_id]
    return train_ids, test_id


def sample_validation_configs(
    spec: FamilySpec, max_reach_cm: float, count: int, max_attempts: int = 10_000
) -> list[ManipulatorConfig]:
    """Fresh link-length combinations whose total reach stays inside the
    training hull (no extrapolation needed)."""
    rng = substream(spec.seed, "val-link-lengths")
    found: list[ManipulatorConfig] = []
    for _ in range(max_attempts):
        if len(found) == count:
            return found
        config = config_from_lengths(spec.dof, sample_link_lengths(spec.dof, rng))
        if config.reach_cm <= max_reach_cm:
            found.append(config)
    raise SaturationError(
        f"could not draw {count} validation configurations within reach "
        f"{max_reach_cm:.2f} cm in {max_attempts} attempts"
    )


@dataclass
class FamilyResult:
    """Everything generate_family wrote, keyed by configuration name."""

    spec: FamilySpec
    configs: dict[str, ManipulatorConfig]
    datasets: dict[str, Dataset]
    splits: dict


def generate_family(
    spec: FamilySpec,
    out_dir=None,
    val_configs: int = 1,
    val_samples: int = VALIDATION_SAMPLES,
    threads: int = 1,
) -> FamilyResult:
    """Generate a full family: per-config datasets plus the split assignment.

    Training/test roles follow split_family; validation configurations are
    fresh draws inside the training reach hull, sharing val_samples rows as
    evenly as possible. With out_dir set, datasets, config files, and the
    split manifest are written there.
    """
    configs = sample_family_configs(spec)
    train_ids, test_id = split_family(configs)
    max_train_reach = max(configs[i].reach_cm for i in train_ids)
    vals = sample_validation_configs(spec, max_train_reach, val_configs) if val_configs else []

    jobs: list[tuple[str, ManipulatorConfig, int, str]] = []
    for i, config in enumerate(configs):
        role = "test" if i == test_id else "train"
        jobs.append((f"config_{i:02d}", config, spec.samples_per_config, role))
    per_val = [val_samples // max(val_configs, 1)] * val_configs
    for k in range(val_samples % max(val_configs, 1)):
        per_val[k] += 1
    for k, config in enumerate(vals):
        jobs.append((f"val_config_{k:02d}", config, per_val[k], "validation"))

    def run(job):
        name, config, n, role = job
        rng = substream(spec.seed, f"datagen-{name}")
        meta = {
            "config": name,
            "role": role,
            "seed": spec.seed,
            "reach_cm": config.reach_cm,
            "samples": n,
        }
        return name, generate_config_dataset(config, n, rng, meta)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(run, jobs))
    else:
        results = dict(map(run, jobs))

    names = [name for name, _, _, _ in jobs]
    all_configs = {name: cfg for name, cfg, _, _ in jobs}
    splits = {
        "dof": spec.dof,
        "train": [f"config_{i:02d}" for i in train_ids],
        "test": f"config_{test_id:02d}",
        "validation": [f"val_config_{k:02d}" for k in range(len(vals))],
        "reach_cm": {name: all_configs[name].reach_cm for name in names},
        "files": {name: f"{name}.dat" for name in names},
    }

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in names:
            results[name].save(out / f"{name}.dat")
            all_configs[name].save(out / f"{name}.json")
        (out / "splits.json").write_text(json.dumps(splits, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return FamilyResult(spec=spec, configs=all_configs, datasets=results, splits=splits)
