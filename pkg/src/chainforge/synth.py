"""Forward-kinematics scene synthesis for identification testing.

Places virtual master-marker poses for a chain descriptor, joint angles
and a noise model.  Scenes written by this module are the input format of
the identification pipeline, which makes the synthesizer the independent
oracle for round-trip verification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .descriptor import ChainDescriptor
from .geometry import Pose, axis_angle, compose, matrix_to_quat, quat_to_matrix
from .module_db import (
    INVERTED,
    UPRIGHT,
    ModuleDatabase,
    ModuleRecord,
    connection_transform,
)

SPURIOUS_ID_BASE = 10**6
SPURIOUS_ID_SPAN = 10**4


class SynthError(Exception):
    """Base class for scene-synthesis failures."""


class LimitViolation(SynthError):
    """A requested joint angle lies outside the type's joint limits."""


class MissingInstance(SynthError):
    """The registry has no free module of a required type."""


class SceneParseError(Exception):
    """A scene file is malformed; carries the failing location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class MarkerObservation:
    """One detected marker: its id and pose in the camera/world frame."""

    marker_id: int
    pose: Pose

    def __post_init__(self):
        if self.marker_id < 0:
            raise ValueError("marker ids are non-negative")


@dataclass(frozen=True)
class SceneConfig:
    """Noise model for synthesized scenes; all-zero means exact poses."""

    sigma_pos: float = 0.0
    sigma_rot: float = 0.0
    dropout_prob: float = 0.0
    spurious_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_pos, self.sigma_rot, self.dropout_prob) < 0.0:
            raise ValueError("noise parameters must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if self.spurious_count < 0:
            raise ValueError("spurious_count must be non-negative")


@dataclass(frozen=True)
class ModulePlacement:
    """A placed module: serial, master pose, and output-bundle pose if any."""

    serial: str
    master_pose: Pose
    output_pose: Pose | None = None


def assign_instances(
    desc: ChainDescriptor, db: ModuleDatabase, assignment: list[str] | None = None
) -> list[ModuleRecord]:
    """Pick a registry instance per chain entry.

    Without an explicit assignment, instances of each type are consumed in
    registry order.  An explicit assignment lists one serial per entry.
    """
    if assignment is not None:
        if len(assignment) != len(desc.entries):
            raise ValueError("assignment must name one serial per chain entry")
        by_serial = {r.serial: r for r in db.records}
        records = []
        for entry, serial in zip(desc.entries, assignment):
            rec = by_serial.get(serial)
            if rec is None:
                raise MissingInstance(f"serial {serial!r} is not registered")
            if rec.type_code != entry.type_code:
                raise MissingInstance(
                    f"serial {serial!r} has type {rec.type_code!r}, chain needs "
                    f"{entry.type_code!r}"
                )
            records.append(rec)
        if len({r.serial for r in records}) != len(records):
            raise MissingInstance("assignment repeats a serial")
        return records
    used: set[str] = set()
    records = []
    for entry in desc.entries:
        rec = next(
            (
                r
                for r in db.records_of_type(entry.type_code)
                if r.serial not in used
            ),
            None,
        )
        if rec is None:
            raise MissingInstance(f"registry has no free module of type {entry.type_code!r}")
        used.add(rec.serial)
        records.append(rec)
    return records


def forward_poses(
    desc: ChainDescriptor,
    joint_angles: list[float],
    db: ModuleDatabase,
    base: Pose | None = None,
    assignment: list[str] | None = None,
) -> list[ModulePlacement]:
    """Compose master (and output-bundle) poses for every module of a chain.

    `joint_angles` lists one angle per joint-kind entry in base-to-end
    order.  `base` is the world pose of the base module's master frame.
    """
    if base is None:
        base = Pose.identity()
    records = assign_instances(desc, db, assignment)
    thetas = _spread_joint_angles(desc, joint_angles, db)
    placements = []
    childward: Pose | None = None
    for entry, record, theta in zip(desc.entries, records, thetas):
        mt = db.types[entry.type_code]
        direction = INVERTED if entry.inverted else UPRIGHT
        if entry.inverted and not mt.invertible:
            raise ValueError(f"type {entry.type_code!r} cannot be installed inverted")
        if childward is None:
            master = base
        else:
            master = compose(
                compose(childward, connection_transform(entry.connection_angle)),
                mt.parentward_to_master(direction, theta),
            )
        output = None
        if mt.dual_bundle:
            output = compose(
                master, compose(mt.joint_rotation(theta), mt.master_offset_output)
            )
        placements.append(ModulePlacement(record.serial, master, output))
        childward = compose(master, mt.master_to_childward(direction, theta))
    return placements


def _spread_joint_angles(
    desc: ChainDescriptor, joint_angles: list[float], db: ModuleDatabase
) -> list[float]:
    joint_entries = [e for e in desc.entries if db.types[e.type_code].is_joint]
    if len(joint_angles) != len(joint_entries):
        raise ValueError(
            f"chain has {len(joint_entries)} joint modules, got "
            f"{len(joint_angles)} joint angles"
        )
    it = iter(joint_angles)
    thetas = []
    for entry in desc.entries:
        mt = db.types[entry.type_code]
        if mt.is_joint:
            theta = float(next(it))
            lo, hi = mt.joint_limits
            if not lo <= theta <= hi:
                raise LimitViolation(
                    f"type {entry.type_code!r}: joint angle {theta} outside [{lo}, {hi}]"
                )
            thetas.append(theta)
        else:
            thetas.append(0.0)
    return thetas


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-9:
            return v / n


def synthesize(
    desc: ChainDescriptor,
    joint_angles: list[float],
    db: ModuleDatabase,
    base: Pose | None = None,
    cfg: SceneConfig = SceneConfig(),
    assignment: list[str] | None = None,
) -> list[MarkerObservation]:
    """Generate marker observations for a chain under the given noise model.

    Deterministic for a fixed config: the random draw order per true marker
    is translation noise, rotation axis, rotation angle, then the dropout
    decision, with spurious markers generated last.
    """
    placements = forward_poses(desc, joint_angles, db, base, assignment)
    by_serial = {r.serial: r for r in db.records}
    true_markers: list[tuple[int, Pose]] = []
    for pl in placements:
        rec = by_serial[pl.serial]
        true_markers.append((rec.master_marker_id, pl.master_pose))
        if pl.output_pose is not None:
            true_markers.append((rec.output_marker_id, pl.output_pose))
    rng = np.random.default_rng(cfg.seed)
    observations = []
    for marker_id, pose in true_markers:
        t_noise = rng.normal(0.0, cfg.sigma_pos, size=3) if cfg.sigma_pos > 0 else np.zeros(3)
        axis = _random_unit(rng)
        angle = abs(rng.normal(0.0, cfg.sigma_rot)) if cfg.sigma_rot > 0 else 0.0
        dropped = rng.random() < cfg.dropout_prob
        if dropped:
            continue
        noisy = Pose(axis_angle(axis, angle) @ pose.rotation, pose.translation + t_noise)
        observations.append(MarkerObservation(marker_id, noisy))
    if cfg.spurious_count > 0:
        observations.extend(_spurious_markers(rng, true_markers, cfg.spurious_count))
    return observations


def _spurious_markers(
    rng: np.random.Generator, true_markers, count: int
) -> list[MarkerObservation]:
    ids = SPURIOUS_ID_BASE + rng.choice(SPURIOUS_ID_SPAN, size=count, replace=False)
    points = np.array([p.translation for _, p in true_markers])
    center = points.mean(axis=0)
    half = (points.max(axis=0) - points.min(axis=0)) / 2.0
    half = np.maximum(half * 1.2, 50.0)
    spurious = []
    for marker_id in ids:
        t = center + rng.uniform(-1.0, 1.0, size=3) * half
        q = _random_unit(rng)
        q = np.append(q * np.sin(rng.uniform(0, np.pi) / 2), np.cos(rng.uniform(0, np.pi) / 2))
        spurious.append(MarkerObservation(int(marker_id), Pose(quat_to_matrix(q), t)))
    return spurious


def write_scene(path, observations: list[MarkerObservation]):
    """Write observations as a JSON array at full float precision."""
    doc = [
        {
            "marker_id": obs.marker_id,
            "t": [float(v) for v in obs.pose.translation],
            "q": [float(v) for v in matrix_to_quat(obs.pose.rotation)],
        }
        for obs in observations
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_scene(path) -> list[MarkerObservation]:
    """Read a scene file written by write_scene."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(doc, list):
        raise SceneParseError("scene file must contain a JSON array")
    observations = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or set(entry) != {"marker_id", "t", "q"}:
            raise SceneParseError(
                f"observation {i} must have exactly keys marker_id, t, q"
            )
        t = entry["t"]
        q = entry["q"]
        if len(t) != 3 or len(q) != 4:
            raise SceneParseError(f"observation {i} needs t[3] and q[4]")
        observations.append(
            MarkerObservation(
                int(entry["marker_id"]),
                Pose(quat_to_matrix(q), np.asarray(t, dtype=float)),
            )
        )
    return observations
