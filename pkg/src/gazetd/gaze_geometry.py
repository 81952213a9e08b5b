"""Binocular gaze geometry and the synthetic labelled-gaze generator.

Frame: display-anchored, x right, y up, z toward the scene. The eyes sit
near z = 0 and the virtual display plane is z = ``d_v``. A sample's 15
features are laid out as::

    rlx rly rlz rrx rry rrz | elx ely elz erx ery erz | gx gy dv
    gaze directions (6)     | eye centres (6)         | plane midpoint + distance (3)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

FEATURE_NAMES = (
    "rlx", "rly", "rlz", "rrx", "rry", "rrz",
    "elx", "ely", "elz", "erx", "ery", "erz",
    "gx", "gy", "dv",
)
CSV_HEADER = FEATURE_NAMES + ("label",)
N_FEATURES = len(FEATURE_NAMES)

# column slices for the three model streams
ROTATION = slice(0, 6)
POSITION = slice(6, 12)
INTERSECTION = slice(12, 15)


class DepthLabel(IntEnum):
    ON_PLANE = 0
    OUT_PLANE_NEAR = 1
    OUT_PLANE_FAR = 2


class GeometryError(ValueError):
    pass


class SingularGazeError(GeometryError):
    """Gaze rays are (numerically) parallel; fixation is at infinity."""


class DivergentGazeError(GeometryError):
    """Plane disparity exceeds the interocular distance (negative depth)."""


class NoIntersectionError(GeometryError):
    pass


@dataclass(frozen=True)
class EyeState:
    e_left: np.ndarray
    e_right: np.ndarray
    r_left: np.ndarray
    r_right: np.ndarray

    def __post_init__(self):
        for name in ("r_left", "r_right"):
            n = float(np.linalg.norm(getattr(self, name)))
            if abs(n - 1.0) > 1e-9:
                raise GeometryError(f"{name} is not a unit vector (norm {n!r})")
        if not self.e_left[0] < self.e_right[0]:
            raise GeometryError("left eye must have the smaller x coordinate")

    @property
    def interocular(self) -> float:
        return float(self.e_right[0] - self.e_left[0])


@dataclass(frozen=True)
class PlaneIntersections:
    g_left: np.ndarray
    g_right: np.ndarray
    d_v: float

    @property
    def g_mid(self) -> np.ndarray:
        return 0.5 * (self.g_left + self.g_right)

    @property
    def disparity(self) -> float:
        return abs(float(self.g_left[0] - self.g_right[0]))


def triangulate_depth(delta_ex: float, d_v: float, delta_gx: float,
                      eps: float = 1e-12) -> float:
    """Fixation depth from interocular distance, plane distance and plane disparity.

    ``delta_ex * d_v / (delta_ex - delta_gx)``. Zero disparity means the eyes
    converge on the plane itself.
    """
    if not delta_ex > 0:
        raise GeometryError(f"interocular distance must be positive, got {delta_ex!r}")
    if not d_v > 0:
        raise GeometryError(f"plane distance must be positive, got {d_v!r}")
    if delta_gx < 0:
        raise GeometryError(f"disparity must be non-negative, got {delta_gx!r}")
    denom = delta_ex - delta_gx
    if abs(denom) < eps:
        raise SingularGazeError(
            f"disparity {delta_gx!r} equals interocular distance {delta_ex!r}")
    if denom < 0:
        raise DivergentGazeError(
            f"disparity {delta_gx!r} exceeds interocular distance {delta_ex!r}")
    return delta_ex * d_v / denom


def intersect_plane(eye, direction, d_v: float) -> np.ndarray:
    eye = np.asarray(eye, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if direction[2] <= 0:
        raise NoIntersectionError("gaze ray does not travel toward the plane")
    if eye[2] >= d_v:
        raise NoIntersectionError("eye is not in front of the plane")
    t = (d_v - eye[2]) / direction[2]
    return (eye + t * direction)[:2]


def intersect_eyes(state: EyeState, d_v: float) -> PlaneIntersections:
    return PlaneIntersections(
        g_left=intersect_plane(state.e_left, state.r_left, d_v),
        g_right=intersect_plane(state.e_right, state.r_right, d_v),
        d_v=d_v,
    )


@dataclass
class GeneratorConfig:
    """Parameters of the synthetic binocular fixation model (metres, degrees)."""

    d_v: float = 0.8
    ipd_mean: float = 0.063
    ipd_std: float = 0.003
    head_jitter: float = 0.05
    lateral_spread: float = 0.3
    near_depth: tuple[float, float] = (6.0, 1.0)
    far_depth: tuple[float, float] = (12.0, 2.0)
    truncate_sigma: float = 2.0
    # shared across both eyes (tracker calibration / head-pose error)
    angular_noise_deg: float = 0.5
    # independent per eye; this is what corrupts vergence
    vergence_noise_deg: float = 0.02

    def validate(self) -> None:
        if not self.d_v > 0:
            raise GeometryError("d_v must be positive")
        if not (self.ipd_mean > 0 and self.ipd_std >= 0):
            raise GeometryError("invalid interocular distance distribution")
        if self.ipd_mean - self.truncate_sigma * self.ipd_std <= 0:
            raise GeometryError("interocular distribution reaches non-positive values")
        if self.head_jitter < 0 or self.lateral_spread < 0:
            raise GeometryError("jitter and spread must be non-negative")
        if self.head_jitter >= self.d_v:
            raise GeometryError("head jitter would put the eyes behind the plane")
        for name in ("near_depth", "far_depth"):
            mean, std = getattr(self, name)
            if std < 0 or mean - self.truncate_sigma * std <= self.d_v + self.head_jitter:
                raise GeometryError(f"{name} must lie beyond the display plane")
        if self.truncate_sigma <= 0:
            raise GeometryError("truncate_sigma must be positive")
        if self.angular_noise_deg < 0 or self.vergence_noise_deg < 0:
            raise GeometryError("noise levels must be non-negative")

    def noiseless(self) -> "GeneratorConfig":
        return replace(self, angular_noise_deg=0.0, vergence_noise_deg=0.0)


@dataclass
class GazeDataset:
    """Feature matrix (N x 15), integer labels and the true fixation depth."""

    features: np.ndarray
    labels: np.ndarray
    depths: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"expected an (N, {N_FEATURES}) feature matrix, "
                             f"got {self.features.shape}")
        if self.labels.shape != (len(self.features),):
            raise ValueError("labels do not match features")
        if self.depths is not None:
            self.depths = np.asarray(self.depths, dtype=np.float64)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "GazeDataset":
        depths = None if self.depths is None else self.depths[idx]
        return GazeDataset(self.features[idx], self.labels[idx], depths)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(DepthLabel))


def _truncated_normal(rng, mean, std, k, n):
    out = rng.normal(mean, std, n)
    if std == 0:
        return out
    bad = np.abs(out - mean) > k * std
    while bad.any():
        out[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = np.abs(out - mean) > k * std
    return out


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _perturb(dirs, d_yaw, d_pitch):
    yaw = np.arctan2(dirs[:, 0], dirs[:, 2]) + d_yaw
    pitch = np.arctan2(dirs[:, 1], np.hypot(dirs[:, 0], dirs[:, 2])) + d_pitch
    cp = np.cos(pitch)
    return np.stack([cp * np.sin(yaw), np.sin(pitch), cp * np.cos(yaw)], axis=1)


def generate_dataset(n: int, seed: int, cfg: GeneratorConfig | None = None) -> GazeDataset:
    """Draw ``n`` class-balanced binocular fixations and their plane features."""
    cfg = cfg or GeneratorConfig()
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    cfg.validate()
    rng = np.random.default_rng(seed)

    labels = rng.permutation(np.arange(n) % len(DepthLabel))
    ipd = _truncated_normal(rng, cfg.ipd_mean, cfg.ipd_std, cfg.truncate_sigma, n)
    mid = rng.uniform(-cfg.head_jitter, cfg.head_jitter, (n, 3))
    # instantaneous eye-midpoint-to-plane distance
    dv = cfg.d_v - mid[:, 2]

    depth = dv.copy()
    for label, (mean, std) in ((DepthLabel.OUT_PLANE_NEAR, cfg.near_depth),
                               (DepthLabel.OUT_PLANE_FAR, cfg.far_depth)):
        sel = labels == label
        depth[sel] = _truncated_normal(rng, mean, std, cfg.truncate_sigma, int(sel.sum()))

    lateral = rng.uniform(-cfg.lateral_spread, cfg.lateral_spread, (n, 2))
    fix = mid + np.column_stack([lateral, depth])
    half = np.column_stack([ipd / 2, np.zeros(n), np.zeros(n)])
    e_l, e_r = mid - half, mid + half
    r_l, r_r = _unit(fix - e_l), _unit(fix - e_r)

    if cfg.angular_noise_deg > 0 or cfg.vergence_noise_deg > 0:
        shared = rng.normal(0.0, math.radians(cfg.angular_noise_deg), (n, 2))
        own = rng.normal(0.0, math.radians(cfg.vergence_noise_deg), (n, 4))
        r_l = _perturb(r_l, shared[:, 0] + own[:, 0], shared[:, 1] + own[:, 1])
        r_r = _perturb(r_r, shared[:, 0] + own[:, 2], shared[:, 1] + own[:, 3])

    t_l = dv / r_l[:, 2]
    t_r = dv / r_r[:, 2]
    g_l = e_l[:, :2] + t_l[:, None] * r_l[:, :2]
    g_r = e_r[:, :2] + t_r[:, None] * r_r[:, :2]
    g_mid = 0.5 * (g_l + g_r)

    feats = np.column_stack([r_l, r_r, e_l, e_r, g_mid, dv])
    return GazeDataset(feats, labels, depth)


def plane_disparity(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover (interocular distance, plane distance, disparity) from feature rows."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    dv = f[:, 14]
    gxl = f[:, 6] + f[:, 0] / f[:, 2] * dv
    gxr = f[:, 9] + f[:, 3] / f[:, 5] * dv
    return f[:, 9] - f[:, 6], dv, np.abs(gxl - gxr)


def plugin_classify(features: np.ndarray, near_threshold: float | None = None,
                    far_threshold: float = 9.0) -> np.ndarray:
    """Threshold the triangulated depth; the baseline the network must beat.

    The near threshold defaults to ``(d_v + 6) / 2`` per row.
    """
    delta_ex, dv, delta_gx = plane_disparity(features)
    out = np.empty(len(dv), dtype=np.int64)
    for i in range(len(dv)):
        try:
            depth = triangulate_depth(delta_ex[i], dv[i], delta_gx[i])
        except GeometryError:
            depth = math.inf
        lo = (dv[i] + 6.0) / 2 if near_threshold is None else near_threshold
        if depth < lo:
            out[i] = DepthLabel.ON_PLANE
        elif depth < far_threshold:
            out[i] = DepthLabel.OUT_PLANE_NEAR
        else:
            out[i] = DepthLabel.OUT_PLANE_FAR
    return out


def write_csv(dataset: GazeDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([f"{v:.9g}" for v in row] + [int(label)])


def read_csv(path) -> GazeDataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
            try:
                feats.append([float(v) for v in row[:-1]])
                label = int(row[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if label not in (0, 1, 2):
                raise ValueError(f"{path}:{lineno}: label {label} not in {{0,1,2}}")
            labels.append(label)
    if not labels:
        raise ValueError(f"{path}: no samples")
    return GazeDataset(np.array(feats), np.array(labels))
