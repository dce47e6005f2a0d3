"""Tracking-by-detection: constant-velocity Kalman filtering, gated
association (Mahalanobis + IoU + appearance), and track lifecycle.

The tracker state is single-writer: one thread calls ``Tracker.step`` at a
time. Snapshots returned by ``step`` are immutable values.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, Point, bbox_center, iou_matrix

log = logging.getLogger(__name__)

VEHICLE_CLASSES = ("Bus", "Bicycle/Motorcycle", "Truck", "Pedestrian", "Car")

# 0.95 quantile of the chi-square distribution with 4 degrees of freedom;
# the default gate for a 4-dim measurement residual.
CHI2_95_4DOF = 9.4877

# Cosine distance of unit vectors lives in [0, 2]; used to normalize the
# appearance metric into [0, 1] alongside the gate-normalized motion metric.
APPEARANCE_DISTANCE_MAX = 2.0

# Cost assigned to gated-out pairs so the solver prefers any feasible match;
# feasible combined costs are <= ~1, so this dominates every sum of them.
INFEASIBLE_COST = 1e5


class CorruptedTrackError(RuntimeError):
    """A track's state or covariance went non-finite / non-positive-definite."""


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


class MotionState(NamedTuple):
    """Box center, height, aspect ratio (w/h), and their per-frame velocities."""

    x: float
    y: float
    h: float
    r: float
    vx: float
    vy: float
    vh: float
    vr: float


@dataclass(frozen=True, eq=False)
class Detection:
    bbox: BoundingBox
    vehicle_class: str
    confidence: float
    appearance: Optional[np.ndarray] = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Detection):
            return NotImplemented
        if (self.bbox, self.vehicle_class, self.confidence) != (
                other.bbox, other.vehicle_class, other.confidence):
            return False
        if (self.appearance is None) != (other.appearance is None):
            return False
        return self.appearance is None or np.array_equal(self.appearance,
                                                         other.appearance)

    def __post_init__(self) -> None:
        if self.vehicle_class not in VEHICLE_CLASSES and self.vehicle_class != "Unknown":
            raise ValueError(f"unknown vehicle class: {self.vehicle_class!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if self.appearance is not None:
            vec = np.asarray(self.appearance, dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            if vec.ndim != 1 or vec.size == 0 or norm == 0.0 or not np.isfinite(norm):
                raise ValueError("appearance vector must be a non-zero 1-d array")
            object.__setattr__(self, "appearance", vec / norm)

    def measurement(self) -> np.ndarray:
        """Measurement vector (cx, cy, h, r)."""
        b = self.bbox
        cx, cy = bbox_center(b)
        h = b.height
        return np.array([cx, cy, h, b.width / h], dtype=np.float64)


@dataclass
class TrackerParams:
    iou_min: float = 0.3
    lambda_weight: float = 0.5
    mahalanobis_gate: float = CHI2_95_4DOF
    max_age: int = 30
    n_init: int = 3
    gallery_capacity: int = 100
    iou_gating: bool = True
    class_consistent_matching: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_min < 1.0:
            raise ValueError(f"iou_min must be in (0,1): {self.iou_min}")
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError(f"lambda_weight must be in [0,1]: {self.lambda_weight}")
        if self.mahalanobis_gate <= 0.0:
            raise ValueError(f"mahalanobis_gate must be positive: {self.mahalanobis_gate}")
        if self.max_age < 1 or self.n_init < 1 or self.gallery_capacity < 1:
            raise ValueError("max_age, n_init and gallery_capacity must be >= 1")


class BoxKalmanFilter:
    """Constant-velocity filter over (cx, cy, h, r) with per-frame dt = 1.

    Noise scales follow the height-relative scheme: position/size stds are
    ``std_weight_position * h`` and velocity stds ``std_weight_velocity * h``.
    The aspect ratio is dimensionless and gets small fixed stds instead.
    """

    NDIM = 4
    RATIO_POS_STD = 1e-2
    RATIO_VEL_STD = 1e-5
    RATIO_MEAS_STD = 1e-1

    def __init__(self, std_weight_position: float = 1.0 / 20,
                 std_weight_velocity: float = 1.0 / 160):
        self.std_weight_position = std_weight_position
        self.std_weight_velocity = std_weight_velocity
        self._motion_mat = np.eye(8)
        self._motion_mat[:4, 4:] = np.eye(4)
        self._update_mat = np.eye(4, 8)

    def initiate(self, measurement: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """New track state from an unmatched measurement; velocities start at 0."""
        mean = np.zeros(8)
        mean[:4] = measurement
        h = measurement[2]
        std = [
            2 * self.std_weight_position * h,
            2 * self.std_weight_position * h,
            2 * self.std_weight_position * h,
            self.RATIO_POS_STD,
            10 * self.std_weight_velocity * h,
            10 * self.std_weight_velocity * h,
            10 * self.std_weight_velocity * h,
            self.RATIO_VEL_STD,
        ]
        return mean, np.diag(np.square(std))

    def _process_noise(self, h: float) -> np.ndarray:
        std = [
            self.std_weight_position * h,
            self.std_weight_position * h,
            self.std_weight_position * h,
            self.RATIO_POS_STD,
            self.std_weight_velocity * h,
            self.std_weight_velocity * h,
            self.std_weight_velocity * h,
            self.RATIO_VEL_STD,
        ]
        return np.diag(np.square(std))

    def measurement_noise(self, h: float) -> np.ndarray:
        std = [
            self.std_weight_position * h,
            self.std_weight_position * h,
            self.std_weight_position * h,
            self.RATIO_MEAS_STD,
        ]
        return np.diag(np.square(std))

    def predict(self, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not np.all(np.isfinite(mean)):
            raise CorruptedTrackError(f"non-finite state: {mean}")
        new_mean = self._motion_mat @ mean
        new_cov = self._motion_mat @ cov @ self._motion_mat.T + self._process_noise(mean[2])
        return new_mean, 0.5 * (new_cov + new_cov.T)

    def project(self, mean: np.ndarray, cov: np.ndarray,
                measurement_noise: Optional[np.ndarray] = None
                ) -> tuple[np.ndarray, np.ndarray]:
        """Project state distribution into measurement space (innovation covariance)."""
        if measurement_noise is None:
            measurement_noise = self.measurement_noise(mean[2])
        proj_mean = self._update_mat @ mean
        proj_cov = self._update_mat @ cov @ self._update_mat.T + measurement_noise
        return proj_mean, proj_cov

    def update(self, mean: np.ndarray, cov: np.ndarray, measurement: np.ndarray,
               measurement_noise: Optional[np.ndarray] = None
               ) -> tuple[np.ndarray, np.ndarray]:
        proj_mean, proj_cov = self.project(mean, cov, measurement_noise)
        if measurement_noise is None:
            measurement_noise = self.measurement_noise(mean[2])
        try:
            chol = scipy.linalg.cho_factor(proj_cov, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise CorruptedTrackError(f"innovation covariance not positive definite: {exc}")
        gain = scipy.linalg.cho_solve(chol, (cov @ self._update_mat.T).T,
                                      check_finite=False).T
        innovation = measurement - proj_mean
        new_mean = mean + gain @ innovation
        # Joseph form keeps the covariance PSD under any gain.
        ikh = np.eye(8) - gain @ self._update_mat
        new_cov = ikh @ cov @ ikh.T + gain @ measurement_noise @ gain.T
        return new_mean, 0.5 * (new_cov + new_cov.T)

    def gating_distance(self, mean: np.ndarray, cov: np.ndarray,
                        measurements: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distances of (n, 4) measurements to the state."""
        proj_mean, proj_cov = self.project(mean, cov)
        try:
            chol = scipy.linalg.cho_factor(proj_cov, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise CorruptedTrackError(f"innovation covariance not positive definite: {exc}")
        residuals = np.atleast_2d(measurements) - proj_mean
        solved = scipy.linalg.cho_solve(chol, residuals.T, check_finite=False)
        return np.einsum("ij,ji->i", residuals, solved)

    def _noise_vars(self, heights: np.ndarray, position: bool) -> np.ndarray:
        """Per-track process/measurement variance rows (n, 4)."""
        weight = self.std_weight_position if position else self.std_weight_velocity
        ratio_std = self.RATIO_POS_STD if position else self.RATIO_VEL_STD
        out = np.empty((heights.shape[0], 4))
        out[:, :3] = np.square(weight * heights)[:, None]
        out[:, 3] = ratio_std ** 2
        return out

    def predict_batch(self, means: np.ndarray, covs: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``predict`` over (n, 8) means and (n, 8, 8) covariances."""
        if not np.all(np.isfinite(means)):
            raise CorruptedTrackError("non-finite state in batch")
        new_means = means @ self._motion_mat.T
        new_covs = self._motion_mat @ covs @ self._motion_mat.T
        heights = means[:, 2]
        q = np.concatenate(
            [self._noise_vars(heights, True), self._noise_vars(heights, False)], axis=1
        )
        idx = np.arange(8)
        new_covs[:, idx, idx] += q
        return new_means, 0.5 * (new_covs + new_covs.transpose(0, 2, 1))

    def update_batch(self, means: np.ndarray, covs: np.ndarray,
                     measurements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``update``; raises on any numerical failure so the
        caller can fall back to per-track updates."""
        heights = means[:, 2]
        r_vars = np.empty((means.shape[0], 4))
        r_vars[:, :3] = np.square(self.std_weight_position * heights)[:, None]
        r_vars[:, 3] = self.RATIO_MEAS_STD ** 2
        s = covs[:, :4, :4].copy()
        idx4 = np.arange(4)
        s[:, idx4, idx4] += r_vars
        np.linalg.cholesky(s)  # positive-definiteness check for the whole batch
        pht = covs[:, :, :4]
        gain = np.linalg.solve(s, pht.transpose(0, 2, 1)).transpose(0, 2, 1)
        innovation = measurements - means[:, :4]
        new_means = means + np.einsum("nij,nj->ni", gain, innovation)
        ikh = np.tile(np.eye(8), (means.shape[0], 1, 1))
        ikh[:, :, :4] -= gain
        new_covs = ikh @ covs @ ikh.transpose(0, 2, 1)
        new_covs += np.einsum("nik,nk,njk->nij", gain, r_vars, gain)
        if not (np.all(np.isfinite(new_means)) and np.all(np.isfinite(new_covs))):
            raise CorruptedTrackError("non-finite batch update result")
        return new_means, 0.5 * (new_covs + new_covs.transpose(0, 2, 1))

    def gating_distance_matrix(self, means: np.ndarray, covs: np.ndarray,
                               measurements: np.ndarray) -> np.ndarray:
        """Batched gating: (tracks, detections) squared Mahalanobis matrix.

        The measurement matrix picks the first four state components, so the
        projection is plain slicing plus per-track measurement noise.
        """
        proj_means = means[:, :4]
        heights = means[:, 2]
        noise_vars = np.empty((means.shape[0], 4))
        noise_vars[:, :3] = np.square(self.std_weight_position * heights)[:, None]
        noise_vars[:, 3] = self.RATIO_MEAS_STD ** 2
        proj_covs = covs[:, :4, :4].copy()
        idx = np.arange(4)
        proj_covs[:, idx, idx] += noise_vars
        residuals = measurements[None, :, :] - proj_means[:, None, :]
        try:
            solved = np.linalg.solve(proj_covs, residuals.transpose(0, 2, 1))
        except np.linalg.LinAlgError as exc:
            raise CorruptedTrackError(f"innovation covariance not invertible: {exc}")
        return np.einsum("ndk,nkd->nd", residuals, solved)


@dataclass
class Track:
    """A persistent vehicle identity; ids are assigned once and never reused."""

    track_id: int
    mean: np.ndarray
    covariance: np.ndarray
    status: TrackStatus
    vehicle_class: str
    confidence: float
    hits: int = 1
    time_since_update: int = 0
    gallery: deque = field(default_factory=lambda: deque(maxlen=100))
    last_detection: Optional[Detection] = None

    @property
    def state(self) -> MotionState:
        return MotionState(*self.mean)

    def to_bbox(self) -> BoundingBox:
        x, y, h, r = self.mean[:4]
        w = r * h
        return BoundingBox(x - w / 2, y - h / 2, x + w / 2, y + h / 2)

    def is_confirmed(self) -> bool:
        return self.status is TrackStatus.CONFIRMED


class TrackedVehicle(NamedTuple):
    """Per-frame tracker output for one confirmed vehicle."""

    track_id: int
    bbox: BoundingBox
    vehicle_class: str
    center: Point


class Association(NamedTuple):
    matches: list[tuple[int, int]]  # (track_id, detection index)
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


def mahalanobis_sq(track: Track, detection: Detection,
                   kf: Optional[BoxKalmanFilter] = None) -> float:
    """Squared Mahalanobis distance of the detection under the track's
    innovation covariance (4-dim measurement space)."""
    kf = kf or _DEFAULT_KF
    return float(kf.gating_distance(track.mean, track.covariance,
                                    detection.measurement()[None, :])[0])


def appearance_distance(gallery: Sequence[np.ndarray], appearance: np.ndarray) -> float:
    """Min cosine distance between the query and any gallery vector.

    Raises ValueError on an empty gallery or a dimension mismatch; callers
    fall back to motion-only association in that case.
    """
    if len(gallery) == 0:
        raise ValueError("empty appearance gallery")
    stack = np.asarray(list(gallery), dtype=np.float64)
    query = np.asarray(appearance, dtype=np.float64)
    if stack.shape[1] != query.shape[0]:
        raise ValueError(
            f"appearance dimension mismatch: gallery {stack.shape[1]}, query {query.shape[0]}"
        )
    return float(np.min(1.0 - stack @ query))


def combined_cost(d_motion: float, d_appearance: float, lambda_weight: float,
                  motion_gate: float = 1.0,
                  appearance_gate: float = 1.0) -> float:
    """Weighted blend of the two association metrics.

    Each metric is divided by its gate threshold first so both lie in
    comparable [0, 1] ranges; pass gates of 1.0 for already-normalized inputs.
    """
    return (lambda_weight * (d_motion / motion_gate)
            + (1.0 - lambda_weight) * (d_appearance / appearance_gate))


def solve_assignment(cost: np.ndarray, feasible: np.ndarray
                     ) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Optimal assignment restricted to feasible pairs.

    Among assignments with the maximum number of feasible pairs, returns one
    minimizing the summed cost of those pairs. Infeasible pairs never appear
    in the result.
    """
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return [], list(range(n_rows)), list(range(n_cols))
    working = np.where(feasible, cost, INFEASIBLE_COST)
    rows, cols = linear_sum_assignment(working)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if feasible[r, c]]
    matched_rows = {r for r, _ in pairs}
    matched_cols = {c for _, c in pairs}
    unmatched_rows = [r for r in range(n_rows) if r not in matched_rows]
    unmatched_cols = [c for c in range(n_cols) if c not in matched_cols]
    return pairs, unmatched_rows, unmatched_cols


def associate(tracks: Sequence[Track], detections: Sequence[Detection],
              params: TrackerParams,
              kf: Optional[BoxKalmanFilter] = None) -> Association:
    """Gated minimum-cost assignment between predicted tracks and detections.

    A pair is infeasible when its Mahalanobis distance exceeds the gate or
    (with IoU gating on) its boxes overlap less than ``iou_min``.
    """
    kf = kf or _DEFAULT_KF
    if not tracks or not detections:
        return Association([], [t.track_id for t in tracks], list(range(len(detections))))

    measurements = np.stack([d.measurement() for d in detections])
    det_boxes = np.array(
        [[d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max] for d in detections]
    )
    track_boxes = np.empty((len(tracks), 4))
    for i, t in enumerate(tracks):
        b = t.to_bbox()
        track_boxes[i] = (b.x_min, b.y_min, b.x_max, b.y_max)
    ious = iou_matrix(track_boxes, det_boxes)

    means = np.stack([t.mean for t in tracks])
    covs = np.stack([t.covariance for t in tracks])
    maha = kf.gating_distance_matrix(means, covs, measurements)
    feasible = maha <= params.mahalanobis_gate
    if params.iou_gating:
        feasible &= ious >= params.iou_min
    if params.class_consistent_matching:
        det_classes = [d.vehicle_class for d in detections]
        feasible &= np.array(
            [[c == t.vehicle_class for c in det_classes] for t in tracks]
        )

    cost = maha / params.mahalanobis_gate  # motion-only baseline
    app_indices = [j for j, d in enumerate(detections) if d.appearance is not None]
    if app_indices:
        queries = np.stack([detections[j].appearance for j in app_indices])
        for i, track in enumerate(tracks):
            if len(track.gallery) == 0:
                continue
            gallery = np.asarray(track.gallery, dtype=np.float64)
            if gallery.shape[1] != queries.shape[1]:
                continue  # dimension mismatch: keep motion-only costs
            d_app = np.min(1.0 - gallery @ queries.T, axis=0)
            cost[i, app_indices] = combined_cost(
                maha[i, app_indices], d_app, params.lambda_weight,
                motion_gate=params.mahalanobis_gate,
                appearance_gate=APPEARANCE_DISTANCE_MAX,
            )

    pairs, unmatched_t, unmatched_d = solve_assignment(cost, feasible)
    matches = [(tracks[i].track_id, j) for i, j in pairs]
    return Association(matches, [tracks[i].track_id for i in unmatched_t], unmatched_d)


class Tracker:
    """Multi-vehicle tracker; ids increase monotonically and are never reused."""

    def __init__(self, params: Optional[TrackerParams] = None,
                 kf: Optional[BoxKalmanFilter] = None):
        self.params = params or TrackerParams()
        self.kf = kf or BoxKalmanFilter()
        self.tracks: list[Track] = []
        self._next_id = 1

    def predict(self, track: Track) -> Track:
        """Constant-velocity propagation plus process noise; ages the track."""
        if track.status is TrackStatus.DELETED:
            raise ValueError(f"track {track.track_id} is deleted")
        track.mean, track.covariance = self.kf.predict(track.mean, track.covariance)
        track.time_since_update += 1
        return track

    def update(self, track: Track, detection: Detection) -> Track:
        """Measurement update; refreshes lifecycle counters and the gallery."""
        track.mean, track.covariance = self.kf.update(
            track.mean, track.covariance, detection.measurement()
        )
        self._post_update(track, detection)
        return track

    def _post_update(self, track: Track, detection: Detection) -> None:
        track.hits += 1
        track.time_since_update = 0
        track.confidence = detection.confidence
        track.last_detection = detection
        if detection.appearance is not None:
            track.gallery.append(detection.appearance)
        if track.status is TrackStatus.TENTATIVE and track.hits >= self.params.n_init:
            track.status = TrackStatus.CONFIRMED

    def _new_track(self, detection: Detection) -> Track:
        mean, cov = self.kf.initiate(detection.measurement())
        track = Track(
            track_id=self._next_id,
            mean=mean,
            covariance=cov,
            status=TrackStatus.TENTATIVE,
            vehicle_class=detection.vehicle_class,
            confidence=detection.confidence,
            gallery=deque(maxlen=self.params.gallery_capacity),
            last_detection=detection,
        )
        self._next_id += 1
        if detection.appearance is not None:
            track.gallery.append(detection.appearance)
        if track.hits >= self.params.n_init:
            track.status = TrackStatus.CONFIRMED
        return track

    def _predict_all(self) -> None:
        if not self.tracks:
            return
        means = np.stack([t.mean for t in self.tracks])
        covs = np.stack([t.covariance for t in self.tracks])
        try:
            new_means, new_covs = self.kf.predict_batch(means, covs)
        except CorruptedTrackError:
            alive = []
            for track in self.tracks:
                try:
                    self.predict(track)
                    alive.append(track)
                except CorruptedTrackError as exc:
                    log.warning("dropping corrupted track %d: %s", track.track_id, exc)
                    track.status = TrackStatus.DELETED
            self.tracks = alive
            return
        for track, mean, cov in zip(self.tracks, new_means, new_covs):
            track.mean = mean
            track.covariance = cov
            track.time_since_update += 1

    def _update_matched(self, matched: list[tuple[Track, Detection]]) -> None:
        if not matched:
            return
        try:
            means = np.stack([t.mean for t, _ in matched])
            covs = np.stack([t.covariance for t, _ in matched])
            measurements = np.stack([d.measurement() for _, d in matched])
            new_means, new_covs = self.kf.update_batch(means, covs, measurements)
        except (CorruptedTrackError, np.linalg.LinAlgError):
            for track, det in matched:
                try:
                    self.update(track, det)
                except CorruptedTrackError as exc:
                    log.warning("dropping corrupted track %d: %s", track.track_id, exc)
                    track.status = TrackStatus.DELETED
            return
        for (track, det), mean, cov in zip(matched, new_means, new_covs):
            track.mean = mean
            track.covariance = cov
            self._post_update(track, det)

    def _associate_quarantining(self, detections: Sequence[Detection]) -> Association:
        # A numerically broken track must not take the whole frame down:
        # drop offenders and retry the association without them.
        while True:
            try:
                return associate(self.tracks, detections, self.params, self.kf)
            except CorruptedTrackError:
                probe = np.zeros((1, 4))
                bad = []
                for track in self.tracks:
                    try:
                        self.kf.gating_distance(track.mean, track.covariance, probe)
                    except CorruptedTrackError:
                        bad.append(track)
                if not bad:
                    raise
                for track in bad:
                    log.warning("dropping corrupted track %d during association",
                                track.track_id)
                    track.status = TrackStatus.DELETED
                self.tracks = [t for t in self.tracks if t.status is not TrackStatus.DELETED]

    def step(self, detections: Sequence[Detection]) -> list[TrackedVehicle]:
        """Advance one frame: predict, associate, update, manage lifecycle.

        Returns the confirmed tracks. A matched track reports the matched
        detection's box; a coasting track reports its predicted box.
        """
        self._predict_all()

        assoc = self._associate_quarantining(detections)
        by_id = {t.track_id: t for t in self.tracks}
        self._update_matched(
            [(by_id[tid], detections[j]) for tid, j in assoc.matches]
        )

        for track_id in assoc.unmatched_tracks:
            track = by_id[track_id]
            if track.status is TrackStatus.TENTATIVE:
                track.status = TrackStatus.DELETED
            elif track.time_since_update > self.params.max_age:
                track.status = TrackStatus.DELETED

        for det_idx in assoc.unmatched_detections:
            self.tracks.append(self._new_track(detections[det_idx]))

        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.DELETED]

        out: list[TrackedVehicle] = []
        for track in self.tracks:
            if not track.is_confirmed():
                continue
            if track.time_since_update == 0 and track.last_detection is not None:
                bbox = track.last_detection.bbox
            else:
                bbox = track.to_bbox()
            out.append(
                TrackedVehicle(track.track_id, bbox, track.vehicle_class, bbox_center(bbox))
            )
        return out

    def tracker_step(self, detections: Sequence[Detection]) -> list[TrackedVehicle]:
        return self.step(detections)


_DEFAULT_KF = BoxKalmanFilter()
