import numpy as np
import pytest

from parklot.geometry import BoundingBox, bbox_center
from parklot.tracking import (
    APPEARANCE_DISTANCE_MAX,
    CHI2_95_4DOF,
    BoxKalmanFilter,
    CorruptedTrackError,
    Detection,
    Track,
    TrackStatus,
    Tracker,
    TrackerParams,
    appearance_distance,
    associate,
    combined_cost,
    mahalanobis_sq,
    solve_assignment,
)

from oracles import brute_force_assignment


def box_at(cx, cy, w=36.0, h=20.0):
    return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def detection_at(cx, cy, w=36.0, h=20.0, cls="Car", conf=0.9, appearance=None):
    return Detection(bbox=box_at(cx, cy, w, h), vehicle_class=cls,
                     confidence=conf, appearance=appearance)


def fresh_track(cx, cy, w=36.0, h=20.0, track_id=1, kf=None) -> Track:
    kf = kf or BoxKalmanFilter()
    mean, cov = kf.initiate(detection_at(cx, cy, w, h).measurement())
    return Track(track_id=track_id, mean=mean, covariance=cov,
                 status=TrackStatus.CONFIRMED, vehicle_class="Car", confidence=0.9)


class TestKalmanPredict:
    def test_constant_velocity_propagation(self):
        kf = BoxKalmanFilter()
        mean = np.array([10.0, 5.0, 2.0, 0.5, 1.0, -1.0, 0.0, 0.0])
        cov = np.eye(8)
        new_mean, _ = kf.predict(mean, cov)
        assert np.allclose(new_mean[:4], [11.0, 4.0, 2.0, 0.5], atol=1e-9)
        assert np.allclose(new_mean[4:], mean[4:], atol=1e-9)

    def test_zero_velocity_mean_fixed_covariance_grows(self):
        kf = BoxKalmanFilter()
        mean = np.array([10.0, 5.0, 20.0, 1.5, 0.0, 0.0, 0.0, 0.0])
        cov = np.eye(8)
        new_mean, new_cov = kf.predict(mean, cov)
        assert np.allclose(new_mean, mean, atol=1e-9)
        assert np.trace(new_cov) > np.trace(cov)

    def test_two_predicts_advance_twice(self):
        # F^2 applied to the state: x gains 2 * vx.
        kf = BoxKalmanFilter()
        mean = np.array([0.0, 0.0, 10.0, 1.0, 2.0, 0.0, 0.0, 0.0])
        cov = np.eye(8)
        for _ in range(2):
            mean, cov = kf.predict(mean, cov)
        assert mean[0] == pytest.approx(4.0, abs=1e-9)

    def test_non_finite_state_rejected(self):
        kf = BoxKalmanFilter()
        mean = np.full(8, np.nan)
        with pytest.raises(CorruptedTrackError):
            kf.predict(mean, np.eye(8))


class TestKalmanUpdate:
    def test_near_zero_measurement_noise_snaps_to_measurement(self):
        kf = BoxKalmanFilter()
        mean, cov = kf.initiate(np.array([100.0, 50.0, 20.0, 1.8]))
        mean, cov = kf.predict(mean, cov)
        z = np.array([104.0, 47.0, 21.0, 1.7])
        new_mean, _ = kf.update(mean, cov, z, measurement_noise=np.eye(4) * 1e-12)
        assert np.allclose(new_mean[:4], z, atol=1e-6)

    def test_measurement_at_prediction_keeps_mean_shrinks_covariance(self):
        kf = BoxKalmanFilter()
        mean, cov = kf.initiate(np.array([100.0, 50.0, 20.0, 1.8]))
        mean, cov = kf.predict(mean, cov)
        new_mean, new_cov = kf.update(mean, cov, mean[:4].copy())
        assert np.allclose(new_mean, mean, atol=1e-9)
        assert np.trace(new_cov) < np.trace(cov)

    def test_scalar_analog_embedded_in_x(self):
        # Hand-computed scalar Kalman: prior N(0, 1), measurement N(2, 1)
        # -> posterior mean (0*1 + 2*1) / (1 + 1) = 1.
        kf = BoxKalmanFilter()
        mean = np.array([0.0, 10.0, 20.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        tiny = 1e-12
        cov = np.diag([1.0, tiny, tiny, tiny, tiny, tiny, tiny, tiny])
        z = np.array([2.0, 10.0, 20.0, 1.0])
        noise = np.diag([1.0, tiny, tiny, tiny])
        new_mean, _ = kf.update(mean, cov, z, measurement_noise=noise)
        assert new_mean[0] == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(new_mean[1:4], [10.0, 20.0, 1.0], atol=1e-9)

    def test_covariance_stays_symmetric_psd_through_random_steps(self):
        kf = BoxKalmanFilter()
        rng = np.random.default_rng(1234)
        mean, cov = kf.initiate(np.array([300.0, 200.0, 30.0, 1.5]))
        for _ in range(1000):
            mean, cov = kf.predict(mean, cov)
            z = mean[:4] + rng.normal(0, 2.0, size=4)
            z[2] = max(z[2], 5.0)
            z[3] = max(z[3], 0.2)
            mean, cov = kf.update(mean, cov, z)
            assert np.max(np.abs(cov - cov.T)) < 1e-9
            assert np.linalg.eigvalsh(cov).min() >= -1e-9

    def test_batch_paths_match_single_track_math(self):
        kf = BoxKalmanFilter()
        rng = np.random.default_rng(7)
        means, covs, zs = [], [], []
        for _ in range(12):
            m, c = kf.initiate(rng.uniform(50, 400, size=4) + np.array([0, 0, 10, 0]))
            for _ in range(int(rng.integers(1, 5))):
                m, c = kf.predict(m, c)
                m, c = kf.update(m, c, m[:4] + rng.normal(0, 1, 4))
            means.append(m)
            covs.append(c)
            zs.append(m[:4] + rng.normal(0, 2, 4))
        bm, bc = kf.predict_batch(np.stack(means), np.stack(covs))
        for i in range(12):
            sm, sc = kf.predict(means[i].copy(), covs[i].copy())
            assert np.allclose(bm[i], sm, atol=1e-9)
            assert np.allclose(bc[i], sc, atol=1e-9)
        um, uc = kf.update_batch(bm, bc, np.stack(zs))
        for i in range(12):
            sm, sc = kf.update(bm[i], bc[i], zs[i])
            assert np.allclose(um[i], sm, atol=1e-9)
            assert np.allclose(uc[i], sc, atol=1e-9)


class TestMahalanobis:
    def test_zero_residual(self):
        track = fresh_track(100, 50)
        det = detection_at(100, 50)
        assert mahalanobis_sq(track, det) == pytest.approx(0.0, abs=1e-12)

    def test_identity_innovation_reduces_to_euclidean(self):
        # h=20 makes the position measurement variance (h/20)^2 = 1; with a
        # zero state covariance the innovation is the identity on x, y.
        kf = BoxKalmanFilter()
        track = fresh_track(100, 50, w=20.0, h=20.0)
        track.covariance = np.zeros((8, 8))
        det = detection_at(103.0, 54.0, w=20.0, h=20.0)
        assert mahalanobis_sq(track, det, kf) == pytest.approx(25.0, abs=1e-9)

    def test_diagonal_covariance_hand_inverse(self):
        # h=40 -> position variance 4; residual (2,0,0,0) -> 4/4 = 1.
        kf = BoxKalmanFilter()
        track = fresh_track(100, 50, w=40.0, h=40.0)
        track.covariance = np.zeros((8, 8))
        det = detection_at(102.0, 50.0, w=40.0, h=40.0)
        assert mahalanobis_sq(track, det, kf) == pytest.approx(1.0, abs=1e-9)

    def test_matrix_matches_single(self):
        kf = BoxKalmanFilter()
        rng = np.random.default_rng(3)
        tracks = [fresh_track(*rng.uniform(50, 500, 2), track_id=i + 1)
                  for i in range(5)]
        dets = [detection_at(*rng.uniform(50, 500, 2)) for _ in range(7)]
        means = np.stack([t.mean for t in tracks])
        covs = np.stack([t.covariance for t in tracks])
        measurements = np.stack([d.measurement() for d in dets])
        mat = kf.gating_distance_matrix(means, covs, measurements)
        for i, t in enumerate(tracks):
            for j, d in enumerate(dets):
                assert mat[i, j] == pytest.approx(mahalanobis_sq(t, d, kf), rel=1e-9)


class TestAppearanceDistance:
    def test_identical_vector(self):
        v = np.array([1.0, 0.0, 0.0])
        assert appearance_distance([v], v) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        assert appearance_distance([e1], e2) == pytest.approx(1.0, abs=1e-12)

    def test_min_over_gallery(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        mid = (e1 + e2) / np.sqrt(2.0)
        expected = min(1.0 - float(g @ e2) for g in (e1, mid))
        assert expected == pytest.approx(1.0 - 1.0 / np.sqrt(2.0), abs=1e-12)
        assert appearance_distance([e1, mid], e2) == pytest.approx(expected, abs=1e-12)

    def test_empty_gallery_signalled(self):
        with pytest.raises(ValueError):
            appearance_distance([], np.array([1.0, 0.0]))

    def test_dimension_mismatch_signalled(self):
        with pytest.raises(ValueError):
            appearance_distance([np.array([1.0, 0.0])], np.array([1.0, 0.0, 0.0]))


class TestCombinedCost:
    def test_lambda_one_is_motion_only(self):
        assert combined_cost(0.3, 0.9, 1.0) == pytest.approx(0.3)

    def test_lambda_zero_is_appearance_only(self):
        assert combined_cost(0.3, 0.9, 0.0) == pytest.approx(0.9)

    def test_midpoint(self):
        assert combined_cost(0.2, 0.6, 0.5) == pytest.approx(0.4)

    def test_gate_normalization(self):
        v = combined_cost(4.0, 1.0, 0.5, motion_gate=8.0, appearance_gate=2.0)
        assert v == pytest.approx(0.5 * 0.5 + 0.5 * 0.5)


class TestAssociate:
    def test_same_box_matches(self):
        track = fresh_track(100, 50)
        det = detection_at(100, 50)
        result = associate([track], [det], TrackerParams())
        assert result.matches == [(1, 0)]
        assert result.unmatched_tracks == []
        assert result.unmatched_detections == []

    def test_zero_iou_rejected(self):
        track = fresh_track(100, 50)
        det = detection_at(500, 400)
        result = associate([track], [det], TrackerParams())
        assert result.matches == []
        assert result.unmatched_tracks == [1]
        assert result.unmatched_detections == [0]

    def test_crossing_costs_prefer_diagonal(self):
        cost = np.array([[1.0, 10.0], [10.0, 1.0]])
        feasible = np.ones((2, 2), dtype=bool)
        count, best = brute_force_assignment(cost, feasible)
        assert (count, best) == (2, 2.0)
        pairs, un_r, un_c = solve_assignment(cost, feasible)
        assert sorted(pairs) == [(0, 0), (1, 1)]
        assert un_r == [] and un_c == []

    def test_optimal_against_brute_force_random(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n, m = rng.integers(1, 7, size=2)
            cost = rng.uniform(0, 10, size=(n, m))
            feasible = rng.random((n, m)) < 0.7
            pairs, _, _ = solve_assignment(cost, feasible)
            got_count = len(pairs)
            got_cost = sum(cost[i, j] for i, j in pairs)
            want_count, want_cost = brute_force_assignment(cost, feasible)
            assert got_count == want_count
            assert got_cost == pytest.approx(want_cost, abs=1e-9)

    def test_matches_never_violate_gates(self):
        rng = np.random.default_rng(11)
        params = TrackerParams()
        for _ in range(30):
            tracks = [fresh_track(*rng.uniform(0, 400, 2), track_id=i + 1)
                      for i in range(int(rng.integers(1, 6)))]
            dets = [detection_at(*rng.uniform(0, 400, 2))
                    for _ in range(int(rng.integers(1, 6)))]
            result = associate(tracks, dets, params)
            by_id = {t.track_id: t for t in tracks}
            for tid, j in result.matches:
                track, det = by_id[tid], dets[j]
                assert mahalanobis_sq(track, det) <= params.mahalanobis_gate + 1e-9
                from parklot.geometry import iou
                assert iou(track.to_bbox(), det.bbox) >= params.iou_min - 1e-12

    def test_appearance_breaks_motion_tie(self):
        # Two tracks equidistant from two detections; appearance decides.
        kf = BoxKalmanFilter()
        a1 = np.zeros(8)
        a1[0] = 1.0
        a2 = np.zeros(8)
        a2[1] = 1.0
        t1 = fresh_track(100, 50, track_id=1)
        t1.gallery.append(a1)
        t2 = fresh_track(110, 50, track_id=2)
        t2.gallery.append(a2)
        d_near_1 = detection_at(104, 50, appearance=a2)
        d_near_2 = detection_at(106, 50, appearance=a1)
        result = associate([t1, t2], [d_near_1, d_near_2], TrackerParams(), kf)
        assert sorted(result.matches) == [(1, 1), (2, 0)]


class TestTrackerLifecycle:
    def test_empty_step(self):
        tracker = Tracker()
        assert tracker.step([]) == []

    def test_linear_motion_single_stable_id(self):
        params = TrackerParams(n_init=3)
        tracker = Tracker(params)
        outputs = []
        for f in range(20):
            out = tracker.step([detection_at(100 + 2 * f, 50)])
            outputs.append(out)
        for f in range(params.n_init - 1):
            assert outputs[f] == []
        for f in range(params.n_init - 1, 20):
            assert len(outputs[f]) == 1
            assert outputs[f][0].track_id == 1
        # matched frames report the detection's own box
        assert outputs[-1][0].center == bbox_center(box_at(100 + 2 * 19, 50))

    def test_occlusion_resumes_same_id(self):
        tracker = Tracker(TrackerParams(n_init=3, max_age=30))
        seen_ids = set()
        for f in range(40):
            if 15 <= f < 20:
                out = tracker.step([])
            else:
                out = tracker.step([detection_at(100 + 2 * f, 50)])
            seen_ids.update(tv.track_id for tv in out)
        assert seen_ids == {1}

    def test_coasting_confirmed_track_reports_prediction(self):
        tracker = Tracker(TrackerParams(n_init=2, max_age=10))
        for f in range(5):
            tracker.step([detection_at(100, 50)])
        out = tracker.step([])
        assert len(out) == 1
        assert out[0].center.x == pytest.approx(100, abs=0.5)

    def test_tentative_track_dies_on_first_miss(self):
        tracker = Tracker(TrackerParams(n_init=3))
        tracker.step([detection_at(100, 50)])
        assert len(tracker.tracks) == 1
        tracker.step([])
        assert tracker.tracks == []

    def test_confirmed_track_dies_after_max_age(self):
        params = TrackerParams(n_init=1, max_age=5)
        tracker = Tracker(params)
        tracker.step([detection_at(100, 50)])
        for _ in range(params.max_age):
            tracker.step([])
            assert len(tracker.tracks) == 1
        tracker.step([])
        assert tracker.tracks == []

    def test_ids_unique_and_monotonic(self):
        tracker = Tracker(TrackerParams(n_init=1))
        rng = np.random.default_rng(5)
        issued = []
        for f in range(30):
            dets = [detection_at(x, 50 + 200 * k)
                    for k, x in enumerate(rng.uniform(0, 2000, size=3))]
            tracker.step(dets)
            ids = [t.track_id for t in tracker.tracks]
            assert len(ids) == len(set(ids))
            issued.append(max(ids) if ids else 0)
        assert issued == sorted(issued)

    def test_noise_free_parallel_lanes_zero_switches(self):
        params = TrackerParams(n_init=3)
        tracker = Tracker(params)
        lanes = [50.0, 100.0, 150.0]
        id_by_lane = {}
        for f in range(60):
            dets = [detection_at(100 + 2 * f, y) for y in lanes]
            out = tracker.step(dets)
            if f >= params.n_init - 1:
                assert len(out) == 3
                for tv in out:
                    lane = tv.center.y
                    id_by_lane.setdefault(lane, tv.track_id)
                    assert id_by_lane[lane] == tv.track_id
        assert sorted(id_by_lane.values()) == [1, 2, 3]

    def test_confirmed_status_transitions(self):
        tracker = Tracker(TrackerParams(n_init=3))
        tracker.step([detection_at(100, 50)])
        assert tracker.tracks[0].status is TrackStatus.TENTATIVE
        tracker.step([detection_at(102, 50)])
        assert tracker.tracks[0].status is TrackStatus.TENTATIVE
        tracker.step([detection_at(104, 50)])
        assert tracker.tracks[0].status is TrackStatus.CONFIRMED

    def test_gallery_capacity_bounded(self):
        params = TrackerParams(n_init=1, gallery_capacity=5)
        tracker = Tracker(params)
        v = np.zeros(4)
        v[0] = 1.0
        for f in range(12):
            tracker.step([detection_at(100 + f, 50, appearance=v)])
        assert len(tracker.tracks[0].gallery) == 5

    def test_corrupted_track_dropped_not_fatal(self, caplog):
        tracker = Tracker(TrackerParams(n_init=1))
        tracker.step([detection_at(100, 50)])
        tracker.tracks[0].mean[0] = np.nan
        out = tracker.step([detection_at(102, 50)])
        # The corrupted track is gone; the detection started a fresh one.
        assert all(t.track_id != 1 for t in tracker.tracks)
        assert tracker.tracks


class TestAppearanceFreeDegradation:
    def test_motion_unambiguous_scenarios_identical(self):
        from parklot import ingest, pipeline

        base = ingest.build_parking_scenario(seed=21, n_slots=6, n_vehicles=4,
                                             frame_count=500)
        with_app = ingest.Scenario(
            seed=base.seed, slot_map=base.slot_map, vehicles=base.vehicles,
            fps=base.fps, frame_count=base.frame_count, appearance_dim=16,
        )
        outs = []
        for sc in (base, with_app):
            lines = [ingest.frame_to_stream_line(f)
                     for f in ingest.scenario_detection_frames(sc)]
            results = list(pipeline.run_pipeline(
                sc.slot_map, ingest.parse_stream(iter(lines)), TrackerParams()))
            outs.append([r.frame for r in results])
        assert outs[0] == outs[1]
