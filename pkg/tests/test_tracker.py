import math

import numpy as np
import pytest
from scipy.stats import chi2

from baas.io import (
    ObjectScript,
    Recording,
    RecordingMeta,
    SynthConfig,
    generate_scenario,
)
from baas.tracker.cluster import ScanAssociation, adaptive_cluster, density_clusters
from baas.tracker.config import TrackerConfig
from baas.tracker.eot import (
    HypothesisSet,
    load_hypotheses,
    predict_track,
    run_eot,
    save_hypotheses,
    update_track,
)
from baas.tracker.filter import (
    gate_projection,
    gating_noise,
    init_state,
    predict_measurement,
    update_state,
)
from baas.types import (
    Detection,
    EgoPose,
    Extent,
    KinematicState,
    ObjectClass,
    RadarScan,
    TrackHypothesis,
    TrackStatus,
)

EGO = EgoPose(0, 0, 0, 0, 0)
R = np.diag([0.01, 0.01, 0.04])


def det(i, x, y, vr=0.0):
    return Detection(i, x, y, vr, R)


def make_track(tid=1, x=10.0, y=0.0, vx=0.0, vy=0.0, n_models=2, k=0):
    mean = np.array([x, y, vx, vy, 0.0])
    cov = np.diag([0.5, 0.5, 1.0, 1.0, 0.01])
    state = KinematicState((mean,) * n_models, (cov,) * n_models,
                           np.full(n_models, 1.0 / n_models))
    return TrackHypothesis(tid, state, Extent(np.eye(2) * 0.5, 10.0),
                           TrackStatus.VERIFIED, k, k)


class TestPredict:
    def test_dt_zero_is_identity(self):
        tr = make_track()
        out = predict_track(tr, 0.0, TrackerConfig())
        assert out is tr

    def test_constant_velocity_advance(self):
        cfg = TrackerConfig(models=("cv",), sigma_a_cv=0.0)
        tr = make_track(x=0.0, y=0.0, vx=1.0, vy=0.0, n_models=1)
        out = predict_track(tr, 1.0, cfg)
        assert out.state.x == pytest.approx(1.0, abs=1e-9)
        assert out.state.y == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_mu_normalized_after_predict(self, seed):
        rng = np.random.default_rng(seed)
        mu = rng.dirichlet([1.0, 1.0])
        mean = rng.normal(0, 5, 5)
        cov = np.diag(rng.uniform(0.1, 2.0, 5))
        state = KinematicState((mean, mean + rng.normal(0, 0.1, 5)), (cov, cov), mu)
        tr = TrackHypothesis(1, state, Extent(np.eye(2), 8.0), TrackStatus.VERIFIED, 0, 0)
        out = predict_track(tr, 0.1, TrackerConfig())
        assert out.state.mu.sum() == pytest.approx(1.0, abs=1e-9)

    def test_extent_expectation_unchanged(self):
        tr = make_track()
        out = predict_track(tr, 0.5, TrackerConfig())
        np.testing.assert_allclose(out.extent.X, tr.extent.X)
        assert out.extent.nu_rmm < tr.extent.nu_rmm


class TestAdaptiveCluster:
    def scan(self, dets, k=0):
        return RadarScan(k, 0.1 * k, EGO, tuple(dets))

    def test_no_detections(self):
        assoc = adaptive_cluster(self.scan([]), {}, TrackerConfig())
        assert assoc.track_assignments == {} and assoc.leftover == ()

    def test_close_pair_forms_one_cluster(self):
        assoc = adaptive_cluster(self.scan([det(0, 5.0, 5.0), det(1, 5.1, 5.0)]),
                                 {}, TrackerConfig(eps=1.0))
        assert assoc.leftover == ((0, 1),)

    def test_detection_at_pseudo_measurement_gates(self):
        tr = make_track(x=10.0, y=0.0)
        zhat, _, _ = gate_projection(tr.state, EGO)
        assoc = adaptive_cluster(
            self.scan([det(0, zhat[0], zhat[1], zhat[2])]), {1: tr}, TrackerConfig())
        assert assoc.track_assignments == {1: (0,)}

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        cfg = TrackerConfig()
        tracks = {tid: make_track(tid, *rng.uniform(-20, 20, 2)) for tid in (1, 2, 3)}
        dets = [det(i, *rng.uniform(-25, 25, 2), rng.normal()) for i in range(50)]
        scan = self.scan(dets)
        assoc = adaptive_cluster(scan, tracks, cfg)

        gate = chi2.ppf(cfg.alpha_gate, 3)
        expected = {}
        leftovers = []
        for d in dets:
            best = None
            for tid in sorted(tracks):
                zhat, s_ut, _ = gate_projection(tracks[tid].state, EGO)
                s = s_ut + gating_noise(tracks[tid].extent.X, d.noise, cfg.z_scale)
                r = d.z - zhat
                d2 = float(r @ np.linalg.inv(s) @ r)
                if d2 <= gate and (best is None or d2 < best[0]):
                    best = (d2, tid)
            if best:
                expected.setdefault(best[1], []).append(d.det_id)
            else:
                leftovers.append(d)
        assert {t: list(ids) for t, ids in assoc.track_assignments.items()} == expected
        assert sorted(sum((list(c) for c in assoc.leftover), [])) == sorted(
            d.det_id for d in leftovers)

    def test_partition_property(self):
        rng = np.random.default_rng(7)
        tracks = {tid: make_track(tid, *rng.uniform(-10, 10, 2)) for tid in (1, 2)}
        dets = [det(i, *rng.uniform(-15, 15, 2)) for i in range(30)]
        assoc = adaptive_cluster(self.scan(dets), tracks, TrackerConfig())
        seen = sorted(assoc.all_assigned())
        assert seen == list(range(30))

    def test_duplicate_assignment_rejected(self):
        with pytest.raises(ValueError):
            ScanAssociation(0, {1: (0,), 2: (0,)}, ())


def test_density_clusters_singletons_allowed():
    pts = np.array([[0.0, 0.0], [10.0, 10.0]])
    assert density_clusters(pts, [3, 5], eps=1.0, min_size=1) == [(3,), (5,)]


class TestUpdate:
    def test_zero_innovation_keeps_centroid(self):
        cfg = TrackerConfig()
        tr = make_track(x=10.0, y=2.0, vx=1.0, vy=0.0)
        zhat, _, _ = predict_measurement(tr.state.means[0], tr.state.covs[0], EGO)
        d = det(0, zhat[0], zhat[1], zhat[2])
        out = update_track(tr, [d], RadarScan(1, 0.1, EGO, (d,)), cfg)
        assert out.state.x == pytest.approx(tr.state.x, abs=1e-9)
        assert out.state.y == pytest.approx(tr.state.y, abs=1e-9)
        assert np.trace(out.state.cov[:2, :2]) < np.trace(tr.state.cov[:2, :2])
        assert out.assoc_counts == ((1, 1),)

    def test_extent_aligns_with_symmetric_scatter(self):
        cfg = TrackerConfig()
        # circular prior extent: the scatter term alone sets the eigenvectors
        tr = make_track(x=10.0, y=0.0)
        angle = 0.7
        u = np.array([math.cos(angle), math.sin(angle)])
        dets = []
        offsets = [-2.0, -1.0, 1.0, 2.0]
        for i, s in enumerate(offsets):
            p = np.array([10.0, 0.0]) + s * u
            dets.append(det(i, p[0], p[1]))
        state, extent = update_state(tr.state, tr.extent, dets, EGO, cfg)
        w, v = np.linalg.eigh(extent.X)
        major = v[:, 1]
        got = math.atan2(major[1], major[0]) % math.pi
        assert got == pytest.approx(angle % math.pi, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_mu_stays_probability_vector(self, seed):
        rng = np.random.default_rng(seed)
        cfg = TrackerConfig()
        tr = make_track(x=10.0, y=0.0)
        dets = [det(i, 10 + rng.normal(0, 0.5), rng.normal(0, 0.5), rng.normal())
                for i in range(4)]
        state, _ = update_state(tr.state, tr.extent, dets, EGO, cfg)
        assert np.all(state.mu >= 0) and state.mu.sum() == pytest.approx(1.0, abs=1e-9)


class TestLifecycle:
    def single_object_recording(self, n_scans=8, lam=3.0, gap_after=None):
        script = ObjectScript(ObjectClass.PEDESTRIAN, 0.0,
                              gap_after / 10.0 if gap_after else 10.0,
                              ((0.0, 10.0, 0.0), (10.0, 12.0, 0.0)), lam=lam)
        cfg = SynthConfig(seed=3, duration=n_scans / 10.0, objects=(script,),
                          clutter_rate=0.0, sigma_pos=0.05)
        rec, _, _ = generate_scenario(cfg)
        return rec

    def test_singleton_cluster_births_track(self):
        rec = Recording(RecordingMeta(), (RadarScan(0, 0.0, EGO, (det(0, 5.0, 5.0),)),))
        hs = run_eot(rec, TrackerConfig())
        assert hs.track_ids == [1]
        assert hs.last_snapshot(1).status is TrackStatus.INITIALIZED

    def test_miss_streak_deletes_but_retains_history(self):
        scans = [RadarScan(0, 0.0, EGO, (det(0, 5.0, 5.0),))]
        for k in range(1, 6):
            scans.append(RadarScan(k, 0.1 * k, EGO, ()))
        hs = run_eot(Recording(RecordingMeta(), tuple(scans)), TrackerConfig(n_miss=3))
        assert hs.last_snapshot(1).status is TrackStatus.DELETED
        assert len(hs.track_history(1)) >= 2

    def test_m_of_n_promotion_timing(self):
        # default M=2, N=3: unconfident at the 2nd hit, verified at the 3rd
        scans = []
        for k in range(4):
            scans.append(RadarScan(k, 0.1 * k, EGO, (det(0, 5.0 + 0.01 * k, 5.0),)))
        hs = run_eot(Recording(RecordingMeta(), tuple(scans)), TrackerConfig())
        statuses = [tr.status for _, tr in hs.track_history(1)]
        assert statuses[0] is TrackStatus.INITIALIZED
        assert statuses[1] is TrackStatus.UNCONFIDENT
        assert statuses[2] is TrackStatus.VERIFIED


class TestRunEot:
    def test_empty_recording(self):
        hs = run_eot(Recording(RecordingMeta(), ()), TrackerConfig())
        assert hs.track_ids == [] and hs.associations == []

    def test_single_object_tracked_accurately(self):
        script = ObjectScript(ObjectClass.PEDESTRIAN, 0.0, 10.0,
                              ((0.0, 10.0, 0.0), (10.0, 20.0, 2.0)), lam=4.0)
        sigma = 0.1
        cfg_s = SynthConfig(seed=5, duration=4.0, objects=(script,),
                            clutter_rate=0.0, sigma_pos=sigma, sigma_vr=0.05)
        rec, _, gt = generate_scenario(cfg_s)
        hs = run_eot(rec, TrackerConfig())
        verified = [t for t in hs.track_ids
                    if any(tr.status is TrackStatus.VERIFIED for _, tr in hs.track_history(t))]
        assert len(verified) == 1
        errs = []
        for k, tr in hs.track_history(verified[0]):
            pt = gt[0].point_at(k)
            if pt is not None and tr.status is not TrackStatus.DELETED and k > 2:
                errs.append(math.hypot(tr.state.x - pt.x, tr.state.y - pt.y))
        assert math.sqrt(np.mean(np.square(errs))) < 3 * sigma

    def test_rerun_is_bit_identical(self, tmp_path):
        script = ObjectScript(ObjectClass.CAR, 0.0, 3.0,
                              ((0.0, 15.0, 0.0), (3.0, 20.0, 1.0)), lam=4.0)
        cfg_s = SynthConfig(seed=9, duration=2.0, objects=(script,), clutter_rate=3.0)
        rec, _, _ = generate_scenario(cfg_s)
        paths = []
        for tag in ("a", "b"):
            hs = run_eot(rec, TrackerConfig())
            h, a = tmp_path / f"h_{tag}.jsonl", tmp_path / f"a_{tag}.jsonl"
            save_hypotheses(hs, h, a)
            paths.append((h, a))
        assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
        assert paths[0][1].read_bytes() == paths[1][1].read_bytes()

    def test_round_trip_persistence(self, tmp_path):
        script = ObjectScript(ObjectClass.CYCLIST, 0.0, 2.0,
                              ((0.0, 8.0, -3.0), (2.0, 12.0, -3.0)), lam=3.0)
        rec, _, _ = generate_scenario(SynthConfig(seed=2, duration=2.0,
                                                  objects=(script,), clutter_rate=1.0))
        hs = run_eot(rec, TrackerConfig())
        h1, a1 = tmp_path / "h1.jsonl", tmp_path / "a1.jsonl"
        h2, a2 = tmp_path / "h2.jsonl", tmp_path / "a2.jsonl"
        save_hypotheses(hs, h1, a1)
        save_hypotheses(load_hypotheses(h1, a1), h2, a2)
        assert h1.read_bytes() == h2.read_bytes()
        assert a1.read_bytes() == a2.read_bytes()

    def test_spd_and_mu_invariants_over_run(self):
        script = ObjectScript(ObjectClass.CAR, 0.0, 3.0,
                              ((0.0, 15.0, 5.0), (3.0, 25.0, 5.0)), lam=5.0)
        rec, _, _ = generate_scenario(SynthConfig(seed=13, duration=3.0,
                                                  objects=(script,), clutter_rate=2.0))
        hs = run_eot(rec, TrackerConfig())
        for k, per_scan in hs.snapshots.items():
            for tr in per_scan.values():
                assert tr.state.mu.sum() == pytest.approx(1.0, abs=1e-9)
                for cov in tr.state.covs:
                    assert np.linalg.eigvalsh(cov).min() > 0
                assert np.linalg.eigvalsh(tr.extent.X).min() > 0

    def test_partition_property_over_run(self):
        script = ObjectScript(ObjectClass.CAR, 0.0, 3.0,
                              ((0.0, 15.0, 5.0), (3.0, 25.0, 5.0)), lam=5.0)
        rec, _, _ = generate_scenario(SynthConfig(seed=17, duration=3.0,
                                                  objects=(script,), clutter_rate=3.0))
        hs = run_eot(rec, TrackerConfig())
        for scan, assoc in zip(rec.scans, hs.associations):
            assigned = assoc.all_assigned()
            all_ids = {d.det_id for d in scan.detections}
            assert assigned <= all_ids
            # min cluster size 1: every detection lands somewhere
            assert assigned == all_ids
