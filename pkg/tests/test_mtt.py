import math

import numpy as np
import pytest

from gptrack import kinematics as kin, mtt, nsim, pf
from gptrack.gpr import Hyperparameters
from gptrack.kinematics import MeasurementSet
from gptrack.mtt import MttConfig
from gptrack.pf import ParticleSet, PfConfig

R = np.diag([25.0, math.radians(0.5) ** 2])


def cv_model():
    g = np.linspace(-6.0, 6.0, 7)
    tracks = [np.arange(3.0)[:, None] * np.array([a, b])[None, :] for a in g for b in g]
    return nsim.train_nsim(tracks, [Hyperparameters(100.0, 10.0, 1e-6)])


def cv_truth(starts, deltas, T):
    return np.stack([np.array(s) + np.arange(T)[:, None] * np.array(d) for s, d in zip(starts, deltas)])


def test_two_particle_two_measurement_hand_case():
    pos = np.array([[300.0, 400.0], [310.0, 395.0]])
    ps = ParticleSet(np.column_stack([pos, np.zeros((2, 2))]), [0.3, 0.7])
    Y = np.vstack([kin.h(pos[0]), kin.h([305.0, 402.0])])
    p = np.array([0.1, 0.6, 0.3])
    out = mtt.weight_update_mtt(ps, Y, p, R, 0.9)
    L = np.array([[pf.likelihood(pos[m:m + 1], Y[j], R)[0] for j in range(2)] for m in range(2)])
    raw = np.array([0.3, 0.7]) * (L @ p[1:])
    assert np.allclose(out.weights, raw / raw.sum(), atol=1e-12, rtol=0)
    on = mtt.weight_update_mtt(ps, Y, p, R, 0.9, missed_detection=True)
    raw_on = np.array([0.3, 0.7]) * (L @ p[1:] + 0.1 * 0.1)
    assert np.allclose(on.weights, raw_on / raw_on.sum(), atol=1e-12, rtol=0)


def test_missed_detection_only_leaves_weights():
    rng = np.random.default_rng(0)
    w = rng.random(10)
    ps = ParticleSet(np.column_stack([rng.uniform(100, 200, (10, 2)), np.zeros((10, 2))]), w / w.sum())
    Y = kin.h(np.array([[150.0, 150.0], [120.0, 180.0]]))
    out = mtt.weight_update_mtt(ps, Y, [1.0, 0.0, 0.0], R, 0.9, missed_detection=True)
    assert np.allclose(out.weights, ps.weights, atol=1e-15)


def test_one_hot_reduces_to_stt_update():
    rng = np.random.default_rng(1)
    ps = ParticleSet(np.column_stack([rng.uniform(100, 200, (20, 2)), np.zeros((20, 2))]), np.full(20, 0.05))
    Y = kin.h(np.array([[150.0, 150.0], [120.0, 180.0], [190.0, 110.0]]))
    a = mtt.weight_update_mtt(ps, Y, [0.0, 0.0, 1.0, 0.0], R, 0.9)
    b = pf.weight_update_stt(ps, Y[1], R)
    assert np.allclose(a.weights, b.weights, atol=1e-14)


def test_empty_set_and_bad_row():
    ps = ParticleSet(np.zeros((3, 4)) + 100, [0.2, 0.3, 0.5])
    assert np.array_equal(mtt.weight_update_mtt(ps, np.empty((0, 2)), [1.0], R, 0.9).weights, ps.weights)
    with pytest.raises(ValueError):
        mtt.weight_update_mtt(ps, np.empty((0, 2)), [1.0, 0.0], R, 0.9)


def test_empty_step_estimate_is_propagated_prior_mean():
    model = cv_model()
    truth = cv_truth([(300.0, 500.0)], [(3.0, 1.0)], 3)
    sets = [MeasurementSet(t, kin.h(truth[0, t])[None], np.array([0])) for t in range(3)]
    sets[2] = MeasurementSet(2, np.empty((0, 2)), np.empty(0, dtype=int))
    cfg = MttConfig(K=1, M=50, seed=2, missed_detection=True)
    out = mtt.track_mtt(model, sets, cfg, [[300.0, 500.0, 3.0, 1.0]])
    # Rebuild the step-2 prior from the same streams.
    ps = pf.initialize_particles(50, pf.stream(2, "gp/0", "init"), prior=[300.0, 500.0, 3.0, 1.0],
                                 pos_std=1.0, delta_std=0.5)
    for t in (0, 1):
        if t:
            ps = pf.propagate(ps, model, 1.0, 1.0, pf.stream(2, "gp/0", t, "propagate"), proposal="predictive")
        f = mtt.assoc.compute_factors([ps], sets[t].z, R, 0.9, 2.0)
        ps = mtt.weight_update_mtt(ps, sets[t].z, mtt.assoc.run_bp(f).p_a[0], R, 0.9, True, f.likelihoods[0])
        ps = pf.systematic_resample(ps, pf.stream(2, "gp/0", t, "resample"))
    ps = pf.propagate(ps, model, 1.0, 1.0, pf.stream(2, "gp/0", 2, "propagate"), proposal="predictive")
    assert np.allclose(out.estimates[2, 0], pf.estimate(ps), atol=1e-12)


def test_single_target_reduces_to_stt():
    model = cv_model()
    T = 25
    truth = cv_truth([(300.0, 500.0)], [(3.0, 1.0)], T)
    rng = np.random.default_rng(0)
    zs = [(kin.h(truth[0, t]) + rng.normal(size=2) * [5.0, math.radians(0.5)])[None] for t in range(T)]
    sets = [MeasurementSet(t, zs[t], np.array([0])) for t in range(T)]
    prior = [300.0, 500.0, 3.0, 1.0]
    a = mtt.track_mtt(model, sets, MttConfig(K=1, M=200, p_d=1 - 1e-6, lambda_fa=1e-3, seed=7), [prior])
    b = pf.track_stt(model, zs, PfConfig(M=200, seed=7), prior=prior)
    assert np.allclose(a.estimates, b.estimates, atol=1e-6)


def test_separated_targets_equal_independent_stt():
    """Far-apart targets with no clutter give one-hot marginals: K independent STT filters."""
    model = cv_model()
    T = 15
    starts = [(-2000.0, 3000.0), (0.0, 1500.0), (2000.0, 3000.0)]
    deltas = [(3.0, 0.0), (0.0, 3.0), (-2.0, -2.0)]
    truth = cv_truth(starts, deltas, T)
    rng = np.random.default_rng(5)
    sets = []
    for t in range(T):
        z = kin.h(truth[:, t]) + rng.normal(size=(3, 2)) * [5.0, math.radians(0.5)]
        perm = rng.permutation(3)
        sets.append(MeasurementSet(t, z[perm], perm))
    priors = [[*s, *d] for s, d in zip(starts, deltas)]
    out = mtt.track_mtt(model, sets, MttConfig(K=3, M=100, p_d=0.999, lambda_fa=1e-3, seed=1), priors)
    assert out.bp_converged.all()
    for k in range(3):
        ref = pf.track_stt(model, [s.for_target(k) for s in sets], PfConfig(M=100, seed=1),
                           prior=priors[k], key=f"gp/{k}")
        assert np.allclose(out.estimates[:, k], ref.estimates[:, 0], atol=1e-6)


def test_permutation_equivariance_with_keyed_streams():
    model = cv_model()
    T = 12
    starts = [(-100.0, 1000.0), (100.0, 1000.0), (0.0, 1200.0)]
    deltas = [(3.0, 0.0), (-3.0, 0.0), (0.0, -3.0)]
    truth = cv_truth(starts, deltas, T)
    spec = kin.ScenarioSpec("S1", T=T, p_d=0.9, lambda_fa=2.0, region=(-500, 500, 500, 1500), seed=3,
                            initial_states=[kin.KinematicState(*s, 3.0, 0.0) for s in starts])
    ms = kin.simulate_measurements(np.concatenate([truth, np.zeros((3, T, 4))], axis=2), spec)
    priors = [[*s, *d] for s, d in zip(starts, deltas)]
    perm = [2, 0, 1]
    a = mtt.track_mtt(model, ms, MttConfig(K=3, M=100, seed=4, target_keys=[0, 1, 2]), priors)
    b = mtt.track_mtt(model, ms, MttConfig(K=3, M=100, seed=4, target_keys=perm), [priors[i] for i in perm])
    assert np.allclose(a.estimates[:, perm], b.estimates, atol=1e-9)


def test_output_shapes_and_diagnostics():
    model = cv_model()
    truth = cv_truth([(300.0, 500.0), (-300.0, 500.0)], [(3.0, 1.0), (-3.0, 1.0)], 6)
    sets = [MeasurementSet(t, kin.h(truth[:, t]), np.array([0, 1])) for t in range(6)]
    out = mtt.track_mtt(model, sets, MttConfig(K=2, M=40, record_marginals=True),
                        [[300, 500, 3, 1], [-300, 500, -3, 1]])
    assert out.estimates.shape == (6, 2, 4) and out.ess.shape == (6, 2)
    assert out.bp_converged.shape == (6,) and out.bp_iterations.dtype.kind == "i"
    assert len(out.diagnostics["marginals"]) == 6
    for _, p in out.diagnostics["marginals"]:
        assert np.allclose(p.sum(axis=1), 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        MttConfig(K=0)
    with pytest.raises(ValueError):
        MttConfig(K=2, target_keys=[0])
    with pytest.raises(ValueError):
        mtt.track_mtt(cv_model(), [], MttConfig(K=2), [[0, 0, 0, 0]])
