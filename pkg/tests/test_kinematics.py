import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gptrack import kinematics as kin
from gptrack.exceptions import ConfigError, InvalidStateError
from gptrack.kinematics import KinematicState, ScenarioSpec


def euler(state, dt, n=10000):
    xi, eta, v, phi = state.xi, state.eta, state.v, state.phi
    omega = state.a_n / state.v
    h = dt / n
    for _ in range(n):
        # Midpoint rule on heading and speed for the oracle.
        vm = v + 0.5 * state.a_t * h
        pm = phi + 0.5 * omega * h
        xi += vm * math.cos(pm) * h
        eta += vm * math.sin(pm) * h
        v += state.a_t * h
        phi += omega * h
    return xi, eta, v, phi


def test_cv_step():
    s = kin.step_curvilinear(KinematicState(0, 0, 10, 0), 1.0)
    assert s.as_array() == pytest.approx([10, 0, 10, 0, 0, 0], abs=1e-12)


def test_accelerated_step():
    s = kin.step_curvilinear(KinematicState(0, 0, 10, 0, a_t=2.0), 1.0)
    assert s.v == pytest.approx(12.0)
    assert s.xi == pytest.approx(11.0)
    assert s.eta == pytest.approx(0.0, abs=1e-12)


def test_turn_matches_euler():
    state = KinematicState(0, 0, 10, 0, a_t=0.0, a_n=10 * math.pi / 12)
    s = kin.step_curvilinear(state, 1.0)
    assert s.phi == pytest.approx(math.pi / 12)
    ex, ey, _, _ = euler(state, 1.0)
    assert math.hypot(s.xi - ex, s.eta - ey) < 1e-3
    radius = state.v / (state.a_n / state.v)
    # Arc of a circle centred at (0, radius) for a left turn from heading 0.
    assert math.hypot(s.xi, s.eta - radius) == pytest.approx(radius, rel=1e-12)


@given(st.floats(1, 30), st.floats(-math.pi, math.pi), st.floats(-10, 10), st.floats(-10, 10))
def test_closed_form_agrees_with_fine_integration(v, phi, a_t, a_n):
    state = KinematicState(0, 0, v, phi, a_t, a_n)
    s = kin.step_curvilinear(state, 1.0)
    ex, ey, ev, _ = euler(state, 1.0, n=2000)
    assert math.hypot(s.xi - ex, s.eta - ey) < 1e-2
    assert s.v == pytest.approx(ev)


def test_zero_accel_preserves_speed_and_heading():
    s = KinematicState(3, 4, 12.5, 0.7)
    for _ in range(50):
        s = kin.step_curvilinear(s, 1.0)
    assert s.v == 12.5 and s.phi == pytest.approx(0.7, abs=1e-15)


def test_circular_motion_conserves_speed():
    s = KinematicState(0, 0, 15, 0, 0.0, 15 * math.radians(15))
    for _ in range(200):
        s = kin.step_curvilinear(s, 1.0)
    assert s.v == 15


def test_invalid_states():
    with pytest.raises(InvalidStateError):
        kin.step_curvilinear(KinematicState(float("nan"), 0, 1, 0), 1.0)
    with pytest.raises(InvalidStateError):
        kin.step_curvilinear(KinematicState(0, 0, 0, 0, 0, 1.0), 1.0)


def test_wrap_angle_range():
    a = kin.wrap_angle(np.linspace(-20, 20, 1001))
    assert np.all(a > -math.pi) and np.all(a <= math.pi)
    assert kin.wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_s1_alternating_turns():
    spec = ScenarioSpec("S1", T=40, q_xi=0, q_eta=0, seed=1)
    tr = kin.generate_trajectory(spec)
    rate = tr[:-1, 5] / tr[:-1, 2]
    assert np.allclose(rate[:10], math.radians(15))
    assert np.allclose(rate[10:20], -math.radians(15))
    assert np.allclose(rate[20:30], math.radians(15))
    assert np.allclose(tr[:, 2], 15.0)


def test_s1_training_trajectory_fits_region():
    spec = ScenarioSpec("S1", T=20, region=kin.TRAIN_REGION_S1, seed=0)
    tr = kin.generate_trajectory(spec)
    x0, x1, y0, y1 = kin.TRAIN_REGION_S1
    assert tr.shape == (20, 6)
    assert np.all((tr[:, 0] > x0) & (tr[:, 0] < x1) & (tr[:, 1] > y0) & (tr[:, 1] < y1))


def test_s2_accel_membership_and_speed_bounds():
    spec = ScenarioSpec("S2", T=1000, q_xi=0, q_eta=0, seed=5)
    tr = kin.generate_trajectory(spec)
    assert set(np.abs(tr[:-1, 4])) <= {0.1, 1.0, 10.0}
    assert set(np.abs(tr[:-1, 5])) <= {0.1, 1.0, 10.0}
    assert np.all((tr[:, 2] >= 5.0 - 1e-9) & (tr[:, 2] <= 30.0 + 1e-9))
    assert {1.0, -1.0} <= set(np.sign(tr[:-1, 5]))


def test_s3_turn_rate_signs_random():
    tr = kin.generate_trajectory(ScenarioSpec("S3", T=200, seed=2))
    rate = tr[:-1, 5] / tr[:-1, 2]
    assert np.allclose(np.abs(rate), math.radians(15))
    flips = np.sum(np.diff(np.sign(rate)) != 0)
    assert 60 < flips < 140


def test_zero_schedule_is_collinear():
    spec = ScenarioSpec("custom", T=30, schedule=[(0.0, 0.0)] * 29, q_xi=0, q_eta=0,
                        initial_states=[KinematicState(1, 2, 5, 0.3)], seed=0)
    p = kin.generate_trajectory(spec)[:, :2]
    d = p[1:] - p[0]
    cross = d[:, 0] * math.sin(0.3) - d[:, 1] * math.cos(0.3)
    assert np.max(np.abs(cross)) < 1e-9


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.sampled_from(["S1", "S2", "S3"]))
def test_translation_invariance(da, db, scen):
    base = ScenarioSpec(scen, T=30, seed=11)
    s0 = base.initial_states[0]
    moved = base.with_(initial_states=[KinematicState(s0.xi + da, s0.eta + db, s0.v, s0.phi)])
    a, b = kin.generate_trajectory(base), kin.generate_trajectory(moved)
    assert np.allclose(b[:, 0] - a[:, 0], da, atol=1e-6)
    assert np.allclose(b[:, 1] - a[:, 1], db, atol=1e-6)
    assert np.array_equal(a[:, 2:], b[:, 2:])


def test_determinism():
    spec = ScenarioSpec("S2", T=100, seed=42, p_d=0.8, lambda_fa=3.0, region=(-500, 500, 1, 1000))
    t1, t2 = kin.generate_truth(spec), kin.generate_truth(spec)
    assert np.array_equal(t1, t2)
    m1, m2 = kin.simulate_measurements(t1, spec), kin.simulate_measurements(t2, spec)
    assert all(np.array_equal(a.z, b.z) and np.array_equal(a.origin, b.origin) for a, b in zip(m1, m2))


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        ScenarioSpec("S9")


@pytest.mark.parametrize("bad", [{"p_d": 0.0}, {"p_d": 1.5}, {"lambda_fa": -1}, {"dt": 0},
                                 {"region": (1, 0, 0, 1)}])
def test_spec_validation(bad):
    with pytest.raises(ConfigError):
        ScenarioSpec("S1", **bad)


def test_spec_json_roundtrip(tmp_path):
    spec = ScenarioSpec("S2", T=12, seed=9, lambda_fa=1.0)
    p = tmp_path / "s.json"
    import json
    p.write_text(json.dumps(spec.to_dict()))
    assert ScenarioSpec.from_json(p) == spec
    p.write_text('{"scenario": "S1",\n "T": }')
    with pytest.raises(ConfigError, match=":2:"):
        ScenarioSpec.from_json(p)
    d = spec.to_dict()
    del d["seed"]
    with pytest.raises(ConfigError, match="seed"):
        ScenarioSpec.from_dict(d)


def test_measure_noiseless():
    m = kin.measure((3.0, 4.0), np.zeros((2, 2)))
    assert m.r == pytest.approx(5.0) and m.bearing == pytest.approx(math.atan2(3, 4))
    m = kin.measure(KinematicState(0, 10, 1, 0), np.zeros((2, 2)))
    assert (m.r, m.bearing) == pytest.approx((10.0, 0.0))


def test_measure_origin_error():
    with pytest.raises(InvalidStateError):
        kin.measure((0.0, 0.0), np.zeros((2, 2)))


def test_measure_monte_carlo_mean():
    R = np.diag([25.0, math.radians(0.5) ** 2])
    rng = np.random.default_rng(0)
    n = 100_000
    z = np.array([[m.r, m.bearing] for m in (kin.measure((300.0, 400.0), R, rng) for _ in range(n))])
    truth = kin.h(np.array([300.0, 400.0]))
    assert abs(z[:, 0].mean() - truth[0]) < 3 * 5 / math.sqrt(n)
    assert abs(z[:, 1].mean() - truth[1]) < 3 * math.radians(0.5) / math.sqrt(n)


def test_negative_range_clamped():
    rng = np.random.default_rng(1)
    rs = [kin.measure((0.0, 0.1), np.diag([100.0, 0.0]), rng).r for _ in range(200)]
    assert min(rs) == 0.0


def test_to_cartesian_inverts_h():
    p = np.random.default_rng(3).uniform(-1000, 1000, (50, 2))
    assert np.allclose(kin.to_cartesian(kin.h(p)), p)


def _positions(K):
    return np.column_stack([np.linspace(100, 300, K), np.full(K, 500.0)])


def test_measurement_set_counts():
    spec = ScenarioSpec("S1", initial_states=[KinematicState(0, 1, 1, 0)] * 3, p_d=1.0, lambda_fa=0.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert len(kin.generate_measurement_set(_positions(3), spec, rng)) == 3
    spec0 = spec.with_(p_d=1e-300)
    assert len(kin.generate_measurement_set(_positions(3), spec0, rng)) == 0


def test_measurement_set_mean_count():
    K, trials = 3, 10_000
    spec = ScenarioSpec("S1", p_d=0.9, lambda_fa=2.0, region=(-500, 500, 0, 1000))
    rng = np.random.default_rng(7)
    n = np.array([len(kin.generate_measurement_set(_positions(K), spec, rng)) for _ in range(trials)])
    expected = 0.9 * K + 2.0
    se = math.sqrt(K * 0.9 * 0.1 + 2.0) / math.sqrt(trials)
    assert abs(n.mean() - expected) < 3 * se


def test_clutter_inside_measurement_space_and_labels():
    spec = ScenarioSpec("S1", p_d=0.5, lambda_fa=5.0, region=(-500, 500, 10, 1000))
    rng = np.random.default_rng(2)
    r0, r1, b0, b1 = kin.measurement_space(spec.region)
    for _ in range(50):
        ms = kin.generate_measurement_set(_positions(3), spec, rng)
        c = ms.z[ms.origin == -1]
        assert np.all((c[:, 0] >= r0) & (c[:, 0] <= r1) & (c[:, 1] >= b0) & (c[:, 1] <= b1))
        assert set(ms.origin) <= {-1, 0, 1, 2}
        for k in range(3):
            assert ms.for_target(k).shape[0] <= 1


def test_measurement_space_branch_cut():
    assert kin.measurement_space((-10, 10, -10, 10))[2:] == (-math.pi, math.pi)
    r0, r1, b0, b1 = kin.measurement_space(kin.TEST_REGION_S1)
    assert r0 == 0.0 and b0 == pytest.approx(-math.pi / 2) and b1 == pytest.approx(math.pi / 2)
    assert kin.clutter_density((-10, 10, -10, 10)) == pytest.approx(1 / (math.hypot(10, 10) * 2 * math.pi))
