import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gptrack import assoc
from gptrack.assoc import AssociationFactors
from gptrack.exceptions import InstanceTooLargeError
from gptrack.kinematics import h
from gptrack.pf import ParticleSet

R = np.diag([25.0, math.radians(0.5) ** 2])


def factors(P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return AssociationFactors(np.column_stack([np.ones(P.shape[0]), P]))


def random_instance(rng, K=None, n=None):
    K = K or int(rng.integers(1, 4))
    n = n or int(rng.integers(1, 4))
    P = np.exp(rng.uniform(-2 * math.log(10), 2 * math.log(10), (K, n)))
    P[rng.random((K, n)) < 0.2] = 0.0
    return factors(P)


def test_factor_validation():
    with pytest.raises(ValueError):
        AssociationFactors(np.array([[0.5, 1.0]]))
    with pytest.raises(ValueError):
        AssociationFactors(np.array([[1.0, -1.0]]))
    with pytest.raises(ValueError):
        AssociationFactors(np.array([[1.0, np.inf]]))


def test_single_target_single_measurement():
    m = assoc.run_bp(factors([[2.0]]))
    assert m.p_a[0] == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    assert m.converged


def test_disjoint_gating_decouples():
    psi = 3.0
    m = assoc.run_bp(factors([[psi, 0.0], [0.0, psi]]))
    assert m.p_a[0, 1] == pytest.approx(psi / (1 + psi), abs=1e-9)
    assert m.p_a[1, 2] == pytest.approx(psi / (1 + psi), abs=1e-9)


def test_all_zero_factors():
    f = factors(np.zeros((3, 4)))
    for m in (assoc.run_bp(f), assoc.exact_marginals_bruteforce(f)):
        assert np.all(m.p_a[:, 0] == 1.0) and np.all(m.p_a[:, 1:] == 0.0)


def test_no_measurements_or_targets():
    m = assoc.run_bp(AssociationFactors(np.ones((2, 1))))
    assert m.p_a.tolist() == [[1.0], [1.0]] and m.p_b.shape == (0, 3)
    m0 = assoc.run_bp(AssociationFactors(np.ones((0, 3))))
    assert m0.p_a.shape == (0, 3) and np.all(m0.p_b[:, 0] == 1.0)


def test_contended_bruteforce_is_row_stochastic():
    m = assoc.exact_marginals_bruteforce(factors([[2.0, 5.0], [4.0, 1.0]]))
    assert np.allclose(m.p_a.sum(axis=1), 1.0) and np.allclose(m.p_b.sum(axis=1), 1.0)
    # Hand enumeration: events {00, 01, 02, 10, 20, 12, 21} with weights 1, a, b, c, d, ad, bc.
    a, b, c, d = 4.0, 1.0, 2.0, 5.0
    Z = 1 + a + b + c + d + c * b + d * a
    assert m.p_a[0, 1] == pytest.approx((c + c * b) / Z)


def test_bruteforce_size_limit():
    with pytest.raises(InstanceTooLargeError):
        assoc.exact_marginals_bruteforce(factors(np.ones((9, 1))))


@given(st.integers(0, 100_000))
def test_bp_exact_on_single_target(seed):
    rng = np.random.default_rng(seed)
    f = random_instance(rng, K=1, n=int(rng.integers(1, 7)))
    assert assoc.total_variation(assoc.run_bp(f), assoc.exact_marginals_bruteforce(f)) < 1e-10
    assert np.allclose(assoc.run_bp(f).p_a, assoc.exact_marginals_bruteforce(f).p_a, atol=1e-10)


@given(st.integers(0, 100_000))
def test_bp_row_stochastic_and_finite(seed):
    rng = np.random.default_rng(seed)
    m = assoc.run_bp(random_instance(rng, K=int(rng.integers(1, 6)), n=int(rng.integers(1, 6))))
    for p in (m.p_a, m.p_b):
        assert np.all(np.isfinite(p)) and np.all(p >= 0) and np.all(p <= 1)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_bp_close_to_exact_on_small_loopy_instances():
    rng = np.random.default_rng(2024)
    tv = np.array([assoc.total_variation(assoc.run_bp(f), assoc.exact_marginals_bruteforce(f))
                   for f in (random_instance(rng) for _ in range(500))])
    assert np.mean(tv <= 0.05) >= 0.95


@given(st.integers(0, 100_000), st.floats(0.1, 10.0))
def test_row_scaling_property(seed, scale):
    rng = np.random.default_rng(seed)
    f = random_instance(rng, K=1, n=int(rng.integers(2, 5)))
    P = f.psi[:, 1:].copy()
    base = assoc.run_bp(f).p_a[0]
    scaled = assoc.run_bp(factors(P * scale)).p_a[0]
    # Relative mass among measurements is unchanged; only the missed-detection share moves.
    if scale > 1:
        assert scaled[0] <= base[0] + 1e-12
    else:
        assert scaled[0] >= base[0] - 1e-12
    row = P[0]
    order = np.sort(row)
    if order[-1] > 0 and (len(order) < 2 or order[-1] > order[-2] * (1 + 1e-9)):
        assert np.argmax(scaled[1:]) == np.argmax(base[1:]) == np.argmax(row)


def test_row_scaling_leaves_other_rows_in_tree_case():
    f = factors([[2.0, 0.0], [0.0, 3.0]])
    a = assoc.run_bp(f).p_a
    b = assoc.run_bp(factors([[8.0, 0.0], [0.0, 3.0]])).p_a
    assert np.allclose(a[1], b[1]) and b[0, 1] > a[0, 1]


def test_nonconvergence_flag():
    f = random_instance(np.random.default_rng(0), K=3, n=3)
    m = assoc.run_bp(f, max_iter=1, tol=0.0)
    assert not m.converged and m.iterations == 1
    assert np.allclose(m.p_a.sum(axis=1), 1.0)


def _single_particle(pos):
    return ParticleSet(np.array([[*pos, 0.0, 0.0]]), [1.0])


def test_single_particle_psi_closed_form():
    pos = np.array([300.0, 400.0])
    y = h(pos)[None]
    f = assoc.compute_factors([_single_particle(pos)], y, R, P_D=0.9, lambda_fa=1.0)
    n0 = 1.0 / (2 * math.pi * math.sqrt(R[0, 0] * R[1, 1]))
    assert f.psi[0, 0] == 1.0
    assert f.psi[0, 1] == pytest.approx(0.9 * n0 / 0.1, rel=1e-12)
    assert f.likelihoods[0].shape == (1, 1)


def test_symmetric_targets_equal_psi_and_far_measurement():
    pos = np.array([300.0, 400.0])
    ps = _single_particle(pos)
    y = np.vstack([h(pos), [1e5, 2.0]])
    f = assoc.compute_factors([ps, ps.copy()], y, R, 0.9, 2.0, clutter_density=1e-6)
    assert np.array_equal(f.psi[0], f.psi[1])
    assert f.psi[0, 2] == 0.0


def test_gating_threshold():
    pos = np.array([300.0, 400.0])
    r, b = h(pos)
    y = np.array([[r, b], [r + 5 * 5, b], [r + 5 * 14, b]])
    f = assoc.compute_factors([_single_particle(pos)], y, R, 0.9, 1.0)
    assert f.psi[0, 1] > 0 and f.psi[0, 2] > 0 and f.psi[0, 3] == 0.0


@pytest.mark.parametrize("P_D,lam", [(1.0, 2.0), (0.9, 0.0)])
def test_denominator_floor_warns(P_D, lam):
    pos = np.array([300.0, 400.0])
    with pytest.warns(RuntimeWarning, match="floored"):
        f = assoc.compute_factors([_single_particle(pos)], h(pos)[None], R, P_D, lam)
    assert np.all(np.isfinite(f.psi))


def test_no_warning_in_normal_regime():
    pos = np.array([300.0, 400.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assoc.compute_factors([_single_particle(pos)], h(pos)[None], R, 0.9, 2.0)
