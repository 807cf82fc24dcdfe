import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from grfpinn import diffcore as dc
from grfpinn import simgen
from grfpinn.dynamics import (DlsConfig, InertiaHead, PotentialHead, assemble_inertia,
                              contact_generalized_force, coriolis_matrix, dls_solve,
                              factor_from_entries, gravity_vector, inertia_derivatives,
                              inertia_from_factor, potential_energy, project_nonneg)

SP_INV_1 = np.log(np.e - 1.0)  # softplus^-1(1)
EPS = 1e-3


def _constant_stack(stack, value=0.3):
    last = stack.layers[-1]
    last.base_w.value[...] = 0.0
    last.coef.value[...] = value


# ------------------------------------------------------------------- inertia

def test_identity_factor_gives_identity_plus_eps():
    L = factor_from_entries(np.array([SP_INV_1, SP_INV_1, 0.0]), 2)
    np.testing.assert_allclose(inertia_from_factor(L, EPS).numpy(), (1 + EPS) * np.eye(2), atol=1e-15)


def test_lower_factor_product():
    L = factor_from_entries(np.array([SP_INV_1, SP_INV_1, 2.0]), 2)
    np.testing.assert_allclose(L.numpy(), [[1, 0], [2, 1]], atol=1e-15)
    np.testing.assert_allclose(inertia_from_factor(L, EPS).numpy(), [[1 + EPS, 2], [2, 5 + EPS]], atol=1e-14)


def test_factor_entry_count_checked():
    with pytest.raises(dc.ShapeError):
        factor_from_entries(np.zeros(4), 2)


def test_inertia_symmetric_pd(rng):
    head = InertiaHead(4, rng=rng)
    for _ in range(50):
        M = assemble_inertia(head, rng.uniform(-1, 1, 4))
        np.testing.assert_array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() >= EPS


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_inertia_output_names_parameters(rng):
    head = InertiaHead(3, rng=rng)
    head.kan.layers[0].coef.value[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="inertia.0.coef"):
        assemble_inertia(head, np.zeros(3) - 0.99)


def test_inertia_derivatives_match_fd(rng):
    head = InertiaHead(3, rng=rng)
    q, h = rng.uniform(-0.9, 0.9, 3), 1e-6
    dM = inertia_derivatives(head, q)
    for k in range(3):
        e = np.eye(3)[k] * h
        fd = (assemble_inertia(head, q + e) - assemble_inertia(head, q - e)) / (2 * h)
        np.testing.assert_allclose(dM[k], fd, atol=1e-6)


# ------------------------------------------------------------------- gravity

def test_constant_potential_has_zero_gravity(rng):
    head = PotentialHead(3, rng=rng)
    _constant_stack(head.kan)
    np.testing.assert_allclose(gravity_vector(head, rng.uniform(-1, 1, 3)), 0.0, atol=1e-12)


def test_gravity_is_potential_gradient(rng):
    head = PotentialHead(4, rng=rng, scale=5.0)
    h = 1e-6
    for _ in range(10):
        q = rng.uniform(-0.9, 0.9, 4)
        fd = [(potential_energy(head, q + h * e) - potential_energy(head, q - h * e)) / (2 * h)
              for e in np.eye(4)]
        np.testing.assert_allclose(gravity_vector(head, q), fd, rtol=1e-5, atol=1e-5)


def test_gravity_is_curl_free(rng):
    head = PotentialHead(3, rng=rng)
    q, h = rng.uniform(-0.8, 0.8, 3), 1e-5
    H = np.stack([(gravity_vector(head, q + h * e) - gravity_vector(head, q - h * e)) / (2 * h)
                  for e in np.eye(3)])
    np.testing.assert_allclose(H, H.T, atol=1e-6)


# ------------------------------------------------------------------- coriolis

def test_constant_inertia_gives_zero_coriolis(rng):
    head = InertiaHead(3, rng=rng)
    _constant_stack(head.kan)
    np.testing.assert_allclose(coriolis_matrix(head, rng.uniform(-1, 1, 3), rng.normal(size=3)),
                               0.0, atol=1e-12)


def test_zero_velocity_gives_zero_coriolis(rng):
    head = InertiaHead(3, rng=rng)
    np.testing.assert_array_equal(coriolis_matrix(head, rng.uniform(-1, 1, 3), np.zeros(3)), 0.0)


def test_coriolis_matches_christoffel_formula(rng):
    head = InertiaHead(3, rng=rng)
    q, qd = rng.uniform(-1, 1, 3), rng.normal(size=3)
    dM = inertia_derivatives(head, q)  # dM[k, i, j]
    want = 0.5 * (np.einsum("kij,k->ij", dM, qd) + np.einsum("jik,k->ij", dM, qd)
                  - np.einsum("ijk,k->ij", dM, qd))
    np.testing.assert_allclose(coriolis_matrix(head, q, qd), want, atol=1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-1, 1)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_skew_symmetry(q, qd, x):
    head = InertiaHead(3, rng=np.random.default_rng(5))
    dM = inertia_derivatives(head, q)
    Mdot = np.einsum("kij,k->ij", dM, qd)
    C = coriolis_matrix(head, q, qd)
    assert abs(x @ (Mdot - 2 * C) @ x) <= 1e-8 * (x @ x) * (1 + np.linalg.norm(qd)) + 1e-300


# --------------------------------------------------------------- contact force

def test_statics_gives_gravity(rng):
    n = 3
    M, C, G = np.eye(n), rng.normal(size=(n, n)), rng.normal(size=n)
    np.testing.assert_array_equal(contact_generalized_force(M, C, G, np.zeros(n), np.zeros(n), np.zeros(n)), G)


def test_consistent_actuation_gives_zero(rng):
    n = 4
    A = rng.normal(size=(n, n))
    M, C, G = A @ A.T + np.eye(n), rng.normal(size=(n, n)), rng.normal(size=n)
    qdd, qd = rng.normal(size=n), rng.normal(size=n)
    tau = M @ qdd + C @ qd + G
    np.testing.assert_allclose(contact_generalized_force(M, C, G, qdd, qd, tau), 0.0, atol=1e-12)


def test_true_model_recovers_contact_term(small_splits):
    ds = small_splits["train"]
    M, C, G = simgen.true_dynamics(simgen.BipedModel(), ds.q, ds.qd)
    tau_c = contact_generalized_force(M, C, G, ds.qdd, ds.qd, ds.tau)
    want = np.einsum("nfi,nf->ni", ds.Jn, ds.f)
    assert np.abs(tau_c - want).max() < 1e-8


def test_contact_force_shape_mismatch_rejected():
    with pytest.raises(dc.ShapeError):
        contact_generalized_force(np.eye(3), np.eye(3), np.zeros(2), np.zeros(3), np.zeros(3), np.zeros(3))


# ------------------------------------------------------------------------ DLS

def test_dls_identity_tiny_damping():
    np.testing.assert_allclose(dls_solve(np.eye(2), np.array([3.0, -4.0]), 1e-9), [3, -4], atol=1e-12)


def test_dls_unit_damping():
    np.testing.assert_allclose(dls_solve(np.eye(2), np.array([3.0, -4.0]), 1.0), [1.5, -2.0], atol=1e-15)


def test_dls_swing_row_vanishes_with_damping(rng):
    J = np.vstack([rng.normal(size=4), np.zeros(4)])
    tau = rng.normal(size=4)
    prev = np.inf
    for lam in (1e-3, 1e-1, 1.0, 10.0):
        f = dls_solve(J, tau, lam)
        assert np.all(np.isfinite(f))
        assert f[1] == 0.0
        assert abs(f[0]) < prev
        prev = abs(f[0])


def test_dls_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        DlsConfig(0.0)


def test_dls_matches_lstsq(rng):
    for _ in range(100):
        J = rng.normal(size=(2, 5))
        tau = rng.normal(size=5)
        oracle = np.linalg.lstsq(J.T, tau, rcond=None)[0]
        got = dls_solve(J, tau, DlsConfig(1e-9))
        assert np.linalg.norm(got - oracle) <= 1e-6 * np.linalg.norm(oracle)


def test_dls_tensor_in_tensor_out(rng):
    J = rng.normal(size=(2, 3))
    assert isinstance(dls_solve(J, dc.tensor(rng.normal(size=3))), dc.Tensor)


# -------------------------------------------------------------------- project

def test_project_examples():
    np.testing.assert_array_equal(project_nonneg([3.0, -4.0]), [3.0, 0.0])
    np.testing.assert_array_equal(project_nonneg([0.0, 0.0]), [0.0, 0.0])


@given(arrays(np.float64, 2, elements=st.floats(-1e6, 1e6)))
def test_project_idempotent_and_nonneg(x):
    p = project_nonneg(x)
    assert np.all(p >= 0)
    np.testing.assert_array_equal(project_nonneg(p), p)
