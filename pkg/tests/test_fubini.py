"""Geometry core: metric conventions, moment map, canonical-bundle data."""

import numpy as np
import pytest

from mintori import fubini as fb
from mintori.errors import (
    ContractViolationError,
    DegenerateInputError,
    RegularityError,
)

RNG = np.random.default_rng(7)
N = 2


def rand_point(n=N):
    return fb.normalize_point(RNG.standard_normal(n + 1)
                              + 1j * RNG.standard_normal(n + 1))


def rand_algebra(n=N):
    return fb.TorusAlgebraVec(RNG.standard_normal(n))


def rephased(z: fb.AmbientPoint, alpha: float) -> fb.AmbientPoint:
    return fb.AmbientPoint(z=np.exp(1j * alpha) * z.z, n=z.n)


# -- normalize_point ---------------------------------------------------------

def test_normalize_scaling():
    p = fb.normalize_point([2.0, 0.0, 0.0])
    assert np.allclose(p.z, [1.0, 0.0, 0.0])


def test_normalize_phase_gauge():
    p = fb.normalize_point([0.0, 1.0j, 0.0])
    assert np.allclose(p.z, [0.0, 1.0, 0.0])


def test_normalize_unit():
    p = fb.normalize_point([1.0, 1.0, 1.0])
    assert np.allclose(p.z, np.ones(3) / np.sqrt(3.0))


def test_normalize_zero_rejected():
    with pytest.raises(DegenerateInputError):
        fb.normalize_point([0.0, 0.0, 0.0])


# -- fs_metric ----------------------------------------------------------------

def test_metric_positive_definite():
    z = rand_point()
    u = fb.random_tangent(z, RNG)
    val = fb.fs_metric(u, u)
    assert val.real > 0.0 and abs(val.imag) < 1e-14


def test_metric_hermitian_symmetry():
    z = rand_point()
    u, v = fb.random_tangent(z, RNG), fb.random_tangent(z, RNG)
    assert fb.fs_metric(u, v) == pytest.approx(np.conj(fb.fs_metric(v, u)))


def test_kaehler_compatibility():
    z = rand_point()
    u = fb.random_tangent(z, RNG)
    assert fb.fs_omega(u.jmul(), u) == pytest.approx(fb.fs_g(u, u))
    assert fb.fs_g(u, u) > 0.0


def test_metric_base_mismatch():
    u = fb.random_tangent(rand_point(), RNG)
    v = fb.random_tangent(rand_point(), RNG)
    with pytest.raises(ContractViolationError):
        fb.fs_metric(u, v)


# -- torus action -------------------------------------------------------------

def test_field_vanishes_at_fixed_point():
    z = fb.normalize_point([1.0, 0.0, 0.0])
    X = fb.torus_field(z, rand_algebra())
    assert np.linalg.norm(X.w) < 1e-15


def test_field_linear_in_algebra():
    z = rand_point()
    a, b = rand_algebra(), rand_algebra()
    lam = 0.73
    lhs = fb.torus_field(z, fb.TorusAlgebraVec(a.a + lam * b.a)).w
    rhs = fb.torus_field(z, a).w + lam * fb.torus_field(z, b).w
    assert np.allclose(lhs, rhs, atol=1e-14)


def test_fields_independent_at_clifford():
    z = fb.normalize_point(np.ones(N + 1))
    X = np.vstack([fb.torus_field(z, fb.TorusAlgebraVec(e)).w
                   for e in np.eye(N)])
    s = np.linalg.svd(X, compute_uv=False)
    assert s[-1] > 0.1  # rank n by explicit evaluation


# -- moment map ---------------------------------------------------------------

def test_moment_vanishes_at_clifford():
    z = fb.normalize_point(np.ones(N + 1))
    assert np.max(np.abs(fb.moment_map(z))) < 1e-10
    # oracle: sigma must vanish there too
    assert abs(fb.sigma(z, rand_algebra())) < 1e-12


def test_moment_torus_invariance():
    z = rand_point()
    ang = RNG.uniform(0, 2 * np.pi, N)
    zt = fb.AmbientPoint(np.exp(1j * np.concatenate(([0.0], ang))) * z.z, N)
    assert np.allclose(fb.moment_map(z), fb.moment_map(zt), atol=1e-14)


@pytest.mark.parametrize("trial", range(20))
def test_moment_identity_finite_difference(trial):
    z = rand_point()
    a = rand_algebra()
    u = fb.random_tangent(z, RNG)
    h = 1e-5
    zp = (z.z + h * u.w) / np.linalg.norm(z.z + h * u.w)
    zm = (z.z - h * u.w) / np.linalg.norm(z.z - h * u.w)
    dmu = (fb.moment_map_raw(zp) - fb.moment_map_raw(zm)) @ a.a / (2 * h)
    om = fb.fs_omega(fb.torus_field(z, a), u)
    assert dmu == pytest.approx(om, abs=1e-6)


# -- sigma ---------------------------------------------------------------------

def test_sigma_purely_imaginary_and_consistent():
    t = fb.einstein_constant(N)
    for _ in range(10):
        z = rand_point()
        a = rand_algebra()
        s = fb.sigma(z, a)
        assert abs(s.real) < 1e-10
        mu_a = float(fb.moment_map(z) @ a.a)
        assert s == pytest.approx(1j * t * mu_a, abs=1e-8)


def test_sigma_linear():
    z = rand_point()
    a, b = rand_algebra(), rand_algebra()
    lam = -1.37
    lhs = fb.sigma(z, fb.TorusAlgebraVec(a.a + lam * b.a))
    assert lhs == pytest.approx(fb.sigma(z, a) + lam * fb.sigma(z, b),
                                abs=1e-12)


def test_sigma_transport_route_agrees():
    z = rand_point()
    a = rand_algebra()
    assert fb.sigma_transport(z, a) == pytest.approx(fb.sigma(z, a), abs=1e-9)


def test_sigma_rank_deficient_rejected():
    z = fb.normalize_point([1.0, 0.0, 0.0])
    with pytest.raises(RegularityError):
        fb.sigma(z, rand_algebra())


# -- gauge invariance ----------------------------------------------------------

def test_projective_gauge_invariance():
    z = rand_point()
    a = rand_algebra()
    z2 = rephased(z, 1.234)
    assert np.allclose(fb.moment_map(z), fb.moment_map(z2), atol=1e-10)
    assert fb.sigma(z, a) == pytest.approx(fb.sigma(z2, a), abs=1e-10)
    u = fb.random_tangent(z, RNG)
    u2 = fb.TangentVec(z2, np.exp(1.234j) * u.w)
    assert fb.fs_metric(u2, u2) == pytest.approx(fb.fs_metric(u, u), abs=1e-12)


# -- kappa' and canon_eval -------------------------------------------------------

def test_canon_eval_positive_on_oriented_frame():
    z = rand_point()
    D = fb.orbit_frame(z)
    k = fb.CanonicalFiberData(base=z, theta=0.0)
    vecs = [fb.TangentVec(z, D[i]) for i in range(N)]
    val = fb.canon_eval(k, vecs)
    assert val.real == pytest.approx(1.0, abs=1e-12) and abs(val.imag) < 1e-12


def test_canon_eval_phase_linearity():
    z = rand_point()
    vecs = [fb.random_tangent(z, RNG) for _ in range(N)]
    v0 = fb.canon_eval(fb.CanonicalFiberData(z, 0.0), vecs)
    va = fb.canon_eval(fb.CanonicalFiberData(z, 0.8), vecs)
    assert va == pytest.approx(np.exp(0.8j) * v0, abs=1e-13)


def test_canon_eval_antisymmetry():
    z = rand_point()
    vecs = [fb.random_tangent(z, RNG) for _ in range(N)]
    k = fb.CanonicalFiberData(z, 0.3)
    assert fb.canon_eval(k, vecs[::-1]) == pytest.approx(
        -fb.canon_eval(k, vecs), abs=1e-13)


def test_canon_eval_torus_equivariance():
    z = rand_point()
    vecs = [fb.random_tangent(z, RNG) for _ in range(N)]
    val = fb.canon_eval(fb.CanonicalFiberData(z, 0.0), vecs)
    ang = np.concatenate(([0.0], RNG.uniform(0, 2 * np.pi, N)))
    zt = fb.AmbientPoint(np.exp(1j * ang) * z.z, N)
    vecs_t = [fb.TangentVec(zt, np.exp(1j * ang) * v.w) for v in vecs]
    val_t = fb.canon_eval(fb.CanonicalFiberData(zt, 0.0), vecs_t)
    assert val_t == pytest.approx(val, abs=1e-10)


# -- Einstein constant -----------------------------------------------------------

def test_einstein_constant_value():
    assert fb.einstein_constant(2) == 6.0


@pytest.mark.parametrize("trial", range(5))
def test_einstein_curvature_loops(trial):
    z = rand_point()
    u = fb.random_tangent(z, RNG)
    est = fb.einstein_constant_estimate(N, z=z, u=u)
    assert est == pytest.approx(fb.einstein_constant(N), abs=1e-4)


# -- Calabi profile --------------------------------------------------------------

def test_calabi_at_zero():
    u, _ = fb.calabi_profile(0.0, 2.5, 2, 6.0)
    assert u == pytest.approx(2.5 ** (1.0 / 3.0))


def test_calabi_derivative_positive():
    r2 = np.linspace(0.0, 10.0, 50)
    _, up = fb.calabi_profile(r2, 1.0, 2, 6.0)
    assert np.all(up > 0.0)


def test_calabi_derived_value():
    # d/dr2 (t r2 + l)^{1/(n+1)} at n=1, t=2, l=1, r2=0 equals 1
    _, up = fb.calabi_profile(0.0, 1.0, 1, 2.0)
    assert up == pytest.approx(1.0, abs=1e-14)


def test_calabi_domain_errors():
    with pytest.raises(DegenerateInputError):
        fb.calabi_profile(0.0, 0.0, 2, 6.0)
    with pytest.raises(DegenerateInputError):
        fb.calabi_profile(-1.0, 1.0, 2, 6.0)
