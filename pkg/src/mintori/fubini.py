"""Fubini-Study geometry of CP^n in homogeneous representatives.

Everything is computed on unit-norm representatives z in C^{n+1}; a tangent
vector at [z] is its horizontal lift w with <w, z> = 0 (Hermitian).  The
Hermitian form is linear in the first slot,

    <u, v> = sum_k u_k conj(v_k),    g = Re<.,.>,    omega = Im<.,.>,

so that omega(Ju, u) = g(u, u) > 0.  With this normalization (the metric the
unit sphere submersion induces) the Einstein constant is measured by
``einstein_constant``; it is not hardcoded from a convention.

The torus T^n acts by (t.z)_j = e^{i t_j} z_j on the coordinates 1..n.  The
module also provides the canonical-bundle data attached to that action: the
unitary frame of the orbit distribution D, the reference (n,0)-form kappa'
(unit, real-positive on the oriented frame of D), the connection 1-form psi
in the kappa' gauge, and sigma(v) = psi(X_v).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateInputError,
    RegularityError,
)

_ZERO_TOL = 1e-12
_FRAME_RCOND = 1e-14  # squared-volume floor for the orbit frame


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AmbientPoint:
    """Unit-norm homogeneous representative of a point of CP^n."""

    z: np.ndarray
    n: int

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=complex)
        if z.ndim != 1 or z.size != self.n + 1:
            raise ContractViolationError(f"expected {self.n + 1} coordinates")
        if abs(np.linalg.norm(z) - 1.0) > 1e-12:
            raise ContractViolationError("representative is not unit norm")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)


@dataclass(frozen=True, eq=False)
class TangentVec:
    """Horizontal lift of a tangent vector of CP^n at ``base``."""

    base: AmbientPoint
    w: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=complex)
        if w.shape != self.base.z.shape:
            raise ContractViolationError("tangent vector has wrong length")
        defect = abs(np.vdot(self.base.z, w))
        if defect > 1e-10 * max(1.0, np.linalg.norm(w)):
            raise ContractViolationError(
                f"not in the horizontal gauge: |<w,z>| = {defect:.3e}")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    def jmul(self) -> "TangentVec":
        """Complex-structure action J (multiplication by i on the lift)."""
        return TangentVec(self.base, 1j * self.w)


@dataclass(frozen=True, eq=False)
class TorusAlgebraVec:
    """Element of the Lie algebra of T^n in the standard basis."""

    a: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise ContractViolationError("algebra vector must be a finite 1-d array")
        a.flags.writeable = False
        object.__setattr__(self, "a", a)


@dataclass(frozen=True, eq=False)
class CanonicalFiberData:
    """Unit (n,0)-form at ``base``: phase ``theta`` relative to kappa'."""

    base: AmbientPoint
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % (2.0 * np.pi))


# ---------------------------------------------------------------------------
# points and the metric
# ---------------------------------------------------------------------------

def normalize_point(raw) -> AmbientPoint:
    """Unit-normalize with the deterministic phase gauge: the first
    coordinate of modulus > 1e-12 is made real positive."""
    raw = np.asarray(raw, dtype=complex).ravel()
    nrm = np.linalg.norm(raw)
    if not np.isfinite(nrm) or nrm < _ZERO_TOL:
        raise DegenerateInputError("cannot normalize the zero vector")
    z = raw / nrm
    idx = np.flatnonzero(np.abs(z) > _ZERO_TOL)
    k = idx[0]
    z = z * (np.abs(z[k]) / z[k])
    z[k] = abs(z[k])
    return AmbientPoint(z=z, n=z.size - 1)


def _herm(u: np.ndarray, v: np.ndarray) -> complex:
    """Hermitian form, linear in the first slot."""
    return complex(np.vdot(v, u))


def _check_same_base(u: TangentVec, v: TangentVec):
    if u.base is not v.base and not np.array_equal(u.base.z, v.base.z):
        raise ContractViolationError("tangent vectors have different base points")


def fs_metric(u: TangentVec, v: TangentVec) -> complex:
    """Fubini-Study Hermitian form; g = Re, omega = Im."""
    _check_same_base(u, v)
    return _herm(u.w, v.w)


def fs_g(u: TangentVec, v: TangentVec) -> float:
    return fs_metric(u, v).real


def fs_omega(u: TangentVec, v: TangentVec) -> float:
    return fs_metric(u, v).imag


def fs_distance(z1: AmbientPoint, z2: AmbientPoint) -> float:
    """Geodesic distance on CP^n, arccos |<z1, z2>|."""
    c = abs(np.vdot(z2.z, z1.z))
    return float(np.arccos(min(1.0, c)))


def tangent_project(z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Project onto the horizontal gauge at z (remove the complex z-span)."""
    return u - np.vdot(z, u) * z


def random_tangent(z: AmbientPoint, rng: np.random.Generator) -> TangentVec:
    w = rng.standard_normal(z.n + 1) + 1j * rng.standard_normal(z.n + 1)
    w = tangent_project(z.z, w)
    return TangentVec(z, w / np.linalg.norm(w))


# ---------------------------------------------------------------------------
# torus action and moment map
# ---------------------------------------------------------------------------

def _field_raw(z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Horizontal lift of the flow field X_a at the representative z."""
    az = np.concatenate(([0.0j], a * z[1:]))
    return 1j * (az - np.vdot(z, az) * z)


def torus_field(z: AmbientPoint, a: TorusAlgebraVec) -> TangentVec:
    if a.a.size != z.n:
        raise ContractViolationError("algebra vector length must equal n")
    return TangentVec(z, _field_raw(z.z, a.a))


def moment_map(z: AmbientPoint) -> np.ndarray:
    """Canonical moment map: mu_j = (|z_j|^2 - 1/(n+1))/2, j = 1..n.

    The constant is pinned by the canonical-bundle normalization (the zero
    level is where every X_v' is horizontal = the Clifford orbit), and the
    scale by d mu(a) = i_{X_a} omega for the form above.
    """
    zz = np.abs(z.z[1:]) ** 2
    return 0.5 * (zz - 1.0 / (z.n + 1))


def moment_map_raw(z: np.ndarray) -> np.ndarray:
    n = z.size - 1
    return 0.5 * (np.abs(z[1:]) ** 2 - 1.0 / (n + 1))


# ---------------------------------------------------------------------------
# orbit frame and the reference (n,0)-form kappa'
# ---------------------------------------------------------------------------

def _fields(z: np.ndarray) -> np.ndarray:
    """Stack of the n coordinate torus fields X_{e_j} (rows), horizontal."""
    n = z.size - 1
    m = np.abs(z[1:]) ** 2
    P = -np.outer(m, z)
    P[np.arange(n), np.arange(1, n + 1)] += z[1:]
    return 1j * P


def _frame(z: np.ndarray):
    """Unitary frame of the orbit distribution D, oriented by X_{e_1..e_n}.

    Returns (X, L, D): torus fields, Cholesky factor of their real Gram,
    and the frame rows D = L^{-1} X.  The rows are Hermitian-orthonormal
    because torus orbits are isotropic (the Gram matrix is real).
    """
    X = _fields(z)
    G = (X @ X.conj().T).real
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise RegularityError("torus orbit distribution is degenerate here")
    d = np.diagonal(L)
    if np.min(d) ** 2 <= _FRAME_RCOND * max(1.0, np.max(d) ** 2):
        raise RegularityError("torus orbit distribution is nearly degenerate")
    D = np.linalg.solve(L, X)
    return X, L, D


def _phi_lower(M: np.ndarray) -> np.ndarray:
    out = np.tril(M, -1)
    out[np.diag_indices_from(out)] = 0.5 * np.diagonal(M)
    return out


def _fields_dX(z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Directional derivative of the torus fields along a tangent u at z."""
    n = z.size - 1
    m = np.abs(z[1:]) ** 2
    dm = 2.0 * (np.conj(z[1:]) * u[1:]).real
    dP = -np.outer(dm, z) - np.outer(m, u)
    dP[np.arange(n), np.arange(1, n + 1)] += u[1:]
    return 1j * dP


def _frame_d_given(z: np.ndarray, u: np.ndarray,
                   X: np.ndarray, L: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Frame derivative dD along u, reusing a precomputed frame."""
    dX = _fields_dX(z, u)
    S = (dX @ X.conj().T).real
    dG = S + S.T
    B = np.linalg.solve(L, np.linalg.solve(L, dG).T).T  # L^{-1} dG L^{-T}
    dL = L @ _phi_lower(B)
    return np.linalg.solve(L, dX - dL @ D)


def _frame_d(z: np.ndarray, u: np.ndarray):
    """Frame plus its covariant data along u: returns (X, L, D, dD)."""
    X, L, D = _frame(z)
    dD = _frame_d_given(z, u, X, L, D)
    return X, L, D, dD


def orbit_frame(z: AmbientPoint) -> np.ndarray:
    """Oriented unitary frame (rows) of the torus orbit distribution."""
    _, _, D = _frame(z.z)
    return D


def kappa_eval_raw(z: np.ndarray, vecs: np.ndarray, theta: float = 0.0) -> complex:
    """Evaluate e^{i theta} kappa'(z) on n tangent lifts (rows of ``vecs``)."""
    _, _, D = _frame(z)
    C = vecs @ D.conj().T  # C[k, i] = <vecs_k, d_i>
    return complex(np.exp(1j * theta) * np.linalg.det(C))


def canon_eval(k: CanonicalFiberData, vecs) -> complex:
    """Evaluate the (n,0)-form e^{i theta} kappa' on n tangent vectors."""
    n = k.base.n
    if len(vecs) != n:
        raise ContractViolationError(f"kappa' takes exactly {n} vectors")
    for v in vecs:
        if v.base is not k.base and not np.array_equal(v.base.z, k.base.z):
            raise ContractViolationError("vector base does not match fiber base")
    V = np.vstack([v.w for v in vecs])
    return kappa_eval_raw(k.base.z, V, k.theta)


# ---------------------------------------------------------------------------
# connection form, sigma, Einstein constant
# ---------------------------------------------------------------------------

def connection_form_raw(z: np.ndarray, u: np.ndarray) -> complex:
    """psi(u) = <nabla_u kappa', kappa'> in the kappa' gauge (purely imaginary).

    Computed from the analytic derivative of the orbit frame:
    psi(u) = -sum_j <dD_j, d_j>.  ``u`` must be a horizontal tangent at z.
    """
    _, _, D, dD = _frame_d(z, u)
    return complex(-np.sum(dD * np.conj(D)))


def connection_form(z: AmbientPoint, u: TangentVec) -> complex:
    _check_same_base(u, TangentVec(z, np.zeros(z.n + 1)))
    return connection_form_raw(z.z, u.w)


def sigma(z: AmbientPoint, a: TorusAlgebraVec) -> complex:
    """sigma_z(a) = psi(X_a): vertical rate of the lifted torus field.

    Purely imaginary; satisfies sigma = i t mu(a) with t the Einstein
    constant.  Raises RegularityError at rank-deficient points.
    """
    if a.a.size != z.n:
        raise ContractViolationError("algebra vector length must equal n")
    return connection_form_raw(z.z, _field_raw(z.z, a.a))


def sigma_transport(z: AmbientPoint, a: TorusAlgebraVec, step: float = 1e-5) -> complex:
    """sigma by finite-difference transport of the frame along the X_a flow.

    Independent route used to validate the analytic ``sigma``: differentiates
    the kappa' frame along exp(s a).z.  The flow curve is not horizontal in
    the sphere (<c', c> = i sum a_j |z_j|^2), so the frame derivative carries
    the vertical correction + i beta per frame row.
    """
    v = np.concatenate(([0.0], a.a))
    zp = np.exp(1j * step * v) * z.z
    zm = np.exp(-1j * step * v) * z.z
    _, _, D0 = _frame(z.z)
    _, _, Dp = _frame(zp)
    _, _, Dm = _frame(zm)
    dD = (Dp - Dm) / (2.0 * step)
    beta = float(np.sum(a.a * np.abs(z.z[1:]) ** 2))
    n = z.n
    return complex(-np.sum(dD * np.conj(D0)) + 1j * beta * n)


_EINSTEIN_CACHE: dict[int, float] = {}


def einstein_constant_estimate(n: int,
                               z: AmbientPoint | None = None,
                               u: TangentVec | None = None,
                               eps: float = 5e-3,
                               npts: int = 10) -> float:
    """Measure t in Ric-form = t omega from the canonical-bundle curvature.

    Integrates the connection form psi around a small coordinate rectangle
    spanned by (u, Ju) and divides by the symplectic area: i dpsi = t omega.
    """
    if z is None:
        base = np.array([1.0 + 0.3j * k for k in range(n + 1)], dtype=complex)
        base += np.linspace(0.2, 0.7, n + 1)
        z = normalize_point(base)
    if u is None:
        w = np.exp(1j * np.linspace(0.0, 1.0, n + 1)) * np.linspace(1.0, 1.5, n + 1)
        w = tangent_project(z.z, w.astype(complex))
        u = TangentVec(z, w / np.linalg.norm(w))
    v = 1j * u.w

    nodes, wts = np.polynomial.legendre.leggauss(npts)
    nodes = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts

    def surf(s, t):
        x = z.z + eps * (s * u.w + t * v)
        return x / np.linalg.norm(x)

    def d_surf(s, t, which):
        x = z.z + eps * (s * u.w + t * v)
        nrm = np.linalg.norm(x)
        d = eps * (u.w if which == 0 else v)
        return d / nrm - x * (np.vdot(x, d).real / nrm**3)

    def psi_along(s, t, which):
        p = surf(s, t)
        tangent = tangent_project(p, d_surf(s, t, which))
        return connection_form_raw(p, tangent)

    loop = 0.0j
    for s, wt in zip(nodes, wts):
        loop += wt * (psi_along(s, 0.0, 0) - psi_along(s, 1.0, 0))
        loop += wt * (psi_along(1.0, s, 1) - psi_along(0.0, s, 1))

    area = 0.0
    for s, ws in zip(nodes, wts):
        for t, wt in zip(nodes, wts):
            p = surf(s, t)
            ds = tangent_project(p, d_surf(s, t, 0))
            dt = tangent_project(p, d_surf(s, t, 1))
            area += ws * wt * _herm(ds, dt).imag

    return float((1j * loop).real / area)


def einstein_constant(n: int) -> float:
    """Einstein constant t with Ric-form = t omega for this normalization.

    Measured once per dimension by the curvature-loop estimate and snapped
    to the nearest integer (the estimate must agree to 1e-3, else the
    convention chain is broken and we refuse to guess).
    """
    if n not in _EINSTEIN_CACHE:
        est = einstein_constant_estimate(n)
        snap = float(round(est))
        if abs(est - snap) > 1e-3:
            raise RegularityError(
                f"Einstein constant estimate {est!r} is not near an integer")
        _EINSTEIN_CACHE[n] = snap
    return _EINSTEIN_CACHE[n]


# ---------------------------------------------------------------------------
# Calabi profile
# ---------------------------------------------------------------------------

def calabi_profile(r2, l: float, n: int, t: float):
    """Profile u(r^2) = (t r^2 + l)^{1/(n+1)} of the Ricci-flat cone metric
    on the canonical bundle, with its derivative.  Requires l > 0, t > 0."""
    if l <= 0.0:
        raise DegenerateInputError("Calabi constant l must be positive")
    if t <= 0.0:
        raise DegenerateInputError("Einstein constant t must be positive")
    r2 = np.asarray(r2, dtype=float)
    if np.any(r2 < 0.0):
        raise DegenerateInputError("r^2 must be nonnegative")
    p = 1.0 / (n + 1)
    base = t * r2 + l
    u = base ** p
    up = t * p * base ** (p - 1.0)
    if u.ndim == 0:
        return float(u), float(up)
    return u, up
