"""Model of the reduced 3-space S = X/T'' over the zero set Z.

A point of S is (z, theta): a gauge-normalized representative z on
Z = {mu(z) in span(v)} together with the phase theta of the unit
canonical-bundle element relative to the T-invariant reference form kappa'.

The level function is h = e^{i theta} kappa'(X_{b_1}, .., X_{b_{n-1}}, X_w)
and f = Re h; h factorizes as e^{i theta} h0(tau) with h0 real positive on
the interior (t1, t2).  The characteristic field W is the horizontal
(H'-valued) velocity with rho'(W) = 1, plus the theta-rate induced by
parallel transport of kappa' (the connection form psi).
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    ContractViolationError,
    MembershipError,
    RegularityError,
    SingularFieldError,
)
from .fubini import (
    AmbientPoint,
    TangentVec,
    _fields,
    _frame,
    _frame_d_given,
    connection_form_raw,
    fs_distance,
    moment_map_raw,
    normalize_point,
    tangent_project,
)
from .weights import SubtorusFrame

Z_MEMBERSHIP_TOL = 1e-9
ENDPOINT_MARGIN = 1e-4  # refuse w_field closer than this to tau = t_i
_RANK_TOL = 1e-12

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SPoint:
    """Point of S: gauge-normalized representative on Z plus fiber phase."""

    z: np.ndarray
    theta: float
    frame: SubtorusFrame
    regular: bool = True

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=complex)
        z.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    @property
    def ambient(self) -> AmbientPoint:
        return AmbientPoint(z=self.z, n=self.z.size - 1)


@dataclass(frozen=True, eq=False)
class SVelocity:
    """Velocity on S in the (z, theta) model.

    ``dz`` is a horizontal-gauge tangent lift at the representative;
    ``horizontal`` marks membership in H' (g-orthogonal to the T''-orbit
    and its J-rotation, with the connection-induced theta rate)."""

    dz: TangentVec
    dtheta: float
    horizontal: bool = False


@dataclass(frozen=True)
class LevelDatum:
    """Level-set classification of an S-point."""

    s: float
    tau: float
    kind: str  # interior | L_plus | L_minus | K1 | K2


# ---------------------------------------------------------------------------
# membership, gauge and construction
# ---------------------------------------------------------------------------

def z_residual(z: np.ndarray, frame: SubtorusFrame) -> float:
    """Distance of mu(z) from span(v) (the Z-membership defect)."""
    mu = moment_map_raw(z)
    v = frame.v_arr
    return float(np.linalg.norm(mu - (mu @ v) / (v @ v) * v))


def tau_raw(z: np.ndarray, frame: SubtorusFrame) -> float:
    return float(moment_map_raw(z) @ frame.w_arr)


def subtorus_rank_ok(z: np.ndarray, frame: SubtorusFrame) -> bool:
    """True iff the T''-fields have full rank n-1 at z."""
    X = frame.basis_arr @ _fields(z)
    G = (X @ X.conj().T).real
    ev = np.linalg.eigvalsh(G)
    return bool(ev[0] > _RANK_TOL * max(1.0, ev[-1]))


def gauge_normalize(z: np.ndarray, frame: SubtorusFrame) -> np.ndarray:
    """Deterministic T''-gauge plus projective phase gauge.

    Rotates by exp(a), a in ker(v), so that the n-1 best-conditioned
    coordinates become real positive, then fixes the global phase on the
    first coordinate of modulus > 1e-12.  Near a slice degeneracy the next
    coordinate subset is used; at endpoint fibers (rank drop) the
    least-squares phase fix is applied instead.
    """
    n = frame.n
    z = np.asarray(z, dtype=complex).copy()
    k = int(np.flatnonzero(np.abs(z) > 1e-12)[0])  # phase anchor
    rel = np.angle(z[1:]) - np.angle(z[k])  # projectively invariant
    mods = np.abs(z[1:])
    B = frame.basis_arr  # (n-1, n)
    candidates = [j for j in range(n) if j != k - 1]
    order = sorted(itertools.combinations(candidates, n - 1),
                   key=lambda J: -min(mods[list(J)])) if len(candidates) >= n - 1 \
        else []
    applied = False
    for J in order:
        M = B[:, list(J)].T  # (n-1, n-1)
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        alpha = np.linalg.solve(M, -rel[list(J)])
        if k >= 1 and abs((B.T @ alpha)[k - 1]) > 1e-12:
            continue  # must not rotate the anchor
        z[1:] *= np.exp(1j * (B.T @ alpha))
        applied = True
        break
    if not applied:
        alpha, *_ = np.linalg.lstsq(B.T, -rel, rcond=None)
        z[1:] *= np.exp(1j * (B.T @ alpha))
    z *= np.abs(z[k]) / z[k]
    z[k] = abs(z[k])
    return z


def make_spoint(z, theta: float, frame: SubtorusFrame,
                require_regular: bool = True) -> SPoint:
    """Validated, gauge-normalized S-point.

    Raises MembershipError off Z and RegularityError on endpoint fibers
    when ``require_regular`` (pass False to represent K_i points)."""
    z = z.z if isinstance(z, AmbientPoint) else np.asarray(z, dtype=complex)
    if abs(np.linalg.norm(z) - 1.0) > 1e-12:
        raise MembershipError("representative is not unit norm")
    res = z_residual(z, frame)
    if res > Z_MEMBERSHIP_TOL:
        raise MembershipError(f"mu(z) is off span(v) by {res:.3e}")
    regular = subtorus_rank_ok(z, frame)
    if require_regular and not regular:
        raise RegularityError("point lies on an endpoint fiber K_i")
    return SPoint(z=gauge_normalize(z, frame), theta=theta, frame=frame,
                  regular=regular)


def tau(s: SPoint) -> float:
    """tau = mu(w), the moment coordinate along the segment [t1, t2]."""
    return tau_raw(s.z, s.frame)


def circle_act(s: SPoint, alpha: float) -> SPoint:
    """Fiber-phase rotation by alpha (the S^1-action on S)."""
    return SPoint(z=s.z, theta=s.theta + alpha, frame=s.frame,
                  regular=s.regular)


def minus_act(s: SPoint) -> SPoint:
    """The -1 in S^1: reverses W-trajectories and mirrors f to -f."""
    return circle_act(s, math.pi)


def r_act(s: SPoint, beta: float) -> SPoint:
    """Residual circle R = T/T'' action exp(beta w); theta is unchanged
    because kappa' is T-invariant."""
    shift = np.concatenate(([0.0], beta * s.frame.w_arr))
    return make_spoint(np.exp(1j * shift) * s.z, s.theta, s.frame,
                       require_regular=False)


def subtorus_act(s: SPoint, angles) -> SPoint:
    """T''-action exp(sum angles_i b_i); a gauge no-op on S."""
    a = np.asarray(angles, float) @ s.frame.basis_arr
    shift = np.concatenate(([0.0], a))
    return make_spoint(np.exp(1j * shift) * s.z, s.theta, s.frame,
                       require_regular=False)


def r_angle(z: np.ndarray, frame: SubtorusFrame) -> float:
    """R-coordinate beta = sum_j v_j (arg z_j - arg z_0): projective-gauge
    and T''-invariant, shifts by beta under exp(beta w).  Well defined mod
    2 pi on the interior (where no coordinate vanishes)."""
    ang = np.angle(z)
    return float(frame.v_arr @ (ang[1:] - ang[0]))


def spoint_distance(s1: SPoint, s2: SPoint) -> float:
    """Distance on S: base distance plus wrapped fiber-phase distance."""
    d_base = fs_distance(s1.ambient, s2.ambient)
    d_th = abs((s1.theta - s2.theta + math.pi) % TWO_PI - math.pi)
    return math.hypot(d_base, d_th)


# ---------------------------------------------------------------------------
# h, f and the fields
# ---------------------------------------------------------------------------

def _contract_rows(frame: SubtorusFrame, X: np.ndarray) -> np.ndarray:
    """Rows (X_{b_1}, .., X_{b_{n-1}}, X_w) from the coordinate fields."""
    return np.vstack([frame.basis_arr @ X, frame.w_arr @ X])


def _hprime_vector(z: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    """Unit vector spanning the complex line H' (Hermitian-orthogonal to z
    and to the T''-fields)."""
    if z.size == 3:
        u = np.conj(np.cross(z, Xb[0]))
    else:
        rows = np.vstack([np.conj(z)[None, :], np.conj(Xb)])
        _, sv, vh = np.linalg.svd(rows)
        if sv[-1] > 1e-8 and sv.size == vh.shape[0]:
            raise RegularityError("H' is not one-dimensional here")
        u = np.conj(vh[-1])
    nrm = np.linalg.norm(u)
    if nrm < 1e-13:
        raise RegularityError("H' basis vector degenerated")
    return u / nrm


def h_value(s: SPoint) -> complex:
    """h = rho'(A_w) at (z, theta): the (n,0)-form e^{i theta} kappa'
    contracted with (X_{b_1}, .., X_{b_{n-1}}, X_w)."""
    X, _, D = _frame(s.z)
    rows = _contract_rows(s.frame, X)
    C = rows @ D.conj().T
    return complex(np.exp(1j * s.theta) * np.linalg.det(C))


def f_value(s: SPoint) -> float:
    """Conserved level function f = Re h."""
    return h_value(s).real


def h_bare_raw(z: np.ndarray, frame: SubtorusFrame) -> complex:
    """h at theta = 0 for a raw representative (T-invariant)."""
    X, _, D = _frame(z)
    rows = _contract_rows(frame, X)
    return complex(np.linalg.det(rows @ D.conj().T))


def h0_of_tau(frame: SubtorusFrame, t: float) -> float:
    """Profile h0(tau): h at theta = 0 on the tau-level (real positive)."""
    return h_bare_raw(frame.z_of_tau(t), frame).real


def h0_profile(frame: SubtorusFrame, tau_grid,
               check_invariance: bool = True) -> np.ndarray:
    """Tabulate (tau, h0) over a grid inside (t1, t2).

    With ``check_invariance`` each level is evaluated on a second, torus-
    rotated representative and the two values must agree to 1e-9."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    t1f, t2f = float(frame.t1), float(frame.t2)
    if np.any(tau_grid <= t1f) or np.any(tau_grid >= t2f):
        raise ContractViolationError("grid must lie inside (t1, t2)")
    out = np.empty((tau_grid.size, 2))
    shift = np.concatenate(([0.0], 0.8 * frame.w_arr + 0.37 * frame.basis_arr[0]))
    for i, t in enumerate(tau_grid):
        z = frame.z_of_tau(t)
        h = h_bare_raw(z, frame)
        if check_invariance:
            h2 = h_bare_raw(np.exp(1j * shift) * z, frame)
            if abs(h - h2) > 1e-9:
                raise ContractViolationError(
                    f"h0 is not R-invariant at tau={t}: {abs(h - h2):.3e}")
        out[i] = (t, h.real)
    return out


@functools.lru_cache(maxsize=32)
def f_plus(frame: SubtorusFrame) -> float:
    """Maximum of f (attained on L_+): direct maximization of h0."""
    t1f, t2f = float(frame.t1), float(frame.t2)
    m = 1e-6 * (t2f - t1f)
    res = minimize_scalar(lambda t: -h0_of_tau(frame, t),
                          bounds=(t1f + m, t2f - m), method="bounded",
                          options={"xatol": 1e-13})
    return float(-res.fun)


def classify_level(s_val: float, tau_val: float, frame: SubtorusFrame,
                   tol: float = 1e-8) -> LevelDatum:
    fp = f_plus(frame)
    if abs(s_val - fp) < tol:
        kind = "L_plus"
    elif abs(s_val + fp) < tol:
        kind = "L_minus"
    elif abs(tau_val - float(frame.t1)) < tol and abs(s_val) < tol:
        kind = "K1"
    elif abs(tau_val - float(frame.t2)) < tol and abs(s_val) < tol:
        kind = "K2"
    else:
        kind = "interior"
    return LevelDatum(s=s_val, tau=tau_val, kind=kind)


# ---------------------------------------------------------------------------
# the characteristic field W and the R-generator A_w
# ---------------------------------------------------------------------------

def _endpoint_guard(z: np.ndarray, frame: SubtorusFrame):
    t = tau_raw(z, frame)
    if min(t - float(frame.t1), float(frame.t2) - t) < ENDPOINT_MARGIN:
        raise RegularityError(
            f"tau={t:.6f} is endpoint-adjacent (margin {ENDPOINT_MARGIN})")


def w_field_raw(z: np.ndarray, theta: float, frame: SubtorusFrame):
    """(dz, dtheta) of the characteristic field W at a raw representative.

    dz spans H' with rho'(W) = 1; dtheta is the parallel-transport rate
    -Im psi(dz).  Raises RegularityError endpoint-adjacent and
    SingularFieldError if rho' vanishes on H' (a model violation)."""
    _endpoint_guard(z, frame)
    X, L, D = _frame(z)
    Xb = frame.basis_arr @ X
    u0 = _hprime_vector(z, Xb)
    rows = np.vstack([Xb, u0])
    c = np.exp(1j * theta) * np.linalg.det(rows @ D.conj().T)
    if abs(c) < 1e-13:
        raise SingularFieldError("rho' vanishes on H' (model violation)")
    dz = u0 / c
    dD = _frame_d_given(z, dz, X, L, D)
    psi = -np.sum(dD * np.conj(D))
    return dz, float(-psi.imag)


def w_field(s: SPoint) -> SVelocity:
    """Characteristic field W: Im rho'(W) = 0, Re rho'(W) = 1, W in H'."""
    dz, dth = w_field_raw(s.z, s.theta, s.frame)
    return SVelocity(dz=TangentVec(s.ambient, dz), dtheta=dth, horizontal=True)


def aw_field_raw(z: np.ndarray, frame: SubtorusFrame) -> np.ndarray:
    """H'-component of the R-generator X_w at z (the gauge-slice dz of A_w)."""
    X = _fields(z)
    Xb = frame.basis_arr @ X
    Xw = frame.w_arr @ X
    u0 = _hprime_vector(z, Xb)
    return u0 * np.vdot(u0, Xw)


def aw_field(s: SPoint) -> SVelocity:
    """Generator of the residual R = T/T'' action in the (z, theta) model:
    dz = X_w projected to the gauge slice, dtheta = 0."""
    return SVelocity(dz=TangentVec(s.ambient, aw_field_raw(s.z, s.frame)),
                     dtheta=0.0, horizontal=False)


def wprime_field_raw(z: np.ndarray, theta: float, frame: SubtorusFrame):
    """(dz, dtheta) of W' = A_w^H + b J A_w^H with b solved pointwise so
    that W' is positively proportional to W (the reparametrized flow whose
    return time reads off the holonomy).  Raises ContractViolationError
    where f = 0 (h purely imaginary)."""
    _endpoint_guard(z, frame)
    X, L, D = _frame(z)
    Xb = frame.basis_arr @ X
    Xw = frame.w_arr @ X
    u0 = _hprime_vector(z, Xb)
    awh = u0 * np.vdot(u0, Xw)
    rows = np.vstack([Xb, Xw])
    h = np.exp(1j * theta) * np.linalg.det(rows @ D.conj().T)
    if abs(h.real) < 1e-12:
        raise ContractViolationError("f = 0: W' is undefined (h imaginary)")
    b = -h.imag / h.real
    dz = (1.0 + 1j * b) * awh
    dD = _frame_d_given(z, dz, X, L, D)
    psi = -np.sum(dD * np.conj(D))
    return dz, float(-psi.imag)


# ---------------------------------------------------------------------------
# level seeding
# ---------------------------------------------------------------------------

def seed_on_level(frame: SubtorusFrame, s: float,
                  mirrored: bool = False) -> SPoint:
    """S-point with f = s, seeded at theta = 0 on the tau > 0 root of
    h0(tau) = s (the deterministic 'theta = 0 side' seed).  For
    ``mirrored`` the -1-image (theta = pi, f = -s) is returned."""
    fp = f_plus(frame)
    if not (0.0 < s < fp):
        raise ContractViolationError(f"level s={s} outside (0, f_plus={fp})")
    t2f = float(frame.t2)
    m = 1e-6 * (t2f - float(frame.t1))
    lo, hi = 0.0, t2f - m
    flo = h0_of_tau(frame, lo) - s
    fhi = h0_of_tau(frame, hi) - s
    if flo <= 0.0:
        # the profile maximum sits off tau = 0 only by roundoff
        lo = -m
        flo = h0_of_tau(frame, lo) - s
    if flo * fhi > 0.0:
        raise ContractViolationError(f"cannot bracket h0 = {s}")
    t = brentq(lambda x: h0_of_tau(frame, x) - s, lo, hi, xtol=1e-14)
    sp = make_spoint(frame.z_of_tau(t), 0.0, frame)
    return minus_act(sp) if mirrored else sp
