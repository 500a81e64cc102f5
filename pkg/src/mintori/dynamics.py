"""Flow of the characteristic field W: integration, first return, holonomy.

State vector: y = [Re z | Im z | theta | beta] with z the unit representative
on Z, theta the fiber phase, and beta the continuously accumulated R-angle
(beta' = sum_j v_j Im(dz_j / z_j)), so the holonomy winding never has to be
reconstructed mod 2 pi.

The integrator is an embedded Dormand-Prince 5(4) pair with dense output,
per-step projection back to the Z-membership constraint (renormalize, then
one Newton correction along the i X_b directions) and per-step accounting of
the conserved level f = Re h.  First returns are detected on the fiber-phase
monitor theta(t) = theta_0 with a tau-proximity guard selecting the correct
branch of the level loop, then localized by root finding on the dense output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    BracketError,
    ClosureError,
    ContractViolationError,
    DriftBudgetError,
    NoReturnError,
    RefinementError,
    RegularityError,
)
from .fubini import _fields, moment_map_raw
from .reduced import (
    ENDPOINT_MARGIN,
    LevelDatum,
    SPoint,
    classify_level,
    f_plus,
    f_value,
    h0_of_tau,
    h_bare_raw,
    make_spoint,
    r_angle,
    seed_on_level,
    spoint_distance,
    tau_raw,
    w_field_raw,
    wprime_field_raw,
)
from .weights import SubtorusFrame

TWO_PI = 2.0 * math.pi

# Dormand-Prince 5(4) tableau (FSAL), with the quartic dense-output matrix.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
               11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
               -17253 / 339200, 22 / 525, -1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608,
     -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304,
     -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883,
     -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

MAX_STEPS = 10 ** 6


# ---------------------------------------------------------------------------
# state packing
# ---------------------------------------------------------------------------

def _pack(z: np.ndarray, theta: float, beta: float) -> np.ndarray:
    return np.concatenate([z.real, z.imag, [theta, beta]])


def _unpack(y: np.ndarray, n: int):
    z = y[:n + 1] + 1j * y[n + 1:2 * n + 2]
    return z, float(y[2 * n + 2]), float(y[2 * n + 3])


def _rhs_factory(frame: SubtorusFrame, kind: str, sign: float = 1.0):
    n = frame.n
    v = frame.v_arr
    fld = w_field_raw if kind == "w" else wprime_field_raw

    def rhs(y: np.ndarray) -> np.ndarray:
        z, theta, _ = _unpack(y, n)
        dz, dth = fld(z, theta, frame)
        darg = (dz / z).imag
        dbeta = float(v @ (darg[1:] - darg[0]))
        out = np.concatenate([dz.real, dz.imag, [dth, dbeta]])
        return sign * out

    return rhs


def _project(y: np.ndarray, frame: SubtorusFrame) -> np.ndarray:
    """Stabilize the Z-membership invariants: renormalize ||z|| = 1 and apply
    one Newton correction pushing mu(z) back onto span(v)."""
    n = frame.n
    z, theta, beta = _unpack(y, n)
    z = z / np.linalg.norm(z)
    mu = moment_map_raw(z)
    c = frame.basis_arr @ mu
    if np.max(np.abs(c)) > 1e-17:
        Xb = frame.basis_arr @ _fields(z)
        G = (Xb @ Xb.conj().T).real
        lam = np.linalg.solve(G, c)
        z = z + 1j * (lam @ Xb)
        z = z / np.linalg.norm(z)
    return _pack(z, theta, beta)


@dataclass
class _Segment:
    t0: float
    h: float
    y0: np.ndarray
    Q: np.ndarray  # dense-output matrix, (ndim, 4)

    def eval(self, t: float) -> np.ndarray:
        x = (t - self.t0) / self.h
        p = np.array([x, x * x, x ** 3, x ** 4])
        return self.y0 + self.h * (self.Q @ p)


@dataclass
class Trajectory:
    """Adaptively sampled integral curve with per-step drift accounting."""

    frame: SubtorusFrame
    f0: float
    ts: np.ndarray
    zs: np.ndarray
    thetas: np.ndarray
    betas: np.ndarray
    fs: np.ndarray
    max_drift: float
    status: str  # running | returned | endpoint_hit | step_limit | stopped
    n_steps: int
    segments: list[_Segment] = field(default_factory=list, repr=False)

    def eval(self, t: float) -> np.ndarray:
        segs = self.segments
        if not segs:
            raise ContractViolationError("trajectory has no dense output")
        lo, hi = 0, len(segs) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if segs[mid].t0 + segs[mid].h < t:
                lo = mid + 1
            else:
                hi = mid
        return segs[lo].eval(t)

    def state(self, t: float):
        return _unpack(self.eval(t), self.frame.n)

    def spoint(self, t: float, require_regular: bool = True) -> SPoint:
        z, theta, _ = self.state(t)
        return make_spoint(z / np.linalg.norm(z), theta, self.frame,
                           require_regular=require_regular)


@dataclass(frozen=True)
class ReturnRecord:
    """First-return data against the R-orbit of the start point."""

    t_return: float
    xi_angle: float      # in [0, 2 pi)
    xi_unwrapped: float  # continuously accumulated R-rotation
    level: LevelDatum
    f_drift_max: float
    n_steps: int


@dataclass(frozen=True)
class PeriodicOrbit:
    """Closed W-orbit: seed, rational holonomy and the q-fold trajectory."""

    seed: SPoint
    p: int
    q: int
    s_level: float
    xi_angle: float
    t_period: float
    closure_distance: float
    trajectory: Trajectory


# ---------------------------------------------------------------------------
# the core integration loop
# ---------------------------------------------------------------------------

class _Flow:
    """Embedded RK5(4) stepper with projection, drift accounting and dense
    output, driven step by step by the return detectors."""

    def __init__(self, s0: SPoint, tol: float, kind: str = "w",
                 sign: float = 1.0, drift_budget: float = 1e-6,
                 max_steps: int = MAX_STEPS, keep_dense: bool = True):
        if tol <= 0.0:
            raise ContractViolationError("tolerance must be positive")
        self.frame = s0.frame
        self.n = s0.frame.n
        self.rhs = _rhs_factory(s0.frame, kind, sign)
        self.tol = tol
        self.drift_budget = drift_budget
        self.max_steps = max_steps
        self.keep_dense = keep_dense
        self.t = 0.0
        self.y = _pack(s0.z, s0.theta, r_angle(s0.z, s0.frame))
        self.f0 = f_value(s0)
        self.k_last = self.rhs(self.y)
        self.h = self._initial_step()
        self.max_drift = 0.0
        self.n_steps = 0
        self.status = "running"
        self.ts = [0.0]
        self.ys = [self.y.copy()]
        self.fs = [self.f0]
        self.segments: list[_Segment] = []

    def _initial_step(self) -> float:
        scale = np.sqrt(self.tol) + self.tol * np.abs(self.y)
        d1 = np.linalg.norm(self.k_last / scale) / math.sqrt(self.y.size)
        return min(1e-2, 0.01 / max(d1, 1e-8))

    def _attempt(self, h: float):
        K = np.empty((7, self.y.size))
        K[0] = self.k_last
        for i in range(1, 7):
            yi = self.y + h * (_A[i] @ K[:i])
            K[i] = self.rhs(yi)
        y1 = self.y + h * (_B @ K)
        err = h * (_E @ K)
        scale = self.tol + self.tol * np.maximum(np.abs(self.y), np.abs(y1))
        err_norm = np.linalg.norm(err / scale) / math.sqrt(self.y.size)
        return y1, K, err_norm

    def step(self) -> bool:
        """Advance one accepted step; False when the flow has terminated."""
        if self.status != "running":
            return False
        if self.n_steps >= self.max_steps:
            self.status = "step_limit"
            return False
        h = self.h
        for _ in range(60):
            try:
                y1, K, err_norm = self._attempt(h)
            except RegularityError:
                if self._near_endpoint():
                    self.status = "endpoint_hit"
                    return False
                h *= 0.5
                continue
            if err_norm <= 1.0:
                break
            h *= max(0.2, 0.9 * err_norm ** -0.2)
        else:
            raise DriftBudgetError("step size collapsed (stiff region)")

        t_new = self.t + h
        y_proj = _project(y1, self.frame)
        if self.keep_dense:
            Q = K.T @ _P
            self.segments.append(_Segment(t0=self.t, h=h, y0=self.y.copy(), Q=Q))
        self.t = t_new
        self.y = y_proj
        self.k_last = self.rhs(self.y)  # FSAL invalidated by projection
        self.h = h * min(5.0, max(0.2, 0.9 * max(err_norm, 1e-10) ** -0.2))
        self.n_steps += 1

        z, theta, _ = _unpack(self.y, self.n)
        f_now = (np.exp(1j * theta) * h_bare_raw(z, self.frame)).real
        drift = abs(f_now - self.f0)
        self.max_drift = max(self.max_drift, drift)
        if drift > self.drift_budget * (1.0 + abs(self.f0)):
            raise DriftBudgetError(
                f"f drift {drift:.3e} exceeded budget at t={self.t:.6f}")
        self.ts.append(self.t)
        self.ys.append(self.y.copy())
        self.fs.append(f_now)
        if self._near_endpoint():
            self.status = "endpoint_hit"
            return False
        return True

    def _near_endpoint(self) -> bool:
        z, _, _ = _unpack(self.y, self.n)
        t = tau_raw(z, self.frame)
        return min(t - float(self.frame.t1), float(self.frame.t2) - t) \
            < 1.5 * ENDPOINT_MARGIN

    def trajectory(self, status: str | None = None) -> Trajectory:
        ys = np.array(self.ys)
        n = self.n
        zs = ys[:, :n + 1] + 1j * ys[:, n + 1:2 * n + 2]
        return Trajectory(
            frame=self.frame, f0=self.f0, ts=np.array(self.ts), zs=zs,
            thetas=ys[:, 2 * n + 2], betas=ys[:, 2 * n + 3],
            fs=np.array(self.fs), max_drift=self.max_drift,
            status=status or self.status, n_steps=self.n_steps,
            segments=self.segments)


def integrate(s0: SPoint, stop, tol: float = 1e-10,
              drift_budget: float = 1e-6, max_steps: int = MAX_STEPS,
              kind: str = "w", sign: float = 1.0) -> Trajectory:
    """Integrate the W-flow from s0 until the stop condition.

    ``stop`` is a time horizon (float) or a predicate on (t, z, theta, beta).
    Terminates on the stop condition, endpoint approach, or step budget."""
    flow = _Flow(s0, tol, kind=kind, sign=sign, drift_budget=drift_budget,
                 max_steps=max_steps)
    horizon = float(stop) if isinstance(stop, (int, float)) else None
    while flow.step():
        if horizon is not None and flow.t >= horizon:
            flow.status = "stopped"
            break
        if horizon is None:
            z, theta, beta = _unpack(flow.y, flow.n)
            if stop(flow.t, z, theta, beta):
                flow.status = "stopped"
                break
    traj = flow.trajectory()
    if horizon is not None and traj.status == "stopped":
        # land exactly on the horizon via dense output
        y = traj.eval(horizon)
        z, theta, beta = _unpack(y, flow.n)
        traj.ts[-1] = horizon
        traj.zs[-1] = z / np.linalg.norm(z)
        traj.thetas[-1] = theta
        traj.betas[-1] = beta
    return traj


# ---------------------------------------------------------------------------
# first return and holonomy
# ---------------------------------------------------------------------------

def _tau_guard_radius(s0: SPoint) -> float:
    """Half-distance to the other intersection of the level loop with the
    theta = theta_0 line (branch disambiguation radius)."""
    frame = s0.frame
    t0 = tau_raw(s0.z, frame)
    ct = math.cos(s0.theta)
    span = float(frame.t2 - frame.t1)
    if abs(ct) < 1e-6:
        return 0.1 * span
    target = f_value(s0) / ct
    m = 1e-6 * span
    lo_edge = float(frame.t1) + m

    def g(x):
        return h0_of_tau(frame, x) - target

    try:
        if t0 >= 0.0:
            other = brentq(g, lo_edge, min(0.0, t0 - 1e-12), xtol=1e-13)
        else:
            other = brentq(g, max(0.0, t0 + 1e-12), float(frame.t2) - m,
                           xtol=1e-13)
    except ValueError:
        return 0.1 * span
    return 0.45 * abs(t0 - other)


def _run_returns(s0: SPoint, tol: float, n_events: int,
                 kind: str = "w", drift_budget: float = 1e-6,
                 max_steps: int = MAX_STEPS):
    """Drive the flow through ``n_events`` crossings of the start's R-orbit.

    Returns (event_times, flow) with events localized on the dense output."""
    frame = s0.frame
    n = frame.n
    theta0 = s0.theta
    tau0 = tau_raw(s0.z, frame)
    guard = _tau_guard_radius(s0)
    fp = f_plus(frame)
    theta_amp = math.acos(min(1.0, abs(f_value(s0)) / fp))
    arm_eps = max(1e-7, 0.05 * theta_amp)

    flow = _Flow(s0, tol, kind=kind, drift_budget=drift_budget,
                 max_steps=max_steps)
    events: list[float] = []
    armed = False
    g_prev = 0.0
    t_prev = 0.0
    # theta0 in the continuous (unwrapped) coordinate of the state
    th_start = float(flow.y[2 * n + 2])

    while flow.step():
        th = float(flow.y[2 * n + 2])
        g_now = th - th_start - round((th - th_start) / TWO_PI) * TWO_PI
        if not armed:
            if abs(g_now) > arm_eps:
                armed = True
            g_prev, t_prev = g_now, flow.t
            continue
        if g_prev == 0.0 or g_now == 0.0 or (g_prev < 0) != (g_now < 0):
            seg = flow.segments[-1]
            k_branch = round((flow.y[2 * n + 2] - th_start) / TWO_PI)

            def gfun(t):
                y = seg.eval(t)
                return y[2 * n + 2] - th_start - k_branch * TWO_PI

            try:
                t_star = brentq(gfun, t_prev, flow.t, xtol=1e-14, rtol=1e-15)
            except ValueError:
                g_prev, t_prev = g_now, flow.t
                continue
            y_star = seg.eval(t_star)
            z_star, _, _ = _unpack(y_star, n)
            z_star = z_star / np.linalg.norm(z_star)
            if abs(tau_raw(z_star, frame) - tau0) < guard:
                events.append(t_star)
                if len(events) >= n_events:
                    flow.status = "returned"
                    return events, flow
                armed = False
                g_now = 0.0
        g_prev, t_prev = g_now, flow.t

    raise NoReturnError(
        f"no return after {flow.n_steps} steps (status {flow.status}, "
        f"t={flow.t:.3f}, events={len(events)})")


def first_return(s0: SPoint, tol: float = 1e-10,
                 drift_budget: float = 1e-6,
                 max_steps: int = MAX_STEPS,
                 with_trajectory: bool = False):
    """First return of the W-trajectory to the R-orbit of s0.

    The holonomy angle is accumulated continuously (the beta state) and
    reconciled with the exact wrapped angle at the event."""
    events, flow = _run_returns(s0, tol, 1, drift_budget=drift_budget,
                                max_steps=max_steps)
    t_star = events[0]
    traj = flow.trajectory("returned")
    y_star = traj.eval(t_star)
    z_star, _, beta_ode = _unpack(y_star, s0.frame.n)
    z_star = z_star / np.linalg.norm(z_star)
    beta0 = r_angle(s0.z, s0.frame)
    delta_exact = r_angle(z_star, s0.frame) - beta0
    delta_exact -= round(delta_exact / TWO_PI) * TWO_PI
    xi_unwrapped = delta_exact + TWO_PI * round(
        (beta_ode - beta0 - delta_exact) / TWO_PI)
    rec = ReturnRecord(
        t_return=t_star,
        xi_angle=xi_unwrapped % TWO_PI,
        xi_unwrapped=xi_unwrapped,
        level=classify_level(flow.f0, tau_raw(s0.z, s0.frame), s0.frame),
        f_drift_max=flow.max_drift,
        n_steps=flow.n_steps)
    return (rec, traj) if with_trajectory else rec


def xi_crosscheck(s0: SPoint, tol: float = 1e-10,
                  drift_budget: float = 1e-6) -> float:
    """Holonomy by the reparametrized flow W' = A_w^H + b J A_w^H: the
    first-return *time* is the holonomy angle, xi = exp(t(m) w).

    Independent of the Poincare beta-accumulation; requires f(s0) > 0."""
    if f_value(s0) <= 0.0:
        raise ContractViolationError("xi_crosscheck requires f > 0 (S_+)")
    events, _ = _run_returns(s0, tol, 1, kind="wprime",
                             drift_budget=drift_budget)
    return events[0] % TWO_PI


def q_fold_closure(s0: SPoint, q: int, tol: float = 1e-10,
                   drift_budget: float = 1e-6):
    """Integrate through q returns; returns (t_total, closure_dist, traj)."""
    events, flow = _run_returns(s0, tol, q, drift_budget=drift_budget)
    t_total = events[-1]
    traj = flow.trajectory("returned")
    y_end = traj.eval(t_total)
    z_end, th_end, _ = _unpack(y_end, s0.frame.n)
    z_end = z_end / np.linalg.norm(z_end)
    s_end = make_spoint(z_end, th_end, s0.frame)
    return t_total, spoint_distance(s0, s_end), traj


# ---------------------------------------------------------------------------
# scans and the periodic-orbit search
# ---------------------------------------------------------------------------

def scan_one_level(frame: SubtorusFrame, s: float, tol: float):
    """One xi_scan row; exceptions are captured into the error column."""
    try:
        seed = seed_on_level(frame, abs(s), mirrored=(s < 0.0))
        rec = first_return(seed, tol=tol)
        return {"s": s, "xi_angle": rec.xi_angle,
                "xi_unwrapped": rec.xi_unwrapped,
                "t_return": rec.t_return, "f_drift_max": rec.f_drift_max,
                "error": ""}
    except Exception as exc:  # per-level failures recorded, scan continues
        return {"s": s, "xi_angle": math.nan, "xi_unwrapped": math.nan,
                "t_return": math.nan, "f_drift_max": math.nan,
                "error": type(exc).__name__}


def xi_scan(frame: SubtorusFrame, levels, tol: float = 1e-9,
            processes: int | None = None) -> list[dict]:
    """Tabulate (s, xi) over levels in (0, f_plus) (negative s = mirrored
    levels).  Evaluations are independent; order of the output is the order
    of ``levels`` regardless of parallelism."""
    levels = list(levels)
    if processes is None or processes <= 1 or len(levels) <= 1:
        return [scan_one_level(frame, s, tol) for s in levels]
    import multiprocessing as mp
    ctx = mp.get_context("fork")
    with ctx.Pool(processes=min(processes, len(levels))) as pool:
        args = [(frame, s, tol) for s in levels]
        return pool.starmap(scan_one_level, args, chunksize=1)


def find_periodic(frame: SubtorusFrame, p: int, q: int,
                  bracket: tuple[float, float], tol: float = 1e-10,
                  angle_tol: float = 1e-10,
                  closure_tol: float = 1e-6) -> PeriodicOrbit:
    """Level with holonomy xi = 2 pi p/q, located by root finding on the
    unwrapped scan, then verified to close after q returns."""
    if q < 1 or math.gcd(abs(p), q) != 1:
        raise ContractViolationError("(p, q) must be coprime with q >= 1")
    target = TWO_PI * p / q
    cache: dict[float, float] = {}

    def g(s: float) -> float:
        if s not in cache:
            cache[s] = first_return(seed_on_level(frame, s),
                                    tol=tol).xi_unwrapped
        return cache[s] - target

    lo, hi = bracket
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        s_star = lo
    elif ghi == 0.0:
        s_star = hi
    elif glo * ghi > 0.0:
        raise BracketError(
            f"no sign change for 2 pi {p}/{q} on [{lo}, {hi}] "
            f"(xi-target: {glo:.3e}, {ghi:.3e})")
    else:
        s_star = brentq(g, lo, hi, xtol=1e-14, rtol=8.9e-16)
    resid = abs(g(s_star))
    if resid > angle_tol:
        raise RefinementError(
            f"holonomy residual {resid:.3e} exceeds {angle_tol}")
    seed = seed_on_level(frame, s_star)
    t_total, dist, traj = q_fold_closure(seed, q, tol=tol)
    if dist > closure_tol:
        raise ClosureError(
            f"q-fold return distance {dist:.3e} exceeds {closure_tol}")
    return PeriodicOrbit(seed=seed, p=p, q=q, s_level=s_star,
                         xi_angle=(target % TWO_PI), t_period=t_total,
                         closure_distance=dist, trajectory=traj)


def periodic_targets_in_range(xi_lo: float, xi_hi: float, q_max: int = 12):
    """Coprime targets (p, q), q <= q_max, with 2 pi p/q inside the given
    unwrapped-holonomy range, sorted by q then p."""
    lo, hi = min(xi_lo, xi_hi), max(xi_lo, xi_hi)
    out = []
    for q in range(1, q_max + 1):
        p_lo = math.ceil(lo * q / TWO_PI)
        p_hi = math.floor(hi * q / TWO_PI)
        for p in range(p_lo, p_hi + 1):
            if math.gcd(abs(p), q) == 1:
                out.append((p, q))
    out.sort(key=lambda pq: (pq[1], abs(pq[0])))
    return out
