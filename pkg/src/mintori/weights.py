"""Weight-lattice bookkeeping and subtorus admissibility for CP^n.

A primitive integer weight v defines the (n-1)-subtorus T_v with Lie algebra
ker(v).  The admissibility predicate (the line R.v misses every (n-2)-face of
the moment polytope) is decided in exact rational arithmetic on the exact
vertex values mu(fixed point) = (delta_jk - 1/(n+1))/2, so it cannot flip on
roundoff.  ``make_frame`` packages the kernel basis, the dual generator w
with v(w) = 1, and the exact moment-segment endpoints t1 < 0 < t2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    AdmissibilityError,
    ContractViolationError,
    DegenerateInputError,
    WitnessNotFoundError,
)
from .fubini import AmbientPoint, TorusAlgebraVec, normalize_point


# ---------------------------------------------------------------------------
# exact linear algebra helpers
# ---------------------------------------------------------------------------

def _rref_solve(A: list[list[Fraction]], b: list[Fraction]):
    """Exact solve of A x = b over Q.

    Returns (particular, nullspace_basis) or None if inconsistent.
    """
    rows, cols = len(A), len(A[0])
    M = [list(A[r]) + [b[r]] for r in range(rows)]
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        pr = next((i for i in range(r, rows) if M[i][c] != 0), None)
        if pr is None:
            continue
        M[r], M[pr] = M[pr], M[r]
        pv = M[r][c]
        M[r] = [x / pv for x in M[r]]
        for i in range(rows):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [x - f * y for x, y in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    for i in range(r, rows):
        if M[i][cols] != 0:
            return None
    particular = [Fraction(0)] * cols
    for i, c in enumerate(pivots):
        particular[c] = M[i][cols]
    free = [c for c in range(cols) if c not in pivots]
    null = []
    for fc in free:
        vec = [Fraction(0)] * cols
        vec[fc] = Fraction(1)
        for i, c in enumerate(pivots):
            vec[c] = -M[i][fc]
        null.append(vec)
    return particular, null


def _det_fraction(M: list[list[Fraction]]) -> Fraction:
    n = len(M)
    M = [row[:] for row in M]
    det = Fraction(1)
    for c in range(n):
        pr = next((i for i in range(c, n) if M[i][c] != 0), None)
        if pr is None:
            return Fraction(0)
        if pr != c:
            M[c], M[pr] = M[pr], M[c]
            det = -det
        det *= M[c][c]
        inv = M[c][c]
        for i in range(c + 1, n):
            if M[i][c] != 0:
                f = M[i][c] / inv
                M[i] = [x - f * y for x, y in zip(M[i], M[c])]
    return det


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightVector:
    """Primitive nonzero integer weight in the lattice of T^n-characters."""

    v: tuple[int, ...]

    def __post_init__(self):
        v = tuple(int(x) for x in self.v)
        if len(v) < 2 or all(x == 0 for x in v):
            raise DegenerateInputError("weight must be a nonzero vector, n >= 2")
        if math.gcd(*[abs(x) for x in v]) != 1:
            raise DegenerateInputError("weight must be primitive (gcd 1)")
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return len(self.v)


@dataclass(frozen=True)
class MomentPolytope:
    """Simplex of canonical moment values of CP^n, with exact vertices."""

    n: int
    vertices: tuple[tuple[Fraction, ...], ...]

    def faces(self, dim: int):
        """Faces of dimension ``dim`` as tuples of vertex indices."""
        if dim < 0 or dim >= self.n:
            return []
        return list(itertools.combinations(range(self.n + 1), dim + 1))

    def vertex_array(self) -> np.ndarray:
        return np.array([[float(x) for x in vtx] for vtx in self.vertices])


@dataclass(frozen=True)
class SubtorusFrame:
    """Subtorus data: kernel basis, dual generator w, moment segment.

    basis rows span ker(v) over Z with det[basis; w] > 0 (this orients the
    contraction frame so h = rho'(A_w) is positive along kappa'); w is the
    minimal-norm rational solution of v(w) = 1; [t1, t2] is the exact range
    of s with s.v in the moment polytope.
    """

    v: tuple[int, ...]
    basis: tuple[tuple[int, ...], ...]
    w: tuple[Fraction, ...]
    t1: Fraction
    t2: Fraction

    @property
    def n(self) -> int:
        return len(self.v)

    @property
    def v_arr(self) -> np.ndarray:
        return np.array(self.v, dtype=float)

    @property
    def basis_arr(self) -> np.ndarray:
        return np.array(self.basis, dtype=float)

    @property
    def w_arr(self) -> np.ndarray:
        return np.array([float(x) for x in self.w])

    @property
    def sweep_generator(self) -> np.ndarray:
        """Primitive T''-lattice generator of the chosen sweep circle."""
        return np.array(self.basis[0], dtype=float)

    def z_of_tau(self, tau: float) -> np.ndarray:
        """Real unit representative on Z with mu = tau.v (interior tau)."""
        n = self.n
        zz = 2.0 * tau * self.v_arr + 1.0 / (n + 1)
        z0 = 1.0 - float(np.sum(zz))
        if z0 < -1e-15 or np.any(zz < -1e-15):
            raise ContractViolationError(f"tau={tau} outside [t1, t2]")
        return np.concatenate(([math.sqrt(max(z0, 0.0))],
                               np.sqrt(np.clip(zz, 0.0, None))))

    def killing_len2(self, a: np.ndarray, tau) -> np.ndarray:
        """|X_a|^2 on the tau-level torus orbit (closed form, T-invariant)."""
        tau = np.asarray(tau, dtype=float)
        zz = 2.0 * np.multiply.outer(tau, self.v_arr) + 1.0 / (self.n + 1)
        lin = zz @ (np.asarray(a, float) ** 2)
        quad = zz @ np.asarray(a, float)
        return lin - quad ** 2


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def build_polytope(n: int) -> MomentPolytope:
    """Moment polytope of CP^n: vertices are mu at the coordinate fixed
    points [0:..:1:..:0]; a simplex with 0 in its interior."""
    if n < 2:
        raise DegenerateInputError("need n >= 2")
    c = Fraction(1, 2 * (n + 1))
    verts = []
    for k in range(n + 1):
        row = [Fraction(1, 2) - c if j == k else -c for j in range(1, n + 1)]
        verts.append(tuple(row))
    return MomentPolytope(n=n, vertices=tuple(verts))


def _face_hits_line(P: MomentPolytope, face: tuple[int, ...],
                    v: tuple[int, ...]) -> bool:
    """Exact test: does the line R.v meet conv(vertices[face])?"""
    k = len(face)
    n = P.n
    # unknowns: lambda_1..lambda_k, s ; equations: sum lam V = s v, sum lam = 1
    A = []
    for j in range(n):
        A.append([P.vertices[i][j] for i in face] + [Fraction(-v[j])])
    A.append([Fraction(1)] * k + [Fraction(0)])
    b = [Fraction(0)] * n + [Fraction(1)]
    sol = _rref_solve(A, b)
    if sol is None:
        return False
    part, null = sol
    if not null:
        return all(part[i] >= 0 for i in range(k))
    if len(null) > 1:
        raise AdmissibilityError("degenerate face/line configuration")
    # 1-parameter family: lambda_i(t) = part_i + t null_i >= 0 feasibility
    lo, hi = None, None
    for i in range(k):
        p, q = part[i], null[0][i]
        if q == 0:
            if p < 0:
                return False
        elif q > 0:
            t = -p / q
            lo = t if lo is None else max(lo, t)
        else:
            t = -p / q
            hi = t if hi is None else min(hi, t)
    return lo is None or hi is None or lo <= hi


def admissible(v: WeightVector, P: MomentPolytope) -> bool:
    """True iff the line R.v misses every (n-2)-face of the polytope."""
    if v.n != P.n:
        raise ContractViolationError("weight dimension does not match polytope")
    return not any(_face_hits_line(P, f, v.v) for f in P.faces(P.n - 2))


def _kernel_basis(v: tuple[int, ...]) -> list[list[int]]:
    """Lattice basis of ker(v) in Z^n via unimodular column reduction."""
    n = len(v)
    W = [[1 if i == j else 0 for j in range(n)] for i in range(n)]
    r = list(v)

    def colop(j, i, q):  # col_j -= q * col_i
        r[j] -= q * r[i]
        for row in W:
            row[j] -= q * row[i]

    while sum(1 for x in r if x != 0) > 1:
        nz = [j for j in range(n) if r[j] != 0]
        i = min(nz, key=lambda j: (abs(r[j]), j))
        for j in nz:
            if j != i:
                colop(j, i, r[j] // r[i])
    k = next(j for j in range(n) if r[j] != 0)
    if r[k] < 0:
        for row in W:
            row[k] = -row[k]
        r[k] = -r[k]
    assert r[k] == 1, "weight was not primitive"
    cols = [[W[i][j] for i in range(n)] for j in range(n) if j != k]
    # deterministic presentation: first nonzero entry positive, sorted rows
    out = []
    for b in cols:
        first = next(x for x in b if x != 0)
        out.append([-x for x in b] if first < 0 else b)
    out.sort()
    return out


def make_frame(v: WeightVector, P: MomentPolytope) -> SubtorusFrame:
    """Subtorus frame for an admissible weight.

    basis: integer lattice basis of ker(v), sign-fixed so det[basis; w] > 0;
    w = v/|v|^2 (minimal-norm rational with v(w) = 1); t1, t2 from the exact
    barycentric parametrization of the segment {s : s.v in P}.
    """
    if not admissible(v, P):
        raise AdmissibilityError(f"weight {v.v} is inadmissible for CP^{P.n}")
    n = P.n
    basis = _kernel_basis(v.v)
    vv = sum(x * x for x in v.v)
    w = tuple(Fraction(x, vv) for x in v.v)
    M = [[Fraction(b) for b in row] for row in basis] + [list(w)]
    if _det_fraction(M) < 0:
        basis[0] = [-x for x in basis[0]]
    # barycentric: lam(s) = lam0 + s * dlam with sum lam = 1, sum lam V = s v
    A = [[P.vertices[kk][j] for kk in range(n + 1)] for j in range(n)]
    A.append([Fraction(1)] * (n + 1))
    lam0, null0 = _rref_solve(A, [Fraction(0)] * n + [Fraction(1)])
    assert not null0, "simplex vertices must be affinely independent"
    dlam, null1 = _rref_solve(A, [Fraction(x) for x in v.v] + [Fraction(0)])
    assert not null1
    t1, t2 = None, None
    for k in range(n + 1):
        if dlam[k] > 0:
            t = -lam0[k] / dlam[k]
            t1 = t if t1 is None else max(t1, t)
        elif dlam[k] < 0:
            t = -lam0[k] / dlam[k]
            t2 = t if t2 is None else min(t2, t)
    assert t1 is not None and t2 is not None and t1 < 0 < t2
    return SubtorusFrame(v=v.v, basis=tuple(tuple(b) for b in basis),
                         w=w, t1=t1, t2=t2)


def killing_witness(frame: SubtorusFrame,
                    rel_tol: float = 1e-3,
                    ngrid: int = 129,
                    coeff_bound: int = 2):
    """Search ker(v) for a Killing field of non-constant length along Z.

    Returns (a, p_min, p_max): the algebra vector and two Z-points where
    |X_a|^2 differs by at least ``rel_tol`` relative.  Raises
    WitnessNotFoundError when the whole search window is flat (this genuinely
    happens, e.g. v = (1,-1) on CP^2, where |X_a|^2 is exactly constant)."""
    n = frame.n
    margin = 1e-6 * float(frame.t2 - frame.t1)
    taus = np.linspace(float(frame.t1) + margin, float(frame.t2) - margin, ngrid)
    combos = []
    for coeffs in itertools.product(range(-coeff_bound, coeff_bound + 1),
                                    repeat=n - 1):
        if all(c == 0 for c in coeffs):
            continue
        a = np.asarray(coeffs, float) @ frame.basis_arr
        ai = [int(round(x)) for x in a]
        g = math.gcd(*[abs(x) for x in ai]) or 1
        ai = tuple(x // g for x in ai)
        first = next((x for x in ai if x != 0), 1)
        if first < 0:
            ai = tuple(-x for x in ai)
        if ai not in [c[0] for c in combos]:
            combos.append((ai, np.array(ai, float)))
    combos.sort(key=lambda c: (float(np.linalg.norm(c[1])), c[0]))
    for ai, a in combos:
        lens = frame.killing_len2(a, taus)
        spread = float(lens.max() - lens.min())
        if spread >= rel_tol * max(lens.max(), 1e-30):
            i_lo, i_hi = int(np.argmin(lens)), int(np.argmax(lens))
            p_lo = normalize_point(frame.z_of_tau(taus[i_lo]))
            p_hi = normalize_point(frame.z_of_tau(taus[i_hi]))
            return TorusAlgebraVec(a), p_lo, p_hi
    raise WitnessNotFoundError(
        f"no non-constant Killing length in ker{frame.v} "
        f"(searched {len(combos)} directions, {ngrid} levels)")
