"""Immersed-torus reconstruction in CP^2 and numerical certification.

A TorusMesh is a doubly periodic (M x K) grid of unit representatives:
rows sample the closed W-trajectory's base curve, columns sweep it by the
T''-generator circle.  Certification works on phase-aligned local patches
(the discrete horizontal gauge): the Lagrangian defect is the normalized
symplectic pairing of discrete tangents, the mean-curvature defect is the
norm of the discrete second-fundamental-form trace, both measured in the
quotient geometry (complex z-span and tangential directions projected out).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ClosureError,
    ContractViolationError,
    DegenerateInputError,
    DegenerateMeshError,
    ResolutionError,
)
from .dynamics import PeriodicOrbit
from .fubini import _fields
from .weights import SubtorusFrame, WeightVector, build_polytope, make_frame

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# mesh type and construction
# ---------------------------------------------------------------------------

@dataclass
class TorusMesh:
    """Doubly periodic sample grid of an immersed torus in CP^n."""

    grid: np.ndarray  # (M, K, n+1) complex unit rows
    frame: SubtorusFrame | None = None
    q: int = 0
    p: int = 0
    t_period: float = 0.0
    s_level: float = float("nan")
    row_periodic: bool = True
    col_periodic: bool = True
    wrap_defect: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.grid.shape[:2]

    @property
    def n(self) -> int:
        return self.grid.shape[2] - 1

    def subsample(self, step: int = 2) -> "TorusMesh":
        """Coarsened mesh (every ``step``-th row/column), for decay checks."""
        if not (self.row_periodic and self.col_periodic):
            raise ContractViolationError("subsampling expects a periodic mesh")
        return TorusMesh(grid=self.grid[::step, ::step].copy(),
                         frame=self.frame, q=self.q, p=self.p,
                         t_period=self.t_period, s_level=self.s_level,
                         wrap_defect=self.wrap_defect, meta=dict(self.meta))


def _immersion_condition(mesh: TorusMesh) -> float:
    Z = mesh.grid
    Tu, Tv = _tangents_order2(Z)
    A = np.stack([_as_real(Tu), _as_real(Tv)], axis=-1)
    s = np.linalg.svd(A, compute_uv=False)
    smin = s[..., -1]
    smax = s[..., 0]
    if np.any(smin <= 0.0):
        return float("inf")
    return float(np.max(smax / smin))


def _check_mesh(mesh: TorusMesh, cond_bound: float = 1e6):
    cond = _immersion_condition(mesh)
    if not np.isfinite(cond) or cond > cond_bound:
        raise DegenerateMeshError(
            f"discrete tangents are degenerate (condition {cond:.3e})")
    return cond


def reconstruct(orbit: PeriodicOrbit, frame: SubtorusFrame,
                M: int = 256, K: int = 256,
                closure_tol: float = 1e-6) -> TorusMesh:
    """Sweep the closed base curve by the T''-generator circle.

    grid[i, j] = exp(2 pi j/K . g) . z(t_i) with a linear T''-untwist so
    that row M wraps to row 0 exactly; the swept surface is unchanged
    (only the fiber parametrization is sheared)."""
    if M < 16 or K < 16:
        raise ContractViolationError("mesh must be at least 16 x 16")
    if orbit.closure_distance > closure_tol:
        raise ClosureError(
            f"orbit closure {orbit.closure_distance:.3e} exceeds {closure_tol}")
    traj = orbit.trajectory
    n = frame.n
    T = orbit.t_period
    ts = np.arange(M) * (T / M)
    zs = np.empty((M, n + 1), dtype=complex)
    for i, t in enumerate(ts):
        y = traj.eval(t)
        z = y[:n + 1] + 1j * y[n + 1:2 * n + 2]
        zs[i] = z / np.linalg.norm(z)
    # T''-untwist: z(T) = e^{i phi} exp(sum alpha_i b_i) z(0)
    yT = traj.eval(T)
    zT = yT[:n + 1] + 1j * yT[n + 1:2 * n + 2]
    zT /= np.linalg.norm(zT)
    rel = np.angle(zT[1:] / zs[0][1:]) - np.angle(zT[0] / zs[0][0])
    B = frame.basis_arr.T  # (n, n-1)
    best = None
    for wrap in np.ndindex(*([3] * n)):
        target = rel + TWO_PI * (np.array(wrap) - 1)
        alpha, res, *_ = np.linalg.lstsq(B, target, rcond=None)
        resid = np.linalg.norm(B @ alpha - target)
        if best is None or resid < best[0]:
            best = (resid, alpha)
    resid, alpha = best
    if resid > 1e-5:
        raise ClosureError(f"untwist residual {resid:.3e}: orbit not closed")
    g = frame.sweep_generator
    grid = np.empty((M, K, n + 1), dtype=complex)
    col_angles = TWO_PI * np.arange(K) / K
    for i in range(M):
        tw = -(ts[i] / T) * (B @ alpha)
        ph = np.exp(1j * (np.outer(col_angles, g) + tw))
        grid[i, :, 0] = zs[i][0]
        grid[i, :, 1:] = zs[i][1:] * ph
    mesh = TorusMesh(grid=grid, frame=frame, q=orbit.q, p=orbit.p,
                     t_period=T, s_level=orbit.s_level,
                     wrap_defect=float(resid),
                     meta={"closure_distance": orbit.closure_distance})
    _check_mesh(mesh)
    return mesh


def clifford(n: int = 2, M: int = 256, K: int = 256) -> TorusMesh:
    """The Clifford torus mu^{-1}(0): T^2-orbit of (1,1,1)/sqrt(3)."""
    if n != 2:
        raise ContractViolationError(
            "mesh operations are implemented for CP^2 (n = 2)")
    al = TWO_PI * np.arange(M) / M
    be = TWO_PI * np.arange(K) / K
    grid = np.empty((M, K, 3), dtype=complex)
    grid[:, :, 0] = 1.0
    grid[:, :, 1] = np.exp(1j * al)[:, None]
    grid[:, :, 2] = np.exp(1j * be)[None, :]
    grid /= math.sqrt(3.0)
    return TorusMesh(grid=grid, q=1, p=0, t_period=TWO_PI, s_level=0.0)


def real_locus_band(M: int = 96, K: int = 256,
                    band: float = 0.9) -> TorusMesh:
    """Band of the real locus RP^2 (totally geodesic): comparison surface
    for the mean-curvature detector.  Rows are non-periodic."""
    al = np.linspace(-band, band, M)
    be = TWO_PI * np.arange(K) / K
    grid = np.empty((M, K, 3), dtype=complex)
    grid[:, :, 0] = np.cos(al)[:, None] * np.cos(be)[None, :]
    grid[:, :, 1] = np.cos(al)[:, None] * np.sin(be)[None, :]
    grid[:, :, 2] = np.sin(al)[:, None] * np.ones_like(be)[None, :]
    return TorusMesh(grid=grid.astype(complex), row_periodic=False)


def perturb_mesh(mesh: TorusMesh, amplitude: float,
                 rng: np.random.Generator) -> TorusMesh:
    """Normal displacement by J-rotated tangent noise (detector check)."""
    Z = mesh.grid
    Tu, Tv = _tangents_order2(Z)
    noise_u = rng.standard_normal(Z.shape[:2])[..., None]
    noise_v = rng.standard_normal(Z.shape[:2])[..., None]
    disp = 1j * (noise_u * Tu / _norm(Tu)[..., None]
                 + noise_v * Tv / _norm(Tv)[..., None])
    out = Z + amplitude * disp
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return TorusMesh(grid=out, frame=mesh.frame, q=mesh.q, p=mesh.p,
                     t_period=mesh.t_period, s_level=mesh.s_level,
                     row_periodic=mesh.row_periodic,
                     col_periodic=mesh.col_periodic)


# ---------------------------------------------------------------------------
# discrete differential operators (phase-aligned)
# ---------------------------------------------------------------------------

def _as_real(Z: np.ndarray) -> np.ndarray:
    return np.concatenate([Z.real, Z.imag], axis=-1)


def _norm(Z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(Z) ** 2, axis=-1))


def _hdot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Hermitian form, linear in the first slot, pointwise over the grid."""
    return np.sum(A * np.conj(B), axis=-1)


def _aligned(Z: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Neighbor at offset (di, dj), phase-aligned to the center (the
    discrete horizontal gauge: <z_nb, z_c> made real positive)."""
    Znb = np.roll(Z, (-di, -dj), axis=(0, 1))
    p = _hdot(Znb, Z)
    return Znb * (np.conj(p) / np.abs(p))[..., None]


def _tangents_order2(Z: np.ndarray):
    Tu = 0.5 * (_aligned(Z, 1, 0) - _aligned(Z, -1, 0))
    Tv = 0.5 * (_aligned(Z, 0, 1) - _aligned(Z, 0, -1))
    Tu -= _hdot(Tu, Z)[..., None] * Z
    Tv -= _hdot(Tv, Z)[..., None] * Z
    return Tu, Tv


def _tangents_order8(Z: np.ndarray):
    c = (4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0)
    Tu = sum(ck * (_aligned(Z, k, 0) - _aligned(Z, -k, 0))
             for k, ck in zip((1, 2, 3, 4), c))
    Tv = sum(ck * (_aligned(Z, 0, k) - _aligned(Z, 0, -k))
             for k, ck in zip((1, 2, 3, 4), c))
    Tu -= _hdot(Tu, Z)[..., None] * Z
    Tv -= _hdot(Tv, Z)[..., None] * Z
    return Tu, Tv


def _interior_mask(mesh: TorusMesh, pad: int) -> np.ndarray:
    M, K = mesh.shape
    mask = np.ones((M, K), dtype=bool)
    if not mesh.row_periodic:
        mask[:pad, :] = False
        mask[M - pad:, :] = False
    if not mesh.col_periodic:
        mask[:, :pad] = False
        mask[:, K - pad:] = False
    return mask


# ---------------------------------------------------------------------------
# certification operations
# ---------------------------------------------------------------------------

def lagrangian_defect(mesh: TorusMesh) -> float:
    """sup |omega(T_u, T_v)| / (|T_u| |T_v|) over the grid, with high-order
    central-difference tangents in the discrete horizontal gauge."""
    Z = mesh.grid
    Tu, Tv = _tangents_order8(Z)
    om = np.abs(_hdot(Tu, Tv).imag) / (_norm(Tu) * _norm(Tv))
    return float(np.max(om[_interior_mask(mesh, 4)]))


def mean_curvature_defect(mesh: TorusMesh,
                          check_resolution: bool = False) -> float:
    """sup-norm of the discrete mean curvature vector.

    Second-order finite differences of the embedding; the complex z-span
    (quotient directions) and the tangential components are projected out,
    so the result converges at order 2 to |trace II|.  With
    ``check_resolution`` a coarse/fine Richardson comparison must show
    decay, else ResolutionError."""
    val = _mc_defect(mesh.grid, _interior_mask(mesh, 1))
    if check_resolution:
        M, K = mesh.shape
        if M < 32 or K < 32:
            raise ResolutionError("mesh too coarse for a stable estimate")
        coarse = _mc_defect(mesh.grid[::2, ::2],
                            _interior_mask(mesh, 1)[::2, ::2])
        if val > 0.75 * coarse:
            raise ResolutionError(
                f"defect does not decay under refinement "
                f"({coarse:.3e} -> {val:.3e}): unresolved or non-minimal")
    return val


def _mc_defect(Z: np.ndarray, mask: np.ndarray) -> float:
    M, K = Z.shape[:2]
    hu, hv = 1.0 / M, 1.0 / K
    zu = (_aligned(Z, 1, 0) - _aligned(Z, -1, 0)) / (2 * hu)
    zv = (_aligned(Z, 0, 1) - _aligned(Z, 0, -1)) / (2 * hv)
    zuu = (_aligned(Z, 1, 0) - 2 * Z + _aligned(Z, -1, 0)) / hu ** 2
    zvv = (_aligned(Z, 0, 1) - 2 * Z + _aligned(Z, 0, -1)) / hv ** 2
    zuv = (_aligned(Z, 1, 1) - _aligned(Z, 1, -1)
           - _aligned(Z, -1, 1) + _aligned(Z, -1, -1)) / (4 * hu * hv)

    zu -= _hdot(zu, Z)[..., None] * Z
    zv -= _hdot(zv, Z)[..., None] * Z

    guu = _hdot(zu, zu).real
    gvv = _hdot(zv, zv).real
    guv = _hdot(zu, zv).real
    det = guu * gvv - guv ** 2
    if np.any(det[mask] <= 0.0):
        raise DegenerateMeshError("degenerate first fundamental form")

    # real-orthonormal tangent pair for the normal projection
    e1 = zu / np.sqrt(guu)[..., None]
    c = _hdot(zv, e1).real
    f2 = zv - c[..., None] * e1
    e2 = f2 / _norm(f2)[..., None]

    def normal_part(x):
        x = x - _hdot(x, Z)[..., None] * Z
        x = x - _hdot(x, e1).real[..., None] * e1
        x = x - _hdot(x, e2).real[..., None] * e2
        return x

    Hvec = ((gvv / det)[..., None] * normal_part(zuu)
            - 2.0 * (guv / det)[..., None] * normal_part(zuv)
            + (guu / det)[..., None] * normal_part(zvv))
    return float(np.max(_norm(Hvec)[mask]))


def killing_variation(mesh: TorusMesh, a) -> float:
    """max - min of |X_a|^2 over the mesh (non-flatness certificate)."""
    a = np.asarray(a.a if hasattr(a, "a") else a, dtype=float)
    zz = np.abs(mesh.grid[..., 1:]) ** 2
    lens = zz @ (a ** 2) - (zz @ a) ** 2
    return float(lens.max() - lens.min())


def _fs_embed(pts: np.ndarray) -> np.ndarray:
    """Isometric embedding [z] -> z z^H into R^{(n+1)^2} (Frobenius)."""
    outer = pts[:, :, None] * np.conj(pts[:, None, :])
    d = outer.shape[1]
    iu, ju = np.triu_indices(d, k=1)
    parts = [outer[:, np.arange(d), np.arange(d)].real,
             math.sqrt(2.0) * outer[:, iu, ju].real,
             math.sqrt(2.0) * outer[:, iu, ju].imag]
    return np.concatenate(parts, axis=1)


def hausdorff_to(mesh_a: TorusMesh, mesh_b: TorusMesh) -> float:
    """Symmetric Hausdorff distance of the sampled surfaces in the
    Fubini-Study metric, by nearest neighbour search."""
    A = mesh_a.grid.reshape(-1, mesh_a.grid.shape[-1])
    B = mesh_b.grid.reshape(-1, mesh_b.grid.shape[-1])
    EA, EB = _fs_embed(A), _fs_embed(B)
    d_ab = cKDTree(EB).query(EA, k=1)[0]
    d_ba = cKDTree(EA).query(EB, k=1)[0]
    d_frob = max(float(d_ab.max()), float(d_ba.max()))
    cos2 = max(0.0, 1.0 - 0.5 * d_frob ** 2)
    return float(np.arccos(min(1.0, math.sqrt(cos2))))


def orbit_volume_profile(frame: SubtorusFrame, mu_grid) -> dict:
    """Volume of the T^n-orbit at each moment value, via the Gram
    determinant of the coordinate torus fields; reports the argmax."""
    n = frame.n
    mu_grid = np.atleast_2d(np.asarray(mu_grid, dtype=float))
    vols = np.empty(mu_grid.shape[0])
    for i, mu in enumerate(mu_grid):
        zz = 2.0 * mu + 1.0 / (n + 1)
        z0 = 1.0 - float(np.sum(zz))
        if z0 <= 0.0 or np.any(zz <= 0.0):
            raise ContractViolationError(
                f"mu={mu} is not in the open moment polytope")
        z = np.concatenate(([math.sqrt(z0)], np.sqrt(zz))).astype(complex)
        X = _fields(z)
        G = (X @ X.conj().T).real
        vols[i] = (TWO_PI ** n) * math.sqrt(max(np.linalg.det(G), 0.0))
    return {"mu": mu_grid, "volume": vols, "argmax": int(np.argmax(vols))}


def segment_mu_grid(frame: SubtorusFrame, npts: int,
                    margin: float = 1e-3) -> np.ndarray:
    """Moment values tau_i . v on the open segment (t1, t2)."""
    t1, t2 = float(frame.t1), float(frame.t2)
    m = margin * (t2 - t1)
    taus = np.linspace(t1 + m, t2 - m, npts)
    return np.outer(taus, frame.v_arr)


# ---------------------------------------------------------------------------
# certification report
# ---------------------------------------------------------------------------

@dataclass
class CertReport:
    """Certification defects with the discretization they were measured at."""

    lagrangian_defect: float
    mean_curvature_defect: float
    killing_variation: float
    hausdorff_to_clifford: float
    mesh_rows: int
    mesh_cols: int
    s_level: float = float("nan")
    p: int = 0
    q: int = 0
    extra: dict = field(default_factory=dict)

    def passes(self, lag_tol: float = 1e-6, mc_tol: float = 1e-4,
               kv_min: float = 0.0) -> bool:
        ok = (self.lagrangian_defect < lag_tol
              and self.mean_curvature_defect < mc_tol)
        if kv_min > 0.0:
            ok = ok and self.killing_variation > kv_min
        return ok

    def to_json_dict(self) -> dict:
        def safe(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            return x
        return {k: safe(v) for k, v in {
            "lagrangian_defect": self.lagrangian_defect,
            "mean_curvature_defect": self.mean_curvature_defect,
            "killing_variation": self.killing_variation,
            "hausdorff_to_clifford": self.hausdorff_to_clifford,
            "mesh_rows": self.mesh_rows,
            "mesh_cols": self.mesh_cols,
            "s_level": self.s_level,
            "p": self.p,
            "q": self.q,
            **self.extra,
        }.items()}


def certify(mesh: TorusMesh, witness_a=None,
            clifford_mesh: TorusMesh | None = None) -> CertReport:
    """Full certification suite on a mesh."""
    if clifford_mesh is None:
        M, K = mesh.shape
        clifford_mesh = clifford(mesh.n, min(M, 256), min(K, 256))
    if witness_a is None and mesh.frame is not None:
        witness_a = mesh.frame.basis[0]
    kv = killing_variation(mesh, np.asarray(witness_a, dtype=float)) \
        if witness_a is not None else float("nan")
    return CertReport(
        lagrangian_defect=lagrangian_defect(mesh),
        mean_curvature_defect=mean_curvature_defect(mesh),
        killing_variation=kv,
        hausdorff_to_clifford=hausdorff_to(mesh, clifford_mesh),
        mesh_rows=mesh.shape[0], mesh_cols=mesh.shape[1],
        s_level=mesh.s_level, p=mesh.p, q=mesh.q,
        extra={"wrap_defect": mesh.wrap_defect,
               **{k: v for k, v in mesh.meta.items()
                  if isinstance(v, (int, float, str))}})


# ---------------------------------------------------------------------------
# mesh file format
# ---------------------------------------------------------------------------

_MESH_MAGIC = "# mintori mesh v1"


def save_mesh(mesh: TorusMesh, path) -> None:
    """Documented mesh format: header comments then one row per grid node,
    columns i j Re z0 Im z0 ... Re zn Im zn at 17 significant digits."""
    M, K = mesh.shape
    n = mesh.n
    buf = io.StringIO()
    buf.write(_MESH_MAGIC + "\n")
    buf.write(f"# n={n} M={M} K={K} "
              f"row_periodic={int(mesh.row_periodic)} "
              f"col_periodic={int(mesh.col_periodic)}\n")
    buf.write(f"# p={mesh.p} q={mesh.q} t_period={mesh.t_period:.17g} "
              f"s_level={mesh.s_level:.17g}\n")
    if mesh.frame is not None:
        buf.write(f"# v={','.join(str(x) for x in mesh.frame.v)}\n")
    cols = " ".join(f"Re_z{k} Im_z{k}" for k in range(n + 1))
    buf.write(f"# columns: i j {cols}\n")
    for i in range(M):
        for j in range(K):
            z = mesh.grid[i, j]
            nums = " ".join(f"{c:.17g}"
                            for x in z for c in (x.real, x.imag))
            buf.write(f"{i} {j} {nums}\n")
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_mesh(path) -> TorusMesh:
    header: dict[str, str] = {}
    rows = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != _MESH_MAGIC:
            raise DegenerateInputError("not a mintori mesh file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, _, v = tok.partition("=")
                        header[k] = v
                continue
            rows.append(line.split())
    try:
        n = int(header["n"])
        M = int(header["M"])
        K = int(header["K"])
    except KeyError as exc:
        raise DegenerateInputError(f"mesh header missing {exc}")
    if len(rows) != M * K:
        raise DegenerateInputError(
            f"expected {M * K} grid rows, found {len(rows)}")
    grid = np.empty((M, K, n + 1), dtype=complex)
    for parts in rows:
        if len(parts) != 2 + 2 * (n + 1):
            raise DegenerateInputError("malformed mesh row")
        i, j = int(parts[0]), int(parts[1])
        vals = np.array([float(x) for x in parts[2:]])
        grid[i, j] = vals[0::2] + 1j * vals[1::2]
    frame = None
    if "v" in header:
        v = tuple(int(x) for x in header["v"].split(","))
        frame = make_frame(WeightVector(v), build_polytope(n))
    return TorusMesh(
        grid=grid, frame=frame,
        p=int(header.get("p", 0)), q=int(header.get("q", 0)),
        t_period=float(header.get("t_period", 0.0)),
        s_level=float(header.get("s_level", "nan")),
        row_periodic=bool(int(header.get("row_periodic", 1))),
        col_periodic=bool(int(header.get("col_periodic", 1))))
