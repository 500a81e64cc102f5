"""Command-line driver: info | scan | construct | verify | export-clifford.

Configuration is a TOML file (strict schema: unknown keys are errors);
every float is printed with 17 significant digits, CSV output uses '.'
decimals and LF line endings, and files are written atomically
(temp-then-rename).  MINTORI_THREADS caps scan parallelism.

Exit codes: 0 success, 1 input error, 2 admissibility, 3 scan failure,
4 bracket, 5 closure, 6 certification.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import dynamics, reduced, torus, weights
from .errors import (
    AdmissibilityError,
    BracketError,
    ClosureError,
    ConfigError,
    MintoriError,
    RefinementError,
    WitnessNotFoundError,
)
from .fubini import einstein_constant

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ADMISSIBILITY = 2
EXIT_SCAN = 3
EXIT_BRACKET = 4
EXIT_CLOSURE = 5
EXIT_CERTIFICATION = 6

TWO_PI = 2.0 * math.pi


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    n: int = 2
    v: tuple[int, ...] = (3, 2)
    l: float = 1.0
    seed: int = 0
    tol_integrator: float = 1e-10
    tol_event: float = 1e-13
    tol_drift: float = 1e-6
    scan_levels: int = 200
    scan_margin_low: float = 0.12
    scan_margin_high: float = 0.985
    scan_tol: float = 1e-9
    scan_mirrored: bool = False
    q_max: int = 12
    angle_tol: float = 1e-10
    closure_tol: float = 1e-6
    mesh_rows: int = 1024
    mesh_cols: int = 1024
    cert_lag_tol: float = 1e-6
    cert_mc_tol: float = 1e-4
    cert_kv_min: float = 1e-6
    out_dir: str = "out"

    def validate(self):
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if len(self.v) != self.n:
            raise ConfigError("weight vector length must equal n")
        for name in ("l", "tol_integrator", "tol_event", "tol_drift",
                     "scan_tol", "angle_tol", "closure_tol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 < self.scan_margin_low < self.scan_margin_high < 1.0):
            raise ConfigError("scan margins must satisfy 0 < low < high < 1")
        if self.scan_levels < 2 or self.q_max < 1:
            raise ConfigError("scan levels >= 2 and q_max >= 1 required")
        if self.mesh_rows < 16 or self.mesh_cols < 16:
            raise ConfigError("mesh resolution must be at least 16")
        return self

    def config_hash(self) -> str:
        blob = repr(sorted(dataclasses.asdict(self).items())).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SCHEMA = {
    "n": ("n", int), "v": ("v", list), "l": ("l", float), "seed": ("seed", int),
    "tolerances.integrator": ("tol_integrator", float),
    "tolerances.event": ("tol_event", float),
    "tolerances.drift": ("tol_drift", float),
    "scan.levels": ("scan_levels", int),
    "scan.margin_low": ("scan_margin_low", float),
    "scan.margin_high": ("scan_margin_high", float),
    "scan.tol": ("scan_tol", float),
    "scan.mirrored": ("scan_mirrored", bool),
    "search.q_max": ("q_max", int),
    "search.angle_tol": ("angle_tol", float),
    "search.closure_tol": ("closure_tol", float),
    "mesh.rows": ("mesh_rows", int),
    "mesh.cols": ("mesh_cols", int),
    "certify.lag_tol": ("cert_lag_tol", float),
    "certify.mc_tol": ("cert_mc_tol", float),
    "certify.kv_min": ("cert_kv_min", float),
    "output.directory": ("out_dir", str),
}


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg.validate()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}")

    def walk(prefix: str, node):
        for key, val in node.items():
            dotted = f"{prefix}{key}"
            if isinstance(val, dict):
                walk(dotted + ".", val)
                continue
            if dotted not in _SCHEMA:
                raise ConfigError(f"unknown config key: {dotted}")
            attr, typ = _SCHEMA[dotted]
            if typ is float and isinstance(val, int):
                val = float(val)
            if typ is list:
                val = tuple(int(x) for x in val)
            elif not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
                raise ConfigError(f"config key {dotted}: expected {typ.__name__}")
            setattr(cfg, attr, val)

    walk("", data)
    return cfg.validate()


def _threads() -> int:
    env = os.environ.get("MINTORI_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("MINTORI_THREADS must be an integer")
    return os.cpu_count() or 1


def _frame_of(cfg: RunConfig):
    poly = weights.build_polytope(cfg.n)
    wv = weights.WeightVector(cfg.v)
    if not weights.admissible(wv, poly):
        raise AdmissibilityError(
            f"inadmissible: the line through {cfg.v} meets an (n-2)-face "
            f"of the moment polytope")
    return weights.make_frame(wv, poly), poly


# ---------------------------------------------------------------------------
# atomic output helpers
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _svg_plot(path: Path, curves, title: str, xlabel: str, ylabel: str,
              cfg_hash: str, markers=()):
    """Minimal deterministic SVG line plot with a metadata comment."""
    W, H, pad = 720, 480, 60.0
    xs = np.concatenate([c[0] for c in curves])
    ys = np.concatenate([c[1] for c in curves])
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 - x0 < 1e-300:
        x1 = x0 + 1.0
    if y1 - y0 < 1e-300:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b",
              "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}">',
           f"<!-- mintori plot; config_hash={cfg_hash}; "
           f"x={xlabel}; y={ylabel} -->",
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{pad}" y1="{H-pad}" x2="{W-pad}" y2="{H-pad}" '
           f'stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H-pad}" '
           f'stroke="black"/>']
    for k in range(5):
        xt = x0 + k * (x1 - x0) / 4
        yt = y0 + k * (y1 - y0) / 4
        out.append(f'<text x="{sx(xt):.1f}" y="{H-pad+18:.1f}" '
                   f'font-size="11" text-anchor="middle">{xt:.4g}</text>')
        out.append(f'<text x="{pad-8:.1f}" y="{sy(yt)+4:.1f}" font-size="11" '
                   f'text-anchor="end">{yt:.4g}</text>')
    for ci, (cx, cy) in enumerate(curves):
        pts = " ".join(f"{sx(float(a)):.2f},{sy(float(b)):.2f}"
                       for a, b in zip(cx, cy) if np.isfinite(a) and np.isfinite(b))
        out.append(f'<polyline fill="none" '
                   f'stroke="{colors[ci % len(colors)]}" '
                   f'stroke-width="1.2" points="{pts}"/>')
    for mx, my in markers:
        out.append(f'<circle cx="{sx(mx):.2f}" cy="{sy(my):.2f}" r="3" '
                   f'fill="#d62728"/>')
    out.append(f'<text x="{W/2:.0f}" y="24" font-size="14" '
               f'text-anchor="middle">{title}</text>')
    out.append(f'<text x="{W/2:.0f}" y="{H-16:.0f}" font-size="12" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="18" y="{H/2:.0f}" font-size="12" '
               f'text-anchor="middle" transform="rotate(-90 18 {H/2:.0f})">'
               f'{ylabel}</text>')
    out.append("</svg>")
    _atomic_write(path, "\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_info(cfg: RunConfig) -> int:
    try:
        frame, poly = _frame_of(cfg)
    except AdmissibilityError as exc:
        print(f"admissibility: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    t = einstein_constant(cfg.n)
    print(f"CP^{cfg.n}, Einstein constant t = {_fmt(t)}")
    print("moment polytope vertices (exact):")
    for vtx in poly.vertices:
        print("  (" + ", ".join(str(x) for x in vtx) + ")")
    print(f"weight v = {frame.v}: admissible")
    print(f"kernel basis = {frame.basis}")
    print(f"w = ({', '.join(str(x) for x in frame.w)})  [v(w) = 1]")
    print(f"t1 = {frame.t1} = {_fmt(float(frame.t1))}")
    print(f"t2 = {frame.t2} = {_fmt(float(frame.t2))}")
    print(f"f_plus = {_fmt(reduced.f_plus(frame))}")
    try:
        a, p_lo, p_hi = weights.killing_witness(frame)
        lo = frame.killing_len2(a.a, reduced.tau_raw(p_lo.z, frame))
        hi = frame.killing_len2(a.a, reduced.tau_raw(p_hi.z, frame))
        print(f"Killing witness a = {tuple(int(x) for x in a.a)}: "
              f"|X_a|^2 ranges [{_fmt(float(lo))}, {_fmt(float(hi))}]")
    except WitnessNotFoundError as exc:
        print(f"Killing witness: none found ({exc})")
    return EXIT_OK


def _scan_grid(cfg: RunConfig, frame) -> list[float]:
    fp = reduced.f_plus(frame)
    lo = cfg.scan_margin_low * fp
    hi = cfg.scan_margin_high * fp
    levels = list(np.linspace(lo, hi, cfg.scan_levels))
    if cfg.scan_mirrored:
        levels += [-s for s in levels]
    return levels


def cmd_scan(cfg: RunConfig) -> int:
    try:
        frame, _ = _frame_of(cfg)
    except AdmissibilityError as exc:
        print(f"admissibility: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    levels = _scan_grid(cfg, frame)
    rows = dynamics.xi_scan(frame, levels, tol=cfg.scan_tol,
                            processes=_threads())
    good = [r for r in rows if not r["error"]]
    for r in rows:
        if r["error"]:
            print(f"level s={_fmt(r['s'])}: {r['error']}", file=sys.stderr)
    out = Path(cfg.out_dir)
    lines = ["s,xi_angle,t_return,f_drift_max"]
    for r in good:
        lines.append(",".join(_fmt(r[k]) for k in
                              ("s", "xi_angle", "t_return", "f_drift_max")))
    _atomic_write(out / "scan.csv", "\n".join(lines) + "\n")
    if good:
        s_arr = np.array([r["s"] for r in good])
        xi_arr = np.array([r["xi_unwrapped"] for r in good])
        _svg_plot(out / "scan_xi.svg",
                  [(s_arr, xi_arr / TWO_PI)],
                  f"holonomy over levels, v={frame.v}",
                  "level s", "xi / 2 pi (unwrapped)", cfg.config_hash())
        _phase_portrait(out / "scan_phase.svg", cfg, frame)
    print(f"scan: {len(good)}/{len(levels)} levels -> {out/'scan.csv'}")
    if not good:
        print("scan: all levels failed", file=sys.stderr)
        return EXIT_SCAN
    return EXIT_OK


def _phase_portrait(path: Path, cfg: RunConfig, frame):
    """Level curves of f = h0(tau) cos(theta) in the (tau, theta) strip."""
    fp = reduced.f_plus(frame)
    t1, t2 = float(frame.t1), float(frame.t2)
    m = 1e-4 * (t2 - t1)
    taus = np.linspace(t1 + m, t2 - m, 301)
    h0 = np.array([reduced.h0_of_tau(frame, t) for t in taus])
    curves = []
    for fr_ in (0.25, 0.5, 0.75, 0.9):
        s = fr_ * fp
        ok = h0 >= s
        if not np.any(ok):
            continue
        th = np.arccos(np.clip(s / h0[ok], -1.0, 1.0))
        tt = taus[ok]
        curves.append((np.concatenate([tt, tt[::-1], tt[:1]]),
                       np.concatenate([th, -th[::-1], th[:1]])))
    _svg_plot(path, curves, f"level loops of f in (tau, theta), v={frame.v}",
              "tau", "theta", cfg.config_hash(), markers=[(0.0, 0.0)])


def _bracket_from_scan(frame, cfg: RunConfig, target: float):
    """Coarse in-memory scan; returns (s_lo, s_hi) with a sign change."""
    fp = reduced.f_plus(frame)
    levels = list(np.linspace(cfg.scan_margin_low * fp,
                              cfg.scan_margin_high * fp, 25))
    rows = [r for r in dynamics.xi_scan(frame, levels, tol=cfg.scan_tol,
                                        processes=_threads())
            if not r["error"]]
    for a, b in zip(rows, rows[1:]):
        ga = a["xi_unwrapped"] - target
        gb = b["xi_unwrapped"] - target
        if ga == 0.0 or ga * gb < 0.0:
            return a["s"], b["s"]
    raise BracketError(
        f"no sign change for target {_fmt(target)} on the scan range "
        f"(xi in [{_fmt(min(r['xi_unwrapped'] for r in rows))}, "
        f"{_fmt(max(r['xi_unwrapped'] for r in rows))}])")


def cmd_construct(cfg: RunConfig, p: int, q: int) -> int:
    try:
        frame, _ = _frame_of(cfg)
    except AdmissibilityError as exc:
        print(f"admissibility: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    target = TWO_PI * p / q
    try:
        bracket = _bracket_from_scan(frame, cfg, target)
        orbit = dynamics.find_periodic(frame, p, q, bracket,
                                       tol=cfg.tol_integrator,
                                       angle_tol=cfg.angle_tol,
                                       closure_tol=cfg.closure_tol)
    except BracketError as exc:
        print(f"bracket: {exc}", file=sys.stderr)
        return EXIT_BRACKET
    except (ClosureError, RefinementError) as exc:
        print(f"closure: {exc}", file=sys.stderr)
        return EXIT_CLOSURE
    mesh = torus.reconstruct(orbit, frame, cfg.mesh_rows, cfg.mesh_cols)
    try:
        a, _, _ = weights.killing_witness(frame)
        witness = a.a
    except WitnessNotFoundError:
        witness = frame.basis[0]
    report = torus.certify(mesh, witness_a=witness)
    out = Path(cfg.out_dir)
    mesh_path = out / f"torus_p{p}_q{q}.mesh"
    out.mkdir(parents=True, exist_ok=True)
    torus.save_mesh(mesh, mesh_path)
    blob = json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
    _atomic_write(out / f"cert_p{p}_q{q}.json", blob + "\n")
    print(blob)
    print(f"mesh -> {mesh_path}")
    if not report.passes(cfg.cert_lag_tol, cfg.cert_mc_tol, cfg.cert_kv_min):
        print("certification failed at configured thresholds", file=sys.stderr)
        return EXIT_CERTIFICATION
    return EXIT_OK


def cmd_verify(cfg: RunConfig, mesh_path: str) -> int:
    try:
        mesh = torus.load_mesh(mesh_path)
    except (OSError, MintoriError, ValueError) as exc:
        print(f"input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    witness = None
    if mesh.frame is not None:
        try:
            a, _, _ = weights.killing_witness(mesh.frame)
            witness = a.a
        except WitnessNotFoundError:
            witness = mesh.frame.basis[0]
    report = torus.certify(mesh, witness_a=witness)
    blob = json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
    _atomic_write(Path(cfg.out_dir) / "verify_report.json", blob + "\n")
    print(blob)
    if not report.passes(cfg.cert_lag_tol, cfg.cert_mc_tol):
        print("certification failed at configured thresholds", file=sys.stderr)
        return EXIT_CERTIFICATION
    return EXIT_OK


def cmd_export_clifford(cfg: RunConfig) -> int:
    mesh = torus.clifford(cfg.n, cfg.mesh_rows, cfg.mesh_cols)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "clifford.mesh"
    torus.save_mesh(mesh, path)
    print(f"mesh -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mintori",
        description="minimal Lagrangian tori in CP^n: scan, construct, certify")
    ap.add_argument("--config", metavar="PATH", default=None)
    ap.add_argument("--out", metavar="DIR", default=None)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("info")
    sp = sub.add_parser("scan")
    sp.add_argument("--levels", type=int, default=None)
    sp.add_argument("--mirrored", action="store_true")
    sc = sub.add_parser("construct")
    sc.add_argument("--p", type=int, required=True)
    sc.add_argument("--q", type=int, required=True)
    sc.add_argument("--qmax", type=int, default=None)
    sv = sub.add_parser("verify")
    sv.add_argument("mesh", metavar="MESH_FILE")
    sub.add_parser("export-clifford")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if getattr(args, "levels", None) is not None:
            cfg.scan_levels = args.levels
        if getattr(args, "mirrored", False):
            cfg.scan_mirrored = True
        if getattr(args, "qmax", None) is not None:
            cfg.q_max = args.qmax
        cfg.validate()
    except (ConfigError, MintoriError) as exc:
        print(f"input: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if args.command == "info":
            return cmd_info(cfg)
        if args.command == "scan":
            return cmd_scan(cfg)
        if args.command == "construct":
            if math.gcd(abs(args.p), args.q) != 1 or args.q < 1 \
                    or args.q > cfg.q_max:
                print(f"input: (p, q) must be coprime with 1 <= q <= "
                      f"{cfg.q_max}", file=sys.stderr)
                return EXIT_INPUT
            return cmd_construct(cfg, args.p, args.q)
        if args.command == "verify":
            return cmd_verify(cfg, args.mesh)
        if args.command == "export-clifford":
            return cmd_export_clifford(cfg)
    except MintoriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
