"""Shared fixtures: frames, scans, and the constructed-orbit cache.

The expensive artifacts (periodic orbits, certification meshes, the fine
Clifford mesh) are session-scoped so the acceptance suite and the module
tests measure the same objects.
"""

from __future__ import annotations

import os

import numpy as np
import pytest

from mintori import dynamics, reduced, torus, weights


def processes() -> int:
    env = os.environ.get("MINTORI_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


@pytest.fixture(scope="session")
def poly():
    return weights.build_polytope(2)


@pytest.fixture(scope="session")
def frame32(poly):
    return weights.make_frame(weights.WeightVector((3, 2)), poly)


@pytest.fixture(scope="session")
def frame21(poly):
    return weights.make_frame(weights.WeightVector((2, 1)), poly)


@pytest.fixture(scope="session")
def frame11(poly):
    return weights.make_frame(weights.WeightVector((1, -1)), poly)


@pytest.fixture(scope="session")
def fp32(frame32):
    return reduced.f_plus(frame32)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260810)


def sample_spoint(frame, rng, tau_frac=None, theta=None):
    """Random interior S-point: torus-rotated representative on Z."""
    t1, t2 = float(frame.t1), float(frame.t2)
    pad = 0.08 * (t2 - t1)
    t = rng.uniform(t1 + pad, t2 - pad) if tau_frac is None \
        else t1 + pad + tau_frac * (t2 - t1 - 2 * pad)
    th = rng.uniform(0.0, 2 * np.pi) if theta is None else theta
    z = frame.z_of_tau(t)
    shift = np.concatenate(
        ([0.0], rng.uniform(0, 2 * np.pi) * frame.w_arr
         + rng.uniform(0, 2 * np.pi) * frame.basis_arr[0]))
    return reduced.make_spoint(np.exp(1j * shift) * z, th, frame)


# -- constructed orbits (the certification battery) -------------------------

TARGETS = ((13, 3), (17, 4), (21, 5))


@pytest.fixture(scope="session")
def coarse_scan(frame32, fp32):
    levels = np.linspace(0.15 * fp32, 0.985 * fp32, 25)
    rows = dynamics.xi_scan(frame32, levels, tol=1e-9, processes=processes())
    good = [r for r in rows if not r["error"]]
    assert len(good) >= 20
    return good


def bracket_for(scan_rows, target):
    for a, b in zip(scan_rows, scan_rows[1:]):
        if (a["xi_unwrapped"] - target) * (b["xi_unwrapped"] - target) <= 0.0:
            return a["s"], b["s"]
    raise AssertionError(f"no bracket for target {target}")


@pytest.fixture(scope="session")
def orbits(frame32, coarse_scan):
    out = {}
    for p, q in TARGETS:
        br = bracket_for(coarse_scan, 2 * np.pi * p / q)
        out[(p, q)] = dynamics.find_periodic(frame32, p, q, br, tol=1e-10)
    return out


@pytest.fixture(scope="session")
def meshes256(frame32, orbits):
    return {pq: torus.reconstruct(orb, frame32, 256, 256)
            for pq, orb in orbits.items()}


@pytest.fixture(scope="session")
def meshes128(frame32, orbits):
    return {pq: torus.reconstruct(orb, frame32, 128, 128)
            for pq, orb in orbits.items()}


@pytest.fixture(scope="session")
def clifford256():
    return torus.clifford(2, 256, 256)


@pytest.fixture(scope="session")
def clifford_fine():
    return torus.clifford(2, 2048, 2048)
