"""1D quadratic-Lagrange finite elements for the Schrodinger Hamiltonian.

Builds the pencil (A, B) of the first-order system B u' = -i A u on a
uniform mesh with zero Dirichlet boundaries:

    A[j,k] = integral( hbar^2/(2m) chi_j' chi_k' + V chi_j chi_k )
    B[j,k] = hbar * integral( chi_j chi_k )

Each element carries three nodes (left, mid, right); all element
integrals use a fixed 3-point Gauss rule, which is exact for every
polynomial integrand appearing here.  Discontinuous step potentials are
integrated piecewise: any element straddling a jump is split at the jump
location so the rule never averages across the discontinuity (the
barrier width is far below the element size in the experiments, so
midpoint sampling would alias it away entirely).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.sparse import coo_matrix, csr_matrix

from .errors import SpatialError
from .solvers import factorize

# Quadrature on the reference element [0, 1].
_GX, _GW = leggauss(3)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW

# Threshold of the initial-state support check: endpoint amplitude
# relative to the packet peak.
SUPPORT_TOL = 1e-8


def _shape(xi):
    """P2 shape functions (left, mid, right) at reference coordinate xi."""
    xi = np.asarray(xi)
    return np.stack([
        (2.0 * xi - 1.0) * (xi - 1.0),
        4.0 * xi * (1.0 - xi),
        xi * (2.0 * xi - 1.0),
    ])


def _shape_grad(xi):
    """Reference-coordinate derivatives of the P2 shape functions."""
    xi = np.asarray(xi)
    return np.stack([
        4.0 * xi - 3.0,
        4.0 - 8.0 * xi,
        4.0 * xi - 1.0,
    ])


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh1D:
    """Uniform 1D mesh with midpoint nodes: 2 * n_elems + 1 nodes total."""

    x0: float
    x1: float
    n_elems: int
    nodes: np.ndarray

    @property
    def h(self) -> float:
        return (self.x1 - self.x0) / self.n_elems


@dataclass(frozen=True)
class PotentialSpec:
    """Zero potential or a centered step barrier of height v_max on
    (-c_barr/2, c_barr/2)."""

    kind: str
    v_max: float = 0.0
    c_barr: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "step"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.v_max < 0:
            raise ValueError(f"v_max must be >= 0, got {self.v_max}")
        if self.c_barr <= 0:
            raise ValueError(f"c_barr must be > 0, got {self.c_barr}")

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls(kind="zero")

    @classmethod
    def step_barrier(cls, v_max: float, c_barr: float) -> "PotentialSpec":
        return cls(kind="step", v_max=v_max, c_barr=c_barr)


@dataclass(frozen=True)
class PhysicalConstants:
    """Hartree atomic units by default."""

    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.hbar <= 0 or self.mass <= 0:
            raise ValueError("hbar and mass must both be positive")


@dataclass(frozen=True)
class WavePacketParams:
    """Gaussian packet: center r_bar (bohr), mean momentum p_bar,
    squared-width parameter sigma (bohr^2)."""

    r_bar: float
    p_bar: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class SystemMatrices:
    """Assembled pencil on interior nodes (Dirichlet rows eliminated)."""

    A: csr_matrix
    B: csr_matrix
    n_dof: int


# ---------------------------------------------------------------------------
# Mesh and assembly
# ---------------------------------------------------------------------------

def build_mesh(x0: float, x1: float, n_elems: int) -> Mesh1D:
    """Uniform mesh of ``n_elems`` quadratic elements on (x0, x1)."""
    if not x0 < x1:
        raise ValueError(f"need x0 < x1, got ({x0}, {x1})")
    if n_elems < 1:
        raise ValueError(f"n_elems must be >= 1, got {n_elems}")
    nodes = np.linspace(x0, x1, 2 * n_elems + 1)
    return Mesh1D(x0=float(x0), x1=float(x1), n_elems=int(n_elems), nodes=nodes)


def _reference_blocks(h: float):
    """Element mass and stiffness blocks by Gauss quadrature (exact here)."""
    shp = _shape(_GX)          # (3, q)
    grd = _shape_grad(_GX)     # (3, q)
    mass = h * np.einsum("q,iq,jq->ij", _GW, shp, shp)
    stiff = (1.0 / h) * np.einsum("q,iq,jq->ij", _GW, grd, grd)
    return mass, stiff


def _potential_entries(mesh: Mesh1D, potential: PotentialSpec):
    """COO entries of the step-potential term, integrated piecewise."""
    rows, cols, vals = [], [], []
    if potential.kind != "step" or potential.v_max == 0.0:
        return rows, cols, vals
    half = 0.5 * potential.c_barr
    h = mesh.h
    first = max(0, int(math.floor((-half - mesh.x0) / h)) - 1)
    last = min(mesh.n_elems - 1, int(math.ceil((half - mesh.x0) / h)) + 1)
    for e in range(first, last + 1):
        xl = mesh.x0 + e * h
        xr = xl + h
        if xr <= -half or xl >= half:
            continue
        cuts = [xl] + [c for c in (-half, half) if xl < c < xr] + [xr]
        block = np.zeros((3, 3))
        for a, b in zip(cuts[:-1], cuts[1:]):
            if abs(0.5 * (a + b)) >= half:
                continue  # this piece lies outside the barrier
            xg = a + (b - a) * _GX
            shp = _shape((xg - xl) / h)
            block += potential.v_max * (b - a) * np.einsum(
                "q,iq,jq->ij", _GW, shp, shp
            )
        idx = 2 * e + np.arange(3)
        rows.extend(np.repeat(idx, 3))
        cols.extend(np.tile(idx, 3))
        vals.extend(block.ravel())
    return rows, cols, vals


def assemble_system(
    mesh: Mesh1D, potential: PotentialSpec, consts: PhysicalConstants
) -> SystemMatrices:
    """Assemble A (stiffness + potential) and B (scaled mass) on interior
    nodes.  Both come out real symmetric; B is positive definite."""
    ne = mesh.n_elems
    n_nodes = 2 * ne + 1
    mass_e, stiff_e = _reference_blocks(mesh.h)

    idx = 2 * np.arange(ne)[:, None] + np.arange(3)
    rows = np.repeat(idx, 3, axis=1).ravel()
    cols = np.tile(idx, (1, 3)).ravel()
    shape = (n_nodes, n_nodes)

    kinetic = consts.hbar**2 / (2.0 * consts.mass)
    a_full = coo_matrix(
        (np.tile(kinetic * stiff_e.ravel(), ne), (rows, cols)), shape=shape
    ).tocsr()
    pr, pc, pv = _potential_entries(mesh, potential)
    if pv:
        a_full = a_full + coo_matrix((pv, (pr, pc)), shape=shape).tocsr()
    b_full = coo_matrix(
        (np.tile(consts.hbar * mass_e.ravel(), ne), (rows, cols)), shape=shape
    ).tocsr()

    interior = slice(1, n_nodes - 1)
    a_mat = a_full[interior, interior].tocsr()
    b_mat = b_full[interior, interior].tocsr()
    a_mat.sum_duplicates()
    b_mat.sum_duplicates()
    return SystemMatrices(A=a_mat, B=b_mat, n_dof=n_nodes - 2)


# ---------------------------------------------------------------------------
# Initial state
# ---------------------------------------------------------------------------

def wave_packet_eval(params: WavePacketParams, consts: PhysicalConstants, r):
    """Gaussian packet value(s) at r.

    The prefactor (pi*sigma)^(-1/4) normalizes the continuum packet to
    unit probability; the discrete state is re-normalized exactly in
    :func:`project_initial`.
    """
    r = np.asarray(r, dtype=float)
    c0 = (math.pi * params.sigma) ** -0.25
    d = r - params.r_bar
    out = c0 * np.exp(-d * d / (2.0 * params.sigma)
                      + 1j * params.p_bar * d / consts.hbar)
    return out if r.ndim else complex(out)


def project_initial(
    mesh: Mesh1D,
    params: WavePacketParams,
    consts: PhysicalConstants,
    b_mat,
) -> np.ndarray:
    """Interior nodal interpolant of the packet, scaled so uᴴBu = hbar.

    With B = hbar * (mass matrix) this normalization makes the discrete
    probability integral of |psi_h|^2 exactly 1.
    """
    peak = abs(wave_packet_eval(params, consts, params.r_bar))
    for endpoint in (mesh.x0, mesh.x1):
        ratio = abs(wave_packet_eval(params, consts, endpoint)) / peak
        if ratio >= SUPPORT_TOL:
            raise SpatialError(
                f"wave packet is not supported inside the domain: magnitude "
                f"at endpoint x = {endpoint} is {ratio:.3e} of the peak "
                f"(limit {SUPPORT_TOL:.0e}); enlarge the domain"
            )
    u = np.asarray(wave_packet_eval(params, consts, mesh.nodes[1:-1]),
                   dtype=complex)
    norm = b_norm(u, b_mat)
    if norm == 0.0:
        raise SpatialError("initial state is identically zero on the mesh")
    return u * (math.sqrt(consts.hbar) / norm)


def b_norm(u: np.ndarray, b_mat) -> float:
    """sqrt(Re(uᴴBu)), guarding against a non-real quadratic form."""
    u = np.asarray(u)
    if b_mat.shape[1] != u.shape[0]:
        raise ValueError(
            f"dimension mismatch: B is {b_mat.shape}, u has length {u.shape[0]}"
        )
    quad = complex(np.vdot(u, b_mat @ u))
    if quad == 0:
        return 0.0
    if abs(quad.imag) > 1e-12 * abs(quad):
        raise SpatialError(
            f"uᴴBu = {quad} has a non-negligible imaginary part; "
            "B is not Hermitian or the state is corrupted"
        )
    if quad.real < 0:
        raise SpatialError(f"uᴴBu = {quad.real} is negative; B is not SPD")
    return math.sqrt(quad.real)


# ---------------------------------------------------------------------------
# Spectral radius of M = (iB)^-1 A
# ---------------------------------------------------------------------------

class SpectralRadiusEstimate(float):
    """A float (the estimate) carrying power-iteration diagnostics."""

    iterations: int
    converged: bool

    def __new__(cls, value: float, iterations: int, converged: bool):
        obj = super().__new__(cls, value)
        obj.iterations = iterations
        obj.converged = converged
        return obj

    def __repr__(self):
        return (f"SpectralRadiusEstimate({float(self)!r}, "
                f"iterations={self.iterations}, converged={self.converged})")


def spectral_radius_estimate(
    sys: SystemMatrices,
    tol: float = 1e-6,
    max_iters: int = 500,
    seed: int = 0,
) -> SpectralRadiusEstimate:
    """Power iteration on B^-1 A with B-pencil Rayleigh quotients.

    |lambda_max(B^-1 A)| equals sr(M) for M = (iB)^-1 A, since the two
    operators differ by the unimodular factor -i.  Converged means two
    successive Rayleigh quotients agreed to ``tol`` relative; otherwise
    the last value is returned with ``converged=False``.
    """
    solve_b = factorize(sys.B).solve
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(sys.n_dof).astype(complex)
    v /= np.linalg.norm(v)
    rq_prev = None
    rq = 0.0
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        av = sys.A @ v
        rq = abs(np.vdot(v, av) / np.vdot(v, sys.B @ v))
        if rq_prev is not None and abs(rq - rq_prev) <= tol * max(rq, 1e-300):
            converged = True
            break
        rq_prev = rq
        w = solve_b(av)
        v = w / np.linalg.norm(w)
    return SpectralRadiusEstimate(float(rq), iterations, converged)


# ---------------------------------------------------------------------------
# State evaluation
# ---------------------------------------------------------------------------

def evaluate_state(u: np.ndarray, mesh: Mesh1D, xs) -> np.ndarray:
    """P2 interpolant of the interior coefficient vector at points xs."""
    xs_arr = np.atleast_1d(np.asarray(xs, dtype=float))
    span = mesh.x1 - mesh.x0
    if np.any(xs_arr < mesh.x0 - 1e-12 * span) or np.any(
        xs_arr > mesh.x1 + 1e-12 * span
    ):
        bad = xs_arr[(xs_arr < mesh.x0) | (xs_arr > mesh.x1)][0]
        raise SpatialError(
            f"sample point x = {bad} lies outside the domain "
            f"({mesh.x0}, {mesh.x1})"
        )
    full = np.zeros(2 * mesh.n_elems + 1, dtype=complex)
    full[1:-1] = u
    h = mesh.h
    e = np.clip(((xs_arr - mesh.x0) // h).astype(int), 0, mesh.n_elems - 1)
    xi = np.clip((xs_arr - mesh.x0 - e * h) / h, 0.0, 1.0)
    shp = _shape(xi)
    return (full[2 * e] * shp[0] + full[2 * e + 1] * shp[1]
            + full[2 * e + 2] * shp[2])


def probability_density(u: np.ndarray, mesh: Mesh1D, sample_xs) -> np.ndarray:
    """|psi_h(x)|^2 at the sample points (unit total probability under the
    uᴴBu = hbar normalization)."""
    vals = evaluate_state(u, mesh, sample_xs)
    return np.abs(vals) ** 2
