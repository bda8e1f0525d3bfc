"""Time integration of B u' = -i A u.

Exact step: u(t + tau) = exp(tau*M) u(t) with M = (iB)^-1 A, whose
spectrum is purely imaginary for symmetric A and SPD B.  Three ways to
apply the propagator live here:

* REXI stepping: exp(tau*M) u ~ sum_j beta_j (tau*A - sigma_j*iB)^-1 (iB) u.
  The K shifted systems are factored once per (system, approx, tau) and
  each step is K independent back-substitutions, distributed over a
  thread pool (the LAPACK band solves release the GIL).  The weighted sum
  runs in fixed ascending-j order with Kahan compensation, so results do
  not depend on worker count or completion order.
* Chebyshev/Clenshaw stepping: p(tau*M) u for a Chebyshev expansion of
  exp on i[-R, R]; each recurrence stage costs one A-multiply and one
  B-solve.  This is the comparison method and, run at a much smaller
  step, the large-system reference.
* Dense oracle: full eigendecomposition of M through the symmetric
  pencil (A, B), for small systems only; supplies the conditioning
  number used in the a-priori error bound.

A step tau is admissible when SAFETY_FACTOR * tau * sr(M) <= R1, i.e.
the scaled spectrum stays inside the interval where the rational or
polynomial approximant is certified.  Runs refuse inadmissible steps
unless explicitly overridden.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.polynomial.chebyshev import chebval

from .approx import PartialFractionApproximation
from .errors import AdmissibilityError, SolverError
from .solvers import factorize
from .spatial import SystemMatrices, spectral_radius_estimate

# Headroom multiplier applied to the spectral-radius estimate wherever a
# step size is checked against the approximation interval.
SAFETY_FACTOR = 1.05

Observer = Callable[[int, float, np.ndarray], None]


def max_step_size(r1: float, sr_m: float) -> float:
    """Largest step keeping tau * sr(M) <= R1 (no safety factor)."""
    if not sr_m > 0:
        raise ValueError(f"spectral radius must be positive, got {sr_m}")
    if not r1 > 0:
        raise ValueError(f"interval radius must be positive, got {r1}")
    return r1 / sr_m


def _kahan_rows(rows: np.ndarray) -> np.ndarray:
    """Compensated sum of the rows of a 2-D array, in row order."""
    acc = np.zeros(rows.shape[1], dtype=rows.dtype)
    comp = np.zeros_like(acc)
    for j in range(rows.shape[0]):
        y = rows[j] - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    return acc


def _admissibility(tau: float, sr_value: float, radius: float):
    ratio = SAFETY_FACTOR * tau * float(sr_value) / radius
    return ratio, ratio <= 1.0


def _require_admissible(kind: str, stepper) -> None:
    if stepper.admissible:
        return
    if stepper.override_admissibility:
        stepper.override_used = True
        return
    largest = stepper.interval_radius / (SAFETY_FACTOR * stepper.sr_value)
    raise AdmissibilityError(
        f"{kind} step tau = {stepper.tau:g} is inadmissible: "
        f"{SAFETY_FACTOR} * tau * sr(M) / R1 = {stepper.admissibility_ratio:.4g} "
        f"> 1; the largest admissible step for this system is "
        f"max_step_size = {largest:.6e}"
    )


# ---------------------------------------------------------------------------
# REXI stepping
# ---------------------------------------------------------------------------

@dataclass
class RexiStepper:
    """Prepared REXI propagator: factorizations j correspond index-wise to
    approx.shifts[j]; timers accumulate per-phase wall seconds."""

    approx: PartialFractionApproximation
    tau: float
    system: SystemMatrices
    factorizations: list
    workers: int
    sr_value: float
    admissibility_ratio: float
    admissible: bool
    override_admissibility: bool = False
    override_used: bool = False
    timers: dict = field(default_factory=lambda: {
        "rhs": 0.0, "local": 0.0, "reduce": 0.0,
    })

    def __post_init__(self):
        k = self.approx.K
        self._work = np.empty((k, self.system.n_dof), dtype=complex)
        chunks = np.array_split(np.arange(k), min(self.workers, k))
        self._chunks = [c for c in chunks if len(c)]
        self._pool = (ThreadPoolExecutor(max_workers=len(self._chunks))
                      if len(self._chunks) > 1 else None)

    @property
    def interval_radius(self) -> float:
        return self.approx.domain_radius

    @property
    def bandwidth(self):
        """Bandwidth of the factored shifted systems (None if dense)."""
        return self.factorizations[0].bandwidth

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def rexi_prepare(
    sys: SystemMatrices,
    approx: PartialFractionApproximation,
    tau: float,
    *,
    workers: int | None = None,
    sr_value: float | None = None,
    override_admissibility: bool = False,
) -> RexiStepper:
    """Factor the K shifted systems (tau*A - sigma_j*iB) once.

    ``sr_value`` may be supplied to skip the power iteration (e.g. when
    the caller already estimated it); ``workers`` defaults to K.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(np.unique(approx.shifts)) != approx.K:
        raise ValueError("approximation shifts must be distinct")
    if workers is None:
        workers = approx.K
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if sr_value is None:
        sr_value = spectral_radius_estimate(sys)
    ratio, admissible = _admissibility(tau, sr_value, approx.domain_radius)

    factorizations = []
    for j, sigma in enumerate(approx.shifts):
        shifted = (tau * sys.A - (1j * sigma) * sys.B).tocsr()
        try:
            factorizations.append(factorize(shifted))
        except SolverError as exc:
            raise SolverError(
                f"shifted system j = {j} (sigma = {sigma}) is singular: the "
                f"shift coincides with an eigenvalue of tau*M ({exc})"
            ) from exc

    return RexiStepper(
        approx=approx,
        tau=tau,
        system=sys,
        factorizations=factorizations,
        workers=workers,
        sr_value=float(sr_value),
        admissibility_ratio=ratio,
        admissible=admissible,
        override_admissibility=override_admissibility,
    )


def rexi_step(stepper: RexiStepper, u: np.ndarray) -> np.ndarray:
    """One REXI step: rhs = iBu, K shifted solves, weighted compensated sum.

    The reduction always runs in ascending shift order on the coordinating
    thread, so 1-worker and K-worker execution produce identical results.
    """
    timers = stepper.timers
    weights = stepper.approx.weights
    work = stepper._work

    t0 = time.perf_counter()
    rhs = 1j * (stepper.system.B @ u)
    t1 = time.perf_counter()
    timers["rhs"] += t1 - t0

    def solve_chunk(chunk):
        for j in chunk:
            try:
                work[j] = weights[j] * stepper.factorizations[j].solve(rhs)
            except SolverError as exc:
                raise SolverError(f"solve failed for shift j = {j}: {exc}") from exc

    if stepper._pool is None:
        for chunk in stepper._chunks:
            solve_chunk(chunk)
    else:
        # list() re-raises any worker exception here.
        list(stepper._pool.map(solve_chunk, stepper._chunks))
    t2 = time.perf_counter()
    timers["local"] += t2 - t1

    out = _kahan_rows(work)
    timers["reduce"] += time.perf_counter() - t2
    return out


def rexi_run(
    stepper: RexiStepper,
    u0: np.ndarray,
    n_steps: int,
    observer: Observer | None = None,
) -> np.ndarray:
    """Apply rexi_step ``n_steps`` times; observer sees (step, time, state)."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if n_steps > 0:
        _require_admissible("REXI", stepper)
    u = np.array(u0, dtype=complex, copy=True)
    for k in range(1, n_steps + 1):
        u = rexi_step(stepper, u)
        if observer is not None:
            observer(k, k * stepper.tau, u)
    return u


# ---------------------------------------------------------------------------
# Chebyshev / Clenshaw stepping
# ---------------------------------------------------------------------------

class ChebyshevCoeffs(NamedTuple):
    coeffs: np.ndarray
    sup_error: float


def chebyshev_coeffs(r: float, n: int) -> ChebyshevCoeffs:
    """Coefficients a_0..a_N with sum a_k T_k(x) matching exp(i r x) on
    [-1, 1], equivalently p(z) = sum a_k T_k(-iz/r) matching exp on
    i[-r, r]; built from samples at the N+1 Chebyshev points via the
    cosine-sum construction.  The certificate ``sup_error`` is measured
    on a dense grid, not estimated.
    """
    if n < 1:
        raise ValueError(f"degree must be >= 1, got {n}")
    if not r > 0:
        raise ValueError(f"interval radius must be positive, got {r}")
    j = np.arange(n + 1)
    f = np.exp(1j * r * np.cos(np.pi * j / n))
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    cos_table = np.cos(np.pi * np.outer(j, j) / n)
    a = (2.0 / n) * (cos_table @ (w * f))
    a[0] *= 0.5
    a[-1] *= 0.5

    x = np.linspace(-1.0, 1.0, 100_001)
    sup = float(np.max(np.abs(chebval(x, a) - np.exp(1j * r * x))))
    return ChebyshevCoeffs(coeffs=a, sup_error=sup)


@dataclass
class ChebyshevStepper:
    """Prepared Clenshaw propagator for p(tau*M)."""

    coeffs: np.ndarray
    degree: int
    R: float
    tau: float
    B_factorization: object
    sup_error: float
    sr_value: float
    admissibility_ratio: float
    admissible: bool
    override_admissibility: bool = False
    override_used: bool = False
    timers: dict = field(default_factory=lambda: {
        "rhs": 0.0, "local": 0.0, "reduce": 0.0,
    })

    @property
    def interval_radius(self) -> float:
        return self.R


def chebyshev_prepare(
    sys: SystemMatrices,
    tau: float,
    *,
    degree: int = 26,
    radius: float = 10.0,
    sr_value: float | None = None,
    override_admissibility: bool = False,
) -> ChebyshevStepper:
    """Build coefficients for i[-radius, radius] and factor B once."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if sr_value is None:
        sr_value = spectral_radius_estimate(sys)
    cc = chebyshev_coeffs(radius, degree)
    ratio, admissible = _admissibility(tau, sr_value, radius)
    return ChebyshevStepper(
        coeffs=cc.coeffs,
        degree=degree,
        R=float(radius),
        tau=tau,
        B_factorization=factorize(sys.B),
        sup_error=cc.sup_error,
        sr_value=float(sr_value),
        admissibility_ratio=ratio,
        admissible=admissible,
        override_admissibility=override_admissibility,
    )


def chebyshev_step(
    stepper: ChebyshevStepper, sys: SystemMatrices, u: np.ndarray
) -> np.ndarray:
    """p(tau*M) u by the Clenshaw backward recurrence.

    The scaled argument -i*tau*M/R reduces to the real operator
    -(tau/R) * B^-1 A, so each stage is one A-multiply and one B-solve.
    """
    a = stepper.coeffs
    scale = -(stepper.tau / stepper.R)
    solve_b = stepper.B_factorization.solve

    t0 = time.perf_counter()
    u = np.asarray(u, dtype=complex)
    b1 = np.zeros_like(u)
    b2 = np.zeros_like(u)
    for k in range(stepper.degree, 0, -1):
        b1, b2 = a[k] * u + 2.0 * scale * solve_b(sys.A @ b1) - b2, b1
    out = a[0] * u + scale * solve_b(sys.A @ b1) - b2
    stepper.timers["local"] += time.perf_counter() - t0
    return out


def chebyshev_run(
    stepper: ChebyshevStepper,
    sys: SystemMatrices,
    u0: np.ndarray,
    n_steps: int,
    observer: Observer | None = None,
) -> np.ndarray:
    """Apply chebyshev_step ``n_steps`` times with the same observer
    contract as :func:`rexi_run`."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if n_steps > 0:
        _require_admissible("Chebyshev", stepper)
    u = np.array(u0, dtype=complex, copy=True)
    for k in range(1, n_steps + 1):
        u = chebyshev_step(stepper, sys, u)
        if observer is not None:
            observer(k, k * stepper.tau, u)
    return u


# ---------------------------------------------------------------------------
# Dense oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleDecomposition:
    """Eigendecomposition M = X diag(omegas) X^-1 with its conditioning."""

    X: np.ndarray
    omegas: np.ndarray
    cond_inf: float
    xinv: np.ndarray
    residual: float


def dense_decomposition(sys: SystemMatrices, max_n: int = 512) -> OracleDecomposition:
    """Diagonalize M = (iB)^-1 A through the symmetric pencil (A, B).

    The pencil eigenvectors V are B-orthonormal, so X = V, X^-1 = V^T B,
    and omegas = -i * lambda are purely imaginary.  The reconstruction
    residual of M X = X diag(omega) is verified (relative, Frobenius).
    """
    if sys.n_dof > max_n:
        raise ValueError(
            f"system too large for the dense oracle: n_dof = {sys.n_dof} "
            f"exceeds max_n = {max_n}"
        )
    a_d = sys.A.toarray()
    b_d = sys.B.toarray()
    lam, vec = sla.eigh(a_d, b_d)
    x_mat = vec.astype(complex)
    omegas = -1j * lam
    xinv = (vec.T @ b_d).astype(complex)
    cond_inf = float(np.linalg.norm(x_mat, np.inf)
                     * np.linalg.norm(xinv, np.inf))

    m_mat = -1j * sla.solve(b_d, a_d)
    num = np.linalg.norm(m_mat @ x_mat - x_mat * omegas, "fro")
    den = max(np.linalg.norm(m_mat, "fro"), np.finfo(float).tiny)
    residual = float(num / den)
    if residual > 1e-8:
        raise SolverError(
            f"dense eigendecomposition residual {residual:.3e} exceeds 1e-8; "
            "the pencil is too ill-conditioned to serve as an oracle"
        )
    return OracleDecomposition(
        X=x_mat, omegas=omegas, cond_inf=cond_inf, xinv=xinv, residual=residual
    )


def dense_expm_apply(
    sys: SystemMatrices,
    tau: float,
    u: np.ndarray,
    max_n: int = 512,
    *,
    decomposition: OracleDecomposition | None = None,
) -> np.ndarray:
    """exp(tau*M) u by dense diagonalization (small systems only)."""
    dec = decomposition
    if dec is None:
        dec = dense_decomposition(sys, max_n=max_n)
    return dec.X @ (np.exp(tau * dec.omegas) * (dec.xinv @ np.asarray(u, complex)))


def rexi_error_bound(sup_error: float, cond_inf: float) -> float:
    """A-priori bound sup_error * cond_inf on ||exp(tau M) - r(tau M)||_inf."""
    if sup_error < 0 or cond_inf < 0:
        raise ValueError("sup_error and cond_inf must be nonnegative")
    return sup_error * cond_inf
