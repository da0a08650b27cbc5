"""Numeric substrate: stability tests, Lyapunov/Riccati solvers, quantiles, seeded sampling.

Random draws come from ``numpy.random.Generator`` backed by PCG64.  A seed
fully determines every draw sequence; numpy guarantees PCG64 stream stability
across releases, which is what makes traces reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

PSD_TOL = 1e-12
SYM_TOL = 1e-12


class UnstableMatrixError(ValueError):
    """Raised when an operation requires a Schur-stable matrix."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_square(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def is_psd(a, tol: float = PSD_TOL) -> bool:
    m = as_square(a)
    scale = max(abs(np.trace(m)), np.abs(m).max(initial=0.0))
    if not np.allclose(m, m.T, rtol=SYM_TOL, atol=SYM_TOL * max(scale, 1e-300)):
        return False
    eig = np.linalg.eigvalsh(symmetrize(m))
    return bool(eig.min(initial=0.0) >= -tol * max(scale, 1e-300))


def spectral_radius(a) -> float:
    m = as_square(a)
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def is_schur(a, margin: float = 1e-9) -> bool:
    if not 0.0 < margin <= 1.0:
        raise ValueError("margin must lie in (0, 1]")
    return spectral_radius(a) <= 1.0 - margin


def controllability_matrix(a, b) -> np.ndarray:
    a = as_square(a, "A")
    b = as_matrix(b, "B")
    blocks = [b]
    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(c, a) -> np.ndarray:
    return controllability_matrix(np.asarray(a).T, np.asarray(c).T).T


def numerical_rank(m, rel_tol: float = 1e-8) -> int:
    """Rank counting singular values above ``rel_tol * sigma_max``."""
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def is_controllable(a, b) -> bool:
    return numerical_rank(controllability_matrix(a, b)) == np.asarray(a).shape[0]


def is_observable(c, a) -> bool:
    return numerical_rank(observability_matrix(c, a)) == np.asarray(a).shape[0]


def solve_discrete_lyapunov(a, q, tol: float = 1e-14, max_doublings: int = 64) -> np.ndarray:
    """Solve ``A P A' - P + Q = 0`` by the doubling iteration.

    Accumulates ``P = sum_k A^k Q (A^k)'`` two terms at a time:
    ``P <- P + A P A'`` and ``A <- A @ A``.
    """
    a = as_square(a, "A")
    q = as_square(q, "Q")
    if a.shape != q.shape:
        raise ValueError(f"A {a.shape} and Q {q.shape} differ in shape")
    if spectral_radius(a) >= 1.0:
        raise UnstableMatrixError("Lyapunov solve needs spectral_radius(A) < 1")
    p = symmetrize(q)
    ak = a.copy()
    for _ in range(max_doublings):
        step = ak @ p @ ak.T
        p = p + step
        ak = ak @ ak
        if np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(p)):
            return symmetrize(p)
    raise ConvergenceError("Lyapunov doubling did not converge")


@dataclass(frozen=True)
class KalmanSteadyState:
    """Steady-state Kalman quantities for ``x+ = A x + w``, ``y = C x + v``.

    ``gain`` is the measurement-update gain ``P C' S^-1`` and
    ``predictor_gain = A @ gain`` is the gain of the one-step predictor form
    used by the controller.  ``error_cov`` is the prior (predicted) error
    covariance ``P`` and ``innovation_cov = C P C' + Sigma_v``.
    """

    gain: np.ndarray
    innovation_cov: np.ndarray
    error_cov: np.ndarray
    predictor_gain: np.ndarray
    iterations: int = 0


def kalman_steady_state(a, c, sigma_w, sigma_v, tol: float = 1e-13,
                        max_iter: int = 1_000_000) -> KalmanSteadyState:
    a = as_square(a, "A")
    c = as_matrix(c, "C")
    sigma_w = as_square(sigma_w, "Sigma_w")
    sigma_v = as_square(sigma_v, "Sigma_v")
    n, p_dim = a.shape[0], c.shape[0]
    if c.shape[1] != n or sigma_w.shape != (n, n) or sigma_v.shape != (p_dim, p_dim):
        raise ValueError("inconsistent Kalman dimensions")
    if not is_observable(c, a):
        raise ValueError("(C, A) is not observable")
    if not is_psd(sigma_w):
        raise ValueError("Sigma_w is not PSD")
    if np.linalg.eigvalsh(symmetrize(sigma_v)).min() <= 0.0:
        raise ValueError("Sigma_v must be positive definite")

    p = symmetrize(sigma_w)
    for it in range(1, max_iter + 1):
        s = c @ p @ c.T + sigma_v
        k_pred = a @ p @ c.T @ np.linalg.inv(s)
        p_next = symmetrize(a @ p @ a.T + sigma_w - k_pred @ s @ k_pred.T)
        step = np.linalg.norm(p_next - p)
        p = p_next
        if step <= tol * (1.0 + np.linalg.norm(p)):
            break
    else:
        raise ConvergenceError(f"Riccati recursion did not converge in {max_iter} steps")
    s = symmetrize(c @ p @ c.T + sigma_v)
    gain = p @ c.T @ np.linalg.inv(s)
    return KalmanSteadyState(gain=gain, innovation_cov=s, error_cov=p,
                             predictor_gain=a @ gain, iterations=it)


@lru_cache(maxsize=256)
def chi_square_quantile(dof: int, prob: float) -> float:
    if int(dof) != dof or dof < 1:
        raise ValueError("dof must be a positive integer")
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must lie in (0, 1)")
    return float(stats.chi2.ppf(prob, int(dof)))


def random_orthonormal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal matrix (QR of a Gaussian with sign fix)."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


@dataclass(frozen=True)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = as_square(self.cov, "covariance")
        if cov.shape[0] != mean.shape[0]:
            raise ValueError("mean and covariance dimensions differ")
        if not is_psd(cov):
            raise ValueError("covariance is not symmetric PSD")
        cov = symmetrize(cov)
        w, v = np.linalg.eigh(cov)
        factor = v * np.sqrt(np.clip(w, 0.0, None))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "factor", factor)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_degenerate(self) -> bool:
        return not np.any(self.factor)


def sample_gaussian(spec: GaussianSpec, rng: np.random.Generator, size: int | None = None):
    """One draw (shape ``(d,)``) or ``size`` draws (shape ``(size, d)``)."""
    if size is None:
        z = rng.standard_normal(spec.dim)
        return spec.mean + spec.factor @ z
    z = rng.standard_normal((size, spec.dim))
    return spec.mean + z @ spec.factor.T
