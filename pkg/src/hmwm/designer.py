"""Randomised design of certified watermark banks.

The observable block of every mode is ``T' diag(abar_i) T`` with a shared
orthonormal ``T``.  A stabilising gain ``K_i`` makes ``A_i - B_i K_i`` a
contraction in the spectral norm, which certifies the gain LMI with ``X = I``.
Unobservable states are appended one at a time with a shared diagonal entry
``|a_w| <= sqrt(0.5)`` and a shared input row ``b_w``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import is_controllable, make_rng, random_orthonormal, symmetrize
from .watermark import A_W_LIMIT, WatermarkBank, WatermarkMode, verify_pair


class DesignError(RuntimeError):
    pass


class CertificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    n_w: int = 5
    n_u: int = 2
    p: int = 2
    N: int = 6
    m: int | None = None
    seed: int = 0
    rho_max: float = 0.9
    cond_max: float = 1e3
    epsilon: float = 0.05
    delta: float = 0.05
    gain_scale: float = 1.0
    max_resample: int = 1000

    def __post_init__(self):
        if self.n_w < 1 or self.N < 1 or self.p < 1:
            raise ValueError("n_w, N and p must be >= 1")
        if not 1 <= self.n_u < self.n_w:
            raise ValueError("need 1 <= n_u < n_w")
        if not 0.0 < self.rho_max < 1.0:
            raise ValueError("rho_max must lie in (0, 1)")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.rho_max > 1.0 - self.epsilon:
            # the K = 0 fallback must satisfy the gain LMI
            raise ValueError("rho_max must not exceed 1 - epsilon")
        if not 0.0 <= self.delta < min(self.rho_max, A_W_LIMIT):
            raise ValueError("delta must be below rho_max and sqrt(0.5)")

    @property
    def n_o(self) -> int:
        return self.n_w - self.n_u


@dataclass
class StabilityCertificate:
    P_w: np.ndarray
    P_q: np.ndarray
    X: np.ndarray
    p_w: list
    p_q: list
    margins_w: list
    margins_q: list

    @property
    def margin_w(self) -> float:
        return min(self.margins_w)

    @property
    def margin_q(self) -> float:
        return min(self.margins_q)

    @property
    def ok(self) -> bool:
        return self.margin_w > 0.0 and self.margin_q > 0.0

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "P_w": self.P_w.tolist(), "P_q": self.P_q.tolist(), "X": self.X.tolist(),
            "p_w": list(self.p_w), "p_q": list(self.p_q),
            "margins_w": list(self.margins_w), "margins_q": list(self.margins_q),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityCertificate":
        return cls(np.array(d["P_w"]), np.array(d["P_q"]), np.array(d["X"]), d["p_w"],
                   d["p_q"], d["margins_w"], d["margins_q"])


def lyapunov_margin(A, P) -> float:
    """Smallest eigenvalue of ``P - A' P A`` (positive means strict decrease)."""
    return float(np.linalg.eigvalsh(symmetrize(P - A.T @ P @ A)).min())


def gain_lmi_matrix(A, B, K, X) -> np.ndarray:
    """``[[X, A X + B Z], [(A X + B Z)', X]]`` with ``Z = -K X``."""
    M = A @ X - B @ K @ X
    return np.block([[X, M], [M.T, X]])


def solve_gain_lmi(A_list, B_list, epsilon: float, rng: np.random.Generator,
                   scale: float = 1.0, tries_per_scale: int = 20, min_scale: float = 1e-4):
    """Gains with ``||A_i - B_i K_i||_2 <= 1 - epsilon`` for every mode, and X = I.

    Gaussian candidates are drawn at a geometrically shrinking scale; ``K = 0``
    is the fallback when nothing is accepted above ``min_scale``.
    """
    bound = 1.0 - epsilon
    K_list = []
    for A, B in zip(A_list, B_list):
        n, p = B.shape
        K = None
        s = scale
        while s >= min_scale and K is None:
            for _ in range(tries_per_scale):
                cand = s * rng.standard_normal((p, n))
                if np.linalg.norm(A - B @ cand, 2) <= bound:
                    K = cand
                    break
            s *= 0.5
        if K is None:
            if np.linalg.norm(A, 2) > bound:
                raise DesignError("gain LMI infeasible within the sampling budget")
            K = np.zeros((p, n))
        K_list.append(K)
    X = np.eye(A_list[0].shape[0])
    return K_list, X


def _sample_magnitude(rng, lo, hi, size=None):
    mag = rng.uniform(lo, hi, size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return mag * sign


def design_bank(spec: DesignSpec, rng: np.random.Generator | None = None):
    """Run the full design; returns ``(bank, certificate)``.

    The bank comes back without a partition: cells depend on the plant's
    steady state and are attached later with ``bank.with_partition``.
    """
    rng = make_rng(spec.seed) if rng is None else rng
    n_o, p, N = spec.n_o, spec.p, spec.N

    T_bar = random_orthonormal(n_o, rng)
    abar = [_sample_magnitude(rng, spec.delta, spec.rho_max, n_o) for _ in range(N)]
    A_obs = [T_bar.T @ np.diag(a) @ T_bar for a in abar]
    B_obs = []
    for A in A_obs:
        for _ in range(spec.max_resample):
            B = rng.standard_normal((n_o, p))
            if is_controllable(A, B):
                break
        else:
            raise DesignError("could not draw a controllable B_w block")
        B_obs.append(B)

    K_list, X = solve_gain_lmi(A_obs, B_obs, spec.epsilon, rng, scale=spec.gain_scale)

    D_list = []
    for _ in range(N):
        for _ in range(spec.max_resample):
            D = rng.standard_normal((p, p))
            if np.linalg.cond(D) <= spec.cond_max:
                break
        else:
            raise DesignError("could not draw a well-conditioned D_w")
        D_list.append(D)
    C_obs = [D @ K for D, K in zip(D_list, K_list)]

    A_cur, B_cur, C_cur = list(A_obs), list(B_obs), list(C_obs)
    a_w, b_w = [], []
    for _ in range(spec.n_u):
        a = float(_sample_magnitude(rng, spec.delta, A_W_LIMIT))
        b = rng.standard_normal((1, p))
        a_w.append(a)
        b_w.append(b)
        for i in range(N):
            s = A_cur[i].shape[0]
            A_new = np.zeros((s + 1, s + 1))
            A_new[:s, :s] = A_cur[i]
            A_new[s, s] = a
            A_cur[i] = A_new
            B_cur[i] = np.vstack([B_cur[i], b])
            C_cur[i] = np.hstack([C_cur[i], np.zeros((p, 1))])

    modes = tuple(WatermarkMode.from_generator(i, A_cur[i], B_cur[i], C_cur[i], D_list[i])
                  for i in range(N))
    design = {"T_bar": T_bar, "abar": np.array(abar), "K": np.array(K_list), "X": X,
              "a_w": a_w, "seed": spec.seed, "epsilon": spec.epsilon}
    bank = WatermarkBank(modes, spec.n_u, None, design)
    report = verify_pair(bank, cond_max=max(spec.cond_max, 1e6))
    if not report.ok:
        raise DesignError("designed bank failed verification: " + "; ".join(report.violations))
    try:
        cert = certify_guas(bank)
    except CertificationError as exc:
        raise DesignError(f"internal error: certificate construction failed ({exc})") from exc
    return bank, cert


P_GRID = np.logspace(-6, 6, 121)


def certify_guas(bank: WatermarkBank, grid=P_GRID) -> StabilityCertificate:
    """Common quadratic Lyapunov functions for both filter families.

    Generator: ``P_w = T' diag(I, p_w I) T`` with ``T = diag(T_bar, I)``.
    Remover: ``P_q = diag(X^-1, p_1, ..., p_{n_u})`` built one unobservable
    direction at a time; each ``p_t`` is the grid value maximising the worst
    Lyapunov margin over modes of the current leading block.
    Raises ``CertificationError`` when any family has no positive margin.
    """
    n_w, n_u = bank.n_w, bank.n_u
    n_o = n_w - n_u
    T_bar = np.asarray(bank.design.get("T_bar", np.eye(n_o)), dtype=float)
    X = np.asarray(bank.design.get("X", np.eye(n_o)), dtype=float)

    T = np.eye(n_w)
    T[:n_o, :n_o] = T_bar
    p_w = 1.0
    P_w = T.T @ np.diag(np.r_[np.ones(n_o), p_w * np.ones(n_u)]) @ T
    margins_w = [lyapunov_margin(m.A_w, P_w) for m in bank.modes]
    if min(margins_w) <= 0.0:
        raise CertificationError(f"generator margin {min(margins_w):.3g} is not positive")

    P = np.linalg.inv(X)
    base = [lyapunov_margin(m.A_q[:n_o, :n_o], P) for m in bank.modes]
    if min(base) <= 0.0:
        raise CertificationError("observable remover block has no common Lyapunov function")
    p_q = []
    for t in range(n_u):
        s = n_o + t + 1
        best_p, best_margin = None, 0.0
        for pv in grid:
            Pt = np.zeros((s, s))
            Pt[:-1, :-1] = P
            Pt[-1, -1] = pv
            marg = min(lyapunov_margin(m.A_q[:s, :s], Pt) for m in bank.modes)
            if marg > best_margin:
                best_p, best_margin = float(pv), marg
        if best_p is None:
            raise CertificationError(f"no p_q on the grid certifies unobservable direction {t}")
        p_q.append(best_p)
        Pn = np.zeros((s, s))
        Pn[:-1, :-1] = P
        Pn[-1, -1] = best_p
        P = Pn
    margins_q = [lyapunov_margin(m.A_q, P) for m in bank.modes]
    if min(margins_q) <= 0.0:
        raise CertificationError("remover certificate has non-positive margin")
    return StabilityCertificate(P_w=P_w, P_q=P, X=X, p_w=[p_w] * n_u, p_q=p_q,
                                margins_w=margins_w, margins_q=margins_q)
