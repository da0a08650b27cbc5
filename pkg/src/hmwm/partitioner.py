"""Steady-state statistics of the unobservable watermark state and
equal-probability polyhedral partitions of its range.

Cells are stored as ``{x : H x <= h}`` in original coordinates.  Membership
ties are resolved in favour of the lowest cell index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .numerics import as_matrix, as_square, is_schur, solve_discrete_lyapunov, symmetrize
from .plant_loop import ControllerConfig, PlantModel


@dataclass(frozen=True)
class SteadyStats:
    mu_xp: np.ndarray
    Sigma_xp: np.ndarray
    mu_yp: np.ndarray
    Sigma_yp: np.ndarray
    Sigma_e: np.ndarray
    mu_xu: np.ndarray
    Sigma_xu: np.ndarray


def steady_stats(plant: PlantModel, cfg: ControllerConfig, A_wu, B_wu) -> SteadyStats:
    """Fixed point of the mean/covariance recursions for x_p, y_p and x_u.

    The plant-state covariance follows the closed-loop recursion driven by
    ``B K Sigma_e (B K)'`` and ``Sigma_w``; the x_p/e cross-covariance is not
    included, so the result is an approximation of the true joint moments.
    """
    A_wu = as_square(A_wu, "A_wu")
    B_wu = as_matrix(B_wu, "B_wu")
    if B_wu.shape != (A_wu.shape[0], plant.p):
        raise ValueError("B_wu must be n_u x p")
    A_cl = plant.A - plant.B @ cfg.K
    if not is_schur(A_cl):
        raise ValueError("closed loop A_p - B_p K is not Schur stable")
    if not is_schur(A_wu):
        raise ValueError("A_wu is not Schur stable")
    n = plant.n
    BK = plant.B @ cfg.K
    # mu_e = 0, so the mean obeys mu = A_cl mu + B (K x_ref + u_ref)
    mu_xp = np.linalg.solve(np.eye(n) - A_cl, plant.B @ (cfg.K @ cfg.x_ref + cfg.u_ref))
    Sigma_xp = solve_discrete_lyapunov(A_cl, BK @ cfg.Sigma_e @ BK.T + plant.Sigma_w)
    mu_yp = plant.C @ mu_xp
    Sigma_yp = symmetrize(plant.C @ Sigma_xp @ plant.C.T + plant.Sigma_v)
    n_u = A_wu.shape[0]
    mu_xu = np.linalg.solve(np.eye(n_u) - A_wu, B_wu @ mu_yp)
    Sigma_xu = solve_discrete_lyapunov(A_wu, B_wu @ Sigma_yp @ B_wu.T)
    return SteadyStats(mu_xp, Sigma_xp, mu_yp, Sigma_yp, cfg.Sigma_e.copy(), mu_xu, Sigma_xu)


def fixed_point_residual(st: SteadyStats, plant: PlantModel, cfg: ControllerConfig,
                         A_wu, B_wu) -> float:
    """Largest relative change when pushing ``st`` through one recursion step."""
    A_wu = np.asarray(A_wu, dtype=float)
    B_wu = np.asarray(B_wu, dtype=float)
    A_cl = plant.A - plant.B @ cfg.K
    BK = plant.B @ cfg.K
    pairs = [
        (A_cl @ st.mu_xp + plant.B @ (cfg.K @ cfg.x_ref + cfg.u_ref), st.mu_xp),
        (A_cl @ st.Sigma_xp @ A_cl.T + BK @ st.Sigma_e @ BK.T + plant.Sigma_w, st.Sigma_xp),
        (plant.C @ st.Sigma_xp @ plant.C.T + plant.Sigma_v, st.Sigma_yp),
        (A_wu @ st.mu_xu + B_wu @ st.mu_yp, st.mu_xu),
        (A_wu @ st.Sigma_xu @ A_wu.T + B_wu @ st.Sigma_yp @ B_wu.T, st.Sigma_xu),
    ]
    return max(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300) for new, old in pairs)


@dataclass(frozen=True)
class Partition:
    """N polyhedral cells covering R^{n_u}; ``whitening`` maps x to W (x - mean)."""

    n_u: int
    cells: tuple  # of (H, h) pairs
    mean: np.ndarray
    whitening: np.ndarray
    kind: str = "sectors"

    @property
    def N(self) -> int:
        return len(self.cells)

    def raw_membership(self, x, rel_tol: float = 1e-12) -> np.ndarray:
        """Boolean (N,) or (M, N) array: closed-cell membership of x."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        out = np.ones((pts.shape[0], self.N), dtype=bool)
        for j, (H, h) in enumerate(self.cells):
            if H.shape[0] == 0:
                continue
            lhs = pts @ H.T
            tol = rel_tol * (1.0 + np.abs(h) + np.abs(pts) @ np.abs(H).T)
            out[:, j] = np.all(lhs <= h + tol, axis=1)
        return out[0] if single else out

    def violation(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.zeros((pts.shape[0], self.N))
        for j, (H, h) in enumerate(self.cells):
            if H.shape[0]:
                v[:, j] = np.max(pts @ H.T - h, axis=1)
        return v

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_u": self.n_u,
            "N": self.N,
            "whitening": {"mean": self.mean.tolist(), "matrix": self.whitening.tolist()},
            "cells": [{"H": H.tolist(), "h": h.tolist()} for H, h in self.cells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        n_u = int(d["n_u"])
        cells = tuple(
            (np.array(c["H"], dtype=float).reshape(-1, n_u), np.array(c["h"], dtype=float).reshape(-1))
            for c in d["cells"]
        )
        w = d["whitening"]
        return cls(n_u=n_u, cells=cells, mean=np.array(w["mean"], dtype=float),
                   whitening=np.array(w["matrix"], dtype=float).reshape(n_u, n_u),
                   kind=d.get("kind", "sectors"))


def classify(partition: Partition, x_u) -> int:
    """Index (0-based) of the first cell containing ``x_u``."""
    x = np.asarray(x_u, dtype=float)
    for j, (H, h) in enumerate(partition.cells):
        if H.shape[0] == 0:
            return j
        tol = 1e-12 * (1.0 + np.abs(h) + np.abs(H) @ np.abs(x))
        if np.all(H @ x <= h + tol):
            return j
    # unreachable for a covering partition; pick the least violated cell
    return int(np.argmin(partition.violation(x)[0]))


def classify_many(partition: Partition, points) -> np.ndarray:
    member = partition.raw_membership(np.atleast_2d(points))
    idx = np.argmax(member, axis=1)
    none = ~member.any(axis=1)
    if none.any():
        idx[none] = np.argmin(partition.violation(np.atleast_2d(points)[none]), axis=1)
    return idx


def inverse_sqrt(S) -> np.ndarray:
    w, v = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    if w.min() <= 0.0:
        raise ValueError("covariance must be positive definite")
    return (v / np.sqrt(w)) @ v.T


def build_partition(st: SteadyStats, N: int) -> Partition:
    """Equal-probability cells under N(mu_xu, Sigma_xu).

    One dimension: slabs between Gaussian quantiles at j/N.  Two dimensions:
    N equal-angle sectors around the whitened mean.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    mu = np.asarray(st.mu_xu, dtype=float)
    S = np.asarray(st.Sigma_xu, dtype=float)
    n_u = mu.shape[0]
    if n_u not in (1, 2):
        raise ValueError(f"equal-probability partitioning supports n_u in {{1, 2}}, got {n_u}")
    W = inverse_sqrt(S)
    if N == 1:
        return Partition(n_u, ((np.zeros((0, n_u)), np.zeros(0)),), mu, W,
                         "slabs" if n_u == 1 else "sectors")
    if n_u == 1:
        q = slab_boundaries(float(mu[0]), float(np.sqrt(S[0, 0])), N)
        cells = [(np.array([[1.0]]), np.array([q[0]]))]
        for j in range(1, N - 1):
            cells.append((np.array([[-1.0], [1.0]]), np.array([-q[j - 1], q[j]])))
        cells.append((np.array([[-1.0]]), np.array([-q[-1]])))
        return Partition(1, tuple(cells), mu, W, "slabs")

    cells = []
    for j in range(N):
        t0, t1 = 2 * np.pi * j / N, 2 * np.pi * (j + 1) / N
        # z left of the start ray and right of the end ray, written as G z <= 0
        G = [[np.sin(t0), -np.cos(t0)]]
        if N > 2:
            G.append([-np.sin(t1), np.cos(t1)])
        G = np.array(G)
        H = G @ W
        cells.append((H, H @ mu))
    return Partition(2, tuple(cells), mu, W, "sectors")


def slab_boundaries(mean: float, std: float, N: int) -> np.ndarray:
    probs = np.arange(1, N) / N
    return mean + std * sps.norm.ppf(probs)
