"""Eavesdropper: IO regressors, clustering / switched-regression attacks,
pair-counting scores and persistence-of-excitation sample complexity."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning


@dataclass(frozen=True)
class AttackDataset:
    u: np.ndarray
    y_w: np.ndarray
    labels: np.ndarray | None = None
    start: int = 0

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y_w, dtype=float))
        if u.shape[0] != y.shape[0]:
            raise ValueError("u and y_w histories differ in length")
        if self.labels is not None and len(self.labels) != y.shape[0]:
            raise ValueError("labels must align with the signals")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y_w", y)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))

    @classmethod
    def from_trace(cls, trace, start: int = 0) -> "AttackDataset":
        return cls(trace.u[start:], trace.y_w[start:], trace.mode_w[start:], start)


@dataclass(frozen=True)
class RegressorSet:
    """``phi[k] = [y_w[k-1..k-nu], u[k-1..k-nu]]`` with target ``y_w[k]``, k in [nu, T)."""

    horizon: int
    phi: np.ndarray
    targets: np.ndarray
    labels: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def __len__(self) -> int:
        return self.phi.shape[0]

    def without_labels(self) -> "RegressorSet":
        return replace(self, labels=None)


def build_regressors(ds: AttackDataset, horizon: int) -> RegressorSet:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    T = ds.y_w.shape[0]
    if T <= horizon:
        raise ValueError(f"need more than {horizon} samples, got {T}")
    ks = np.arange(horizon, T)
    y_lags = [ds.y_w[ks - j] for j in range(1, horizon + 1)]
    u_lags = [ds.u[ks - j] for j in range(1, horizon + 1)]
    phi = np.hstack(y_lags + u_lags)
    labels = None if ds.labels is None else ds.labels[ks]
    return RegressorSet(horizon, phi, ds.y_w[ks].copy(), labels)


@dataclass
class AttackResult:
    method: str
    labels: np.ndarray
    objective: float
    models: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def kmeans_attack(rs: RegressorSet, k: int, restarts: int = 10,
                  rng: np.random.Generator | None = None, max_iter: int = 300) -> AttackResult:
    """Lloyd k-means (k-means++ seeding) on ``[phi, target]``; best inertia over restarts."""
    rs = rs.without_labels()
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rs) < k:
        raise ValueError("fewer samples than clusters")
    rng = np.random.default_rng(0) if rng is None else rng
    data = np.hstack([rs.phi, rs.targets])
    flags = []
    if np.unique(data, axis=0).shape[0] < k:
        flags.append("degenerate: fewer distinct points than clusters")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, max_iter=max_iter,
                    random_state=_seed_from(rng)).fit(data)
    return AttackResult("kmeans", km.labels_.astype(int), float(km.inertia_),
                        [km.cluster_centers_], flags)


def _fit_affine(Xa, Y, ridge):
    d = Xa.shape[1]
    G = Xa.T @ Xa
    rank_def = np.linalg.matrix_rank(G) < d
    theta = np.linalg.solve(G + ridge * np.eye(d), Xa.T @ Y)
    return theta, rank_def


def klinreg_attack(rs: RegressorSet, k: int, restarts: int = 10,
                   rng: np.random.Generator | None = None, max_iter: int = 100,
                   ridge: float = 1e-8) -> AttackResult:
    """Alternating switched affine regression, ``y = Theta_j' [phi; 1]``.

    Each restart draws Gaussian parameters, then alternates least-residual
    assignment and ridge least-squares refits until the labels stop changing.
    Returns the restart with the smallest total squared error (first on ties).
    """
    rs = rs.without_labels()
    if k < 1:
        raise ValueError("k must be >= 1")
    n, d = rs.phi.shape
    if n < k * (d + 1):
        raise ValueError(f"k-LinReg needs at least {k * (d + 1)} samples, got {n}")
    rng = np.random.default_rng(0) if rng is None else rng
    Xa = np.hstack([rs.phi, np.ones((n, 1))])
    Y = rs.targets
    best = None
    for _ in range(restarts):
        thetas = [rng.standard_normal((d + 1, Y.shape[1])) for _ in range(k)]
        labels = None
        flags = set()
        for _ in range(max_iter):
            res = np.stack([((Y - Xa @ th) ** 2).sum(axis=1) for th in thetas], axis=1)
            new = np.argmin(res, axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                sel = labels == j
                if not sel.any():
                    continue
                thetas[j], rank_def = _fit_affine(Xa[sel], Y[sel], ridge)
                if rank_def:
                    flags.add("rank-deficient refit regularised")
        else:
            flags.add("iteration cap reached")
        res = np.stack([((Y - Xa @ th) ** 2).sum(axis=1) for th in thetas], axis=1)
        labels = np.argmin(res, axis=1)
        sse = float(res[np.arange(n), labels].sum())
        if best is None or sse < best.objective:
            best = AttackResult("klinreg", labels.astype(int), sse,
                                [th.copy() for th in thetas], sorted(flags))
    return best


@dataclass(frozen=True)
class ClusterScore:
    RI: float
    JI: float
    FMI: float

    def to_dict(self) -> dict:
        return {"RI": self.RI, "JI": self.JI, "FMI": self.FMI}


def pair_counts(true_labels, est_labels):
    """``(a, b, c, d)``: pairs together in both, apart in both, only in true, only in estimate."""
    t = np.asarray(true_labels)
    e = np.asarray(est_labels)
    if t.shape != e.shape or t.ndim != 1:
        raise ValueError("label arrays must be 1-D and of equal length")
    n = t.shape[0]
    _, ti = np.unique(t, return_inverse=True)
    _, ei = np.unique(e, return_inverse=True)
    cont = np.zeros((ti.max(initial=-1) + 1, ei.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(cont, (ti, ei), 1)

    def pairs(x):
        return sum(int(v) * (int(v) - 1) // 2 for v in np.ravel(x))

    a = pairs(cont)
    same_t = pairs(cont.sum(axis=1))
    same_e = pairs(cont.sum(axis=0))
    c = same_t - a
    d = same_e - a
    b = n * (n - 1) // 2 - a - c - d
    return a, b, c, d


def score_clustering(true_labels, est_labels) -> ClusterScore:
    a, b, c, d = pair_counts(true_labels, est_labels)
    total = a + b + c + d
    ri = 1.0 if total == 0 else (a + b) / total
    if a + c + d == 0:
        # neither labelling groups any pair: the partitions coincide
        return ClusterScore(ri, 1.0, 1.0)
    ji = a / (a + c + d)
    fmi = 0.0 if a == 0 else a / np.sqrt(float(a + c) * float(a + d))
    return ClusterScore(float(ri), float(ji), float(fmi))


def sample_complexity(n_theta: int, N: int) -> int:
    """Minimum sample count ``((n_theta - 1) N^2 + (n_theta + 1) N) / 2``.

    The numerator is always even for integer inputs, so the result is exact.
    """
    if int(n_theta) != n_theta or int(N) != N or n_theta < 1 or N < 1:
        raise ValueError("n_theta and N must be positive integers")
    n_theta, N = int(n_theta), int(N)
    num = (n_theta - 1) * N * N + (n_theta + 1) * N
    q, r = divmod(num, 2)
    return q + r


@dataclass(frozen=True)
class IOComplexity:
    modes: int
    horizon: int
    io_models: int
    io_dimension: int
    samples: int

    def to_dict(self) -> dict:
        return {"modes": self.modes, "horizon": self.horizon, "io_models": self.io_models,
                "io_dimension": self.io_dimension, "samples": self.samples}


def io_complexity(s: int, horizon: int, p: int, m: int) -> IOComplexity:
    if s < 1 or horizon < 1:
        raise ValueError("s and horizon must be >= 1")
    models = int(s) ** int(horizon)
    dim = (int(p) + int(m)) * int(horizon)
    return IOComplexity(int(s), int(horizon), models, dim, sample_complexity(dim, models))
