"""Hybrid watermark generator and remover.

Each mode is a linear filter ``(A_w, B_w, C_w, D_w)`` whose last ``n_u`` states
are unobservable and shared by all modes.  The remover uses the exact inverse
``D_q = D_w^-1``, ``A_q = A_w - B_w D_q C_w``, ``B_q = B_w D_q``,
``C_q = -D_q C_w``.  Both sides pick their mode from their own unobservable
state through the same partition, so no mode information is transmitted.

Mode indices are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import as_matrix, as_square, numerical_rank, observability_matrix, spectral_radius
from .partitioner import Partition, classify

A_W_LIMIT = np.sqrt(0.5)


@dataclass(frozen=True)
class WatermarkMode:
    index: int
    A_w: np.ndarray
    B_w: np.ndarray
    C_w: np.ndarray
    D_w: np.ndarray
    A_q: np.ndarray
    B_q: np.ndarray
    C_q: np.ndarray
    D_q: np.ndarray

    @classmethod
    def from_generator(cls, index: int, A_w, B_w, C_w, D_w) -> "WatermarkMode":
        A_w, B_w = as_square(A_w, "A_w"), as_matrix(B_w, "B_w")
        C_w, D_w = as_matrix(C_w, "C_w"), as_square(D_w, "D_w")
        D_q = np.linalg.inv(D_w)
        B_q = B_w @ D_q
        return cls(index, A_w, B_w, C_w, D_w,
                   A_q=A_w - B_q @ C_w, B_q=B_q, C_q=-D_q @ C_w, D_q=D_q)

    @property
    def theta(self) -> np.ndarray:
        """Row-major flattening of ``[[A_w, B_w], [C_w, D_w]]``."""
        return np.block([[self.A_w, self.B_w], [self.C_w, self.D_w]]).ravel()


@dataclass(frozen=True)
class WatermarkBank:
    modes: tuple
    n_u: int
    partition: Partition | None = None
    design: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.modes) < 1:
            raise ValueError("a bank needs at least one mode")
        object.__setattr__(self, "modes", tuple(self.modes))
        n_w = self.modes[0].A_w.shape[0]
        if not 1 <= self.n_u < n_w:
            raise ValueError("need 1 <= n_u < n_w")
        if self.partition is not None:
            if self.partition.N != len(self.modes):
                raise ValueError("partition cell count differs from mode count")
            if self.partition.n_u != self.n_u:
                raise ValueError("partition dimension differs from n_u")

    @property
    def N(self) -> int:
        return len(self.modes)

    @property
    def n_w(self) -> int:
        return self.modes[0].A_w.shape[0]

    @property
    def p(self) -> int:
        return self.modes[0].D_w.shape[0]

    @property
    def n_theta(self) -> int:
        return (self.n_w + self.p) ** 2

    @property
    def A_wu(self) -> np.ndarray:
        return self.modes[0].A_w[-self.n_u:, -self.n_u:]

    @property
    def B_wu(self) -> np.ndarray:
        return self.modes[0].B_w[-self.n_u:, :]

    def with_partition(self, partition: Partition) -> "WatermarkBank":
        return replace(self, partition=partition)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        # json writes floats with repr(), the shortest string that round-trips exactly
        return {
            "format": "hmwm-bank/1",
            "n_w": self.n_w,
            "n_u": self.n_u,
            "p": self.p,
            "N": self.N,
            "shared": {"A_wu": self.A_wu.tolist(), "B_wu": self.B_wu.tolist()},
            "modes": [
                {"index": m.index,
                 **{k: getattr(m, k).tolist() for k in
                    ("A_w", "B_w", "C_w", "D_w", "A_q", "B_q", "C_q", "D_q")}}
                for m in self.modes
            ],
            "partition": None if self.partition is None else self.partition.to_dict(),
            "design": _jsonable(self.design),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WatermarkBank":
        n_w, p = int(d["n_w"]), int(d["p"])
        shapes = {"A_w": (n_w, n_w), "B_w": (n_w, p), "C_w": (p, n_w), "D_w": (p, p)}
        shapes.update({k.replace("_w", "_q"): s for k, s in shapes.items()})
        modes = []
        for md in d["modes"]:
            mats = {k: np.array(md[k], dtype=float).reshape(s) for k, s in shapes.items()}
            modes.append(WatermarkMode(index=int(md["index"]), **mats))
        part = d.get("partition")
        design = {k: (np.array(v) if isinstance(v, list) else v)
                  for k, v in (d.get("design") or {}).items()}
        return cls(tuple(modes), int(d["n_u"]),
                   None if part is None else Partition.from_dict(part), design)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_bank(bank: WatermarkBank, path) -> None:
    Path(path).write_text(json.dumps(bank.to_dict(), indent=1))


def load_bank(path) -> WatermarkBank:
    return WatermarkBank.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    mode: int = 0

    def observable(self, n_u: int) -> np.ndarray:
        return self.x[:-n_u]

    def unobservable(self, n_u: int) -> np.ndarray:
        return self.x[-n_u:]


def initial_state(bank: WatermarkBank, x0=None) -> FilterState:
    x = np.zeros(bank.n_w) if x0 is None else np.array(x0, dtype=float).reshape(bank.n_w)
    return FilterState(x, select_mode(bank, x[-bank.n_u:]))


def select_mode(bank: WatermarkBank, x_u) -> int:
    if bank.N == 1:
        return 0
    if bank.partition is None:
        raise ValueError("a multi-mode bank needs a partition before it can switch")
    return classify(bank.partition, x_u)


def generator_step(bank: WatermarkBank, state: FilterState, y_p):
    """Returns ``(state_next, y_w, mode)``; the mode comes from the pre-update x_u."""
    y_p = np.asarray(y_p, dtype=float)
    if y_p.shape != (bank.p,) or state.x.shape != (bank.n_w,):
        raise ValueError("generator_step dimension mismatch")
    i = select_mode(bank, state.x[-bank.n_u:])
    m = bank.modes[i]
    y_w = m.C_w @ state.x + m.D_w @ y_p
    x_next = m.A_w @ state.x + m.B_w @ y_p
    return FilterState(x_next, i), y_w, i


def remover_step(bank: WatermarkBank, state: FilterState, y_w):
    """Returns ``(state_next, y_q, mode)`` evaluated on the remover's own state."""
    y_w = np.asarray(y_w, dtype=float)
    if y_w.shape != (bank.p,) or state.x.shape != (bank.n_w,):
        raise ValueError("remover_step dimension mismatch")
    i = select_mode(bank, state.x[-bank.n_u:])
    m = bank.modes[i]
    y_q = m.C_q @ state.x + m.D_q @ y_w
    x_next = m.A_q @ state.x + m.B_q @ y_w
    return FilterState(x_next, i), y_q, i


@dataclass
class PairReport:
    ok: bool
    violations: list
    observability_ranks: list
    max_identity_error: float

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": self.violations,
                "observability_ranks": self.observability_ranks,
                "max_identity_error": self.max_identity_error}


def _rel_err(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def verify_pair(bank: WatermarkBank, tol: float = 1e-10, cond_max: float = 1e6) -> PairReport:
    """Check inverse identities, Schur stability, unobservability and block zeros per mode."""
    bad = []
    ranks = []
    worst = 0.0
    n_w, n_u = bank.n_w, bank.n_u
    n_o = n_w - n_u
    A_wu, B_wu = bank.A_wu, bank.B_wu
    if np.any(A_wu - np.diag(np.diag(A_wu))):
        bad.append("A_wu is not diagonal")
    if np.any(np.abs(np.diag(A_wu)) > A_W_LIMIT):
        bad.append("|a_w| exceeds sqrt(0.5)")
    for m in bank.modes:
        tag = f"mode {m.index}"
        if not np.array_equal(m.A_w[n_o:, n_o:], A_wu) or not np.array_equal(m.B_w[n_o:], B_wu):
            bad.append(f"{tag}: unobservable block not shared")
        errs = {
            "D_q": _rel_err(m.D_q @ m.D_w, np.eye(bank.p)),
            "A_q": _rel_err(m.A_q, m.A_w - m.B_w @ np.linalg.solve(m.D_w, m.C_w)),
            "B_q": _rel_err(m.B_q, m.B_w @ m.D_q),
            "C_q": _rel_err(m.C_q, -m.D_q @ m.C_w),
        }
        worst = max(worst, *errs.values())
        for k, e in errs.items():
            if e > tol:
                bad.append(f"{tag}: inverse identity for {k} off by {e:.3g}")
        if np.linalg.cond(m.D_w) > cond_max:
            bad.append(f"{tag}: D_w condition number above {cond_max:g}")
        for name, A in (("A_w", m.A_w), ("A_q", m.A_q)):
            rho = spectral_radius(A)
            if rho >= 1.0:
                bad.append(f"{tag}: {name} not Schur (rho={rho:.6g})")
        if np.any(m.A_w[:n_o, n_o:]) or np.any(m.A_w[n_o:, :n_o]):
            bad.append(f"{tag}: A_w cross blocks not zero")
        if np.any(m.C_w[:, n_o:]):
            bad.append(f"{tag}: C_w unobservable columns not zero")
        if np.any(m.A_q[:n_o, n_o:]):
            bad.append(f"{tag}: A_q upper-right block not zero")
        r = numerical_rank(observability_matrix(m.C_w, m.A_w))
        ranks.append(r)
        if r > n_o:
            bad.append(f"{tag}: observability rank {r} > {n_o}")
    return PairReport(not bad, bad, ranks, worst)
