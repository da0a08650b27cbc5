"""Scenario pipeline: design -> certify -> partition -> simulate -> attack -> verify."""
from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import adversary as adv
from .designer import DesignSpec, StabilityCertificate, certify_guas, design_bank, lyapunov_margin
from .numerics import make_rng
from .partitioner import SteadyStats, build_partition, classify_many, steady_stats
from .plant_loop import ControllerConfig, PlantModel, controller_step, detector_step, make_controller, plant_step
from .watermark import FilterState, WatermarkBank, generator_step, remover_step, select_mode, verify_pair


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.__cause__ = exc


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class AttackSettings:
    horizons: dict = field(default_factory=lambda: {"kmeans": [1, 2, 3], "klinreg": [1, 2]})
    restarts: int = 10
    start: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantModel
    K: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    design: DesignSpec
    detector_alpha: float = 0.05
    L: np.ndarray | None = None
    steps: int = 1000
    noise_scale: float = 1.0
    noise_seed: int = 1
    attack_seed: int = 2
    attack: AttackSettings = field(default_factory=AttackSettings)
    x_q0_offset: float = 0.0
    out_dir: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.design.p != self.plant.p:
            raise ValueError("design output dimension differs from the plant's")

    def controller(self) -> ControllerConfig:
        return make_controller(self.plant, self.K, self.x_ref, self.u_ref,
                               self.detector_alpha, self.L)

    def with_overrides(self, seed: int | None = None, steps: int | None = None,
                       out_dir: str | None = None, N: int | None = None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, design=replace(cfg.design, seed=int(seed)))
        if N is not None:
            cfg = replace(cfg, design=replace(cfg.design, N=int(N)))
        if steps is not None:
            cfg = replace(cfg, steps=int(steps))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg


def example_config_dict() -> dict:
    text = resources.files("hmwm").joinpath("data/example_config.json").read_text()
    return json.loads(text)


def config_from_dict(d: dict) -> ScenarioConfig:
    pl = d["plant"]
    plant = PlantModel(pl["A"], pl["B"], pl["C"], pl["Sigma_w"], pl["Sigma_v"])
    ct = d["controller"]
    ds = dict(d.get("design", {}))
    seeds = d.get("seeds", {})
    ds.setdefault("p", plant.p)
    ds.setdefault("m", plant.m)
    ds["seed"] = int(seeds.get("design", ds.get("seed", 0)))
    sim = d.get("simulation", {})
    at = d.get("attack", {})
    attack = AttackSettings(
        horizons={k: list(v) for k, v in at.get("horizons", AttackSettings().horizons).items()},
        restarts=int(at.get("restarts", 10)),
        start=int(at.get("start", 0)),
    )
    return ScenarioConfig(
        plant=plant,
        K=np.array(ct["K"], dtype=float),
        x_ref=np.array(ct["x_ref"], dtype=float),
        u_ref=np.array(ct["u_ref"], dtype=float),
        detector_alpha=float(ct.get("detector_alpha", 0.05)),
        L=None if ct.get("L") is None else np.array(ct["L"], dtype=float),
        design=DesignSpec(**ds),
        steps=int(sim.get("steps", 1000)),
        noise_scale=float(sim.get("noise_scale", 1.0)),
        x_q0_offset=float(sim.get("x_q0_offset", 0.0)),
        noise_seed=int(seeds.get("noise", 1)),
        attack_seed=int(seeds.get("attack", 2)),
        attack=attack,
        out_dir=d.get("out_dir"),
    )


def load_config(path=None) -> ScenarioConfig:
    d = example_config_dict() if path is None else json.loads(Path(path).read_text())
    return config_from_dict(d)


# ---------------------------------------------------------------- traces

@dataclass
class SimTrace:
    x_p: np.ndarray
    y_p: np.ndarray
    u: np.ndarray
    y_w: np.ndarray
    y_q: np.ndarray
    r: np.ndarray
    chi2_stat: np.ndarray
    alarm: np.ndarray
    mode_w: np.ndarray
    mode_q: np.ndarray
    x_w: np.ndarray
    x_q: np.ndarray

    @property
    def steps(self) -> int:
        return self.x_p.shape[0]

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.steps)

    _GROUPS = ("x_p", "y_p", "u", "y_w", "y_q", "r")

    def header(self) -> list:
        cols = ["k"]
        for g in self._GROUPS:
            cols += [f"{g}{j + 1}" for j in range(getattr(self, g).shape[1])]
        cols += ["chi2_stat", "mode_w", "mode_q"]
        for g in ("x_w", "x_q"):
            cols += [f"{g}{j + 1}" for j in range(getattr(self, g).shape[1])]
        return cols

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.header())
        for k in range(self.steps):
            row = [k]
            for g in self._GROUPS:
                row += [repr(float(v)) for v in getattr(self, g)[k]]
            row += [repr(float(self.chi2_stat[k])), int(self.mode_w[k]), int(self.mode_q[k])]
            row += [repr(float(v)) for v in self.x_w[k]]
            row += [repr(float(v)) for v in self.x_q[k]]
            wr.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, detector_threshold: float | None = None) -> "SimTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=float)

        def group(prefix):
            idx = [i for i, h in enumerate(head)
                   if h.startswith(prefix) and h[len(prefix):].isdigit()]
            return body[:, idx]

        stat = body[:, head.index("chi2_stat")]
        alarm = np.zeros_like(stat, dtype=bool) if detector_threshold is None else stat > detector_threshold
        return cls(group("x_p"), group("y_p"), group("u"), group("y_w"), group("y_q"), group("r"),
                   stat, alarm, body[:, head.index("mode_w")].astype(int),
                   body[:, head.index("mode_q")].astype(int), group("x_w"), group("x_q"))


def simulate(plant: PlantModel, ctrl: ControllerConfig, bank: WatermarkBank | None, steps: int,
             rng: np.random.Generator, x_p0=None, x_hat0=None, x_w0=None, x_q0=None) -> SimTrace:
    """Closed loop with (or, for ``bank=None``, without) the watermark pair.

    Wiring per step: u from x_hat, plant emits y_p, generator emits y_w,
    remover emits y_q, controller consumes y_q.  Without a bank y_q = y_w = y_p.
    """
    n, m, p = plant.n, plant.m, plant.p
    x_p = ctrl.x_ref.copy() if x_p0 is None else np.array(x_p0, dtype=float)
    x_hat = ctrl.x_ref.copy() if x_hat0 is None else np.array(x_hat0, dtype=float)
    n_w = bank.n_w if bank is not None else 0
    if bank is not None:
        xw = np.zeros(n_w) if x_w0 is None else np.array(x_w0, dtype=float)
        xq = xw.copy() if x_q0 is None else np.array(x_q0, dtype=float)
        sw, sq = FilterState(xw), FilterState(xq)
    thr = ctrl.threshold
    out = {k: np.zeros((steps, d)) for k, d in
           (("x_p", n), ("y_p", p), ("u", m), ("y_w", p), ("y_q", p), ("r", p),
            ("x_w", n_w), ("x_q", n_w))}
    stat = np.zeros(steps)
    mode_w = np.full(steps, -1, dtype=int)
    mode_q = np.full(steps, -1, dtype=int)
    for k in range(steps):
        u = -ctrl.K @ (x_hat - ctrl.x_ref) + ctrl.u_ref
        out["x_p"][k] = x_p
        x_p, y_p = plant_step(plant, x_p, u, rng)
        if bank is not None:
            out["x_w"][k], out["x_q"][k] = sw.x, sq.x
            sw, y_w, mode_w[k] = generator_step(bank, sw, y_p)
            sq, y_q, mode_q[k] = remover_step(bank, sq, y_w)
        else:
            y_w = y_q = y_p
        x_hat, _, r = controller_step(ctrl, plant, x_hat, y_q)
        stat[k], _ = detector_step(ctrl, ctrl.Sigma_r, r)
        out["y_p"][k], out["u"][k], out["y_w"][k], out["y_q"][k], out["r"][k] = y_p, u, y_w, y_q, r
    return SimTrace(out["x_p"], out["y_p"], out["u"], out["y_w"], out["y_q"], out["r"],
                    stat, stat > thr, mode_w, mode_q, out["x_w"], out["x_q"])


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class DwellStats:
    events: int
    dwells: list
    median: float
    max: int


def dwell_stats(modes) -> DwellStats:
    seq = np.asarray(modes)
    if seq.size == 0:
        raise ValueError("empty mode sequence")
    change = np.flatnonzero(seq[1:] != seq[:-1]) + 1
    bounds = np.r_[0, change, seq.size]
    dwells = np.diff(bounds).astype(int).tolist()
    return DwellStats(int(change.size), dwells, float(statistics.median(dwells)), int(max(dwells)))


@dataclass
class RunMetrics:
    mode_frequencies: list
    switching_events: int
    dwell_median: float
    dwell_max: int
    dwell_times: list
    max_state_sync_error: float
    max_output_sync_error: float
    mode_mismatches: int
    alarm_rate: float
    sigma_xu_analytic: list
    sigma_xu_empirical: list
    sigma_xu_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def empirical_xu_cov(trace: SimTrace, n_u: int, burn_in: int = 100) -> np.ndarray:
    xu = trace.x_w[burn_in:, -n_u:]
    return np.atleast_2d(np.cov(xu, rowvar=False))


def compute_metrics(trace: SimTrace, bank: WatermarkBank, st: SteadyStats,
                    burn_in: int = 100) -> RunMetrics:
    freq = np.bincount(trace.mode_w, minlength=bank.N) / trace.steps
    dw = dwell_stats(trace.mode_w)
    burn = min(burn_in, max(trace.steps - 3, 0))
    emp = empirical_xu_cov(trace, bank.n_u, burn)
    gap = float(np.linalg.norm(emp - st.Sigma_xu) / np.linalg.norm(st.Sigma_xu))
    return RunMetrics(
        mode_frequencies=freq.tolist(),
        switching_events=dw.events,
        dwell_median=dw.median,
        dwell_max=dw.max,
        dwell_times=dw.dwells,
        max_state_sync_error=float(np.max(np.abs(trace.x_w - trace.x_q))),
        max_output_sync_error=float(np.max(np.abs(trace.y_p - trace.y_q))),
        mode_mismatches=int(np.sum(trace.mode_w != trace.mode_q)),
        alarm_rate=float(np.mean(trace.alarm)),
        sigma_xu_analytic=st.Sigma_xu.tolist(),
        sigma_xu_empirical=emp.tolist(),
        sigma_xu_gap=gap,
    )


def alarm_band(alpha: float, steps: int, n_sigma: float = 3.0) -> float:
    return n_sigma * float(np.sqrt(alpha * (1 - alpha) / steps))


# ---------------------------------------------------------------- pipeline stages

def prepare_bank(cfg: ScenarioConfig, ctrl: ControllerConfig | None = None):
    """Design, certify and partition; returns ``(bank, certificate, stats)``."""
    ctrl = cfg.controller() if ctrl is None else ctrl
    try:
        bank, cert = design_bank(cfg.design)
    except Exception as exc:
        raise StageError("design", exc) from exc
    try:
        bank, st = attach_partition(bank, cfg.plant, ctrl)
    except Exception as exc:
        raise StageError("partition", exc) from exc
    return bank, cert, st


def attach_partition(bank: WatermarkBank, plant: PlantModel, ctrl: ControllerConfig):
    """Recompute steady statistics and the partition, e.g. after a reference change."""
    st = steady_stats(plant, ctrl, bank.A_wu, bank.B_wu)
    return bank.with_partition(build_partition(st, bank.N)), st


def run_attacks(trace: SimTrace, N: int, settings: AttackSettings, rng: np.random.Generator):
    """Returns ``(report, label_columns)`` for every method and horizon in ``settings``."""
    ds = adv.AttackDataset.from_trace(trace, settings.start)
    attacks = {"kmeans": adv.kmeans_attack, "klinreg": adv.klinreg_attack}
    report = []
    columns = {"k": np.arange(settings.start, trace.steps), "true": ds.labels}
    for method, horizons in settings.horizons.items():
        fn = attacks[method]
        for nu in horizons:
            rs = adv.build_regressors(ds, nu)
            res = fn(rs.without_labels(), N, restarts=settings.restarts, rng=rng)
            score = adv.score_clustering(rs.labels, res.labels)
            report.append({"method": method, "horizon": nu, **score.to_dict(),
                           "objective": res.objective, "flags": res.flags})
            est = np.full(ds.y_w.shape[0], -1)
            est[nu:] = res.labels
            columns[f"{method}_h{nu}"] = est
    return report, columns


def write_label_csv(columns: dict, path) -> None:
    keys = list(columns)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(keys)
        for row in zip(*(columns[k] for k in keys)):
            wr.writerow([int(v) for v in row])


def complexity_table(s: int, horizons, p: int, m: int) -> list:
    return [adv.io_complexity(s, nu, p, m).to_dict() for nu in horizons]


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"check": name, "passed": bool(passed), "detail": detail})

    @property
    def ok(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def failed(self) -> list:
        return [c["check"] for c in self.checks if not c["passed"]]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": self.checks}


def verify_all(bank: WatermarkBank, cert: StabilityCertificate, trace: SimTrace,
               ctrl: ControllerConfig | None = None, st: SteadyStats | None = None,
               mc_draws: int = 100_000, seed: int = 12345) -> VerifyReport:
    """Re-check every invariant on concrete artifacts; failures are listed, not raised."""
    rep = VerifyReport()
    pair = verify_pair(bank)
    rep.add("pair_identities", pair.ok, "; ".join(pair.violations) or
            f"max identity error {pair.max_identity_error:.3g}")
    mw = min(lyapunov_margin(m.A_w, cert.P_w) for m in bank.modes)
    mq = min(lyapunov_margin(m.A_q, cert.P_q) for m in bank.modes)
    pd = np.linalg.eigvalsh(cert.P_w).min() > 0 and np.linalg.eigvalsh(cert.P_q).min() > 0
    rep.add("guas_certificates", pd and mw > 0 and mq > 0, f"margins W {mw:.4g}, Q {mq:.4g}")

    if st is not None and bank.partition is not None:
        rng = make_rng(seed)
        pts = rng.multivariate_normal(st.mu_xu, st.Sigma_xu, size=mc_draws)
        freq = np.bincount(classify_many(bank.partition, pts), minlength=bank.N) / mc_draws
        sigma = np.sqrt((1 / bank.N) * (1 - 1 / bank.N) / mc_draws)
        dev = float(np.max(np.abs(freq - 1 / bank.N)))
        rep.add("partition_uniformity", dev <= 4 * sigma, f"max deviation {dev:.4g} (4 sigma {4 * sigma:.4g})")

    mism = int(np.sum(trace.mode_w != trace.mode_q))
    e_x = float(np.max(np.abs(trace.x_w - trace.x_q)))
    e_y = float(np.max(np.abs(trace.y_p - trace.y_q)))
    rep.add("mode_sync", mism == 0, f"{mism} mismatched steps")
    rep.add("state_sync", e_x <= 1e-9, f"max |x_w - x_q| = {e_x:.3g}")
    rep.add("output_identity", e_y <= 1e-8, f"max |y_p - y_q| = {e_y:.3g}")

    if ctrl is not None:
        rate = float(np.mean(trace.alarm))
        band = alarm_band(ctrl.detector_alpha, trace.steps)
        rep.add("detector_alarm_rate", abs(rate - ctrl.detector_alpha) <= band,
                f"rate {rate:.4f}, alpha {ctrl.detector_alpha} +/- {band:.4f}")
    return rep


def run_scenario(cfg: ScenarioConfig, write: bool = True):
    """Full pipeline; returns ``(trace, metrics, reports)`` and writes files to ``cfg.out_dir``."""
    try:
        ctrl = cfg.controller()
    except Exception as exc:
        raise StageError("controller", exc) from exc
    bank, cert, st = prepare_bank(cfg, ctrl)
    sim_plant = cfg.plant if cfg.noise_scale == 1.0 else cfg.plant.scaled_noise(cfg.noise_scale)
    x_q0 = None
    if cfg.x_q0_offset:
        x_q0 = np.full(bank.n_w, cfg.x_q0_offset)
    try:
        trace = simulate(sim_plant, ctrl, bank, cfg.steps, make_rng(cfg.noise_seed), x_q0=x_q0)
        metrics = compute_metrics(trace, bank, st)
    except Exception as exc:
        raise StageError("simulate", exc) from exc
    try:
        attack_report, label_cols = run_attacks(trace, bank.N, cfg.attack, make_rng(cfg.attack_seed))
    except Exception as exc:
        raise StageError("attack", exc) from exc
    plant = cfg.plant
    complexity = complexity_table(bank.N, [1, 5, 10, 15], plant.p, plant.m)
    verify = verify_all(bank, cert, trace, ctrl, st)
    reports = {
        "bank": bank,
        "certificate": cert,
        "stats": st,
        "attack": attack_report,
        "labels": label_cols,
        "complexity": complexity,
        "verify": verify,
    }
    if write and cfg.out_dir:
        write_outputs(cfg.out_dir, trace, metrics, reports)
    return trace, metrics, reports


def stats_to_dict(st: SteadyStats) -> dict:
    return {k: np.asarray(v).tolist() for k, v in asdict(st).items()}


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_outputs(out_dir, trace: SimTrace, metrics: RunMetrics, reports: dict) -> None:
    from .watermark import save_bank

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_bank(reports["bank"], out / "bank.json")
    dump_json(reports["certificate"].to_dict(), out / "certificate.json")
    dump_json(stats_to_dict(reports["stats"]), out / "stats.json")
    trace.to_csv(out / "trace.csv")
    dump_json(metrics.to_dict(), out / "metrics.json")
    dump_json({"scores": reports["attack"], "complexity": reports["complexity"]},
              out / "attack_report.json")
    write_label_csv(reports["labels"], out / "labels.csv")
    dump_json(reports["complexity"], out / "complexity.json")
    dump_json(reports["verify"].to_dict(), out / "verify.json")
