"""Command line front door: ``hmwm <subcommand> [--config PATH] [--seed N] [--out DIR] [--steps T]``."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import harness as hz
from .designer import StabilityCertificate, certify_guas, design_bank
from .numerics import make_rng
from .watermark import load_bank, save_bank


def _config(args) -> hz.ScenarioConfig:
    cfg = hz.load_config(args.config)
    return cfg.with_overrides(seed=args.seed, steps=args.steps, out_dir=args.out,
                              N=getattr(args, "modes", None))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bank_with_partition(cfg, out: Path, ctrl):
    path = out / "bank.json"
    if path.exists():
        bank = load_bank(path)
    else:
        bank, cert = design_bank(cfg.design)
        hz.dump_json(cert.to_dict(), out / "certificate.json")
    st = None
    if bank.partition is None or not (out / "stats.json").exists():
        bank, st = hz.attach_partition(bank, cfg.plant, ctrl)
        save_bank(bank, path)
        hz.dump_json(hz.stats_to_dict(st), out / "stats.json")
    else:
        _, st = hz.attach_partition(bank, cfg.plant, ctrl)
    return bank, st


def cmd_design(args) -> int:
    cfg = _config(args)
    out = _out(args)
    bank, cert = design_bank(cfg.design)
    save_bank(bank, out / "bank.json")
    hz.dump_json(cert.to_dict(), out / "certificate.json")
    print(f"designed {bank.N} modes (n_w={bank.n_w}, n_u={bank.n_u}) seed={cfg.design.seed}; "
          f"margins W={cert.margin_w:.4g} Q={cert.margin_q:.4g}")
    return 0


def cmd_certify(args) -> int:
    out = _out(args)
    bank = load_bank(out / "bank.json")
    cert = certify_guas(bank)
    hz.dump_json(cert.to_dict(), out / "certificate.json")
    print(f"certificate ok={cert.ok} margins W={cert.margin_w:.4g} Q={cert.margin_q:.4g} p_q={cert.p_q}")
    return 0 if cert.ok else 1


def cmd_partition(args) -> int:
    cfg = _config(args)
    out = _out(args)
    ctrl = cfg.controller()
    path = out / "bank.json"
    bank = load_bank(path) if path.exists() else design_bank(cfg.design)[0]
    bank, st = hz.attach_partition(bank, cfg.plant, ctrl)
    save_bank(bank, path)
    hz.dump_json(hz.stats_to_dict(st), out / "stats.json")
    print(f"partition: {bank.partition.kind}, N={bank.N}, mu_xu={st.mu_xu.round(4).tolist()}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    ctrl = cfg.controller()
    bank, st = _bank_with_partition(cfg, out, ctrl)
    plant = cfg.plant if cfg.noise_scale == 1.0 else cfg.plant.scaled_noise(cfg.noise_scale)
    trace = hz.simulate(plant, ctrl, bank, cfg.steps, make_rng(cfg.noise_seed))
    trace.to_csv(out / "trace.csv")
    metrics = hz.compute_metrics(trace, bank, st)
    hz.dump_json(metrics.to_dict(), out / "metrics.json")
    print(f"simulated {cfg.steps} steps: {metrics.switching_events} switches, "
          f"median dwell {metrics.dwell_median}, alarm rate {metrics.alarm_rate:.4f}")
    return 0


def cmd_attack(args) -> int:
    cfg = _config(args)
    out = _out(args)
    trace = hz.SimTrace.from_csv(out / "trace.csv")
    N = cfg.design.N
    if (out / "bank.json").exists():
        N = load_bank(out / "bank.json").N
    report, cols = hz.run_attacks(trace, N, cfg.attack, make_rng(cfg.attack_seed))
    complexity = hz.complexity_table(N, [1, 5, 10, 15], cfg.plant.p, cfg.plant.m)
    hz.dump_json({"scores": report, "complexity": complexity}, out / "attack_report.json")
    hz.write_label_csv(cols, out / "labels.csv")
    for r in report:
        print(f"{r['method']:8s} h={r['horizon']}  RI={r['RI']:.4f}  JI={r['JI']:.4f}  FMI={r['FMI']:.4f}")
    return 0


def cmd_complexity(args) -> int:
    cfg = hz.load_config(args.config)
    s = args.modes or cfg.design.N
    rows = hz.complexity_table(s, args.horizons, cfg.plant.p, cfg.plant.m)
    if args.out:
        hz.dump_json(rows, _out(args) / "complexity.json")
    print(f"{'horizon':>8} {'IO models':>14} {'dim':>5} {'samples':>14}")
    for r in rows:
        print(f"{r['horizon']:>8} {r['io_models']:>14.5g} {r['io_dimension']:>5} {r['samples']:>14.5g}")
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    out = _out(args)
    ctrl = cfg.controller()
    bank = load_bank(out / "bank.json")
    cert = StabilityCertificate.from_dict(json.loads((out / "certificate.json").read_text()))
    trace = hz.SimTrace.from_csv(out / "trace.csv", detector_threshold=ctrl.threshold)
    _, st = hz.attach_partition(bank, cfg.plant, ctrl)
    rep = hz.verify_all(bank, cert, trace, ctrl, st)
    hz.dump_json(rep.to_dict(), out / "verify.json")
    for c in rep.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}: {c['detail']}")
    return 0 if rep.ok else 1


def _run_one(cfg: hz.ScenarioConfig) -> dict:
    trace, metrics, reports = hz.run_scenario(cfg)
    return {"seed": cfg.design.seed, "switching_events": metrics.switching_events,
            "dwell_median": metrics.dwell_median, "dwell_max": metrics.dwell_max,
            "alarm_rate": metrics.alarm_rate, "verify_ok": reports["verify"].ok,
            "attack": reports["attack"]}


def cmd_run_all(args) -> int:
    cfg = _config(args)
    if args.sweep and args.sweep > 1:
        base = cfg.design.seed
        cfgs = [cfg.with_overrides(seed=base + i, out_dir=str(Path(args.out) / f"seed_{base + i}"))
                for i in range(args.sweep)]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_one, cfgs))
        hz.dump_json(results, _out(args) / "sweep.json")
        ok = all(r["verify_ok"] for r in results)
        print(f"sweep of {len(results)} seeds, verify ok in {sum(r['verify_ok'] for r in results)}")
        return 0 if ok else 1
    res = _run_one(cfg)
    print(json.dumps({k: v for k, v in res.items() if k != "attack"}))
    for r in res["attack"]:
        print(f"{r['method']:8s} h={r['horizon']}  RI={r['RI']:.4f}  JI={r['JI']:.4f}  FMI={r['FMI']:.4f}")
    return 0 if res["verify_ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmwm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", default=None, help="scenario JSON (default: shipped example)")
        sp.add_argument("--seed", type=int, default=None, help="design seed override")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--steps", type=int, default=None, help="simulation length override")
        sp.set_defaults(func=fn)
        return sp

    add("design", cmd_design, "design and certify a watermark bank").add_argument(
        "--modes", type=int, default=None, help="number of modes N")
    add("certify", cmd_certify, "rebuild the stability certificate of bank.json")
    add("partition", cmd_partition, "attach the equal-probability partition to bank.json")
    add("simulate", cmd_simulate, "run the watermarked closed loop")
    add("attack", cmd_attack, "run identification attacks on trace.csv")
    cp = add("complexity", cmd_complexity, "print the IO identification complexity table")
    cp.add_argument("--modes", type=int, default=None)
    cp.add_argument("--horizons", type=int, nargs="+", default=[1, 5, 10, 15])
    cp.set_defaults(out=None)
    add("verify", cmd_verify, "check invariants on bank, certificate and trace")
    ra = add("run-all", cmd_run_all, "complete pipeline")
    ra.add_argument("--modes", type=int, default=None)
    ra.add_argument("--sweep", type=int, default=0, help="run this many consecutive seeds")
    ra.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
