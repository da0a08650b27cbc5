"""Clustering scores of the eavesdropper attacks, per design seed."""
import argparse
import json

from hmwm.harness import load_config, prepare_bank, run_attacks, simulate
from hmwm.numerics import make_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    table = []
    for seed in args.seeds:
        cfg = load_config(args.config).with_overrides(seed=seed)
        ctrl = cfg.controller()
        bank, _, _ = prepare_bank(cfg, ctrl)
        tr = simulate(cfg.plant, ctrl, bank, args.steps, make_rng(cfg.noise_seed))
        report, _ = run_attacks(tr, bank.N, cfg.attack, make_rng(cfg.attack_seed))
        for r in report:
            print(f"seed {seed:3d}  {r['method']:8s} nu={r['horizon']}  "
                  f"RI {r['RI']:.4f}  JI {r['JI']:.4f}  FMI {r['FMI']:.4f}")
            table.append({"seed": seed, **{k: r[k] for k in ("method", "horizon", "RI", "JI", "FMI")}})
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
