"""IO-model identification complexity for s modes and growing horizons."""
import argparse
import json

from hmwm.adversary import io_complexity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--modes", type=int, default=6)
    ap.add_argument("--p", type=int, default=2)
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--horizons", type=int, nargs="+", default=[1, 5, 10, 15])
    ap.add_argument("--json", action="store_true", help="emit exact integers as JSON")
    args = ap.parse_args()
    rows = [io_complexity(args.modes, nu, args.p, args.m) for nu in args.horizons]
    if args.json:
        print(json.dumps([r.to_dict() for r in rows], indent=2))
        return
    print(f"{'horizon':>7} {'IO models':>12} {'dim':>4} {'samples':>12}")
    for r in rows:
        print(f"{r.horizon:>7} {r.io_models:>12.5g} {r.io_dimension:>4} {r.samples:>12.5g}")


if __name__ == "__main__":
    main()
