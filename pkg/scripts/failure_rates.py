"""Print the simulated failure rate of each scenario from a large draw."""
import argparse

from rsfband.data import get_scenario, simulate_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lognormal-param", choices=["log", "moments"], default="log")
    args = ap.parse_args()
    for sid in (1, 2, 3, 4):
        spec = get_scenario(sid, lognormal_param=args.lognormal_param)
        data = simulate_scenario(spec, args.n, seed=args.seed)
        print(f"scenario {sid}: failure rate {data.event.mean():.4f}")


if __name__ == "__main__":
    main()
