"""Command line entry point.

Exit codes: 0 on success, 2 for invalid configuration or input, 3 when
fitting or a numerical step fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import io
from .data import get_scenario, load_csv, make_grid, simulate_scenario
from .errors import FitError, InvalidArgumentError, NumericalError, ParseError
from .experiments import (ExperimentConfig, derive_seed, fit_and_band, read_config_file,
                          run_b_sweep, run_coverage_study, run_real_data, write_b_sweep,
                          write_coverage_report)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
REAL_DATA_MIN_NODE = 5
log = logging.getLogger("rsfband")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _target(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad target point {text!r}") from None


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p):
    # default=None everywhere so only flags given on the command line override the config file
    p.add_argument("--config", help="JSON or TOML file with ExperimentConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", type=int)
    p.add_argument("--csv")
    for name in ("n", "k", "B", "M", "P", "R", "mtry", "min_node_size", "n_jobs"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--smoothing", type=_bool)
    p.add_argument("--target", dest="targets", type=_target, action="append",
                   help="comma separated coordinates; repeat for several targets")
    p.add_argument("--out")
    p.add_argument("--delta-rule", dest="delta_rule", choices=("window", "censor_only"))
    p.add_argument("--lognormal-param", dest="lognormal_param", choices=("log", "moments"))
    p.add_argument("--critical", choices=("order", "grid"))
    p.add_argument("--bandwidth-rule", dest="bandwidth_rule", choices=("times", "values"))
    p.add_argument("--save-bands", dest="save_bands", type=_bool)
    p.add_argument("--time-col", dest="time_col")
    p.add_argument("--status-col", dest="status_col")
    p.add_argument("--covariates", type=lambda s: s.split(","))
    p.add_argument("--delimiter")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsfband", description="Matched-pair random survival forests "
                     "with unbiased covariance estimates and simultaneous bands.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("simulate", "write one simulated scenario dataset"),
                       ("fit", "fit one forest and build bands at the target points"),
                       ("coverage", "run a coverage study"),
                       ("bsweep", "repeat the coverage study for several B"),
                       ("real", "hold out subjects of a CSV dataset and band them")]:
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        if name == "bsweep":
            p.add_argument("--b-values", dest="b_values", type=int, nargs="+", required=True)
        if name == "real":
            p.add_argument("--held-out", dest="held_out", type=int, nargs="*", default=[])
    return parser


def config_from_args(args) -> ExperimentConfig:
    base = read_config_file(args.config) if args.config else {}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in vars(args).items():
        if key in names and value is not None:
            base[key] = value
    if args.command == "real":
        base.setdefault("min_node_size", REAL_DATA_MIN_NODE)
    if base.get("csv") is not None:
        base.setdefault("scenario", None)
    cfg = ExperimentConfig.from_dict(base)
    if cfg.seed is None:
        raise InvalidArgumentError("--seed is required")
    return cfg


def _simulate(cfg):
    spec = get_scenario(cfg.scenario, cfg.lognormal_param)
    data = simulate_scenario(spec, cfg.n, derive_seed(cfg.seed, 0, 0), delta_rule=cfg.delta_rule)
    out = Path(cfg.out)
    path = out if out.suffix == ".csv" else out / f"scenario{spec.id}_n{cfg.n}.csv"
    io.write_dataset(path, data)
    print(f"wrote {data.n} rows ({data.n_events} failures) to {path}")


def _fit(cfg):
    if cfg.csv is not None:
        data = load_csv(cfg.csv, cfg.schema())
        tau = cfg.tau if cfg.tau is not None else float(data.time.max())
    else:
        spec = get_scenario(cfg.scenario, cfg.lognormal_param)
        data = simulate_scenario(spec, cfg.n, derive_seed(cfg.seed, 0, 0),
                                 delta_rule=cfg.delta_rule)
        tau = cfg.tau if cfg.tau is not None else spec.tau
    cfg.validate(p=data.p)
    grid = make_grid(tau, cfg.P)
    results = fit_and_band(data, cfg, grid)
    out = Path(cfg.out)
    for j, res in enumerate(results):
        for method, band in res.bands.items():
            io.save_band(out / f"target{j}_{method}.csv", band, target=list(cfg.targets[j]),
                         neg_fraction=res.neg_fraction)
            io.save_matrix_binary(out / f"target{j}_{method}_cov.bin", band.covariance)
    io.write_json(out / "manifest.json", {"kind": "fit", "config": cfg.to_dict(),
                                          "config_hash": cfg.digest()})
    for j, res in enumerate(results):
        print(f"target {j}: raw diagonal negative share {res.neg_fraction:.3f}")
    print(f"wrote bands to {out}")


def _coverage(cfg):
    report = run_coverage_study(cfg, progress=_progress(cfg.R))
    out = write_coverage_report(report, cfg.out)
    for j, x in enumerate(cfg.targets):
        print(f"target {j} (x1={x[0]:g}): coverage projected "
              f"{report.coverage['projected'][j]:.3f} smoothed {report.coverage['smoothed'][j]:.3f}")
    print(f"{report.n_failed} failed replications; wrote {out}")


def _bsweep(cfg, b_values):
    reports = run_b_sweep(cfg, b_values, progress=_progress(cfg.R * len(b_values)))
    out = write_b_sweep(reports, cfg.out)
    for B, rep in reports.items():
        shares = " ".join(f"{v:.3f}" for v in rep.neg_fraction.mean(axis=0))
        print(f"B={B}: negative diagonal share per target {shares}")
    print(f"wrote {out}")


def _real(cfg, held_out):
    bands = run_real_data(cfg, held_out, cfg.out)
    for h, band in bands.items():
        print(f"subject {h}: zeta={band.zeta:.4f}")
    print(f"wrote {cfg.out}")


def _progress(total):
    done = [0]

    def report(rep):
        done[0] += 1
        if not rep.ok:
            log.warning("replication %d failed: %s", rep.index, rep.error)
        log.info("replication %d/%d", done[0], total)
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "simulate":
            _simulate(cfg)
        elif args.command == "fit":
            _fit(cfg)
        elif args.command == "coverage":
            _coverage(cfg)
        elif args.command == "bsweep":
            _bsweep(cfg, args.b_values)
        else:
            _real(cfg, args.held_out)
    except (InvalidArgumentError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
