"""Command-line interface for the plume pipeline.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  PLUME_SEED overrides the configured global seed.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from plume import __version__
from plume.config import dump_config, load_config
from plume.errors import ConfigurationError, DataError, NumericalError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

logger = logging.getLogger("plume")


def _add_common(p):
    p.add_argument("--config", help="pipeline config JSON (defaults embedded)")
    p.add_argument("--jobs", type=int, default=None,
                   help="intra-stage parallelism (default: config value)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plume",
        description="Synthetic volcanic-plume campaign, reduced-order "
                    "surrogate training, and Bayesian source inversion")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="print or write the effective config")
    p.add_argument("--config")
    p.add_argument("--dump", action="store_true",
                   help="dump the effective configuration as JSON")
    p.add_argument("--out", help="write to a file instead of stdout")

    p = sub.add_parser("gen-data", help="generate the synthetic campaign")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset directory")

    p = sub.add_parser("fit-rbf", help="fit RBF series to all fields")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--nrbf", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reduce-wind", help="localized wind KDE + PCA")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the flow map")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--wind", required=True)
    p.add_argument("--P", type=int, default=None, dest="look_ahead")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-aod", help="fit the sulfate-to-AOD map")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--flowmap", required=True,
                   help="flowmap JSON path (or directory holding flowmap.json)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build-noise",
                       help="background/BAE statistics + synthetic observations")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--wind", required=True)
    p.add_argument("--model", required=True, help="model.json path")
    p.add_argument("--out", required=True)

    p = sub.add_parser("invert", help="MAP + Laplace inversion")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--noise-model", required=True, dest="noise")
    p.add_argument("--obs", required=True)
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("diagnose", help="validation studies")
    _add_common(p)
    p.add_argument("--what", default="reaction-rates,mahalanobis,mass-loss,rank-study",
                   help="comma-separated subset of "
                        "reaction-rates|mahalanobis|mass-loss|rank-study")
    p.add_argument("--data", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--wind", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--inversion", default=None,
                   help="inversion report directory (for error cross-checks)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="figures + summary for a workspace")
    _add_common(p)
    p.add_argument("--workspace", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run-all", help="run the full pipeline in a workspace")
    _add_common(p)
    p.add_argument("--workspace", required=True)
    p.add_argument("--force", action="store_true",
                   help="ignore stage manifests and rerun everything")
    return ap


def _apply_overrides(cfg, args):
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "nrbf", None) is not None:
        cfg.rbf.n_rbf = args.nrbf
    if getattr(args, "tau", None) is not None:
        cfg.wind.tau_g = args.tau
    if getattr(args, "rank", None) is not None:
        cfg.wind.rank = args.rank
    if getattr(args, "look_ahead", None) is not None:
        cfg.flowmap.P = args.look_ahead
    if getattr(args, "starts", None) is not None:
        cfg.inversion.n_starts = args.starts
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def run(args) -> int:
    from plume import pipeline

    cfg = _apply_overrides(load_config(args.config), args)
    jobs = cfg.jobs

    if args.command == "config":
        text = json.dumps(cfg.to_dict(), sort_keys=True, indent=2)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
        return 0
    if args.command == "gen-data":
        pipeline.stage_gen_data(cfg, args.out, jobs)
        return 0
    if args.command == "fit-rbf":
        pipeline.stage_fit_rbf(cfg, args.data, args.out, jobs)
        return 0
    if args.command == "reduce-wind":
        pipeline.stage_reduce_wind(cfg, args.data, args.fits, args.out, jobs)
        return 0
    if args.command == "train":
        out = Path(args.out)
        if out.suffix == ".json":
            pipeline.stage_train(cfg, args.data, args.fits, args.wind,
                                 out.parent, jobs, filename=out.name)
        else:
            pipeline.stage_train(cfg, args.data, args.fits, args.wind, out,
                                 jobs)
        return 0
    if args.command == "fit-aod":
        out = Path(args.out)
        if out.suffix == ".json":
            pipeline.stage_fit_aod(cfg, args.data, args.fits, args.flowmap,
                                   out.parent, jobs, filename=out.name)
        else:
            pipeline.stage_fit_aod(cfg, args.data, args.fits, args.flowmap,
                                   out, jobs)
        return 0
    if args.command == "build-noise":
        pipeline.stage_build_noise(cfg, args.data, args.fits, args.wind,
                                   args.model, args.out, jobs)
        return 0
    if args.command == "invert":
        from plume import storage

        rep = pipeline.invert_observation(cfg, args.model, args.noise,
                                          args.obs, n_starts=args.starts,
                                          seed=args.seed)
        storage.dump_json(rep, args.out)
        return 0
    if args.command == "diagnose":
        what = tuple(w.strip() for w in args.what.split(",") if w.strip())
        valid = {"reaction-rates", "mahalanobis", "mass-loss", "rank-study"}
        bad = set(what) - valid
        if bad:
            raise ConfigurationError(f"unknown diagnose targets: {sorted(bad)}")
        pipeline.stage_diagnose(cfg, args.data, args.fits, args.wind,
                                args.model, args.out,
                                inversion_dir=args.inversion, jobs=jobs,
                                what=what)
        return 0
    if args.command == "report":
        from plume.report import stage_report

        stage_report(cfg, args.workspace, args.out)
        return 0
    if args.command == "run-all":
        results = pipeline.run_all(cfg, args.workspace, force=args.force,
                                   jobs=jobs)
        for r in results:
            status = "skipped (manifest hit)" if r.get("skipped") else "done"
            logger.info("%-12s %s", r["stage"], status)
        return 0
    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigurationError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
