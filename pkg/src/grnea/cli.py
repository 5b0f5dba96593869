"""Command-line entry point: ``grnea <stage> --seed N --out DIR --benchmark NAME``.

Exit codes: 0 success, 1 validation failure (bad flags or config, a model
missing its floor, a vacuous filter, a rejected image), 2 missing artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import case_filter, pipeline, resvae
from .config import ConfigError, PipelineConfig
from .fieldbench.dataset import load_png

EXIT_OK, EXIT_INVALID, EXIT_MISSING = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--benchmark", required=True, choices=["fiber", "strain"])
    p.add_argument("--resolution", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--epochs", type=int, help="epochs for both ResVAEs")
    p.add_argument("--iterations", type=int, help="ARPSO iterations")
    p.add_argument("--threshold", type=int, help="fixed filter threshold C (skips calibration)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grnea", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "sample": "LHS-sample the benchmark and write the image dataset",
        "train": "train both ResVAEs and the LSSVR surrogates",
        "calibrate": "fit the case-filter threshold from reconstructions",
        "optimize": "run ARPSO in latent space and verify the optimum",
        "metrics": "print held-out metrics of the persisted models",
        "filter": "check images against the persisted case filter",
        "report": "write tables, text and a convergence plot from a finished run",
        "run": "sample, train, calibrate, optimize and report in one go",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "filter":
            p.add_argument("images", nargs="+", help="PNG files or directories of PNGs to check")
    return parser


def config_from_args(args) -> PipelineConfig:
    over: dict = {"seed": args.seed, "out": args.out, "benchmark": args.benchmark}
    for flag, key in (("resolution", "resolution"), ("n_samples", "n_samples"),
                      ("n_train", "n_train"), ("n_test", "n_test")):
        if getattr(args, flag) is not None:
            over[key] = getattr(args, flag)
    if args.epochs is not None:
        over["generator"] = {"epochs": args.epochs}
        over["reducer"] = {"epochs": args.epochs}
    if args.iterations is not None:
        over["arpso"] = {"iterations": args.iterations}
    if args.threshold is not None:
        over["filter"] = {"threshold": args.threshold}
    return PipelineConfig.load(args.config, over)


def _metrics(cfg: PipelineConfig) -> dict:
    paths = pipeline.RunPaths(cfg.out)
    paths.require(paths.manifest, paths.generator, paths.reducer, paths.surrogates)
    bench, _, test = pipeline._load_split(cfg, paths)
    if len(test) < 2:
        raise ConfigError("metrics need at least two held-out cases")
    from . import lssvr
    from .metrics import evaluate_regression, image_metrics
    gen = resvae.load_checkpoint(paths.generator, cfg.generator_config())
    red = resvae.load_checkpoint(paths.reducer, cfg.reducer_config())
    models = lssvr.load_models(paths.surrogates)
    f = resvae.extract_features(red, test.images)
    out = {"generator": image_metrics(test.images, resvae.reconstruct(gen, test.images)),
           "reducer": image_metrics(test.images, resvae.reconstruct(red, test.images))}
    for key, m in models.items():
        kind, name = key.split(":", 1)
        y = test.responses[name] if kind == "response" else test.params[:, bench.param_names.index(name)]
        out[key] = evaluate_regression(y, m.predict(f)).as_dict()
    return out


def _expand_images(items) -> list[Path]:
    out = []
    for item in map(Path, items):
        out.extend(sorted(item.glob("*.png")) if item.is_dir() else [item])
    return out


def _filter(cfg: PipelineConfig, images) -> list[dict]:
    paths = pipeline.RunPaths(cfg.out)
    images = _expand_images(images)
    paths.require(paths.filter, *images)
    filt = case_filter.FilterConfig.load(paths.filter)
    rows = []
    for path in images:
        img = load_png(path)
        if img.shape[:2] != filt.reference.shape[:2]:
            raise ConfigError(f"{path} is {img.shape[1]}x{img.shape[0]}, filter expects "
                              f"{filt.reference.shape[1]}x{filt.reference.shape[0]}")
        ok, n = case_filter.is_reasonable(img, filt)
        rows.append({"image": str(path), "accepted": ok, "noise": n, "threshold": filt.threshold})
    return rows


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    resvae.set_threads_from_env()
    try:
        cfg = config_from_args(args)
        cmd = args.command
        if cmd == "sample":
            print(pipeline.cmd_sample(cfg))
        elif cmd == "train":
            print(json.dumps(pipeline._jsonable(_summary(pipeline.cmd_train(cfg))), indent=2))
        elif cmd == "calibrate":
            res = pipeline.cmd_calibrate(cfg)
            print(json.dumps({k: v for k, v in pipeline._jsonable(res).items() if not k.endswith("_noise")},
                             indent=2))
        elif cmd == "optimize":
            res = pipeline.cmd_optimize(cfg)
            print(json.dumps(pipeline._jsonable({k: v for k, v in res.items()
                                                 if k not in ("latent_optimum", "gbest_trace")}), indent=2))
        elif cmd == "metrics":
            print(json.dumps(pipeline._jsonable(_metrics(cfg)), indent=2))
        elif cmd == "filter":
            rows = _filter(cfg, args.images)
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(["image", "noise", "threshold", "accepted"])
            for r in rows:
                writer.writerow([r["image"], r["noise"], r["threshold"], int(r["accepted"])])
            return EXIT_OK if all(r["accepted"] for r in rows) else EXIT_INVALID
        elif cmd == "report":
            from .report import build_report
            for p in build_report(cfg.out):
                print(p)
        elif cmd == "run":
            from .report import build_report
            pipeline.cmd_sample(cfg)
            failed = None
            try:
                pipeline.cmd_train(cfg)
            except pipeline.PipelineError as exc:
                failed = exc
            pipeline.cmd_calibrate(cfg)
            pipeline.cmd_optimize(cfg)
            for p in build_report(cfg.out):
                print(p)
            if failed is not None:
                raise failed
    except pipeline.MissingArtifacts as exc:
        print(f"grnea: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"grnea: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, pipeline.PipelineError, PermissionError, ValueError) as exc:
        print(f"grnea: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _summary(m: dict) -> dict:
    return {k: v for k, v in m.items() if not k.endswith("_history")}


if __name__ == "__main__":
    sys.exit(main())
