"""Command-line entry point.

Every subcommand prints one ``key=value`` summary line on success.
Exit codes: 0 success, 1 usage or config error, 2 runtime stage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import localizer as loc
from . import pipeline as pl
from . import report as rpt
from . import tabgan
from .config import ConfigError, RunConfig, load_config
from .geometry import default_room
from .simlab import generate_corpus
from .spectra import Dataset, Provenance, SpectrumError, load_csv, save_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("vlcloc")


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        raw = cfg.to_dict()
        raw["seed"] = args.seed
        from .config import from_dict
        cfg = from_dict(raw)
    return cfg


def _run(stage: str, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except pl.PipelineError as exc:
        raise StageFailure(exc.stage, exc.cause) from exc
    except (OSError, ValueError, RuntimeError) as exc:
        raise StageFailure(stage, exc) from exc


def cmd_simulate(args) -> str:
    cfg = _config(args)
    ds = _run("simulate", generate_corpus, cfg.room, cfg.layout, cfg.lamps, cfg.sensor,
              cfg.protocol, pl.derive_seed(cfg.seed, pl.STAGE_CORPUS))
    _run("write", save_csv, ds, args.out)
    return f"samples={len(ds)}"


def cmd_train(args) -> str:
    cfg = _config(args)
    corpus = _run("load", load_csv, args.data)
    train, val, test = _run("split", pl.prepare_splits, cfg, corpus, cfg.seed)
    _, model, trials = _run("train", pl.search, cfg, train, val, cfg.seed)
    _run("write", loc.save_localizer, model, args.out)
    if args.trials:
        _run("write", loc.write_trial_log, trials, args.trials)
    test_cm = rpt.error_summary(model, test).mean_euclidean_cm if len(test) else float("nan")
    return (f"val_cm={model.metrics['val_mean_euclidean_cm']:.3f} test_cm={test_cm:.3f} "
            f"trials={len(trials)}")


def cmd_augment(args) -> str:
    cfg = _config(args)
    corpus = _run("load", load_csv, args.data)
    model = _run("load", loc.load_localizer, args.model)
    train, _, _ = _run("split", pl.prepare_splits, cfg, corpus, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gan, history = _run("gan", pl.train_augmenter, cfg, train, cfg.seed)
    tabgan.save_gan(gan, out / "gan.model.json")
    tabgan.write_training_log(history, out / "gan_log.csv")
    synth, kept, report, raw = _run("pseudo_label", pl.augment, cfg, model, gan, cfg.seed)
    save_csv(pl.synthetic_dataset(synth, raw), out / "synthetic.csv")
    save_csv(Dataset(tuple(kept), Provenance.SYNTHETIC), out / "pseudo.csv")
    save_csv(pl.mix(train, kept), out / "mixed.csv")
    rpt.heatmap_svg(report, cfg.room, out / "heatmap.svg")
    return f"generated={report.generated} kept={report.kept} discarded={report.discarded_oob}"


def cmd_pipeline(args) -> str:
    cfg = _config(args)
    out = args.out or cfg.output_dir
    result = _run("pipeline", pl.run_pipeline, cfg, cfg.seed, out)
    return result.summary_line()


def cmd_evaluate(args) -> str:
    room = load_config(args.config).room if args.config else default_room()[0]
    model = _run("load", loc.load_localizer, args.model)
    test = _run("load", load_csv, args.data)
    summary = _run("evaluate", rpt.error_summary, model, test)
    rdir = Path(args.report)
    rdir.mkdir(parents=True, exist_ok=True)
    rpt.write_summary_csv(summary.as_rows(), rdir / "summary.csv")
    rpt.write_per_rp_csv(summary, rdir / "per_rp.csv")
    rpt.scatter_svg(model, test, room, rdir / "scatter.svg")
    return (f"mean_euclidean_cm={summary.mean_euclidean_cm:.3f} median_cm={summary.median_cm:.3f} "
            f"p90_cm={summary.p90_cm:.3f} n={summary.n}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vlcloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON run config")
        sp.add_argument("--seed", type=int, help="override the config's master seed")

    sp = sub.add_parser("simulate", help="generate a simulated fingerprint corpus")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="random-search and train a localizer")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trials", help="optional trial log CSV path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("augment", help="train the GAN and pseudo-label its samples")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("pipeline", help="run the full baseline/augment/retrain pipeline")
    common(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("evaluate", help="score a localizer on a labeled CSV")
    sp.add_argument("--config", help="JSON run config (for the room outline)")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report", required=True)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        line = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageFailure as exc:
        print(f"stage {exc.stage} failed: {exc.__cause__}", file=sys.stderr)
        return EXIT_RUNTIME
    except SpectrumError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
