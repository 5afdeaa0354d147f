"""Command-line entry point: ``relevance-drift <command> [--config ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, RelevanceDriftError, StateError
from .features import extract_windows

log = logging.getLogger("relevance_drift")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STATE = 3


def _load_config(args):
    from .harness import ExperimentConfig

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def cmd_ingest(args) -> int:
    from .harness import load_label_map, read_recording_csv
    from .matrix import write_matrix_csv

    cfg = _load_config(args)
    src = Path(args.input or cfg.data.csv_dir or "")
    if not src.is_dir():
        raise ConfigError(f"input directory {src} does not exist")
    label_map = load_label_map(args.label_map or cfg.data.label_map)
    files = sorted(src.glob("*.csv"))
    if not files:
        raise ConfigError(f"no CSV recordings in {src}")
    out = Path(cfg.output_dir) / "features"
    for f in files:
        rec = read_recording_csv(f, label_map, cfg.activity_names)
        m = extract_windows(rec, cfg.windowing)
        write_matrix_csv(m, out / f"{rec.subject_id}.csv")
        log.info("%s: %d windows x %d features", rec.subject_id, m.n_rows, m.n_features)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .drift_lab import generate_synthetic
    from .harness import write_recording_csv
    from ._seeding import derive_seed

    cfg = _load_config(args)
    out = Path(cfg.output_dir) / "recordings"
    recs = generate_synthetic(cfg.synthetic_config(), derive_seed(cfg.seed, "synthetic"))
    for rec in recs:
        write_recording_csv(rec, out / f"{rec.subject_id}.csv")
    names = list(cfg.activity_names)
    (out / "label_map.json").write_text(json.dumps({a: i for i, a in enumerate(names)}, indent=2) + "\n")
    log.info("wrote %d recordings to %s", len(recs), out)
    return EXIT_OK


def cmd_protocol(args) -> int:
    from .harness import run_protocol

    cfg = _load_config(args)
    out = run_protocol(cfg, jobs=args.jobs)
    log.info("protocol artifacts in %s", out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import run_sweep

    path = run_sweep(_load_config(args), jobs=args.jobs)
    log.info("sweep report %s", path)
    return EXIT_OK


def cmd_incremental(args) -> int:
    from .harness import run_incremental

    path = run_incremental(_load_config(args), jobs=args.jobs)
    log.info("incremental log %s", path)
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import run_report

    for p in run_report(_load_config(args)):
        log.info("wrote %s", p)
    return EXIT_OK


COMMANDS = {
    "ingest": (cmd_ingest, "extract feature matrices from a directory of recording CSVs"),
    "synth": (cmd_synth, "write synthetic recordings as CSV plus a label map"),
    "protocol": (cmd_protocol, "clean and worst-case models, signatures and thresholds per subject"),
    "sweep": (cmd_sweep, "corruption-ratio sweep over every scenario"),
    "incremental": (cmd_incremental, "chunked self-training run with drift checks"),
    "report": (cmd_report, "per-figure long-format CSVs from the sweep"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--out", default=None, help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    # global flags live on each subcommand so that they may follow it
    parser = argparse.ArgumentParser(prog="relevance-drift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        if name == "ingest":
            p.add_argument("--input", help="directory of recording CSVs (defaults to data.csv_dir)")
            p.add_argument("--label-map", help="JSON mapping activity names to class ids")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command][0](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except RelevanceDriftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
