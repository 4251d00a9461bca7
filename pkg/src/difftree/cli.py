"""Command-line entry point: one subcommand per pipeline stage, plus ``all``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import shutil
import sys
from pathlib import Path

from . import __version__, pipeline, qstat
from .errors import ConfigFormatError, ConfigInvalid, DifftreeError, StageFailure

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

# command-line flag -> config key
_FLAG_KEYS = {"seed": "seed", "iterations": "iterations", "restarts": "restarts",
              "cv_repeats": "cv_repeats", "permutations": "q_permutations"}


def _add_common(p: argparse.ArgumentParser, config_required=True):
    p.add_argument("-c", "--config", type=Path, required=config_required, help="pipeline INI file")
    p.add_argument("-o", "--output-dir", type=Path,
                   help=f"output directory (beats ${pipeline.OUTPUT_DIR_ENV} and the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int, help="Gibbs sweeps per fit")
    p.add_argument("--restarts", type=int, help="Gibbs chains per fit")
    p.add_argument("--cv-repeats", type=int)
    p.add_argument("--permutations", type=int, help="q-statistic permutations")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config setting, e.g. --set direction_k='8 9 10'")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="difftree", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in pipeline.STAGES:
        if name == "qstat":
            continue
        p = sub.add_parser(name, help=f"run the {name} stage (and whatever it needs)")
        _add_common(p)
    p = sub.add_parser("qstat", help="q-statistic stage, or a standalone test on a value,stratum CSV")
    _add_common(p, config_required=False)
    p.add_argument("--csv", type=Path, help="standalone mode: rows of value,stratum")
    p.add_argument("--log1p", action="store_true", help="standalone mode: transform values with log(1+y)")
    p = sub.add_parser("all", help="run every stage and print the report")
    _add_common(p)
    p = sub.add_parser("example", help="copy the bundled synthetic inputs and config into DIR")
    p.add_argument("directory", type=Path)
    return ap


def _overrides(args) -> dict:
    out = {}
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigInvalid({item: "expected KEY=VALUE"})
        out[key.strip()] = value.strip()
    return out


def _standalone_qstat(args) -> int:
    sample = qstat.load_sample_csv(args.csv, log1p=args.log1p)
    res = qstat.q_permutation_test(sample, args.permutations or 999, args.seed or 0)
    print(f"q={res.q:.6f} ssw={res.ssw:.6g} sst={res.sst:.6g} p={res.p_value:.6f} "
          f"n_perm={res.permutations} seed={res.seed}")
    return EXIT_OK


def _copy_example(target: Path) -> int:
    src = pipeline.DATA_DIR
    target.mkdir(parents=True, exist_ok=True)
    for name in ("corpus.txt", "taxonomy.ini", "label_map.ini", "truth.csv"):
        shutil.copy(src / "synthetic" / name, target / name)
    for name in ("stopwords.txt", "gazetteer.tsv", "economy_profiles.csv"):
        shutil.copy(src / name, target / name)
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(src / "synthetic" / "pipeline.ini", encoding="utf-8")
    for key, value in cp["inputs"].items():
        cp["inputs"][key] = Path(value).name
    with open(target / "pipeline.ini", "w", encoding="utf-8") as fh:
        cp.write(fh)
    print(f"wrote example inputs to {target}; run: difftree all -c {target / 'pipeline.ini'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)

    if args.command == "example":
        return _copy_example(args.directory)
    try:
        if args.command == "qstat" and args.csv is not None:
            return _standalone_qstat(args)
        if args.config is None:
            raise ConfigInvalid({"config": "required unless --csv is given"})
        cfg = pipeline.load_config(args.config, _overrides(args), args.output_dir)
    except (ConfigInvalid, ConfigFormatError) as exc:
        print(f"difftree: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DifftreeError, ValueError, OSError) as exc:
        print(f"difftree: {exc}", file=sys.stderr)
        return EXIT_STAGE

    stages = pipeline.STAGES if args.command == "all" else [args.command]
    try:
        manifest = pipeline.run_pipeline(cfg, stages)
    except StageFailure as exc:
        print(f"difftree: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ConfigInvalid as exc:
        print(f"difftree: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name in manifest.order:
        print(f"{name:9s} {manifest.stages[name]['status']}")
    if args.command in ("all", "report"):
        print()
        print((Path(cfg.output_dir) / "report.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
