"""Command-line entry point: ``cdrtarget <command> [--config=FILE] [--key=value ...]``.

Dotted keys override the JSON config (``--models.cdr_family=random_forest``);
values are read as JSON when they parse, otherwise as plain strings. The
config file defaults to $CDRTARGET_CONFIG. Failures print one JSON error
record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from . import pipeline
from .config import CONFIG_ENV_VAR, ConfigError, load_config

COMMANDS = ("simulate", "ingest", "extract", "wealth", "train", "evaluate", "cost", "reproduce")

EXIT_ERROR = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def _value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_overrides(extra: list[str]) -> dict:
    out = {}
    for tok in extra:
        if not tok.startswith("--") or "=" not in tok:
            raise UsageError(f"expected --key=value, got {tok!r}")
        key, _, val = tok[2:].partition("=")
        if not key:
            raise UsageError(f"empty key in {tok!r}")
        out[key] = _value(val)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cdrtarget",
        description="Poverty targeting from phone metadata on synthetic or supplied data.",
        epilog=f"Any other --key=value sets a config field (dotted for nesting). "
               f"${CONFIG_ENV_VAR} supplies the default --config.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default=None, help="JSON run-config file")
    ap.add_argument("--force", action="store_true",
                    help="overwrite outputs left by another or an unfinished run")
    ap.add_argument("--model", default=None,
                    help="train: one model family, or 'all' for models.families")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _error_record(command, exc) -> dict:
    rec = {"status": "error", "command": command, "error": type(exc).__name__,
           "message": str(exc)}
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path is not None:
        rec["path"] = str(path)
    return rec


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    # argparse would take --key=value tokens as abbreviations of known flags
    known = [a for a in argv if not (a.startswith("--") and a.split("=")[0][2:] not in
                                     ("config", "force", "model", "verbose"))]
    extra = [a for a in argv if a not in known]
    try:
        args = ap.parse_args(known)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        overrides = parse_overrides(extra)
        cfg = load_config(args.config, overrides)
        if args.model is not None and args.command != "train":
            raise UsageError("--model applies to the train command only")
        man = pipeline.run_stage(args.command, cfg, force=args.force, model=args.model)
    except (UsageError, ConfigError) as e:
        print(json.dumps(_error_record(args.command, e), sort_keys=True), file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # every failure becomes a machine-readable record
        if args.verbose:
            logging.exception("command failed")
        print(json.dumps(_error_record(args.command, e), sort_keys=True), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps({"status": "ok", "command": args.command,
                      "config_hash": man["config_hash"], "output_dir": cfg.paths.output_dir},
                     sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
