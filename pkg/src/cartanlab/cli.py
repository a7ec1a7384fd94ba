"""Command line entry point: ``cartanlab run --config <file> [--out dir] [--seed u64] [--threads k]``.

Exit codes: 0 when the verdict is PASS or CONVERGES, 2 when it is FAILS (the
experiment ran and exhibited a failure or a hypothesis violation), 1 on any
error (unreadable or invalid config, solver or frame failures).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from importlib import resources

import jsonschema

from . import __version__
from .cclab import _plain, dumps
from .errors import CartanLabError, ConfigurationError
from .experiments import DEFAULT_SEED, run_experiment
from .gauge import ConnectionField

EXIT_OK, EXIT_ERROR, EXIT_FAILS = 0, 1, 2
U64_MAX = 2 ** 64 - 1


def load_schema() -> dict:
    text = resources.files("cartanlab").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical (sorted, compact) JSON of the config."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _offset_to_line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def locate(text: str, path) -> tuple[int, int]:
    """Best-effort (line, column) of a JSON path inside the raw config text.

    Keys are searched for in order, each after the previous match; list
    indices skip that many opening items. Falls back to the last key found.
    """
    pos = 0
    for key in path:
        if isinstance(key, int):
            start = text.find("[", pos)
            if start < 0:
                break
            pos = start + 1
            depth, i, seen = 0, pos, 0
            while i < len(text) and seen < key:
                ch = text[i]
                if ch in "[{":
                    depth += 1
                elif ch in "]}":
                    depth -= 1
                elif ch == "," and depth == 0:
                    seen += 1
                i += 1
            pos = i
            while pos < len(text) and text[pos] in " \t\r\n":
                pos += 1
        else:
            found = text.find(json.dumps(key), pos)
            if found < 0:
                break
            pos = found
    return _offset_to_line_col(text, pos)


def validate_config(text: str, name: str = "<config>") -> dict:
    """Parse and schema-check a config; raises ConfigurationError with line/column."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{name}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    error = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if error is not None:
        path = list(error.absolute_path)
        # unknown keys: point at the offending key rather than its parent object
        if error.validator == "additionalProperties" and isinstance(error.instance, dict):
            allowed = set(error.schema.get("properties", {}))
            extra = sorted(k for k in error.instance if k not in allowed)
            if extra:
                path.append(extra[0])
        line, col = locate(text, path)
        where = "/".join(str(p) for p in path) or "<root>"
        raise ConfigurationError(f"{name}:{line}:{col}: {where}: {error.message}")
    return cfg


def resolve_threads(flag: int | None) -> int:
    """``--threads`` if given, else ``CARTANLAB_THREADS``, else 1."""
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("CARTANLAB_THREADS")
        if env is None or env.strip() == "":
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigurationError(f"CARTANLAB_THREADS must be an integer, got {env!r}") from exc
    if value < 1:
        raise ConfigurationError(f"threads must be >= 1, got {value}")
    return value


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64-1], got {text}")
    return value


def _diagnostic(exc: BaseException) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("residual", "iterations", "point", "eigenvalue"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = _plain(getattr(exc, attr))
    trace = getattr(exc, "trace", None)
    if trace is not None and getattr(trace, "steps", None):
        doc["last_step"] = trace.steps[-1]
        doc["last_energy"] = trace.energies[-1]
        doc["last_residual"] = trace.residuals[-1]
    return doc


def run(config: str, out: str = "results", seed: int | None = None, threads: int | None = None,
        stream=None) -> int:
    """Run one experiment and write its artifacts; returns the exit code."""
    stream = sys.stderr if stream is None else stream
    try:
        with open(config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"cartanlab: cannot read config: {exc}", file=stream)
        return EXIT_ERROR
    name = os.path.basename(config)
    try:
        cfg = validate_config(text, name)
        nthreads = resolve_threads(threads)
        eff_seed = seed if seed is not None else int(cfg.get("seed", DEFAULT_SEED))
        outcome = run_experiment(cfg, eff_seed, nthreads)
    except ConfigurationError as exc:
        print(f"cartanlab: {exc}", file=stream)
        return EXIT_ERROR
    except (CartanLabError, ArithmeticError, ValueError) as exc:
        print(json.dumps(_diagnostic(exc), sort_keys=True), file=stream)
        return EXIT_ERROR

    outputs = cfg.get("outputs", {})
    stem = outputs.get("stem", os.path.splitext(name)[0])
    meta = {"config": name, "config_hash": config_hash(cfg), "seed": eff_seed,
            "version": __version__, "exit_code": outcome.exit_code}
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"{stem}.csv"), "w", newline="") as fh:
            fh.write(outcome.csv_text)
        doc = dict(outcome.summary)
        doc.update(meta)
        with open(os.path.join(out, f"{stem}.json"), "w") as fh:
            fh.write(dumps(doc))
        for tag, table in sorted(outcome.tables.items()):
            with open(os.path.join(out, f"{stem}.{tag}.csv"), "w", newline="") as fh:
                fh.write(table)
        if outputs.get("snapshots", True):
            for tag, snap in sorted(outcome.snapshots.items()):
                if isinstance(snap, ConnectionField):
                    snap.save(os.path.join(out, f"{stem}.{tag}.bin"))
    except OSError as exc:
        print(f"cartanlab: cannot write artifacts: {exc}", file=stream)
        return EXIT_ERROR
    print(f"{outcome.verdict} {stem} -> {out}", file=sys.stdout)
    return outcome.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cartanlab", description="Config-driven lattice experiments.")
    parser.add_argument("--version", action="version", version=f"cartanlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("--config", required=True, help="JSON experiment config")
    r.add_argument("--out", default="results", help="output directory (default: results)")
    r.add_argument("--seed", type=_u64, default=None, help="test-bank seed (u64); overrides the config")
    r.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $CARTANLAB_THREADS or 1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for FAILS verdicts
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    return run(args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
