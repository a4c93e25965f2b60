"""Command line entry point: ``heatlab run`` and ``heatlab corpus``.

Exit codes: 0 when every bound was exhibited, 2 on a hard invariant
violation, 3 on a configuration error.  Every failure prints one line
``heatlab: error=<kind> reason=<text>`` on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 2, 3
MAX_NODES = 2000


class ConfigError(ValueError):
    pass


def load_schema(name: str = "config") -> dict:
    text = resources.files("heatlab").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load_config(path) -> dict:
    """Parse and validate a config file; raises :class:`ConfigError`."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    try:
        jsonschema.validate(cfg, load_schema("config"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    g = cfg["grid"]
    if g["N"] ** g["n"] > MAX_NODES:
        raise ConfigError(f"grid has {g['N'] ** g['n']} nodes, above the dense budget of {MAX_NODES}")


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary sibling and rename, so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def dump_report(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _fail(kind: str, reason: str, code: int) -> int:
    reason = " ".join(str(reason).split())
    print(f"heatlab: error={kind} reason={reason}", file=sys.stderr)
    return code


def _thread_limit():
    value = os.environ.get("HEATLAB_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def _resolve(out: str | None, name: str) -> Path:
    p = Path(name)
    if p.is_absolute() or out is None:
        return p
    return Path(out) / p


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    if args.seed is not None:
        cfg.setdefault("numeric", {})["seed"] = args.seed

    from .dyson import DysonDivergence
    from .experiments import run_experiment
    from .harness import WindowEmpty, _jsonable, write_csv
    from .subordination import QuadratureError

    try:
        with _thread_limit():
            results = run_experiment(cfg)
    except (WindowEmpty, ValueError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (DysonDivergence, QuadratureError, FloatingPointError) as exc:
        return _fail("violation", f"{type(exc).__name__}: {exc}", EXIT_VIOLATION)

    ok = all(r.passed for r in results)
    report = {
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": int(cfg.get("numeric", {}).get("seed", 0)),
        "status": "ok" if ok else "violation",
        "experiments": [
            {
                "name": r.name,
                "passed": r.passed,
                "checks": {c.name: c.to_dict() for c in r.checks},
                "metrics": r.metrics,
                "reports": [rep.to_dict() for rep in r.reports],
            }
            for r in results
        ],
    }
    report = _jsonable(report)
    out = cfg.get("output", {})
    write_atomic(_resolve(args.out, out.get("json_path", "report.json")), dump_report(report))
    if out.get("csv_path"):
        rows = [rep for r in results for rep in r.reports if rep.rows is not None]
        if rows:
            path = _resolve(args.out, out["csv_path"])
            tmp = path.with_name(f".{path.name}.tmp")
            path.parent.mkdir(parents=True, exist_ok=True)
            write_csv(rows[0], tmp)
            os.replace(tmp, path)
    if not ok:
        bad = [f"{r.name}.{c.name}={c.value:.3e}>{c.tolerance:.1e}" for r in results for c in r.checks if not c.passed]
        return _fail("violation", ";".join(bad), EXIT_VIOLATION)
    return EXIT_OK


def emit_corpus(out: Path, seed: int = 0):
    """Run every acceptance criterion and write one report per criterion plus ``index.json``.

    Returns the exit code, the index and the in-memory criterion results.
    """
    from .acceptance import CRITERIA, RUNTIME_BUDGET_S, run_all
    from .harness import _jsonable

    cfg = {"experiment": "all", "grid": {"n": 3, "N": 12, "L": 1.0}, "numeric": {"seed": seed}}
    h = config_hash(cfg)
    with _thread_limit():
        results = run_all(seed)
    entries = []
    for r in results:
        body = {"config_hash": h, "seed": seed, **r.to_dict()}
        write_atomic(out / f"{r.id}.json", dump_report(body))
        entries.append({"id": r.id, "title": r.title, "passed": r.passed, "report": f"{r.id}.json"})
    index = {
        "config_hash": h,
        "config": cfg,
        "seed": seed,
        "criteria": entries,
        "all_passed": all(e["passed"] for e in entries),
        "runtime_budget_seconds": RUNTIME_BUDGET_S,
        "criterion_count": len(CRITERIA),
    }
    index = _jsonable(index)
    write_atomic(out / "index.json", dump_report(index))
    return (EXIT_OK if index["all_passed"] else EXIT_VIOLATION), index, results


def cmd_corpus(args) -> int:
    code, index, _ = emit_corpus(Path(args.out), args.seed)
    if code:
        failed = ",".join(e["id"] for e in index["criteria"] if not e["passed"])
        return _fail("violation", f"criteria failed: {failed}", code)
    return code


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatlab", description="Heat kernel experiments on a periodic lattice.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment(s) of one config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="directory for relative output paths")
    run.add_argument("--seed", type=_u64, default=None, help="overrides numeric.seed")
    run.set_defaults(func=cmd_run)
    corpus = sub.add_parser("corpus", help="run the full acceptance suite")
    corpus.add_argument("--out", required=True)
    corpus.add_argument("--seed", type=_u64, default=0)
    corpus.set_defaults(func=cmd_corpus)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else _fail("config", "invalid command line", EXIT_CONFIG)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
