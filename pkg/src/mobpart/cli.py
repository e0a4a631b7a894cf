"""Command-line interface.

Exit codes: 0 success, 1 self-test failure, 2 invalid configuration or
data, 3 model cannot be fitted on the full sample, 4 file input/output
error. Errors are reported as a JSON object on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .data import DataError, RoleError, RoleMap, dataset_to_csv, load_csv, write_csv
from .models import FitError
from .selftest import SUITES, format_checks, run_suite
from .serialize import membership_csv, subgroups_csv, tree_dot, tree_json, tree_text
from .simgen import DGPS, DGPSpec, generate
from .tree import ControlParams, grow_tree

FORMATS = ("json", "dot", "text", "csv")
EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 1, 2, 3, 4
CONTROL_FIELDS = {f.name for f in fields(ControlParams)}

log = logging.getLogger("mobpart")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class AnalysisConfig:
    data: Path
    schema: Mapping
    roles: RoleMap
    control: ControlParams
    output: Path
    formats: tuple[str, ...] = FORMATS


def _require(doc: Mapping, key: str, where: str = ""):
    if key not in doc:
        raise ConfigError(f"missing required field {where + key!r}", where + key)
    return doc[key]


def parse_config(doc: Mapping, base: Path = Path("."), overrides: Mapping | None = None) -> AnalysisConfig:
    """Build an :class:`AnalysisConfig` from a JSON document.

    Relative paths are resolved against ``base`` (the config file's folder).
    ``overrides`` replace control parameters and ``formats``.
    """
    if not isinstance(doc, Mapping):
        raise ConfigError("configuration must be a JSON object")
    data = base / str(_require(doc, "data"))
    schema = _require(doc, "schema")
    if not isinstance(schema, Mapping):
        raise ConfigError("schema must be an object", "schema")
    r = _require(doc, "roles")
    if not isinstance(r, Mapping):
        raise ConfigError("roles must be an object", "roles")
    family = _require(r, "family", "roles.")
    endpoint = _require(r, "endpoint", "roles.")
    if not isinstance(endpoint, Mapping):
        raise ConfigError("roles.endpoint must be an object", "roles.endpoint")
    treatment = r.get("treatment")
    if not treatment:
        raise ConfigError("missing required field 'roles.treatment'", "roles.treatment")
    roles = RoleMap(str(family), dict(endpoint), str(treatment),
                    tuple(r.get("partitioning", ())), tuple(r.get("strata", ())))

    overrides = dict(overrides or {})
    control_doc = dict(doc.get("control", {}))
    unknown = set(control_doc) - CONTROL_FIELDS
    if unknown:
        raise ConfigError(f"unknown control parameters {sorted(unknown)}", "control")
    formats = overrides.pop("formats", None) or doc.get("formats", FORMATS)
    control_doc.update({k: v for k, v in overrides.items() if v is not None})
    if "threads" not in control_doc and os.environ.get("MOBPART_THREADS"):
        control_doc["threads"] = os.environ["MOBPART_THREADS"]
    try:
        control = ControlParams(**{k: _coerce(k, v) for k, v in control_doc.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "control") from None
    formats = tuple(formats)
    bad = [f for f in formats if f not in FORMATS]
    if bad or not formats:
        raise ConfigError(f"formats must be a non-empty subset of {FORMATS}", "formats")
    output = base / str(doc.get("output", "mobpart-out"))
    return AnalysisConfig(data, schema, roles, control, output, formats)


def _coerce(name: str, value):
    if name in ("alpha", "level"):
        return float(value)
    if name == "method":
        return str(value)
    return int(value)


def run_analyze(config: AnalysisConfig) -> dict[str, Path]:
    """Fit the tree and write the requested artifacts; returns written paths."""
    dataset = load_csv(config.data, config.schema)
    tree = grow_tree(dataset, config.roles, config.control)
    config.output.mkdir(parents=True, exist_ok=True)
    written = {}

    def put(name: str, text: str):
        path = config.output / name
        path.write_text(text, encoding="utf-8")
        written[name] = path

    if "json" in config.formats:
        put("tree.json", tree_json(tree, {"data": config.data.name, "n_rows": len(dataset)}))
    if "dot" in config.formats:
        put("tree.dot", tree_dot(tree))
    if "text" in config.formats:
        put("tree.txt", tree_text(tree))
    if "csv" in config.formats:
        put("subgroups.csv", subgroups_csv(tree))
        put("membership.csv", membership_csv(tree, dataset))
    return written


def run_simulate(spec: DGPSpec, out: Path | None) -> None:
    ds = generate(spec)
    if out is None:
        sys.stdout.write(dataset_to_csv(ds))
    else:
        write_csv(ds, out)


def run_selftest(suite: str, **kwargs) -> bool:
    checks = run_suite(suite, **kwargs)
    print(format_checks(checks))
    return all(c.passed for c in checks)


def _error(kind: str, message: str, code: int, field: str = "") -> int:
    payload = {"error": kind, "message": message, "exit_code": code}
    if field:
        payload["field"] = field
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def _formats(text: str) -> list[str]:
    return [f.strip() for f in text.split(",") if f.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mobpart", description="Model-based recursive partitioning "
                                "for treatment-effect subgroups.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="grow a tree from a configuration file")
    a.add_argument("--config", required=True)
    a.add_argument("--alpha", type=float)
    a.add_argument("--maxdepth", type=int)
    a.add_argument("--minbucket", type=int)
    a.add_argument("--minfit", type=int)
    a.add_argument("--nperm", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--threads", type=int)
    a.add_argument("--format", dest="formats", action="append", type=_formats,
                   help="comma-separated subset of json,dot,text,csv (repeatable)")
    a.add_argument("--out", help="output directory (overrides the configuration)")

    s = sub.add_parser("simulate", help="write a synthetic dataset as CSV")
    s.add_argument("dgp", choices=DGPS)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-vars", type=int, default=0)
    s.add_argument("--out")

    t = sub.add_parser("selftest", help="run an oracle suite")
    t.add_argument("suite", choices=SUITES)
    t.add_argument("--m", type=int, default=7, help="rows for the permutation suite")
    t.add_argument("--nsim", type=int, default=50, help="replications for the typeI suite")
    t.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analyze":
            return _analyze(args)
        if args.command == "simulate":
            spec = DGPSpec(args.dgp, args.n, args.noise_vars, args.seed)
            run_simulate(spec, Path(args.out) if args.out else None)
            return EXIT_OK
        kwargs = {"seed": args.seed}
        if args.suite == "permutation":
            kwargs["m"] = args.m
        if args.suite == "typeI":
            kwargs["nsim"] = args.nsim
        return EXIT_OK if run_selftest(args.suite, **kwargs) else EXIT_SELFTEST
    except (ConfigError, RoleError) as exc:
        return _error("config", str(exc), EXIT_CONFIG, exc.field)
    except (DataError, ValueError) as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except FitError as exc:
        return _error("fit", str(exc), EXIT_FIT)
    except OSError as exc:
        return _error("io", str(exc), EXIT_IO)


def _analyze(args) -> int:
    path = Path(args.config)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from None
    overrides = {k: getattr(args, k) for k in ("alpha", "maxdepth", "minbucket", "minfit", "nperm",
                                               "seed", "threads")}
    if args.formats:
        overrides["formats"] = [f for group in args.formats for f in group]
    config = parse_config(doc, path.parent, overrides)
    if args.out:
        config = AnalysisConfig(config.data, config.schema, config.roles, config.control,
                                Path(args.out), config.formats)
    written = run_analyze(config)
    for name, p in written.items():
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
