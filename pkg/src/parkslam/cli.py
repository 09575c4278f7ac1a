"""Command-line entry point: simulate, map, localize, evaluate, plot.

Settings come from an optional YAML config file; command-line flags and
``--set section.key=value`` overrides win over it.  On failure a single JSON
object ``{"error": <category>, "message": ...}`` goes to stderr and the
exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import yaml

from . import io
from .evaluation import evaluate, map_report
from .exceptions import ConfigError, IoFailure, ParkSlamError
from .localization import Localizer
from .mapping import SlotMapper
from .plot import export_plot
from .simulator import IdInjection, LotSpec, NoiseModel, noise_profile, simulate

EXIT_FAILURE = 1
EXIT_USAGE = 2

SECTIONS = ("simulate", "lot", "noise", "mapping", "localization")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D401 - argparse hook
        _emit_error("UsageError", message)
        sys.exit(EXIT_USAGE)


def _emit_error(category: str, message: str) -> None:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    unknown = set(data) - set(SECTIONS) - {"seed", "noise_profile", "robust", "injections"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return data


def apply_overrides(cfg: dict, pairs) -> dict:
    """Apply ``a.b=value`` pairs; values are parsed as YAML scalars/lists."""
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value of {key!r}: {exc}") from exc
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key!r} descends into a non-mapping")
        node[parts[-1]] = value
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(sec)


def _build(cls, params: dict, what: str):
    try:
        if hasattr(cls, "get_params"):
            valid = set(cls().get_params())
            bad = set(params) - valid
            if bad:
                raise ConfigError(f"unknown {what} settings {sorted(bad)}")
            return cls(**params)
        names = {f.name for f in fields(cls)}
        bad = set(params) - names
        if bad:
            raise ConfigError(f"unknown {what} settings {sorted(bad)}")
        return cls(**params)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParkSlamError):
            raise
        raise ConfigError(f"bad {what} settings: {exc}") from exc


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required (give it on the command line or in the config file)")
    return value


def _parse_injection(text: str) -> IdInjection:
    parts = text.split(":")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"injection {text!r} must look like TRUE:READ[:N]") from None
    if len(nums) not in (2, 3):
        raise ConfigError(f"injection {text!r} must look like TRUE:READ[:N]")
    return IdInjection(*nums)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg) -> dict:
    seed = _require(args.seed if args.seed is not None else cfg.get("seed"), "--seed")
    profile = _require(args.noise_profile or cfg.get("noise_profile"), "--noise-profile")
    try:
        noise = noise_profile(profile)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    overrides = _section(cfg, "noise")
    if overrides:
        bad = set(overrides) - {f.name for f in fields(NoiseModel)}
        if bad:
            raise ConfigError(f"unknown noise settings {sorted(bad)}")
        try:
            noise = replace(noise, **{k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()})
        except ValueError as exc:
            raise ConfigError(f"bad noise settings: {exc}") from None
    spec = _build(LotSpec, _section(cfg, "lot"), "lot")
    sim = _section(cfg, "simulate")
    if args.kind:
        sim["kind"] = args.kind
    if args.laps is not None:
        sim["laps"] = args.laps
    inj = [IdInjection(**d) for d in cfg.get("injections") or []]
    inj += [_parse_injection(t) for t in args.inject or ()]
    try:
        ds = simulate(spec, noise, int(seed), injections=inj, **sim)
    except TypeError as exc:
        raise ConfigError(f"bad simulate settings: {exc}") from None
    io.export_dataset(ds, args.out)
    return {"frames": len(ds.frames), "seed": int(seed), "noise_profile": profile, "out": str(args.out)}


def _robust(args, cfg, section: str) -> bool:
    if args.robust is not None:
        return args.robust
    sec = _section(cfg, section)
    value = sec.get("robust", cfg.get("robust"))
    return bool(_require(value, "--robust/--no-robust"))


def cmd_map(args, cfg) -> dict:
    ds = io.import_dataset(args.dataset)
    params = _section(cfg, "mapping")
    params["robust"] = _robust(args, cfg, "mapping")
    mapper = _build(SlotMapper, params, "mapping").fit(ds)
    io.export_map(mapper.map_, args.out, check=not args.no_check)
    if args.report:
        io.export_report(mapper.report_, args.report)
    return {"slots": len(mapper.map_.slots), "tags": len(mapper.map_.tags), "robust": params["robust"],
            "report": mapper.report_.to_dict(), "out": str(args.out)}


def cmd_localize(args, cfg) -> dict:
    smap = io.import_map(args.map)
    ds = io.import_dataset(args.dataset)
    params = _section(cfg, "localization")
    params["robust"] = _robust(args, cfg, "localization")
    loc = _build(Localizer, params, "localization").fit(smap)
    trace = loc.predict(ds)
    io.export_trace(trace, args.out)
    report = loc.report(trace, ds)
    if args.report:
        io.export_report(report, args.report)
    return {"poses": len(trace), "lost_track": loc.lost_track_, "report": report.to_dict(), "out": str(args.out)}


def cmd_evaluate(args, cfg) -> dict:
    smap = io.import_map(args.map) if args.map else None
    ds = io.import_dataset(args.dataset) if args.dataset else None
    report = None
    if args.trace:
        trace = io.import_trace(args.trace)
        if args.reference:
            ref = io.import_trace(args.reference)
        elif smap is not None:
            ref = smap.reference_trace
        elif ds is not None:
            ref = ds.ground_truth_trace()
        else:
            raise ConfigError("evaluate --trace needs --reference, --map or --dataset")
        report = evaluate(trace, ref, ds.ground_truth_trace() if ds is not None else None)
    if smap is not None and ds is not None:
        mr = map_report(smap, ds.lot)
        report = mr if report is None else report.merge(mr)
    if report is None:
        raise ConfigError("nothing to evaluate: give --trace, or --map with --dataset")
    if args.out:
        io.export_report(report, args.out)
    return {"report": report.to_dict()}


def cmd_plot(args, cfg) -> dict:
    smap = io.import_map(args.map)
    traces = {}
    if args.with_reference and len(smap.reference_trace):
        traces["reference"] = smap.reference_trace
    for item in args.trace or ():
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        traces[name] = io.import_trace(path)
    export_plot(smap, traces, args.out)
    return {"slots": len(smap.slots), "traces": list(traces), "out": str(args.out)}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="parkslam", description="Semantic parking-lot mapping and localization.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")

    def robust(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--robust", dest="robust", action="store_true", default=None,
                       help="max-mixture association (default from config)")
        g.add_argument("--no-robust", dest="robust", action="store_false",
                       help="single highest-weight association, IDs trusted")

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--seed", type=int, help="random seed (required unless set in the config)")
    s.add_argument("--noise-profile", choices=["default", "zero", "harsh"],
                   help="noise profile (required unless set in the config)")
    s.add_argument("--kind", choices=["loop", "straight", "repeat"])
    s.add_argument("--laps", type=int)
    s.add_argument("--inject", action="append", metavar="TRUE:READ[:N]", help="force misread slot IDs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("map", help="build a semantic map from a dataset")
    common(m)
    robust(m)
    m.add_argument("--dataset", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--report")
    m.add_argument("--no-check", action="store_true", help="skip the map sanity gate when saving")
    m.set_defaults(func=cmd_map)

    lo = sub.add_parser("localize", help="track a dataset against a frozen map")
    common(lo)
    robust(lo)
    lo.add_argument("--map", required=True)
    lo.add_argument("--dataset", required=True)
    lo.add_argument("--out", required=True)
    lo.add_argument("--report")
    lo.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", help="compare traces and maps")
    common(e)
    e.add_argument("--trace")
    e.add_argument("--reference", help="reference trace file")
    e.add_argument("--map")
    e.add_argument("--dataset", help="dataset with ground truth")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="draw a map and traces as SVG")
    common(pl)
    pl.add_argument("--map", required=True)
    pl.add_argument("--trace", action="append", metavar="NAME=PATH")
    pl.add_argument("--with-reference", action="store_true", help="also draw the map's reference trace")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args.set)
        summary = args.func(args, cfg)
    except ParkSlamError as exc:
        _emit_error(exc.category, str(exc))
        return EXIT_FAILURE
    except (ValueError, TypeError) as exc:
        _emit_error("InvalidInput", str(exc))
        return EXIT_FAILURE
    except OSError as exc:
        _emit_error("IoFailure", str(exc))
        return EXIT_FAILURE
    print(json.dumps({"command": args.command, **summary}))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
