"""Command line front end: config files, presets and exit codes.

Exit status 0 means every replication finished and every CSV was written, 1 a
configuration problem, 2 a failure inside a replication.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import re
import sys
from pathlib import Path

from .presets import PRESET_NAMES, ReplicationError, build_preset, run_preset
from .scenario import ConfigError, HybParams, ProtocolKind, RateMode, ScenarioConfig, dbm_to_w

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("lpwasim")

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_HYB_FIELDS = {f"hyb_{f.name}": f.name for f in dataclasses.fields(HybParams)}
_DBM_KEYS = {"p_tx_dbm": "p_tx", "p_circuit_dbm": "p_circuit", "p_rx_dbm": "p_rx",
             "p_cca_dbm": "p_cca", "ed_threshold_dbm": "ed_threshold"}
_INT_FIELDS = {"L", "replications", "base_seed", "n_bins", "lbt_min_be", "lbt_max_be",
               "lbt_max_backoffs"}
_BOOL_FIELDS = {"lbt_duty_limited", "fading"}
_OPTIONAL_FIELDS = {"ed_threshold", "coverage_radius"}
_SKIP = {"hyb", "protocol_mix", "rate_mode", "protocol", "rates", "probe_distances"}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _mix(text: str):
    """``LBT:1e-3, ALOHA:1e-3`` -> ((LBT, 1e-3), (ALOHA, 1e-3))."""
    mix = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        kind, sep, density = item.partition(":")
        if not sep:
            raise ValueError(f"expected KIND:density, got {item!r}")
        mix.append((ProtocolKind(kind.strip().upper()), float(density)))
    if not mix:
        raise ValueError("empty protocol list")
    return tuple(mix)


def _convert(key: str, text: str):
    """Map one ``key = value`` line to (field, value, is_hyb)."""
    if key in _HYB_FIELDS:
        name = _HYB_FIELDS[key]
        return name, (int(text) if name in ("slots", "rm_bits") else float(text)), True
    if key in _DBM_KEYS:
        return _DBM_KEYS[key], dbm_to_w(float(text)), False
    if key == "protocols":
        return "protocol_mix", _mix(text), False
    if key == "protocol":
        return "protocol", ProtocolKind(text.upper()), False
    if key == "rate_mode":
        return "rate_mode", RateMode(text.upper()), False
    if key in ("rates", "probe_distances"):
        return key, _floats(text), False
    if key not in _FIELDS or key in _SKIP:
        raise KeyError(key)
    if key in _OPTIONAL_FIELDS and text.lower() in ("none", ""):
        return key, None, False
    if key in _BOOL_FIELDS:
        return key, _bool(text), False
    if key in _INT_FIELDS:
        return key, int(text), False
    return key, float(text), False


def load_config(path) -> ScenarioConfig:
    """Parse a flat ``key = value`` file over the baseline parameters.

    ``#`` starts a comment.  Powers may be given in dBm through the ``*_dbm``
    keys, HYB frame parameters through ``hyb_*``, and a population mix as
    ``protocols = LBT:1e-3, ALOHA:1e-3``.  Every error names the line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    values: dict = {}
    hyb: dict = {}
    origin: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        try:
            name, converted, is_hyb = _convert(key, value)
        except KeyError:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
        (hyb if is_hyb else values)[name] = converted
        origin[name] = lineno
        origin["hyb" if is_hyb else name] = lineno
    try:
        if hyb:
            values["hyb"] = HybParams(**hyb)
        return ScenarioConfig(**values)
    except ConfigError as exc:
        msg = str(exc)
        # point at the last line whose field the message names
        hits = [n for name, n in origin.items() if re.search(rf"\b{re.escape(name)}\b", msg)]
        where = f"{path}:{max(hits)}" if hits else str(path)
        raise ConfigError(f"{where}: {msg}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Event-driven simulation of uncoordinated access to a long-range gateway.")
    p.add_argument("--preset", required=True, choices=PRESET_NAMES)
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; replication k uses seed + k (default: config base_seed)")
    p.add_argument("--replications", type=int, default=None,
                   help="replications per config (default: config value, 20)")
    p.add_argument("--out", required=True, help="output directory for the CSV files")
    p.add_argument("--config", default=None, help="key = value file overriding the baseline")
    p.add_argument("--trace", action="store_true",
                   help="write an event trace of replication 0 of every run")
    p.add_argument("--node-energy", action="store_true",
                   help="write per-node energy of replication 0 of every run")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replications")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config) if args.config else ScenarioConfig()
        if args.seed is not None:
            config = config.replace(base_seed=args.seed)
        if args.replications is not None:
            config = config.replace(replications=args.replications)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        preset = build_preset(args.preset, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_preset(preset, config.base_seed, config.replications, args.out, trace=args.trace,
                   node_energy=args.node_energy, jobs=args.jobs)
    except ReplicationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
