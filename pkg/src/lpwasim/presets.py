"""Experiment presets and replication orchestration."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .energy import write_node_energy_csv
from .engine import Simulation
from .metrics import MetricsTable, summarize, write_csv, format_value
from .scenario import ProtocolKind, RateMode, ScenarioConfig

log = logging.getLogger(__name__)

PRESET_NAMES = ("fig2", "fig3a", "fig3b", "fig4", "fig5", "custom")

# half-decade grid between the swept endpoints
SWEEP_GRID = (1e-5, 10 ** -4.5, 1e-4, 10 ** -3.5, 1e-3, 10 ** -2.5, 1e-2)
FIXED_DENSITY = 1e-3

SWEEP_HEADER = ["rate_mode", "fixed", "swept", "swept_density", "protocol", "density",
                "attempts", "successes", "cca_aborts", "p_fail", "throughput_bit_per_s",
                "throughput_ci95", "efficiency_bit_per_j", "efficiency_ci95"]


class ReplicationError(RuntimeError):
    """A replication raised; the preset is abandoned rather than averaged over fewer runs."""

    def __init__(self, tag: str, index: int, seed: int, cause: BaseException):
        super().__init__(f"run {tag!r} replication {index} (seed {seed}) failed: "
                         f"{type(cause).__name__}: {cause}")
        self.tag = tag
        self.index = index
        self.seed = seed


@dataclass(frozen=True)
class PresetRun:
    tag: str
    config: ScenarioConfig
    sweep: tuple[str, str] | None = None  # (fixed kind, swept kind)
    value: float | None = None


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    runs: tuple[PresetRun, ...]
    sweep_grid: tuple[float, ...] = ()


def _single(base: ScenarioConfig, kind: ProtocolKind, mode: RateMode) -> ScenarioConfig:
    return base.replace(protocol=kind, protocol_mix=None, rate_mode=mode)


def _tag(kind: ProtocolKind, mode: RateMode) -> str:
    return f"{kind.value.lower()}_{mode.value.lower()}"


def build_preset(name: str, base: ScenarioConfig | None = None) -> ExperimentPreset:
    """Expand a preset name into concrete scenario configs on top of ``base``."""
    base = base or ScenarioConfig()
    A, L, E, H = ProtocolKind.ALOHA, ProtocolKind.LBT, ProtocolKind.LBT_ETSI, ProtocolKind.HYB
    SR, RA = RateMode.SR, RateMode.RA
    if name == "fig2":
        combos = [(A, SR), (L, SR), (A, RA), (L, RA), (H, RA)]
    elif name == "fig3a":
        combos = [(A, SR), (L, SR), (E, SR)]
    elif name == "fig3b":
        combos = [(A, RA), (L, RA), (H, RA)]
    elif name in ("fig4", "fig5"):
        runs = []
        for mode in (SR, RA):
            for fixed, swept in ((A, L), (L, A)):
                for i, v in enumerate(SWEEP_GRID):
                    cfg = base.replace(protocol_mix=((fixed, FIXED_DENSITY), (swept, v)),
                                       rate_mode=mode)
                    tag = f"{mode.value.lower()}_{swept.value.lower()}-swept_{i}"
                    runs.append(PresetRun(tag, cfg, (fixed.value, swept.value), v))
        return ExperimentPreset(name, tuple(runs), SWEEP_GRID)
    elif name == "custom":
        return ExperimentPreset(name, (PresetRun("custom", base),))
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    runs = tuple(PresetRun(_tag(k, m), _single(base, k, m)) for k, m in combos)
    return ExperimentPreset(name, runs)


def _replicate(config: ScenarioConfig, seed: int, trace_path, energy_path) -> MetricsTable:
    sim = Simulation(config, seed, trace=trace_path is not None)
    table = sim.run()
    if trace_path is not None:
        sim.write_trace(trace_path)
    if energy_path is not None:
        write_node_energy_csv(energy_path, sim.nodes, config.L)
    return table


def run_replications(run: PresetRun, base_seed: int, replications: int, out_dir=None,
                     trace: bool = False, node_energy: bool = False, jobs: int = 1,
                     prefix: str = "") -> list[MetricsTable]:
    """Replications ``k = 0..n-1`` with seeds ``base_seed + k``, in index order.

    The trace and per-node energy files, when requested, cover replication 0.
    """
    seeds = [base_seed + k for k in range(replications)]
    stem = os.path.join(out_dir, f"{prefix}{run.tag}") if out_dir is not None else None
    extras = [(None, None)] * replications
    if stem is not None:
        extras[0] = (stem + "_trace.csv" if trace else None,
                     stem + "_nodes.csv" if node_energy else None)
    tables: list[MetricsTable] = []
    if jobs > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_replicate, run.config, s, *extras[k])
                       for k, s in enumerate(seeds)]
            for k, fut in enumerate(futures):
                try:
                    tables.append(fut.result())
                except Exception as exc:
                    for f in futures:
                        f.cancel()
                    raise ReplicationError(run.tag, k, seeds[k], exc) from exc
    else:
        for k, s in enumerate(seeds):
            try:
                tables.append(_replicate(run.config, s, *extras[k]))
            except Exception as exc:
                raise ReplicationError(run.tag, k, s, exc) from exc
    return tables


def _sweep_rows(run: PresetRun, tables: list[MetricsTable]) -> list[dict]:
    whole = [t.collapse() for t in tables]
    rows = []
    for row, (_, density) in zip(summarize(whole), run.config.populations):
        rows.append({
            "rate_mode": row["rate_mode"],
            "fixed": run.sweep[0],
            "swept": run.sweep[1],
            "swept_density": run.value,
            "protocol": row["protocol"],
            "density": density,
            "attempts": row["attempts"],
            "successes": row["successes"],
            "cca_aborts": row["cca_aborts"],
            "p_fail": row["p_fail"],
            "throughput_bit_per_s": row["throughput_bit_per_s"],
            "throughput_ci95": row["throughput_ci95"],
            "efficiency_bit_per_j": row["efficiency_bit_per_j"],
            "efficiency_ci95": row["efficiency_ci95"],
        })
    return rows


def run_preset(preset: ExperimentPreset, base_seed: int, replications: int, out_dir=None,
               trace: bool = False, node_energy: bool = False, jobs: int = 1,
               progress=None) -> dict[str, list[MetricsTable]]:
    """Run every config of ``preset`` and write one CSV per run.

    Per-bin tables go to ``<preset>_<tag>.csv``.  Sweep presets also write
    ``<preset>_sweep.csv`` with whole-disk values per sweep point.  Returns the
    per-replication tables keyed by run tag.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    results: dict[str, list[MetricsTable]] = {}
    sweep_rows: list[dict] = []
    prefix = f"{preset.name}_"
    for run in preset.runs:
        log.info("%s: %s x%d", preset.name, run.tag, replications)
        tables = run_replications(run, base_seed, replications, out_dir, trace, node_energy,
                                  jobs, prefix)
        results[run.tag] = tables
        if run.sweep is not None:
            sweep_rows.extend(_sweep_rows(run, tables))
        if out_dir is not None:
            write_csv(os.path.join(out_dir, f"{prefix}{run.tag}.csv"), summarize(tables))
        if progress is not None:
            progress(run)
    if out_dir is not None and sweep_rows:
        path = os.path.join(out_dir, f"{prefix}sweep.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for row in sweep_rows:
                w.writerow([format_value(row[k]) for k in SWEEP_HEADER])
    return results
