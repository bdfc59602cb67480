"""Scenario orchestration: run a mode over its (T, M, seed) cells and write results."""

import csv
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..errors import DualKFError
from ..estimator import sample_gradient, squared_error
from ..kalman import dare_gain
from ..objective import GainPolicy, cost_value, duality_check, exact_gradient, fd_gradient
from ..optimizer import CostOracle, gd_run, gf_run, initial_gain, reference_burn_in, sgd_ensemble
from ..sysmodel import RNG_ALGORITHM, TrajectorySource, simulate_trajectory

SCHEMA_VERSION = "1.0"
AGGREGATE_COLUMNS = ("k", "mean", "std", "min", "max")
GRAD_CHECK_TOL = 1e-6
GRAD_CHECK_FLOOR = 1e-4


@dataclass
class AggregateSummary:
    """Across-seed statistics of the normalized error ``J(L_k) / J(L_0)``."""

    k: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray
    final_gain_mean: np.ndarray
    final_gain_std: np.ndarray
    num_traces: int
    truncated: bool = False

    def rows(self):
        for i in range(self.k.size):
            yield {c: getattr(self, c)[i] for c in AGGREGATE_COLUMNS}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({c: repr(int(v)) if c == "k" else repr(float(v)) for c, v in row.items()})


def aggregate(traces):
    """Per-iteration mean, std, min and max of ``J_norm`` across traces.

    Traces of different length are cut to the shortest one and ``truncated``
    is set (a warning is also emitted).
    """
    traces = list(traces)
    if not traces:
        raise ValueError("aggregate needs at least one trace")
    lengths = [len(t) for t in traces]
    n = min(lengths)
    truncated = len(set(lengths)) > 1
    if truncated:
        warnings.warn(f"trace lengths differ ({min(lengths)}..{max(lengths)}); aligned to {n}", stacklevel=2)
    norm = np.array([[r["J_norm"] for r in t.rows()][:n] for t in traces], dtype=float)
    gains = np.array([t.records[n - 1].L for t in traces])
    return AggregateSummary(
        k=np.arange(n),
        mean=norm.mean(axis=0),
        std=norm.std(axis=0),
        min=norm.min(axis=0),
        max=norm.max(axis=0),
        final_gain_mean=gains.mean(axis=0),
        final_gain_std=gains.std(axis=0),
        num_traces=len(traces),
        truncated=truncated,
    )


@dataclass
class RunRecord:
    config: dict
    mode: str
    version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM
    cells: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    artifact_defaults: list = field(default_factory=list)
    wall_time: float = 0.0
    files: list = field(default_factory=list)
    traces: dict = field(default_factory=dict, repr=False)

    @property
    def failed(self):
        return any(c.get("status") == "failed" for c in self.cells)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "rng_algorithm": self.rng_algorithm,
            "mode": self.mode,
            "config": self.config,
            "artifact_defaults": self.artifact_defaults,
            "results": self.results,
            "cells": self.cells,
            "wall_time_s": self.wall_time,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _seeds(config):
    return [config.seed0 + i for i in range(config.num_seeds)]


def _start_gain(config, model):
    if config.L0 is None:
        return initial_gain(model).L
    return GainPolicy.of(model, config.L0).L


def _trace_summary(trace):
    f = trace.final
    return {
        "final_gain": f.L,
        "final_J": f.J,
        "final_gain_err": f.gain_err,
        "iterations": f.k,
        "status": trace.terminal_status,
        "message": trace.message,
    }


def _rel_err(g, ref, scale):
    """Largest entrywise relative error, with entries below ``1e-4 max(1, scale)`` compared absolutely."""
    floor = GRAD_CHECK_FLOOR * max(1.0, abs(scale))
    return float(np.max(np.abs(g - ref) / np.maximum(np.abs(ref), floor)))


def _moments(values):
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "median": None}
    return {"mean": float(v.mean()), "std": float(v.std()), "median": float(np.median(v))}


class _Runner:
    def __init__(self, config):
        self.config = config
        self.model = config.build_model()
        self.out = config.out_dir
        self.record = RunRecord(
            config=config.to_dict(),
            mode=config.mode,
            artifact_defaults=config.untouched_defaults(),
        )
        self._oracle = None

    @property
    def oracle(self):
        if self._oracle is None and self.config.oracle:
            self._oracle = CostOracle(self.model)
        return self._oracle

    def path(self, name):
        p = os.path.join(self.out, name)
        self.record.files.append(name)
        return p

    def run(self):
        os.makedirs(self.out, exist_ok=True)
        handler = getattr(self, "_" + self.config.mode.replace("-", "_"))
        t0 = time.perf_counter()
        handler()
        self.record.wall_time = time.perf_counter() - t0
        with open(self.path(f"{self.config.mode}_summary.json"), "w") as fh:
            json.dump(_jsonable(self.record.to_dict()), fh, indent=2, sort_keys=True)
        return self.record

    # -- modes -------------------------------------------------------------

    def _simulate(self):
        T = self.config.T_grid[0]
        B = self.config.burn_in if self.config.burn_in is not None else 0
        for s in _seeds(self.config):
            traj = simulate_trajectory(self.model, B, T + 1, s)
            name = f"simulate_T{T}_seed{s}.csv"
            traj.to_csv(self.path(name))
            self.record.cells.append({"T": T, "seed": s, "burn_in": B, "file": name, "status": "ok"})

    def _kalman(self):
        sol = dare_gain(self.model)
        self.record.results = {
            "P_inf": sol.P_inf,
            "L_inf": sol.L_inf,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "closed_loop_rho": sol.closed_loop_rho(self.model),
            "J_star": cost_value(self.model, sol.L_inf),
        }
        self.record.cells.append({"status": "ok"})

    def _exact(self, method):
        cfg = self.config
        L_ref = self.oracle.L_inf if self.oracle is not None else None
        cell = {"method": method, "file": f"{method}_trace.csv"}
        try:
            L0 = _start_gain(cfg, self.model)
            if method == "gd":
                trace = gd_run(self.model, L0, cfg.step_policy(), cfg.grad_tol, cfg.max_iter, L_ref)
            else:
                trace = gf_run(self.model, L0, cfg.step_h, cfg.grad_tol, cfg.max_iter, L_ref)
        except DualKFError as exc:
            cell.update(status="failed", message=f"{type(exc).__name__}: {exc}")
            self.record.cells.append(cell)
            return
        trace.write_csv(self.path(cell["file"]))
        cell.update(_trace_summary(trace))
        self.record.cells.append(cell)
        self.record.traces[(method,)] = [trace]
        if cfg.plots:
            from .plots import plot_cell

            self.record.files.extend(plot_cell(self.out, method, [trace], aggregate([trace])))

    def _gd(self):
        self._exact("gd")

    def _gf(self):
        self._exact("gf")

    def _grad_check(self):
        cfg = self.config
        L0 = _start_gain(cfg, self.model)
        ev = exact_gradient(self.model, L0)
        fd = fd_gradient(lambda L: cost_value(self.model, L), L0)
        rel = _rel_err(ev.grad, fd, ev.J)

        T = cfg.T_grid[0]
        B = cfg.burn_in if cfg.burn_in is not None else reference_burn_in(self.model)
        traj = simulate_trajectory(self.model, B, T + 1, cfg.seed0, keep_states=False)
        public = self.model.public
        sg = sample_gradient(public, L0, traj)
        sfd = fd_gradient(lambda L: squared_error(public, L, traj), L0)
        srel = _rel_err(sg.grad, sfd, squared_error(public, L0, traj))
        self.record.results = {
            "L": L0,
            "exact_gradient": ev.grad,
            "fd_gradient": fd,
            "max_rel_err": rel,
            "sample_gradient": sg.grad,
            "sample_fd_gradient": sfd,
            "sample_max_rel_err": srel,
            "sample_T": T,
            "sample_seed": cfg.seed0,
        }
        ok = rel <= GRAD_CHECK_TOL and srel <= GRAD_CHECK_TOL
        self.record.cells.append({"status": "ok" if ok else "failed"})

    def _check_duality(self):
        cfg = self.config
        L0 = _start_gain(cfg, self.model)
        a = np.ones(self.model.n) if cfg.direction is None else np.asarray(cfg.direction, float).ravel()
        checks = []
        for i, T in enumerate(cfg.T_grid):
            res = duality_check(self.model, L0, a, T, cfg.num_samples, cfg.seed0 + i)
            checks.append(res)
            self.record.cells.append({"T": T, "status": "ok" if res["pass"] else "failed"})
        self.record.results = {"L": L0, "a": a, "checks": checks}

    def _sgd(self):
        cfg = self.config
        self._sgd_grid(cfg.T_grid[:1], cfg.M_grid[:1])

    def _sweep(self):
        cfg = self.config
        self._sgd_grid(cfg.T_grid, cfg.M_grid)

    def _sgd_grid(self, T_grid, M_grid):
        cfg = self.config
        public = self.model.public
        B = cfg.burn_in if cfg.burn_in is not None else reference_burn_in(self.model)
        L0 = _start_gain(cfg, self.model)
        seeds = _seeds(cfg)
        schedule = cfg.step_policy()
        table = []
        for T in T_grid:
            for M in M_grid:
                source = TrajectorySource(self.model, seeds, burn_in=B)
                try:
                    traces = sgd_ensemble(public, source, L0, schedule, M, cfg.K, window=T, oracle=self.oracle)
                except DualKFError as exc:
                    self.record.cells.append(
                        {"T": T, "M": M, "status": "failed", "message": f"{type(exc).__name__}: {exc}"}
                    )
                    continue
                self.record.traces[(T, M)] = traces
                for s, tr in zip(seeds, traces):
                    name = f"sgd_T{T}_M{M}_seed{s}.csv"
                    tr.write_csv(self.path(name))
                    cell = {"T": T, "M": M, "seed": s, "file": name}
                    cell.update(_trace_summary(tr))
                    self.record.cells.append(cell)
                agg = aggregate(traces)
                agg_name = f"sgd_T{T}_M{M}_aggregate.csv"
                agg.write_csv(self.path(agg_name))
                finals = [tr.final.J for tr in traces]
                table.append(
                    {
                        "T": T,
                        "M": M,
                        "final_J": _moments(finals),
                        "final_J_var": float(np.var(finals)),
                        "final_gain_err": _moments([tr.final.gain_err for tr in traces]),
                        "final_gain_mean": agg.final_gain_mean,
                        "final_gain_std": agg.final_gain_std,
                        "failed_seeds": sum(tr.terminal_status == "failed" for tr in traces),
                        "truncated": agg.truncated,
                        "aggregate_file": agg_name,
                    }
                )
                if cfg.plots:
                    from .plots import plot_cell

                    self.record.files.extend(plot_cell(self.out, f"sgd_T{T}_M{M}", traces, agg))
        self.record.results = {
            "L0": L0,
            "burn_in": B,
            "J_star": None if self.oracle is None else self.oracle.J_star,
            "L_inf": None if self.oracle is None else self.oracle.L_inf,
            "initial_gain_err": None if self.oracle is None else self.oracle.gain_error(L0),
            "cells": table,
        }
        if cfg.plots and len(self.record.traces) > 1:
            from .plots import plot_sweep

            self.record.files.extend(plot_sweep(self.out, self.record.traces))


def run_scenario(config):
    """Execute ``config.mode`` and write its CSV/JSON (and optional PNG) outputs.

    Per-cell optimizer failures are recorded in the returned record rather
    than raised, so one bad cell does not abort a sweep.
    """
    return _Runner(config).run()
