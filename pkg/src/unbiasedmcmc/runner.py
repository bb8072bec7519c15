"""Deterministic parallel execution of replicates and file outputs.

Every replicate's stream is derived from (master seed, replicate index), so
results are a pure function of the config: worker count and completion order
change nothing in the aggregates.  Reduction always happens in replicate
index order, every launched replicate shows up in the outputs (met or not),
and interrupted runs flush what they have with an explicit partial status.

Stream index namespaces keep phases independent: main replicates use indices
0..C-1, the tuning pilot starts at 2**32, asymptotic-variance runs at 2**33.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import __version__
from .chains import STORAGE_FULL, STORAGE_NONE, STORAGE_PAIRS, MeetingTimeSample, run_lagged_coupling
from .config import ExperimentConfig, build_pi0, build_target, build_transitions, pi0_mean
from .diagnostics import tune, tv_bound_curve, w1_bound_curve
from .estimators import (
    EstimatorRecord,
    UnmetTrajectoryError,
    aggregate,
    asymptotic_variance,
    make_test_function,
    time_averaged_estimate,
)
from .rng import derive_stream

__all__ = [
    "PILOT_OFFSET",
    "AVAR_OFFSET",
    "STREAM_RULE",
    "run_tune",
    "run_meetings",
    "run_experiment",
    "run_bounds",
    "run_avar",
    "run_inefficiency_sweep",
]

PILOT_OFFSET = 2**32
AVAR_OFFSET = 2**33
STREAM_RULE = (
    "philox128(key=(master_seed, replicate_index)); "
    f"main replicates at 0.., pilot at {PILOT_OFFSET}.., avar at {AVAR_OFFSET}.."
)

# ---------------------------------------------------------------------------
# worker side

_CTX = None


class _WorkerContext:
    def __init__(self, config_dict: dict, task: dict):
        self.config = ExperimentConfig.from_dict(config_dict)
        self.task = task
        self.target = build_target(self.config.target)
        self.pi0 = build_pi0(self.config.pi0, self.target)
        self.transitions = build_transitions(self.config, self.target)
        self.hs = [(name, make_test_function(name)) for name in self.config.h]


def _init_worker(config_dict, task):
    global _CTX
    _CTX = _WorkerContext(config_dict, task)


def _run_task(index: int) -> dict:
    ctx = _CTX
    kind = ctx.task["kind"]
    start = time.perf_counter()
    stream = derive_stream(ctx.config.seed, ctx.task.get("offset", 0) + index)
    out = {"index": index}

    if kind in ("meetings", "w1"):
        lag = ctx.task["lag"]
        storage = STORAGE_PAIRS if kind == "w1" else STORAGE_NONE
        traj = run_lagged_coupling(
            ctx.pi0, ctx.transitions.step, ctx.transitions.coupled_step,
            lag, 0, stream, max_sweeps=ctx.config.max_sweeps, storage=storage,
        )
        out.update(met=traj.met, tau=(int(traj.tau) if traj.met else None), lag=lag)
        if kind == "w1":
            out["trajectory"] = traj
    elif kind == "estimate":
        k, lag, ell = ctx.task["k"], ctx.task["lag"], ctx.task["ell"]
        traj = run_lagged_coupling(
            ctx.pi0, ctx.transitions.step, ctx.transitions.coupled_step,
            lag, ell, stream, max_sweeps=ctx.config.max_sweeps, storage=STORAGE_FULL,
        )
        out.update(met=traj.met, tau=(int(traj.tau) if traj.met else None), lag=lag)
        if traj.met:
            values, cost = {}, None
            for name, h in ctx.hs:
                record = time_averaged_estimate(traj, h, k, ell)
                values[name] = record.value
                cost = record.cost_units
            out.update(values=values, cost=cost)
        else:
            out.update(values=None, cost=None)
    elif kind == "avar":
        k, lag, ell = ctx.task["k"], ctx.task["lag"], ctx.task["ell"]
        y_anchor = np.asarray(ctx.task["y_anchor"], dtype=float)
        name, h = ctx.hs[0]
        try:
            value = asymptotic_variance(
                h, ctx.pi0, ctx.transitions.step, ctx.transitions.coupled_step,
                k=k, ell=ell, lag=lag, y_anchor=y_anchor, stream=stream,
                m_indices=ctx.config.m_indices, max_sweeps=ctx.config.max_sweeps,
            )
            out.update(met=True, value=value, h=name)
        except UnmetTrajectoryError:
            out.update(met=False, value=None, h=name)
    else:
        raise ValueError(f"unknown task kind {kind!r}")

    out["start"] = start
    out["duration"] = time.perf_counter() - start
    return out


def _map_replicates(config: ExperimentConfig, task: dict, indices, workers: int):
    """Run tasks over replicate indices; yields results in index order.

    On interruption the collected prefix is returned with partial=True.
    """
    config_dict = dataclasses.asdict(config)
    results, partial = [], False
    if workers <= 1:
        _init_worker(config_dict, task)
        try:
            for i in indices:
                results.append(_run_task(i))
        except KeyboardInterrupt:
            partial = True
    else:
        with Pool(workers, initializer=_init_worker, initargs=(config_dict, task)) as pool:
            chunk = max(1, len(indices) // (workers * 4))
            try:
                for res in pool.imap(_run_task, indices, chunksize=chunk):
                    results.append(res)
            except KeyboardInterrupt:
                partial = True
    return results, partial


# ---------------------------------------------------------------------------
# file outputs

def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)  # RFC 4180: CRLF line endings, minimal quoting
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(out_dir: Path, config: ExperimentConfig, command: str, results,
                    outputs, partial: bool, extra=None):
    completion = sorted(
        (r for r in results if "start" in r),
        key=lambda r: r["start"] + r["duration"],
    )
    payload = {
        "schema": 1,
        "command": command,
        "config_hash": config.config_hash(),
        "master_seed": config.seed,
        "replicates": len(results),
        "unmet_count": sum(1 for r in results if not r.get("met", True)),
        "stream_rule": STREAM_RULE,
        "software_version": __version__,
        "workers": config.workers,
        "completion_order": [r["index"] for r in completion],
        "outputs": sorted(outputs),
        "status": "partial" if partial else "complete",
    }
    if extra:
        payload.update(extra)
    _write_json(out_dir / "manifest.json", payload)


def _meetings_rows(results, lag):
    rows = []
    for r in results:
        tau = r.get("tau")
        rows.append([
            r["index"], lag,
            tau if tau is not None else "",
            (tau - lag) if tau is not None else "",
            r.get("met", False),
        ])
    return rows


def _meeting_sample(results, lag, seed) -> MeetingTimeSample:
    sample = MeetingTimeSample(lag=lag, requested=len(results), master_seed=seed)
    for r in results:
        if r.get("met"):
            sample.values.append(r["tau"])
            sample.replicate_indices.append(r["index"])
        else:
            sample.unmet_count += 1
    return sample


# ---------------------------------------------------------------------------
# phases

def _resolve_tuning(config: ExperimentConfig):
    """Fill in 'auto' k / lag / ell via a lag-1 pilot, if anything is auto."""
    if config.k != "auto" and config.lag != "auto" and config.ell != "auto":
        return config.k, config.lag, config.ell, None

    task = {"kind": "meetings", "lag": 1, "offset": PILOT_OFFSET}
    results, partial = _map_replicates(config, task, range(config.pilot_replicates), config.workers)
    if partial:
        raise RuntimeError("interrupted during pilot phase")
    sample = _meeting_sample(results, 1, config.seed)
    if not sample.values:
        raise RuntimeError("pilot produced no meetings; increase max_sweeps or revisit the coupling")
    advice = tune(sample, config.quantile_level)
    k = advice.k if config.k == "auto" else config.k
    lag = advice.lag if config.lag == "auto" else config.lag
    ell = advice.ell if config.ell == "auto" else config.ell
    if ell < k:
        raise RuntimeError(f"resolved ell={ell} below k={k}; adjust the config")
    return k, lag, ell, advice


def run_tune(config: ExperimentConfig, out_dir=None) -> dict:
    """Pilot meetings with lag 1, then the quantile tuning rule."""
    out_dir = Path(out_dir or config.out_dir)
    task = {"kind": "meetings", "lag": 1, "offset": PILOT_OFFSET}
    results, partial = _map_replicates(config, task, range(config.pilot_replicates), config.workers)
    sample = _meeting_sample(results, 1, config.seed)
    if not sample.values:
        raise RuntimeError("pilot produced no meetings; increase max_sweeps or revisit the coupling")
    advice = tune(sample, config.quantile_level)
    payload = {
        "command": "tune",
        "k": advice.k,
        "lag": advice.lag,
        "ell": advice.ell,
        "quantile_level": advice.quantile_level,
        "pilot_replicates": config.pilot_replicates,
        "pilot_lag": 1,
        "pilot_unmet": sample.unmet_count,
        "seed": config.seed,
    }
    _write_json(out_dir / "tuning.json", payload)
    _write_manifest(out_dir, config, "tune", results, ["tuning.json"], partial)
    return payload


def run_meetings(config: ExperimentConfig, out_dir=None, lag=None) -> dict:
    """Independent meeting times at one lag; writes meetings.csv."""
    out_dir = Path(out_dir or config.out_dir)
    if lag is None:
        lag = config.lag if config.lag != "auto" else 1
    task = {"kind": "meetings", "lag": lag}
    results, partial = _map_replicates(config, task, range(config.replicates), config.workers)
    _write_csv(out_dir / "meetings.csv",
               ["replicate_index", "lag", "tau", "tau_minus_lag", "met"],
               _meetings_rows(results, lag))
    _write_manifest(out_dir, config, "meetings", results, ["meetings.csv"], partial,
                    extra={"lag": lag})
    sample = _meeting_sample(results, lag, config.seed)
    return {"lag": lag, "met": len(sample.values), "unmet": sample.unmet_count,
            "out_dir": str(out_dir)}


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Full estimation run: replicates, aggregation, and all output files."""
    out_dir = Path(out_dir or config.out_dir)
    k, lag, ell, advice = _resolve_tuning(config)

    task = {"kind": "estimate", "k": k, "lag": lag, "ell": ell}
    results, partial = _map_replicates(config, task, range(config.replicates), config.workers)

    est_rows = []
    records = {name: [] for name in config.h}
    for r in results:
        for name in config.h:
            if r.get("met"):
                value = r["values"][name]
                est_rows.append([r["index"], name, repr(value), repr(r["cost"]), r["tau"], True])
                records[name].append(EstimatorRecord(
                    value=value, cost_units=r["cost"], tau=r["tau"],
                    params={"k": k, "ell": ell, "lag": lag}, replicate_index=r["index"],
                ))
            else:
                est_rows.append([r["index"], name, "", "", "", False])

    unmet = sum(1 for r in results if not r.get("met"))
    estimates = {}
    for name in config.h:
        if len(records[name]) >= 2:
            rep = aggregate(records[name], config.alpha)
            estimates[name] = {
                "mean": rep.mean, "std": rep.std, "ci_low": rep.ci_low,
                "ci_high": rep.ci_high, "count": rep.count,
                "mean_cost": rep.mean_cost, "inefficiency": rep.inefficiency,
            }
        else:
            estimates[name] = None

    report = {
        "command": "estimate",
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "k": k, "lag": lag, "ell": ell,
        "alpha": config.alpha,
        "replicates": len(results),
        "unmet": unmet,
        "tuned": advice is not None,
        "estimates": estimates,
        "status": "partial" if partial else "complete",
    }
    _write_csv(out_dir / "estimates.csv",
               ["replicate_index", "h", "value", "cost", "tau", "met"], est_rows)
    _write_csv(out_dir / "meetings.csv",
               ["replicate_index", "lag", "tau", "tau_minus_lag", "met"],
               _meetings_rows(results, lag))
    _write_json(out_dir / "report.json", report)
    _write_manifest(out_dir, config, "estimate", results,
                    ["estimates.csv", "meetings.csv", "report.json"], partial,
                    extra={"k": k, "lag": lag, "ell": ell})
    return report


def _curve_rows(curve):
    return [
        [curve.metric, curve.lag, int(k), repr(float(v)), repr(float(se)), curve.replicates]
        for k, v, se in zip(curve.ks, curve.values, curve.stderrs)
    ]


def run_bounds(config: ExperimentConfig, metric: str, out_dir=None, lags=None) -> dict:
    """Bound curves, one file per lag; TV needs only meeting times, W1 stores
    the pre-meeting pairs."""
    if metric not in ("tv", "w1"):
        raise ValueError("metric must be 'tv' or 'w1'")
    out_dir = Path(out_dir or config.out_dir)
    lags = list(lags or config.lags)
    outputs, all_results = [], []
    summaries = {}
    for lag in lags:
        task = {"kind": "w1" if metric == "w1" else "meetings", "lag": lag}
        results, partial = _map_replicates(config, task, range(config.replicates), config.workers)
        all_results.extend(results)
        if partial:
            _write_manifest(out_dir, config, f"{metric}-bounds", all_results, outputs, True)
            raise RuntimeError("interrupted during bounds run; partial manifest written")
        if metric == "tv":
            sample = _meeting_sample(results, lag, config.seed)
            curve = tv_bound_curve(sample)
        else:
            trajectories = [r["trajectory"] for r in results if r.get("met")]
            unmet = sum(1 for r in results if not r.get("met"))
            if unmet:
                raise RuntimeError(f"{unmet} capped runs at lag {lag}; W1 bound would be understated")
            curve = w1_bound_curve(trajectories)
        name = f"{metric}_bounds_L{lag}.csv"
        _write_csv(out_dir / name, ["metric", "L", "k", "value", "stderr", "C"],
                   _curve_rows(curve))
        outputs.append(name)
        summaries[lag] = {"k_zero": int(curve.ks[-1]), "at_zero": float(curve.values[-1])}
    _write_manifest(out_dir, config, f"{metric}-bounds", all_results, outputs, False,
                    extra={"lags": lags})
    return {"metric": metric, "lags": lags, "curves": summaries, "out_dir": str(out_dir)}


def _avar_params(config: ExperimentConfig):
    k = config.avar_k
    lag = config.avar_lag
    ell = config.avar_ell
    if k is None or lag is None or ell is None:
        rk, rlag, rell, _ = _resolve_tuning(config)
        k = rk if k is None else k
        lag = rlag if lag is None else lag
        ell = rell if ell is None else ell
    return k, lag, ell


def run_avar(config: ExperimentConfig, out_dir=None) -> dict:
    """Independent copies of the asymptotic-variance estimator, averaged."""
    out_dir = Path(out_dir or config.out_dir)
    k, lag, ell = _avar_params(config)
    target = build_target(config.target)
    anchor = (np.asarray(config.y_anchor, dtype=float)
              if config.y_anchor is not None else pi0_mean(config.pi0, target))
    task = {"kind": "avar", "k": k, "lag": lag, "ell": ell,
            "y_anchor": anchor.tolist(), "offset": AVAR_OFFSET}
    results, partial = _map_replicates(config, task, range(config.avar_copies), config.workers)
    values = np.array([r["value"] for r in results if r.get("met")], dtype=float)
    failed = sum(1 for r in results if not r.get("met"))
    if values.size < 2:
        raise RuntimeError("not enough successful asymptotic-variance copies to average")
    payload = {
        "command": "avar",
        "h": config.h[0],
        "copies": int(values.size),
        "failed": failed,
        "mean": float(values.mean()),
        "stderr": float(values.std(ddof=1) / math.sqrt(values.size)),
        "k": k, "lag": lag, "ell": ell,
        "y_anchor": anchor.tolist(),
        "seed": config.seed,
        "status": "partial" if partial else "complete",
    }
    _write_json(out_dir / "avar.json", payload)
    _write_manifest(out_dir, config, "avar", results, ["avar.json"], partial,
                    extra={"k": k, "lag": lag, "ell": ell})
    return payload


def run_inefficiency_sweep(config: ExperimentConfig, out_dir=None) -> dict:
    """Cost/variance/inefficiency across burn-in values, lag 1 versus lag k.

    The ratio column divides each inefficiency by the asymptotic-variance
    estimate of the underlying chain, the natural scale-free reference.
    """
    out_dir = Path(out_dir or config.out_dir)
    if not config.k_values:
        raise ValueError("inefficiency sweep requires k_values in the config")
    h_name = config.h[0]

    ref = run_avar(config, out_dir=out_dir)
    v_ref = ref["mean"]

    sweep_rows, chrono_rows, all_results = [], [], []
    for k in config.k_values:
        for lag in (1, k):
            ell = 10 * k
            task = {"kind": "estimate", "k": k, "lag": lag, "ell": ell}
            results, partial = _map_replicates(config, task, range(config.replicates), config.workers)
            all_results.extend(results)
            if partial:
                raise RuntimeError("interrupted during inefficiency sweep")
            values = np.array([r["values"][h_name] for r in results if r.get("met")], dtype=float)
            costs = np.array([r["cost"] for r in results if r.get("met")], dtype=float)
            unmet = sum(1 for r in results if not r.get("met"))
            variance = float(values.var(ddof=1)) if values.size >= 2 else float("nan")
            mean_cost = float(costs.mean()) if costs.size else float("nan")
            ineff = mean_cost * variance
            sweep_rows.append([k, lag, values.size, unmet, repr(mean_cost),
                               repr(variance), repr(ineff), repr(ineff / v_ref)])
            for r in results:
                chrono_rows.append([k, lag, r["index"], repr(r["start"]), repr(r["duration"])])

    _write_csv(out_dir / "sweep.csv",
               ["k", "L", "replicates", "unmet", "mean_cost", "variance",
                "inefficiency", "ratio_to_asymptotic_variance"], sweep_rows)
    _write_csv(out_dir / "chronology.csv",
               ["k", "L", "replicate_index", "start_seconds", "duration_seconds"],
               chrono_rows)
    _write_manifest(out_dir, config, "inefficiency", all_results,
                    ["sweep.csv", "chronology.csv", "avar.json"], False,
                    extra={"k_values": config.k_values, "reference_avar": v_ref})
    return {"k_values": config.k_values, "reference_avar": v_ref, "out_dir": str(out_dir)}
