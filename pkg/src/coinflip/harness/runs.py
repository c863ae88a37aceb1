"""Experiment drivers.  Each writes UTF-8 CSVs plus ``summary.json``.

Every run is a pure function of (config, seed): all randomness comes from
:class:`~coinflip.agent.RngStreams` or from generators seeded with explicit
integer tuples, and floats are written with ``repr`` so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from coinflip.agent import Agent, RngStreams, make_bonus_source
from coinflip.envs import N_ACTIONS, Gridworld, GroundTruthCounter
from coinflip.errors import InvalidArgumentError, TrainingDivergedError
from coinflip.estimator import estimator_variance, simulate_inverse_counts
from coinflip.function_approx import SparseRows
from coinflip.harness.config import MIN_ABLATION_SEEDS, ExperimentConfig, echo_config
from coinflip.linear_cfn import expected_inverse_count, fit_linear
from coinflip.metrics import mean_and_se, normal_interval, spearman, variance_and_se

log = logging.getLogger(__name__)

SUMMARY = "summary.json"
ABLATION_CELLS = (
    ("full", True, True),
    ("no_prior", False, True),
    ("no_prioritization", True, False),
    ("neither", False, False),
)
LABEL_LAWS = {"rademacher": 1.0, "gaussian": 3.0}  # label fourth moments
UNBIASED_REL_TOL = 0.05
VARIANCE_REL_TOL = 0.05
SUCCESS_RETURN = 0.9


# ---------------------------------------------------------------------------
# output helpers


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise AssertionError(f"row width {len(row)} != header width {len(header)}")
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if not math.isfinite(f):
            raise TrainingDivergedError(f"non-finite value {f} in summary")
        return f
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_summary(out_dir, summary: dict) -> Path:
    path = Path(out_dir) / SUMMARY
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _check_finite(name: str, values) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise TrainingDivergedError(f"non-finite {name}")


def _prepare(config: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(config, out)
    return out


# ---------------------------------------------------------------------------
# estimator validation


def _mean_verdict(mean: float, se: float, target: float) -> str:
    if se == 0.0:
        return "pass" if mean == target else "fail"
    if 3.0 * se > UNBIASED_REL_TOL * target:
        return "inconclusive"
    return "pass" if abs(mean - target) <= 3.0 * se else "fail"


def _variance_verdict(var: float, se: float, theory: float) -> str:
    if theory == 0.0:
        return "pass" if var == 0.0 else "fail"
    tol = VARIANCE_REL_TOL * theory
    if 3.0 * se > tol:
        return "inconclusive"
    return "pass" if abs(var - theory) <= tol else "fail"


def estimator_rows(trials: int, n_list, d_list, seed: int):
    """Per (label law, n, d): empirical mean and variance against theory."""
    rows = []
    for law_index, (law, fourth) in enumerate(LABEL_LAWS.items()):
        for n in n_list:
            for d in d_list:
                rng = np.random.default_rng([seed, law_index, n, d])
                draws = simulate_inverse_counts(n, d, trials, rng, labels=law)
                mean, se_mean = mean_and_se(draws)
                var, se_var = variance_and_se(draws)
                theory_var = estimator_variance(n, fourth) / d
                rows.append(dict(
                    labels=law, n=n, d=d, trials=trials,
                    mean=mean, se_mean=se_mean, theory_mean=1.0 / n,
                    unbiased=_mean_verdict(mean, se_mean, 1.0 / n),
                    variance=var, se_variance=se_var, theory_variance=theory_var,
                    variance_check=_variance_verdict(var, se_var, theory_var),
                ))
    return rows


def _law_comparison(rows):
    """One-sided test that Gaussian labels give a larger variance than coin flips."""
    by_key = {(r["labels"], r["n"], r["d"]): r for r in rows}
    out = []
    for (law, n, d), coin in by_key.items():
        if law != "rademacher" or ("gaussian", n, d) not in by_key:
            continue
        gauss = by_key[("gaussian", n, d)]
        diff = gauss["variance"] - coin["variance"]
        se = math.hypot(gauss["se_variance"], coin["se_variance"])
        z = math.inf if se == 0 else diff / se
        verdict = "pass" if z > 3 else ("fail" if z < -3 else "inconclusive")
        out.append(dict(n=n, d=d, coin_variance=coin["variance"], gaussian_variance=gauss["variance"],
                        difference=diff, se=se, z=z if math.isfinite(z) else None, verdict=verdict))
    return out


def validate_estimator(config: ExperimentConfig, out_dir=None) -> dict:
    out = _prepare(config, out_dir)
    seed = config.seeds[0]
    rows = estimator_rows(config.trials, config.n_list, config.d_list, seed)
    header = list(rows[0]) if rows else ["labels", "n", "d"]
    write_csv(out / "estimator.csv", header, [list(r.values()) for r in rows])
    comp = _law_comparison(rows)
    comp_header = ["n", "d", "coin_variance", "gaussian_variance", "difference", "se", "z", "verdict"]
    write_csv(out / "variance_comparison.csv", comp_header, [[c[k] for k in comp_header] for c in comp])
    coin = [r for r in rows if r["labels"] == "rademacher"]
    summary = {
        "kind": config.kind,
        "seed": seed,
        "trials": config.trials,
        "unbiased": {v: sum(r["unbiased"] == v for r in coin) for v in ("pass", "fail", "inconclusive")},
        "variance": {v: sum(r["variance_check"] == v for r in rows) for v in ("pass", "fail", "inconclusive")},
        "all_unbiased_pass": all(r["unbiased"] == "pass" for r in coin),
    }
    write_summary(out, summary)
    return summary


# ---------------------------------------------------------------------------
# linear CFN checks


def linear_check(config: ExperimentConfig, out_dir=None, counts=(1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 25),
                 n_datasets: int = 3, n_rows: int = 12, n_features: int = 4) -> dict:
    """Tabular recovery on one-hot data and Monte-Carlo checks on random data."""
    out = _prepare(config, out_dir)
    seed = config.seeds[0]
    k = len(counts)
    states = np.repeat(np.eye(k), counts, axis=0)
    expected = expected_inverse_count(np.eye(k), states)
    tab_rows = []
    for i, (c, e) in enumerate(zip(counts, expected)):
        tab_rows.append([i, c, e, 1.0 / c, abs(e - 1.0 / c), math.sqrt(max(e, 0.0))])
    write_csv(out / "tabular.csv", ["state", "count", "expected_inverse_count", "inverse_count",
                                    "abs_error", "bonus"], tab_rows)

    d = config.cfn.d
    mc_rows = []
    for ds in range(n_datasets):
        rng = np.random.default_rng([seed, ds])
        s = rng.standard_normal((n_rows, n_features))
        queries = rng.standard_normal((2, n_features))
        closed = expected_inverse_count(queries, s)
        draws = np.empty((config.trials, len(queries)))
        for t in range(config.trials):
            labels = rng.choice([-1.0, 1.0], size=(n_rows, d))
            draws[t] = fit_linear(s, labels).inverse_count(queries)
        for q in range(len(queries)):
            mean, se = mean_and_se(draws[:, q])
            z = (mean - closed[q]) / se
            mc_rows.append([ds, q, closed[q], mean, se, z, "pass" if abs(z) <= 3 else "fail"])
    write_csv(out / "monte_carlo.csv", ["dataset", "query", "closed_form", "mc_mean", "mc_se", "z", "verdict"],
              mc_rows)
    summary = {
        "kind": config.kind,
        "seed": seed,
        "tabular_max_abs_error": max(r[4] for r in tab_rows),
        "monte_carlo_pass": all(r[-1] == "pass" for r in mc_rows),
        "trials": config.trials,
    }
    if 25 in counts:
        summary["bonus_at_25"] = tab_rows[list(counts).index(25)][5]
    write_summary(out, summary)
    return summary


# ---------------------------------------------------------------------------
# bonus accuracy


def all_cell_inputs(env: Gridworld):
    """Encodings of every cell indexed by cell id (sparse rows for one-hot)."""
    n = env.config.n_cells
    if env.config.encoding == "one_hot":
        return SparseRows(np.arange(n)[:, None], np.ones((n, 1)), n)
    return np.stack([env.encode((*env.cell_from_index(i), 0)) for i in range(n)])


def _source_bonuses(source, inputs) -> np.ndarray:
    model = source.model
    return np.asarray(model.bonus(inputs), dtype=np.float64)


def _accuracy_metrics(pred: np.ndarray, counts: np.ndarray, with_mse: bool) -> dict:
    visited = np.flatnonzero(counts)
    out = {"n_visited": int(visited.size), "unique_mse": None, "weighted_mse": None, "spearman": None}
    if visited.size == 0:
        return out
    true = 1.0 / np.sqrt(counts[visited])
    p = pred[visited]
    if with_mse:
        err = (p - true) ** 2
        out["unique_mse"] = float(np.mean(err))
        out["weighted_mse"] = float(np.sum(counts[visited] * err) / counts[visited].sum())
    if visited.size >= 2:
        out["spearman"] = spearman(p, true)
    return out


def histogram_rows(pred: np.ndarray, counts: np.ndarray, bins: int):
    """Bonus histogram split into trained (visited) and never-trained cells."""
    hi = max(1.5, float(pred.max()) if pred.size else 1.5)
    edges = np.linspace(0.0, hi, bins + 1)
    rows = []
    for regime, mask in (("trained", counts > 0), ("untrained", counts == 0)):
        h, _ = np.histogram(pred[mask], bins=edges)
        rows.extend([regime, edges[i], edges[i + 1], int(h[i])] for i in range(bins))
    return rows


def bonus_accuracy_single(config: ExperimentConfig, seed: int, out_dir, cfn_overrides=None) -> dict:
    """One seed: roll the policy, train the bonus module, log accuracy."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = Gridworld(config.env_config())
    rngs = RngStreams.from_seed(seed)
    sparse = env.config.encoding == "one_hot"
    cfn_cfg = config.cfn_config(**(cfn_overrides or {}))
    source = make_bonus_source(config.bonus_source, env.observation_dim, rngs.bonus, sparse, cfn_cfg, config.rnd)
    agent = None
    if config.policy == "epsilon_greedy":
        agent = Agent(config.agent_config(exploration="epsilon"), env, rngs, bonus_source=source)
        agent.begin_episode(env)
    else:
        _, obs = env.reset()
    counter = GroundTruthCounter(env.config.n_cells)
    inputs = all_cell_inputs(env)
    with_mse = config.bonus_source == "cfn"
    series = []

    def evaluate(step):
        pred = _source_bonuses(source, inputs)
        _check_finite("predicted bonus", pred)
        m = _accuracy_metrics(pred, counter.counts, with_mse)
        series.append([step, m["n_visited"], m["unique_mse"], m["weighted_mse"], m["spearman"]])
        return pred, m

    pred, metrics = None, _accuracy_metrics(np.zeros(0), counter.counts, with_mse)
    for t in range(config.total_steps):
        counter.record(env.cell_index())
        if agent is not None:
            res = agent.step(env)
            if res.done:
                agent.begin_episode(env)
        else:
            source.observe(obs)
            source.train()
            res = env.step(int(rngs.explore.integers(N_ACTIONS)), rngs.env)
            obs = res.observation
            if res.done:
                _, obs = env.reset()
        if (t + 1) % config.eval_every == 0 or t + 1 == config.total_steps:
            pred, metrics = evaluate(t + 1)

    state_rows = []
    if pred is not None:
        for cell in counter.visited():
            x, y = env.cell_from_index(int(cell))
            n = counter.count(int(cell))
            state_rows.append([int(cell), x, y, n, 1.0 / math.sqrt(n), pred[cell]])
    write_csv(out / "states.csv", ["cell", "x", "y", "true_count", "true_bonus", "predicted_bonus"], state_rows)
    write_csv(out / "series.csv", ["step", "n_visited", "unique_mse", "weighted_mse", "spearman"], series)
    summary = {"seed": seed, "steps": config.total_steps, "bonus_source": config.bonus_source, **metrics}
    if pred is not None:
        unvisited = counter.counts == 0
        summary["trained_max_bonus"] = float(pred[~unvisited].max())
        summary["untrained_mean_bonus"] = float(pred[unvisited].mean()) if unvisited.any() else None
        if cfn_cfg.zero_flip_mode and config.bonus_source == "cfn":
            write_csv(out / "histogram.csv", ["regime", "bin_lo", "bin_hi", "count"],
                      histogram_rows(pred, counter.counts, config.histogram_bins))
    write_summary(out, summary)
    return summary


def bonus_accuracy_run(config: ExperimentConfig, out_dir=None) -> dict:
    out = _prepare(config, out_dir)
    per_seed = []
    for seed in config.seeds:
        log.info("bonus-accuracy seed %d", seed)
        per_seed.append(bonus_accuracy_single(config, seed, out / f"seed_{seed}"))
    summary = {"kind": config.kind, "seeds": config.seeds, "runs": per_seed}
    rhos = [s["spearman"] for s in per_seed if s["spearman"] is not None]
    if rhos:
        summary["spearman_mean"], summary["spearman_se"] = _mean_se_or_none(rhos)
    mses = [s["unique_mse"] for s in per_seed if s["unique_mse"] is not None]
    if mses:
        summary["unique_mse_mean"], summary["unique_mse_se"] = _mean_se_or_none(mses)
    write_summary(out, summary)
    return summary


def _mean_se_or_none(values):
    if len(values) == 1:
        return float(values[0]), None
    return mean_and_se(values)


# ---------------------------------------------------------------------------
# ablation


def ablation_run(config: ExperimentConfig, out_dir=None) -> dict:
    """Prior x prioritization grid (plus a zero-flip cell when toggled)."""
    if len(config.seeds) < MIN_ABLATION_SEEDS:
        raise InvalidArgumentError(
            f"ablation needs at least {MIN_ABLATION_SEEDS} seeds per cell, got {len(config.seeds)}")
    if config.bonus_source != "cfn":
        raise InvalidArgumentError("ablation is defined for the CFN bonus only")
    out = _prepare(config, out_dir)
    cells = [(name, dict(prior_enabled=p, prioritization_enabled=q, zero_flip_mode=False))
             for name, p, q in ABLATION_CELLS]
    if config.zero_flip_mode:
        cells.append(("zero_flip", dict(prior_enabled=True, prioritization_enabled=True, zero_flip_mode=True)))
    run_rows, cell_rows, cell_stats = [], [], {}
    for name, overrides in cells:
        mses = []
        for seed in config.seeds:
            log.info("ablation cell %s seed %d", name, seed)
            s = bonus_accuracy_single(config, seed, out / name / f"seed_{seed}", overrides)
            run_rows.append([name, seed, s["unique_mse"], s["weighted_mse"], s["spearman"],
                             s.get("untrained_mean_bonus")])
            mses.append(s["unique_mse"])
        if all(m is not None for m in mses):
            mean, se = mean_and_se(mses)
            cell_stats[name] = (mean, se)
    write_csv(out / "ablation.csv", ["cell", "seed", "unique_mse", "weighted_mse", "spearman",
                                     "untrained_mean_bonus"], run_rows)
    ranked = sorted((k for k in cell_stats if k != "zero_flip"), key=lambda k: cell_stats[k][0])
    for name in cell_stats:
        mean, se = cell_stats[name]
        rank = ranked.index(name) + 1 if name in ranked else None
        cell_rows.append([name, mean, se, rank])
    write_csv(out / "cells.csv", ["cell", "mean_unique_mse", "se_unique_mse", "rank"], cell_rows)
    summary = {"kind": config.kind, "seeds": config.seeds, "order": ranked,
               "cells": {k: {"mean": v[0], "se": v[1]} for k, v in cell_stats.items()}}
    if "full" in cell_stats and "neither" in cell_stats:
        (mf, sf), (mn, sn) = cell_stats["full"], cell_stats["neither"]
        summary["full_beats_neither"] = bool(mf + sf < mn - sn)
    write_summary(out, summary)
    return summary


# ---------------------------------------------------------------------------
# RL


EPISODE_HEADER = ["method", "lambda", "eta", "seed", "episode", "steps", "return", "mean_bonus", "unique_states"]


def _method_agent_config(config: ExperimentConfig, method: str, lam: float):
    if method == "none":
        # the no-bonus baseline explores with epsilon-greedy
        return config.agent_config(bonus_source="none", exploration="epsilon", intrinsic_scale=0.0)
    return config.agent_config(bonus_source=method, intrinsic_scale=lam)


def rl_single(config: ExperimentConfig, method: str, lam: float, eta: float, seed: int):
    """One agent run; returns per-episode rows (completed episodes only)."""
    env = Gridworld(config.env_config(action_noise=eta))
    agent = Agent(_method_agent_config(config, method, lam), env, RngStreams.from_seed(seed),
                  cfn_config=config.cfn_config(), rnd_config=config.rnd)
    visited = np.zeros(env.config.n_cells, dtype=bool)
    rows = []
    agent.begin_episode(env)
    visited[env.cell_index()] = True
    ep, ep_steps, ep_return, ep_bonus = 0, 0, 0.0, 0.0
    for _ in range(config.total_steps):
        m = agent.step(env)
        if not math.isfinite(m.raw_bonus) or not math.isfinite(m.stored_bonus):
            raise TrainingDivergedError(f"non-finite bonus at episode {ep}")
        ep_steps += 1
        ep_return += m.reward
        ep_bonus += m.raw_bonus
        visited[env.cell_index()] = True
        if m.done:
            rows.append([method, lam, eta, seed, ep, ep_steps, ep_return, ep_bonus / ep_steps,
                         int(visited.sum())])
            ep, ep_steps, ep_return, ep_bonus = ep + 1, 0, 0.0, 0.0
            agent.begin_episode(env)
    return rows


def _run_grid(config: ExperimentConfig, etas):
    """Yield (method, lambda, eta, seed, rows) over the configured grid."""
    for eta in etas:
        for method in config.methods:
            lams = [0.0] if method == "none" else config.lambdas
            for lam in lams:
                for seed in config.seeds:
                    log.info("rl method=%s lambda=%s eta=%s seed=%d", method, lam, eta, seed)
                    yield method, lam, eta, seed, rl_single(config, method, lam, eta, seed)


def _final_return(rows, k: int) -> float | None:
    if not rows:
        return None
    return float(np.mean([r[6] for r in rows[-k:]]))


def rl_run(config: ExperimentConfig, out_dir=None) -> dict:
    out = _prepare(config, out_dir)
    eta = config.env.action_noise
    episodes, finals, groups = [], [], {}
    for method, lam, _, seed, rows in _run_grid(config, [eta]):
        episodes.extend(rows)
        final = _final_return(rows, config.final_episodes)
        mean_ret = float(np.mean([r[6] for r in rows])) if rows else None
        finals.append([method, lam, seed, len(rows), final, mean_ret])
        groups.setdefault((method, lam), []).append(rows)
    write_csv(out / "episodes.csv", EPISODE_HEADER, episodes)
    write_csv(out / "final.csv", ["method", "lambda", "seed", "episodes", "final_mean_return", "mean_return"],
              finals)
    curve_rows = []
    for (method, lam), runs in groups.items():
        longest = max((len(r) for r in runs), default=0)
        for e in range(longest):
            vals = [r[e][6] for r in runs if len(r) > e]
            mean, se = (vals[0], None) if len(vals) == 1 else mean_and_se(vals)
            curve_rows.append([method, lam, e, len(vals), mean, se])
    write_csv(out / "curves.csv", ["method", "lambda", "episode", "n_seeds", "mean_return", "se_return"],
              curve_rows)
    summary = {"kind": config.kind, "seeds": config.seeds, "eta": eta, "groups": {}}
    for (method, lam), runs in groups.items():
        vals = [_final_return(r, config.final_episodes) for r in runs]
        vals = [0.0 if v is None else v for v in vals]
        mean, se = _mean_se_or_none(vals)
        summary["groups"][f"{method}@{lam!r}"] = {
            "method": method, "lambda": lam, "final_mean_return": mean, "final_se": se,
            "seeds_at_or_above_0.9": int(sum(v >= SUCCESS_RETURN for v in vals)),
            "per_seed_final": vals,
        }
    write_summary(out, summary)
    return summary


def noise_sweep(config: ExperimentConfig, out_dir=None) -> dict:
    """Mean training return per (method, eta, seed) plus CFN-RND gaps."""
    for eta in config.noise_levels:
        if not 0.0 <= eta < 1.0:
            raise InvalidArgumentError(f"noise level {eta} outside [0, 1)")
    out = _prepare(config, out_dir)
    episodes, bar_rows, cells = [], [], {}
    for method, lam, eta, seed, rows in _run_grid(config, config.noise_levels):
        episodes.extend(rows)
        mean_ret = float(np.mean([r[6] for r in rows])) if rows else 0.0
        cap = config.env_config(action_noise=eta).max_steps
        bar_rows.append([method, lam, eta, seed, cap, len(rows), mean_ret])
        cells.setdefault((method, lam, eta), []).append(mean_ret)
    write_csv(out / "episodes.csv", EPISODE_HEADER, episodes)
    write_csv(out / "bars.csv", ["method", "lambda", "eta", "seed", "max_steps", "episodes", "mean_return"],
              bar_rows)
    agg_rows = []
    for (method, lam, eta), vals in cells.items():
        mean, se = _mean_se_or_none(vals)
        agg_rows.append([method, lam, eta, len(vals), mean, se])
    write_csv(out / "aggregate.csv", ["method", "lambda", "eta", "n_seeds", "mean_return", "se_return"], agg_rows)
    diff_rows = []
    for lam in config.lambdas:
        for eta in config.noise_levels:
            a, b = cells.get(("cfn", lam, eta)), cells.get(("rnd", lam, eta))
            if not a or not b:
                continue
            (ma, sa), (mb, sb) = _mean_se_or_none(a), _mean_se_or_none(b)
            if sa is None or sb is None:
                diff_rows.append([lam, eta, ma - mb, None, None, None])
                continue
            se = math.hypot(sa, sb)
            lo, hi = normal_interval(ma - mb, se)
            diff_rows.append([lam, eta, ma - mb, se, lo, hi])
    write_csv(out / "differences.csv", ["lambda", "eta", "cfn_minus_rnd", "se", "ci95_lo", "ci95_hi"], diff_rows)
    summary = {"kind": config.kind, "seeds": config.seeds, "noise_levels": config.noise_levels,
               "differences": [dict(zip(["lambda", "eta", "cfn_minus_rnd", "se", "ci95_lo", "ci95_hi"], r))
                               for r in diff_rows]}
    write_summary(out, summary)
    return summary


RUNNERS = {
    "validate-estimator": validate_estimator,
    "linear-check": linear_check,
    "bonus-accuracy": bonus_accuracy_run,
    "ablation": ablation_run,
    "rl": rl_run,
    "noise-sweep": noise_sweep,
}


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    return RUNNERS[config.kind](config, out_dir)
