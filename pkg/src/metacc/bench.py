"""Experiment orchestration: scenario runs, significance tables, report files.

A run trains each requested learner on a scenario's training prior for each
seed, evaluates query BER on every test-grid setup, and annotates rows with
the training prior's diversity and its shift distance to the test prior.
Aggregation produces a Welch-test win table against a baseline and mean ranks
with the shared-rank tie convention.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .infometrics import diversity_score, shift_distance
from .metalearn import ALGORITHMS, MetaConfig, evaluate, train_meta
from .taskdist import (DEFAULT_TEST_COUNTS, Scenario, TaskDistributionSpec,
                       build_dataset, channel_params, get_scenario,
                       sample_episode)

DESK_SCALE_ITERATIONS = 2000
# fixed stream for metric annotations so rows are recomputable from the prior
METRIC_SEED = 815_001
TEST_SEED_BASE = 1 << 32

RESULT_COLUMNS = ("scenario", "learner", "seed", "train_digest", "family",
                  "test_params", "ber", "stderr", "n_episodes", "wall_time",
                  "diversity", "shift")


def worker_count() -> int:
    """Parallel workers for independent runs; METACC_THREADS caps it, default 1."""
    raw = os.environ.get("METACC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def spec_digest(spec: TaskDistributionSpec) -> str:
    payload = [{"family": c.family, "weight": c.weight,
                "ranges": {n: list(r) for n, r in c.ranges}}
               for c in spec.components]
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    learner: str
    seed: int
    train_digest: str
    family: str
    test_params: str        # JSON, dB / unitless values
    ber: float
    stderr: float
    n_episodes: int
    wall_time: float
    diversity: float
    shift: float

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"BER {self.ber} outside [0, 1]")
        if self.stderr < 0 or self.n_episodes < 1 or self.wall_time < 0:
            raise ValueError("bad result row statistics")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    learners: tuple[str, ...]
    seeds: tuple[int, ...]
    out_dir: str = "results"
    desk_scale: bool = False
    meta: dict = field(default_factory=dict)
    train_counts: tuple[int, int, int] | None = None
    test_counts: tuple[int, int, int] | None = None
    episodes_per_setup: int = 50
    metric_codewords: int = 10
    metric_samples: int = 1000

    def __post_init__(self):
        if not self.learners or not self.seeds:
            raise ValueError("need at least one learner and one seed")
        bad = [l for l in self.learners if l not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown learners {bad}; valid: {list(ALGORITHMS)}")


def meta_config_for(cfg: ExperimentConfig, learner: str) -> MetaConfig:
    fields = dict(cfg.meta)
    fields["algorithm"] = learner
    if cfg.desk_scale and "meta_iterations" not in cfg.meta:
        fields["meta_iterations"] = DESK_SCALE_ITERATIONS
    return MetaConfig(**fields)


def scenario_metrics(sc: Scenario, m_codewords: int = 10,
                     n_samples: int = 1000):
    """Diversity of the training prior and shift to the test prior, computed
    on fixed streams so any row can be re-derived from the scenario alone."""
    div = diversity_score(sc.train, m_codewords=m_codewords,
                          n_samples=n_samples,
                          rng=np.random.default_rng(METRIC_SEED))
    shf = shift_distance(sc.train, sc.test, m_codewords=m_codewords,
                         n_samples=n_samples,
                         rng=np.random.default_rng(METRIC_SEED + 1))
    return div, shf


def eval_state_rows(sc: Scenario, state, learner: str, seed: int, test_ds,
                    digest: str, div, shf, episodes_per_setup: int,
                    train_time: float = 0.0) -> list[ResultRow]:
    """Evaluate a trained state on every test setup.  Episode streams depend
    only on (seed, setup index), so different learners at the same seed see
    identical episodes and comparisons are paired."""
    mc = state.config
    t0 = time.perf_counter()
    cells = []
    for si, setup in enumerate(sc.test_setups):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, si]))
        eps = [sample_episode(test_ds, mc.n_way, mc.k_shot, mc.l_query, rng,
                              setup=si)
               for _ in range(episodes_per_setup)]
        mean, se = evaluate(state, eps)
        cells.append((setup, mean, se, len(eps)))
    wall = train_time + (time.perf_counter() - t0)
    return [ResultRow(sc.name, learner, seed, digest, setup.family,
                      json.dumps(channel_params(setup), sort_keys=True),
                      mean, se, n, wall, div.value, shf.value)
            for setup, mean, se, n in cells]


def _run_single(cfg: ExperimentConfig, sc: Scenario, learner: str, seed: int,
                train_ds, test_ds, digest, div, shf) -> list[ResultRow]:
    mc = meta_config_for(cfg, learner)
    t0 = time.perf_counter()
    state = train_meta(mc, train_ds, seed)
    train_time = time.perf_counter() - t0
    return eval_state_rows(sc, state, learner, seed, test_ds, digest, div,
                           shf, cfg.episodes_per_setup, train_time)


def run_experiment(cfg: ExperimentConfig,
                   scenario_override: Scenario | None = None) -> list[ResultRow]:
    sc = scenario_override if scenario_override is not None \
        else get_scenario(cfg.scenario)
    digest = spec_digest(sc.train)
    div, shf = scenario_metrics(sc, cfg.metric_codewords, cfg.metric_samples)
    train_counts = cfg.train_counts or sc.train_counts
    test_counts = cfg.test_counts or \
        (len(sc.test_setups),) + DEFAULT_TEST_COUNTS[1:]
    if test_counts[0] != len(sc.test_setups):
        raise ValueError(
            f"test counts ask for {test_counts[0]} setups, scenario defines "
            f"{len(sc.test_setups)}")
    rows: list[ResultRow] = []
    for seed in cfg.seeds:
        train_ds = build_dataset(sc.train, train_counts, "meta-train", seed)
        test_ds = build_dataset(None, test_counts, "meta-test",
                                TEST_SEED_BASE + seed,
                                setups=list(sc.test_setups))

        def job(learner):
            return _run_single(cfg, sc, learner, seed, train_ds, test_ds,
                               digest, div, shf)

        workers = min(worker_count(), len(cfg.learners))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batches = list(pool.map(job, cfg.learners))
        else:
            batches = [job(l) for l in cfg.learners]
        for b in batches:
            rows.extend(b)
    return rows


# ---------------------------------------------------------------------------
# aggregation

def _pooled_stats(rows: list[ResultRow]):
    """Exact pooled (n, mean, sample variance) of per-episode BERs recovered
    from per-row summary statistics."""
    n = sum(r.n_episodes for r in rows)
    if n < 2:
        return n, (rows[0].ber if rows else 0.0), 0.0
    total = sum(r.n_episodes * r.ber for r in rows)
    mean = total / n
    # per-row sum of squares: (n_i - 1) s_i^2 + n_i mean_i^2,  s_i^2 = n_i se_i^2
    ss = sum((r.n_episodes - 1) * (r.n_episodes * r.stderr ** 2)
             + r.n_episodes * r.ber ** 2 for r in rows)
    var = max((ss - n * mean * mean) / (n - 1), 0.0)
    return n, mean, var


def _welch_p(m1, v1, n1, m2, v2, n2) -> float:
    se2 = v1 / n1 + v2 / n2
    if se2 == 0.0:
        return 1.0 if m1 == m2 else 0.0
    t = (m1 - m2) / np.sqrt(se2)
    num = se2 ** 2
    den = (v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1)
    df = num / den if den > 0 else n1 + n2 - 2
    return float(2.0 * stats.t.sf(abs(t), df))


def win_table(results: list[ResultRow], baseline: str) -> dict:
    """Per learner: fraction of scenarios where it beats the baseline with a
    Welch t-test on pooled per-episode BERs (win = lower mean and p < 0.05).
    Cells without at least two seeds on both sides are N/A."""
    by_cell: dict[tuple[str, str], list[ResultRow]] = {}
    for r in results:
        by_cell.setdefault((r.learner, r.scenario), []).append(r)
    learners = sorted({r.learner for r in results})
    scenarios = sorted({r.scenario for r in results})
    table: dict = {"baseline": baseline, "learners": {}}
    for learner in learners:
        cells = {}
        wins = comparable = 0
        for scn in scenarios:
            ours = by_cell.get((learner, scn), [])
            base = by_cell.get((baseline, scn), [])
            if learner == baseline or not ours or not base:
                cells[scn] = "N/A"
                continue
            if (len({r.seed for r in ours}) < 2
                    or len({r.seed for r in base}) < 2):
                cells[scn] = "N/A"
                continue
            n1, m1, v1 = _pooled_stats(ours)
            n2, m2, v2 = _pooled_stats(base)
            p = _welch_p(m1, v1, n1, m2, v2, n2)
            win = m1 < m2 and p < 0.05
            cells[scn] = "win" if win else "no-win"
            comparable += 1
            wins += win
        pct = 100.0 * wins / comparable if comparable else None
        table["learners"][learner] = {"pct_wins": pct, "cells": cells}
    return table


def rank_table(results: list[ResultRow]) -> dict:
    """Average BER rank per learner over (scenario, seed, test point) cells;
    tied BERs share the mean of the ranks they span."""
    by_cell: dict[tuple, list[ResultRow]] = {}
    for r in results:
        by_cell.setdefault((r.scenario, r.seed, r.test_params), []).append(r)
    ranks: dict[str, list[float]] = {}
    for cell_rows in by_cell.values():
        if len(cell_rows) < 2:
            continue
        bers = np.array([r.ber for r in cell_rows])
        cell_ranks = stats.rankdata(bers, method="average")
        for r, rank in zip(cell_rows, cell_ranks):
            ranks.setdefault(r.learner, []).append(float(rank))
    out = {}
    for learner in sorted(ranks):
        vals = np.array(ranks[learner])
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out[learner] = {"mean_rank": float(vals.mean()), "stderr": se,
                        "cells": len(vals)}
    return out


# ---------------------------------------------------------------------------
# report files

def write_results_csv(results: list[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([getattr(r, c) for c in RESULT_COLUMNS])


def read_results_csv(path) -> list[ResultRow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"unexpected results header in {path}")
        for rec in reader:
            out.append(ResultRow(
                rec["scenario"], rec["learner"], int(rec["seed"]),
                rec["train_digest"], rec["family"], rec["test_params"],
                float(rec["ber"]), float(rec["stderr"]),
                int(rec["n_episodes"]), float(rec["wall_time"]),
                float(rec["diversity"]), float(rec["shift"])))
    return out


def _gain_rows(results: list[ResultRow], baseline: str):
    """Per (scenario, learner, seed): mean over test points of
    (baseline BER - learner BER), paired by test point."""
    base = {(r.scenario, r.seed, r.test_params): r.ber
            for r in results if r.learner == baseline}
    acc: dict[tuple, list[float]] = {}
    meta: dict[tuple, ResultRow] = {}
    for r in results:
        if r.learner == baseline:
            continue
        key = (r.scenario, r.seed, r.test_params)
        if key not in base:
            continue
        gkey = (r.scenario, r.learner, r.seed)
        acc.setdefault(gkey, []).append(base[key] - r.ber)
        meta[gkey] = r
    for gkey in sorted(acc):
        scn, learner, seed = gkey
        r = meta[gkey]
        yield scn, learner, seed, r.diversity, r.shift, float(np.mean(acc[gkey]))


def emit_reports(results: list[ResultRow], out_dir, baseline: str = "erm") -> dict:
    """Write results.csv, summary.json with the win/rank tables, and the six
    plot-data CSVs.  Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plots = out / "plotdata"
    plots.mkdir(exist_ok=True)
    paths = {"results": out / "results.csv", "summary": out / "summary.json"}

    write_results_csv(results, paths["results"])

    have_baseline = any(r.learner == baseline for r in results)
    summary = {
        "baseline": baseline,
        "gain_convention": "gain = baseline BER - learner BER (positive is better)",
        "win_table": win_table(results, baseline) if have_baseline else None,
        "rank_table": rank_table(results),
        "n_rows": len(results),
    }
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)

    def emit(name, header, rows):
        p = plots / f"{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        paths[name] = p

    breadth_scn = lambda s: s.endswith("-focused") or s.endswith("-expanded") \
        or s == "mixed"
    emit("breadth",
         ("scenario", "learner", "seed", "family", "test_params", "ber"),
         [(r.scenario, r.learner, r.seed, r.family, r.test_params, r.ber)
          for r in results if breadth_scn(r.scenario)])
    emit("shift-within",
         ("scenario", "learner", "seed", "snr_b_db", "ber"),
         [(r.scenario, r.learner, r.seed,
           json.loads(r.test_params).get("snr_b_db"), r.ber)
          for r in results if r.scenario.startswith("bursty-shift-")])
    emit("shift-across",
         ("scenario", "learner", "seed", "family", "ber"),
         [(r.scenario, r.learner, r.seed, r.family, r.ber)
          for r in results
          if r.scenario.endswith("-expanded") or r.scenario == "mixed"])
    gains = list(_gain_rows(results, baseline))
    emit("diversity-gain",
         ("scenario", "learner", "seed", "diversity", "gain"),
         [(s, l, sd, dv, g) for s, l, sd, dv, _, g in gains])
    emit("distance-gain",
         ("scenario", "learner", "seed", "shift", "gain"),
         [(s, l, sd, sh, g) for s, l, sd, _, sh, g in gains])
    emit("domain-count",
         ("scenario", "learner", "seed", "n_setups", "ber"),
         [(r.scenario, r.learner, r.seed, int(r.scenario.rsplit("-", 1)[1]),
           r.ber)
          for r in results if r.scenario.startswith("domain-count-")])
    return paths
