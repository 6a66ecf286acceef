"""Seeded experiment scenarios, CSV reports and summary tables.

Every trial ``t`` gets its own sub-seed ``trial_seed(master, t)``: the first
8 bytes (big-endian) of ``sha256("kadlab/trial/<master>/<t>")``. A trial's
rows depend only on its sub-seed and the config, so trial order and
parallelism never change output. Within a trial, every (n, e) cell rebuilds
the network from the same sub-seed, which pairs the attacked and unattacked
runs on identical honest populations.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import random
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from kadlab.attack import AttackCostModel, attack_cost, closest_honest_distance, generate_sybils, launch_attack
from kadlab.detector import DEFAULT_THRESHOLD, detect
from kadlab.estimator import NetsizeEstimator, sample_network
from kadlab.keyspace import KEY_SPACE, counter_seed, derive_id, to_hex
from kadlab.mitigation import choose_min_cpl, provide_to_region, region_lookup_providers
from kadlab.simnet import HOUR, SimConfig, SimNetwork, build_network

SCENARIOS = (
    "attack-effectiveness",
    "detection-roc",
    "detection-vs-netsize",
    "mitigation-effectiveness",
    "mitigation-overhead",
    "sybil-gen-cost",
    "netsize-accuracy",
)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    n: list[int] = field(default_factory=lambda: [5000])
    e_values: list[int] = field(default_factory=lambda: [45])
    trials: int = 100
    thresholds: list[float] = field(default_factory=lambda: [DEFAULT_THRESHOLD])
    p_miss: float = 0.0
    p_offline: float = 0.0
    seed: int = 0
    ttl_hours: float = 48.0
    output_path: str | None = None
    k: int = 20
    downloaders: int = 10
    samples: int = 256
    margin: int = 0
    provide_before: bool = False
    elapsed_hours: float = 0.0
    c_gen_per_attempt: float = 0.0005 / 45 / 30000
    c_oper: float = 0.16
    t_w: float = 48.0
    t_eff: float = 0.0
    jobs: int = 1

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.n or any(n < self.k for n in self.n):
            raise ConfigError(f"every network size must be >= k={self.k}")
        if not self.e_values or any(e < 0 for e in self.e_values):
            raise ConfigError("e values must be non-negative")
        if not self.thresholds:
            raise ConfigError("at least one threshold is required")
        for name in ("p_miss", "p_offline"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.ttl_hours <= 0:
            raise ConfigError("ttl_hours must be positive")
        if self.downloaders < 1 or self.samples < 1 or self.jobs < 1:
            raise ConfigError("downloaders, samples and jobs must be >= 1")
        if self.scenario == "sybil-gen-cost" and 0 in self.e_values:
            raise ConfigError("sybil-gen-cost needs e >= 1")
        try:
            AttackCostModel(self.c_gen_per_attempt, self.c_oper, self.t_w, self.t_eff)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sim_config(self) -> SimConfig:
        return SimConfig(k=self.k, p_offline=self.p_offline, p_miss=self.p_miss, record_ttl=self.ttl_hours * HOUR)


@dataclass
class ScenarioReport:
    scenario: str
    columns: list[str]
    rows: list[dict]
    summary: dict[str, float]
    config: ScenarioConfig | None = None


def trial_seed(master: int, trial: int) -> int:
    digest = hashlib.sha256(f"kadlab/trial/{master}/{trial}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# -- per-trial building blocks -------------------------------------------------


class _Trial:
    """Network + RNG + target CID for one (trial, n) cell."""

    def __init__(self, cfg: ScenarioConfig, n: int, sub_seed: int):
        self.cfg = cfg
        self.sub_seed = sub_seed
        self.net: SimNetwork = build_network(n, sub_seed, cfg.sim_config())
        self.rng = random.Random(f"kadlab/trial-rng/{sub_seed}/{n}")
        self.cid = derive_id(counter_seed(b"kadlab/cid", sub_seed, 0))
        self.honest = list(self.net.ids)

    def pick_honest(self, count: int, exclude: set[int] = frozenset()) -> list[int]:
        pool = [p for p in self.honest if p not in exclude]
        return self.rng.sample(pool, min(count, len(pool)))

    def estimate(self):
        est = NetsizeEstimator(k=self.cfg.k)
        return sample_network(est, self.net.get_closest_peers, self.rng, self.cfg.samples)

    def attack(self, e: int):
        return launch_attack(self.net, self.cid, e, self.sub_seed, brute_force=False)


def _base(cfg: ScenarioConfig, trial: int, sub_seed: int, n: int, e: int, cid: int) -> dict:
    return {"master_seed": cfg.seed, "trial": trial, "sub_seed": sub_seed, "n": n, "e": e, "cid": to_hex(cid)}


def _attack_effectiveness(cfg: ScenarioConfig, trial: int, sub_seed: int) -> list[dict]:
    rows = []
    for n in cfg.n:
        for e in cfg.e_values:
            t = _Trial(cfg, n, sub_seed)
            provider, *downloaders = t.pick_honest(cfg.downloaders + 1)
            if cfg.provide_before:
                t.net.provide(provider, t.cid)
            t.attack(e)
            if cfg.elapsed_hours:
                t.net.advance_clock(cfg.elapsed_hours * HOUR)
            if not cfg.provide_before:
                t.net.provide(provider, t.cid)
            failed = 0
            for d in downloaders:
                records = t.net.find_providers(d, t.cid)
                failed += not any(r.provider == provider for r in records)
            verdict = detect(t.net.get_closest_peers, t.estimate(), t.cid, cfg.thresholds[0], cfg.k)
            row = _base(cfg, trial, sub_seed, n, e, t.cid)
            row.update(queries=len(downloaders), failed=failed, a_eff=failed / len(downloaders),
                       kl=verdict.kl, flagged=int(verdict.attacked))
            rows.append(row)
    return rows


def _detection(cfg: ScenarioConfig, trial: int, sub_seed: int) -> list[dict]:
    rows = []
    for n in cfg.n:
        for e in cfg.e_values:
            t = _Trial(cfg, n, sub_seed)
            t.attack(e)
            estimate = t.estimate()
            verdict = detect(t.net.get_closest_peers, estimate, t.cid, cfg.thresholds[0], cfg.k)
            for thr in cfg.thresholds:
                row = _base(cfg, trial, sub_seed, n, e, t.cid)
                row.update(n_hat=estimate.n_hat, kl=verdict.kl, threshold=thr, flagged=int(verdict.kl > thr))
                rows.append(row)
    return rows


def _mitigation(cfg: ScenarioConfig, trial: int, sub_seed: int) -> list[dict]:
    rows = []
    for n in cfg.n:
        for e in cfg.e_values:
            t = _Trial(cfg, n, sub_seed)
            region_provider, plain_provider, *downloaders = t.pick_honest(cfg.downloaders + 2)
            t.attack(e)
            n_hat = t.estimate().n_hat
            put = provide_to_region(t.net, region_provider, t.cid, n_hat, cfg.margin)
            t.net.provide(plain_provider, t.cid)
            mitigated = plain_ok = 0
            find_lookups = []
            intersection = []
            updated_honest = {p for p in put.updated if not t.net.nodes[p].is_sybil}
            for d in downloaders:
                records, region = region_lookup_providers(t.net, d, t.cid, n_hat, cfg.margin)
                mitigated += any(r.provider == region_provider for r in records)
                find_lookups.append(region.lookup_count)
                intersection.append(len(updated_honest & region.peers))
                plain = t.net.find_providers(d, t.cid)
                plain_ok += any(r.provider == plain_provider for r in plain)
            sybils = sum(1 for p in put.region.peers if t.net.nodes[p].is_sybil)
            row = _base(cfg, trial, sub_seed, n, e, t.cid)
            row.update(
                n_hat=n_hat,
                min_cpl=put.region.min_cpl_used,
                region_size=len(put.region.peers),
                region_sybils=sybils,
                honest_updated=put.honest_updated,
                provide_lookups=put.region.lookup_count,
                find_lookups=sum(find_lookups) / len(find_lookups),
                intersection=sum(intersection) / len(intersection),
                budget_exhausted=int(put.region.budget_exhausted),
                queries=len(downloaders),
                mitigated=mitigated,
                m_eff=mitigated / len(downloaders),
                plain_success=plain_ok / len(downloaders),
            )
            rows.append(row)
    return rows


def _mitigation_overhead(cfg: ScenarioConfig, trial: int, sub_seed: int) -> list[dict]:
    rows = []
    for n in cfg.n:
        for e in cfg.e_values:
            t = _Trial(cfg, n, sub_seed)
            provider, downloader = t.pick_honest(2)
            t.attack(e)
            n_hat = t.estimate().n_hat
            put = provide_to_region(t.net, provider, t.cid, n_hat, cfg.margin)
            records, region = region_lookup_providers(t.net, downloader, t.cid, n_hat, cfg.margin)
            honest_region = {p for p in region.peers if not t.net.nodes[p].is_sybil}
            row = _base(cfg, trial, sub_seed, n, e, t.cid)
            row.update(
                n_hat=n_hat,
                min_cpl=region.min_cpl_used,
                lookup_count=region.lookup_count,
                provide_lookups=put.region.lookup_count,
                region_size=len(region.peers),
                region_honest=len(honest_region),
                region_sybils=len(region.peers) - len(honest_region),
                updated=len(put.updated),
                intersection=len(honest_region & set(put.updated)),
                found=int(any(r.provider == provider for r in records)),
                budget_exhausted=int(region.budget_exhausted or put.region.budget_exhausted),
            )
            rows.append(row)
    return rows


def _sybil_gen_cost(cfg: ScenarioConfig, trial: int, sub_seed: int) -> list[dict]:
    rows = []
    model = AttackCostModel(cfg.c_gen_per_attempt, cfg.c_oper, cfg.t_w, cfg.t_eff)
    for n in cfg.n:
        t = _Trial(cfg, n, sub_seed)
        bound = closest_honest_distance(t.net, t.cid)
        for e in cfg.e_values:
            batch = generate_sybils(t.cid, e, bound, sub_seed)
            expected = e * KEY_SPACE / bound
            row = _base(cfg, trial, sub_seed, n, e, t.cid)
            row.update(
                distance_bound=format(bound, "064x"),
                expected_attempts=expected,
                attempts=batch.attempts,
                attempt_ratio=batch.attempts / expected,
                c_gen=batch.attempts * cfg.c_gen_per_attempt,
                c_att=attack_cost(model, batch.attempts),
            )
            rows.append(row)
    return rows


def _netsize_accuracy(cfg: ScenarioConfig, trial: int, sub_seed: int) -> list[dict]:
    rows = []
    for n in cfg.n:
        t = _Trial(cfg, n, sub_seed)
        estimate = t.estimate()
        row = _base(cfg, trial, sub_seed, n, 0, t.cid)
        del row["cid"], row["e"]
        row.update(samples=estimate.sample_count, n_hat=estimate.n_hat, rel_error=abs(estimate.n_hat - n) / n,
                   min_cpl=choose_min_cpl(estimate.n_hat, cfg.k))
        rows.append(row)
    return rows


_RUNNERS: dict[str, Callable[[ScenarioConfig, int, int], list[dict]]] = {
    "attack-effectiveness": _attack_effectiveness,
    "detection-roc": _detection,
    "detection-vs-netsize": _detection,
    "mitigation-effectiveness": _mitigation,
    "mitigation-overhead": _mitigation_overhead,
    "sybil-gen-cost": _sybil_gen_cost,
    "netsize-accuracy": _netsize_accuracy,
}


def run_trial(cfg: ScenarioConfig, trial: int) -> list[dict]:
    return _RUNNERS[cfg.scenario](cfg, trial, trial_seed(cfg.seed, trial))


def _run_trial_args(args):
    return run_trial(*args)


# -- aggregation -------------------------------------------------------------------


def _rate(rows: list[dict], column: str, num: str | None = None) -> float:
    if not rows:
        return float("nan")
    if num is None:
        return sum(r[column] for r in rows) / len(rows)
    return sum(r[num] for r in rows) / sum(r[column] for r in rows)


def summary_metrics(scenario: str, rows: list[dict]) -> dict[str, float]:
    """Headline metrics recomputed from raw rows (keys depend on the scenario)."""
    out: dict[str, float] = {}
    if scenario == "attack-effectiveness":
        attacked = [r for r in rows if r["e"] > 0] or rows
        out["a_eff"] = _rate(attacked, "queries", "failed")
        for e in sorted({r["e"] for r in rows}):
            out[f"a_eff[e={e}]"] = _rate([r for r in rows if r["e"] == e], "queries", "failed")
    elif scenario in ("detection-roc", "detection-vs-netsize"):
        for thr in sorted({r["threshold"] for r in rows}):
            clean = [r for r in rows if r["threshold"] == thr and r["e"] == 0]
            hit = [r for r in rows if r["threshold"] == thr and r["e"] > 0]
            if clean:
                out[f"f_p[thr={thr:g}]"] = _rate(clean, "flagged")
            if hit:
                out[f"f_n[thr={thr:g}]"] = 1.0 - _rate(hit, "flagged")
        first = rows[0]["threshold"]
        clean = [r for r in rows if r["threshold"] == first and r["e"] == 0]
        hit = [r for r in rows if r["threshold"] == first and r["e"] > 0]
        if clean:
            out["f_p"] = _rate(clean, "flagged")
        if hit:
            out["f_n"] = 1.0 - _rate(hit, "flagged")
    elif scenario == "mitigation-effectiveness":
        attacked = [r for r in rows if r["e"] > 0] or rows
        out["m_eff"] = _rate(attacked, "queries", "mitigated")
        for e in sorted({r["e"] for r in rows}):
            out[f"m_eff[e={e}]"] = _rate([r for r in rows if r["e"] == e], "queries", "mitigated")
    elif scenario == "mitigation-overhead":
        for e in sorted({r["e"] for r in rows}):
            out[f"lookup_count[e={e}]"] = _rate([r for r in rows if r["e"] == e], "lookup_count")
    elif scenario == "sybil-gen-cost":
        for n in sorted({r["n"] for r in rows}):
            out[f"attempts[n={n}]"] = _rate([r for r in rows if r["n"] == n], "attempts")
    elif scenario == "netsize-accuracy":
        for n in sorted({r["n"] for r in rows}):
            out[f"rel_error[n={n}]"] = _rate([r for r in rows if r["n"] == n], "rel_error")
    return out


def run_scenario(config: ScenarioConfig) -> ScenarioReport:
    """Run all trials, write the CSV when ``output_path`` is set, and return the report."""
    config.validate()
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            per_trial = list(pool.map(_run_trial_args, [(config, t) for t in range(config.trials)]))
    else:
        per_trial = [run_trial(config, t) for t in range(config.trials)]
    rows = [row for chunk in per_trial for row in chunk]
    columns = list(rows[0]) if rows else []
    report = ScenarioReport(config.scenario, columns, rows, summary_metrics(config.scenario, rows), config)
    if config.output_path:
        write_csv(report, config.output_path)
    return report


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_csv(report: ScenarioReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([_fmt(row[c]) for c in report.columns])
    return buf.getvalue()


def write_csv(report: ScenarioReport, path: str | Path) -> None:
    Path(path).write_text(report_csv(report), encoding="utf-8", newline="")


# -- summary table ------------------------------------------------------------------

_GROUP_KEYS = ("n", "e", "threshold")
_SKIP = {"master_seed", "trial", "sub_seed", "cid", "distance_bound"}


def mean_ci(values: list[float], z: float = 1.96) -> tuple[float, float]:
    """Mean and normal-approximation CI half-width ``z * sigma / sqrt(n)``.

    ``sigma`` is the population (ddof=0) standard deviation, which for 0/1
    columns equals ``sqrt(p * (1 - p))``.
    """
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, z * math.sqrt(var / n)


def summarize(report: ScenarioReport) -> str:
    if not report.rows:
        raise ValueError("empty report")
    group_keys = [k for k in _GROUP_KEYS if k in report.columns]
    metrics = [c for c in report.columns if c not in _SKIP and c not in group_keys]
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for row in report.rows:
        groups[tuple(row[k] for k in group_keys)].append(row)
    header = group_keys + ["rows"] + metrics
    lines = [header]
    for key in sorted(groups):
        rows = groups[key]
        cells = [_fmt(v) if not isinstance(v, float) else f"{v:g}" for v in key] + [str(len(rows))]
        for m in metrics:
            mean, half = mean_ci([float(r[m]) for r in rows])
            cells.append(f"{mean:.4g}±{half:.2g}")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    out = [f"scenario: {report.scenario}"]
    for line in lines:
        out.append("  ".join(cell.rjust(w) for cell, w in zip(line, widths)))
    if report.summary:
        out.append("")
        for name, value in report.summary.items():
            out.append(f"{name} = {value:.4f}")
    return "\n".join(out)
