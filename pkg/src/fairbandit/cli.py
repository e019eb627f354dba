"""Command line experiment runner.

Usage::

    fairbandit run --config run.json [--seed S] [--out-dir DIR]
    fairbandit sweep --config run.json --grid grid.json [--out-dir DIR]
    fairbandit verify --scale quick|full [--out-dir DIR]

Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 protocol
violation during a run.
"""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .core import Dims, DimensionError, check_target, parity_violation
from .few import Few, FewConfig, ProtocolError, make_few
from .harness import (TREE_CDFS, Comparator, EnsembleAgent, FewAgent, Script, adversarial_random_script,
                      best_fair_comparator, empirical_script, exp4_per_group, parity_audit, regret, run,
                      run_tree, stochastic_script, tree_instance)
from .meta import DoublingEnsemble, policy_to_json, train_fair_classifier
from .tree import HierarchicalLearner, required_sample_size

ALGORITHMS = ("few-bandit", "few-full", "few-ensemble", "exp4-baseline", "batch-classifier")
BASES = ("tabular", "fixedshare", "explicit", "tree", "tree-iid")
ENVIRONMENTS = ("stochastic", "switching", "adversarial-random", "empirical", "scripted")
PARITY_TOL = 1e-9


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class EnvironmentConfig:
    kind: str = "stochastic"
    target: Optional[list] = None
    means: Optional[list] = None
    zero_prob: float = 0.3
    script: Optional[str] = None


@dataclass
class OutputConfig:
    trace_csv: str = "trace.csv"
    trace_jsonl: str = "trace.jsonl"
    summary: str = "summary.json"
    policy: str = "policy.json"


@dataclass
class RunConfig:
    dims: Dict[str, int]
    algorithm: str = "few-bandit"
    base: str = "tabular"
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    eta: float = 1.0
    share_rate: Optional[float] = None
    switch_prob: float = 0.1
    height: int = 5
    sample_threshold: Optional[int] = None
    epsilon: Optional[float] = None
    seed: int = 0
    strict: bool = True
    outputs: OutputConfig = field(default_factory=OutputConfig)

    @property
    def dim_tuple(self) -> Dims:
        d = self.dims
        return Dims(d["num_groups"], d["num_contexts"], d["num_actions"], d["horizon"])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, text: str = "", base_dir: Optional[Path] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", 1)
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown key {key!r}", _line_of(text, key))
        if "dims" not in data:
            raise ConfigError("missing required key 'dims'", 1)
        kwargs = dict(data)
        env = kwargs.get("environment", {})
        out = kwargs.get("outputs", {})
        try:
            kwargs["environment"] = EnvironmentConfig(**env)
        except TypeError as exc:
            raise ConfigError(f"environment: {exc}", _line_of(text, "environment")) from None
        try:
            kwargs["outputs"] = OutputConfig(**out)
        except TypeError as exc:
            raise ConfigError(f"outputs: {exc}", _line_of(text, "outputs")) from None
        config = cls(**kwargs)
        config.validate(text, base_dir)
        return config

    @classmethod
    def from_json(cls, text: str, base_dir: Optional[Path] = None) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        return cls.from_dict(data, text, base_dir)

    def validate(self, text: str = "", base_dir: Optional[Path] = None) -> None:
        def fail(msg, key):
            raise ConfigError(msg, _line_of(text, key))

        names = ("num_groups", "num_contexts", "num_actions", "horizon")
        if not isinstance(self.dims, dict) or set(self.dims) != set(names):
            fail(f"dims must have exactly the keys {names}", "dims")
        for name in names:
            value = self.dims[name]
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                fail(f"dims.{name} must be a positive integer, got {value!r}", name)
        if self.dims["num_actions"] < 2:
            fail("dims.num_actions must be at least 2", "num_actions")
        if self.algorithm not in ALGORITHMS:
            fail(f"algorithm must be one of {ALGORITHMS}", "algorithm")
        if self.base not in BASES:
            fail(f"base must be one of {BASES}", "base")
        if self.environment.kind not in ENVIRONMENTS:
            fail(f"environment.kind must be one of {ENVIRONMENTS}", "kind")
        if not (isinstance(self.eta, (int, float)) and self.eta > 0):
            fail("eta must be positive", "eta")
        if self.share_rate is not None and not 0 <= self.share_rate <= 1:
            fail("share_rate must lie in [0, 1]", "share_rate")
        if not 0 < self.switch_prob <= 1:
            fail("switch_prob must lie in (0, 1]", "switch_prob")
        tree = self.base in ("tree", "tree-iid")
        if tree and self.algorithm != "few-bandit":
            fail("tree bases run only with algorithm few-bandit", "base")
        if self.base == "tree-iid" and self.sample_threshold is None and self.epsilon is None:
            fail("tree-iid needs sample_threshold or epsilon", "base")
        if self.algorithm in ("few-ensemble", "batch-classifier") and self.base not in ("tabular", "fixedshare", "explicit"):
            fail("the ensemble needs a dense base", "base")
        env = self.environment
        m, n = self.dims["num_groups"], self.dims["num_contexts"]
        if env.kind in ("stochastic", "switching", "empirical") and not tree:
            if env.target is not None:
                try:
                    check_target(env.target, Dims(m, n, 2))
                except (ValueError, DimensionError) as exc:
                    fail(f"environment.target: {exc}", "target")
            if env.means is not None:
                shape = np.shape(env.means)
                want = (m, n, self.dims["num_actions"])
                if env.kind == "switching":
                    want = (2,) + want
                if shape != want:
                    fail(f"environment.means has shape {shape}, expected {want}", "means")
        if env.kind == "scripted":
            if env.script is None:
                fail("scripted environment needs a script path", "kind")
            path = Path(env.script)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                fail(f"script file {env.script!r} does not exist", "script")
            env.script = str(path)
        if self.algorithm == "batch-classifier" and env.kind not in ("stochastic", "scripted"):
            fail("batch-classifier needs a constant target", "kind")


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return 1 if text else None


def load_config(path: str) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path!r} does not exist")
    return RunConfig.from_json(p.read_text(), p.parent)


# building runs


def _default_means(dims: Dims, switching: bool) -> np.ndarray:
    m, n, k = dims.num_groups, dims.num_contexts, dims.num_actions
    means = np.full((m, n, k), 0.5)
    for i in range(m):
        for x in range(n):
            means[i, x, (i + x) % k] = 0.1
    if switching:
        return np.array([means, np.roll(means, 1, axis=-1)])
    return means


def build_script(config: RunConfig) -> Script:
    dims = config.dim_tuple
    env = config.environment
    seed = config.seed
    target = np.full(dims.target_shape, 1.0 / dims.num_contexts) if env.target is None else np.asarray(env.target)
    if env.kind == "scripted":
        script = Script.from_jsonl(Path(env.script).read_text())
        if len(script) != dims.horizon or script.num_actions != dims.num_actions:
            raise ConfigError("script length or action count disagrees with dims")
        return script
    if env.kind == "adversarial-random":
        return adversarial_random_script(seed, dims, env.zero_prob)
    switching = env.kind == "switching"
    means = _default_means(dims, switching) if env.means is None else np.asarray(env.means, dtype=float)
    if env.kind == "empirical":
        return empirical_script(seed, target, means, dims.horizon)
    return stochastic_script(seed, target, means, dims.horizon)


def build_agent(config: RunConfig):
    dims = config.dim_tuple
    algo = config.algorithm
    if algo == "exp4-baseline":
        return exp4_per_group(dims, config.eta)
    if algo == "few-ensemble":
        return EnsembleAgent(DoublingEnsemble(dims, base=config.base, share_rate=config.share_rate), dims.num_contexts)
    mode = "full" if algo == "few-full" else "bandit"
    strict = config.strict and config.environment.kind != "empirical"
    few = make_few(FewConfig(dims, config.eta, mode=mode, strict=strict), config.base, config.share_rate)
    return FewAgent(few, mode)


def _comparator(config: RunConfig, script: Script) -> Optional[Comparator]:
    if not script.constant_target:
        return None
    if config.environment.kind == "switching":
        half = len(script) // 2
        first = best_fair_comparator(script, 0, half)
        second = best_fair_comparator(script, half)
        return Comparator([first.policies[0], second.policies[0]], script, starts=[0, half])
    return best_fair_comparator(script)


def bound_value(dims: Dims, eta: float) -> float:
    """Regret bound with the complexity term of a deterministic comparator under a uniform prior."""
    phi = dims.num_groups * dims.num_contexts * math.log(dims.num_actions)
    eta = min(eta, math.sqrt(dims.horizon / dims.num_actions))
    return (8 * eta + phi / eta) * math.sqrt(dims.num_actions * dims.horizon)


def execute(config: RunConfig, out_dir: Path) -> dict:
    """Run one configured experiment, write its artifacts, return the summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.base in ("tree", "tree-iid"):
        return _execute_tree(config, out_dir)
    dims = config.dim_tuple
    script = build_script(config)
    if config.algorithm == "batch-classifier":
        return _execute_classifier(config, script, out_dir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        agent = build_agent(config)
    trace = run(agent, script, config.seed)
    (out_dir / config.outputs.trace_csv).write_text(trace.to_csv())
    (out_dir / config.outputs.trace_jsonl).write_text(trace.to_jsonl())
    comp = _comparator(config, script)
    reg = regret(trace, comp, script) if comp is not None else None
    audit = parity_audit(trace)
    fair = config.algorithm != "exp4-baseline"
    checks = {}
    if fair:
        checks["parity"] = audit["parity_max"] <= PARITY_TOL
    bound = None
    if config.algorithm in ("few-bandit", "few-full") and config.environment.kind != "switching":
        bound = bound_value(dims, config.eta)
        if reg is not None:
            checks["regret_bound"] = reg <= bound
    summary = {
        "cum_loss": trace.cum_loss, "regret": reg, "bound_value": bound,
        "parity_max": audit["parity_max"],
        "parity_mean": audit["parity_mean"], "pass": all(checks.values()), "checks": checks,
    }
    _write_summary(out_dir / config.outputs.summary, summary)
    return summary


def _execute_classifier(config: RunConfig, script: Script, out_dir: Path) -> dict:
    target = script.dense_target(0)
    data = [(int(i), int(x), l) for i, x, l in zip(script.groups, script.contexts, script.losses)]
    policy = train_fair_classifier(data, target, base=config.base)
    (out_dir / config.outputs.policy).write_text(policy_to_json(policy))
    comp = best_fair_comparator(script)
    rows = policy[script.groups, script.contexts]
    cum = float(np.einsum("ta,ta->", rows, script.losses))
    comp_loss = float(np.einsum("ta,ta->", comp.policies[0][script.groups, script.contexts], script.losses))
    par = parity_violation(policy, target)
    summary = {
        "cum_loss": cum, "regret": cum - comp_loss, "bound_value": None,
        "parity_max": par, "parity_mean": par, "pass": par <= PARITY_TOL, "checks": {"parity": par <= PARITY_TOL},
    }
    _write_summary(out_dir / config.outputs.summary, summary)
    return summary


def _execute_tree(config: RunConfig, out_dir: Path) -> dict:
    dims = config.dim_tuple
    if dims.num_groups != 2:
        raise ConfigError("tree runs use the built-in two-group instance; set num_groups to 2")
    t_len, k = dims.horizon, dims.num_actions
    groups, x_stars, losses = tree_instance(config.seed, t_len, k)
    lr = FewConfig(dims, config.eta).learning_rate
    if config.base == "tree-iid":
        n = config.sample_threshold or required_sample_size(t_len, config.height, config.epsilon)
        hier = HierarchicalLearner(2, k, lr, config.switch_prob, config.height, sample_threshold=n)
        few = Few(hier.learners, strict=False)
    else:
        hier = HierarchicalLearner(2, k, lr, config.switch_prob, config.height, cdfs=TREE_CDFS)
        few = Few(hier.learners)
    result = run_tree(few, hier, groups, x_stars, losses, config.seed, true_cdfs=TREE_CDFS)
    lines = ["t,beta,parity,loss,exp_loss"]
    for t in range(t_len):
        lines.append(f"{t + 1},nan,{result.true_parity[t]!r},{result.loss[t]!r},nan")
    (out_dir / config.outputs.trace_csv).write_text("\n".join(lines) + "\n")
    par = result.true_parity
    checks = {"target_parity": float(np.max(result.target_parity)) <= PARITY_TOL}
    if config.base == "tree-iid" and config.epsilon is not None:
        checks["approximate_parity"] = float(np.nanmax(par)) <= 4 * config.height * config.epsilon
    summary = {
        "cum_loss": float(result.loss.sum()), "regret": None, "bound_value": None,
        "parity_max": float(np.nanmax(par)), "parity_mean": float(np.nanmean(par)),
        "pass": all(checks.values()), "checks": checks,
    }
    _write_summary(out_dir / config.outputs.summary, summary)
    return summary


def _write_summary(path: Path, summary: dict) -> None:
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# sweeps


def expand_grid(config: RunConfig, grid: Dict[str, list]) -> List[RunConfig]:
    """Cartesian product of dotted-key overrides applied to ``config``."""
    keys = sorted(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        data = copy.deepcopy(config.to_dict())
        for key, value in zip(keys, values):
            node = data
            parts = key.split(".")
            if parts[0] in ("num_groups", "num_contexts", "num_actions", "horizon"):
                parts = ["dims"] + parts
            for part in parts[:-1]:
                node = node[part]
            node[parts[-1]] = value
        cells.append(RunConfig.from_dict(data))
    return cells


def _run_cell(args):
    config, path = args
    try:
        return execute(config, Path(path))
    except ProtocolError as exc:
        return {"error": str(exc), "pass": False}


def sweep(config: RunConfig, grid: Dict[str, list], out_dir: Path, workers: int = 1) -> dict:
    cells = expand_grid(config, grid)
    jobs = [(c, str(out_dir / f"cell_{j:03d}")) for j, c in enumerate(cells)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            summaries = list(pool.map(_run_cell, jobs))
    else:
        summaries = [_run_cell(job) for job in jobs]
    report = {"cells": []}
    for (cell, path), summary in zip(jobs, summaries):
        report["cells"].append({"dir": path, "config": cell.to_dict(), "summary": summary})
    horizons = sorted({c.dims["horizon"] for c in cells})
    if len(horizons) > 1:
        means = []
        for t_len in horizons:
            vals = [s["regret"] for c, s in zip(cells, summaries) if c.dims["horizon"] == t_len and s.get("regret") is not None]
            means.append(float(np.mean(vals)) if vals else None)
        report["regret_by_horizon"] = dict(zip(map(str, horizons), means))
        if all(v is not None and v > 0 for v in means):
            report["loglog_slope"] = float(np.polyfit(np.log(horizons), np.log(means), 1)[0])
    report["pass"] = all(s.get("pass", False) for s in summaries)
    (out_dir / "sweep_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairbandit", description="Fair contextual bandit experiments")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("--config", required=True)
    p_sweep = sub.add_parser("sweep", help="run a grid of experiments")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--grid", required=True)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_verify = sub.add_parser("verify", help="run the verification suite")
    p_verify.add_argument("--scale", choices=("quick", "full"), default="quick")
    for p in (p_run, p_sweep, p_verify):
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--out-dir", default=argparse.SUPPRESS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out_dir)
    try:
        if args.command == "verify":
            from .verify import full_checks, quick_checks, report

            seed = args.seed or 0
            results = quick_checks(seed) if args.scale == "quick" else full_checks(seed)
            for res in results:
                print(res.line())
            out_dir.mkdir(parents=True, exist_ok=True)
            rep = report(results)
            (out_dir / "verify_report.json").write_text(json.dumps(rep, indent=2) + "\n")
            return 0 if rep["passed"] else 1
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.command == "run":
            summary = execute(config, out_dir)
            print(json.dumps(summary, sort_keys=True))
            return 0
        grid_path = Path(args.grid)
        try:
            grid = json.loads(grid_path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"grid file {args.grid!r} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid grid JSON: {exc.msg}", exc.lineno) from None
        if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
            raise ConfigError("grid must map dotted keys to lists of values", 1)
        rep = sweep(config, grid, out_dir, args.workers)
        print(json.dumps({k: v for k, v in rep.items() if k != "cells"}, sort_keys=True))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
