"""Reproducible experiment harness: configuration, Monte Carlo orchestration,
statistical summaries, and CSV reports.

Every experiment is a pure function of (config, master seed): per-trial RNG
streams are derived by seeding a fresh generator with the tuple
(master seed, sweep cell, trial index), so trials are order-independent and
re-runs are byte-identical. Every statistical check carries an explicit
three-sigma binomial margin; query-count checks are exact wherever the
algorithm's schedule is deterministic.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .algorithms import (
    bridge_posttrain,
    distinguish_no_reset_baseline,
    exact_reward_oracle,
    majority_budget,
    recover_hidden_path,
    recover_leader_trie_logit,
    recover_leader_trie_sample,
    trie_sample_budget,
)
from .analysis import evaluate_objective, lower_bound_certificate
from .core import (
    BridgeInstance,
    HiddenPathModel,
    LeaderTrieModel,
    VocabSpec,
    leader_trie_params,
    random_bridge_instance,
    random_hidden_path_model,
    random_leader_trie,
    signal_probs,
)
from .oracles import OracleSession, audit_discipline

ENV_SEED = "PREFIX_ORACLE_SEED"

# exact objective checks are skipped above this trajectory count
OBJECTIVE_CHECK_MAX_COMPLETIONS = 4096


def binomial_margin(p: float, n: int) -> float:
    """Three-sigma margin for an empirical rate near p over n trials."""
    return 3.0 * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def trial_rng(master_seed: int, *stream) -> np.random.Generator:
    """Independent per-trial stream keyed by (master seed, cell, trial)."""
    return np.random.default_rng([master_seed, *[int(s) for s in stream]])


def _parse_int_list(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in str(value).split(","))


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration; unused fields are ignored by runners."""

    name: str
    trials: int = 200
    seed: int = 0
    out: Optional[str] = None
    K: int = 2
    H: tuple = (10,)
    lam: float = 1.0
    delta: float = 0.1
    xi: float = 0.0
    noise: str = "random"
    S: Optional[int] = None
    q: tuple = (1,)
    D: Optional[int] = None
    L: Optional[int] = None
    eta: float = 0.5
    beta: float = 1.0
    qr: int = 1

    def __post_init__(self):
        object.__setattr__(self, "H", _parse_int_list(self.H))
        object.__setattr__(self, "q", _parse_int_list(self.q))
        if self.trials < 1:
            raise ValueError(f"trial count must be >= 1, got {self.trials}")
        if self.K < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.K}")
        if any(h < 1 for h in self.H):
            raise ValueError(f"horizons must be >= 1, got {self.H}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"failure budget must be in (0, 1), got {self.delta}")
        if self.xi < 0:
            raise ValueError(f"noise radius must be >= 0, got {self.xi}")


_FLOAT_KEYS = {"lam", "delta", "xi", "eta", "beta"}
_INT_KEYS = {"trials", "seed", "K", "S", "D", "L", "qr"}
_LIST_KEYS = {"H", "q"}
_KEY_ALIASES = {"lambda": "lam"}


def parse_config_text(text: str) -> dict:
    """Parse the flat key=value config format (blank lines and # comments ok)."""
    out = {}
    for ln_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {ln_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(mapping: dict, name: Optional[str] = None) -> ExperimentConfig:
    """Build a config from string key=value pairs, applying the environment
    seed override. CLI flags are applied on top by the caller."""
    kwargs = {}
    for key, value in mapping.items():
        key = _KEY_ALIASES.get(key, key)
        if key == "name":
            kwargs["name"] = str(value)
        elif key in _LIST_KEYS:
            kwargs[key] = _parse_int_list(value)
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key in ("out", "noise"):
            kwargs[key] = str(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if name is not None:
        kwargs["name"] = name
    if "name" not in kwargs:
        raise ValueError("config needs an experiment name")
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        kwargs["seed"] = int(env_seed)
    return ExperimentConfig(**kwargs)


def load_config(path, name: Optional[str] = None) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_mapping(parse_config_text(fh.read()), name=name)


@dataclass(frozen=True)
class TrialRow:
    trial: int
    seed: int
    param: str
    success: bool
    generator_queries: int
    reward_queries: int
    detail: str


@dataclass(frozen=True)
class ExperimentReport:
    name: str
    config: ExperimentConfig
    rows: tuple
    theory: dict = field(default_factory=dict)
    violations: tuple = ()

    def params(self) -> tuple:
        seen = []
        for row in self.rows:
            if row.param not in seen:
                seen.append(row.param)
        return tuple(seen)

    def aggregate(self, param: Optional[str] = None) -> dict:
        rows = [r for r in self.rows if param is None or r.param == param]
        n = len(rows)
        successes = sum(r.success for r in rows)
        queries = [r.generator_queries for r in rows]
        return {
            "trials": n,
            "successes": successes,
            "success_rate": successes / n if n else 0.0,
            "mean_queries": sum(queries) / n if n else 0.0,
            "max_queries": max(queries) if queries else 0,
        }

    def success_rate(self, param: Optional[str] = None) -> float:
        return self.aggregate(param)["success_rate"]


def object_digest(obj) -> str:
    """Stable short digest of a recovered object for trial records."""
    if obj is None:
        return "-"
    return hashlib.sha256(repr(obj).encode()).hexdigest()[:12]


def _config_echo(cfg: ExperimentConfig) -> str:
    parts = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        if f.name == "out":  # not a semantic parameter; keeps reports relocatable
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        parts.append(f"{f.name}={value}")
    return " ".join(parts)


def report_to_csv(report: ExperimentReport) -> str:
    """Render a report: one data row per trial, then a '#'-prefixed summary
    footer with per-group aggregates and theory reference values."""
    lines = ["trial,seed,param,success,generator_queries,reward_queries,detail"]
    for r in report.rows:
        lines.append(
            f"{r.trial},{r.seed},{r.param},{int(r.success)},"
            f"{r.generator_queries},{r.reward_queries},{r.detail}"
        )
    lines.append(f"# experiment={report.name}")
    lines.append(f"# config {_config_echo(report.config)}")
    for param in report.params():
        agg = report.aggregate(param)
        margin = binomial_margin(agg["success_rate"], agg["trials"]) if agg["trials"] else 0.0
        lines.append(
            f"# group param={param} trials={agg['trials']} successes={agg['successes']}"
            f" success_rate={agg['success_rate']!r} margin3={margin!r}"
            f" mean_queries={agg['mean_queries']!r} max_queries={agg['max_queries']}"
        )
    for key in sorted(report.theory):
        lines.append(f"# theory {key}={report.theory[key]!r}")
    for v in report.violations:
        lines.append(f"# violation {v}")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, path) -> None:
    """Write the CSV report; identical (config, seed) gives identical bytes."""
    try:
        with open(path, "w") as fh:
            fh.write(report_to_csv(report))
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Runners.


def run_hidden_path_scaling(cfg: ExperimentConfig) -> ExperimentReport:
    """Hidden-path recovery across a horizon sweep: exact per-trial budgets
    H*m(H), discipline audits, and a success floor of 1 - delta."""
    rows = []
    theory = {}
    violations = []
    p_plus, p_minus = signal_probs(cfg.K, cfg.lam)
    gap = p_plus - p_minus
    for H in cfg.H:
        vocab = VocabSpec(cfg.K, H)
        m = majority_budget(gap, H, cfg.K, cfg.delta)
        theory[f"m(H={H})"] = float(m)
        theory[f"budget(H={H})"] = float(H * m)
        theory[f"success_floor(H={H})"] = 1.0 - cfg.delta
        param = f"H={H}"
        for trial in range(cfg.trials):
            rng = trial_rng(cfg.seed, H, trial)
            model = random_hidden_path_model(vocab, cfg.lam, rng)
            session = OracleSession(model)
            result = recover_hidden_path(session, cfg.delta, rng)
            ok = result.recovered == model.z
            if result.queries_used != H * m:
                violations.append(f"{param} trial={trial}: queries {result.queries_used} != {H * m}")
            if not audit_discipline(session.ledger).ok:
                violations.append(f"{param} trial={trial}: discipline violation")
            rows.append(TrialRow(trial, cfg.seed, param, ok, result.queries_used, 0,
                                 object_digest(result.recovered)))
        rate = sum(r.success for r in rows if r.param == param) / cfg.trials
        floor = 1.0 - cfg.delta - binomial_margin(1.0 - cfg.delta, cfg.trials)
        if rate < floor:
            violations.append(f"{param}: success rate {rate} below floor {floor}")
    return ExperimentReport("hidden-path-scaling", cfg, tuple(rows), theory, tuple(violations))


def run_no_reset_hardness(cfg: ExperimentConfig) -> ExperimentReport:
    """Root-start distinguishing of twin hidden paths across (H, q) cells:
    measured success must stay within margin of the visit-probability ceiling
    1/2 + q * p_plus^(H-1) / 2."""
    rows = []
    theory = {}
    violations = []
    p_plus, _ = signal_probs(cfg.K, cfg.lam)
    for H in cfg.H:
        vocab = VocabSpec(cfg.K, H)
        for q in cfg.q:
            param = f"H={H},q={q}"
            ceiling = 0.5 + q * p_plus ** (H - 1) / 2.0
            theory[f"ceiling({param})"] = ceiling
            for trial in range(cfg.trials):
                rng = trial_rng(cfg.seed, H, q, trial)
                stem = tuple(int(t) for t in rng.integers(1, cfg.K + 1, size=H - 1))
                last = sorted(int(t) for t in rng.choice(cfg.K, size=2, replace=False) + 1)
                model_a = HiddenPathModel(vocab, cfg.lam, stem + (last[0],))
                model_b = HiddenPathModel(vocab, cfg.lam, stem + (last[1],))
                truth = int(rng.integers(0, 2))
                session = OracleSession(model_a if truth == 0 else model_b)
                guess = distinguish_no_reset_baseline(session, model_a, model_b, q, rng)
                ok = guess == truth
                used = session.ledger.rollouts
                if used > q:
                    violations.append(f"{param} trial={trial}: {used} rollouts > budget {q}")
                rows.append(TrialRow(trial, cfg.seed, param, ok, used, 0,
                                     f"truth={truth};guess={guess}"))
            agg = [r.success for r in rows if r.param == param]
            rate = sum(agg) / len(agg)
            margin = binomial_margin(rate, len(agg))
            if rate > ceiling + margin:
                violations.append(f"{param}: success {rate} above ceiling {ceiling} + {margin}")
    return ExperimentReport("no-reset-hardness", cfg, tuple(rows), theory, tuple(violations))


def run_leader_trie_matrix(cfg: ExperimentConfig) -> ExperimentReport:
    """All three chosen-prefix interfaces on random leader tries: top-token
    guessing must sit at chance, logit recovery must be exact in |I(T)|
    queries, and sample recovery must meet its budget and success floor."""
    if cfg.K < 3:
        raise ValueError("leader-trie experiments need K >= 3")
    H = cfg.H[0]
    vocab = VocabSpec(cfg.K, H)
    params = leader_trie_params(cfg.K)
    rows = []
    theory = {}
    violations = []

    # interface 0: top-token distinguishing between two distinct tries
    param = "iface=top"
    for trial in range(cfg.trials):
        rng = trial_rng(cfg.seed, 0, trial)
        trie_a = random_leader_trie(vocab, rng)
        trie_b = random_leader_trie(vocab, rng)
        while trie_b.branch == trie_a.branch:
            trie_b = random_leader_trie(vocab, rng)
        truth = int(rng.integers(0, 2))
        session = OracleSession(LeaderTrieModel(trie_a if truth == 0 else trie_b))
        probes = [p for p in ((), (1,), (trie_a.branch[()],)) if len(p) < H]
        replies = [session.query_prefix_top(p) for p in probes]
        if any(rep != 1 for rep in replies):
            violations.append(f"{param} trial={trial}: non-leader top reply {replies}")
        guess = int(rng.integers(0, 2))
        ok = guess == truth
        rows.append(TrialRow(trial, cfg.seed, param, ok, len(replies), 0,
                             f"truth={truth};guess={guess}"))
    rate = sum(r.success for r in rows if r.param == param) / cfg.trials
    margin = binomial_margin(0.5, cfg.trials)
    theory["top_chance"] = 0.5
    if abs(rate - 0.5) > margin:
        violations.append(f"{param}: success {rate} not within {margin} of 0.5")

    # interface 1: logit recovery
    param = "iface=logit"
    n_internal = 2**H - 1
    theory["internal_nodes"] = float(n_internal)
    exact_regime = cfg.xi < params["log_margin"]
    for trial in range(cfg.trials):
        rng = trial_rng(cfg.seed, 1, trial)
        trie = random_leader_trie(vocab, rng)
        session = OracleSession(LeaderTrieModel(trie), xi=cfg.xi, noise=cfg.noise)
        result = recover_leader_trie_logit(session, rng)
        ok = result.recovered == trie
        if exact_regime and result.queries_used != n_internal:
            violations.append(f"{param} trial={trial}: queries {result.queries_used} != {n_internal}")
        if not audit_discipline(session.ledger).ok:
            violations.append(f"{param} trial={trial}: discipline violation")
        rows.append(TrialRow(trial, cfg.seed, param, ok, result.queries_used, 0,
                             object_digest(result.recovered)))
    rate = sum(r.success for r in rows if r.param == param) / cfg.trials
    if exact_regime and rate < 1.0:
        violations.append(f"{param}: sub-threshold noise must recover exactly, rate {rate}")

    # interface 2: sample recovery
    param = "iface=sample"
    S = cfg.S if cfg.S is not None else n_internal
    m = trie_sample_budget(params["prob_margin"], cfg.K, S, cfg.delta)
    theory["sample_m"] = float(m)
    theory["sample_budget"] = float(S * m)
    for trial in range(cfg.trials):
        rng = trial_rng(cfg.seed, 2, trial)
        trie = random_leader_trie(vocab, rng)
        session = OracleSession(LeaderTrieModel(trie))
        result = recover_leader_trie_sample(session, S, cfg.delta, rng)
        ok = result.recovered == trie
        if result.queries_used > S * m:
            violations.append(f"{param} trial={trial}: queries {result.queries_used} > {S * m}")
        if not audit_discipline(session.ledger).ok:
            violations.append(f"{param} trial={trial}: discipline violation")
        rows.append(TrialRow(trial, cfg.seed, param, ok, result.queries_used, 0,
                             object_digest(result.recovered)))
    rate = sum(r.success for r in rows if r.param == param) / cfg.trials
    floor = 1.0 - cfg.delta - binomial_margin(1.0 - cfg.delta, cfg.trials)
    if rate < floor:
        violations.append(f"{param}: success rate {rate} below floor {floor}")
    return ExperimentReport("leader-trie-matrix", cfg, tuple(rows), theory, tuple(violations))


def run_bridge_separation(cfg: ExperimentConfig) -> ExperimentReport:
    """Two-sided separation table across a horizon sweep.

    Side A runs the scaffold-walk procedure on random instances and checks
    its exact budget, single reward query, and (where enumeration is
    tractable) that the returned policy attains the optimal objective value.
    Side B evaluates the no-reset success certificate at q_g in
    {H, H^2, H^3} with the configured reward-query budget.
    """
    rows = []
    theory = {}
    violations = []
    for H in cfg.H:
        D = cfg.D if cfg.D is not None else (H - 1) // 2
        L = cfg.L if cfg.L is not None else H - D - 1
        if D + L + 1 != H:
            raise ValueError(f"D={D}, L={L} incompatible with H={H}")
        param = f"H={H}"
        m = majority_budget(signal_probs(cfg.K, cfg.lam)[0] - signal_probs(cfg.K, cfg.lam)[1],
                            L, cfg.K, cfg.delta)
        budget = (D + 1) + L * m
        theory[f"m({param})"] = float(m)
        theory[f"budget({param})"] = float(budget)
        theory[f"success_floor({param})"] = 1.0 - cfg.delta
        check_objective = cfg.K**H <= OBJECTIVE_CHECK_MAX_COMPLETIONS
        for trial in range(cfg.trials):
            rng = trial_rng(cfg.seed, H, trial)
            inst = random_bridge_instance(cfg.K, D, L, cfg.lam, cfg.eta, cfg.beta, rng)
            session = OracleSession(inst.hard_model())
            out = bridge_posttrain(inst, session, exact_reward_oracle(inst), cfg.delta, rng)
            ok = out.suffix == inst.suffix and out.bit == inst.bit
            if out.reward_queries != 1:
                violations.append(f"{param} trial={trial}: {out.reward_queries} reward queries")
            if out.generator_queries != budget:
                violations.append(
                    f"{param} trial={trial}: queries {out.generator_queries} != {budget}")
            if not audit_discipline(session.ledger).ok:
                violations.append(f"{param} trial={trial}: discipline violation")
            if ok and check_objective:
                value = evaluate_objective(inst, out.policy)
                expect = inst.eta * inst.beta * math.log(5.0 - inst.q0)
                if abs(value - expect) > 1e-9:
                    violations.append(
                        f"{param} trial={trial}: objective {value} != optimal {expect}")
            rows.append(TrialRow(trial, cfg.seed, param, ok, out.generator_queries,
                                 out.reward_queries, object_digest(out.suffix)))
        rate = sum(r.success for r in rows if r.param == param) / cfg.trials
        floor = 1.0 - cfg.delta - binomial_margin(1.0 - cfg.delta, cfg.trials)
        if rate < floor:
            violations.append(f"{param}: success rate {rate} below floor {floor}")
        # side B: certificate values at polynomial generator budgets
        ref = BridgeInstance(K=cfg.K, D=D, L=L, scaffold=(1,) * D, suffix=(1,) * L,
                             bit=0, lam=cfg.lam, eta=cfg.eta, beta=cfg.beta)
        for power in (1, 2, 3):
            theory[f"certificate({param},qg=H^{power},qr={cfg.qr})"] = lower_bound_certificate(
                ref, H**power, cfg.qr)
    return ExperimentReport("bridge-separation", cfg, tuple(rows), theory, tuple(violations))


RUNNERS = {
    "hidden-path-scaling": run_hidden_path_scaling,
    "no-reset-hardness": run_no_reset_hardness,
    "leader-trie-matrix": run_leader_trie_matrix,
    "bridge-separation": run_bridge_separation,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    try:
        runner = RUNNERS[cfg.name]
    except KeyError:
        raise ValueError(f"unknown experiment {cfg.name!r}; known: {sorted(RUNNERS)}")
    report = runner(cfg)
    if cfg.out:
        emit_report(report, cfg.out)
    return report
