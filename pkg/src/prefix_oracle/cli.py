"""Command-line front end.

Subcommands expose the model families, recovery procedures, exact analysis
computations, and the experiment harness. The result record goes to stdout
as one JSON object; diagnostics go to stderr. Exit codes: 0 success, 1
assertion or acceptance failure, 2 usage error.

Float flags accept plain decimals or ``log:X`` for the natural log of X
(e.g. ``--lambda log:3``).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from . import algorithms, analysis, experiments
from .core import (
    HiddenPathModel,
    LeaderTrieModel,
    UniformModel,
    VocabSpec,
    completion_distribution,
    random_bridge_instance,
    random_hidden_path_model,
    random_leader_trie,
    serialize_model,
)
from .experiments import config_from_mapping, trial_rng
from .oracles import OracleSession, audit_discipline, write_ledger_csv


def parse_number(text: str) -> float:
    """Decimal or log:X literal."""
    if text.startswith("log:"):
        return math.log(float(text[4:]))
    return float(text)


def parse_prefix_set(text: str, z=None):
    """Comma-separated prefixes with dot-joined tokens; '-' (or an empty
    piece) is the root, and 'tip' expands to the depth H-1 stem of z."""
    if text == "tip":
        if z is None:
            raise ValueError("'tip' needs a hidden path")
        return frozenset({tuple(z[:-1])})
    out = set()
    for piece in text.split(","):
        piece = piece.strip()
        if piece in ("", "-"):
            out.add(())
        else:
            out.add(tuple(int(t) for t in piece.split(".")))
    return frozenset(out)


def _emit(record: dict, out=None) -> None:
    print(json.dumps(record, sort_keys=True))
    if out:
        with open(out, "w") as fh:
            fh.write("key,value\n")
            for key in sorted(record):
                fh.write(f"{key},{record[key]}\n")


def _cmd_recover_hidden_path(args) -> int:
    vocab = VocabSpec(args.K, args.H)
    rng = trial_rng(args.seed, 0, 0)
    model = random_hidden_path_model(vocab, args.lam, rng)
    session = OracleSession(model)
    result = algorithms.recover_hidden_path(session, args.delta, rng)
    ok = result.recovered == model.z
    record = {
        "command": "recover-hidden-path",
        "success": ok,
        "queries": result.queries_used,
        "discipline_ok": audit_discipline(session.ledger).ok,
        "hidden_path": list(model.z),
        "recovered": list(result.recovered),
    }
    _emit(record)
    if args.out:
        write_ledger_csv(session.ledger, args.out)
    return 0 if ok else 1


def _cmd_recover_trie_logit(args) -> int:
    vocab = VocabSpec(args.K, args.H)
    rng = trial_rng(args.seed, 0, 0)
    trie = random_leader_trie(vocab, rng)
    session = OracleSession(LeaderTrieModel(trie), xi=args.xi, noise=args.noise)
    result = algorithms.recover_leader_trie_logit(session, rng)
    ok = result.recovered == trie
    record = {
        "command": "recover-trie-logit",
        "success": ok,
        "queries": result.queries_used,
        "internal_nodes": trie.num_internal,
        "halted": [list(p) for p in result.halted],
        "discipline_ok": audit_discipline(session.ledger).ok,
    }
    _emit(record)
    if args.out:
        write_ledger_csv(session.ledger, args.out)
    return 0 if ok else 1


def _cmd_recover_trie_sample(args) -> int:
    vocab = VocabSpec(args.K, args.H)
    rng = trial_rng(args.seed, 0, 0)
    trie = random_leader_trie(vocab, rng)
    S = args.S if args.S is not None else trie.num_internal
    session = OracleSession(LeaderTrieModel(trie))
    result = algorithms.recover_leader_trie_sample(session, S, args.delta, rng)
    ok = result.recovered == trie
    record = {
        "command": "recover-trie-sample",
        "success": ok,
        "queries": result.queries_used,
        "budget": S * algorithms.trie_sample_budget(
            LeaderTrieModel(trie).prob_margin, args.K, S, args.delta),
        "discipline_ok": audit_discipline(session.ledger).ok,
    }
    _emit(record)
    if args.out:
        write_ledger_csv(session.ledger, args.out)
    return 0 if ok else 1


def _cmd_recover_seqscore(args) -> int:
    vocab = VocabSpec(args.K, args.H)
    rng = trial_rng(args.seed, 0, 0)
    model = random_hidden_path_model(vocab, args.lam, rng)
    session = OracleSession(model)
    result = algorithms.recover_hidden_path_seqscore(session)
    ok = result.recovered == model.z
    record = {
        "command": "recover-seqscore",
        "success": ok,
        "queries": result.queries_used,
        "hidden_path": list(model.z),
        "recovered": list(result.recovered),
    }
    _emit(record)
    if args.out:
        write_ledger_csv(session.ledger, args.out)
    return 0 if ok else 1


def _cmd_bridge(args) -> int:
    rng = trial_rng(args.seed, 0, 0)
    inst = random_bridge_instance(args.K, args.D, args.L, args.lam, args.eta, args.beta, rng)
    session = OracleSession(inst.hard_model())
    out = algorithms.bridge_posttrain(
        inst, session, algorithms.exact_reward_oracle(inst), args.delta, rng)
    ok = out.suffix == inst.suffix and out.bit == inst.bit
    record = {
        "command": "bridge",
        "success": ok,
        "generator_queries": out.generator_queries,
        "reward_queries": out.reward_queries,
        "suffix": list(out.suffix),
        "bit": out.bit,
        "gibbs_normalizer": analysis.gibbs_policy(inst).Z,
        "discipline_ok": audit_discipline(session.ledger).ok,
    }
    _emit(record)
    if args.out:
        write_ledger_csv(session.ledger, args.out)
    return 0 if ok else 1


def _build_analysis_model(args, rng):
    vocab = VocabSpec(args.K, args.H)
    if args.family == "hidden-path":
        return random_hidden_path_model(vocab, args.lam, rng)
    if args.family == "leader-trie":
        return LeaderTrieModel(random_leader_trie(vocab, rng))
    return UniformModel(vocab)


def _cmd_analyze(args) -> int:
    rng = trial_rng(args.seed, 0, 0)
    if args.what == "reach":
        model = _build_analysis_model(args, rng)
        z = model.z if isinstance(model, HiddenPathModel) else None
        U = parse_prefix_set(args.U, z)
        record = {
            "command": "analyze-reach",
            "reachability": analysis.reachability(model, U),
            "model": serialize_model(model).strip().replace("\n", "; "),
        }
        _emit(record, args.out)
        return 0
    if args.what == "tv":
        vocab = VocabSpec(args.K, args.H)
        stem = tuple(int(t) for t in rng.integers(1, args.K + 1, size=args.H - 1))
        model_a = HiddenPathModel(vocab, args.lam, stem + (1,))
        model_b = HiddenPathModel(vocab, args.lam, stem + (2,))
        tv = analysis.tv_distance(analysis.pathfull_law(model_a), analysis.pathfull_law(model_b))
        reach = analysis.reachability(model_a, {stem})
        record = {
            "command": "analyze-tv",
            "tv": tv,
            "reachability": reach,
            "bound_holds": tv <= reach + 1e-10,
        }
        _emit(record, args.out)
        return 0 if record["bound_holds"] else 1
    # gibbs / objective / certificate need a bridge instance
    inst = random_bridge_instance(args.K, args.D, args.L, args.lam, args.eta, args.beta, rng)
    gp = analysis.gibbs_policy(inst)
    if args.what == "gibbs":
        record = {
            "command": "analyze-gibbs",
            "q0": inst.q0,
            "normalizer": gp.Z,
            "target_mass": gp.target_mass,
            "optimal_value": gp.optimal_value,
        }
        _emit(record, args.out)
        return 0
    if args.what == "objective":
        base = analysis.evaluate_objective(
            inst, analysis.PromptPolicy(hard=completion_distribution(inst.hard_model())))
        optimal = analysis.evaluate_objective(inst, gp)
        record = {
            "command": "analyze-objective",
            "optimal": optimal,
            "base_policy": base,
            "gap": optimal - base,
        }
        _emit(record, args.out)
        return 0
    record = {
        "command": "analyze-certificate",
        "q_g": args.qg,
        "q_r": args.qr,
        "certificate": analysis.lower_bound_certificate(inst, args.qg, args.qr),
    }
    _emit(record, args.out)
    return 0


def _cmd_experiment(args) -> int:
    mapping = {}
    if args.config:
        with open(args.config) as fh:
            mapping = experiments.parse_config_text(fh.read())
    cfg = config_from_mapping(mapping, name=args.name)
    overrides = {}
    for key in ("trials", "K", "S", "D", "L", "qr"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for key in ("lam", "delta", "xi", "eta", "beta"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for key in ("H", "q"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = tuple(int(t) for t in str(value).split(","))
    if args.noise is not None:
        overrides["noise"] = args.noise
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    cfg = replace(cfg, **overrides) if overrides else cfg
    report = experiments.run_experiment(cfg)
    record = {
        "command": f"experiment-{cfg.name}",
        "trials": cfg.trials,
        "params": list(report.params()),
        "success_rates": {p: report.success_rate(p) for p in report.params()},
        "violations": list(report.violations),
    }
    for key in sorted(report.theory):
        record[f"theory:{key}"] = report.theory[key]
    _emit(record)
    if report.violations:
        print("\n".join(report.violations), file=sys.stderr)
        return 1
    return 0


def _add_family_flags(sub, horizon=True, lam=True):
    sub.add_argument("--K", type=int, default=2, help="vocabulary size")
    if horizon:
        sub.add_argument("--H", type=int, default=5, help="horizon")
    if lam:
        sub.add_argument("--lambda", dest="lam", type=parse_number, default=1.0,
                         help="signal strength (accepts log:X)")
    sub.add_argument("--seed", type=int, default=0, help="master seed")


def _add_bridge_flags(sub):
    sub.add_argument("--D", type=int, default=3, help="scaffold length")
    sub.add_argument("--L", type=int, default=4, help="hidden suffix length")
    sub.add_argument("--eta", type=parse_number, default=0.5, help="hard-prompt mass")
    sub.add_argument("--beta", type=parse_number, default=1.0, help="KL coefficient")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefix-oracle",
        description="Oracle-access simulation laboratory for prefix-tree generators.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("recover-hidden-path", help="majority-vote path recovery")
    _add_family_flags(sub)
    sub.add_argument("--delta", type=parse_number, default=0.1)
    sub.add_argument("--out", help="write the query ledger CSV here")
    sub.set_defaults(fn=_cmd_recover_hidden_path)

    sub = subs.add_parser("recover-trie-logit", help="breadth-first trie recovery from logits")
    _add_family_flags(sub, lam=False)
    sub.add_argument("--xi", type=parse_number, default=0.0, help="logit noise radius")
    sub.add_argument("--noise", choices=["random", "adversarial-threshold"], default="random")
    sub.add_argument("--out")
    sub.set_defaults(fn=_cmd_recover_trie_logit, K=3)

    sub = subs.add_parser("recover-trie-sample", help="breadth-first trie recovery from samples")
    _add_family_flags(sub, lam=False)
    sub.add_argument("--S", type=int, default=None, help="node budget (default |I(T)|)")
    sub.add_argument("--delta", type=parse_number, default=0.1)
    sub.add_argument("--out")
    sub.set_defaults(fn=_cmd_recover_trie_sample, K=3)

    sub = subs.add_parser("recover-seqscore", help="path recovery from exact sequence scores")
    _add_family_flags(sub)
    sub.add_argument("--out")
    sub.set_defaults(fn=_cmd_recover_seqscore)

    sub = subs.add_parser("bridge", help="scaffold-walk post-training procedure")
    _add_family_flags(sub, horizon=False)
    _add_bridge_flags(sub)
    sub.add_argument("--delta", type=parse_number, default=0.1)
    sub.add_argument("--out")
    sub.set_defaults(fn=_cmd_bridge)

    sub = subs.add_parser("analyze", help="exact analysis computations")
    sub.add_argument("what", choices=["tv", "reach", "gibbs", "objective", "certificate"])
    sub.add_argument("--family", choices=["hidden-path", "leader-trie", "uniform"],
                     default="hidden-path")
    _add_family_flags(sub)
    _add_bridge_flags(sub)
    sub.add_argument("--U", default="tip",
                     help="prefix set: 'tip', or comma-separated dot-joined prefixes ('-' = root)")
    sub.add_argument("--qg", type=int, default=1, help="generator-query budget")
    sub.add_argument("--qr", type=int, default=1, help="reward-query budget")
    sub.add_argument("--out")
    sub.set_defaults(fn=_cmd_analyze)

    sub = subs.add_parser("experiment", help="run a named experiment")
    sub.add_argument("name", choices=sorted(experiments.RUNNERS))
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--trials", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out")
    sub.add_argument("--K", type=int)
    sub.add_argument("--H", help="horizon or comma-separated sweep")
    sub.add_argument("--q", help="rollout budget or comma-separated sweep")
    sub.add_argument("--lambda", dest="lam", type=parse_number)
    sub.add_argument("--delta", type=parse_number)
    sub.add_argument("--xi", type=parse_number)
    sub.add_argument("--noise", choices=["random", "adversarial-threshold"])
    sub.add_argument("--S", type=int)
    sub.add_argument("--D", type=int)
    sub.add_argument("--L", type=int)
    sub.add_argument("--eta", type=parse_number)
    sub.add_argument("--beta", type=parse_number)
    sub.add_argument("--qr", type=int)
    sub.set_defaults(fn=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
