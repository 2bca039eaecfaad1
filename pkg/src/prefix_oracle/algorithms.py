"""Recovery and post-training procedures, each consuming only its permitted
oracle interface and leaving an auditable prefix trail.

Every procedure reports its exact query usage; majority-vote sample sizes
come from the Hoeffding-style budgets below.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .analysis import GibbsPolicy, gibbs_policy
from .core import (
    HARD,
    ROOT,
    BridgeInstance,
    HiddenPathModel,
    LeaderTrie,
    leader_trie_params,
)
from .oracles import PREFIX_LOGIT, PREFIX_SAMPLE, SEQSCORE, OracleSession


@dataclass(frozen=True)
class RecoveryResult:
    """Outcome of a recovery run: the recovered object (None marks failure),
    the exact ledger delta, and the prefix trail for discipline audits.
    ``halted`` lists prefixes whose expansion stopped on a non-singleton
    candidate set (possible only with super-threshold noise)."""

    recovered: object
    queries_used: int
    trail: tuple
    halted: tuple = ()


@dataclass(frozen=True)
class BridgeOutput:
    """Result of the scaffold-walk post-training procedure."""

    suffix: tuple
    bit: int
    policy: GibbsPolicy
    generator_queries: int
    reward_queries: int
    trail: tuple


def majority_budget(gap: float, rounds: int, K: int, delta: float) -> int:
    """Samples per stage so that all ``rounds`` majority votes over K tokens
    with per-sample advantage ``gap`` jointly succeed with probability
    1 - delta: ceil((2/gap^2) * log(rounds*(K-1)/delta))."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"failure budget must be in (0, 1), got {delta}")
    if gap <= 0.0:
        raise ValueError(f"per-sample advantage must be positive, got {gap}")
    return math.ceil(2.0 / gap**2 * math.log(rounds * (K - 1) / delta))


def trie_sample_budget(prob_margin: float, K: int, S: int, delta: float) -> int:
    """Samples per node for threshold tests at up to S nodes:
    ceil((1/(2*margin^2)) * log(2*(K-1)*S/delta))."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"failure budget must be in (0, 1), got {delta}")
    if S < 1:
        raise ValueError(f"node budget must be >= 1, got {S}")
    return math.ceil(1.0 / (2.0 * prob_margin**2) * math.log(2.0 * (K - 1) * S / delta))


def _majority_token(counts) -> int:
    # ties go to the smallest token index for reproducibility
    return counts.index(max(counts)) + 1


def recover_hidden_path(
    session: OracleSession, delta: float, rng: np.random.Generator
) -> RecoveryResult:
    """Reconstruct a hidden path from chosen-prefix samples.

    Walks the tree one level at a time: at each stage it samples the current
    reconstructed prefix m times and keeps the empirical-majority token,
    where m is the Hoeffding budget for the model's per-step advantage.
    Uses exactly H*m queries and obeys the local-reset discipline.
    """
    vocab = session.vocab
    H, K = vocab.H, vocab.K
    m = majority_budget(session.model.delta, H, K, delta)
    led = session.ledger
    c0, t0 = led.count(PREFIX_SAMPLE), len(led.prefix_trail)
    prefix = ROOT
    for _ in range(H):
        counts = [0] * K
        for _ in range(m):
            counts[session.query_prefix_sample(prefix, rng) - 1] += 1
        prefix = prefix + (_majority_token(counts),)
    return RecoveryResult(
        recovered=prefix,
        queries_used=led.count(PREFIX_SAMPLE) - c0,
        trail=tuple(led.prefix_trail[t0:]),
    )


def recover_leader_trie_logit(session: OracleSession, rng=None) -> RecoveryResult:
    """Reconstruct a leader trie from chosen-prefix logit queries.

    Breadth-first from the root: at each popped prefix the nonleader
    coordinates are thresholded halfway (in log space) between the elevated
    hidden-child level and the off-trie baseline. A singleton above the
    threshold identifies the hidden child and both children are expanded.
    Exact with one query per internal node whenever the reply noise stays
    below the log-space margin.
    """
    vocab = session.vocab
    H, K = vocab.H, vocab.K
    params = leader_trie_params(K)
    threshold = math.log(params["gamma0"]) + params["log_margin"]
    led = session.ledger
    c0, t0 = led.count(PREFIX_LOGIT), len(led.prefix_trail)
    branch = {}
    halted = []
    queue = deque([ROOT])
    while queue:
        p = queue.popleft()
        logits = session.query_prefix_logit(p, rng)
        cands = [a for a in range(2, K + 1) if logits[a - 1] > threshold]
        if len(cands) == 1:
            b = cands[0]
            branch[p] = b
            if len(p) + 1 < H:
                queue.append(p + (1,))
                queue.append(p + (b,))
        else:
            halted.append(p)
    recovered = LeaderTrie(vocab, branch) if not halted else None
    return RecoveryResult(
        recovered=recovered,
        queries_used=led.count(PREFIX_LOGIT) - c0,
        trail=tuple(led.prefix_trail[t0:]),
        halted=tuple(halted),
    )


def recover_leader_trie_sample(
    session: OracleSession, S: int, delta: float, rng: np.random.Generator
) -> RecoveryResult:
    """Reconstruct a leader trie from chosen-prefix samples.

    Same breadth-first traversal as the logit variant, with the log-space
    test replaced by an empirical-frequency test at threshold
    gamma0 + prob_margin = (beta + gamma0)/2. Processes at most S prefixes
    (m samples each) and returns failure if the queue is nonempty when that
    budget runs out.
    """
    vocab = session.vocab
    H, K = vocab.H, vocab.K
    params = leader_trie_params(K)
    m = trie_sample_budget(params["prob_margin"], K, S, delta)
    threshold = params["gamma0"] + params["prob_margin"]
    led = session.ledger
    c0, t0 = led.count(PREFIX_SAMPLE), len(led.prefix_trail)
    branch = {}
    halted = []
    queue = deque([ROOT])
    processed = 0
    while queue and processed < S:
        p = queue.popleft()
        processed += 1
        counts = [0] * K
        for _ in range(m):
            counts[session.query_prefix_sample(p, rng) - 1] += 1
        cands = [a for a in range(2, K + 1) if counts[a - 1] / m > threshold]
        if len(cands) == 1:
            b = cands[0]
            branch[p] = b
            if len(p) + 1 < H:
                queue.append(p + (1,))
                queue.append(p + (b,))
        else:
            halted.append(p)
    if queue or halted:
        recovered = None
    else:
        recovered = LeaderTrie(vocab, branch)
    return RecoveryResult(
        recovered=recovered,
        queries_used=led.count(PREFIX_SAMPLE) - c0,
        trail=tuple(led.prefix_trail[t0:]),
        halted=tuple(halted),
    )


def constant_suffix_rule(token: int = 1) -> Callable[[int, int], tuple]:
    """Padding rule filling every stage's suffix with one fixed token."""

    def rule(stage: int, length: int) -> tuple:
        return (token,) * length

    return rule


def recover_hidden_path_seqscore(
    session: OracleSession, suffix_rule: Optional[Callable[[int, int], tuple]] = None
) -> RecoveryResult:
    """Reconstruct a hidden path from exact sequence scores.

    At stage t the K one-token extensions of the current prefix are padded to
    full length by ``suffix_rule(stage, length)`` and scored; the argmax
    token is kept. Correct for any padding rule, deterministic, and uses
    exactly H*K queries.
    """
    if session.xi != 0:
        raise ValueError("sequence-score recovery needs exact scores (xi = 0)")
    vocab = session.vocab
    H, K = vocab.H, vocab.K
    if suffix_rule is None:
        suffix_rule = constant_suffix_rule(1)
    led = session.ledger
    c0 = led.count(SEQSCORE)
    prefix = ROOT
    for t in range(1, H + 1):
        pad = tuple(suffix_rule(t, H - t))
        if len(pad) != H - t:
            raise ValueError(f"padding rule returned length {len(pad)} at stage {t}")
        best_token, best_score = None, -math.inf
        for a in range(1, K + 1):
            score = session.query_seqscore(prefix + (a,) + pad)
            if score > best_score:
                best_token, best_score = a, score
        prefix = prefix + (best_token,)
    return RecoveryResult(
        recovered=prefix,
        queries_used=led.count(SEQSCORE) - c0,
        trail=(),
    )


def bridge_posttrain(
    inst: BridgeInstance,
    gen_session: OracleSession,
    reward_query: Callable,
    delta: float,
    rng: np.random.Generator,
) -> BridgeOutput:
    """Solve a bridge instance with chosen-prefix sampling and one reward query.

    Only the public part of the instance is used: the scaffold is walked down
    one token at a time (D+1 discipline-legal queries whose replies are
    discarded), the hidden suffix is recovered by the majority-vote stage
    loop below the scaffold, and a single reward query with the point-mass
    policy on scaffold+suffix+tau0 identifies the reward bit. The output
    carries the exact Gibbs optimizer of the identified instance.

    ``reward_query(prompt, policy, rng)`` must sample a completion from the
    policy at the prompt and return the observed outcome reward.
    """
    D, L, K = inst.D, inst.L, inst.K
    m = majority_budget(inst.delta, L, K, delta)
    led = gen_session.ledger
    c0, t0 = led.count(PREFIX_SAMPLE), len(led.prefix_trail)
    for i in range(D + 1):
        gen_session.query_prefix_sample(inst.scaffold[:i], rng)
    suffix = ()
    for _ in range(L):
        stage_prefix = inst.scaffold + suffix
        counts = [0] * K
        for _ in range(m):
            counts[gen_session.query_prefix_sample(stage_prefix, rng) - 1] += 1
        suffix = suffix + (_majority_token(counts),)
    probe = inst.scaffold + suffix + (inst.tau0,)
    observed = reward_query(HARD, {probe: 1.0}, rng)
    bit = 0 if observed > 0 else 1
    identified = replace(inst, suffix=suffix, bit=bit)
    return BridgeOutput(
        suffix=suffix,
        bit=bit,
        policy=gibbs_policy(identified),
        generator_queries=led.count(PREFIX_SAMPLE) - c0,
        reward_queries=1,
        trail=tuple(led.prefix_trail[t0:]),
    )


def exact_reward_oracle(inst: BridgeInstance) -> Callable:
    """Noiseless reward channel for an instance: samples a completion from
    the submitted policy and returns its outcome reward."""

    def query(prompt: str, policy, rng) -> float:
        completions = list(policy)
        weights = [policy[y] for y in completions]
        idx = int(rng.choice(len(completions), p=weights)) if len(completions) > 1 else 0
        return inst.reward(prompt, completions[idx])

    return query


def distinguish_no_reset_baseline(
    session: OracleSession,
    model_a: HiddenPathModel,
    model_b: HiddenPathModel,
    q: int,
    rng: np.random.Generator,
) -> int:
    """Likelihood-ratio tester between twin hidden-path models over at most q
    root-start rollouts.

    The twins differ only at the depth H-1 stem prefix, so a rollout is
    informative only if it reaches the stem; the visited-prefix distribution
    there then reveals the favored final token. Uninformative budgets end in
    a fair coin flip. Returns 0 for the first model, 1 for the second.
    """
    if not isinstance(model_a, HiddenPathModel) or not isinstance(model_b, HiddenPathModel):
        raise ValueError("the tester needs two hidden-path models")
    if model_a.vocab != model_b.vocab or model_a.lam != model_b.lam:
        raise ValueError("twin models must share vocabulary and signal strength")
    H = model_a.vocab.H
    stem = model_a.z[: H - 1]
    if model_b.z[: H - 1] != stem or model_a.z[-1] == model_b.z[-1]:
        raise ValueError("models must agree on the stem and differ in the final token")
    for _ in range(q):
        reply = session.query_pathfull(rng)
        if reply.y[: H - 1] == stem:
            mu = reply.mus[H - 1]
            return 0 if mu[model_a.z[-1] - 1] > mu[model_b.z[-1] - 1] else 1
    return int(rng.integers(0, 2))
