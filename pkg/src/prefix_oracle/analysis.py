"""Exact analysis quantities: reachability, transcript-law total variation,
KL divergences, Gibbs optimizers, objective values, and the no-reset
success-probability certificate.

Everything here is exact up to floating point: probabilities of finite
trajectory spaces are enumerated directly (under a configurable cap), and
closed forms are used where they exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

from .core import (
    DEFAULT_ENUMERATION_CAP,
    BridgeInstance,
    Completion,
    EnumerationCapError,
    completion_distribution,
    trajectory_prob,
)

MU_QUANTUM = 1e-12


class AgreementError(ValueError):
    """Two models were claimed to agree outside a prefix set but do not."""


def _as_prefix_set(model, U) -> frozenset:
    out = frozenset(tuple(p) for p in U)
    for p in out:
        model.vocab.check_prefix(p)
    return out


def reachability(model, U) -> float:
    """Probability that a root-start rollout ever visits the prefix set U.

    Computed by first-entry decomposition: the entry events at distinct
    prefixes of U are disjoint, and the probability of entering first at p is
    the product of the transition probabilities along p (zero if a proper
    prefix of p already lies in U).
    """
    U = _as_prefix_set(model, U)
    total = 0.0
    for p in U:
        if any(p[:s] in U for s in range(len(p))):
            continue
        prob = 1.0
        for s in range(len(p)):
            prob *= model.next_probs(p[:s])[p[s] - 1]
        total += prob
    return total


def reachability_by_enumeration(model, U, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Independent route: one minus the total probability of U-avoiding
    trajectories, by full enumeration."""
    U = _as_prefix_set(model, U)
    H = model.vocab.H
    avoid = 0.0
    for y in model.vocab.completions(cap):
        if all(y[:t] not in U for t in range(H)):
            avoid += trajectory_prob(model, y)
    return 1.0 - avoid


def models_agree_outside(model_a, model_b, U, atol: float = 1e-12,
                         cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    """Whether the two generators have identical next-token distributions at
    every prefix not in U, checked exhaustively."""
    if model_a.vocab != model_b.vocab:
        return False
    vocab = model_a.vocab
    n_prefixes = sum(vocab.K**t for t in range(vocab.H))
    if n_prefixes > cap:
        raise EnumerationCapError(f"{n_prefixes} prefixes exceed cap {cap}")
    U = frozenset(tuple(p) for p in U)
    for p in vocab.prefixes():
        if p in U:
            continue
        pa, pb = model_a.next_probs(p), model_b.next_probs(p)
        if any(abs(x - y) > atol for x, y in zip(pa, pb)):
            return False
    return True


@dataclass(frozen=True)
class ReachabilityAgreement:
    reach_a: float
    reach_b: float

    @property
    def equal(self) -> bool:
        return abs(self.reach_a - self.reach_b) <= 1e-12


def reachability_equal_outside_agreement(model_a, model_b, U) -> ReachabilityAgreement:
    """For two generators that agree outside U, both assign the same
    probability to ever entering U. Raises AgreementError if the agreement
    precondition fails."""
    if not models_agree_outside(model_a, model_b, U):
        raise AgreementError("models do not agree outside the given prefix set")
    return ReachabilityAgreement(reachability(model_a, U), reachability(model_b, U))


# ---------------------------------------------------------------------------
# Transcript laws of the canonical rollout experiment.


def _quantize(mu) -> tuple:
    return tuple(int(round(v / MU_QUANTUM)) for v in mu)


@dataclass(frozen=True)
class TranscriptLaw:
    """Exact distribution over canonical rollout replies.

    A reply is keyed by the trajectory together with its visited-prefix
    distributions quantized at 1e-12, so replies that are identical across
    two models land on the same key and their laws can be compared directly.
    """

    probs: Mapping

    def total(self) -> float:
        return sum(self.probs.values())

    @property
    def support_size(self) -> int:
        return len(self.probs)

    def trajectory_mass(self, y: Completion) -> float:
        y = tuple(y)
        return sum(p for (traj, _), p in self.probs.items() if traj == y)


def pathfull_law(model, cap: int = DEFAULT_ENUMERATION_CAP) -> TranscriptLaw:
    """Exact one-query reply law of the canonical rollout experiment, by full
    trajectory enumeration."""
    H = model.vocab.H
    probs = {}
    for y in model.vocab.completions(cap):
        mus = tuple(model.next_probs(y[:t]) for t in range(H))
        key = (y, tuple(_quantize(mu) for mu in mus))
        probs[key] = trajectory_prob(model, y)
    return TranscriptLaw(probs)


def tv_distance(law_a: TranscriptLaw, law_b: TranscriptLaw) -> float:
    """Total variation distance between two reply laws."""
    keys = set(law_a.probs) | set(law_b.probs)
    return 0.5 * sum(abs(law_a.probs.get(k, 0.0) - law_b.probs.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# KL divergence and the KL-regularized objective.


def kl_divergence(p: Mapping, q: Mapping) -> float:
    """KL(p || q) over completion distributions; +inf on support violation."""
    total = 0.0
    for y, py in p.items():
        if py <= 0.0:
            continue
        qy = q.get(y, 0.0)
        if qy <= 0.0:
            return math.inf
        total += py * math.log(py / qy)
    return total


def binary_kl(m: float, q: float) -> float:
    """Two-point divergence kl(m || q) of Bernoulli distributions."""
    if not (0.0 <= m <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError("binary_kl needs arguments in [0, 1]")
    total = 0.0
    if m > 0.0:
        if q == 0.0:
            return math.inf
        total += m * math.log(m / q)
    if m < 1.0:
        if q == 1.0:
            return math.inf
        total += (1.0 - m) * math.log((1.0 - m) / (1.0 - q))
    return total


@dataclass(frozen=True)
class PromptPolicy:
    """Prompt-conditioned policy over the two-point prompt space.

    ``hard`` is the completion distribution at the hard prompt. ``easy`` is
    the distribution shared by every easy prompt; None delegates to the base
    generator there (zero KL, the optimal easy behavior).
    """

    hard: Mapping
    easy: Optional[Mapping] = None


@dataclass(frozen=True)
class GibbsPolicy:
    """Exact maximizer of the KL-regularized outcome-reward objective for a
    bridge instance: proportional to base probability times exp(reward/beta)
    at the hard prompt, equal to the base generator on easy prompts."""

    inst: BridgeInstance

    @property
    def Z(self) -> float:
        """Normalizer 1 - q0 + q0*exp(R/beta); equals 5 - q0 at the
        calibrated reward scale."""
        inst = self.inst
        return 1.0 - inst.q0 + inst.q0 * math.exp(inst.R / inst.beta)

    @property
    def target_mass(self) -> float:
        """Mass on the rewarded completion: q0*exp(R/beta)/Z."""
        inst = self.inst
        return inst.q0 * math.exp(inst.R / inst.beta) / self.Z

    @property
    def optimal_value(self) -> float:
        """The optimal objective value eta * beta * log Z."""
        return self.inst.eta * self.inst.beta * math.log(self.Z)

    def prob_hard(self, y: Completion) -> float:
        inst = self.inst
        base = trajectory_prob(inst.hard_model(), tuple(y))
        boost = math.exp(inst.R / inst.beta) if tuple(y) == inst.target else 1.0
        return base * boost / self.Z

    def hard_dist(self, cap: int = DEFAULT_ENUMERATION_CAP) -> dict:
        return {y: self.prob_hard(y) for y in self.inst.vocab.completions(cap)}

    def as_policy(self, cap: int = DEFAULT_ENUMERATION_CAP) -> PromptPolicy:
        return PromptPolicy(hard=self.hard_dist(cap), easy=None)


def gibbs_policy(inst: BridgeInstance) -> GibbsPolicy:
    return GibbsPolicy(inst)


def hard_prompt_objective(inst: BridgeInstance, hard: Mapping) -> float:
    """Reward expectation minus beta times KL to the base generator, at the
    hard prompt only."""
    base = completion_distribution(inst.hard_model())
    kl = kl_divergence(hard, base)
    if math.isinf(kl):
        return -math.inf
    return inst.R * hard.get(inst.target, 0.0) - inst.beta * kl


def evaluate_objective(inst: BridgeInstance, policy) -> float:
    """Exact prompt-averaged objective over the two-point prompt space."""
    if isinstance(policy, GibbsPolicy):
        policy = policy.as_policy()
    value = inst.eta * hard_prompt_objective(inst, policy.hard)
    if policy.easy is not None and inst.eta < 1.0:
        easy_base = completion_distribution(inst.easy_model())
        kl = kl_divergence(policy.easy, easy_base)
        if math.isinf(kl):
            return -math.inf
        value -= (1.0 - inst.eta) * inst.beta * kl
    return value


def _require_calibrated_scale(inst: BridgeInstance) -> None:
    paper_scale = inst.beta * math.log(4.0 / inst.q0)
    if abs(inst.R - paper_scale) > 1e-9 * max(1.0, abs(paper_scale)):
        raise ValueError("this check needs the calibrated reward scale beta*log(4/q0)")


@dataclass(frozen=True)
class RegretGapReport:
    target_mass: float
    gap: float
    threshold_violated: bool


def regret_gap_check(inst: BridgeInstance, policy) -> RegretGapReport:
    """Report a policy's target mass and exact objective gap, and whether it
    lands in the forbidden region (mass <= 1/4 with gap <= eta*beta/4), which
    the calibrated reward scale rules out."""
    _require_calibrated_scale(inst)
    if isinstance(policy, GibbsPolicy):
        policy = policy.as_policy()
    mass = policy.hard.get(inst.target, 0.0)
    gap = gibbs_policy(inst).optimal_value - evaluate_objective(inst, policy)
    violated = mass <= 0.25 and gap <= inst.eta * inst.beta / 4.0
    return RegretGapReport(target_mass=mass, gap=gap, threshold_violated=violated)


def lower_bound_certificate(inst: BridgeInstance, q_g: int, q_r: int) -> float:
    """Success-probability ceiling for any algorithm limited to q_g no-reset
    generator queries and q_r < N outcome-reward queries:
    q_g * p_plus^D + q_r/N + 4/(N - q_r)."""
    if q_g < 0 or q_r < 0:
        raise ValueError("query budgets must be nonnegative")
    if q_r >= inst.N:
        raise ValueError(f"reward budget {q_r} must be below N = {inst.N}")
    return q_g * inst.p_plus**inst.D + q_r / inst.N + 4.0 / (inst.N - q_r)
