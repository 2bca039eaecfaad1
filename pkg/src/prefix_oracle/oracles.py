"""Access-model layer: stateful oracle sessions over a fixed-prompt generator.

A session enforces one access regime, counts queries in a ledger, and keeps
the ordered prefix trail needed to audit the local-reset discipline. All
root-start (no-reset) interfaces are implemented as post-processings of a
single canonical rollout reply, so their ledger entries each consume exactly
one rollout.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    ROOT,
    Completion,
    LeaderTrieModel,
    Prefix,
    Token,
    sample_from_cdf,
    trajectory_logprob,
)

PATHFULL = "PathFull"
OUTPUT_ONLY = "OutputOnly"
OUTPUT_LOGPROBS = "OutputWithLogprobs"
OUTPUT_TOPK = "OutputWithTopK"
PREFIX_SAMPLE = "PrefixSample"
PREFIX_TOP = "PrefixTop"
PREFIX_LOGIT = "PrefixLogit"
SEQSCORE = "SeqScore"
CUSTOM = "Custom"

PREFIX_KINDS = frozenset({PREFIX_SAMPLE, PREFIX_TOP, PREFIX_LOGIT})

TOP_TIE_RTOL = 1e-12

NOISE_RANDOM = "random"
NOISE_ADVERSARIAL = "adversarial-threshold"


class DisciplineViolationError(RuntimeError):
    """Raised in strict mode when a prefix query breaks the local-reset rule."""


@dataclass(frozen=True)
class PathFullReply:
    """One canonical rollout: the trajectory plus every visited next-token
    distribution (``mus[t]`` is the distribution at ``y[:t]``)."""

    y: Completion
    mus: tuple  # H tuples of K floats


@dataclass(frozen=True)
class DisciplineAudit:
    ok: bool
    offending_index: Optional[int] = None  # 1-based position in the trail

    @property
    def verdict(self) -> str:
        return "ok" if self.ok else "violation"


@dataclass(frozen=True)
class NoisePolicy:
    """Perturbation applied to logit and score replies, always inside the
    L-infinity ball of radius xi.

    ``random`` adds i.i.d. uniform noise on [-xi, xi] per coordinate per
    call. ``adversarial-threshold`` moves every finite coordinate by exactly
    xi toward ``target`` (the trie-recovery decision threshold), the worst
    in-ball vector for threshold tests; scores are shifted by -xi in this
    mode since no threshold applies to them.
    """

    xi: float = 0.0
    mode: str = NOISE_RANDOM
    target: Optional[float] = None

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError(f"noise radius must be >= 0, got {self.xi}")
        if self.mode not in (NOISE_RANDOM, NOISE_ADVERSARIAL):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.mode == NOISE_ADVERSARIAL and self.xi > 0 and self.target is None:
            raise ValueError("adversarial-threshold noise needs a target")

    def perturb_logits(self, exact: np.ndarray, rng) -> np.ndarray:
        if self.xi == 0:
            return exact
        finite = np.isfinite(exact)
        out = exact.copy()
        if self.mode == NOISE_RANDOM:
            if rng is None:
                raise ValueError("random noise needs an rng stream")
            out[finite] += rng.uniform(-self.xi, self.xi, size=int(finite.sum()))
        else:
            shift = np.sign(self.target - out[finite]) * self.xi
            out[finite] += shift
        return out

    def perturb_score(self, exact: float, rng) -> float:
        if self.xi == 0 or not math.isfinite(exact):
            return exact
        if self.mode == NOISE_RANDOM:
            if rng is None:
                raise ValueError("random noise needs an rng stream")
            return exact + float(rng.uniform(-self.xi, self.xi))
        return exact - self.xi


def _new_counts():
    return defaultdict(int)


@dataclass
class QueryLedger:
    """Query accounting for one session: per-kind counts, the ordered prefix
    and completion trails, and one record per query for CSV export."""

    counts: defaultdict = field(default_factory=_new_counts)
    prefix_trail: list = field(default_factory=list)
    completion_trail: list = field(default_factory=list)
    records: list = field(default_factory=list)  # (kind, payload, reply)

    def count(self, kind: str) -> int:
        return self.counts[kind]

    @property
    def rollouts(self) -> int:
        """Rollouts consumed by no-reset queries of any richness."""
        return self.counts[PATHFULL]


def audit_discipline(ledger: QueryLedger) -> DisciplineAudit:
    """Check the ordered prefix trail against the local-reset discipline: the
    first query is the root and every later query is a previously queried
    prefix or a one-token extension of one. An empty trail is vacuously ok."""
    seen = set()
    for i, p in enumerate(ledger.prefix_trail, start=1):
        if i == 1:
            if p != ROOT:
                return DisciplineAudit(False, 1)
        elif p not in seen and p[:-1] not in seen:
            return DisciplineAudit(False, i)
        seen.add(p)
    return DisciplineAudit(True, None)


def postprocess_output_only(reply: PathFullReply) -> Completion:
    return reply.y


def postprocess_logprobs(reply: PathFullReply):
    """Generated-token log probabilities along the sampled trajectory."""
    lps = tuple(math.log(reply.mus[t][reply.y[t] - 1]) for t in range(len(reply.y)))
    return reply.y, lps


def postprocess_topk(reply: PathFullReply, k: int):
    """Per-step top-k (token, log probability) lists, ties broken by token."""
    steps = []
    for mu in reply.mus:
        order = sorted(range(len(mu)), key=lambda i: (-mu[i], i))[:k]
        steps.append(tuple((i + 1, math.log(mu[i])) for i in order))
    return reply.y, tuple(steps)


class OracleSession:
    """Single-owner mutable access channel over an immutable generator.

    Noise applies to PrefixLogit and SeqScore replies. With adversarial noise
    the threshold target defaults to the leader-trie decision threshold when
    the wrapped model is a leader-trie generator. ``strict_discipline``
    raises at the violating prefix query instead of merely recording it.
    """

    def __init__(
        self,
        model,
        xi: float = 0.0,
        noise: str = NOISE_RANDOM,
        noise_target: Optional[float] = None,
        strict_discipline: bool = False,
    ):
        if noise == NOISE_ADVERSARIAL and noise_target is None and xi > 0:
            if isinstance(model, LeaderTrieModel):
                noise_target = math.log(model.gamma0) + model.log_margin
            else:
                raise ValueError("adversarial noise needs an explicit target for this model")
        self.model = model
        self.noise = NoisePolicy(xi, noise, noise_target)
        self.strict_discipline = strict_discipline
        self.ledger = QueryLedger()
        self._seen = set()

    @property
    def vocab(self):
        return self.model.vocab

    @property
    def xi(self) -> float:
        return self.noise.xi

    def audit(self) -> DisciplineAudit:
        return audit_discipline(self.ledger)

    # -- no-reset interfaces ------------------------------------------------

    def _rollout(self, rng: np.random.Generator) -> PathFullReply:
        model = self.model
        y = ()
        mus = []
        for _ in range(model.vocab.H):
            mus.append(model.next_probs(y))
            y = y + (sample_from_cdf(model.next_cdf(y), rng),)
        return PathFullReply(y, tuple(mus))

    def query_no_reset(self, rng: np.random.Generator, post: Callable, kind: str = CUSTOM):
        """Generic no-reset query: one fresh rollout, then an arbitrary
        post-processing of the canonical reply."""
        reply = self._rollout(rng)
        out = post(reply)
        led = self.ledger
        led.counts[PATHFULL] += 1
        if kind != PATHFULL:
            led.counts[kind] += 1
        led.records.append((kind, None, out))
        return out

    def query_pathfull(self, rng: np.random.Generator) -> PathFullReply:
        return self.query_no_reset(rng, lambda r: r, PATHFULL)

    def query_output_only(self, rng: np.random.Generator) -> Completion:
        return self.query_no_reset(rng, postprocess_output_only, OUTPUT_ONLY)

    def query_output_with_logprobs(self, rng: np.random.Generator):
        return self.query_no_reset(rng, postprocess_logprobs, OUTPUT_LOGPROBS)

    def query_output_with_topk(self, rng: np.random.Generator, k: int):
        if not (1 <= k <= self.vocab.K):
            raise ValueError(f"k must be in 1..{self.vocab.K}, got {k}")
        return self.query_no_reset(rng, lambda r: postprocess_topk(r, k), OUTPUT_TOPK)

    # -- chosen-prefix interfaces -------------------------------------------

    def _note_prefix(self, p: Prefix) -> None:
        seen = self._seen
        if self.strict_discipline:
            legal = (p == ROOT) if not seen else (p in seen or p[:-1] in seen)
            if not legal:
                raise DisciplineViolationError(f"prefix {p} breaks the local-reset discipline")
        seen.add(p)

    def query_prefix_sample(self, p: Prefix, rng: np.random.Generator) -> Token:
        p = tuple(p)
        cdf = self.model.next_cdf(p)  # validates the prefix
        self._note_prefix(p)
        tok = sample_from_cdf(cdf, rng)
        led = self.ledger
        led.counts[PREFIX_SAMPLE] += 1
        led.prefix_trail.append(p)
        led.records.append((PREFIX_SAMPLE, p, tok))
        return tok

    def query_prefix_top(self, p: Prefix) -> Optional[Token]:
        """Unique most likely next token, or None when tied within tolerance."""
        p = tuple(p)
        probs = self.model.next_probs(p)
        self._note_prefix(p)
        m = max(probs)
        cutoff = m - m * TOP_TIE_RTOL
        winners = [i for i, q in enumerate(probs) if q >= cutoff]
        tok = winners[0] + 1 if len(winners) == 1 else None
        led = self.ledger
        led.counts[PREFIX_TOP] += 1
        led.prefix_trail.append(p)
        led.records.append((PREFIX_TOP, p, tok))
        return tok

    def query_prefix_logit(self, p: Prefix, rng=None) -> tuple:
        """Log-probability vector, exact at xi=0, otherwise perturbed within
        the L-infinity ball. Zero-probability entries surface as -inf and are
        exempt from the noise contract."""
        p = tuple(p)
        dist = self.model.next_dist(p)
        self._note_prefix(p)
        with np.errstate(divide="ignore"):
            exact = np.log(dist)
        out = tuple(float(v) for v in self.noise.perturb_logits(exact, rng))
        led = self.ledger
        led.counts[PREFIX_LOGIT] += 1
        led.prefix_trail.append(p)
        led.records.append((PREFIX_LOGIT, p, out))
        return out

    # -- chosen-completion interface ----------------------------------------

    def query_seqscore(self, y: Completion, rng=None) -> float:
        y = tuple(y)
        exact = trajectory_logprob(self.model, y)
        out = self.noise.perturb_score(exact, rng)
        led = self.ledger
        led.counts[SEQSCORE] += 1
        led.completion_trail.append(y)
        led.records.append((SEQSCORE, y, out))
        return out


# ---------------------------------------------------------------------------
# Ledger CSV export: query_index,kind,prefix_or_completion,reply_summary


def _summarize_reply(reply) -> str:
    if reply is None:
        return "bot"
    if isinstance(reply, (int, np.integer)):
        return str(int(reply))
    if isinstance(reply, float):
        return f"{reply:.12g}"
    if isinstance(reply, PathFullReply):
        return "y=" + ".".join(str(t) for t in reply.y)
    if isinstance(reply, tuple):
        if reply and all(isinstance(v, (int, np.integer)) for v in reply):
            return "y=" + ".".join(str(int(v)) for v in reply)
        if reply and all(isinstance(v, float) for v in reply):
            return " ".join(f"{v:.12g}" for v in reply)
        if len(reply) == 2:  # (completion, per-step payload)
            return "y=" + ".".join(str(t) for t in reply[0])
    return "reply"


def ledger_to_csv(ledger: QueryLedger) -> str:
    lines = ["query_index,kind,prefix_or_completion,reply_summary"]
    for i, (kind, payload, reply) in enumerate(ledger.records, start=1):
        loc = "" if payload is None else ".".join(str(t) for t in payload)
        lines.append(f"{i},{kind},{loc},{_summarize_reply(reply)}")
    return "\n".join(lines) + "\n"


def write_ledger_csv(ledger: QueryLedger, path) -> None:
    with open(path, "w") as fh:
        fh.write(ledger_to_csv(ledger))
