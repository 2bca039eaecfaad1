"""Vocabulary, prefix-tree addressing, and the concrete generator families.

Tokens are integers 1..K. A prefix is a tuple of tokens of length < H, a
completion a tuple of length exactly H. Every generator exposes
``next_dist(prefix)`` returning the next-token distribution as a length-K
numpy vector (index i holds the probability of token i + 1). Models are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np

Token = int
Prefix = tuple  # tuple of tokens, length < H
Completion = tuple  # tuple of tokens, length == H

ROOT: Prefix = ()

PROB_ATOL = 1e-12
DEFAULT_ENUMERATION_CAP = 10**6

HARD = "hard"
EASY = "easy"


class InvalidPrefixError(ValueError):
    """A prefix is too long or carries out-of-range tokens."""


class InvalidCompletionError(ValueError):
    """A completion has the wrong length or out-of-range tokens."""


class EnumerationCapError(RuntimeError):
    """Raised when an exact enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class VocabSpec:
    """Vocabulary size and horizon of a prefix tree."""

    K: int
    H: int

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.K}")
        if self.H < 1:
            raise ValueError(f"horizon must be >= 1, got {self.H}")

    def check_prefix(self, p: Prefix) -> None:
        if len(p) >= self.H:
            raise InvalidPrefixError(f"prefix of length {len(p)} with horizon {self.H}")
        if any(not (1 <= a <= self.K) for a in p):
            raise InvalidPrefixError(f"prefix {p} has tokens outside 1..{self.K}")

    def check_completion(self, y: Completion) -> None:
        if len(y) != self.H:
            raise InvalidCompletionError(f"completion of length {len(y)}, expected {self.H}")
        if any(not (1 <= a <= self.K) for a in y):
            raise InvalidCompletionError(f"completion {y} has tokens outside 1..{self.K}")

    def prefixes(self) -> Iterator[Prefix]:
        """All prefixes of length 0..H-1, shortest first."""
        for t in range(self.H):
            yield from itertools.product(range(1, self.K + 1), repeat=t)

    def completions(self, cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator[Completion]:
        """All K^H completions; raises beyond the enumeration cap."""
        n = self.K**self.H
        if n > cap:
            raise EnumerationCapError(f"{n} completions exceed cap {cap}")
        return itertools.product(range(1, self.K + 1), repeat=self.H)


def _freeze(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    vec.flags.writeable = False
    return vec


def _peaked_vector(K: int, peak_token: int, high: float, low: float) -> np.ndarray:
    vec = np.full(K, low)
    vec[peak_token - 1] = high
    return _freeze(vec)


class _CachedDistModel:
    """Shared next-token plumbing: models classify a prefix into one of a
    small number of distribution classes and serve cached vectors."""

    vocab: VocabSpec

    def _class_key(self, p: Prefix):
        raise NotImplementedError

    def _build(self, key) -> np.ndarray:
        raise NotImplementedError

    def _lookup(self, p: Prefix):
        cache = self.__dict__.get("_dist_cache")
        if cache is None:
            cache = {}
            object.__setattr__(self, "_dist_cache", cache)
        key = self._class_key(p)
        entry = cache.get(key)
        if entry is None:
            vec = self._build(key)
            probs = tuple(float(x) for x in vec)
            cdf = tuple(itertools.accumulate(probs))
            entry = (vec, probs, cdf)
            cache[key] = entry
        return entry

    def next_dist(self, p: Prefix) -> np.ndarray:
        """Next-token distribution at prefix ``p`` as a read-only vector."""
        self.vocab.check_prefix(p)
        return self._lookup(p)[0]

    def next_probs(self, p: Prefix) -> tuple:
        """Same distribution as a plain tuple of floats."""
        self.vocab.check_prefix(p)
        return self._lookup(p)[1]

    def next_cdf(self, p: Prefix) -> tuple:
        """Cumulative form used by samplers."""
        self.vocab.check_prefix(p)
        return self._lookup(p)[2]


@dataclass(frozen=True)
class UniformModel(_CachedDistModel):
    """Uniform next-token distribution at every prefix."""

    vocab: VocabSpec

    def _class_key(self, p):
        return "uniform"

    def _build(self, key):
        return _freeze(np.full(self.vocab.K, 1.0 / self.vocab.K))


@dataclass(frozen=True)
class CallableModel(_CachedDistModel):
    """Generator defined by an arbitrary prefix -> probabilities function.

    Intended for tests and user-supplied models; distributions are not cached
    because the callable may distinguish every prefix.
    """

    vocab: VocabSpec
    fn: Callable[[Prefix], object]

    def next_dist(self, p: Prefix) -> np.ndarray:
        self.vocab.check_prefix(p)
        vec = np.asarray(self.fn(p), dtype=float)
        if vec.shape != (self.vocab.K,):
            raise ValueError(f"distribution at {p} has shape {vec.shape}")
        return _freeze(vec)

    def next_probs(self, p: Prefix) -> tuple:
        return tuple(float(x) for x in self.next_dist(p))

    def next_cdf(self, p: Prefix) -> tuple:
        return tuple(itertools.accumulate(self.next_probs(p)))


def signal_probs(K: int, lam: float) -> tuple:
    """The (favored, unfavored) per-step probabilities for signal strength lam."""
    if lam < 0:
        raise ValueError(f"signal strength must be >= 0, got {lam}")
    e = math.exp(lam)
    return e / (e + K - 1), 1.0 / (e + K - 1)


@dataclass(frozen=True)
class HiddenPathModel(_CachedDistModel):
    """Generator that mildly favors one secret token chain.

    At a prefix of the hidden path the next path token has probability
    ``p_plus`` and every rival ``p_minus``; off the path the distribution is
    uniform. ``lam == 0`` degenerates to the uniform model and is allowed only
    so the boundary case can be exercised; recovery guarantees need lam > 0.
    """

    vocab: VocabSpec
    lam: float
    z: Completion

    _on_path: frozenset = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        self.vocab.check_completion(self.z)
        signal_probs(self.vocab.K, self.lam)  # validates lam
        object.__setattr__(
            self, "_on_path", frozenset(self.z[:t] for t in range(self.vocab.H))
        )

    @property
    def p_plus(self) -> float:
        return signal_probs(self.vocab.K, self.lam)[0]

    @property
    def p_minus(self) -> float:
        return signal_probs(self.vocab.K, self.lam)[1]

    @property
    def delta(self) -> float:
        return self.p_plus - self.p_minus

    def _class_key(self, p):
        if p in self._on_path:
            return self.z[len(p)]
        return 0

    def _build(self, key):
        K = self.vocab.K
        if key == 0:
            return _freeze(np.full(K, 1.0 / K))
        return _peaked_vector(K, key, self.p_plus, self.p_minus)


def twin_hidden_path_models(
    vocab: VocabSpec, lam: float, stem: Prefix, last_a: int, last_b: int
) -> tuple:
    """A pair of hidden-path models sharing the first H-1 tokens and
    differing in the final one."""
    if len(stem) != vocab.H - 1:
        raise ValueError(f"stem must have length {vocab.H - 1}")
    if last_a == last_b:
        raise ValueError("twin models must differ in the final token")
    return (
        HiddenPathModel(vocab, lam, stem + (last_a,)),
        HiddenPathModel(vocab, lam, stem + (last_b,)),
    )


@dataclass(frozen=True)
class LeaderTrie:
    """A depth-H branching structure in which every internal node has the
    common child 1 and one hidden child in 2..K.

    ``branch`` maps every internal node to its hidden child token. The
    constructor rejects any map whose induced node set is not prefix-closed,
    lacks the two-children structure, or has a leaf above depth H.
    """

    vocab: VocabSpec
    branch: Mapping[Prefix, int]

    def __post_init__(self):
        K, H = self.vocab.K, self.vocab.H
        if K < 3:
            raise ValueError(f"leader tries need K >= 3, got K={K}")
        branch = dict(self.branch)
        object.__setattr__(self, "branch", branch)
        reachable = set()
        frontier = [ROOT]
        while frontier:
            p = frontier.pop()
            if len(p) == H:
                continue
            if p not in branch:
                raise ValueError(f"node {p} at depth {len(p)} < {H} has no branch entry")
            b = branch[p]
            if not (2 <= b <= K):
                raise ValueError(f"hidden child {b} at {p} outside 2..{K}")
            reachable.add(p)
            frontier.append(p + (1,))
            frontier.append(p + (b,))
        extra = set(branch) - reachable
        if extra:
            raise ValueError(f"branch entries not reachable from the root: {sorted(extra)}")

    def internal_nodes(self) -> frozenset:
        return frozenset(self.branch)

    @property
    def num_internal(self) -> int:
        # every internal node has exactly two children, so this is 2^H - 1
        return len(self.branch)

    def hidden_child(self, p: Prefix) -> int:
        return self.branch[p]


def random_leader_trie(vocab: VocabSpec, rng: np.random.Generator) -> LeaderTrie:
    """Sample a leader trie by growing breadth-first to depth H with the
    hidden child drawn uniformly from 2..K at each internal node."""
    branch = {}
    frontier = [ROOT]
    while frontier:
        p = frontier.pop(0)
        if len(p) == vocab.H:
            continue
        b = int(rng.integers(2, vocab.K + 1))
        branch[p] = b
        frontier.append(p + (1,))
        frontier.append(p + (b,))
    return LeaderTrie(vocab, branch)


@dataclass(frozen=True)
class LeaderTrieModel(_CachedDistModel):
    """Generator attached to a leader trie.

    Token 1 is the unique most likely next token at every prefix; the
    informative signal is the elevated hidden child at internal nodes.
    """

    trie: LeaderTrie

    @property
    def vocab(self) -> VocabSpec:
        return self.trie.vocab

    @property
    def alpha(self) -> float:
        return 4.0 / (self.vocab.K + 4)

    @property
    def beta(self) -> float:
        return 2.0 / (self.vocab.K + 4)

    @property
    def gamma(self) -> float:
        return 1.0 / (self.vocab.K + 4)

    @property
    def gamma0(self) -> float:
        return 1.0 / (self.vocab.K + 3)

    @property
    def off_leader(self) -> float:
        return 4.0 / (self.vocab.K + 3)

    @property
    def prob_margin(self) -> float:
        """Half the probability gap between the hidden child and the off-trie
        baseline: (beta - gamma0) / 2."""
        return (self.beta - self.gamma0) / 2.0

    @property
    def log_margin(self) -> float:
        """The same margin in log space: (log beta - log gamma0) / 2."""
        return (math.log(self.beta) - math.log(self.gamma0)) / 2.0

    def _class_key(self, p):
        return self.trie.branch.get(p, 0)

    def _build(self, key):
        K = self.vocab.K
        if key == 0:
            return _peaked_vector(K, 1, self.off_leader, self.gamma0)
        vec = np.full(K, self.gamma)
        vec[0] = self.alpha
        vec[key - 1] = self.beta
        return _freeze(vec)


def leader_trie_params(K: int) -> dict:
    """Closed-form family constants for vocabulary size K (no trie needed)."""
    if K < 3:
        raise ValueError(f"leader tries need K >= 3, got K={K}")
    beta = 2.0 / (K + 4)
    gamma0 = 1.0 / (K + 3)
    return {
        "alpha": 4.0 / (K + 4),
        "beta": beta,
        "gamma": 1.0 / (K + 4),
        "gamma0": gamma0,
        "prob_margin": (beta - gamma0) / 2.0,
        "log_margin": (math.log(beta) - math.log(gamma0)) / 2.0,
    }


@dataclass(frozen=True)
class _BridgeHardModel(_CachedDistModel):
    """Fixed-prompt view of a bridge instance at the hard prompt."""

    inst: "BridgeInstance"

    @property
    def vocab(self) -> VocabSpec:
        return self.inst.vocab

    def _class_key(self, p):
        inst = self.inst
        if len(p) < inst.D + inst.L and p == inst.path[: len(p)]:
            return inst.path[len(p)]
        return 0

    def _build(self, key):
        K = self.vocab.K
        if key == 0:
            return _freeze(np.full(K, 1.0 / K))
        return _peaked_vector(K, key, self.inst.p_plus, self.inst.p_minus)


@dataclass(frozen=True)
class BridgeInstance:
    """A post-training instance with a known scaffold, hidden suffix, hidden
    reward bit, and a KL-regularized outcome reward.

    The hard-prompt generator follows the chain scaffold+suffix for its first
    D+L steps (favored token probability ``p_plus``) and is uniform at the
    final step. Every easy prompt uses the fixed uniform generator. The
    outcome reward pays ``R`` on the single target completion
    scaffold+suffix+tau_bit at the hard prompt and zero elsewhere.

    ``reward_scale=None`` selects the calibrated scale R = beta*log(4/q0)
    under which the optimal objective value is beta*log(5 - q0).
    """

    K: int
    D: int
    L: int
    scaffold: tuple
    suffix: tuple
    bit: int
    lam: float
    eta: float
    beta: float
    tau0: int = 1
    tau1: int = 2
    reward_scale: float | None = None

    def __post_init__(self):
        if self.D < 1 or self.L < 1:
            raise ValueError("scaffold and suffix lengths must be >= 1")
        vocab = VocabSpec(self.K, self.D + self.L + 1)
        if len(self.scaffold) != self.D:
            raise ValueError(f"scaffold length {len(self.scaffold)} != {self.D}")
        if len(self.suffix) != self.L:
            raise ValueError(f"suffix length {len(self.suffix)} != {self.L}")
        for tok in (*self.scaffold, *self.suffix, self.tau0, self.tau1):
            if not (1 <= tok <= self.K):
                raise ValueError(f"token {tok} outside 1..{self.K}")
        if self.tau0 == self.tau1:
            raise ValueError("terminal tokens must be distinct")
        if self.bit not in (0, 1):
            raise ValueError(f"reward bit must be 0 or 1, got {self.bit}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"hard-prompt mass must be in (0, 1], got {self.eta}")
        if self.beta <= 0:
            raise ValueError(f"KL coefficient must be positive, got {self.beta}")
        signal_probs(self.K, self.lam)
        object.__setattr__(self, "scaffold", tuple(self.scaffold))
        object.__setattr__(self, "suffix", tuple(self.suffix))
        object.__setattr__(self, "_vocab", vocab)

    @property
    def vocab(self) -> VocabSpec:
        return self._vocab

    @property
    def p_plus(self) -> float:
        return signal_probs(self.K, self.lam)[0]

    @property
    def p_minus(self) -> float:
        return signal_probs(self.K, self.lam)[1]

    @property
    def delta(self) -> float:
        return self.p_plus - self.p_minus

    @property
    def path(self) -> tuple:
        """The favored chain scaffold+suffix of length D+L."""
        return self.scaffold + self.suffix

    @property
    def target(self) -> Completion:
        """The rewarded completion scaffold+suffix+tau_bit."""
        tau = self.tau0 if self.bit == 0 else self.tau1
        return self.path + (tau,)

    @property
    def q0(self) -> float:
        """Base-generator mass of the target completion at the hard prompt."""
        return self.p_plus ** (self.D + self.L) / self.K

    @property
    def N(self) -> int:
        """Number of candidate target completions: 2 * K^L."""
        return 2 * self.K**self.L

    @property
    def R(self) -> float:
        if self.reward_scale is not None:
            return self.reward_scale
        return self.beta * math.log(4.0 / self.q0)

    def reward(self, prompt: str, y: Completion) -> float:
        """Outcome reward: R on the target completion at the hard prompt."""
        self.vocab.check_completion(y)
        if prompt == HARD and tuple(y) == self.target:
            return self.R
        return 0.0

    def hard_model(self) -> _BridgeHardModel:
        cached = self.__dict__.get("_hard_model")
        if cached is None:
            cached = _BridgeHardModel(self)
            object.__setattr__(self, "_hard_model", cached)
        return cached

    def easy_model(self) -> UniformModel:
        return UniformModel(self.vocab)

    def next_dist(self, prompt: str, p: Prefix) -> np.ndarray:
        """Prompt-conditioned next-token distribution."""
        model = self.hard_model() if prompt == HARD else self.easy_model()
        return model.next_dist(p)


def random_hidden_path_model(
    vocab: VocabSpec, lam: float, rng: np.random.Generator
) -> HiddenPathModel:
    z = tuple(int(t) for t in rng.integers(1, vocab.K + 1, size=vocab.H))
    return HiddenPathModel(vocab, lam, z)


def random_bridge_instance(
    K: int,
    D: int,
    L: int,
    lam: float,
    eta: float,
    beta: float,
    rng: np.random.Generator,
    reward_scale: float | None = None,
) -> BridgeInstance:
    scaffold = tuple(int(t) for t in rng.integers(1, K + 1, size=D))
    suffix = tuple(int(t) for t in rng.integers(1, K + 1, size=L))
    bit = int(rng.integers(0, 2))
    return BridgeInstance(
        K=K, D=D, L=L, scaffold=scaffold, suffix=suffix, bit=bit,
        lam=lam, eta=eta, beta=beta, reward_scale=reward_scale,
    )


def trajectory_logprob(model, y: Completion) -> float:
    """log Pr(Y = y): sum of per-step conditional log probabilities."""
    model.vocab.check_completion(y)
    total = 0.0
    for t in range(len(y)):
        p = model.next_probs(y[:t])[y[t] - 1]
        if p == 0.0:
            return -math.inf
        total += math.log(p)
    return total

def trajectory_prob(model, y: Completion) -> float:
    """Pr(Y = y): product of the conditional probabilities along y."""
    return math.exp(trajectory_logprob(model, y))


def sample_trajectory(model, rng: np.random.Generator) -> Completion:
    """Draw a root-to-leaf rollout; deterministic given the generator state."""
    y = ()
    for _ in range(model.vocab.H):
        y = y + (sample_from_cdf(model.next_cdf(y), rng),)
    return y


def sample_from_cdf(cdf, rng: np.random.Generator) -> Token:
    u = rng.random()
    for i, c in enumerate(cdf):
        if u < c:
            return i + 1
    return len(cdf)


def completion_distribution(model, cap: int = DEFAULT_ENUMERATION_CAP) -> dict:
    """Exact trajectory distribution as a completion -> probability map."""
    return {y: trajectory_prob(model, y) for y in model.vocab.completions(cap)}


# ---------------------------------------------------------------------------
# Line-oriented model serialization: header "K H family", then payload.


def _fmt_prefix(p: Prefix) -> str:
    return ".".join(str(t) for t in p)


def _parse_prefix(text: str) -> Prefix:
    if not text:
        return ROOT
    return tuple(int(t) for t in text.split("."))


def serialize_model(model) -> str:
    """Render a family model in the golden-file text format."""
    if isinstance(model, HiddenPathModel):
        lines = [
            f"{model.vocab.K} {model.vocab.H} hidden-path",
            f"lambda {model.lam!r}",
            "path " + " ".join(str(t) for t in model.z),
        ]
    elif isinstance(model, LeaderTrieModel):
        v = model.vocab
        lines = [f"{v.K} {v.H} leader-trie"]
        for p in sorted(model.trie.branch, key=lambda q: (len(q), q)):
            lines.append(f"{_fmt_prefix(p)}:{model.trie.branch[p]}")
    elif isinstance(model, BridgeInstance):
        scale = "paper" if model.reward_scale is None else repr(model.reward_scale)
        lines = [
            f"{model.K} {model.vocab.H} bridge",
            f"D {model.D}",
            f"L {model.L}",
            "scaffold " + " ".join(str(t) for t in model.scaffold),
            "suffix " + " ".join(str(t) for t in model.suffix),
            f"bit {model.bit}",
            f"tau {model.tau0} {model.tau1}",
            f"lambda {model.lam!r}",
            f"eta {model.eta!r}",
            f"beta {model.beta!r}",
            f"reward {scale}",
        ]
    elif isinstance(model, UniformModel):
        lines = [f"{model.vocab.K} {model.vocab.H} uniform"]
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return "\n".join(lines) + "\n"


def parse_model(text: str):
    """Inverse of serialize_model."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty model text")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"malformed header {lines[0]!r}")
    K, H, family = int(head[0]), int(head[1]), head[2]
    vocab = VocabSpec(K, H)
    body = lines[1:]
    if family == "uniform":
        return UniformModel(vocab)
    if family == "hidden-path":
        fields = dict(ln.split(None, 1) for ln in body)
        z = tuple(int(t) for t in fields["path"].split())
        return HiddenPathModel(vocab, float(fields["lambda"]), z)
    if family == "leader-trie":
        branch = {}
        for ln in body:
            loc, _, tok = ln.partition(":")
            branch[_parse_prefix(loc)] = int(tok)
        return LeaderTrieModel(LeaderTrie(vocab, branch))
    if family == "bridge":
        fields = dict(ln.split(None, 1) for ln in body)
        tau0, tau1 = (int(t) for t in fields["tau"].split())
        scale = fields["reward"]
        return BridgeInstance(
            K=K,
            D=int(fields["D"]),
            L=int(fields["L"]),
            scaffold=tuple(int(t) for t in fields["scaffold"].split()),
            suffix=tuple(int(t) for t in fields["suffix"].split()),
            bit=int(fields["bit"]),
            tau0=tau0,
            tau1=tau1,
            lam=float(fields["lambda"]),
            eta=float(fields["eta"]),
            beta=float(fields["beta"]),
            reward_scale=None if scale == "paper" else float(scale),
        )
    raise ValueError(f"unknown family {family!r}")
