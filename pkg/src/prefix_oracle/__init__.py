"""Simulation laboratory for oracle access to autoregressive prefix-tree
generators: witness model families, access interfaces with query accounting,
recovery procedures, exact analysis quantities, and a reproducible
experiment harness."""

from .core import (
    EASY,
    HARD,
    ROOT,
    BridgeInstance,
    CallableModel,
    Completion,
    EnumerationCapError,
    HiddenPathModel,
    InvalidCompletionError,
    InvalidPrefixError,
    LeaderTrie,
    LeaderTrieModel,
    Prefix,
    Token,
    UniformModel,
    VocabSpec,
    completion_distribution,
    leader_trie_params,
    parse_model,
    random_bridge_instance,
    random_hidden_path_model,
    random_leader_trie,
    sample_trajectory,
    serialize_model,
    signal_probs,
    trajectory_logprob,
    trajectory_prob,
    twin_hidden_path_models,
)
from .oracles import (
    DisciplineAudit,
    DisciplineViolationError,
    NoisePolicy,
    OracleSession,
    PathFullReply,
    QueryLedger,
    audit_discipline,
    ledger_to_csv,
    write_ledger_csv,
)
from .algorithms import (
    BridgeOutput,
    RecoveryResult,
    bridge_posttrain,
    constant_suffix_rule,
    distinguish_no_reset_baseline,
    exact_reward_oracle,
    majority_budget,
    recover_hidden_path,
    recover_hidden_path_seqscore,
    recover_leader_trie_logit,
    recover_leader_trie_sample,
    trie_sample_budget,
)
from .analysis import (
    AgreementError,
    GibbsPolicy,
    PromptPolicy,
    RegretGapReport,
    TranscriptLaw,
    binary_kl,
    evaluate_objective,
    gibbs_policy,
    hard_prompt_objective,
    kl_divergence,
    lower_bound_certificate,
    models_agree_outside,
    pathfull_law,
    reachability,
    reachability_by_enumeration,
    reachability_equal_outside_agreement,
    regret_gap_check,
    tv_distance,
)

__version__ = "0.1.0"
