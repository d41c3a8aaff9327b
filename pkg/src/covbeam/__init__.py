"""Coverage-preserving beam inference over chains.

Approximate inference for chain-structured models that prunes like a beam but
never abandons any assignment: the contexts retained at each position always
partition the full space, so every sequence keeps positive probability and
the normalizer stays meaningful. Ships with smoothed n-gram language models,
classic-beam and exact baselines, and an EM substitution-cipher decipherment
application behind a CLI.
"""

from .baselines import (
    BeamResult,
    ExactResult,
    HybridResult,
    OracleResult,
    beam_search,
    brute_force_oracle,
    exact_forward_backward,
    hybrid_union,
)
from .contexts import (
    WILDCARD,
    Context,
    LabelAlphabet,
    Level,
    LevelViolation,
    compare_contexts,
    lcs_pair,
    locate_owner,
    range_lcs,
    validate_level,
)
from .decipher import (
    CipherInstance,
    EMRun,
    generate_cipher,
    mapping_accuracy,
    run_em,
)
from .engine import (
    Expansion,
    ScoredLevel,
    Trellis,
    backward_pass,
    decode,
    dump_trellis,
    edge_posteriors,
    expand_level,
    forward_pass,
    induced_log_mass,
    induced_log_mass_batch,
    label_marginals,
    level_log_mass,
    log_partition,
    merge_level,
    path_owners,
    select_active,
    start_level,
)
from .errors import InferenceError, UsageError
from .models import (
    ChainModel,
    ChannelModel,
    CipherChainModel,
    LanguageChainModel,
    NgramLM,
    TabularChainModel,
    channel_prob,
    cipher_log_weight,
    fit_ngram,
    lm_prob,
    load_corpus,
    normalize_text,
)

__version__ = "0.1.0"
