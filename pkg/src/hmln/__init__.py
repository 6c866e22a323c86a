"""Hybrid Markov logic engine for caption provenance.

Grounds conjunctive/XOR template pairs over caption predicates, learns
their shared weights by contrastive divergence, scores captions by MAP
inference over a MILP encoding, and traces generated captions back to
contrastive training examples with clipped importance sampling.
"""

from .errors import GuardError, HmlnError, ValidationError
from .model import (
    DEFAULT_EPSILON,
    FeaturePair,
    GroundPredicate,
    HmlnModel,
    World,
    f_c,
    f_r,
    feature_value,
    ground_templates,
    make_pair,
    model_from_instances,
    sigmoid,
    unnormalized_log_prob,
    with_real_terms,
)
from .exact import ENUMERATION_GUARD, enumerate_exact, expected_feature_values, sample_exact
from .sampler import ChainState, GibbsChain, SamplerConfig, conditional, run_chain
from .learning import (
    DivergenceError,
    LearningConfig,
    TrainingInstance,
    cd_step,
    empirical_expectation,
    exact_cll,
    exact_cll_gradient,
    fit,
)
from .mapinfer import (
    MAP_GUARD,
    SCORE_FLOOR,
    MapProblem,
    MapSolution,
    SoftEvidence,
    build_soft_evidence,
    encode,
    map_score,
    objective_at,
    solve,
    write_lp,
)
from .backtrace import (
    BacktraceConfig,
    ContrastiveResult,
    TraceExample,
    WeightedSample,
    clip_weight,
    contextually_relevant,
    estimate_densities,
    hellinger_bernoulli,
    importance_weight,
    indicator,
    similarity_report_x,
)
from .similarity import SimilarityTable
from .io import (
    DatasetRecord,
    augment_model,
    build_model,
    canonical_atom_id,
    load_dataset,
    load_model,
    load_similarity,
    save_dataset,
    save_model,
    save_similarity,
    trace_examples,
    training_instances,
)

__version__ = "0.1.0"
