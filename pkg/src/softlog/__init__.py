"""Weak-unification Datalog prover over natural-language triples.

Backward chaining where symbol equality is a learned similarity in
[0, 1], proof scores are t-norm aggregations of unification scores, and
all embeddings train end-to-end from entailment supervision.
"""

from .autodiff import OptimizerState, Tape, adam_step, aggregate, tnorm
from .embeddings import (
    EncoderCache,
    InitConfig,
    MlpParams,
    ParameterSet,
    VectorTable,
    encode_symbol,
    init_parameters,
    load_parameters,
    load_pretrained,
    save_parameters,
    similarity,
    write_vector_file,
)
from .logic import (
    Atom,
    Constant,
    KnowledgeBase,
    Kind,
    ParseError,
    Rule,
    Symbol,
    Variable,
    apply_substitution,
    parse_program,
    parse_query,
    parse_triple_file,
    standardize_apart,
)
from .prover import (
    Proof,
    ProveResult,
    ProverConfig,
    UnificationStep,
    explain,
    prove,
    rescore_proof,
    to_dot,
    weak_unify,
)
from .templates import RuleTemplate, default_templates, instantiate, parse_template_file
from .training import (
    EvalResult,
    TrainConfig,
    TrainingExample,
    evaluate,
    ignition_fraction,
    load_dataset,
    score_candidate,
    train,
    train_with_restarts,
)

__version__ = "0.1.0"
