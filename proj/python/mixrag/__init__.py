"""Mixture of retrieval experts over textual graphs."""

from ._mixrag import (
    ContractError,
    DataError,
    HashEmbedder,
    MixragError,
    Model,
    ParameterError,
    SyntheticCorpus,
    TextualGraph,
    compute_accuracy,
    compute_hit_at_1,
    convert_tsv,
    evaluate,
    generate_synthetic,
    gumbel_from_uniform,
    load_graph,
    normalize_answer,
    save_graph,
    solve_pcst,
    train,
)

__all__ = [
    "ContractError",
    "DataError",
    "HashEmbedder",
    "MixragError",
    "Model",
    "ParameterError",
    "SyntheticCorpus",
    "TextualGraph",
    "compute_accuracy",
    "compute_hit_at_1",
    "convert_tsv",
    "evaluate",
    "generate_synthetic",
    "gumbel_from_uniform",
    "load_graph",
    "normalize_answer",
    "save_graph",
    "solve_pcst",
    "train",
]
