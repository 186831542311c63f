"""Python surface of the self-taught sequence recognizer laboratory."""

from ._core import (
    AdaptConfig,
    ConfigError,
    Corpus,
    DecodeTrace,
    DomainSpec,
    IndicatorConfig,
    InputError,
    IoError,
    Model,
    ModelConfig,
    ParseError,
    TokenScores,
    Utterance,
    Vocab,
    corpus_ter,
    edit_distance,
    greedy_decode,
    init_model,
    load_corpus,
    load_model,
    make_codebook,
    run_star,
    save_corpus,
    save_model,
    score_trace,
    star_combine,
    synth_corpus,
    ter,
)

__all__ = [
    "AdaptConfig",
    "ConfigError",
    "Corpus",
    "DecodeTrace",
    "DomainSpec",
    "IndicatorConfig",
    "InputError",
    "IoError",
    "Model",
    "ModelConfig",
    "ParseError",
    "TokenScores",
    "Utterance",
    "Vocab",
    "corpus_ter",
    "edit_distance",
    "greedy_decode",
    "init_model",
    "load_corpus",
    "load_model",
    "make_codebook",
    "run_star",
    "save_corpus",
    "save_model",
    "score_trace",
    "star_combine",
    "synth_corpus",
    "ter",
]
