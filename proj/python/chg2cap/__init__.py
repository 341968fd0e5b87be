"""Bitemporal change captioning: encoder, decoder, metrics and training."""

from ._chg2cap import (
    Checkpoint,
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    Record,
    Vocabulary,
    bleu,
    build_vocab,
    cider_d,
    default_config,
    evaluate_corpus,
    gen_synthetic,
    gradcheck,
    load_manifest,
    lr_at_epoch,
    meteor_x,
    rouge_l,
    tokenize,
    train,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
