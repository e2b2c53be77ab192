"""Python access to the vimed pipeline toolkit."""

from ._vimed import (
    DataError,
    IoError,
    ParseError,
    UsageError,
    VimedError,
    accuracy,
    apply_abbrev_rules,
    corpus_bleu,
    corrupt,
    count_tokens,
    derive_seed,
    filter_by_length,
    macro_f1,
    masked_token_count,
    parse_medline_file,
    parse_medline_string,
    reconstruct,
    rouge_l,
    run_cli,
    tokenize,
)

__all__ = [
    "DataError",
    "IoError",
    "ParseError",
    "UsageError",
    "VimedError",
    "accuracy",
    "apply_abbrev_rules",
    "corpus_bleu",
    "corrupt",
    "count_tokens",
    "derive_seed",
    "filter_by_length",
    "macro_f1",
    "masked_token_count",
    "parse_medline_file",
    "parse_medline_string",
    "reconstruct",
    "rouge_l",
    "run_cli",
    "tokenize",
]
