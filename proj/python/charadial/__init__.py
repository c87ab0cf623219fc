from ._core import (
    ConfigError,
    DataError,
    __version__,
    attribute,
    bleu,
    dac_sac,
    distinct,
    generate_corpus,
    run_cli,
    tokenize,
)

__all__ = [
    "ConfigError",
    "DataError",
    "attribute",
    "bleu",
    "dac_sac",
    "distinct",
    "generate_corpus",
    "run_cli",
    "tokenize",
]
