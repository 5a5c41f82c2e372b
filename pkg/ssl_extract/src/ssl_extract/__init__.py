"""Dump frame-level speech-model embeddings into CDFX feature files."""

from .cdfx import write_ssl_features
from .extract import DumpConfig, dump_embeddings, load_model

__version__ = "0.1.0"
