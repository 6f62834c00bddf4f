"""Reference adapter side of the external-evaluator protocol."""

from .mock import CAPABILITIES, MockAdapter, mock_average_macs
from .pipeline import CapabilityError, apply_genome_to_pipeline
from .plan import (
    FULL,
    NULL,
    PARTIAL,
    GenomeFormatError,
    expand_actions,
    genome_nfe,
    parse_genome,
    spans,
)
from .protocol import PROTOCOL_VERSION, serve

__version__ = "0.1.0"

__all__ = [
    "CAPABILITIES",
    "CapabilityError",
    "FULL",
    "GenomeFormatError",
    "MockAdapter",
    "NULL",
    "PARTIAL",
    "PROTOCOL_VERSION",
    "apply_genome_to_pipeline",
    "expand_actions",
    "genome_nfe",
    "mock_average_macs",
    "parse_genome",
    "serve",
    "spans",
]
