"""tenstream: multidimensional tensor streams over typed dataflow pipelines.

Pipelines are graphs of elements linked pad to pad.  Every pad carries a
negotiated stream spec (tensor dims/dtype/rate or a raw media format), and
buffers flow as immutable multi-part payloads so forks and recombinations
never copy frame bodies.  Graphs come from the Python API or from a
one-line textual description; the runtime executes them with a thread per
source and per queue.
"""

from . import elements  # registers all built-in kinds
from .elements.base import get_kind, list_kinds, property_schema, register
from .elements.filters import (ToyModel, ToyPlugin, get_plugin,
                               list_frameworks, load_model,
                               register_custom_filter, register_plugin,
                               unregister_custom_filter, unregister_plugin,
                               write_argmax, write_dense, write_softmax)
from .elements.flow import mux_match
from .errors import (InvalidPipeline, ParseError, PipelineFailure,
                     StateChangeFailed, StreamError)
from .graph import Diagnostic, Link, PipelineGraph, ValidationResult
from .parse import ParsedPipeline, parse, parse_description, unparse
from .runtime import Pipeline, PipelineState
from .tensors import (Buffer, DataType, Payload, RawKind, RawSpec, Spec,
                      TensorSpec, TensorsSpec, copy_meter, from_array,
                      intersect_specs, make_buffer, parse_any_spec,
                      spec_to_string, specs_compatible, to_array, to_arrays)

__version__ = "0.1.0"

__all__ = [
    "Buffer", "DataType", "Diagnostic", "InvalidPipeline", "Link",
    "ParseError", "ParsedPipeline", "Payload", "Pipeline", "PipelineFailure",
    "PipelineGraph", "PipelineState", "RawKind", "RawSpec", "Spec",
    "StateChangeFailed", "StreamError", "TensorSpec", "TensorsSpec",
    "ToyModel", "ToyPlugin", "ValidationResult", "copy_meter", "elements",
    "from_array", "get_kind", "get_plugin", "intersect_specs", "list_frameworks",
    "list_kinds", "load_model", "make_buffer", "mux_match", "parse",
    "parse_any_spec",
    "parse_description", "property_schema", "register",
    "register_custom_filter", "register_plugin", "spec_to_string",
    "specs_compatible", "to_array", "to_arrays", "unparse",
    "unregister_custom_filter", "unregister_plugin", "write_argmax",
    "write_dense", "write_softmax",
]
