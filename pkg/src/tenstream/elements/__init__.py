"""Built-in elements.  Importing this package registers every kind."""

from . import base
from . import routing
from . import flow
from . import transform
from . import filters
from . import io

from .base import (Context, PadTemplate, PropertySpec, RuntimeElement,
                   StatsView, get_kind, list_kinds, property_schema, register)

__all__ = [
    "base", "routing", "flow", "transform", "filters", "io",
    "Context", "PadTemplate", "PropertySpec", "RuntimeElement", "StatsView",
    "get_kind", "list_kinds", "property_schema", "register",
]
