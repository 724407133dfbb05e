"""Graph-based cooperative planning for unsignalised intersections."""

__version__ = "0.1.0"
