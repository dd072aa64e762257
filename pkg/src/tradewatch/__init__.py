"""Market-surveillance toolkit: trading-feature clustering and co-occurrence network pipelines."""

__version__ = "0.1.0"
