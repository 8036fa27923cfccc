"""Two-force combat dynamics: a continuum PDE engine and a stochastic
agent engine on the same 2-d arena, with shared scenarios, metrics and a
service/CLI front end."""

__version__ = "0.1.0"
