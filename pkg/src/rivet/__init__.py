"""Rivet sharded-chain protocol, a 2PC baseline, and the simulator and
benchmark tooling around them."""

__version__ = "0.1.0"
