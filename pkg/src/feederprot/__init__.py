"""Radial distribution feeder protection coordination toolkit.

Subpackages cover the pipeline end to end: network model, pre-fault load
flow, fault studies with distributed-generation sources, time-current
curve math, pair coordination checks, and the alternating
settings/dispatch optimizer.
"""

__version__ = "0.1.0"
