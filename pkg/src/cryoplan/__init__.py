"""Cryoablation planning sandbox.

Synthetic prostate phantoms, a probe-placement environment with
intraoperative noise, learned and classical planners, and a Dice benchmark
harness with an HTTP service for manual planning.
"""

__version__ = "0.1.0"
