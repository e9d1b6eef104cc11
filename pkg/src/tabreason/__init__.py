"""Replay-testable harness for table QA robustness experiments.

Structural table perturbations, two-stage structure normalization, textual
(DP) and symbolic (PyAgent) reasoning drivers over a record/replay LLM
gateway, multi-path answer aggregation, and exact-match evaluation.
"""

__version__ = "0.1.0"
