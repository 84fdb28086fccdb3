"""Reproducible, guarded scoring harness for machine-translation metrics.

The package is organised as a small library plus one CLI entry point
(``mtharness``): aligned evaluation sets and score tables (`evalset`),
pre-aggregation guardrails (`guards`), pluggable segment scorers
(`scorer`), multi-reference strategies (`multiref`), meta-evaluation
statistics (`metastats`), provenance signatures and citations
(`provenance`), and a toy training-bias laboratory (`biaslab`).
"""

__version__ = "0.1.0"
