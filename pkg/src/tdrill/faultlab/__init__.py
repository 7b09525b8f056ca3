"""Synthetic timeout-bug scenarios with known ground truth.

``generator`` writes scenario bundles; ``workload`` is the tiny interpreter
the validator launches to replay them.
"""
