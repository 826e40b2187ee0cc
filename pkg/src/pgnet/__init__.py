"""Pointer graph network workbench.

Instrumented dynamic-connectivity structures (disjoint-set union,
link/cut trees) that emit step-level supervision traces, a small
tape-based autodiff substrate, the pointer graph network model with its
baselines and ablations, and the training/evaluation harness around
them.
"""

__version__ = "0.1.0"
