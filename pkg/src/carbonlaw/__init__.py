"""Carbon-aware scaling analysis for mixture-of-experts LLM training.

Chains a compute-optimal scaling pipeline, a GPU catalog with technology
projection, an analytical 4D-parallel performance model, an exhaustive
parallelism search and an operational + embodied carbon model.
"""

__version__ = "0.1.0"
