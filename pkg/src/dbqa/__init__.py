"""Modular database-Q&A testbed and evaluation harness.

Subpackages cover the whole online workflow (question routing, prompt
templating, retrieval augmentation, tool invocation, answer generation), the
standardized evaluation pipeline with its metrics, and the dataset
construction pipelines. All LLM access goes through :mod:`dbqa.gateway`, so
every mechanism runs offline against scripted backends.
"""

__version__ = "0.1.0"
