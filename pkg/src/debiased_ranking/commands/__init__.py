"""
Debiased Ranking - Commands Module.

One function per CLI command, each taking the RankingToolkit instance.
"""

from . import pipeline

__all__ = ["pipeline"]
