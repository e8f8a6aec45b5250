"""
Debiased Ranking - Exposure-aware pairwise ranking for implicit feedback.

This package trains matrix-factorization recommenders with the DPR loss (BPR
with exposure-weighted scores and an optional UFN weight on negatives),
evaluates them for accuracy and popularity bias, and simulates recommendation
feedback loops.

The package is organized into the following modules:
- data: rating ingestion, leave-one-out splits, synthetic data and downloads
- exposure: popularity, exposure weights, propensities and the exposure update
- model / losses / sampler / training: the MF backbone and its objectives
- evaluation: Recall, NDCG, ARP and TAP under two protocols
- loopsim: the closed feedback-loop simulator
- cli / commands: the command-line surface
"""

from .cli import RankingToolkit, main
from .config import RunConfig
from .model import Hyperparams, LossKind

__version__ = "1.0.0"
__author__ = "Debiased Ranking Team"
__email__ = "support@example.com"

__all__ = ["RankingToolkit", "RunConfig", "Hyperparams", "LossKind", "main"]
