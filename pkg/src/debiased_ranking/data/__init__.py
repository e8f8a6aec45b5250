"""
Debiased Ranking - Data Module.

Rating ingestion, leave-one-out splits, synthetic exposure-biased data and
the Coat download.
"""

from .ratings import IdMap, ImplicitDataset, RawRatings, binarize, load_ratings, reindex
from .splits import SplitDataset, leave_one_out_split, load_split, mix_mar, save_split

__all__ = [
    "IdMap",
    "ImplicitDataset",
    "RawRatings",
    "SplitDataset",
    "binarize",
    "leave_one_out_split",
    "load_ratings",
    "load_split",
    "mix_mar",
    "reindex",
    "save_split",
]
