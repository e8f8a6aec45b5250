"""
Entry point for running the toolkit as a module.

Usage:
    python -m debiased_ranking train --dataset-dir data/coat
    python -m debiased_ranking simulate --losses bpr,dpr --seeds 0,1,2
    python -m debiased_ranking --help
"""

import sys

from .cli import main

if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\nInterrupted by user")
        sys.exit(130)
