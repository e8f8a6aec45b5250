"""
Debiased Ranking - Pipeline Commands.

One function per CLI command. Each takes the RankingToolkit instance plus the
command's own arguments and returns a result dictionary.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import RunConfig
from ..data.download import download_coat
from ..data.ratings import IdMap, ImplicitDataset, binarize, load_ratings, reindex
from ..data.splits import NO_ITEM, leave_one_out_split, load_split, mix_mar, save_split
from ..data.synthetic import make_synthetic, relevance_split
from ..evaluation import EvalConfig, EvalReport, Protocol, evaluate
from ..exposure import (
    ExposureVector,
    exposure_distribution,
    iterate_exposure,
    popularity,
    write_group_shares_csv,
    write_popularity_csv,
)
from ..loopsim import SimulationDiverged, compare_methods
from ..model import export_embeddings, load_params, save_params
from ..training import Trainer

logger = logging.getLogger(__name__)

DIVERGED_NAME = "diverged.csv"
REPORT_COLUMNS = ["loss", "alpha", "beta", "K", "protocol", "recall", "ndcg", "arp", "tap", "seed"]


def _report_row(cfg: RunConfig, eval_cfg: EvalConfig, report: EvalReport) -> Dict[str, Any]:
    return {
        "loss": cfg.loss,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "K": eval_cfg.k,
        "protocol": eval_cfg.protocol.value,
        "recall": report.recall,
        "ndcg": report.ndcg,
        "arp": report.arp,
        "tap": report.tap,
        "seed": cfg.seed,
    }


def _dataset_dir(cfg: RunConfig) -> Path:
    if not cfg.dataset_dir:
        raise ValueError("dataset_dir is not set; pass --dataset-dir or set it in the config")
    return Path(cfg.dataset_dir)


def ingest(
    toolkit,
    input_path: str,
    fmt: str = "tsv",
    threshold: float = 1.0,
    column_map: Tuple[int, int, int] = (0, 1, 2),
    skip_header: bool = False,
) -> Dict[str, Any]:
    """
    Parse a rating log, binarize it and write a leave-one-out split.

    Args:
        toolkit: The RankingToolkit instance
        input_path: Rating file to read
        fmt: tsv, csv or ascii_matrix
        threshold: Ratings at or above this value are positives
        column_map: (user, item, value) column indices
        skip_header: Drop the first line of delimited files

    Returns:
        Dictionary describing the written dataset directory
    """
    cfg = toolkit.config
    out = _dataset_dir(cfg)
    raw = load_ratings(input_path, fmt=fmt, column_map=column_map, skip_header=skip_header)
    dense, id_map = reindex(raw)
    dataset = binarize(dense, threshold, len(id_map.user_ids), len(id_map.item_ids))
    split = leave_one_out_split(dataset, cfg.seed)
    save_split(split, out)
    id_map.save(out)
    toolkit.snapshot(
        out,
        "ingest",
        input=input_path,
        format=fmt,
        threshold=threshold,
        columns=column_map,
        skip_header=skip_header,
    )
    return {
        "status": "success",
        "dataset_dir": str(out),
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "positives": dataset.num_positives,
        "malformed_lines": raw.malformed,
        "skipped_users": split.skipped_users,
    }


def make_synthetic_dataset(
    toolkit,
    num_users: int = 200,
    num_items: int = 500,
    zipf_exponent: float = 1.0,
    density: float = 0.05,
) -> Dict[str, Any]:
    """Write an exposure-biased synthetic split whose held-out items are true-relevance tops."""
    cfg = toolkit.config
    out = _dataset_dir(cfg)
    data = make_synthetic(
        num_users=num_users,
        num_items=num_items,
        zipf_exponent=zipf_exponent,
        density=density,
        seed=cfg.seed,
    )
    save_split(relevance_split(data, seed=cfg.seed), out)
    pd.DataFrame({"item_id": np.arange(num_items), "exposure": data.exposure.probs}).to_csv(
        out / "exposure.csv", index=False
    )
    toolkit.snapshot(
        out,
        "make-synthetic",
        num_users=num_users,
        num_items=num_items,
        zipf_exponent=zipf_exponent,
        density=density,
    )
    return {
        "status": "success",
        "dataset_dir": str(out),
        "positives": data.observed.num_positives,
    }


def fetch_coat(toolkit, dest: str, url: Optional[str] = None, force: bool = False):
    directory = download_coat(dest, url=url, timeout=toolkit.download_timeout, force=force)
    toolkit.snapshot(directory, "fetch-coat", dest=dest, url=url, force=force)
    return {"status": "success", "directory": str(directory)}


def train(toolkit) -> Dict[str, Any]:
    """Train on the configured split, keep the best-validation checkpoint and report on test."""
    cfg = toolkit.config
    split = load_split(_dataset_dir(cfg))
    eval_cfg = cfg.eval_config()
    with toolkit.run("train") as run_dir:
        trainer = Trainer(
            split.train,
            cfg.hyperparams(),
            sampler_cfg=cfg.sampler_config(),
            split=split,
            eval_cfg=cfg.validation_config(),
        )
        result = trainer.fit()
        save_params(result.params, run_dir / "checkpoint.npz")
        result.to_frame().to_csv(run_dir / "metrics.csv", index=False)

        report = evaluate(result.params, split, eval_cfg, trainer.pop, which="test")
        row = _report_row(cfg, eval_cfg, report)
        pd.DataFrame([row], columns=REPORT_COLUMNS).to_csv(run_dir / "report.csv", index=False)

    return {
        "status": "success",
        "run_dir": str(run_dir),
        "best_epoch": result.best_epoch,
        "stopped_early": result.stopped_early,
        "report": row,
    }


def evaluate_checkpoint(toolkit, checkpoint: str) -> Dict[str, Any]:
    """Evaluate a saved checkpoint on the configured split's test items."""
    cfg = toolkit.config
    split = load_split(_dataset_dir(cfg))
    params = load_params(checkpoint)
    eval_cfg = cfg.eval_config()
    with toolkit.run("evaluate", checkpoint=checkpoint) as run_dir:
        report = evaluate(params, split, eval_cfg, popularity(split.train), which="test")
        row = _report_row(cfg, eval_cfg, report)
        pd.DataFrame([row], columns=REPORT_COLUMNS).to_csv(run_dir / "report.csv", index=False)
    return {"status": "success", "run_dir": str(run_dir), "report": row}


def simulate(toolkit, losses: Sequence[str], seeds: Sequence[int]) -> Dict[str, Any]:
    """Run the feedback-loop simulation for each loss over each seed."""
    cfg = toolkit.config
    if not losses:
        raise ValueError("simulate needs at least one loss")
    sim_cfgs = [replace(cfg, loss=loss).sim_config() for loss in losses]
    with toolkit.run("simulate", losses=losses, seeds=seeds) as run_dir:
        try:
            runs = compare_methods(sim_cfgs, seeds, out_dir=run_dir)
        except SimulationDiverged as e:
            e.state.to_frame().to_csv(run_dir / DIVERGED_NAME, index=False)
            logger.error(f"{e}; loops completed so far are in {run_dir / DIVERGED_NAME}")
            raise
        runs.to_csv(run_dir / "runs.csv", index=False)
    last = runs[runs["loop"] == runs["loop"].max()] if len(runs) else runs
    summary = last.groupby("method")[["cumulative", "tap", "arp"]].mean().to_dict("index")
    return {"status": "success", "run_dir": str(run_dir), "final_loop": summary}


def analyze_exposure(toolkit, num_groups: int = 10, steps: int = 0) -> Dict[str, Any]:
    """
    Popularity table and per-group interaction shares of the training data.

    With steps > 0 the exposure update is iterated from a uniform start, using
    the binary training matrix as relevance.
    """
    cfg = toolkit.config
    split = load_split(_dataset_dir(cfg))
    with toolkit.run("analyze-exposure", groups=num_groups, steps=steps) as run_dir:
        pop = popularity(split.train)
        write_popularity_csv(pop, run_dir / "popularity.csv")
        shares = exposure_distribution(split.train, num_groups)
        write_group_shares_csv(shares, run_dir / "group_shares.csv")

        if steps > 0:
            relevance = split.train.matrix.toarray()
            trajectory = iterate_exposure(
                relevance, ExposureVector.uniform(split.num_items), steps
            )
            head = ~pop.tail_flag
            pd.DataFrame(
                {
                    "step": np.arange(len(trajectory)),
                    "head_share": [o.probs[head].sum() for o in trajectory],
                    "tail_share": [o.probs[pop.tail_flag].sum() for o in trajectory],
                    "max_prob": [o.probs.max() for o in trajectory],
                }
            ).to_csv(run_dir / "exposure_trajectory.csv", index=False)

    return {
        "status": "success",
        "run_dir": str(run_dir),
        "group_shares": [float(s) for s in shares],
    }


def mix(
    toolkit,
    mar_path: str,
    output_dir: str,
    pct: float,
    fmt: str = "ascii_matrix",
    threshold: float = 1.0,
) -> Dict[str, Any]:
    """
    Mix a share of missing-at-random positives into the configured split's train set.

    MAR ids are mapped through the dataset's id map when one exists. Pairs that
    coincide with a held-out validation or test item are never added.
    """
    cfg = toolkit.config
    source = _dataset_dir(cfg)
    split = load_split(source)
    raw = load_ratings(mar_path, fmt=fmt)
    if (source / "user_ids.csv").is_file():
        raw = IdMap.load(source).encode(raw)
    mar = binarize(raw, threshold, split.num_users, split.num_items)

    users, items = mar.pairs()
    held = np.zeros(len(users), dtype=bool)
    for column in (split.validation, split.test):
        held |= (column[users] != NO_ITEM) & (column[users] == items)
    mar = ImplicitDataset.from_pairs(users[~held], items[~held], mar.num_users, mar.num_items)

    mixed = mix_mar(split.train, mar, pct, cfg.seed)
    save_split(replace(split, train=mixed), output_dir)
    if (source / "user_ids.csv").is_file():
        IdMap.load(source).save(output_dir)
    toolkit.snapshot(
        Path(output_dir),
        "mix",
        mar=mar_path,
        mar_format=fmt,
        threshold=threshold,
        pct=pct,
        output=output_dir,
    )
    return {
        "status": "success",
        "dataset_dir": str(output_dir),
        "train_positives": mixed.num_positives,
        "added": mixed.num_positives - split.train.num_positives,
    }


def _parse_grid(text: Optional[str]) -> List[float]:
    if text is None:
        return []
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError(f"empty grid {text!r}")
    return [float(v) for v in values]


def _sweep_point(
    values: Dict[str, str], alpha: float, beta: float, run_dir: str
) -> Dict[str, Any]:
    """One grid point: train, then evaluate test with the sampled protocol."""
    cfg = RunConfig.from_mapping(values).with_overrides({"alpha": alpha, "beta": beta})
    split = load_split(_dataset_dir(cfg))
    eval_cfg = replace(cfg.eval_config(), protocol=Protocol.SAMPLED99)
    trainer = Trainer(
        split.train,
        cfg.hyperparams(),
        cfg.sampler_config(),
        split=split,
        eval_cfg=cfg.validation_config(),
    )
    result = trainer.fit()
    report = evaluate(result.params, split, eval_cfg, trainer.pop, which="test")

    point_dir = Path(run_dir)
    cfg.write_snapshot(point_dir)
    result.to_frame().to_csv(point_dir / "metrics.csv", index=False)
    row = _report_row(cfg, eval_cfg, report)
    row["best_epoch"] = result.best_epoch
    return row


def sweep(
    toolkit,
    alpha_grid: Optional[str] = None,
    beta_grid: Optional[str] = None,
    workers: int = 1,
) -> Dict[str, Any]:
    """
    Train and evaluate once per grid point (alpha x beta when both are given).

    Grid points run in a process pool when workers > 1; each point writes into
    its own subdirectory of the run directory.
    """
    cfg = toolkit.config
    alphas = _parse_grid(alpha_grid) or [cfg.alpha]
    betas = _parse_grid(beta_grid) or [cfg.beta]
    if alpha_grid is None and beta_grid is None:
        raise ValueError("sweep needs --alpha-grid and/or --beta-grid")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    _dataset_dir(cfg)

    with toolkit.run(
        "sweep", alpha_grid=alpha_grid, beta_grid=beta_grid, workers=workers
    ) as run_dir:
        values = cfg.to_strings()
        points = list(product(alphas, betas))
        dirs = [str(run_dir / f"alpha={a:g}_beta={b:g}") for a, b in points]
        if workers == 1:
            rows = [_sweep_point(values, a, b, d) for (a, b), d in zip(points, dirs)]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_sweep_point, values, a, b, d) for (a, b), d in zip(points, dirs)
                ]
                rows = [f.result() for f in futures]
        frame = pd.DataFrame(rows, columns=REPORT_COLUMNS + ["best_epoch"])
        frame.to_csv(run_dir / "sweep.csv", index=False)

    return {"status": "success", "run_dir": str(run_dir), "points": len(rows)}


def export(toolkit, checkpoint: str, output_dir: Optional[str] = None) -> Dict[str, Any]:
    """Dump embeddings to CSV; item rows carry popularity when a dataset is configured."""
    cfg = toolkit.config
    params = load_params(checkpoint)
    pop = popularity(load_split(cfg.dataset_dir).train) if cfg.dataset_dir else None
    if pop is not None and pop.num_items != params.num_items:
        raise ValueError("checkpoint and dataset disagree on the number of items")
    with toolkit.run(
        "export-embeddings", checkpoint=checkpoint, output=output_dir
    ) as run_dir:
        user_path, item_path = export_embeddings(params, output_dir or run_dir, pop)
    return {
        "status": "success",
        "user_embeddings": str(user_path),
        "item_embeddings": str(item_path),
    }
