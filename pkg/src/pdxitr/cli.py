"""Configuration-driven pipeline runner and CLI.

Subcommands: simulate, screen, tree, fit, evaluate, superlearn, report, and
run (the full pipeline).  A YAML/JSON config names the inputs, the method
cells, the tuning grids, and the output directory; every cell is
deterministic given the config and seed.  Exit codes: 0 success,
1 validation error, 2 runtime error.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import itertools
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
import yaml

from . import io as pio
from .autoencoder import TrainConfig, encode, train_autoencoder
from .core import DatasetError, FeatureMatrix, PdxDataset, validate_dataset
from .evaluation import MethodSpec, TuningGrid, ValueError_, cross_validate, tune
from .itr import FitError
from .learners import LearnerError, smooth_outcomes
from .screening import (
    ScreeningCriteria,
    ScreeningError,
    filter_features,
    filter_treatments,
    rank_genes,
    select_top,
)
from .superlearner import SAConfig, SuperLearnerError, fit_superlearner
from .tree import TreeError, build_tree, cut_tree, standardize_and_center
from .evaluation import _fit_rule  # shared cell fitting

VALIDATION_ERRORS = (DatasetError, ScreeningError, ValueError_, KeyError, FileNotFoundError)
RUNTIME_ERRORS = (TreeError, FitError, LearnerError, SuperLearnerError)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


@dataclass
class PipelineConfig:
    features: str
    responses: str
    out: str
    response_kind: str = "neg_bar"
    untreated_label: str = "untreated"
    l_sup_grid: tuple[int, ...] = (10,)
    methods: tuple[dict, ...] = ({"method": "ql1", "learner": "lasso"},)
    grid: TuningGrid = field(default_factory=TuningGrid)
    folds: int = 5
    inner_folds: int = 3
    seed: int = 0
    screening: ScreeningCriteria = field(default_factory=ScreeningCriteria)
    ranking_mode: str = "combined"
    dae: dict = field(default_factory=dict)
    superlearner: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, out_override=None, seed_override=None) -> "PipelineConfig":
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise DatasetError(f"{path}: config must be a mapping")
        grid_raw = raw.get("grid", {})
        screening_raw = raw.get("screening", {})
        cfg = cls(
            features=raw["features"],
            responses=raw["responses"],
            out=out_override or raw.get("out", "pdxitr_out"),
            response_kind=raw.get("response_kind", "neg_bar"),
            untreated_label=raw.get("untreated_label", "untreated"),
            l_sup_grid=tuple(raw.get("l_sup_grid", [10])),
            methods=tuple(raw.get("methods", [{"method": "ql1", "learner": "lasso"}])),
            grid=TuningGrid(
                c1=tuple(grid_raw.get("c1", [0])),
                c2=tuple(grid_raw.get("c2", [1, 2])),
                lam=tuple(grid_raw.get("lam", [0.01, 0.1])),
            ),
            folds=int(raw.get("folds", 5)),
            inner_folds=int(raw.get("inner_folds", 3)),
            seed=int(seed_override if seed_override is not None else raw.get("seed", 0)),
            screening=ScreeningCriteria(
                min_variance_quantile=screening_raw.get("min_variance_quantile", 0.2),
                min_mean_expression=screening_raw.get("min_mean_expression", 0.0),
                treatment_coverage=screening_raw.get("treatment_coverage", 0.9),
            ),
            ranking_mode=raw.get("ranking_mode", "combined"),
            dae=raw.get("dae", {}),
            superlearner=raw.get("superlearner", {}),
        )
        return cfg

    def fingerprint(self) -> str:
        blob = json.dumps(
            {
                k: (list(v) if isinstance(v, tuple) else str(v))
                for k, v in sorted(self.__dict__.items())
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _load_dataset(cfg: PipelineConfig) -> PdxDataset:
    dataset = pio.load_dataset(cfg.features, cfg.responses, cfg.response_kind, cfg.untreated_label)
    violations = validate_dataset(dataset)
    if violations:
        raise DatasetError("invalid dataset:\n" + "\n".join(violations))
    return dataset


def _spec_from_dict(d: dict) -> MethodSpec:
    return MethodSpec(
        method=d["method"], learner=d.get("learner", "lasso"), smoothed=bool(d.get("smoothed", False))
    )


def _cell_features(dataset: PdxDataset, ranked, L_sup: int, dae_cfg: dict, seed: int) -> PdxDataset:
    """Subset features to the top L_sup genes, optionally replaced by DAE latents."""
    selection = select_top(ranked, L_sup, dataset.features)
    feats = dataset.features.subset_features(selection.feature_names)
    if dae_cfg.get("enabled"):
        cfg = TrainConfig(
            epochs=int(dae_cfg.get("epochs", 300)),
            learning_rate=float(dae_cfg.get("learning_rate", 1e-2)),
            bottleneck_grid=tuple(dae_cfg.get("bottleneck_grid", [2, 4])),
            seed=seed,
        )
        enc = train_autoencoder(feats.values, cfg)
        latents = encode(enc, feats.values)
        names = tuple(f"latent{i}" for i in range(latents.shape[1]))
        feats = FeatureMatrix(feats.line_ids, names, latents)
    return PdxDataset(feats, dataset.records, treatments=dataset.treatments)


def _run_cell(args) -> dict:
    """Evaluate one (method, L_sup) cell; must stay picklable for workers."""
    cfg, dataset, ranked, method_dict, L_sup = args
    spec = _spec_from_dict(method_dict)
    cell_seed = cfg.seed + 7919 * L_sup
    cell_ds = _cell_features(dataset, ranked, L_sup, dict(cfg.dae, **method_dict.get("dae", {})), cell_seed)
    report = cross_validate(
        spec, cell_ds, K=cfg.folds, seed=cell_seed, grid=cfg.grid, inner_folds=cfg.inner_folds
    )
    row = {
        "method": spec.name + ("_dae" if method_dict.get("dae", {}).get("enabled") else ""),
        "response_kind": cfg.response_kind,
        "L_sup": L_sup,
        "v_bar": repr(report.v_bar),
        "sd": repr(report.sd),
        "v_obs": repr(report.v_obs),
        "v_opt": repr(report.v_opt),
        "p_opt": repr(report.p_opt),
        "p_obs": repr(report.p_obs),
        "n_folds": len(report.per_fold_values),
        "skipped_folds": ";".join(map(str, report.skipped_folds)),
    }
    return {"row": row, "detail": report.to_dict(), "spec": spec.name, "L_sup": L_sup}


def run(cfg: PipelineConfig, workers: int = 1) -> int:
    """Execute the full pipeline and write all artifacts."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(cfg)

    feats = filter_features(dataset.features, cfg.screening)
    dataset = PdxDataset(feats, dataset.records, treatments=dataset.treatments)
    dataset = filter_treatments(dataset, cfg.screening.treatment_coverage)

    ranked = rank_genes(dataset, mode=cfg.ranking_mode)
    available = len(ranked)
    for L_sup in cfg.l_sup_grid:
        if L_sup > available:
            raise DatasetError(f"L_sup={L_sup} exceeds the {available} genes available")

    cells = [
        (cfg, dataset, ranked, method, L_sup)
        for method, L_sup in itertools.product(cfg.methods, cfg.l_sup_grid)
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    rows = [r["row"] for r in results]
    pio.atomic_write_text(out / "report.csv", pio.report_rows_to_csv(rows))
    pio.atomic_write_text(
        out / "report.json", json.dumps([r["detail"] for r in results], indent=1, sort_keys=True)
    )
    pio.atomic_write_text(out / "p_opt_by_method.csv", pio.long_format_csv(rows, "method"))
    pio.atomic_write_text(out / "p_opt_by_l_sup.csv", pio.long_format_csv(rows, "L_sup"))

    # Final fitted rules and the dendrogram for each tree cell.
    for r, cell in zip(results, cells):
        cfg_, dataset_, ranked_, method, L_sup = cell
        spec = _spec_from_dict(method)
        if not spec.uses_tree:
            continue
        cell_ds = _cell_features(dataset_, ranked_, L_sup, dict(cfg.dae, **method.get("dae", {})), cfg.seed)
        if spec.smoothed:
            cell_ds = smooth_outcomes(cell_ds, cfg.seed)
        best = tune(spec, cell_ds, cfg.grid, cfg.seed, inner_folds=cfg.inner_folds)
        rewards = standardize_and_center(cell_ds, best["c1"])
        rule = _fit_rule(spec, rewards, cell_ds.features.values, best, cfg.seed)
        stem = f"{r['spec']}_L{L_sup}"
        pio.atomic_write_text(out / f"itr_{stem}.json", pio.serialize_tree_itr(rule))
        dend = build_tree(rewards)
        pio.atomic_write_text(
            out / f"dendrogram_{stem}.txt", dend.export_text([t.id for t in rewards.treatments])
        )

    if cfg.superlearner.get("enabled"):
        _run_superlearner(cfg, dataset, ranked, out)

    manifest = {
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "inputs": {
            "features": pio.sha256_file(cfg.features),
            "responses": pio.sha256_file(cfg.responses),
        },
        "cells": [{"method": r["spec"], "L_sup": r["L_sup"]} for r in results],
        "version": "pdxitr-0.1.0",
    }
    pio.atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    return EXIT_OK


def _run_superlearner(cfg: PipelineConfig, dataset: PdxDataset, ranked, out: Path) -> None:
    sl = cfg.superlearner
    L_sup = int(sl.get("l_sup", cfg.l_sup_grid[0]))
    cell_ds = _cell_features(dataset, ranked, L_sup, cfg.dae, cfg.seed)
    c1 = int(sl.get("c1", 0))
    c2 = int(sl.get("c2", 1))
    lam = float(sl.get("lam", 0.05))
    rewards = standardize_and_center(cell_ds, c1)
    X = cell_ds.features.values
    subs = []
    for method in sl.get("methods", [{"method": "ql1", "learner": "lasso"}, {"method": "ql2", "learner": "lasso"}]):
        spec = _spec_from_dict(method)
        subs.append(_fit_rule(spec, rewards, X, {"c1": c1, "c2": c2, "lam": lam}, cfg.seed))
    sa = SAConfig(
        chains=int(sl.get("chains", 4)),
        iterations=int(sl.get("iterations", 2000)),
        seed=cfg.seed,
    )
    model = fit_superlearner(subs, rewards, X, dataset=cell_ds, folds=cfg.folds, sa_config=sa)
    doc = {
        "weights": model.weights.tolist(),
        "objective": model.objective,
        "methods": [m for m in sl.get("methods", [])],
        "c1": c1,
        "c2": c2,
        "L_sup": L_sup,
    }
    pio.atomic_write_text(out / "superlearner.json", json.dumps(doc, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# Command-line interface


def _guarded(fn):
    try:
        return fn()
    except VALIDATION_ERRORS as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except RUNTIME_ERRORS as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


def _default_workers() -> int:
    return int(os.environ.get("PDXITR_WORKERS", "1"))


@click.group()
def main():
    """Individualized treatment rules from multi-treatment study data."""


@main.command()
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--lines", type=int, default=60)
@click.option("--treatments", type=int, default=6)
@click.option("--features", "n_features", type=int, default=20)
@click.option("--groups", type=int, default=3)
@click.option("--noise", type=float, default=0.1)
def simulate(out, seed, lines, treatments, n_features, groups, noise):
    """Generate a synthetic dataset and write it in the TSV formats."""
    from .synthetic import make_grouped_oracle, generate

    def body():
        oracle = make_grouped_oracle(treatments, groups, noise_sd=noise, n_informative=2)
        dataset, oracle = generate(lines, treatments, n_features, oracle, seed)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        pio.write_features_tsv(out_dir / "features.tsv", dataset.features)
        pio.write_responses_tsv(out_dir / "responses.tsv", dataset.records)
        truth = {
            "true_grouping": [list(g) for g in oracle.true_grouping],
            "noise_sd": oracle.noise_sd,
            "seed": seed,
        }
        pio.atomic_write_text(out_dir / "truth.json", json.dumps(truth, indent=1, sort_keys=True))
        click.echo(f"wrote {out_dir}/features.tsv, responses.tsv, truth.json")
        return EXIT_OK

    sys.exit(_guarded(body))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
def screen(config_path, out):
    """Rank genes by distance covariance and write the ranking."""

    def body():
        cfg = PipelineConfig.load(config_path, out_override=out)
        dataset = _load_dataset(cfg)
        feats = filter_features(dataset.features, cfg.screening)
        dataset = PdxDataset(feats, dataset.records, treatments=dataset.treatments)
        dataset = filter_treatments(dataset, cfg.screening.treatment_coverage)
        ranked = rank_genes(dataset, mode=cfg.ranking_mode)
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["gene\tscore"] + [f"{g}\t{s!r}" for g, s in ranked]
        pio.atomic_write_text(out_dir / "ranked_genes.tsv", "\n".join(lines) + "\n")
        click.echo(f"ranked {len(ranked)} genes -> {out_dir}/ranked_genes.tsv")
        return EXIT_OK

    sys.exit(_guarded(body))


@main.command(name="tree")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--c1", type=int, default=0)
@click.option("--c2", type=int, default=1)
@click.option("--out", type=click.Path(), default=None)
def tree_cmd(config_path, c1, c2, out):
    """Build and export the treatment dendrogram and a cut."""

    def body():
        cfg = PipelineConfig.load(config_path, out_override=out)
        dataset = _load_dataset(cfg)
        dataset = filter_treatments(dataset, cfg.screening.treatment_coverage)
        rewards = standardize_and_center(dataset, c1)
        dend = build_tree(rewards)
        grouping = cut_tree(rewards, dend, c2)
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        pio.atomic_write_text(
            out_dir / "dendrogram.txt", dend.export_text([t.id for t in rewards.treatments])
        )
        doc = {
            "null_group": [t.id for t in grouping.null_group],
            "groups": [[rewards.treatments[i].id for i in grp] for grp in grouping.groups],
            "c1": c1,
            "c2": c2,
        }
        pio.atomic_write_text(out_dir / "groups.json", json.dumps(doc, indent=1, sort_keys=True))
        click.echo(f"wrote {out_dir}/dendrogram.txt and groups.json")
        return EXIT_OK

    sys.exit(_guarded(body))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--method", default="ql1")
@click.option("--learner", default="lasso")
@click.option("--l-sup", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def fit(config_path, method, learner, l_sup, out):
    """Fit one rule on the full dataset and serialize it."""

    def body():
        cfg = PipelineConfig.load(config_path, out_override=out)
        dataset = _load_dataset(cfg)
        feats = filter_features(dataset.features, cfg.screening)
        dataset = PdxDataset(feats, dataset.records, treatments=dataset.treatments)
        dataset = filter_treatments(dataset, cfg.screening.treatment_coverage)
        ranked = rank_genes(dataset, mode=cfg.ranking_mode)
        L = l_sup or cfg.l_sup_grid[0]
        cell_ds = _cell_features(dataset, ranked, L, cfg.dae, cfg.seed)
        spec = MethodSpec(method=method, learner=learner)
        best = tune(spec, cell_ds, cfg.grid, cfg.seed, inner_folds=cfg.inner_folds)
        rewards = standardize_and_center(cell_ds, best["c1"])
        rule = _fit_rule(spec, rewards, cell_ds.features.values, best, cfg.seed)
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"itr_{spec.name}_L{L}.json"
        pio.atomic_write_text(path, pio.serialize_tree_itr(rule))
        click.echo(f"wrote {path} (params {best})")
        return EXIT_OK

    sys.exit(_guarded(body))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def evaluate(config_path, workers, seed, out):
    """Cross-validated evaluation for every configured method cell."""

    def body():
        cfg = PipelineConfig.load(config_path, out_override=out, seed_override=seed)
        return run(cfg, workers=workers or _default_workers())

    sys.exit(_guarded(body))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
def superlearn(config_path, out):
    """Fit the superlearner combination configured in the config file."""

    def body():
        cfg = PipelineConfig.load(config_path, out_override=out)
        dataset = _load_dataset(cfg)
        feats = filter_features(dataset.features, cfg.screening)
        dataset = PdxDataset(feats, dataset.records, treatments=dataset.treatments)
        dataset = filter_treatments(dataset, cfg.screening.treatment_coverage)
        ranked = rank_genes(dataset, mode=cfg.ranking_mode)
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if not cfg.superlearner:
            raise DatasetError("config has no superlearner section")
        _run_superlearner(cfg, dataset, ranked, out_dir)
        click.echo(f"wrote {out_dir}/superlearner.json")
        return EXIT_OK

    sys.exit(_guarded(body))


@main.command()
@click.option("--out", type=click.Path(exists=True), required=True)
def report(out):
    """Regenerate the plot-ready long-format CSVs from report.csv."""

    def body():
        out_dir = Path(out)
        csv_path = out_dir / "report.csv"
        if not csv_path.exists():
            raise DatasetError(f"{csv_path} not found; run evaluate first")
        import csv as _csv

        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        pio.atomic_write_text(out_dir / "p_opt_by_method.csv", pio.long_format_csv(rows, "method"))
        pio.atomic_write_text(out_dir / "p_opt_by_l_sup.csv", pio.long_format_csv(rows, "L_sup"))
        click.echo(f"wrote {out_dir}/p_opt_by_method.csv and p_opt_by_l_sup.csv")
        return EXIT_OK

    sys.exit(_guarded(body))


@main.command(name="run")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def run_cmd(config_path, workers, seed, out):
    """Full pipeline: screen, tree, fit, evaluate, superlearn, report."""

    def body():
        cfg = PipelineConfig.load(config_path, out_override=out, seed_override=seed)
        return run(cfg, workers=workers or _default_workers())

    sys.exit(_guarded(body))


if __name__ == "__main__":
    main()
