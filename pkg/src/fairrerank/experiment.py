"""Config-driven experiment runner: datasets x rankers x modes x lambda grid.

A run executes load -> k-core -> split -> segment -> rank -> rerank ->
evaluate for every grid cell, writes every intermediate artifact with a
manifest, and reduces the reports into delimited tables (and figures).
Cells fail in isolation: an error is logged to failures.log and the rest
of the grid proceeds. Reruns with the same config are byte-identical.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baserank, dataio, metrics, rerank, segmentation
from .errors import ConfigError, FairRerankError


@dataclass
class DatasetSpec:
    name: str
    path: str
    fmt: dataio.RecordFormat = field(default_factory=dataio.RecordFormat)
    kcore: int = 10
    split_seed: int = 0
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "path": self.path,
            "format": self.fmt.to_dict(),
            "kcore": self.kcore,
            "split_seed": self.split_seed,
            "ratios": list(self.ratios),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(
            name=d["name"],
            path=d["path"],
            fmt=dataio.RecordFormat.from_dict(d.get("format", {})),
            kcore=int(d.get("kcore", 10)),
            split_seed=int(d.get("split_seed", 0)),
            ratios=tuple(d.get("ratios", (0.7, 0.1, 0.2))),
        )


@dataclass
class SegmentationSpec:
    user_method: str = "activity"
    user_fraction: float | None = None
    item_fraction: float = 0.2

    def to_dict(self) -> dict:
        return {
            "user_method": self.user_method,
            "user_fraction": self.user_fraction,
            "item_fraction": self.item_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationSpec":
        return cls(
            user_method=d.get("user_method", "activity"),
            user_fraction=d.get("user_fraction"),
            item_fraction=float(d.get("item_fraction", 0.2)),
        )


@dataclass
class RankerSpec:
    name: str                      # mostpop | random | itemknn | import
    n_candidates: int = 100
    neighbors: int = 20            # itemknn only
    seed: int = 0                  # random only
    path: str | None = None        # import only
    tag: str | None = None

    def label(self) -> str:
        return self.tag or self.name

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_candidates": self.n_candidates,
            "neighbors": self.neighbors,
            "seed": self.seed,
            "path": self.path,
            "tag": self.tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RankerSpec":
        return cls(
            name=d["name"],
            n_candidates=int(d.get("n_candidates", 100)),
            neighbors=int(d.get("neighbors", 20)),
            seed=int(d.get("seed", 0)),
            path=d.get("path"),
            tag=d.get("tag"),
        )


@dataclass
class RerankGridSpec:
    modes: list[str] = field(default_factory=lambda: ["N", "C", "P", "CP"])
    lambda1: list[float] = field(default_factory=lambda: [0.05])
    lambda2: list[float] = field(default_factory=lambda: [0.05])
    k: int = 10
    solver: str = "greedy"

    def cells(self) -> list[tuple[str, float, float]]:
        return [(m, l1, l2) for m in self.modes for l1 in self.lambda1 for l2 in self.lambda2]

    def to_dict(self) -> dict:
        return {
            "modes": list(self.modes),
            "lambda1": list(self.lambda1),
            "lambda2": list(self.lambda2),
            "k": self.k,
            "solver": self.solver,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RerankGridSpec":
        return cls(
            modes=list(d.get("modes", ["N", "C", "P", "CP"])),
            lambda1=[float(x) for x in d.get("lambda1", [0.05])],
            lambda2=[float(x) for x in d.get("lambda2", [0.05])],
            k=int(d.get("k", 10)),
            solver=d.get("solver", "greedy"),
        )


@dataclass
class MetricSpec:
    w: float = 0.5
    k: int | None = None           # defaults to the rerank k
    delta: bool = True             # report improvement vs. the mode-N reference

    def to_dict(self) -> dict:
        return {"w": self.w, "k": self.k, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSpec":
        return cls(w=float(d.get("w", 0.5)), k=d.get("k"), delta=bool(d.get("delta", True)))


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSpec]
    rankers: list[RankerSpec]
    segmentation: SegmentationSpec = field(default_factory=SegmentationSpec)
    rerank: RerankGridSpec = field(default_factory=RerankGridSpec)
    metrics: MetricSpec = field(default_factory=MetricSpec)
    output_dir: str = "runs/experiment"

    def validate(self):
        if not self.datasets:
            raise ConfigError("config needs at least one dataset")
        if not self.rankers:
            raise ConfigError("config needs at least one ranker")
        if not self.rerank.modes or not self.rerank.lambda1 or not self.rerank.lambda2:
            raise ConfigError("rerank grids must be non-empty")
        for mode in self.rerank.modes:
            if mode not in rerank.MODES:
                raise ConfigError(f"unknown mode {mode!r}")
        if self.metrics.delta and "N" not in self.rerank.modes:
            raise ConfigError("delta reporting needs mode N in the grid (it is the reference)")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        tags = [r.label() for r in self.rankers]
        if len(set(tags)) != len(tags):
            raise ConfigError("ranker tags must be unique")

    def to_dict(self) -> dict:
        return {
            "datasets": [d.to_dict() for d in self.datasets],
            "rankers": [r.to_dict() for r in self.rankers],
            "segmentation": self.segmentation.to_dict(),
            "rerank": self.rerank.to_dict(),
            "metrics": self.metrics.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            cfg = cls(
                datasets=[DatasetSpec.from_dict(x) for x in d["datasets"]],
                rankers=[RankerSpec.from_dict(x) for x in d["rankers"]],
                segmentation=SegmentationSpec.from_dict(d.get("segmentation", {})),
                rerank=RerankGridSpec.from_dict(d.get("rerank", {})),
                metrics=MetricSpec.from_dict(d.get("metrics", {})),
                output_dir=d.get("output_dir", "runs/experiment"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _fmt(x: float) -> str:
    return format(float(x), "g")


def cell_name(dataset: str, ranker: str, mode: str, l1: float, l2: float) -> str:
    return f"{dataset}__{ranker}__{mode}__l1_{_fmt(l1)}__l2_{_fmt(l2)}"


def build_ranker(spec: RankerSpec, train: dataio.InteractionDataset) -> baserank.ScoreMatrix:
    if spec.name == "mostpop":
        return baserank.mostpop_scores(train, spec.n_candidates)
    if spec.name == "random":
        return baserank.random_scores(train, spec.n_candidates, spec.seed)
    if spec.name == "itemknn":
        return baserank.itemknn_scores(train, spec.n_candidates, spec.neighbors)
    if spec.name == "import":
        if not spec.path:
            raise ConfigError("import ranker needs a path")
        return baserank.import_scores(spec.path, train, spec.n_candidates)
    raise ConfigError(f"unknown ranker {spec.name!r}")


def prepare_dataset(spec: DatasetSpec) -> dataio.SplitDataset:
    """load -> k-core -> split for one dataset spec."""
    raw = dataio.load_interactions(spec.path, spec.fmt)
    filtered = dataio.kcore_filter(raw, spec.kcore)
    return dataio.split(filtered, spec.ratios, spec.split_seed)


def _rerank_cell(sm, gains, grid, mode, l1, l2):
    cfg = rerank.RerankConfig(k=grid.k, mode=mode, lambda1=l1, lambda2=l2, solver=grid.solver)
    if grid.solver == "lp":
        return rerank.lp_rerank(sm, gains, cfg)
    return rerank.greedy_rerank(sm, gains, cfg)


SUMMARY_COLUMNS = [
    "dataset", "ranker", "mode", "lambda1", "lambda2",
    "ndcg_all", "ndcg_advantaged", "ndcg_protected", "dcf",
    "novelty", "coverage", "exposure_short", "exposure_long", "dpf",
    "mcpf", "mcpf_over_all", "delta_pct", "selected",
]


def _table_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def write_table(rows: list[dict], columns: list[str], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_table_value(row.get(c)) for c in columns) + "\n")
    return path


def summary_rows(reports: list[metrics.EvaluationReport]) -> list[dict]:
    """Flatten reports into table rows and flag the selected cell per group.

    Selection maximizes ndcg_all - mcpf within each (dataset, ranker),
    ties resolved by report order.
    """
    best: dict[tuple[str, str], tuple[float, int]] = {}
    for idx, rep in enumerate(reports):
        key = (rep.dataset, rep.ranker_tag)
        score = rep.ndcg_all - rep.mcpf
        if key not in best or score > best[key][0]:
            best[key] = (score, idx)
    selected = {idx for _, idx in best.values()}
    rows = []
    for idx, rep in enumerate(reports):
        row = rep.to_dict()
        row["ranker"] = rep.ranker_tag
        row["selected"] = 1 if idx in selected else 0
        rows.append(row)
    return rows


def pearson(x, y) -> float | None:
    """Pearson correlation, or None when undefined (fewer than 2 points or
    zero variance)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def cross_stats(reports: list[metrics.EvaluationReport]) -> list[dict]:
    """Per (ranker, mode): accuracy/fairness correlations across datasets and
    the mean fairness-to-accuracy ratios."""
    groups: dict[tuple[str, str], list[metrics.EvaluationReport]] = {}
    for rep in reports:
        groups.setdefault((rep.ranker_tag, rep.mode), []).append(rep)
    rows = []
    for (ranker_tag, mode), reps in sorted(groups.items()):
        reps = sorted(reps, key=lambda r: r.dataset)
        acc = [r.ndcg_all for r in reps]
        dcf = [r.dcf for r in reps]
        dpf = [r.dpf for r in reps]
        ratio_dcf = [r.dcf / r.ndcg_all for r in reps if r.ndcg_all != 0]
        ratio_dpf = [r.dpf / r.ndcg_all for r in reps if r.ndcg_all != 0]
        rows.append({
            "ranker": ranker_tag,
            "mode": mode,
            "n_datasets": len(reps),
            "pearson_acc_dcf": pearson(acc, dcf),
            "pearson_acc_dpf": pearson(acc, dpf),
            "mean_dcf_over_acc": float(np.mean(ratio_dcf)) if ratio_dcf else None,
            "mean_dpf_over_acc": float(np.mean(ratio_dpf)) if ratio_dpf else None,
        })
    return rows


STATS_COLUMNS = [
    "ranker", "mode", "n_datasets",
    "pearson_acc_dcf", "pearson_acc_dpf",
    "mean_dcf_over_acc", "mean_dpf_over_acc",
]


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, figures: bool = True) -> Path:
    """Execute the full grid and write all artifacts under cfg.output_dir."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    metric_k = cfg.metrics.k or cfg.rerank.k
    failures: list[str] = []
    reports: list[metrics.EvaluationReport] = []

    for ds_spec in cfg.datasets:
        try:
            sd = prepare_dataset(ds_spec)
            dataio.save_split(sd, out / "datasets" / ds_spec.name)
            groups = segmentation.assign_groups(
                sd.train,
                cfg.segmentation.user_method,
                cfg.segmentation.user_fraction,
                cfg.segmentation.item_fraction,
            )
            segmentation.save_groups(groups, out / "segments" / ds_spec.name)
        except (FairRerankError, OSError) as exc:
            for ranker_spec in cfg.rankers:
                for mode, l1, l2 in cfg.rerank.cells():
                    failures.append(
                        f"{cell_name(ds_spec.name, ranker_spec.label(), mode, l1, l2)}: {exc}"
                    )
            continue

        for ranker_spec in cfg.rankers:
            tag = ranker_spec.label()
            try:
                sm = build_ranker(ranker_spec, sd.train)
                baserank.export_scores(sm, sd.train, out / "scores" / ds_spec.name / f"{tag}.tsv")
                gains = rerank.build_gain_tables(sm, groups, cfg.rerank.k)
            except (FairRerankError, OSError) as exc:
                for mode, l1, l2 in cfg.rerank.cells():
                    failures.append(f"{cell_name(ds_spec.name, tag, mode, l1, l2)}: {exc}")
                continue

            def run_cell(cell):
                mode, l1, l2 = cell
                name = cell_name(ds_spec.name, tag, mode, l1, l2)
                try:
                    lists = _rerank_cell(sm, gains, cfg.rerank, mode, l1, l2)
                    rerank.save_ranked_lists(
                        lists, sd.train, out / "reranked" / ds_spec.name / f"{name}.tsv"
                    )
                    rep = metrics.evaluate(
                        lists, sd.train, sd.test, groups,
                        k=metric_k, w=cfg.metrics.w, ranker_tag=tag, dataset=ds_spec.name,
                    )
                    return name, rep, None
                except (FairRerankError, OSError) as exc:
                    return name, None, str(exc)

            cells = cfg.rerank.cells()
            if jobs > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    results = list(pool.map(run_cell, cells))
            else:
                results = [run_cell(c) for c in cells]
            for name, rep, error in results:
                if error is not None:
                    failures.append(f"{name}: {error}")
                else:
                    reports.append(rep)

    # delta vs. the first mode-N report of the same (dataset, ranker)
    if cfg.metrics.delta:
        reference: dict[tuple[str, str], metrics.EvaluationReport] = {}
        for rep in reports:
            key = (rep.dataset, rep.ranker_tag)
            if rep.mode == "N" and key not in reference:
                reference[key] = rep
        for rep in reports:
            ref = reference.get((rep.dataset, rep.ranker_tag))
            if ref is not None and ref.mcpf != 0:
                rep.delta_pct = metrics.delta_pct(ref.mcpf, rep.mcpf)

    for rep in reports:
        name = cell_name(rep.dataset, rep.ranker_tag, rep.mode, rep.lambda1, rep.lambda2)
        rep.save(out / "reports" / f"{name}.json")

    rows = summary_rows(reports)
    write_table(rows, SUMMARY_COLUMNS, out / "tables" / "summary.tsv")
    write_table(cross_stats(reports), STATS_COLUMNS, out / "tables" / "correlations.tsv")

    if failures:
        with open(out / "failures.log", "w", encoding="utf-8") as fh:
            fh.write("\n".join(failures) + "\n")

    if figures and reports:
        from . import figures as figmod

        for ds_spec in cfg.datasets:
            ds_reports = [r for r in reports if r.dataset == ds_spec.name]
            if ds_reports:
                figmod.render_mode_comparison(
                    ds_reports, out / "figures" / f"{ds_spec.name}__summary.png"
                )
    return out


SWEEP_COLUMNS = [
    "dataset", "ranker", "varied", "lambda1", "lambda2",
    "ndcg_all", "ndcg_advantaged", "ndcg_protected", "dcf",
    "exposure_short", "exposure_long", "dpf", "mcpf", "novelty", "coverage",
]


def sweep_lambdas(cfg: ExperimentConfig, vary: str = "lambda2",
                  fixed_other: float = 0.05) -> list[dict]:
    """CP-mode metric trace along one lambda grid, the other weight held fixed.

    The grid for the varied weight is taken from cfg.rerank and must be
    monotone increasing. Returns one row per (dataset, ranker, grid value).
    """
    cfg.validate()
    if vary not in ("lambda1", "lambda2"):
        raise ConfigError(f"vary must be lambda1 or lambda2, got {vary!r}")
    grid = cfg.rerank.lambda1 if vary == "lambda1" else cfg.rerank.lambda2
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sweep grid must be strictly increasing")

    metric_k = cfg.metrics.k or cfg.rerank.k
    rows = []
    for ds_spec in cfg.datasets:
        sd = prepare_dataset(ds_spec)
        groups = segmentation.assign_groups(
            sd.train,
            cfg.segmentation.user_method,
            cfg.segmentation.user_fraction,
            cfg.segmentation.item_fraction,
        )
        for ranker_spec in cfg.rankers:
            sm = build_ranker(ranker_spec, sd.train)
            gains = rerank.build_gain_tables(sm, groups, cfg.rerank.k)
            for value in grid:
                l1, l2 = (value, fixed_other) if vary == "lambda1" else (fixed_other, value)
                lists = _rerank_cell(sm, gains, cfg.rerank, "CP", l1, l2)
                rep = metrics.evaluate(
                    lists, sd.train, sd.test, groups,
                    k=metric_k, w=cfg.metrics.w, ranker_tag=ranker_spec.label(),
                    dataset=ds_spec.name,
                )
                row = rep.to_dict()
                row["ranker"] = ranker_spec.label()
                row["varied"] = value
                rows.append(row)
    return rows
