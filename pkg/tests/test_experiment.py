import json
import math

import numpy as np
import pytest

from fairrerank import dataio
from fairrerank.errors import ConfigError
from fairrerank.experiment import (
    DatasetSpec,
    ExperimentConfig,
    MetricSpec,
    RankerSpec,
    RerankGridSpec,
    SegmentationSpec,
    cross_stats,
    pearson,
    run_experiment,
    sweep_lambdas,
)
from fairrerank.metrics import EvaluationReport
from fairrerank.synthetic import write_zipf_file

RAW_FMT = dataio.RecordFormat(weight_col=2, timestamp_col=None)


def small_config(tmp_path, **overrides) -> ExperimentConfig:
    raw = write_zipf_file(
        tmp_path / "raw.tsv", n_users=100, n_items=60, min_degree=6, max_degree=18, seed=11
    )
    base = dict(
        datasets=[DatasetSpec(name="synth", path=str(raw), fmt=RAW_FMT, kcore=3, split_seed=5)],
        rankers=[RankerSpec(name="mostpop", n_candidates=25)],
        segmentation=SegmentationSpec("activity", 0.05, 0.2),
        rerank=RerankGridSpec(modes=["N", "CP"], lambda1=[0.1], lambda2=[0.1], k=5),
        metrics=MetricSpec(w=0.5),
        output_dir=str(tmp_path / "run"),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# --- independent oracle: textbook Pearson formula -----------------------------

def pearson_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def report_stub(**kw) -> EvaluationReport:
    defaults = dict(
        ndcg_all=0.1, ndcg_advantaged=0.2, ndcg_protected=0.05, dcf=0.15,
        novelty=4.0, coverage=0.5, exposure_short=0.7, exposure_long=0.3, dpf=0.4,
        mcpf=0.275, mcpf_over_all=2.75, delta_pct=None, k=10, w=0.5,
        user_method="activity_ug1", item_method="popularity_ig",
        ranker_tag="r", mode="N", lambda1=0.0, lambda2=0.0, dataset="d",
    )
    defaults.update(kw)
    return EvaluationReport(**defaults)


class TestConfig:
    def test_round_trip_through_file(self, tmp_path):
        cfg = small_config(tmp_path)
        path = cfg.save(tmp_path / "cfg.json")
        back = ExperimentConfig.load(path)
        assert back.to_dict() == cfg.to_dict()

    def test_delta_requires_mode_n(self, tmp_path):
        cfg = small_config(
            tmp_path, rerank=RerankGridSpec(modes=["CP"], lambda1=[0.1], lambda2=[0.1], k=5)
        )
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_empty_grid_rejected(self, tmp_path):
        cfg = small_config(tmp_path, rerank=RerankGridSpec(modes=[], lambda1=[0.1], lambda2=[0.1]))
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_duplicate_names_rejected(self, tmp_path):
        cfg = small_config(
            tmp_path,
            rankers=[RankerSpec(name="mostpop"), RankerSpec(name="mostpop")],
        )
        with pytest.raises(ConfigError):
            cfg.validate()


class TestRunExperiment:
    def test_minimal_run_report_count(self, tmp_path):
        cfg = small_config(tmp_path)
        out = run_experiment(cfg, figures=False)
        reports = sorted((out / "reports").glob("*.json"))
        assert len(reports) == 2  # modes N + CP, single lambda cell
        assert (out / "tables" / "summary.tsv").exists()
        assert (out / "tables" / "correlations.tsv").exists()
        assert not (out / "failures.log").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_config(tmp_path)
        out1 = run_experiment(cfg, figures=False)
        blob1 = {p.relative_to(out1): p.read_bytes() for p in out1.rglob("*") if p.is_file()}
        cfg2 = small_config(tmp_path)
        cfg2.output_dir = str(tmp_path / "run_b")
        out2 = run_experiment(cfg2, figures=False)
        for rel, data in blob1.items():
            if rel.name == "config.json":
                continue  # embeds output_dir
            assert (out2 / rel).read_bytes() == data

    def test_completeness_with_failures(self, tmp_path):
        cfg = small_config(tmp_path)
        cfg.rankers.append(RankerSpec(name="import", path=str(tmp_path / "missing.tsv"), tag="ext"))
        out = run_experiment(cfg, figures=False)
        n_cells = len(cfg.datasets) * len(cfg.rankers) * len(cfg.rerank.cells())
        n_reports = len(list((out / "reports").glob("*.json")))
        n_failures = len((out / "failures.log").read_text().splitlines())
        assert n_reports + n_failures == n_cells
        assert n_reports == 2 and n_failures == 2

    def test_delta_cites_mode_n_reference(self, tmp_path):
        cfg = small_config(tmp_path)
        out = run_experiment(cfg, figures=False)
        reports = [EvaluationReport.load(p) for p in sorted((out / "reports").glob("*.json"))]
        by_mode = {r.mode: r for r in reports}
        ref = by_mode["N"]
        assert ref.delta_pct == pytest.approx(0.0)
        cp = by_mode["CP"]
        assert cp.delta_pct == pytest.approx(abs((ref.mcpf - cp.mcpf) / ref.mcpf) * 100, abs=1e-9)

    def test_jobs_do_not_change_outputs(self, tmp_path):
        cfg = small_config(
            tmp_path,
            rerank=RerankGridSpec(modes=["N", "C", "P", "CP"], lambda1=[0.0, 0.1],
                                  lambda2=[0.0, 0.1], k=5),
        )
        out1 = run_experiment(cfg, jobs=1, figures=False)
        cfg2 = small_config(
            tmp_path,
            rerank=RerankGridSpec(modes=["N", "C", "P", "CP"], lambda1=[0.0, 0.1],
                                  lambda2=[0.0, 0.1], k=5),
        )
        cfg2.output_dir = str(tmp_path / "run_jobs")
        out2 = run_experiment(cfg2, jobs=4, figures=False)
        r1 = sorted((out1 / "reports").glob("*.json"))
        r2 = sorted((out2 / "reports").glob("*.json"))
        assert [p.name for p in r1] == [p.name for p in r2]
        for p1, p2 in zip(r1, r2):
            assert p1.read_bytes() == p2.read_bytes()

    def test_full_grid_cell_count(self, tmp_path):
        # 8 datasets x 4 rankers x 4 modes (single lambda cell) = 128 reports
        specs = []
        for d in range(8):
            raw = write_zipf_file(
                tmp_path / f"raw{d}.tsv", n_users=40, n_items=30,
                min_degree=4, max_degree=10, seed=d,
            )
            specs.append(DatasetSpec(name=f"ds{d}", path=str(raw), fmt=RAW_FMT, kcore=2, split_seed=d))
        cfg = ExperimentConfig(
            datasets=specs,
            rankers=[
                RankerSpec(name="mostpop", n_candidates=15),
                RankerSpec(name="random", n_candidates=15, seed=1),
                RankerSpec(name="itemknn", n_candidates=15, neighbors=5),
                RankerSpec(name="itemknn", n_candidates=15, neighbors=10, tag="itemknn-wide"),
            ],
            rerank=RerankGridSpec(modes=["N", "C", "P", "CP"], lambda1=[0.1], lambda2=[0.1], k=5),
            output_dir=str(tmp_path / "grid"),
        )
        out = run_experiment(cfg, figures=False)
        assert len(list((out / "reports").glob("*.json"))) == 128


class TestSweep:
    def test_long_tail_exposure_monotone(self, tmp_path):
        cfg = small_config(
            tmp_path,
            rankers=[RankerSpec(name="itemknn", n_candidates=25, neighbors=10)],
            rerank=RerankGridSpec(modes=["N", "CP"], lambda1=[0.05],
                                  lambda2=[0.0, 0.05, 0.1, 0.2, 0.4], k=5),
        )
        rows = sweep_lambdas(cfg, vary="lambda2", fixed_other=0.05)
        exposures = [r["exposure_long"] for r in rows]
        assert all(b >= a - 1e-12 for a, b in zip(exposures, exposures[1:]))

    def test_single_value_grid(self, tmp_path):
        cfg = small_config(
            tmp_path,
            rerank=RerankGridSpec(modes=["N", "CP"], lambda1=[0.05], lambda2=[0.1], k=5),
        )
        rows = sweep_lambdas(cfg, vary="lambda2", fixed_other=0.05)
        assert len(rows) == 1

    def test_zero_row_equals_mode_n(self, tmp_path):
        cfg = small_config(
            tmp_path,
            rerank=RerankGridSpec(modes=["N", "CP"], lambda1=[0.0], lambda2=[0.0, 0.1], k=5),
        )
        rows = sweep_lambdas(cfg, vary="lambda2", fixed_other=0.0)
        out = run_experiment(cfg, figures=False)
        n_report = next(
            EvaluationReport.load(p)
            for p in (out / "reports").glob("*__N__*.json")
        )
        zero = rows[0]
        for key in ("ndcg_all", "dcf", "dpf", "mcpf", "novelty", "coverage"):
            assert zero[key] == pytest.approx(getattr(n_report, key), abs=1e-12)

    def test_non_monotone_grid_rejected(self, tmp_path):
        cfg = small_config(
            tmp_path,
            rerank=RerankGridSpec(modes=["N"], lambda1=[0.1], lambda2=[0.2, 0.1], k=5),
        )
        with pytest.raises(ConfigError):
            sweep_lambdas(cfg, vary="lambda2")


class TestCrossStats:
    def test_identical_reports_undefined(self):
        reports = [report_stub(dataset="a"), report_stub(dataset="b")]
        rows = cross_stats(reports)
        assert rows[0]["pearson_acc_dcf"] is None

    def test_perfectly_linear_pairs(self):
        reports = [
            report_stub(dataset=f"d{i}", ndcg_all=0.1 * i, dcf=0.2 * i, dpf=-0.3 * i)
            for i in range(1, 5)
        ]
        rows = cross_stats(reports)
        assert rows[0]["pearson_acc_dcf"] == pytest.approx(1.0)
        assert rows[0]["pearson_acc_dpf"] == pytest.approx(-1.0)

    def test_matches_textbook_formula(self, rng):
        reports = []
        for i in range(10):
            reports.append(report_stub(
                dataset=f"d{i}",
                ndcg_all=float(rng.random() + 0.05),
                dcf=float(rng.normal()),
                dpf=float(rng.normal()),
            ))
        rows = cross_stats(reports)
        acc = [r.ndcg_all for r in reports]
        assert rows[0]["pearson_acc_dcf"] == pytest.approx(
            pearson_oracle(acc, [r.dcf for r in reports]), abs=1e-9
        )
        assert rows[0]["pearson_acc_dpf"] == pytest.approx(
            pearson_oracle(acc, [r.dpf for r in reports]), abs=1e-9
        )
        assert rows[0]["mean_dcf_over_acc"] == pytest.approx(
            float(np.mean([r.dcf / r.ndcg_all for r in reports])), abs=1e-12
        )

    def test_groups_by_ranker_and_mode(self):
        reports = [
            report_stub(dataset="a", ranker_tag="r1", mode="N"),
            report_stub(dataset="a", ranker_tag="r1", mode="CP"),
            report_stub(dataset="a", ranker_tag="r2", mode="N"),
        ]
        rows = cross_stats(reports)
        assert {(r["ranker"], r["mode"]) for r in rows} == {("r1", "N"), ("r1", "CP"), ("r2", "N")}

    def test_pearson_guards(self):
        assert pearson([1.0], [2.0]) is None
        assert pearson([1.0, 1.0], [2.0, 3.0]) is None
