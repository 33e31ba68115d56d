import csv

import pytest

from dhaseg import pipeline
from dhaseg.config import RunConfig, config_hash


def _tiny(tmp_path, **overrides):
    overrides.setdefault("k", "2")
    return RunConfig(out_dir=str(tmp_path / "run"), canvas=32, n_source=6,
                     n_per_style=4, n_open=3, fseg_iterations=4,
                     hallucinate_iterations=3, adapt_iterations=4,
                     checkpoint_every=2, **overrides)


def test_record_round_trip(tmp_path):
    cfg = _tiny(tmp_path)
    paths = pipeline.Paths(cfg)
    pipeline.write_record(paths, "generate", cfg, 1.25, {"n_entries": 21})
    rec = pipeline.read_record(paths.record("generate"))
    assert rec["stage"] == "generate"
    assert rec["config_hash"] == config_hash(cfg)
    assert rec["n_entries"] == "21"
    assert float(rec["wall_time_s"]) == 1.25


def test_require_names_the_missing_stage(tmp_path):
    with pytest.raises(pipeline.PipelineError, match="discover"):
        pipeline.require(tmp_path / "absent.tsv", "discover")


def test_run_all_skips_hallucinate_for_raw_modes(tmp_path):
    cfg = _tiny(tmp_path, adapt_mode="domain_wise_raw")
    pipeline.run_all(cfg)
    paths = pipeline.Paths(cfg)
    assert not paths.record("hallucinate").exists()
    assert paths.record("adapt").exists()
    assert paths.record("evaluate").exists()


def test_discover_selects_k_automatically(tmp_path):
    cfg = _tiny(tmp_path, k="auto")
    pipeline.run_generate(cfg)
    k = pipeline.run_discover(cfg)
    paths = pipeline.Paths(cfg)
    assert paths.chosen_k.read_text().strip() == str(k)
    assert 2 <= k <= 5
    ari = float((paths.discover / "ari.txt").read_text())
    assert -1.0 <= ari <= 1.0


def test_ablation_table(tmp_path):
    cfg = _tiny(tmp_path)
    results = pipeline.run_ablate(cfg, "framework_design")
    names = [r["row"] for r in results]
    assert names == ["source_only", "traditional_uda", "discover_adapt",
                     "discover_hallucinate", "discover_hallucinate_trad",
                     "full_dha"]
    table = tmp_path / "run" / "ablate_framework_design" / "table.csv"
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    for row in rows:
        assert 0.0 <= float(row["compound_miou"]) <= 1.0
        assert 0.0 <= float(row["overall_miou"]) <= 1.0


def test_unknown_preset_rejected(tmp_path):
    with pytest.raises(pipeline.PipelineError, match="unknown ablation preset"):
        pipeline.run_ablate(_tiny(tmp_path), "everything")
