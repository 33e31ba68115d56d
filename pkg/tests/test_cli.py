import subprocess
import sys

import pytest

from dhaseg.cli import main
from dhaseg.config import RunConfig, save_config


def _tiny_config(tmp_path, **overrides):
    cfg = RunConfig(out_dir=str(tmp_path / "run"), canvas=32, n_source=6,
                    n_per_style=4, n_open=3, k="2", fseg_iterations=4,
                    hallucinate_iterations=3, adapt_iterations=4,
                    checkpoint_every=2, **overrides)
    path = tmp_path / "run.cfg"
    save_config(cfg, path)
    return cfg, path


def test_run_all_produces_expected_layout(tmp_path):
    cfg, path = _tiny_config(tmp_path)
    assert main(["run-all", "--config", str(path)]) == 0
    root = tmp_path / "run"
    for rel in ("data/manifest.tsv", "discover/assignment.tsv",
                "discover/chosen_k.txt", "hallucinate/generator.ckpt",
                "hallucinate/translated/translated_d1.tsv",
                "adapt/final.ckpt", "adapt/train_log.csv",
                "evaluate/domain_metrics.csv", "evaluate/curves.csv",
                "evaluate/features.tsv", "records/evaluate.done"):
        assert (root / rel).exists(), rel
    plots = list((root / "evaluate/plots").glob("curve_*.png"))
    assert len(plots) == 4  # three compound styles plus the open style


def test_generate_is_idempotent_and_guards_mismatch(tmp_path, capsys):
    _, path = _tiny_config(tmp_path)
    assert main(["generate-data", "--config", str(path)]) == 0
    capsys.readouterr()
    assert main(["generate-data", "--config", str(path)]) == 0
    assert "no-op" in capsys.readouterr().out
    # same out dir, different seed: refuse instead of overwriting
    assert main(["generate-data", "--config", str(path), "--seed", "9"]) == 1
    assert "do not match" in capsys.readouterr().err


def test_stage_order_is_enforced(tmp_path, capsys):
    _, path = _tiny_config(tmp_path)
    assert main(["adapt", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    assert "generate-data" in err
    assert main(["generate-data", "--config", str(path)]) == 0
    assert main(["hallucinate", "--config", str(path)]) == 1
    assert "discover" in capsys.readouterr().err


def test_evaluate_refuses_mixed_config_hashes(tmp_path, capsys):
    cfg, path = _tiny_config(tmp_path)
    assert main(["generate-data", "--config", str(path)]) == 0
    assert main(["discover", "--config", str(path)]) == 0
    # re-run the remaining stages under a modified config
    import dataclasses

    from dhaseg.config import save_config as save
    changed = dataclasses.replace(cfg, lambda_gan=2.0)
    path2 = tmp_path / "changed.cfg"
    save(changed, path2)
    assert main(["hallucinate", "--config", str(path2)]) == 0
    assert main(["adapt", "--config", str(path2)]) == 0
    assert main(["evaluate", "--config", str(path2)]) == 1
    assert "mixed config hashes" in capsys.readouterr().err


def test_unknown_config_key_fails_cleanly(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("not_a_key=1\n")
    assert main(["generate-data", "--config", str(path)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_cli_overrides(tmp_path):
    cfg, path = _tiny_config(tmp_path)
    out = tmp_path / "other"
    assert main(["generate-data", "--config", str(path),
                 "--out", str(out)]) == 0
    assert (out / "data" / "manifest.tsv").exists()


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "dhaseg.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "run-all" in proc.stdout


def test_missing_command_is_an_error():
    with pytest.raises(SystemExit):
        main([])
