"""Stage orchestration for the full discover-hallucinate-adapt pipeline.

Each stage writes its outputs plus a completion record (config hash, seed, wall
time) under the run directory, enabling resume and stage isolation.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import time
from pathlib import Path

import numpy as np

from . import adapt as adapt_mod
from . import discovery, evaluate, hallucinate
from .config import RunConfig, config_hash, save_config
from .data import (DEFAULT_OPEN_STYLE, DEFAULT_STYLES, BenchmarkConfig,
                   SceneConfig, read_manifest)
from .losses import LossWeights
from .networks import SegNetwork, load_checkpoint, save_checkpoint


class PipelineError(RuntimeError):
    pass


class Paths:
    def __init__(self, config: RunConfig):
        self.root = Path(config.out_dir)
        self.records = self.root / "records"
        self.data = self.root / "data"
        self.manifest = self.data / "manifest.tsv"
        self.discover = self.root / "discover"
        self.assignment = self.discover / "assignment.tsv"
        self.centroids = self.discover / "centroids.txt"
        self.chosen_k = self.discover / "chosen_k.txt"
        self.hallucinate = self.root / "hallucinate"
        self.fseg_ckpt = self.hallucinate / "fseg.ckpt"
        self.generator_ckpt = self.hallucinate / "generator.ckpt"
        self.translated = self.hallucinate / "translated"
        self.adapt = self.root / "adapt"
        self.baseline_ckpt = self.adapt / "source_baseline.ckpt"
        self.final_ckpt = self.adapt / "final.ckpt"
        self.evaluate = self.root / "evaluate"

    def record(self, stage: str) -> Path:
        return self.records / f"{stage}.done"


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_record(paths: Paths, stage: str, cfg: RunConfig, wall: float,
                 extra: dict | None = None) -> None:
    paths.records.mkdir(parents=True, exist_ok=True)
    lines = [f"stage={stage}", f"config_hash={config_hash(cfg)}",
             f"seed={cfg.master_seed}", f"wall_time_s={wall:.3f}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    paths.record(stage).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_record(path: Path) -> dict:
    rec = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if raw.strip():
            k, v = raw.split("=", 1)
            rec[k] = v
    return rec


def require(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise PipelineError(f"missing {path} (run the {producer!r} stage first)")
    return Path(path)


def _weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(gan=cfg.lambda_gan, sem=cfg.lambda_sem,
                       style=cfg.lambda_style, out=cfg.lambda_out,
                       task=cfg.lambda_task)


def benchmark_config(cfg: RunConfig, paths: Paths) -> BenchmarkConfig:
    return BenchmarkConfig(
        out_dir=paths.data, master_seed=cfg.master_seed,
        n_source=cfg.n_source, n_per_style=cfg.n_per_style, n_open=cfg.n_open,
        scene=SceneConfig(height=cfg.canvas, width=cfg.canvas,
                          num_classes=cfg.num_classes),
        styles=dict(DEFAULT_STYLES), open_style=DEFAULT_OPEN_STYLE)


# ---------------------------------------------------------------------------
# stages

def run_generate(cfg: RunConfig) -> None:
    from .data import build_benchmark
    paths = Paths(cfg)
    record = paths.record("generate")
    if record.exists():
        rec = read_record(record)
        if not paths.manifest.exists():
            raise PipelineError(f"generate record exists but {paths.manifest} is missing")
        current = _file_sha256(paths.manifest)
        if rec.get("manifest_sha256") == current and rec.get("config_hash") == config_hash(cfg):
            print(f"generate: outputs up to date in {paths.data} (no-op)")
            return
        raise PipelineError(
            "generate outputs exist but do not match this config/seed; "
            "remove the run directory or choose another --out")
    t0 = time.time()
    manifest = build_benchmark(benchmark_config(cfg, paths))
    counts = {s: len(manifest.split_entries(s)) for s in ("source", "compound", "open")}
    save_config(cfg, paths.root / "config.used.cfg")
    write_record(paths, "generate", cfg, time.time() - t0,
                 {"manifest_sha256": _file_sha256(paths.manifest),
                  "n_entries": len(manifest.entries)})
    print(f"generate: {len(manifest.entries)} entries "
          f"(source={counts['source']} compound={counts['compound']} "
          f"open={counts['open']}) -> {paths.data}")


def run_discover(cfg: RunConfig) -> int:
    paths = Paths(cfg)
    require(paths.manifest, "generate-data")
    t0 = time.time()
    manifest = read_manifest(paths.manifest)
    # training code paths never see ground-truth style ids
    stripped = manifest.strip_truth()
    encoder = discovery.StyleEncoder(seed=cfg.master_seed)
    ids, codes = discovery.compute_style_codes(stripped, encoder)

    if cfg.fixed_k() is None:
        k = discovery.select_k(codes, range(2, 6), seed=cfg.master_seed)
        print(f"discover: silhouette selected K={k}")
    else:
        k = cfg.fixed_k()
    assignment = discovery.assign_domains(ids, codes, k, seed=cfg.master_seed)

    paths.discover.mkdir(parents=True, exist_ok=True)
    discovery.write_assignment(assignment, paths.assignment, paths.centroids)
    paths.chosen_k.write_text(f"{k}\n")

    extra = {"k": k}
    truth = {e.image_id: e.true_style_id for e in manifest.split_entries("compound")}
    if all(v is not None for v in truth.values()):
        ari = evaluate.clustering_quality(assignment.mapping, truth)
        (paths.discover / "ari.txt").write_text(f"{float(ari)!r}\n")
        extra["ari"] = repr(float(ari))
        print(f"discover: ARI vs ground-truth styles = {ari:.4f}")
    write_record(paths, "discover", cfg, time.time() - t0, extra)
    return k


def _load_assignment(paths: Paths):
    require(paths.assignment, "discover")
    return discovery.read_assignment(paths.assignment, paths.centroids)


def _ensure_fseg(cfg: RunConfig, paths: Paths,
                 manifest) -> SegNetwork:
    """Source-pretrained segmentation network, trained once per run directory."""
    if paths.fseg_ckpt.exists():
        blob = load_checkpoint(paths.fseg_ckpt)
        if blob.get("config_hash") == config_hash(cfg):
            net = SegNetwork(num_classes=cfg.num_classes, seed=cfg.master_seed)
            net.load_state_dict(blob["state_dict"])
            return net
    net = adapt_mod.train_source_segmentation(
        manifest, adapt_mod.PretrainConfig(iterations=cfg.fseg_iterations,
                                           seed=cfg.master_seed),
        num_classes=cfg.num_classes)
    paths.hallucinate.mkdir(parents=True, exist_ok=True)
    save_checkpoint(paths.fseg_ckpt, net.state_dict(), config_hash(cfg))
    return net


def _ensure_source_baseline(cfg: RunConfig, paths: Paths,
                            manifest) -> SegNetwork:
    """Plain source-supervised model (no augmentation): the source-only
    baseline and the starting point that adaptation fine-tunes."""
    if paths.baseline_ckpt.exists():
        blob = load_checkpoint(paths.baseline_ckpt)
        if blob.get("config_hash") == config_hash(cfg):
            net = SegNetwork(num_classes=cfg.num_classes, seed=cfg.master_seed)
            net.load_state_dict(blob["state_dict"])
            return net
    net = adapt_mod.train_source_segmentation(
        manifest, adapt_mod.PretrainConfig(iterations=cfg.fseg_iterations,
                                           seed=cfg.master_seed, augment=False),
        num_classes=cfg.num_classes)
    paths.adapt.mkdir(parents=True, exist_ok=True)
    save_checkpoint(paths.baseline_ckpt, net.state_dict(), config_hash(cfg))
    return net


def run_hallucinate(cfg: RunConfig) -> None:
    paths = Paths(cfg)
    require(paths.manifest, "generate-data")
    assignment = _load_assignment(paths)
    t0 = time.time()
    manifest = read_manifest(paths.manifest).strip_truth()
    domain_manifests = discovery.partition_manifest(manifest, assignment)
    encoder = discovery.StyleEncoder(seed=cfg.master_seed)

    f_seg = _ensure_fseg(cfg, paths, manifest)

    hcfg = hallucinate.HallucinationConfig(
        iterations=cfg.hallucinate_iterations, weights=_weights(cfg),
        seed=cfg.master_seed)
    generator = hallucinate.train_hallucination(
        manifest, domain_manifests, f_seg, encoder, hcfg,
        log_path=paths.hallucinate / "train_log.csv")
    save_checkpoint(paths.generator_ckpt, generator.state_dict(), config_hash(cfg))

    entries = hallucinate.translate_dataset(
        generator, manifest, domain_manifests, encoder, paths.translated,
        seed=cfg.master_seed)
    write_record(paths, "hallucinate", cfg, time.time() - t0,
                 {"n_translated": sum(len(d) for d in entries)})
    print(f"hallucinate: translated {sum(len(d) for d in entries)} images "
          f"into {len(entries)} latent domains")


def _load_translated(paths: Paths, k: int):
    entries = []
    for j in range(1, k + 1):
        path = require(paths.translated / f"translated_d{j}.tsv", "hallucinate")
        entries.append(hallucinate.read_translated_manifest(path))
    return entries


def run_adapt(cfg: RunConfig) -> None:
    paths = Paths(cfg)
    require(paths.manifest, "generate-data")
    assignment = _load_assignment(paths)
    t0 = time.time()
    manifest = read_manifest(paths.manifest).strip_truth()
    domain_manifests = discovery.partition_manifest(manifest, assignment)
    k = assignment.k

    translated_entries = None
    if cfg.adapt_mode in ("none", "traditional_translated", "domain_wise"):
        translated_entries = _load_translated(paths, k)
    baseline = _ensure_source_baseline(cfg, paths, manifest)

    acfg = adapt_mod.AdaptConfig(
        iterations=cfg.adapt_iterations, scheme=cfg.scheme,
        weights=_weights(cfg), seed=cfg.master_seed,
        checkpoint_every=cfg.checkpoint_every)
    paths.adapt.mkdir(parents=True, exist_ok=True)
    net, checkpoints = adapt_mod.run_adaptation(
        cfg.adapt_mode, manifest, domain_manifests, paths.translated,
        translated_entries, acfg, cfg.num_classes, out_dir=paths.adapt,
        config_hash=config_hash(cfg), log_path=paths.adapt / "train_log.csv",
        init_state=baseline.state_dict())
    save_checkpoint(paths.final_ckpt, net.state_dict(), config_hash(cfg),
                    extra={"iteration": cfg.adapt_iterations})
    write_record(paths, "adapt", cfg, time.time() - t0,
                 {"mode": cfg.adapt_mode, "n_checkpoints": len(checkpoints)})
    print(f"adapt: mode={cfg.adapt_mode} finished "
          f"({len(checkpoints)} checkpoints)")


def _check_hashes(paths: Paths, cfg: RunConfig, stages) -> None:
    hashes = {}
    for stage in stages:
        rec_path = paths.record(stage)
        if rec_path.exists():
            hashes[stage] = read_record(rec_path).get("config_hash")
    if len(set(hashes.values())) > 1:
        raise PipelineError(f"mixed config hashes across stages: {hashes}")


def run_evaluate(cfg: RunConfig) -> evaluate.DomainMetrics:
    paths = Paths(cfg)
    require(paths.final_ckpt, "adapt")
    _check_hashes(paths, cfg, ("generate", "discover", "hallucinate", "adapt"))
    t0 = time.time()
    manifest = read_manifest(paths.manifest)
    open_style = len(DEFAULT_STYLES) + 1

    blob = load_checkpoint(paths.final_ckpt)
    net = SegNetwork(num_classes=cfg.num_classes)
    net.load_state_dict(blob["state_dict"])

    paths.evaluate.mkdir(parents=True, exist_ok=True)
    metrics = evaluate.evaluate_model(net, manifest, cfg.num_classes, open_style)
    _write_domain_metrics(paths.evaluate / "domain_metrics.csv", metrics)

    ckpt_dir = paths.adapt / "checkpoints"
    ckpts = sorted((int(p.stem.split("_")[1]), p) for p in ckpt_dir.glob("iter_*.ckpt"))
    if len(ckpts) >= 2:
        evaluate.biased_alignment_curves(
            ckpts, manifest, cfg.num_classes,
            out_csv=paths.evaluate / "curves.csv",
            plot_dir=paths.evaluate / "plots")

    matrix, tags = evaluate.export_features(net, manifest)
    evaluate.write_features(paths.evaluate / "features.tsv", matrix, tags)

    write_record(paths, "evaluate", cfg, time.time() - t0,
                 {"compound_miou": f"{metrics.compound_mean:.6f}",
                  "overall_miou": f"{metrics.overall_mean:.6f}"})
    print(f"evaluate: compound mIoU={metrics.compound_mean:.4f} "
          f"C+O mIoU={metrics.overall_mean:.4f}")
    return metrics


def _write_domain_metrics(path: Path, metrics: evaluate.DomainMetrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["style", "miou"])
        for s, v in sorted(metrics.per_style.items()):
            w.writerow([s, f"{v:.6f}"])
        w.writerow(["compound_mean", f"{metrics.compound_mean:.6f}"])
        w.writerow(["overall_mean", f"{metrics.overall_mean:.6f}"])
        w.writerow(["compound_mean_weighted", f"{metrics.compound_mean_weighted:.6f}"])
        w.writerow(["overall_mean_weighted", f"{metrics.overall_mean_weighted:.6f}"])


def run_all(cfg: RunConfig) -> evaluate.DomainMetrics:
    run_generate(cfg)
    run_discover(cfg)
    if cfg.adapt_mode in ("none", "traditional_translated", "domain_wise"):
        run_hallucinate(cfg)
    run_adapt(cfg)
    return run_evaluate(cfg)


# ---------------------------------------------------------------------------
# ablation presets

ABLATION_PRESETS = ("framework_design", "k_sweep", "adapt_mode")


def _framework_rows(cfg: RunConfig):
    return [
        ("source_only", {"adapt_mode": "source_only"}),
        ("traditional_uda", {"adapt_mode": "traditional_raw"}),
        ("discover_adapt", {"adapt_mode": "domain_wise_raw"}),
        ("discover_hallucinate", {"adapt_mode": "none"}),
        ("discover_hallucinate_trad", {"adapt_mode": "traditional_translated"}),
        ("full_dha", {"adapt_mode": "domain_wise"}),
    ]


def _k_sweep_rows(cfg: RunConfig):
    rows = [(f"k{k}", {"adapt_mode": "domain_wise", "k": str(k)})
            for k in range(2, 6)]
    rows.append(("style_loss_off", {"adapt_mode": "domain_wise", "k": "3",
                                    "lambda_style": 0.0}))
    return rows


def _adapt_mode_rows(cfg: RunConfig):
    return [
        ("none", {"adapt_mode": "none", "scheme": "short"}),
        ("traditional_log", {"adapt_mode": "traditional_translated", "scheme": "short"}),
        ("traditional_ls", {"adapt_mode": "traditional_translated", "scheme": "long"}),
        ("domain_wise_log", {"adapt_mode": "domain_wise", "scheme": "short"}),
        ("domain_wise_ls", {"adapt_mode": "domain_wise", "scheme": "long"}),
    ]


def run_ablate(cfg: RunConfig, preset: str) -> list[dict]:
    if preset not in ABLATION_PRESETS:
        raise PipelineError(f"unknown ablation preset {preset!r}; "
                            f"choose from {ABLATION_PRESETS}")
    rows = {"framework_design": _framework_rows,
            "k_sweep": _k_sweep_rows,
            "adapt_mode": _adapt_mode_rows}[preset](cfg)
    base_out = Path(cfg.out_dir) / f"ablate_{preset}"
    open_style = len(DEFAULT_STYLES) + 1
    results = []
    for name, overrides in rows:
        row_cfg = dataclasses.replace(cfg, out_dir=str(base_out / name))
        source_only = overrides.get("adapt_mode") == "source_only"
        if not source_only:
            row_cfg = dataclasses.replace(row_cfg, **overrides)
        print(f"[ablate:{preset}] running row {name!r}")
        if source_only:
            metrics = _run_source_only(row_cfg)
        else:
            metrics = run_all(row_cfg)
        row = {"row": name}
        for s in sorted(metrics.per_style):
            row[f"style_{s}_miou"] = metrics.per_style[s]
        row["compound_miou"] = metrics.compound_mean
        row["overall_miou"] = metrics.overall_mean
        results.append(row)
    out_csv = base_out / "table.csv"
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(results[0]))
        w.writeheader()
        for r in results:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                        for k, v in r.items()})
    print(f"ablate: wrote {out_csv}")
    return results


def _run_source_only(cfg: RunConfig) -> evaluate.DomainMetrics:
    """Baseline row: segmentation trained on raw source, no adaptation."""
    paths = Paths(cfg)
    run_generate(cfg)
    manifest = read_manifest(paths.manifest)
    net = _ensure_source_baseline(cfg, paths, manifest.strip_truth())
    open_style = len(DEFAULT_STYLES) + 1
    metrics = evaluate.evaluate_model(net, manifest, cfg.num_classes, open_style)
    paths.evaluate.mkdir(parents=True, exist_ok=True)
    _write_domain_metrics(paths.evaluate / "domain_metrics.csv", metrics)
    return metrics
