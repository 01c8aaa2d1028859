"""Pipeline stages. Each reads upstream artifacts, writes its own directory
under ``out_dir`` and stamps it; a stage whose stamp still matches is skipped."""

from __future__ import annotations

import csv
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..contrastive import PretrainConfig, encode, pretrain
from ..diffexpr import (
    DEConfig,
    build_de_feature,
    load_gene_models,
    predict_de,
    read_driver_list,
    read_expression,
    read_predictions,
    save_gene_models,
    synthesize_expression,
    train_gene_models,
    write_driver_list,
    write_expression,
    write_predictions,
)
from ..diffexpr.targets import binarize_de, de_target, fold_change
from ..errors import ConfigError, ConstantVector, MissingUpstreamArtifact, SingleClass, TooFewValues
from ..evaluation import (
    accuracy,
    bh_correct,
    confusion,
    fc_accuracy_bins,
    patient_split,
    pearson,
    pr_points,
    random_baseline,
    roc_auc,
    roc_points,
    spearman,
    wilcoxon_rank_sum,
    write_curve,
    write_metrics,
)
from ..heatmap import ScoreMap, gene_saliency, inside_outside_means, render_heatmap, score_image, tile_gallery, write_heatmap
from ..heatmap.saliency import INTERPRETATION
from ..ingest import SynthParams, ingest_slide, synthesize_slide, write_labels, write_manifest
from ..ingest.slideio import load_slide, save_slide
from ..mil import DiagConfig, load_model, read_attention, save_model, train_diagnosis, write_attention
from . import artifacts as art
from .config import PipelineConfig
from .provenance import check_consistent, file_digest, is_current, require_stamp, write_stamp

log = logging.getLogger(__name__)

POOLINGS = ("gated", "mean", "max")
DE_MODES = ("regression", "classification")
DIAG_RATIOS = (0.8, 0.1, 0.1)
DE_RATIOS = (0.7, 0.1, 0.2)  # test sets partition the patients when k = 5
HEATMAP_COLUMN = "score"  # pre-softmax attention; "attention" holds the softmax weights

STAGE_PREFIXES = {
    "synth": ("synth_",),
    "tile": ("tile_",),
    "pretrain": ("pretrain_",),
    "train-diag": ("diag_", "eval_k"),
    "train-de": ("de_", "eval_k"),
    "eval": ("eval_", "heatmap_downsample"),
    "heatmap": ("heatmap_",),
}
UPSTREAM = {
    "synth": (),
    "tile": ("synth",),
    "pretrain": ("tile",),
    "train-diag": ("pretrain",),
    "train-de": ("train-diag",),
    "eval": ("train-diag", "train-de"),
    "heatmap": ("train-diag", "train-de"),
}
STAGE_DIR = {
    "synth": "synth",
    "tile": "tiles",
    "pretrain": "pretrain",
    "train-diag": "diag",
    "train-de": "de",
    "eval": "eval",
    "heatmap": "heatmap",
}


def stage_hash(cfg: PipelineConfig, stage: str) -> str:
    return cfg.hash(STAGE_PREFIXES[stage])


def _upstream(cfg: PipelineConfig, stage: str) -> dict:
    out = {}
    for up in UPSTREAM[stage]:
        if up == "synth" and not cfg.synthetic:
            continue
        out[up] = require_stamp(cfg.out / STAGE_DIR[up], up)["config_hash"]
    return out


def _run(cfg: PipelineConfig, stage: str, body, inputs: dict | None = None) -> bool:
    """Run ``body`` unless the stamp matches; return True when work was done."""
    stage_dir = cfg.out / STAGE_DIR[stage]
    upstream = _upstream(cfg, stage)
    inputs = inputs or {}
    h = stage_hash(cfg, stage)
    if is_current(stage_dir, h, upstream, inputs):
        log.info("%s: up to date, skipping", stage)
        return False
    stage_dir.mkdir(parents=True, exist_ok=True)
    outputs = body(stage_dir)
    write_stamp(stage_dir, stage, h, upstream, inputs, outputs)
    return True


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# synth ---------------------------------------------------------------------

def _synth_one(job):
    slide_id, patient_id, fraction, seed, size, mpp, slides_dir, masks_dir = job
    params = SynthParams(height=size, width=size, tumor_fraction=fraction, mpp=mpp)
    slide, mask = synthesize_slide(params, seed, slide_id, patient_id)
    save_slide(slide, Path(slides_dir) / f"{slide_id}.png")
    Image.fromarray(mask.astype(np.uint8) * 255).save(Path(masks_dir) / f"{slide_id}.png")
    return slide_id


def cmd_synth(cfg: PipelineConfig) -> bool:
    """Synthetic cohort: one tumor and one normal slide per patient, masks,
    labels and paired expression."""

    def body(stage_dir: Path):
        slides_dir, masks_dir = stage_dir / "slides", stage_dir / "masks"
        slides_dir.mkdir(exist_ok=True)
        masks_dir.mkdir(exist_ok=True)
        rng = np.random.default_rng([cfg.seed, 3])
        fractions = rng.uniform(cfg.synth_tumor_min, cfg.synth_tumor_max, cfg.synth_patients)
        jobs, rows, share = [], [], {}
        for i in range(cfg.synth_patients):
            pid = f"P{i:03d}"
            for kind, frac in (("T", float(fractions[i])), ("N", 0.0)):
                sid = f"{pid}_{kind}"
                seed = int(np.random.default_rng([cfg.seed, 5, i, kind == "T"]).integers(2**31))
                jobs.append((sid, pid, frac, seed, cfg.synth_size, cfg.synth_mpp, str(slides_dir), str(masks_dir)))
                rows.append({"slide_id": sid, "patient_id": pid, "label": "tumor" if frac > 0 else "normal"})
            share[pid] = float(fractions[i]) / SynthParams().tissue_coverage
        _map(_synth_one, jobs, cfg.workers)
        write_labels(rows, stage_dir / "labels.csv")
        records, genes = synthesize_expression(share, seed=cfg.seed)
        write_expression(stage_dir / "expression.tsv", records)
        write_driver_list(stage_dir / "drivers.txt", genes)
        with open(stage_dir / "tumor_share.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "tumor_fraction", "tumor_share"])
            for i in range(cfg.synth_patients):
                pid = f"P{i:03d}"
                w.writerow([pid, repr(float(fractions[i])), repr(share[pid])])
        outs = [stage_dir / n for n in ("labels.csv", "expression.tsv", "drivers.txt", "tumor_share.csv")]
        return outs + sorted(slides_dir.iterdir()) + sorted(masks_dir.iterdir())

    if not cfg.synthetic:
        raise ConfigError("synth writes its own slides; leave slides_dir empty to use them")
    return _run(cfg, "synth", body)


# tile ----------------------------------------------------------------------

def _tile_one(job):
    slide_path, row, out, c = job
    slide = load_slide(slide_path, row["patient_id"], row["label"], c["default_mpp"])
    m = ingest_slide(slide, c["tile_px"], c["tile_um"], c["downsample"], c["min_tissue_px"], c["guard"])
    path = art.manifest_path(Path(out), row["slide_id"])
    write_manifest(m, path)
    return str(path)


def _external_inputs(cfg: PipelineConfig) -> dict:
    if cfg.synthetic:
        return {}
    files = [cfg.labels_path] + sorted(p for p in cfg.slides_path.iterdir() if p.is_file())
    return {str(p.name): file_digest(p) for p in files}


def cmd_tile(cfg: PipelineConfig) -> bool:
    def body(stage_dir: Path):
        labels = art.labels_by_slide(cfg.labels_path)
        files = art.slide_files(cfg.slides_path)
        missing = sorted(set(labels) - set(files))
        if missing:
            raise MissingUpstreamArtifact(cfg.slides_path / missing[0], "slide listed in labels CSV")
        (stage_dir / "manifests").mkdir(exist_ok=True)
        c = dict(
            tile_px=cfg.tile_px, tile_um=cfg.tile_um, downsample=cfg.tile_mask_downsample,
            min_tissue_px=cfg.tile_min_tissue_px, guard=cfg.tile_tissue_guard, default_mpp=cfg.tile_default_mpp,
        )
        jobs = [(str(files[s]), labels[s], str(cfg.out), c) for s in sorted(labels)]
        return [Path(p) for p in _map(_tile_one, jobs, cfg.workers)]

    return _run(cfg, "tile", body, _external_inputs(cfg))


# pretrain ------------------------------------------------------------------

def pretrain_config(cfg: PipelineConfig) -> PretrainConfig:
    return PretrainConfig(
        tau=cfg.pretrain_tau, lr=cfg.pretrain_lr, momentum=cfg.pretrain_momentum,
        weight_decay=cfg.pretrain_weight_decay, bank_lr=cfg.pretrain_bank_lr, bank_size=cfg.pretrain_bank_size,
        bank_fraction=cfg.pretrain_bank_fraction, batch_size=cfg.pretrain_batch_size, epochs=cfg.pretrain_epochs,
        seed=cfg.seed, encoder="small" if cfg.pretrain_encoder == "small" else "resnet50",
        embed_dim=cfg.pretrain_embed_dim, proj_dim=cfg.pretrain_proj_dim, input_px=cfg.pretrain_input_px,
        weights_path=cfg.pretrain_weights_path or None,
    )


def cmd_pretrain(cfg: PipelineConfig) -> bool:
    def body(stage_dir: Path):
        labels = art.labels_by_slide(cfg.labels_path)
        files = art.slide_files(cfg.slides_path)
        manifests = art.read_manifests(cfg.out, sorted(labels))
        pool = {}
        for k, sid in enumerate(sorted(labels)):
            m = manifests[sid]
            n = len(m.coords)
            if n == 0:
                continue
            take = min(n, cfg.pretrain_tiles_per_slide)
            idx = np.sort(np.random.default_rng([cfg.seed, 7, k]).choice(n, size=take, replace=False))
            pool[sid] = art.normalized_tiles(files[sid], m, idx, default_mpp=cfg.tile_default_mpp)
        result = pretrain(pretrain_config(cfg), pool, stage_dir)
        epochs = sorted(stage_dir.glob("checkpoint_epoch*.pt"))
        shutil.copyfile(epochs[-1], stage_dir / "encoder.pt")
        outputs = [stage_dir / "encoder.pt", stage_dir / "loss_trace.csv"] + epochs
        for sid in sorted(labels):
            m = manifests[sid]
            tiles = art.normalized_tiles(files[sid], m, default_mpp=cfg.tile_default_mpp)
            H = encode(result.model, tiles) if len(tiles) else np.zeros((0, cfg.pretrain_embed_dim), np.float32)
            path = art.embedding_path(cfg.out, sid)
            art.write_embeddings(path, sid, H, m.coords)
            outputs.append(path)
        return outputs

    return _run(cfg, "pretrain", body)


# train-diag ----------------------------------------------------------------

def diag_config(cfg: PipelineConfig, pooling: str, fold: int) -> DiagConfig:
    return DiagConfig(
        pooling=pooling, attn_dim=cfg.diag_attn_dim, lr=cfg.diag_lr, momentum=cfg.diag_momentum,
        weight_decay=cfg.diag_weight_decay, max_epochs=cfg.diag_max_epochs, patience=cfg.diag_patience,
        seed=cfg.seed * 1000 + fold,
    )


def _plans_json(plans) -> list:
    return [{"fold": p.fold_id, "train": list(p.train), "val": list(p.val), "test": list(p.test)} for p in plans]


def cmd_train_diag(cfg: PipelineConfig) -> bool:
    def body(stage_dir: Path):
        encoder_file = art.require(cfg.out / "pretrain" / "encoder.pt", "run `histcode pretrain` first")
        before = file_digest(encoder_file)
        labels = art.labels_by_slide(cfg.labels_path)
        bags = art.load_bags(cfg.out, labels)
        plans = patient_split([b.patient_id for b in bags], cfg.eval_k, DIAG_RATIOS, cfg.seed)
        (stage_dir / "folds.json").write_text(json.dumps(_plans_json(plans), indent=2) + "\n")
        outputs = [stage_dir / "folds.json"]
        rows, attn_source = [], {}
        for plan in plans:
            fold_dir = stage_dir / f"fold{plan.fold_id}"
            fold_dir.mkdir(exist_ok=True)
            split = {name: [b for b in bags if b.patient_id in set(getattr(plan, name))] for name in ("train", "val", "test")}
            for pooling in POOLINGS:
                model = train_diagnosis(split["train"], split["val"], diag_config(cfg, pooling, plan.fold_id))
                save_model(fold_dir / f"{pooling}.npz", model)
                outputs.append(fold_dir / f"{pooling}.npz")
                for b, p in zip(split["test"], model.predict(split["test"])):
                    rows.append([plan.fold_id, b.slide_id, b.patient_id, b.label, pooling, repr(float(p))])
                if pooling == "gated":
                    for b in bags:
                        held = b.patient_id in set(plan.test)
                        if b.slide_id not in attn_source or (held and not attn_source[b.slide_id][1]):
                            attn_source[b.slide_id] = (plan.fold_id, held, model)
        with open(stage_dir / "predictions.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "slide_id", "patient_id", "label", "pooling", "prob"])
            w.writerows(rows)
        (stage_dir / "attention").mkdir(exist_ok=True)
        index = []
        for b in bags:
            fold, held, model = attn_source[b.slide_id]
            path = art.attention_path(cfg.out, b.slide_id)
            write_attention(path, b.coords, model.attention(b), model.attention_scores(b))
            index.append([b.slide_id, fold, int(held)])
            outputs.append(path)
        with open(stage_dir / "attention" / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slide_id", "fold", "held_out"])
            w.writerows(index)
        if file_digest(encoder_file) != before:
            raise RuntimeError("encoder weights changed during diagnosis training")
        (stage_dir / "encoder_sha256.txt").write_text(before + "\n")
        return outputs + [stage_dir / "predictions.csv", stage_dir / "attention" / "index.csv", stage_dir / "encoder_sha256.txt"]

    return _run(cfg, "train-diag", body)


def read_diag_predictions(out: Path) -> list[dict]:
    with open(art.require(out / "diag" / "predictions.csv", "run `histcode train-diag` first"), newline="") as fh:
        return [
            {"fold": int(r["fold"]), "slide_id": r["slide_id"], "patient_id": r["patient_id"],
             "label": int(r["label"]), "pooling": r["pooling"], "prob": float(r["prob"])}
            for r in csv.DictReader(fh)
        ]


def read_attention_index(out: Path) -> dict:
    with open(art.require(out / "diag" / "attention" / "index.csv", "run `histcode train-diag` first"), newline="") as fh:
        return {r["slide_id"]: (int(r["fold"]), r["held_out"] == "1") for r in csv.DictReader(fh)}


# train-de ------------------------------------------------------------------

def _de_genes(cfg: PipelineConfig, records) -> list[str]:
    seen = list(dict.fromkeys(r.gene_symbol for r in records))
    if cfg.drivers_path.is_file():
        drivers = read_driver_list(cfg.drivers_path)
        return [g for g in drivers if g in set(seen)]
    return seen


def de_dataset(cfg: PipelineConfig):
    """``(patients, genes, X, tables, tumor_slide)``: DE features from each
    patient's tumor slide and per-mode target matrices."""
    records = read_expression(art.require(cfg.expression_path, "expression TSV"))
    genes = _de_genes(cfg, records)
    labels = art.labels_by_slide(cfg.labels_path)
    tumor_slide = {}
    for sid in sorted(labels):
        row = labels[sid]
        if row["label"] == "tumor" and row["patient_id"] not in tumor_slide:
            tumor_slide[row["patient_id"]] = sid
    expr = {}
    for r in records:
        expr[(r.patient_id, r.gene_symbol)] = fold_change(r.tumor_expr, r.normal_expr, cfg.de_eps)
    patients = sorted({r.patient_id for r in records} & set(tumor_slide))
    feats = []
    for pid in patients:
        sid = tumor_slide[pid]
        H, _ = art.read_embeddings(art.embedding_path(cfg.out, sid))
        _, a = read_attention(art.require(art.attention_path(cfg.out, sid), "run `histcode train-diag` first"))
        feats.append(build_de_feature(H, a, cfg.de_l, strict=cfg.de_strict))
    X = np.stack(feats) if feats else np.zeros((0, 0))
    fc = np.array([[expr.get((p, g), np.nan) for g in genes] for p in patients], dtype=np.float64).reshape(len(patients), len(genes))
    with np.errstate(invalid="ignore"):
        tables = {
            "regression": np.where(np.isfinite(fc), de_target(np.nan_to_num(fc)), np.nan),
            "classification": np.where(np.isfinite(fc), binarize_de(np.nan_to_num(fc), cfg.de_threshold), np.nan).astype(np.float64),
        }
    return patients, genes, X, tables, fc, tumor_slide


def de_config(cfg: PipelineConfig, mode: str) -> DEConfig:
    return DEConfig(mode=mode, alphas=tuple(cfg.de_alphas), default_alpha=cfg.de_default_alpha)


def cmd_train_de(cfg: PipelineConfig) -> bool:
    def body(stage_dir: Path):
        patients, genes, X, tables, _, _ = de_dataset(cfg)
        plans = patient_split(patients, cfg.eval_k, DE_RATIOS, cfg.seed)
        (stage_dir / "folds.json").write_text(json.dumps(_plans_json(plans), indent=2) + "\n")
        row_of = {p: i for i, p in enumerate(patients)}
        rows, outputs = [], [stage_dir / "folds.json"]
        for plan in plans:
            idx = {name: [row_of[p] for p in getattr(plan, name)] for name in ("train", "val", "test")}
            fold_dir = stage_dir / f"fold{plan.fold_id}"
            fold_dir.mkdir(exist_ok=True)
            for mode in DE_MODES:
                Y = tables[mode]
                models = train_gene_models(X[idx["train"]], Y[idx["train"]], genes, de_config(cfg, mode), X[idx["val"]], Y[idx["val"]])
                save_gene_models(fold_dir / f"{mode}.npz", models)
                outputs.append(fold_dir / f"{mode}.npz")
                for i in idx["test"]:
                    for j, g in enumerate(genes):
                        rows.append((patients[i], g, predict_de(X[i], models[g]), Y[i, j], mode))
        write_predictions(stage_dir / "predictions.csv", rows)
        return outputs + [stage_dir / "predictions.csv"]

    inputs = {}
    for p in (cfg.expression_path, cfg.drivers_path):
        if p.is_file() and not cfg.synthetic:
            inputs[p.name] = file_digest(p)
    return _run(cfg, "train-de", body, inputs)


# eval ----------------------------------------------------------------------

def _safe(fn, *args):
    try:
        return fn(*args)
    except (ConstantVector, SingleClass, TooFewValues, ValueError):
        return None


def _diagnosis_metrics(preds, stage_dir: Path) -> dict:
    out = {}
    for pooling in POOLINGS:
        sel = [r for r in preds if r["pooling"] == pooling]
        y = np.array([r["label"] for r in sel])
        p = np.array([r["prob"] for r in sel])
        entry = {"n": len(sel)}
        if len(sel):
            entry["accuracy"] = accuracy(y, p)
            entry["confusion"] = confusion(y, (p > 0.5).astype(int))
        auc = _safe(roc_auc, y, p)
        entry["roc_auc"] = auc
        if auc is not None:
            fpr, tpr, thr = roc_points(y, p)
            rec, prec, thr2 = pr_points(y, p)
            write_curve(stage_dir / f"roc_{pooling}.csv", {"fpr": fpr, "tpr": tpr, "threshold": thr})
            write_curve(stage_dir / f"pr_{pooling}.csv", {"recall": rec, "precision": prec, "threshold": thr2})
            entry["roc_points"] = {"fpr": fpr, "tpr": tpr}
            entry["pr_points"] = {"recall": rec, "precision": prec}
        folds = sorted({r["fold"] for r in sel})
        entry["fold_auc"] = [
            _safe(roc_auc, [r["label"] for r in sel if r["fold"] == f], [r["prob"] for r in sel if r["fold"] == f]) for f in folds
        ]
        out[pooling] = entry
    return out


def _de_metrics(cfg: PipelineConfig, fold_of: dict, genes, fc) -> dict:
    preds = read_predictions(art.require(cfg.out / "de" / "predictions.csv", "run `histcode train-de` first"))
    out = {}
    reg = [r for r in preds if r[4] == "regression"]
    per_gene, fold_r, base_r = {}, {}, {}
    for gi, g in enumerate(genes):
        rows = [r for r in reg if r[1] == g]
        actual = np.array([r[3] for r in rows])
        pred = np.array([r[2] for r in rows])
        entry = {"pearson": _safe(pearson, pred, actual), "spearman": _safe(spearman, pred, actual)}
        folds = sorted({fold_of[r[0]] for r in rows})
        fr, br = [], []
        for f in folds:
            sel = [k for k, r in enumerate(rows) if fold_of[r[0]] == f]
            fr.append(_safe(pearson, pred[sel], actual[sel]))
            draws = _safe(random_baseline, actual, len(sel), [cfg.seed, 11, gi, f])
            br.append(None if draws is None else _safe(pearson, draws, actual[sel]))
        entry["fold_pearson"], entry["baseline_fold_pearson"] = fr, br
        a = [v for v in fr if v is not None]
        b = [v for v in br if v is not None]
        entry["wilcoxon_p"] = wilcoxon_rank_sum(a, b) if a and b else None
        finite = np.isfinite(fc[:, gi]) if fc.size else np.zeros(0, bool)
        entry["mean_fc"] = float(fc[finite, gi].mean()) if finite.any() else None
        per_gene[g] = entry
        fold_r[g], base_r[g] = a, b
    tested = [g for g in genes if per_gene[g]["wilcoxon_p"] is not None]
    adjusted = bh_correct([per_gene[g]["wilcoxon_p"] for g in tested]) if tested else []
    for g, q in zip(tested, adjusted):
        per_gene[g]["wilcoxon_p_bh"] = float(q)
    scored = [g for g in genes if per_gene[g]["pearson"] is not None]
    rs = np.array([per_gene[g]["pearson"] for g in scored])
    base_pooled = [v for g in genes for v in base_r[g]]
    fc_genes = [g for g in scored if per_gene[g]["mean_fc"] is not None]
    out["regression"] = {
        "per_gene": per_gene,
        "mean_pearson": float(rs.mean()) if len(rs) else None,
        "n_pearson_gt_0.2": int(np.sum(rs > 0.2)),
        "n_pearson_gt_0.4": int(np.sum(rs > 0.4)),
        "cohort_wilcoxon_p": wilcoxon_rank_sum([v for g in genes for v in fold_r[g]], base_pooled) if base_pooled and scored else None,
        "fc_bins": fc_accuracy_bins([per_gene[g]["pearson"] for g in fc_genes], [per_gene[g]["mean_fc"] for g in fc_genes], cfg.eval_fc_bin_edges)
        if fc_genes else [],
    }
    cls = [r for r in preds if r[4] == "classification"]
    per_gene_c = {}
    for g in genes:
        rows = [r for r in cls if r[1] == g]
        y = np.array([int(r[3]) for r in rows])
        p = np.array([r[2] for r in rows])
        per_gene_c[g] = {"roc_auc": _safe(roc_auc, y, p), "accuracy": accuracy(y, p) if len(rows) else None, "positives": int(y.sum())}
    out["classification"] = {"per_gene": per_gene_c}
    return out


def _localization(cfg: PipelineConfig, labels: dict, column: str = HEATMAP_COLUMN) -> dict | None:
    """Normalized attention inside vs outside the tumor mask on held-out tumor slides."""
    if not cfg.masks_path.is_dir():
        return None
    index = read_attention_index(cfg.out)
    per_slide = {}
    for sid in sorted(index):
        fold, held = index[sid]
        if not held or labels[sid]["label"] != "tumor":
            continue
        mask_file = cfg.masks_path / f"{sid}.png"
        if not mask_file.is_file():
            continue
        mask = np.asarray(Image.open(mask_file)) > 0
        coords, a = read_attention(art.attention_path(cfg.out, sid), column)
        sm = ScoreMap(sid, coords, a, tile_px=cfg.tile_px)
        img = score_image(sm, mask.shape[1], mask.shape[0], cfg.heatmap_downsample)
        inside, outside = inside_outside_means(img, mask, cfg.heatmap_downsample)
        per_slide[sid] = {"inside": inside, "outside": outside, "difference": inside - outside}
    diffs = [v["difference"] for v in per_slide.values() if np.isfinite(v["difference"])]
    return {
        "score": column,
        "per_slide": per_slide,
        "n_slides": len(per_slide),
        "fraction_difference_ge_0.2": float(np.mean(np.array(diffs) >= 0.2)) if diffs else None,
    }


def _plots(stage_dir: Path, diag: dict) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outs = []
    for kind, (xk, yk, xl, yl) in {"roc": ("fpr", "tpr", "false positive rate", "true positive rate"),
                                    "pr": ("recall", "precision", "recall", "precision")}.items():
        fig, ax = plt.subplots(figsize=(4, 4))
        for pooling in POOLINGS:
            pts = diag[pooling].get(f"{kind}_points")
            if pts is not None:
                ax.plot(pts[xk], pts[yk], label=f"{pooling} (AUC {diag[pooling]['roc_auc']:.3f})" if kind == "roc" else pooling)
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        ax.legend(loc="lower right" if kind == "roc" else "lower left")
        fig.tight_layout()
        path = stage_dir / f"{kind}.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        outs.append(path)
    return outs


def _consistent_stamps(cfg: PipelineConfig) -> dict:
    """Upstream stamps, refusing artifacts produced under a different config."""
    stamps = {s: require_stamp(cfg.out / STAGE_DIR[s], s) for s in ("tile", "pretrain", "train-diag", "train-de")}
    check_consistent(stamps, {s: stage_hash(cfg, s) for s in stamps})
    return stamps


def cmd_eval(cfg: PipelineConfig) -> bool:
    def body(stage_dir: Path):
        stamps = _consistent_stamps(cfg)
        labels = art.labels_by_slide(cfg.labels_path)
        diag = _diagnosis_metrics(read_diag_predictions(cfg.out), stage_dir)
        patients, genes, _, _, fc, _ = de_dataset(cfg)
        folds = json.loads(art.require(cfg.out / "de" / "folds.json").read_text())
        fold_of = {p: f["fold"] for f in folds for p in f["test"]}
        report = {
            "config_hash": {s: stamps[s]["config_hash"] for s in sorted(stamps)} | {"eval": stage_hash(cfg, "eval")},
            "diagnosis": diag,
            "differential_expression": _de_metrics(cfg, fold_of, genes, fc),
            "localization": _localization(cfg, labels),
            "localization_softmax_weights": _localization(cfg, labels, "attention"),
        }
        write_metrics(stage_dir / "metrics.json", report)
        outs = [stage_dir / "metrics.json"] + sorted(stage_dir.glob("*.csv"))
        return outs + _plots(stage_dir, diag)

    _consistent_stamps(cfg)
    return _run(cfg, "eval", body)


# heatmap -------------------------------------------------------------------

def cmd_heatmap(cfg: PipelineConfig) -> bool:
    def body(stage_dir: Path):
        labels = art.labels_by_slide(cfg.labels_path)
        files = art.slide_files(cfg.slides_path)
        index = read_attention_index(cfg.out)
        manifests = art.read_manifests(cfg.out, sorted(index))
        outputs = []
        for sid in sorted(index):
            m = manifests[sid]
            coords, a = read_attention(art.attention_path(cfg.out, sid), HEATMAP_COLUMN)
            meta = {"fold": index[sid][0], "held_out": index[sid][1], "score": "pre-softmax attention"}
            sm = ScoreMap(sid, coords, a, "diagnosis_attention", m.tile_px, meta)
            w, h = int(m.metadata["width"]), int(m.metadata["height"])
            path = stage_dir / "attention" / f"{sid}.png"
            write_heatmap(path, render_heatmap(sm, w, h, cfg.heatmap_downsample), sm, cfg.heatmap_downsample)
            outputs += [path, path.with_suffix(".json")]
            n = min(cfg.heatmap_gallery_n, len(a))
            if n:
                tiles = art.normalized_tiles(files[sid], m, default_mpp=cfg.tile_default_mpp)
                top, bottom, te, be = tile_gallery(tiles, coords, a, n)
                gdir = stage_dir / "gallery"
                gdir.mkdir(exist_ok=True)
                for name, img in (("top", top), ("bottom", bottom)):
                    Image.fromarray(img).save(gdir / f"{sid}_{name}.png")
                    outputs.append(gdir / f"{sid}_{name}.png")
                (gdir / f"{sid}.json").write_text(json.dumps({"top": te, "bottom": be}, indent=2) + "\n")
                outputs.append(gdir / f"{sid}.json")
        genes = [g for g in cfg.heatmap_genes if g]
        if genes:
            folds = json.loads(art.require(cfg.out / "de" / "folds.json", "run `histcode train-de` first").read_text())
            fold_of = {p: f["fold"] for f in folds for p in f["test"]}
            patients, all_genes, _, _, _, tumor_slide = de_dataset(cfg)
            cache = {}
            for pid in patients:
                f = fold_of.get(pid)
                if f is None:
                    continue
                if f not in cache:
                    cache[f] = load_gene_models(cfg.out / "de" / f"fold{f}" / "regression.npz")
                sid = tumor_slide[pid]
                H, coords = art.read_embeddings(art.embedding_path(cfg.out, sid))
                m = manifests.get(sid) or art.read_manifests(cfg.out, [sid])[sid]
                for g in genes:
                    if g not in cache[f]:
                        continue
                    scores = gene_saliency(H, cache[f][g])
                    sm = ScoreMap(sid, coords, scores, f"gene_saliency:{g}", m.tile_px, {"fold": f, "interpretation": INTERPRETATION})
                    path = stage_dir / "genes" / g / f"{sid}.png"
                    w, h = int(m.metadata["width"]), int(m.metadata["height"])
                    write_heatmap(path, render_heatmap(sm, w, h, cfg.heatmap_downsample), sm, cfg.heatmap_downsample)
                    outputs += [path, path.with_suffix(".json")]
        return outputs

    _consistent_stamps(cfg)
    return _run(cfg, "heatmap", body)


COMMANDS = {
    "synth": cmd_synth,
    "tile": cmd_tile,
    "pretrain": cmd_pretrain,
    "train-diag": cmd_train_diag,
    "train-de": cmd_train_de,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
}
PIPELINE = ("synth", "tile", "pretrain", "train-diag", "train-de", "eval", "heatmap")


def configure_runtime(cfg: PipelineConfig) -> None:
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    else:
        torch.set_num_threads(cfg.workers)


def run_all(cfg: PipelineConfig, stages=PIPELINE) -> dict:
    configure_runtime(cfg)
    done = {}
    for s in stages:
        if s == "synth" and not cfg.synthetic:
            continue
        done[s] = COMMANDS[s](cfg)
    return done
