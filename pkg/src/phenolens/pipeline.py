"""End-to-end run: synthetic data, pretraining, embedding, probing, analysis."""

import logging

import numpy as np

from . import __version__
from .analytics import (
    EmbeddingSet,
    anomaly_scores,
    auroc,
    center_similarities,
    center_similarity,
    class_centers,
    concentration_gradient,
    detect_novel,
    drift_score,
    mean_similarity_matrix,
    pairwise_stats,
)
from .contrastive import train_ssl
from .data import generate_dataset, images_to_matrix, quantize
from .encoder import encode, init_params
from .errors import DataError
from .io import embeddings_from_float32
from .probe import evaluate, label_fraction_curve, train_probe

logger = logging.getLogger(__name__)


def split_samples(samples, split):
    """Deterministic per-class split by sample index modulo ``sum(split)``."""
    total = sum(split)
    parts = ([], [], [])
    counters = {}
    for s in samples:
        i = counters.get(s.label, 0)
        counters[s.label] = i + 1
        r = i % total
        parts[0 if r < split[0] else 1 if r < split[0] + split[1] else 2].append(s)
    return parts


def embed_samples(params, samples):
    X = images_to_matrix([s.image for s in samples])
    return embeddings_from_float32(
        [s.id for s in samples],
        encode(params, X),
        [s.label for s in samples],
        np.array([s.concentration for s in samples], dtype=np.float64),
    )


def analyze(E_test, E_train, threshold=0.7, healthy_label="Normal", classes=None):
    """Latent-space report for a test set, with centers from the training set."""
    centers = class_centers(E_train, classes)
    scores = anomaly_scores(E_test.H, centers)
    nearest = np.argmin(scores, axis=1)
    flags, max_sim = detect_novel(E_test, centers, threshold)
    report = {
        "classes": list(centers.classes),
        "mean_similarity": None,
        "center_similarity": center_similarity(centers).to_dict(),
        "pairwise_stats": pairwise_stats(E_test),
        "novelty": {
            "threshold": threshold,
            "n_novel": int(flags.sum()),
            "n_samples": int(flags.size),
        },
        "samples": [
            {
                "id": E_test.ids[i],
                "label": None if E_test.labels is None else E_test.labels[i],
                "nearest": centers.classes[int(nearest[i])],
                "anomaly_score": float(scores[i, nearest[i]]),
                "max_similarity": float(max_sim[i]),
                "novel": bool(flags[i]),
            }
            for i in range(len(E_test))
        ],
        "gradient": None,
    }
    if E_test.labels is not None:
        report["mean_similarity"] = mean_similarity_matrix(E_test, centers).to_dict()
    if E_test.labels is not None and E_test.has_concentrations and healthy_label in centers.classes:
        report["gradient"] = concentration_gradient(E_test, healthy_label, centers).to_dict()
    elif E_test.labels is not None:
        logger.warning("no concentrations (or no healthy center): gradient analysis skipped")
    return report, centers


def novelty_holdout(cfg, train, test, holdout):
    """Pretrain without one phenotype and rank test samples by best center similarity.

    Returns the AUROC of in-distribution samples scoring above held-out ones.
    """
    seen = [s for s in train if s.label != holdout]
    if len(seen) == len(train):
        raise DataError(f"holdout class '{holdout}' is absent from the training split")
    classes = [c for c in cfg.data.class_names if c != holdout]
    params, _ = train_ssl(cfg.ssl, seen, cfg.arch)
    centers = class_centers(embed_samples(params, seen), classes)
    E_test = embed_samples(params, test)
    best = center_similarities(E_test.H, centers).max(axis=1)
    is_out = np.array([lab == holdout for lab in E_test.labels])
    return {
        "holdout": holdout,
        "auroc": auroc(best[~is_out], best[is_out]),
        "n_in": int((~is_out).sum()),
        "n_out": int(is_out.sum()),
        "mean_similarity_in": float(best[~is_out].mean()),
        "mean_similarity_out": float(best[is_out].mean()),
    }


def run_pipeline(cfg):
    """Full run from a parsed RunConfig; returns the consolidated report dict."""
    samples = generate_dataset(cfg.data, cfg.seed)
    for s in samples:
        s.image = quantize(s.image)
    train, val, test = split_samples(samples, cfg.split)
    classes = list(cfg.data.class_names)
    logger.info("data: %d train / %d val / %d test", len(train), len(val), len(test))

    params, log = train_ssl(cfg.ssl, train, cfg.arch)
    E = [embed_samples(params, part) for part in (train, val, test)]
    probe, best_val = train_probe(E[0], E[1], cfg.probe, classes)
    metrics = evaluate(probe, E[2])
    logger.info("probe test accuracy %.4f", metrics.accuracy)

    base_params = init_params(cfg.arch, cfg.ssl.seed)
    B = [embed_samples(base_params, part) for part in (train, val, test)]
    base_probe, base_val = train_probe(B[0], B[1], cfg.probe, classes)
    base_metrics = evaluate(base_probe, B[2])

    curve = label_fraction_curve(E[0], E[1], E[2], cfg.analysis.label_fractions, cfg.probe, classes)
    analysis, centers = analyze(
        E[2], E[0], cfg.analysis.novel_threshold, cfg.analysis.healthy_label, classes
    )
    negated = EmbeddingSet(E[2].ids, -E[2].H, E[2].labels, E[2].concentrations)
    report = {
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "data": {"n_train": len(train), "n_val": len(val), "n_test": len(test)},
        "ssl": {
            "epoch_loss": list(log.epoch_loss),
            "first_epoch_loss": log.epoch_loss[0] if log.epoch_loss else None,
            "final_epoch_loss": log.epoch_loss[-1] if log.epoch_loss else None,
            "steps": len(log.lr_trace),
        },
        "probe": {"best_val_accuracy": best_val, "test": metrics.to_dict()},
        "baseline": {
            "encoder": "random-init",
            "best_val_accuracy": base_val,
            "test_accuracy": base_metrics.accuracy,
        },
        "label_efficiency": curve,
        "analysis": analysis,
        "drift": {
            "train_window": drift_score(E[0], centers),
            "test_window": drift_score(E[2], centers),
            "negated_test_window": drift_score(negated, centers),
        },
        "novelty_holdout": None,
    }
    if cfg.analysis.holdout_label is not None:
        report["novelty_holdout"] = novelty_holdout(cfg, train, test, cfg.analysis.holdout_label)
    return report


