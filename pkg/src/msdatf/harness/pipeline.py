"""Leave-one-subject-out folds, baselines and model persistence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ArgumentError
from ..features import normalize, window_samples
from ..grouping import DomainPartition, group_subjects
from ..msda import MSDAModel, embeddings, predict_target, train_msda, train_supervised
from .checkpoint import check_schema, load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict
from .io import write_embeddings_csv
from .metrics import aggregate, compute_metrics

log = logging.getLogger(__name__)

MODES = ("source_only", "single_source", "msda", "target_only")


@dataclass
class FoldSpec:
    target: str
    sources: list
    partition: DomainPartition


@dataclass
class FoldResult:
    fold: FoldSpec
    mode: str
    report: object
    model: MSDAModel
    history: list


def make_fold(features, target, K=4, group_sizes=None):
    """Fold with ``target`` held out; sources are grouped from their own features."""
    ids = sorted(features)
    if target not in ids:
        raise ArgumentError(f"unknown target subject {target!r}")
    sources = [s for s in ids if s != target]
    if not sources:
        raise ArgumentError("need at least one source subject")
    sizes = group_sizes if group_sizes and sum(group_sizes) == len(sources) else None
    k = min(K, len(sources)) if sizes is None else len(sizes)
    part = group_subjects([features[s] for s in sources], K=k, sizes=sizes)
    return FoldSpec(target, sources, part)


def loso_folds(features, K=4, group_sizes=None):
    """One fold per subject, each subject the target exactly once."""
    if len(features) < 3:
        raise ArgumentError(f"leave-one-subject-out needs at least 3 subjects, got {len(features)}")
    return [make_fold(features, t, K, group_sizes) for t in sorted(features)]


def _normalized(features, fold, scope):
    ids = fold.sources + [fold.target]
    return dict(zip(ids, normalize([features[s] for s in ids], scope)))


def _windows(fs, width):
    x, y, tids = window_samples(fs, width)
    return x, y, np.asarray(tids, dtype=object)


def split_target_trials(labels_by_trial, frac, seed):
    """Seeded per-class trial split; returns the set of held-out trial ids.

    At least one trial per class is held out when the class has two or more.
    """
    rng = np.random.default_rng([seed, 4])
    by_class = {}
    for tid, lab in labels_by_trial:
        by_class.setdefault(int(lab), []).append(tid)
    test = set()
    for lab in sorted(by_class):
        trials = sorted(by_class[lab])
        if len(trials) < 2:
            continue
        n_test = min(len(trials) - 1, max(1, int(round(frac * len(trials)))))
        pick = rng.permutation(len(trials))[:n_test]
        test.update(trials[i] for i in pick)
    return test


def fold_data(features, fold, cfg: RunConfig):
    """Normalized, windowed arrays for every source group and the target."""
    exp = cfg.experiment
    normed = _normalized(features, fold, exp.normalization)
    groups = []
    for members in fold.partition.groups:
        parts = [_windows(normed[s], exp.window) for s in members]
        groups.append((np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])))
    tx, ty, ttid = _windows(normed[fold.target], exp.window)
    return groups, (tx, ty, ttid)


def run_baseline(mode, fold, features, cfg: RunConfig, callback=None) -> FoldResult:
    """Train one of the comparison modes on a fold and score it on the target.

    ``source_only``: generator + one head on pooled sources, no adaptation.
    ``single_source``: the adaptation loop with all sources as one domain.
    ``msda``: the full loop over the fold's source groups.
    ``target_only``: supervised on a seeded 80/20 trial split of the target,
    scored on the held-out trials.
    Every mode uses the same generator architecture, initial weights and epochs.
    """
    if mode not in MODES:
        raise ArgumentError(f"unknown mode {mode!r}; expected one of {MODES}")
    tcfg, gcfg = cfg.train, cfg.generator
    groups, (tx, ty, ttid) = fold_data(features, fold, cfg)
    labeled = bool(len(ty)) and ty.min() >= 0
    ty_eval = ty if labeled else None
    if mode == "msda" and len(groups) < 2:
        log.warning("fold %s has a single source group; running single-source adaptation", fold.target)
        mode_eff = "single_source"
    else:
        mode_eff = mode
    if mode_eff == "msda":
        model, hist = train_msda(groups, tx, gcfg, tcfg, target_y=ty_eval, callback=callback)
        eval_x, eval_y = tx, ty
    elif mode_eff == "single_source":
        pooled = (np.concatenate([g[0] for g in groups]), np.concatenate([g[1] for g in groups]))
        model, hist = train_msda([pooled], tx, gcfg, tcfg, target_y=ty_eval,
                                 allow_single_source=True, callback=callback)
        eval_x, eval_y = tx, ty
    elif mode_eff == "source_only":
        xs = np.concatenate([g[0] for g in groups])
        ys = np.concatenate([g[1] for g in groups])
        pooled_cfg = replace(tcfg, batch_size=tcfg.batch_size * len(groups))
        model, hist = train_supervised(xs, ys, gcfg, pooled_cfg, tx, ty_eval, callback=callback)
        eval_x, eval_y = tx, ty
    else:
        if not labeled:
            raise ArgumentError("target_only needs target labels")
        pairs = sorted({(t, int(lab)) for t, lab in zip(ttid, ty)})
        test = split_target_trials(pairs, cfg.experiment.target_split, tcfg.seed)
        is_test = np.array([t in test for t in ttid])
        if not is_test.any() or is_test.all():
            raise ArgumentError("target_only needs at least two target trials of some class "
                                "to form a train/test split")
        model, hist = train_supervised(tx[~is_test], ty[~is_test], gcfg, tcfg,
                                       tx[is_test], ty[is_test], callback=callback)
        eval_x, eval_y = tx[is_test], ty[is_test]
    if not labeled:
        raise ArgumentError("target labels are needed to score a baseline")
    _, pred = predict_target(model, eval_x)
    report = compute_metrics(eval_y, pred, model.n_classes)
    return FoldResult(fold, mode, report, model, hist)


def run_loso(features, mode, cfg: RunConfig, targets=None, callback=None):
    """Run ``mode`` on every fold (or the listed targets); returns (results, summary)."""
    folds = loso_folds(features, cfg.train.K, cfg.experiment.group_sizes)
    if targets:
        folds = [f for f in folds if f.target in set(targets)]
    results = [run_baseline(mode, f, features, cfg, callback) for f in folds]
    results.sort(key=lambda r: r.fold.target)
    return results, aggregate([r.report for r in results])


# ------------------------------------------------------------- persistence


def model_meta(model):
    return {"n_domains": model.n_domains, "n_classes": model.n_classes, "paired": model.paired}


def save_model(path, model, cfg: RunConfig, fold=None, rng_state=None):
    config = {"run": cfg.to_dict(), "model": model_meta(model), "rng_state": rng_state}
    if fold is not None:
        config["fold"] = {"target": fold.target, "groups": fold.partition.groups}
    save_checkpoint(path, model.named_tensors(), config)


def expected_schema(model):
    return {name: np.shape(arr) for name, arr in model.named_tensors().items()}


def restore(model, ckpt):
    """Load checkpoint tensors into an existing model after a strict schema check."""
    check_schema(expected_schema(model), ckpt.tensors)
    model.load_named_tensors(ckpt.tensors)
    return model


def load_model(path):
    """Rebuild a model from a checkpoint. Returns (model, RunConfig, checkpoint)."""
    ckpt = load_checkpoint(path)
    run = ckpt.config.get("run", {})
    cfg = config_from_dict(run)
    meta = ckpt.config.get("model", {})
    model = MSDAModel(cfg.generator, n_domains=meta.get("n_domains", 1),
                      n_classes=meta.get("n_classes", 3), paired=meta.get("paired", True),
                      seed=cfg.train.seed)
    restore(model, ckpt)
    return model, cfg, ckpt


def export_embeddings(model, features, fold, cfg: RunConfig, path):
    """Write one CSV row per windowed sample: subject, role, label, embedding."""
    groups_norm = _normalized(features, fold, cfg.experiment.normalization)
    role = {s: f"source-{g}" for g, members in enumerate(fold.partition.groups) for s in members}
    role[fold.target] = "target"
    rows = []
    for sid in sorted(role):
        x, y, _ = _windows(groups_norm[sid], cfg.experiment.window)
        emb = embeddings(model, x)
        for i in range(len(x)):
            lab = int(y[i]) if y[i] >= 0 else -1
            rows.append((sid, role[sid], lab, emb[i]))
    write_embeddings_csv(path, rows, model.config.embed_dim)
    return len(rows)
