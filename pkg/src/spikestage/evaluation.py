"""Record-wise cross-validation, stage metrics, ablation, and hypnograms.

Folds are assigned per subject so no subject's epochs ever span train and
test. The pooled confusion matrix (element-wise sum across folds) is the
headline report; per-fold matrices and metrics are kept alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention_model import ModelConfig, TrainConfig, init_model, predict, train
from .errors import DataError
from .filterbank import DEFAULT_FILTERBANK, FilterbankConfig, decompose
from .signal_io import STAGE_ORDER, Stage
from .spike_encoder import (
    FeatureEpoch,
    HalfGaussianParams,
    build_feature_epoch,
    build_feature_epoch_threshold,
)

N_STAGES = len(STAGE_ORDER)


@dataclass(frozen=True)
class FoldPlan:
    """Subject -> fold assignment for record-wise cross-validation."""

    k: int
    assignment: dict[str, int] = field(hash=False)

    def subjects_in_fold(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.assignment.items() if f == fold)


def make_folds(subjects, k: int, seed: int) -> FoldPlan:
    """Shuffle subjects with the seed and deal them round-robin into k folds."""
    subjects = list(subjects)
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if len(set(subjects)) != len(subjects):
        raise ValueError("duplicate subject ids in fold input")
    if len(subjects) < k:
        raise ValueError(f"too few subjects ({len(subjects)}) for {k} folds")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    assignment = {subject: i % k for i, subject in enumerate(order)}
    return FoldPlan(k=k, assignment=assignment)


def confusion(true, pred) -> np.ndarray:
    """5x5 counts, rows = true stage, columns = predicted stage."""
    true = list(true)
    pred = list(pred)
    if len(true) != len(pred):
        raise ValueError(f"length mismatch: {len(true)} true vs {len(pred)} predicted")
    cm = np.zeros((N_STAGES, N_STAGES), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[_stage_index(t), _stage_index(p)] += 1
    return cm


def _stage_index(s) -> int:
    if isinstance(s, Stage):
        return s.value
    return int(s)


@dataclass
class StageMetrics:
    """Per-stage precision/recall/F1 plus overall accuracy and macro-F1."""

    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_f1: float
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "per_stage": {
                stage.display_name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                }
                for i, stage in enumerate(STAGE_ORDER)
            },
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "warnings": list(self.warnings),
        }


def metrics(cm: np.ndarray) -> StageMetrics:
    """Definitional metrics from a confusion matrix.

    Zero-denominator precision/recall is reported as 0 with a warning
    (N1 scarcity makes empty columns a real possibility).
    """
    cm = np.asarray(cm)
    if cm.shape != (N_STAGES, N_STAGES):
        raise ValueError(f"expected a {N_STAGES}x{N_STAGES} matrix, got {cm.shape}")
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    precision = np.zeros(N_STAGES)
    recall = np.zeros(N_STAGES)
    f1 = np.zeros(N_STAGES)
    warnings = []
    for i, stage in enumerate(STAGE_ORDER):
        col = cm[:, i].sum()
        row = cm[i, :].sum()
        if col > 0:
            precision[i] = cm[i, i] / col
        else:
            warnings.append(f"no predictions for {stage.display_name}; precision set to 0")
        if row > 0:
            recall[i] = cm[i, i] / row
        else:
            warnings.append(f"no true epochs for {stage.display_name}; recall set to 0")
        if precision[i] + recall[i] > 0:
            f1[i] = 2.0 * precision[i] * recall[i] / (precision[i] + recall[i])
    return StageMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(np.trace(cm) / total),
        macro_f1=float(f1.mean()),
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Feature encoding over whole datasets
# ---------------------------------------------------------------------------


def encode_dataset(
    epochs,
    encoder_params: HalfGaussianParams = HalfGaussianParams(),
    *,
    arm: str = "half_gaussian",
    threshold_cutoff: float = 0.5,
    accum_width: int = 25,
    filter_config: FilterbankConfig = DEFAULT_FILTERBANK,
    keep_unlabeled: bool = False,
) -> list[FeatureEpoch]:
    """Band-decompose and spike-encode epochs; unscored ones are dropped."""
    if arm not in ("half_gaussian", "threshold"):
        raise ValueError(f"unknown encoder arm {arm!r}")
    out = []
    for epoch in epochs:
        if epoch.stage is None and not keep_unlabeled:
            continue
        bands = decompose(epoch, filter_config)
        if arm == "half_gaussian":
            fe = build_feature_epoch(bands, encoder_params, accum_width)
        else:
            fe = build_feature_epoch_threshold(
                bands, threshold_cutoff, encoder_params.window_size, accum_width
            )
        out.append(fe)
    return out


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    test_subjects: list[str]
    n_train: int
    n_test: int
    confusion: np.ndarray
    metrics: StageMetrics
    # (subject_id, epoch_index, true stage value, predicted stage value)
    rows: list[tuple[str, int, int, int]] = field(default_factory=list)


@dataclass
class CVResult:
    fold_results: list[FoldResult]
    pooled_confusion: np.ndarray
    pooled_metrics: StageMetrics
    plan: FoldPlan

    def as_dict(self) -> dict:
        return {
            "k": self.plan.k,
            "folds": [
                {
                    "fold": fr.fold,
                    "test_subjects": fr.test_subjects,
                    "n_train": fr.n_train,
                    "n_test": fr.n_test,
                    "confusion": fr.confusion.tolist(),
                    "metrics": fr.metrics.as_dict(),
                    "rows": [list(r) for r in fr.rows],
                }
                for fr in self.fold_results
            ],
            "pooled_confusion": self.pooled_confusion.tolist(),
            "pooled_metrics": self.pooled_metrics.as_dict(),
        }


def run_cv_features(
    features: list[FeatureEpoch],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    plan: FoldPlan,
) -> CVResult:
    """Train/evaluate one model per fold over pre-encoded features."""
    subjects = {fe.subject_id for fe in features}
    missing = subjects - set(plan.assignment)
    if missing:
        raise ValueError(f"subjects without a fold assignment: {sorted(missing)}")

    fold_results = []
    pooled = np.zeros((N_STAGES, N_STAGES), dtype=np.int64)
    for fold in range(plan.k):
        test_set = [fe for fe in features if plan.assignment[fe.subject_id] == fold]
        train_set = [fe for fe in features if plan.assignment[fe.subject_id] != fold]
        if not test_set:
            raise DataError(f"fold {fold} has zero evaluable epochs")
        if not train_set:
            raise DataError(f"fold {fold} leaves zero training epochs")
        # Per-fold seeds keep folds independent but fully reproducible.
        model = init_model(model_cfg, seed=train_cfg.seed + 1000 * (fold + 1))
        fold_train_cfg = TrainConfig(
            epochs=train_cfg.epochs,
            batch_size=train_cfg.batch_size,
            learning_rate=train_cfg.learning_rate,
            seed=train_cfg.seed + fold,
            beta1=train_cfg.beta1,
            beta2=train_cfg.beta2,
            eps=train_cfg.eps,
            max_steps=train_cfg.max_steps,
        )
        result = train(model, train_set, fold_train_cfg)
        x_test = np.stack([fe.features for fe in test_set])
        y_true = [fe.stage for fe in test_set]
        y_pred = predict(result.state, x_test)
        cm = confusion([s.value for s in y_true], y_pred)
        pooled += cm
        rows = [
            (fe.subject_id, fe.epoch_index, fe.stage.value, int(p))
            for fe, p in zip(test_set, y_pred)
        ]
        fold_results.append(
            FoldResult(
                fold=fold,
                test_subjects=plan.subjects_in_fold(fold),
                n_train=len(train_set),
                n_test=len(test_set),
                confusion=cm,
                metrics=metrics(cm),
                rows=rows,
            )
        )
    return CVResult(
        fold_results=fold_results,
        pooled_confusion=pooled,
        pooled_metrics=metrics(pooled),
        plan=plan,
    )


def run_cv(
    dataset,
    encoder_params: HalfGaussianParams,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    plan: FoldPlan,
    *,
    arm: str = "half_gaussian",
    threshold_cutoff: float = 0.5,
    accum_width: int = 25,
    filter_config: FilterbankConfig = DEFAULT_FILTERBANK,
) -> CVResult:
    """Full pipeline cross-validation from labeled raw epochs."""
    features = encode_dataset(
        dataset,
        encoder_params,
        arm=arm,
        threshold_cutoff=threshold_cutoff,
        accum_width=accum_width,
        filter_config=filter_config,
    )
    if not features:
        raise DataError("no labeled epochs to cross-validate")
    return run_cv_features(features, model_cfg, train_cfg, plan)


@dataclass
class AblationReport:
    gaussian: CVResult
    threshold: CVResult

    def stage_deltas(self) -> dict[str, dict[str, float]]:
        """Per-stage metric differences (adaptive arm minus threshold arm)."""
        g, t = self.gaussian.pooled_metrics, self.threshold.pooled_metrics
        return {
            stage.display_name: {
                "precision": float(g.precision[i] - t.precision[i]),
                "recall": float(g.recall[i] - t.recall[i]),
                "f1": float(g.f1[i] - t.f1[i]),
            }
            for i, stage in enumerate(STAGE_ORDER)
        }

    def as_dict(self) -> dict:
        return {
            "half_gaussian": self.gaussian.as_dict(),
            "threshold": self.threshold.as_dict(),
            "deltas": self.stage_deltas(),
        }


def compare_ablation(
    dataset,
    plan: FoldPlan,
    encoder_params: HalfGaussianParams,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    *,
    threshold_cutoff: float = 0.5,
    accum_width: int = 25,
    filter_config: FilterbankConfig = DEFAULT_FILTERBANK,
) -> AblationReport:
    """Run both encoder arms under identical folds, seeds, and model config."""
    common = dict(
        encoder_params=encoder_params,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        plan=plan,
        threshold_cutoff=threshold_cutoff,
        accum_width=accum_width,
        filter_config=filter_config,
    )
    gaussian = run_cv(dataset, arm="half_gaussian", **common)
    threshold = run_cv(dataset, arm="threshold", **common)
    return AblationReport(gaussian=gaussian, threshold=threshold)


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def render_metrics_text(m: StageMetrics, title: str = "Stage metrics") -> str:
    lines = [title, f"{'Stage':<6} {'Pre':>6} {'Re':>6} {'F1':>6}"]
    for i, stage in enumerate(STAGE_ORDER):
        lines.append(
            f"{stage.display_name:<6} {m.precision[i]:>6.2f} {m.recall[i]:>6.2f} {m.f1[i]:>6.2f}"
        )
    lines.append(f"Overall accuracy: {m.accuracy:.2f}")
    lines.append(f"Macro-F1: {m.macro_f1:.2f}")
    for w in m.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines)


def render_confusion_text(cm: np.ndarray, title: str = "Confusion matrix") -> str:
    names = [s.display_name for s in STAGE_ORDER]
    width = max(6, max(len(n) for n in names) + 1)
    lines = [title, " " * width + "".join(f"{n:>{width}}" for n in names) + "   (pred)"]
    for i, name in enumerate(names):
        lines.append(f"{name:<{width}}" + "".join(f"{int(c):>{width}}" for c in cm[i]))
    lines.append(f"(rows = true stage, total = {int(cm.sum())})")
    return "\n".join(lines)


def render_ablation_text(report: AblationReport) -> str:
    parts = [
        render_confusion_text(report.gaussian.pooled_confusion, "Adaptive (half-Gaussian) arm"),
        "",
        render_confusion_text(report.threshold.pooled_confusion, "Fixed-threshold arm"),
        "",
        "Per-stage deltas (adaptive minus threshold)",
        f"{'Stage':<6} {'dPre':>7} {'dRe':>7} {'dF1':>7}",
    ]
    for stage_name, d in report.stage_deltas().items():
        parts.append(
            f"{stage_name:<6} {d['precision']:>+7.3f} {d['recall']:>+7.3f} {d['f1']:>+7.3f}"
        )
    g, t = report.gaussian.pooled_metrics, report.threshold.pooled_metrics
    parts.append(f"Accuracy: adaptive {g.accuracy:.3f} vs threshold {t.accuracy:.3f}")
    return "\n".join(parts)


def metrics_report_json(result: CVResult) -> str:
    """Deterministic JSON serialization (stable key order) of a CV result."""
    return json.dumps(result.as_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Hypnogram export
# ---------------------------------------------------------------------------

# Conventional hypnogram lane order, top to bottom.
_HYPNOGRAM_LEVEL = {
    Stage.WAKE: 4,
    Stage.REM: 3,
    Stage.N1: 2,
    Stage.N2: 1,
    Stage.N3: 0,
}


def export_hypnogram(true, pred, path) -> tuple[Path, Path]:
    """Two-lane step plot (expert top, model bottom) plus a CSV companion.

    Mismatched epochs are highlighted in red. Returns (plot_path, csv_path).
    """
    true = [s if isinstance(s, Stage) else Stage(int(s)) for s in true]
    pred = [s if isinstance(s, Stage) else Stage(int(s)) for s in pred]
    if len(true) != len(pred):
        raise ValueError(f"length mismatch: {len(true)} true vs {len(pred)} predicted")
    path = Path(path)
    csv_path = path.with_suffix(".csv")

    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("epoch_index,true,pred,match\n")
        for i, (t, p) in enumerate(zip(true, pred)):
            fh.write(f"{i},{t.display_name},{p.display_name},{int(t == p)}\n")

    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    x = np.arange(len(true))
    top = np.array([_HYPNOGRAM_LEVEL[s] for s in true])
    bottom = np.array([_HYPNOGRAM_LEVEL[s] for s in pred])
    mismatch = np.array([t != p for t, p in zip(true, pred)])

    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(10, 5))
    lane_names = [n.display_name for n, _ in sorted(_HYPNOGRAM_LEVEL.items(), key=lambda kv: kv[1])]
    for ax, levels, label in ((axes[0], top, "Expert"), (axes[1], bottom, "Model")):
        ax.step(x, levels, where="post", color="C0", linewidth=1.0)
        if mismatch.any():
            ax.plot(x[mismatch], levels[mismatch], "r.", markersize=4, label="mismatch")
            ax.legend(loc="upper right", fontsize=8)
        ax.set_yticks(range(len(lane_names)))
        ax.set_yticklabels(lane_names)
        ax.set_ylabel(label)
        ax.set_ylim(-0.5, len(lane_names) - 0.5)
    axes[1].set_xlabel("Epoch index (30 s each)")
    fig.tight_layout()
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path, csv_path
