"""K-fold training with held-out scoring and fold ensembling."""
from __future__ import annotations

from dataclasses import dataclass, field

from gpplane import evalrank
from gpplane.detect import ensemble_predictions
from gpplane.methods import ModelBundle, detect_volume, train_method
from gpplane.phantom import PhantomItem


@dataclass
class CVResult:
    method: str
    fold_maes: list[float]
    ensemble_mae: float
    fold_preds: list[dict[str, int]]
    ensemble_preds: dict[str, int]
    truths: dict[str, int]
    bundles: list[ModelBundle] = field(default_factory=list, repr=False)

    @property
    def worst_fold_mae(self) -> float:
        return max(self.fold_maes)

    def ensemble_report(self) -> evalrank.ScoreReport:
        return evalrank.evaluate_predictions(self.ensemble_preds, self.truths, f"ensemble:{self.method}")


def fold_seed(seed: int, fold: int) -> int:
    return seed * 1000 + fold


def cross_validate(
    method: str,
    train_items: list[PhantomItem],
    test_items: list[PhantomItem],
    k: int = 5,
    seed: int = 0,
    params: dict | None = None,
) -> CVResult:
    """Train one model per fold (study-stratified) and score all of them on ``test_items``.

    Each fold model is trained on the other k-1 folds. The ensemble is the
    rounded mean of the fold models' held-out predictions.
    """
    by_id = {it.volume.id: it for it in train_items}
    folds = evalrank.kfold_split([(it.volume.id, it.study) for it in train_items], k, seed)
    truths = {it.volume.id: it.annotation.gppi for it in test_items}
    fold_preds, fold_maes, bundles = [], [], []
    for f in range(k):
        samples = [(by_id[i].volume, by_id[i].annotation.gppi) for i in folds.train_ids(f)]
        bundle = train_method(method, samples, params, seed=fold_seed(seed, f))
        preds = {it.volume.id: detect_volume(bundle, it.volume).gppi_pred for it in test_items}
        fold_preds.append(preds)
        fold_maes.append(evalrank.evaluate_predictions(preds, truths, method).mae)
        bundles.append(bundle)
    ens = {vid: ensemble_predictions([p[vid] for p in fold_preds]) for vid in truths}
    ens_mae = evalrank.evaluate_predictions(ens, truths, method).mae
    return CVResult(method, fold_maes, ens_mae, fold_preds, ens, truths, bundles)
