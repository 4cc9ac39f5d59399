"""Classification-style vs authentication-style evaluation of per-user
classifiers, with a closed-form LDA.

The classification-style procedure relabels the whole database per subject
and splits it train/test, which leaks every impostor's data into training.
The authentication-style procedure holds out an intruder set entirely:
per-user models train only on user-set data and intruders are scored as
unseen probes. Comparing the two quantifies how much the leak flatters the
false acceptance rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LengthError, SingularityError


@dataclass
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray  # 1 = user, 0 = other
    keys: list = field(default_factory=list)  # (subject, sample index) provenance

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("feature/label row counts differ")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 1):
            raise ConfigError("labels must be binary")


@dataclass
class LdaModel:
    weights: np.ndarray
    threshold: float

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        """Signed distance to the boundary; positive means class 1 (user)."""
        return np.atleast_2d(features) @ self.weights - self.threshold

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.decision_scores(features) >= 0.0).astype(int)


def lda_train(train: LabeledSet, reg: float | None = None) -> LdaModel:
    """Closed-form two-class LDA.

    w = Sigma^-1 (mu1 - mu0) with Sigma the pooled within-class covariance
    plus reg * I; the decision threshold sits at the projected class-mean
    midpoint shifted by the log prior ratio. Default reg is
    1e-6 * trace(Sigma) / dim; passing reg=0 on a singular covariance raises.
    """
    x, y = train.features, train.labels
    if not ((y == 0).any() and (y == 1).any()):
        raise LengthError("training set needs at least one sample per class")
    x0, x1 = x[y == 0], x[y == 1]
    mu0, mu1 = x0.mean(axis=0), x1.mean(axis=0)
    dim = x.shape[1]
    scatter = np.zeros((dim, dim))
    for part, mu in ((x0, mu0), (x1, mu1)):
        centered = part - mu
        scatter += centered.T @ centered
    cov = scatter / x.shape[0]
    if reg is None:
        reg = 1e-6 * np.trace(cov) / dim
    cov_reg = cov + reg * np.eye(dim)
    try:
        weights = np.linalg.solve(cov_reg, mu1 - mu0)
    except np.linalg.LinAlgError:
        raise SingularityError(
            "singular within-class covariance; increase the regularizer") from None
    prior1 = x1.shape[0] / x.shape[0]
    prior0 = 1.0 - prior1
    threshold = float(0.5 * weights @ (mu1 + mu0) - np.log(prior1 / prior0))
    return LdaModel(weights=weights, threshold=threshold)


# ---------------------------------------------------------------------------
# evaluation procedures
# ---------------------------------------------------------------------------

@dataclass
class SlMetrics:
    accuracy: float
    far: float
    frr: float
    classifier_eer: float
    n_tests: int
    n_user_tests: int
    n_intruder_tests: int
    train_keys: dict = field(default_factory=dict)     # model subject -> set of keys
    intruder_keys: set = field(default_factory=set)    # (subject, idx) of held-out intruders

    def row(self) -> dict:
        return {"accuracy": self.accuracy, "far": self.far, "frr": self.frr,
                "classifier_eer": self.classifier_eer}


def _stratified_split(indices_by_class: dict[int, np.ndarray], split: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_parts, test_parts = [], []
    for cls, indices in indices_by_class.items():
        shuffled = indices[rng.permutation(indices.size)]
        cut = int(round(split * shuffled.size))
        cut = min(max(cut, 1), shuffled.size - 1)  # both sides non-empty
        train_parts.append(shuffled[:cut])
        test_parts.append(shuffled[cut:])
    return np.concatenate(train_parts), np.concatenate(test_parts)


def _sweep_eer(scores: np.ndarray, labels: np.ndarray) -> float:
    """Classifier EER over decision scores (similarity orientation)."""
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    thresholds = np.unique(scores)
    # accept when score >= threshold
    far = 1.0 - np.searchsorted(neg, thresholds, side="left") / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    gap = np.abs(far - frr)
    best = int(np.argmin(gap))
    return float((far[best] + frr[best]) / 2.0)


def _pool_metrics(preds: np.ndarray, truths: np.ndarray, scores: np.ndarray) -> dict:
    tp = int(((preds == 1) & (truths == 1)).sum())
    tn = int(((preds == 0) & (truths == 0)).sum())
    fp = int(((preds == 1) & (truths == 0)).sum())
    fn = int(((preds == 0) & (truths == 1)).sum())
    total = tp + tn + fp + fn
    return {
        "accuracy": (tp + tn) / total if total else float("nan"),
        "far": fp / (fp + tn) if fp + tn else float("nan"),
        "frr": fn / (fn + tp) if fn + tp else float("nan"),
        "classifier_eer": _sweep_eer(scores, truths),
        "n_tests": total,
        "n_user_tests": tp + fn,
        "n_intruder_tests": fp + tn,
    }


def eval_classification_style(dataset: dict[str, np.ndarray], split: float = 0.8,
                              seed: int = 0, reg: float | None = None) -> SlMetrics:
    """Standard one-vs-rest classification evaluation (the leaky procedure).

    Every subject's model is trained on a split of the full relabeled
    database, so other subjects' data is present at training time.
    """
    subjects = sorted(dataset)
    if len(subjects) < 2:
        raise ConfigError("need at least 2 subjects")
    all_x = np.concatenate([dataset[s] for s in subjects])
    all_keys = [(s, i) for s in subjects for i in range(dataset[s].shape[0])]
    preds, truths, scores = [], [], []
    train_keys: dict[str, set] = {}
    for s_idx, subject in enumerate(subjects):
        y = np.array([1 if k[0] == subject else 0 for k in all_keys])
        rng = np.random.default_rng([seed, s_idx])
        train_idx, test_idx = _stratified_split(
            {0: np.flatnonzero(y == 0), 1: np.flatnonzero(y == 1)}, split, rng)
        model = lda_train(LabeledSet(all_x[train_idx], y[train_idx]), reg=reg)
        train_keys[subject] = {all_keys[i] for i in train_idx}
        s = model.decision_scores(all_x[test_idx])
        preds.extend((s >= 0).astype(int))
        truths.extend(y[test_idx])
        scores.extend(s)
    metrics = _pool_metrics(np.array(preds), np.array(truths), np.array(scores))
    return SlMetrics(**metrics, train_keys=train_keys, intruder_keys=set())


def eval_authentication_style(dataset: dict[str, np.ndarray], split: float = 0.8,
                              n_users: int | None = None, seed: int = 0,
                              reg: float | None = None) -> SlMetrics:
    """Held-out-intruder evaluation.

    The subject pool is split into a user set and an intruder set; per-user
    models train only on user-set data, and every intruder sample is scored
    as an unseen probe against every user model.
    """
    subjects = sorted(dataset)
    if n_users is None:
        n_users = max(2, int(0.8 * len(subjects)))
    if not (2 <= n_users < len(subjects)):
        raise ConfigError(
            f"user-set size {n_users} must leave a non-empty intruder set "
            f"out of {len(subjects)} subjects")
    rng_split = np.random.default_rng([seed, 0xD15C])
    order = rng_split.permutation(len(subjects))
    user_set = sorted(subjects[i] for i in order[:n_users])
    intruder_set = sorted(subjects[i] for i in order[n_users:])
    intruder_x = np.concatenate([dataset[s] for s in intruder_set])
    intruder_keys = {(s, i) for s in intruder_set for i in range(dataset[s].shape[0])}

    pool_x = np.concatenate([dataset[s] for s in user_set])
    pool_keys = [(s, i) for s in user_set for i in range(dataset[s].shape[0])]
    preds, truths, scores = [], [], []
    train_keys: dict[str, set] = {}
    for u_idx, user in enumerate(user_set):
        y = np.array([1 if k[0] == user else 0 for k in pool_keys])
        rng = np.random.default_rng([seed, 1 + u_idx])
        train_idx, test_idx = _stratified_split(
            {0: np.flatnonzero(y == 0), 1: np.flatnonzero(y == 1)}, split, rng)
        model = lda_train(LabeledSet(pool_x[train_idx], y[train_idx]), reg=reg)
        train_keys[user] = {pool_keys[i] for i in train_idx}
        # user tests: the held-out genuine samples only
        user_test = np.array([i for i in test_idx if y[i] == 1])
        s_user = model.decision_scores(pool_x[user_test])
        preds.extend((s_user >= 0).astype(int))
        truths.extend(np.ones(user_test.size, dtype=int))
        scores.extend(s_user)
        s_intr = model.decision_scores(intruder_x)
        preds.extend((s_intr >= 0).astype(int))
        truths.extend(np.zeros(intruder_x.shape[0], dtype=int))
        scores.extend(s_intr)
    metrics = _pool_metrics(np.array(preds), np.array(truths), np.array(scores))
    return SlMetrics(**metrics, train_keys=train_keys, intruder_keys=intruder_keys)


def pitfall_report(dataset: dict[str, np.ndarray], configs: list[dict] | None = None,
                   seeds: tuple[int, ...] = (0,), method: str = "LDA",
                   reg: float | None = None) -> list[dict]:
    """Comparison table across evaluation procedures, averaged over seeds."""
    if configs is None:
        configs = [
            {"evaluation": "classification", "split": 0.8},
            {"evaluation": "authentication", "split": 0.8, "n_users": None},
        ]
    rows = []
    for cfg in configs:
        metrics = []
        for seed in seeds:
            if cfg["evaluation"] == "classification":
                m = eval_classification_style(dataset, cfg.get("split", 0.8),
                                              seed=seed, reg=reg)
            elif cfg["evaluation"] == "authentication":
                m = eval_authentication_style(dataset, cfg.get("split", 0.8),
                                              n_users=cfg.get("n_users"),
                                              seed=seed, reg=reg)
            else:
                raise ConfigError(f"unknown evaluation {cfg['evaluation']!r}")
            metrics.append(m.row())
        row = {"method": method, "evaluation": cfg["evaluation"],
               "split": cfg.get("split", 0.8), "n_users": cfg.get("n_users"),
               "n_seeds": len(seeds)}
        for field_name in ("accuracy", "far", "frr", "classifier_eer"):
            row[field_name] = float(np.mean([m[field_name] for m in metrics]))
        rows.append(row)
    return rows


def report_to_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2, sort_keys=True)
