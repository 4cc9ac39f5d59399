"""Evaluation protocols and metrics: EER/ROC, decidability, revocability,
unlinkability.

Genuine/impostor test counts follow the enrollment schedule: the first F_e
frame pairs enroll each subject, every following group of F_t frames is one
genuine query, and one frame group from every other subject is one impostor
query. All scores are normalized Hamming distances (smaller = more similar).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import transform as tr
from .errors import ConfigError, LengthError
from .pipeline import FeatureDataset
from .system import AuthSystem, SystemConfig


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    pseudo_impostor: np.ndarray | None = None
    mated: np.ndarray | None = None
    non_mated: np.ndarray | None = None

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=float)
        self.impostor = np.asarray(self.impostor, dtype=float)
        for name in ("pseudo_impostor", "mated", "non_mated"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.asarray(value, dtype=float))


@dataclass
class UnlinkabilityResult:
    bin_centers: np.ndarray
    d_local: np.ndarray
    d_sys: float
    mated_density: np.ndarray
    non_mated_density: np.ndarray


@dataclass
class EvalReport:
    eer: float
    threshold_at_eer: float
    d_prime: float
    d_prime_abs: float
    n_genuine: int
    n_impostor: int
    genuine_mean: float
    genuine_std: float
    impostor_mean: float
    impostor_std: float
    roc: list[tuple[float, float, float]]  # (threshold, FAR, FRR)
    pseudo_impostor_mean: float | None = None
    pseudo_impostor_std: float | None = None
    n_pseudo_impostor: int | None = None
    d_sys: float | None = None
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""
    version: str = ""

    def to_json_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if key == "roc":
                out[key] = [[float(a), float(b), float(c)] for a, b, c in value]
            elif isinstance(value, (np.floating, np.integer)):
                out[key] = value.item()
            else:
                out[key] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def roc_points(score_set: ScoreSet) -> list[tuple[float, float, float]]:
    """(threshold, FAR, FRR) at every distinct observed score.

    Distance orientation: FAR(t) is the impostor fraction at or below t,
    FRR(t) the genuine fraction above t.
    """
    genuine = np.sort(score_set.genuine)
    impostor = np.sort(score_set.impostor)
    if genuine.size == 0 or impostor.size == 0:
        raise LengthError("both genuine and impostor scores are required")
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    far = np.searchsorted(impostor, thresholds, side="right") / impostor.size
    frr = (genuine.size - np.searchsorted(genuine, thresholds, side="right")) \
        / genuine.size
    return list(zip(thresholds.tolist(), far.tolist(), frr.tolist()))


def eer(score_set: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps every distinct score; at the threshold minimizing |FAR - FRR| the
    EER is reported as (FAR + FRR) / 2.
    """
    points = roc_points(score_set)
    best = min(points, key=lambda p: (abs(p[1] - p[2]), p[0]))
    threshold, far, frr = best
    return (far + frr) / 2.0, threshold


def decidability(score_set: ScoreSet) -> float:
    """d' = (m_intra - m_inter) / sqrt((s_intra^2 + s_inter^2) / 2).

    Population standard deviations. For distance scores the genuine mean is
    the smaller one, so d' is negative; report abs() alongside when mirroring
    magnitude-style tables.
    """
    genuine, impostor = score_set.genuine, score_set.impostor
    if genuine.size < 2 or impostor.size < 2:
        raise LengthError("need at least 2 scores on each side")
    m_intra, m_inter = genuine.mean(), impostor.mean()
    s_intra, s_inter = genuine.std(), impostor.std()
    denom = np.sqrt((s_intra ** 2 + s_inter ** 2) / 2.0)
    if denom == 0.0:
        return 0.0 if m_intra == m_inter else np.sign(m_intra - m_inter) * np.inf
    return float((m_intra - m_inter) / denom)


def unlinkability(mated: np.ndarray, non_mated: np.ndarray,
                  bins: int = 50) -> UnlinkabilityResult:
    """Score-wise and system-wide linkability from shared-bin histograms.

    D_local(s) = max(0, 2 LR / (1 + LR) - 1) with LR the mated/non-mated
    density ratio; bins where only the mated density is positive count as
    fully linkable. D_sys integrates D_local under the mated density.
    """
    mated = np.asarray(mated, dtype=float)
    non_mated = np.asarray(non_mated, dtype=float)
    if mated.size < 100 or non_mated.size < 100:
        raise LengthError("need at least 100 mated and non-mated scores")
    lo = min(mated.min(), non_mated.min())
    hi = max(mated.max(), non_mated.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    width = edges[1] - edges[0]
    p_mated = np.histogram(mated, bins=edges)[0] / (mated.size * width)
    p_non = np.histogram(non_mated, bins=edges)[0] / (non_mated.size * width)
    d_local = np.zeros(bins)
    both = (p_mated > 0) & (p_non > 0)
    ratio = np.divide(p_mated, p_non, out=np.zeros(bins), where=both)
    d_local[both] = np.maximum(0.0, 2.0 * ratio[both] / (1.0 + ratio[both]) - 1.0)
    d_local[(p_mated > 0) & (p_non == 0)] = 1.0
    d_sys = float((d_local * p_mated * width).sum())
    centers = (edges[:-1] + edges[1:]) / 2.0
    return UnlinkabilityResult(bin_centers=centers, d_local=d_local, d_sys=d_sys,
                               mated_density=p_mated, non_mated_density=p_non)


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

def protocol_tests(dataset: FeatureDataset, enroll_frames: int, query_frames: int,
                   config: SystemConfig | None = None
                   ) -> tuple[list, list]:
    """Genuine and impostor (enrolled, query) template pairs per the frame schedule.

    Genuine: per subject, one query per consecutive group of query_frames
    after the enrollment block. Impostor: per subject, one query from every
    other subject's first post-enrollment frame group, transformed with the
    claimed account's parameters.
    """
    if config is None:
        config = SystemConfig()
    config = SystemConfig(**{**config.__dict__,
                             "enroll_frames": enroll_frames,
                             "query_frames": query_frames})
    system = AuthSystem(dataset, config)
    proto_a, proto_b = config.protocol_pair
    genuine, impostor = [], []
    for subject in system.subjects:
        enrolled = system.users[subject].template
        n_frames = min(dataset.n_frames(subject, proto_a),
                       dataset.n_frames(subject, proto_b))
        n_queries = (n_frames - enroll_frames) // query_frames
        for g in range(n_queries):
            query = system.query_template(
                subject, subject, enroll_frames + g * query_frames, query_frames)
            genuine.append((enrolled, query))
        for other in system.subjects:
            if other == subject:
                continue
            query = system.query_template(subject, other, enroll_frames, query_frames)
            impostor.append((enrolled, query))
    return genuine, impostor


def score_pairs(pairs: list) -> np.ndarray:
    return np.array([tr.hamming_score(q.bits, e.bits)[1] for e, q in pairs])


def protocol_score_set(dataset: FeatureDataset, enroll_frames: int,
                       query_frames: int,
                       config: SystemConfig | None = None) -> ScoreSet:
    genuine, impostor = protocol_tests(dataset, enroll_frames, query_frames, config)
    return ScoreSet(genuine=score_pairs(genuine), impostor=score_pairs(impostor))


def decidability_protocol(dataset: FeatureDataset, subject: str,
                          config: SystemConfig | None = None) -> ScoreSet:
    """Per-user single-frame score distributions.

    Genuine: every unordered pair of the subject's frame templates. Impostor:
    every subject frame against every frame of every other subject. All
    templates share the claimed subject's parameters (and their calibrated
    quantization range), exactly as queries against that account would.
    """
    if config is None:
        config = SystemConfig()
    system = AuthSystem(dataset, config)
    proto_a, proto_b = config.protocol_pair

    def frame_bits(source: str) -> list[np.ndarray]:
        v1 = dataset.frames(source, proto_a)
        v2 = dataset.frames(source, proto_b)
        count = min(v1.shape[0], v2.shape[0])
        return [system.feature_query_bits(subject, v1[f], v2[f])
                for f in range(count)]

    own_bits = frame_bits(subject)
    n_own = len(own_bits)
    genuine = [tr.hamming_score(own_bits[i], own_bits[j])[1]
               for i in range(n_own) for j in range(i + 1, n_own)]
    impostor = []
    for other in dataset.subjects:
        if other == subject:
            continue
        for ob in frame_bits(other):
            for sb in own_bits:
                impostor.append(tr.hamming_score(sb, ob)[1])
    return ScoreSet(genuine=np.array(genuine), impostor=np.array(impostor))


def revocability_scores(user_features: tuple[np.ndarray, np.ndarray],
                        params_list: list[tr.TransformParams],
                        enrolled_templates: list[tr.CancellableTemplate]
                        ) -> np.ndarray:
    """Pseudo-impostor scores: original templates vs same-feature new-key templates."""
    enrolled_ids = {t.meta.key_id for t in enrolled_templates}
    for params in params_list:
        if params.key_id in enrolled_ids:
            raise ConfigError(
                f"revocation key list contains the enrolled key {params.key_id}")
    v1, v2 = user_features
    scores = []
    for params in params_list:
        for enrolled in enrolled_templates:
            pseudo = tr.make_template(v1, v2, params, enrolled.meta.frames_averaged,
                                      subject_id=enrolled.meta.subject_id)
            scores.append(tr.hamming_score(enrolled.bits, pseudo.bits)[1])
    return np.array(scores)


def revocability_protocol(dataset: FeatureDataset, config: SystemConfig | None = None,
                          n_keys: int = 50, seed: int = 0) -> ScoreSet:
    """Genuine/impostor/pseudo-impostor distributions over the whole population."""
    if config is None:
        config = SystemConfig()
    base = protocol_score_set(dataset, config.enroll_frames, config.query_frames, config)
    system = AuthSystem(dataset, config)
    rng = np.random.default_rng(seed)
    enrolled_keys = {system.users[s].params.user_key for s in system.subjects}
    keys = _fresh_keys(rng, n_keys, forbidden=enrolled_keys)
    params_list = [system.calibrated_params(k) for k in keys]
    pseudo = []
    for subject in system.subjects:
        account = system.users[subject]
        pseudo.append(revocability_scores(
            (account.enroll_v1, account.enroll_v2), params_list, [account.template]))
    return ScoreSet(genuine=base.genuine, impostor=base.impostor,
                    pseudo_impostor=np.concatenate(pseudo))


def unlinkability_protocol(dataset: FeatureDataset, config: SystemConfig | None = None,
                           n_keys: int = 6, seed: int = 0,
                           window_frames: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Mated and non-mated score samples from n_keys transformed databases.

    Mated: templates built from the same disjoint window of a subject's
    frames under two different keys; every window contributes, which
    multiplies the mated sample count (histogram densities need it).
    Non-mated: different subjects under different keys.
    """
    if config is None:
        config = SystemConfig()
    rng = np.random.default_rng(seed)
    keys = _fresh_keys(rng, n_keys, forbidden=set())
    subjects = dataset.subjects
    system = AuthSystem(dataset, config)
    proto_a, proto_b = config.protocol_pair
    n_windows = min(
        min(dataset.n_frames(s, proto_a), dataset.n_frames(s, proto_b))
        // window_frames
        for s in subjects)
    templates: dict[tuple[int, str, int], np.ndarray] = {}
    for key in keys:
        params = system.calibrated_params(key)
        for subject in subjects:
            v1 = system.standardize_a(dataset.frames(subject, proto_a))
            v2 = system.standardize_b(dataset.frames(subject, proto_b))
            for w in range(n_windows):
                sl = slice(w * window_frames, (w + 1) * window_frames)
                templates[(key, subject, w)] = tr.make_template(
                    v1[sl], v2[sl], params, window_frames, subject_id=subject).bits
    mated, non_mated = [], []
    for a_idx in range(n_keys):
        for b_idx in range(a_idx + 1, n_keys):
            key_a, key_b = keys[a_idx], keys[b_idx]
            for subj_a in subjects:
                for w in range(n_windows):
                    mated.append(tr.hamming_score(
                        templates[(key_a, subj_a, w)],
                        templates[(key_b, subj_a, w)])[1])
                bits_a = templates[(key_a, subj_a, 0)]
                for subj_b in subjects:
                    if subj_b != subj_a:
                        non_mated.append(tr.hamming_score(
                            bits_a, templates[(key_b, subj_b, 0)])[1])
    return np.array(mated), np.array(non_mated)


def _fresh_keys(rng: np.random.Generator, count: int, forbidden: set[int]) -> list[int]:
    keys: list[int] = []
    seen = set(forbidden)
    while len(keys) < count:
        candidate = int(rng.integers(0, 2 ** 63))
        if candidate not in seen:
            seen.add(candidate)
            keys.append(candidate)
    return keys


def evaluate(dataset: FeatureDataset, config: SystemConfig | None = None,
             revocability_keys: int = 0, unlink_keys: int = 0, seed: int = 0,
             config_hash: str = "", version: str = "") -> EvalReport:
    """Full evaluation campaign: protocol scores, EER, d', optional
    revocability and unlinkability passes."""
    if config is None:
        config = SystemConfig()
    if revocability_keys:
        scores = revocability_protocol(dataset, config, revocability_keys, seed)
    else:
        scores = protocol_score_set(dataset, config.enroll_frames,
                                    config.query_frames, config)
    eer_value, threshold = eer(scores)
    d_prime = decidability(scores)
    report = EvalReport(
        eer=float(eer_value),
        threshold_at_eer=float(threshold),
        d_prime=float(d_prime),
        d_prime_abs=abs(float(d_prime)),
        n_genuine=int(scores.genuine.size),
        n_impostor=int(scores.impostor.size),
        genuine_mean=float(scores.genuine.mean()),
        genuine_std=float(scores.genuine.std()),
        impostor_mean=float(scores.impostor.mean()),
        impostor_std=float(scores.impostor.std()),
        roc=roc_points(scores),
        seeds={"master": seed},
        config_hash=config_hash,
        version=version,
    )
    if scores.pseudo_impostor is not None:
        report.pseudo_impostor_mean = float(scores.pseudo_impostor.mean())
        report.pseudo_impostor_std = float(scores.pseudo_impostor.std())
        report.n_pseudo_impostor = int(scores.pseudo_impostor.size)
    if unlink_keys:
        mated, non_mated = unlinkability_protocol(dataset, config, unlink_keys, seed)
        report.d_sys = unlinkability(mated, non_mated).d_sys
    return report
