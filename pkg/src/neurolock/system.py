"""Protected authentication system: enrollment store, matcher, and re-keying.

Templates are enrolled from the first F_e frame pairs of each subject. In the
lost-key evaluation scenario every user shares one key (the attacker is
assumed to hold it); per-user keys are also supported. The system exposes the
raw-bit scoring surface that the evaluation protocols and attack simulations
drive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transform as tr
from .errors import ConfigError
from .ingest import Protocol
from .pipeline import FeatureDataset


@dataclass
class SystemConfig:
    delta: float = 0.5
    enroll_frames: int = 10          # F_e
    query_frames: int = 1            # F_t
    theta: float = 0.389
    protocol_pair: tuple[Protocol, Protocol] = (Protocol.EO, Protocol.EC)
    lost_key: bool = True            # one shared key (worst case) vs per-user keys
    master_key: int = 0x5EED
    # quantization window half-margin as a multiple of the population span;
    # generous margins keep out-of-population queries unclamped
    calibration_margin: float = 1.0

    def validate(self) -> None:
        if not (0.0 <= self.theta <= 1.0):
            raise ConfigError(f"threshold must lie in [0, 1], got {self.theta}")
        if self.enroll_frames < 1 or self.query_frames < 1:
            raise ConfigError("frame counts must be at least 1")


@dataclass
class UserAccount:
    subject_id: str
    params: tr.TransformParams
    template: tr.CancellableTemplate
    enroll_v1: np.ndarray      # F_e x dim, standardized working space
    enroll_v2: np.ndarray
    raw_v1: np.ndarray         # F_e x dim, as extracted
    raw_v2: np.ndarray

    @property
    def true_features(self) -> np.ndarray:
        """Mean raw enrollment feature pair (reference for attack similarity)."""
        return np.concatenate([self.raw_v1.mean(axis=0), self.raw_v2.mean(axis=0)])


class AuthSystem:
    """Enrolled population over a feature dataset.

    Parameter sets are calibrated per key against the whole enrolled
    population: the quantization range spans everyone's projections under
    that key, so a template's levels encode where the user sits within the
    population rather than a self-referential enrollment window.
    """

    def __init__(self, dataset: FeatureDataset, config: SystemConfig,
                 user_keys: dict[str, int] | None = None):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.dim = dataset.dim
        proto_a, proto_b = config.protocol_pair
        raw: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for subject in dataset.subjects:
            v1 = dataset.frames(subject, proto_a)
            v2 = dataset.frames(subject, proto_b)
            n_frames = min(v1.shape[0], v2.shape[0])
            if n_frames < config.enroll_frames + config.query_frames:
                raise ConfigError(
                    f"subject {subject}: {n_frames} frames < F_e + F_t = "
                    f"{config.enroll_frames + config.query_frames}")
            raw[subject] = (v1[:config.enroll_frames], v2[:config.enroll_frames])
        # population z-scoring per protocol stream: without it, a user's mean
        # feature level survives every re-keying (the permutation only shuffles
        # terms of the same sum) and templates stay linkable across keys
        pooled_a = np.concatenate([raw[s][0] for s in dataset.subjects])
        pooled_b = np.concatenate([raw[s][1] for s in dataset.subjects])
        self._mean_a, self._scale_a = _standardizer(pooled_a)
        self._mean_b, self._scale_b = _standardizer(pooled_b)
        enrollments = {
            s: (self.standardize_a(raw[s][0]), self.standardize_b(raw[s][1]))
            for s in dataset.subjects
        }
        self._population_v1 = np.concatenate(
            [enrollments[s][0] for s in dataset.subjects])
        self._population_v2 = np.concatenate(
            [enrollments[s][1] for s in dataset.subjects])
        self._params_cache: dict[int, tr.TransformParams] = {}

        self.users: dict[str, UserAccount] = {}
        for subject in dataset.subjects:
            if user_keys is not None:
                key = user_keys[subject]
            elif config.lost_key:
                key = config.master_key
            else:
                key = int(np.random.default_rng(
                    [config.master_key, hash_subject(subject)]).integers(0, 2 ** 63))
            params = self.calibrated_params(key)
            enroll_v1, enroll_v2 = enrollments[subject]
            template = tr.make_template(enroll_v1, enroll_v2, params,
                                        config.enroll_frames, subject_id=subject)
            self.users[subject] = UserAccount(subject, params, template,
                                              enroll_v1, enroll_v2,
                                              raw[subject][0], raw[subject][1])

    def standardize_a(self, v: np.ndarray) -> np.ndarray:
        """Map first-protocol features into the calibrated z-score space."""
        return (np.asarray(v, dtype=float) - self._mean_a) / self._scale_a

    def standardize_b(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=float) - self._mean_b) / self._scale_b

    def calibrated_params(self, key: int) -> tr.TransformParams:
        """Parameter set for a key with its population-calibrated range."""
        if key not in self._params_cache:
            params = tr.derive_params(key, self.dim, self.config.delta)
            self._params_cache[key] = tr.calibrate_params(
                params, self._population_v1, self._population_v2,
                margin=self.config.calibration_margin)
        return self._params_cache[key]

    @property
    def subjects(self) -> list[str]:
        return sorted(self.users)

    @property
    def n_bits(self) -> int:
        return next(iter(self.users.values())).template.n_bits

    # -- query construction -------------------------------------------------

    def query_template(self, claimed: str, source: str, start_frame: int,
                       n_frames: int | None = None) -> tr.CancellableTemplate:
        """Template for frames of `source` presented against `claimed`'s account.

        Uses the claimed account's parameters and quantization range, exactly
        as the deployed matcher would.
        """
        account = self.users[claimed]
        n_frames = self.config.query_frames if n_frames is None else n_frames
        proto_a, proto_b = self.config.protocol_pair
        v1 = self.dataset.frames(source, proto_a)[start_frame:start_frame + n_frames]
        v2 = self.dataset.frames(source, proto_b)[start_frame:start_frame + n_frames]
        if v1.shape[0] < n_frames or v2.shape[0] < n_frames:
            raise ConfigError(
                f"subject {source}: not enough frames at offset {start_frame}")
        return tr.make_template(self.standardize_a(v1), self.standardize_b(v2),
                                account.params, n_frames,
                                quant_range=account.template.meta.quant_range,
                                subject_id=source)

    def feature_query_bits(self, claimed: str, v1: np.ndarray,
                           v2: np.ndarray) -> np.ndarray:
        """Bits a single raw feature-pair query produces against `claimed`'s account."""
        account = self.users[claimed]
        z1 = self.standardize_a(v1)
        z2 = self.standardize_b(v2)
        r = tr.project(tr.combine(z1, z2, account.params), account.params)
        return tr.gray_encode(r, account.template.meta.quant_range)

    # -- scoring -------------------------------------------------------------

    def score_bits(self, claimed: str, bits: np.ndarray) -> float:
        """Normalized Hamming distance of raw query bits to the enrolled template."""
        _, score = tr.hamming_score(bits, self.users[claimed].template.bits)
        return score

    def verify(self, claimed: str, query: tr.CancellableTemplate,
               theta: float | None = None) -> tr.MatchResult:
        theta = self.config.theta if theta is None else theta
        return tr.match(query, self.users[claimed].template, theta)

    # -- revocation ----------------------------------------------------------

    def reissue(self, subject: str, new_key: int) -> UserAccount:
        """Fresh account state under a new key; does not mutate the system."""
        account = self.users[subject]
        params = self.calibrated_params(new_key)
        template = tr.make_template(account.enroll_v1, account.enroll_v2, params,
                                    self.config.enroll_frames, subject_id=subject)
        return UserAccount(subject, params, template,
                           account.enroll_v1, account.enroll_v2,
                           account.raw_v1, account.raw_v2)

    def revoke(self, subject: str, new_key: int) -> None:
        """Replace the stored account state under a new key."""
        self.users[subject] = self.reissue(subject, new_key)


def hash_subject(subject: str) -> int:
    import hashlib
    return int.from_bytes(hashlib.blake2s(subject.encode(), digest_size=4).digest(), "big")


def _standardizer(pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = pooled.mean(axis=0)
    scale = pooled.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale
