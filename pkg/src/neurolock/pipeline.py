"""End-to-end feature extraction: recordings in, per-frame feature vectors out.

Stages: detrend, artifact pass-through, wide pre-filter, then either the
graph path (beta-band filter, framing, instantaneous phase, synchronization
graph, graph features) or a classical per-channel feature path on the
pre-filtered frames.
"""

from __future__ import annotations

import csv
import os
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baseline_features as bf
from . import connectivity, dsp, graph_features
from .errors import ConfigError
from .ingest import Protocol, Recording

FEATURE_KINDS = ("graph", "ar", "psd", "fuzzen", "concat")


@dataclass
class DspConfig:
    prefilter: tuple[float, float] = (0.5, 42.0)
    band: tuple[float, float] = (13.0, 30.0)
    frame_seconds: float = 2.0
    overlap: float = 0.0
    fir_order: int = 330
    rho_bins: int | None = None

    def validate(self, fs: float) -> None:
        for lo, hi in (self.prefilter, self.band):
            if not (0 < lo < hi < fs / 2):
                raise ConfigError(f"band [{lo}, {hi}] invalid for fs={fs}")


@dataclass
class FeatureDataset:
    """Per-frame feature vectors grouped by (subject, protocol)."""

    vectors: dict[tuple[str, Protocol], np.ndarray] = field(default_factory=dict)
    feature_kind: str = "graph"
    names: list[str] = field(default_factory=list)

    @property
    def subjects(self) -> list[str]:
        return sorted({s for s, _ in self.vectors})

    @property
    def protocols(self) -> list[Protocol]:
        return sorted({p for _, p in self.vectors}, key=lambda p: p.value)

    @property
    def dim(self) -> int:
        first = next(iter(self.vectors.values()))
        return first.shape[1]

    def frames(self, subject: str, protocol: Protocol) -> np.ndarray:
        key = (subject, protocol)
        if key not in self.vectors:
            raise ConfigError(f"no features for subject {subject!r} / {protocol.value}")
        return self.vectors[key]

    def n_frames(self, subject: str, protocol: Protocol) -> int:
        return self.frames(subject, protocol).shape[0]


def _frame_seed(subject_id: str, frame_index: int) -> int:
    """Stable per-frame seed so parallel extraction order cannot change output."""
    digest = hashlib.blake2s(f"{subject_id}:{frame_index}".encode(),
                             digest_size=4).digest()
    return int.from_bytes(digest, "big")


def extract_frame_features(recording: Recording, config: DspConfig,
                           kind: str = "graph") -> np.ndarray:
    """Run one recording through the pipeline; rows are frames."""
    if kind not in FEATURE_KINDS:
        raise ConfigError(f"unknown feature kind {kind!r}; expected one of {FEATURE_KINDS}")
    config.validate(recording.fs)
    rec = dsp.detrend(recording)
    rec = dsp.remove_artifacts(rec)
    pre = dsp.design_bandpass(rec.fs, *config.prefilter, config.fir_order)
    rec = dsp.filter_zero_phase(rec, pre)

    if kind == "graph":
        beta = dsp.design_bandpass(rec.fs, *config.band, config.fir_order)
        rec = dsp.filter_zero_phase(rec, beta)
        frames = dsp.frame(rec, config.frame_seconds, config.overlap)
        rows = []
        for fr in frames:
            phase = dsp.instantaneous_phase(fr)
            graph = connectivity.build_graph(phase, config.rho_bins)
            feat = graph_features.extract_features(
                graph, seed=_frame_seed(fr.subject_id, fr.frame_index),
                subject_id=fr.subject_id, protocol_tag=fr.protocol_tag,
                frame_index=fr.frame_index)
            rows.append(feat.values)
        return np.stack(rows)

    frames = dsp.frame(rec, config.frame_seconds, config.overlap)
    kind_enum = bf.BaselineKind(kind)
    return np.stack([bf.baseline_vector(fr, kind_enum).values for fr in frames])


def dataset_feature_names(kind: str, n_channels: int) -> list[str]:
    if kind == "graph":
        return graph_features.feature_names(n_channels)
    return bf.baseline_feature_names(bf.BaselineKind(kind), n_channels)


def build_feature_dataset(recordings: list[Recording], config: DspConfig,
                          kind: str = "graph") -> FeatureDataset:
    """Extract features for every recording, grouped by (subject, protocol)."""
    if not recordings:
        raise ConfigError("no recordings to extract features from")
    vectors = {}
    for rec in recordings:
        key = (rec.subject_id, rec.protocol_tag)
        if key in vectors:
            raise ConfigError(f"duplicate recording for {key}")
        vectors[key] = extract_frame_features(rec, config, kind)
    names = dataset_feature_names(kind, recordings[0].n_channels)
    return FeatureDataset(vectors=vectors, feature_kind=kind, names=names)


def write_feature_csv(path, matrix: np.ndarray, names: list[str]) -> None:
    """One row per frame, header with component names; written atomically."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index"] + list(names))
        for idx, row in enumerate(matrix):
            writer.writerow([idx] + [repr(float(v)) for v in row])
    os.replace(tmp, path)


def read_feature_csv(path) -> tuple[np.ndarray, list[str]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row[1:]] for row in reader if row]
    return np.array(rows, dtype=float), header[1:]


def random_feature_dataset(n_subjects: int, n_frames: int, dim: int, seed: int,
                           protocols: tuple[Protocol, Protocol] = (Protocol.EO, Protocol.EC),
                           subject_scale: float = 0.5,
                           frame_noise: float = 0.1) -> FeatureDataset:
    """Seeded random feature dataset (subject anchor + frame jitter).

    Useful for protocol-count checks and metric plumbing where realistic EEG
    structure is unnecessary. Values stay positive, loosely mimicking graph
    feature magnitudes.
    """
    vectors = {}
    for s in range(n_subjects):
        anchor_rng = np.random.default_rng([seed, s])
        anchor = anchor_rng.uniform(0.2, 1.0, size=dim)
        for p_idx, protocol in enumerate(protocols):
            rng = np.random.default_rng([seed, s, p_idx])
            shift = rng.uniform(1.0 - subject_scale / 2, 1.0 + subject_scale / 2, size=dim)
            frames = anchor * shift * (1.0 + frame_noise * rng.standard_normal((n_frames, dim)))
            vectors[(f"S{s + 1:03d}", protocol)] = np.abs(frames)
    return FeatureDataset(vectors=vectors, feature_kind="random",
                          names=[f"f{i:03d}" for i in range(dim)])
