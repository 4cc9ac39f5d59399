"""Key-driven non-invertible template transform and encrypted-domain matcher.

A user key seeds two independent deterministic streams: a permutation of the
feature indices and a wide-to-narrow projection matrix with fewer columns
than rows. Two protocol-tagged feature vectors are fused by permuting the
first, taking the elementwise product with the second, and projecting; the
projected vector (averaged over frames) is quantized to 8-bit gray codes.
Because the projection discards dimensions, recovering the features from a
template and its key is underdetermined; revoking a template simply means
issuing a new key.

Template file layout (magic "CEEG1"): 5 magic bytes, 4-byte big-endian JSON
length, UTF-8 JSON metadata, then the bit payload packed big-endian
(MSB-first within each byte).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (ConfigError, IncompatibleTemplates, ParseError,
                     ShapeError)

TEMPLATE_MAGIC = b"CEEG1"
BITS_PER_DIM = 8
LEVELS = (1 << BITS_PER_DIM) - 1  # 255

# stream labels keeping permutation and projection draws independent
_PERM_STREAM = 0x7065726D
_PROJ_STREAM = 0x70726F6A


def output_dim(dim: int, delta: float) -> int:
    """Number of projected dimensions: round(delta * dim), half away from zero."""
    return int(np.floor(delta * dim + 0.5))


def key_identifier(user_key: int) -> str:
    """Short public identifier for a key (not a secret, not reversible in use)."""
    return hashlib.blake2s(int(user_key).to_bytes(8, "big"), digest_size=6).hexdigest()


@dataclass
class TransformParams:
    """Everything revocation replaces: key, permutation, projection, ratio,
    and the per-output-dimension quantization range."""

    user_key: int
    dim: int
    delta: float
    permutation: np.ndarray      # 0-based permutation of range(dim)
    projection: np.ndarray       # dim x output_dim(dim, delta)
    key_id: str
    quant_range: np.ndarray | None = None  # n_out x 2, set by calibration

    @property
    def n_out(self) -> int:
        return self.projection.shape[1]


@dataclass
class TemplateMeta:
    """Public template metadata stored alongside the bits."""

    subject_id: str
    key_id: str
    delta: float
    frames_averaged: int             # F
    quant_range: np.ndarray          # n_out x 2, [r_min, r_max] per dimension

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "key_id": self.key_id,
            "delta": self.delta,
            "frames_averaged": self.frames_averaged,
            "quant_range": [[float(lo), float(hi)] for lo, hi in self.quant_range],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateMeta":
        return cls(
            subject_id=d["subject_id"],
            key_id=d["key_id"],
            delta=float(d["delta"]),
            frames_averaged=int(d["frames_averaged"]),
            quant_range=np.asarray(d["quant_range"], dtype=float),
        )


@dataclass
class CancellableTemplate:
    """Fixed-length bit string plus public metadata."""

    bits: np.ndarray  # 1-D uint8 array of 0/1
    meta: TemplateMeta

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1 or self.bits.size % BITS_PER_DIM:
            raise ShapeError(f"bit length {self.bits.size} not a multiple of {BITS_PER_DIM}")
        if self.meta.frames_averaged < 1:
            raise ConfigError("template must average at least one frame")

    @property
    def n_bits(self) -> int:
        return self.bits.size


@dataclass
class MatchResult:
    score: float       # normalized Hamming distance in [0, 1]
    raw: int           # differing bit count
    decision: bool     # accept iff score <= threshold
    threshold: float


def derive_params(user_key: int, dim: int, delta: float) -> TransformParams:
    """Deterministically derive permutation and projection from a user key.

    Identical (key, dim, delta) always produce identical parameters; the
    permutation and projection come from independent seeded streams, and the
    projection entries are i.i.d. uniform on [0, 1).
    """
    if dim < 2:
        raise ConfigError(f"feature dimension must be at least 2, got {dim}")
    if not (0.0 < delta < 1.0):
        raise ConfigError(f"dimension ratio must lie in (0, 1), got {delta}")
    if not (0 <= int(user_key) < 2 ** 64):
        raise ConfigError("user key must be an unsigned 64-bit integer")
    n_out = output_dim(dim, delta)
    if n_out < 1:
        raise ConfigError(f"delta={delta} with dim={dim} projects to zero dimensions")
    if n_out >= dim:
        raise ConfigError(
            f"delta={delta} with dim={dim} would not reduce dimension ({n_out} >= {dim})")
    permutation = np.random.default_rng([int(user_key), _PERM_STREAM]).permutation(dim)
    projection = np.random.default_rng([int(user_key), _PROJ_STREAM]).random((dim, n_out))
    return TransformParams(user_key=int(user_key), dim=dim, delta=delta,
                           permutation=permutation, projection=projection,
                           key_id=key_identifier(user_key))


def combine(v1: np.ndarray, v2: np.ndarray, params: TransformParams) -> np.ndarray:
    """Permute the first vector and take the elementwise product with the second.

    Convention: out[i] = v1[permutation[i]] * v2[i].
    """
    v1 = np.asarray(v1, dtype=float).ravel()
    v2 = np.asarray(v2, dtype=float).ravel()
    if v1.size != params.dim or v2.size != params.dim:
        raise ShapeError(
            f"feature dims ({v1.size}, {v2.size}) do not match params dim {params.dim}")
    return v1[params.permutation] * v2


def project(c: np.ndarray, params: TransformParams) -> np.ndarray:
    """Project the fused vector to round(delta * dim) dimensions."""
    c = np.asarray(c, dtype=float).ravel()
    if c.size != params.dim:
        raise ShapeError(f"vector of {c.size} entries, projection expects {params.dim}")
    return c @ params.projection


def _gray_levels(x: np.ndarray, quant_range: np.ndarray) -> np.ndarray:
    lo = quant_range[:, 0]
    hi = quant_range[:, 1]
    clipped = np.clip(x, lo, hi)
    scaled = (clipped - lo) * (LEVELS / (hi - lo))
    return np.minimum(np.floor(scaled + 0.5), LEVELS).astype(np.uint8)


def gray_encode(r: np.ndarray, quant_range: np.ndarray) -> np.ndarray:
    """Quantize each entry to 256 levels over its range and emit 8-bit gray codes.

    Values are clamped into the range first; bits are MSB-first per dimension.
    """
    r = np.asarray(r, dtype=float).ravel()
    quant_range = np.asarray(quant_range, dtype=float).reshape(-1, 2)
    if quant_range.shape[0] != r.size:
        raise ShapeError(f"{r.size} values but {quant_range.shape[0]} quantization ranges")
    if np.any(quant_range[:, 0] >= quant_range[:, 1]):
        raise ConfigError("every quantization range needs r_min < r_max")
    levels = _gray_levels(r, quant_range)
    gray = levels ^ (levels >> 1)
    return np.unpackbits(gray)


def gray_decode(bits: np.ndarray, quant_range: np.ndarray) -> np.ndarray:
    """Invert gray_encode up to quantization (within half a step of the clamp)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size % BITS_PER_DIM:
        raise ShapeError(f"bit length {bits.size} not a multiple of {BITS_PER_DIM}")
    quant_range = np.asarray(quant_range, dtype=float).reshape(-1, 2)
    n = bits.size // BITS_PER_DIM
    if quant_range.shape[0] != n:
        raise ShapeError(f"{n} encoded values but {quant_range.shape[0]} ranges")
    gray = np.packbits(bits)
    levels = gray.copy()
    for shift in (1, 2, 4):
        levels = levels ^ (levels >> shift)
    lo = quant_range[:, 0]
    hi = quant_range[:, 1]
    return lo + levels.astype(float) * (hi - lo) / LEVELS


def quant_range_from_samples(projected: np.ndarray,
                             margin: float = 0.1) -> np.ndarray:
    """Per-dimension [min, max] over projected samples, widened by a margin.

    Meant to be fed the whole enrolled population's projections under one key
    (see calibrate_params): quantization then encodes where a user's average
    sits within the population, which is what makes template bits carry
    identity. A degenerate dimension falls back to a magnitude-proportional
    margin so the range stays non-empty.
    """
    samples = np.atleast_2d(np.asarray(projected, dtype=float))
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    width = hi - lo
    pad = np.where(width > 1e-12,
                   margin * width,
                   np.maximum(margin * np.abs((lo + hi) / 2.0), 1e-6))
    return np.stack([lo - pad, hi + pad], axis=1)


def calibrate_params(params: TransformParams, population_frames_v1,
                     population_frames_v2, margin: float = 0.1) -> TransformParams:
    """Fix the quantization range of a parameter set from population data.

    Projects every provided frame pair under the parameters and spans the
    observed per-dimension range plus a margin. Deterministic for fixed
    inputs; the result is stored on the returned params (and later mirrored
    into public template metadata).
    """
    projected = np.stack([
        project(combine(np.asarray(v1, dtype=float), np.asarray(v2, dtype=float),
                        params), params)
        for v1, v2 in zip(population_frames_v1, population_frames_v2)
    ])
    params.quant_range = quant_range_from_samples(projected, margin)
    return params


def make_template(frames_v1, frames_v2, params: TransformParams, n_frames: int,
                  quant_range: np.ndarray | None = None,
                  subject_id: str = "") -> CancellableTemplate:
    """Fuse, project, and average the first n_frames vector pairs, then encode.

    The quantization range comes from (in order of precedence) the explicit
    argument, the calibrated params, or as a last resort the enrollment
    frames themselves. Enrolled and query templates must quantize over the
    same range for their bits to be comparable.
    """
    if n_frames < 1:
        raise ConfigError("need at least one frame")
    if len(frames_v1) < n_frames or len(frames_v2) < n_frames:
        raise ConfigError(
            f"requested {n_frames} frames but only "
            f"{min(len(frames_v1), len(frames_v2))} available")
    projected = np.stack([
        project(combine(np.asarray(frames_v1[f], dtype=float),
                        np.asarray(frames_v2[f], dtype=float), params), params)
        for f in range(n_frames)
    ])
    mean_r = projected.mean(axis=0)
    if quant_range is None:
        quant_range = params.quant_range
    if quant_range is None:
        quant_range = quant_range_from_samples(projected)
    quant_range = np.asarray(quant_range, dtype=float).reshape(-1, 2)
    bits = gray_encode(mean_r, quant_range)
    meta = TemplateMeta(subject_id=subject_id, key_id=params.key_id,
                        delta=params.delta, frames_averaged=n_frames,
                        quant_range=quant_range)
    return CancellableTemplate(bits=bits, meta=meta)


def hamming_score(bits_a: np.ndarray, bits_b: np.ndarray) -> tuple[int, float]:
    """Raw and normalized Hamming distance between equal-length bit arrays."""
    if bits_a.size != bits_b.size:
        raise IncompatibleTemplates(
            f"bit lengths differ: {bits_a.size} vs {bits_b.size}")
    raw = int(np.bitwise_xor(bits_a, bits_b).sum())
    return raw, raw / bits_a.size


def match(query: CancellableTemplate, enrolled: CancellableTemplate,
          threshold: float) -> MatchResult:
    """XOR-and-count matcher; accepts when the normalized distance is <= threshold."""
    if query.n_bits != enrolled.n_bits:
        raise IncompatibleTemplates(
            f"bit lengths differ: {query.n_bits} vs {enrolled.n_bits}")
    if query.meta.key_id != enrolled.meta.key_id:
        raise IncompatibleTemplates(
            f"key ids differ: {query.meta.key_id} vs {enrolled.meta.key_id}")
    if query.meta.delta != enrolled.meta.delta:
        raise IncompatibleTemplates(
            f"dimension ratios differ: {query.meta.delta} vs {enrolled.meta.delta}")
    raw, score = hamming_score(query.bits, enrolled.bits)
    return MatchResult(score=score, raw=raw, decision=score <= threshold,
                       threshold=threshold)


def save_template(template: CancellableTemplate, path) -> None:
    """Write the CEEG1 container: magic, meta JSON, packed bit payload."""
    meta_bytes = json.dumps(template.meta.to_dict(), sort_keys=True).encode("utf-8")
    payload = np.packbits(template.bits).tobytes()
    blob = (TEMPLATE_MAGIC + len(meta_bytes).to_bytes(4, "big") + meta_bytes + payload)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_template(path) -> CancellableTemplate:
    raw = Path(path).read_bytes()
    if raw[:5] != TEMPLATE_MAGIC:
        raise ParseError(f"bad template magic {raw[:5]!r}", offset=0)
    meta_len = int.from_bytes(raw[5:9], "big")
    try:
        meta = TemplateMeta.from_dict(json.loads(raw[9:9 + meta_len].decode("utf-8")))
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise ParseError(f"corrupt template metadata: {exc}", offset=9) from None
    payload = raw[9 + meta_len:]
    n_dims = meta.quant_range.shape[0]
    expected_bytes = n_dims  # 8 bits per dimension = 1 byte
    if len(payload) != expected_bytes:
        raise ParseError(
            f"payload of {len(payload)} bytes, metadata implies {expected_bytes}",
            offset=9 + meta_len)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    return CancellableTemplate(bits=bits, meta=meta)
