"""Attack battery: score-oracle hill climbing, record-multiplicity inversion,
second attacks after revocation, and brute-force search-space accounting.

Hill climbing drives a derivative-free simplex search against the matcher's
score output. Case FEATURE_SPACE submits candidate feature-vector pairs and
runs them through the full transform; case TEMPLATE_SPACE searches the
pre-encoding projected space and gray-encodes each candidate. Every score
query counts against the attempt budget.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import transform as tr
from .errors import ConfigError, ObjectiveError, ShapeError
from .system import AuthSystem


class AttackCase(enum.Enum):
    FEATURE_SPACE = "feature_space"    # Case I: recover the feature vectors
    TEMPLATE_SPACE = "template_space"  # Case II: recover the stored template


@dataclass
class AttackConfig:
    case: AttackCase = AttackCase.FEATURE_SPACE
    theta: float = 0.389
    max_attempts: int = 20000
    restarts: int | None = None  # None: restart until the attempt budget is spent
    seed: int = 0
    bounds: np.ndarray | None = None  # per-dimension [lo, hi]; default: public stats

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError("attack needs at least one attempt")
        if not (0.0 <= self.theta <= 1.0):
            raise ConfigError(f"threshold must lie in [0, 1], got {self.theta}")


@dataclass
class HillClimbOutcome:
    subject: str
    success: bool
    attempts: int                 # oracle calls up to success, or the budget
    best_score: float
    solution: np.ndarray          # accepted candidate, or best found
    similarity: float | None      # cosine to true features (feature-space case)
    trace: list = field(default_factory=list)  # (attempt, score) pairs


@dataclass
class AttackReport:
    case: str
    theta: float
    outcomes: list[HillClimbOutcome]
    success_rate: float
    mean_attempts_to_success: float | None
    similarity_mean: float | None = None
    similarity_std: float | None = None
    score_mean: float | None = None
    score_std: float | None = None
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_json_dict(self) -> dict:
        return {
            "case": self.case,
            "theta": self.theta,
            "success_rate": self.success_rate,
            "mean_attempts_to_success": self.mean_attempts_to_success,
            "similarity_mean": self.similarity_mean,
            "similarity_std": self.similarity_std,
            "score_mean": self.score_mean,
            "score_std": self.score_std,
            "seeds": self.seeds,
            "config_hash": self.config_hash,
            "per_user": [
                {"subject": o.subject, "success": o.success,
                 "attempts": o.attempts, "best_score": o.best_score,
                 "similarity": o.similarity}
                for o in self.outcomes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

class _BudgetExhausted(Exception):
    pass


def nelder_mead(objective, x0, budget: int = 500, tol: float = 0.0,
                initial_step: np.ndarray | float | None = None,
                diameter_tol: float = 1e-10):
    """Downhill-simplex minimization with an exact evaluation budget.

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 0.5, 0.5). Stops when the best value drops to tol, the simplex
    diameter collapses below diameter_tol, or the budget is spent. Returns
    (best x, best value, evaluations used); the starting point is evaluated
    first, so budget=1 returns x0's value.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if n < 1:
        raise ConfigError("objective dimension must be at least 1")
    if budget < 1:
        raise ConfigError("evaluation budget must be at least 1")
    if initial_step is None:
        step = 0.1 * (np.abs(x0) + 1.0)
    else:
        step = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,)).copy()
        step[step == 0.0] = 1e-3

    evals = 0
    best_x, best_f = x0.copy(), np.inf

    def evaluate(x):
        nonlocal evals, best_x, best_f
        if evals >= budget:
            raise _BudgetExhausted()
        value = float(objective(x))
        evals += 1
        if np.isnan(value):
            raise ObjectiveError("objective returned NaN")
        if value < best_f:
            best_f, best_x = value, x.copy()
        return value

    try:
        simplex = [x0.copy()]
        fvals = [evaluate(x0)]
        for i in range(n):
            vertex = x0.copy()
            vertex[i] += step[i]
            simplex.append(vertex)
            fvals.append(evaluate(vertex))
        simplex = np.array(simplex)
        fvals = np.array(fvals)

        while True:
            order = np.argsort(fvals, kind="stable")
            simplex, fvals = simplex[order], fvals[order]
            if fvals[0] <= tol:
                break
            diameter = np.max(np.abs(simplex[1:] - simplex[0]))
            if diameter < diameter_tol:
                break
            centroid = simplex[:-1].mean(axis=0)
            worst = simplex[-1]
            reflected = centroid + (centroid - worst)
            f_reflected = evaluate(reflected)
            if f_reflected < fvals[0]:
                expanded = centroid + 2.0 * (centroid - worst)
                f_expanded = evaluate(expanded)
                if f_expanded < f_reflected:
                    simplex[-1], fvals[-1] = expanded, f_expanded
                else:
                    simplex[-1], fvals[-1] = reflected, f_reflected
            elif f_reflected < fvals[-2]:
                simplex[-1], fvals[-1] = reflected, f_reflected
            else:
                if f_reflected < fvals[-1]:
                    simplex[-1], fvals[-1] = reflected, f_reflected
                contracted = centroid + 0.5 * (simplex[-1] - centroid)
                f_contracted = evaluate(contracted)
                if f_contracted < fvals[-1]:
                    simplex[-1], fvals[-1] = contracted, f_contracted
                else:
                    for i in range(1, n + 1):
                        simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                        fvals[i] = evaluate(simplex[i])
    except _BudgetExhausted:
        pass
    return best_x, best_f, evals


# ---------------------------------------------------------------------------
# hill-climbing attack
# ---------------------------------------------------------------------------

class _OracleSuccess(Exception):
    def __init__(self, candidate, score, attempts):
        self.candidate = candidate
        self.score = score
        self.attempts = attempts


class ScoreOracle:
    """Counts every matcher query and stops the search on first acceptance."""

    def __init__(self, score_fn, theta: float, max_attempts: int,
                 keep_trace: bool = True):
        self.score_fn = score_fn
        self.theta = theta
        self.max_attempts = max_attempts
        self.attempts = 0
        self.trace: list[tuple[int, float]] = []
        self.keep_trace = keep_trace

    def __call__(self, candidate: np.ndarray) -> float:
        if self.attempts >= self.max_attempts:
            raise _BudgetExhausted()
        score = self.score_fn(candidate)
        self.attempts += 1
        if self.keep_trace:
            self.trace.append((self.attempts, score))
        if score <= self.theta:
            raise _OracleSuccess(np.array(candidate, dtype=float), score, self.attempts)
        return score


def default_feature_bounds(system: AuthSystem) -> np.ndarray:
    """Search box from population feature statistics (the public-data assumption)."""
    proto_a, proto_b = system.config.protocol_pair
    stacked_a = np.concatenate([system.dataset.frames(s, proto_a)
                                for s in system.subjects])
    stacked_b = np.concatenate([system.dataset.frames(s, proto_b)
                                for s in system.subjects])
    both = np.concatenate([np.stack([stacked_a.min(axis=0), stacked_a.max(axis=0)], 1),
                           np.stack([stacked_b.min(axis=0), stacked_b.max(axis=0)], 1)])
    width = both[:, 1] - both[:, 0]
    pad = np.maximum(0.1 * width, 1e-6)
    return np.stack([both[:, 0] - pad, both[:, 1] + pad], axis=1)


def hill_climb_attack(system: AuthSystem, subject: str,
                      config: AttackConfig) -> HillClimbOutcome:
    """Simplex search against one account's score oracle with seeded restarts."""
    account = system.users[subject]
    if config.case == AttackCase.FEATURE_SPACE:
        bounds = config.bounds if config.bounds is not None \
            else default_feature_bounds(system)
        dim = system.dim

        def score_fn(x):
            return system.score_bits(
                subject, system.feature_query_bits(subject, x[:dim], x[dim:]))
    else:
        bounds = config.bounds if config.bounds is not None \
            else account.template.meta.quant_range

        def score_fn(x):
            return system.score_bits(
                subject,
                tr.gray_encode(x, account.template.meta.quant_range))

    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    oracle = ScoreOracle(score_fn, config.theta, config.max_attempts)
    width = bounds[:, 1] - bounds[:, 0]
    best_x, best_f = None, np.inf
    restart = 0
    last_refined = np.inf
    try:
        # alternate exploration (fresh seeded uniform draws over the bounds)
        # with refinement sweeps that restart the simplex at the incumbent
        # with shrinking scales; refine only when the incumbent improved,
        # otherwise the deterministic sweep would just retrace itself
        while oracle.attempts < config.max_attempts:
            if config.restarts is not None and restart >= config.restarts:
                break
            rng = np.random.default_rng(
                [config.seed, _stable_int(subject), restart])
            restart += 1
            x0 = rng.uniform(bounds[:, 0], bounds[:, 1])
            x, f, _ = nelder_mead(oracle, x0,
                                  budget=config.max_attempts - oracle.attempts,
                                  tol=config.theta, initial_step=0.25 * width)
            if f < best_f:
                best_x, best_f = x, f
            while best_f < last_refined and oracle.attempts < config.max_attempts:
                last_refined = best_f
                for scale in (0.08, 0.04, 0.02, 0.01, 0.005):
                    remaining = config.max_attempts - oracle.attempts
                    if remaining < 1:
                        break
                    x, f, _ = nelder_mead(oracle, best_x, budget=remaining,
                                          tol=config.theta,
                                          initial_step=scale * width)
                    if f < best_f:
                        best_x, best_f = x, f
    except _BudgetExhausted:
        pass
    except _OracleSuccess as hit:
        similarity = None
        if config.case == AttackCase.FEATURE_SPACE:
            similarity = cosine_similarity(hit.candidate, account.true_features)
        return HillClimbOutcome(subject=subject, success=True,
                                attempts=hit.attempts, best_score=hit.score,
                                solution=hit.candidate, similarity=similarity,
                                trace=oracle.trace)
    similarity = None
    if config.case == AttackCase.FEATURE_SPACE and best_x is not None:
        similarity = cosine_similarity(best_x, account.true_features)
    return HillClimbOutcome(subject=subject, success=False,
                            attempts=oracle.attempts, best_score=float(best_f),
                            solution=best_x if best_x is not None else np.array([]),
                            similarity=similarity, trace=oracle.trace)


def run_hill_climb_campaign(system: AuthSystem, config: AttackConfig,
                            config_hash: str = "") -> AttackReport:
    outcomes = [hill_climb_attack(system, subject, config)
                for subject in system.subjects]
    successes = [o for o in outcomes if o.success]
    sr = len(successes) / len(outcomes)
    n_att = float(np.mean([o.attempts for o in successes])) if successes else None
    sims = [o.similarity for o in successes if o.similarity is not None]
    scores = [o.best_score for o in successes]
    return AttackReport(
        case=config.case.value, theta=config.theta, outcomes=outcomes,
        success_rate=sr, mean_attempts_to_success=n_att,
        similarity_mean=float(np.mean(sims)) if sims else None,
        similarity_std=float(np.std(sims)) if sims else None,
        score_mean=float(np.mean(scores)) if scores else None,
        score_std=float(np.std(scores)) if scores else None,
        seeds={"attack": config.seed}, config_hash=config_hash)


# ---------------------------------------------------------------------------
# attack via record multiplicity
# ---------------------------------------------------------------------------

@dataclass
class ArmResult:
    v1_hat: np.ndarray
    v2_hat: np.ndarray
    similarity: float | None
    n_equations: int
    n_unknowns: int
    rank: int
    residual: float
    monomials: list[tuple[int, int]]


def arm_attack(templates: list[tr.CancellableTemplate],
               params_list: list[tr.TransformParams],
               quant_ranges: list[np.ndarray] | None = None,
               truth: tuple[np.ndarray, np.ndarray] | None = None) -> ArmResult:
    """Correlate several (template, parameters) pairs from the same features.

    Decodes each template to projected-value estimates, assembles the linear
    system over the product monomials v1[a]*v2[b] that the permutations
    select, solves it by minimum-norm least squares, and factors the recovered
    monomials into a rank-one estimate (v1_hat, v2_hat) by alternating least
    squares over the populated entries.
    """
    if len(templates) != len(params_list) or not templates:
        raise ShapeError("need matching non-empty template and parameter lists")
    dim = params_list[0].dim
    if any(p.dim != dim for p in params_list):
        raise ShapeError("inconsistent feature dimensions across parameter sets")
    if quant_ranges is None:
        quant_ranges = [t.meta.quant_range for t in templates]

    monomial_col: dict[tuple[int, int], int] = {}
    rows, rhs = [], []
    for template, params, qr in zip(templates, params_list, quant_ranges):
        r_hat = tr.gray_decode(template.bits, qr)
        for j in range(params.n_out):
            coeffs: dict[int, float] = {}
            for i in range(dim):
                key = (int(params.permutation[i]), i)
                col = monomial_col.setdefault(key, len(monomial_col))
                coeffs[col] = coeffs.get(col, 0.0) + params.projection[i, j]
            rows.append(coeffs)
            rhs.append(r_hat[j])
    n_unknowns = len(monomial_col)
    a_matrix = np.zeros((len(rows), n_unknowns))
    for r, coeffs in enumerate(rows):
        for col, value in coeffs.items():
            a_matrix[r, col] = value
    b_vector = np.array(rhs)
    z, *_ = np.linalg.lstsq(a_matrix, b_vector, rcond=None)
    residual = float(np.linalg.norm(a_matrix @ z - b_vector))
    rank = int(np.linalg.matrix_rank(a_matrix))

    z_matrix = np.zeros((dim, dim))
    for (a, b), col in monomial_col.items():
        z_matrix[a, b] = z[col]
    v1_hat, v2_hat = _rank_one_factor(z_matrix)
    similarity = None
    if truth is not None:
        truth_cat = np.concatenate([np.asarray(truth[0], float).ravel(),
                                    np.asarray(truth[1], float).ravel()])
        similarity = cosine_similarity(np.concatenate([v1_hat, v2_hat]), truth_cat)
    return ArmResult(v1_hat=v1_hat, v2_hat=v2_hat, similarity=similarity,
                     n_equations=len(rows), n_unknowns=n_unknowns, rank=rank,
                     residual=residual, monomials=sorted(monomial_col))


def _rank_one_factor(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-one factorization of the recovered monomial matrix.

    Monomials the permutations never selected stay at zero, extending the
    minimum-norm convention of the linear solve into the factorization; the
    leading singular pair then splits the matrix into the two vector
    estimates, with the scale balanced and the sign oriented by the dominant
    component.
    """
    left, svals, right_t = np.linalg.svd(z)
    u = left[:, 0] * np.sqrt(svals[0])
    v = right_t[0] * np.sqrt(svals[0])
    if u[np.argmax(np.abs(u))] < 0:
        u, v = -u, -v
    return u, v


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(a @ b / denom)


# ---------------------------------------------------------------------------
# second attacks
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    """A pre-obtained break-in solution to replay after revocation."""

    subject: str
    kind: str                 # "feature" (v1+v2 concatenated) or "template" (bits)
    payload: np.ndarray
    source: str = ""          # mathematical | computational | public


@dataclass
class SecondAttackReport:
    n_tests: int
    n_successes: int
    sar: float
    score_mean: float
    score_std: float
    similarity_mean: float | None
    similarity_std: float | None
    per_solution: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "n_tests": self.n_tests, "n_successes": self.n_successes,
            "sar": self.sar, "score_mean": self.score_mean,
            "score_std": self.score_std,
            "similarity_mean": self.similarity_mean,
            "similarity_std": self.similarity_std,
            "per_solution": self.per_solution,
        }


def second_attack(system: AuthSystem, solutions: list[Solution],
                  n_keys: int = 200, theta: float | None = None,
                  seed: int = 0) -> SecondAttackReport:
    """Replay pre-obtained solutions against freshly re-keyed accounts.

    For every solution and every fresh key the account is re-enrolled from
    its true features under the new key; feature solutions are re-transformed
    with the new parameters, template solutions are matched bit-for-bit.
    """
    theta = system.config.theta if theta is None else theta
    rng = np.random.default_rng(seed)
    scores, successes, sims = [], 0, []
    per_solution = []
    n_tests = 0
    for solution in solutions:
        account = system.users[solution.subject]
        sol_scores = []
        for _ in range(n_keys):
            new_key = int(rng.integers(0, 2 ** 63))
            if new_key == account.params.user_key:
                new_key += 1
            fresh = system.reissue(solution.subject, new_key)
            if solution.kind == "feature":
                z1 = system.standardize_a(solution.payload[:system.dim])
                z2 = system.standardize_b(solution.payload[system.dim:])
                r = tr.project(tr.combine(z1, z2, fresh.params), fresh.params)
                bits = tr.gray_encode(r, fresh.template.meta.quant_range)
            elif solution.kind == "template":
                bits = solution.payload.astype(np.uint8)
            else:
                raise ConfigError(f"unknown solution kind {solution.kind!r}")
            _, score = tr.hamming_score(bits, fresh.template.bits)
            sol_scores.append(score)
            n_tests += 1
            if score <= theta:
                successes += 1
            if solution.kind == "template":
                sims.append(1.0 - score)
        if solution.kind == "feature":
            sims.append(cosine_similarity(solution.payload, account.true_features))
        scores.extend(sol_scores)
        per_solution.append({
            "subject": solution.subject, "kind": solution.kind,
            "source": solution.source,
            "score_mean": float(np.mean(sol_scores)),
            "successes": int(sum(s <= theta for s in sol_scores)),
        })
    return SecondAttackReport(
        n_tests=n_tests, n_successes=successes,
        sar=successes / n_tests if n_tests else 0.0,
        score_mean=float(np.mean(scores)) if scores else 0.0,
        score_std=float(np.std(scores)) if scores else 0.0,
        similarity_mean=float(np.mean(sims)) if sims else None,
        similarity_std=float(np.std(sims)) if sims else None,
        per_solution=per_solution)


def public_data_solutions(system: AuthSystem, n_per_user: int = 1,
                          seed: int = 0) -> list[Solution]:
    """Random feature pairs drawn from public population statistics."""
    bounds = default_feature_bounds(system)
    rng = np.random.default_rng(seed)
    out = []
    for subject in system.subjects:
        for _ in range(n_per_user):
            payload = rng.uniform(bounds[:, 0], bounds[:, 1])
            out.append(Solution(subject=subject, kind="feature",
                                payload=payload, source="public"))
    return out


# ---------------------------------------------------------------------------
# brute force accounting
# ---------------------------------------------------------------------------

def brute_force_space(dim: int, bits_per_dim: int) -> int:
    """Exponent e such that exhaustively guessing both protected feature
    vectors takes 2**e trials."""
    if dim < 1 or bits_per_dim < 1:
        raise ConfigError("dimension and bit depth must be positive")
    return 2 * dim * bits_per_dim


def _stable_int(text: str) -> int:
    import hashlib
    return int.from_bytes(hashlib.blake2s(text.encode(), digest_size=4).digest(), "big")
