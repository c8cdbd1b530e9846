"""Candidate question generation and Bayes-factor uncertainty filtering.

Questions are generated inside pools of embedding-space neighbors. For each
candidate we tally the answers already collected in its pool, oriented by
whether the annotator agreed with the current model, and compare a coin-flip
answering model against a determined one via a Bayes factor. Questions whose
local answer behavior still looks like a coin flip are worth asking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, UnknownIdError
from .model import sq_distance

PENDING = "pending"
LEASED = "leased"
ANSWERED = "answered"
SKIPPED = "skipped"

A0 = "a0"
A1 = "a1"


def canonical_triple(anchor_id: str, first_option: str, second_option: str) -> tuple[str, str, str]:
    """Deduplication key: anchor plus options in ascending identifier order."""
    a, b = sorted((first_option, second_option))
    return (anchor_id, a, b)


def question_id_for(triple: tuple[str, str, str]) -> str:
    return "|".join(triple)


@dataclass
class TripletQuery:
    id: str
    anchor_id: str
    option_a_id: str
    option_b_id: str
    pool_id: str
    status: str = PENDING

    def __post_init__(self):
        if len({self.anchor_id, self.option_a_id, self.option_b_id}) != 3:
            raise InputError(f"question ids must be pairwise distinct: {self}")
        if not self.option_a_id < self.option_b_id:
            raise InputError("options must be stored in canonical (ascending) order")

    def triple(self) -> tuple[str, str, str]:
        return (self.anchor_id, self.option_a_id, self.option_b_id)


@dataclass(frozen=True)
class Pool:
    id: str
    seed_image_id: str
    member_ids: tuple[str, ...]
    created_at_round: int = 0

    def __post_init__(self):
        if len(set(self.member_ids)) != len(self.member_ids):
            raise InputError("pool members must be distinct")
        if self.seed_image_id not in self.member_ids:
            raise InputError("pool must contain its seed image")


@dataclass(frozen=True)
class NeighborTally:
    n: int
    k: int

    def __post_init__(self):
        if not 0 <= self.k <= self.n:
            raise InputError(f"tally requires 0 <= k <= n, got n={self.n} k={self.k}")


@dataclass(frozen=True)
class OrientedAnswer:
    """An answer reduced to its question and agreement label (a0/a1)."""

    question_id: str
    label: str


BAYES_FACTOR = "bayes-factor"
RANDOM = "random"


@dataclass(frozen=True)
class SelectionConfig:
    tau: float = 0.75
    pool_size: int = 12
    candidates_per_round: int = 500
    batch_size: int = 32
    exploit_fraction: float = 0.8
    seed: int = 0
    max_rounds: int = 50
    converged_uncertain_fraction: float = 0.05
    strategy: str = BAYES_FACTOR  # "random" is the ablation baseline

    def __post_init__(self):
        if not 0 < self.exploit_fraction <= 1:
            raise InputError("exploit_fraction must lie in (0, 1]")
        if self.pool_size < 1 or self.candidates_per_round < 1 or self.batch_size < 1:
            raise InputError("pool_size, candidates_per_round, batch_size must be positive")
        if self.strategy not in (BAYES_FACTOR, RANDOM):
            raise InputError(f"unknown selection strategy {self.strategy!r}")


def bayes_factor(tally: NeighborTally) -> float:
    """Likelihood ratio of the coin-flip model over the determined-answer model.

    Closed form C(n, k) * 0.5**n * (n + 1); evaluated in log space for large n
    to avoid overflowing the binomial coefficient.
    """
    n, k = tally.n, tally.k
    k = min(k, n - k)  # C(n,k) is symmetric; canonicalize so float rounding is too
    if n <= 30:
        return math.comb(n, k) * 0.5 ** n * (n + 1)
    log_bf = (
        math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
        + n * math.log(0.5) + math.log(n + 1)
    )
    return math.exp(log_bf)


def build_pool(embeddings: dict[str, np.ndarray], seed_image_id: str, pool_size: int,
               pool_id: str | None = None, created_at_round: int = 0) -> Pool:
    """Seed image plus its pool_size-1 nearest neighbors; distance ties by id."""
    if seed_image_id not in embeddings:
        raise UnknownIdError(f"unknown seed image {seed_image_id!r}")
    if pool_size > len(embeddings):
        raise InputError(f"pool_size {pool_size} exceeds image count {len(embeddings)}")
    seed_vec = embeddings[seed_image_id]
    others = sorted(
        (i for i in embeddings if i != seed_image_id),
        key=lambda i: (sq_distance(seed_vec, embeddings[i]), i),
    )
    members = [seed_image_id] + others[: pool_size - 1]
    return Pool(
        id=pool_id or f"pool:{created_at_round}:{seed_image_id}",
        seed_image_id=seed_image_id,
        member_ids=tuple(sorted(members)),
        created_at_round=created_at_round,
    )


def generate_candidates(pool: Pool, already_asked: set[tuple[str, str, str]],
                        q_max: int, seed: int) -> list[TripletQuery]:
    """Uniform seeded sample (without replacement) of unasked canonical triples."""
    members = sorted(pool.member_ids)
    if len(members) < 3:
        raise InputError("candidate generation needs a pool of at least 3 images")
    triples = []
    for anchor in members:
        rest = [m for m in members if m != anchor]
        for i in range(len(rest)):
            for j in range(i + 1, len(rest)):
                t = (anchor, rest[i], rest[j])
                if t not in already_asked:
                    triples.append(t)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    chosen = [triples[i] for i in order[:q_max]]
    return [
        TripletQuery(id=question_id_for(t), anchor_id=t[0], option_a_id=t[1],
                     option_b_id=t[2], pool_id=pool.id)
        for t in chosen
    ]


def orient_answer(choice: str, question: TripletQuery, embeddings: dict[str, np.ndarray]) -> str:
    """a0 when the annotator picked the option the model ranks strictly closer.

    Exact model-distance ties orient to a1, so the label depends only on the
    chosen image identity, never on the stored A/B slot order.
    """
    anchor = embeddings[question.anchor_id]
    d_a = sq_distance(anchor, embeddings[question.option_a_id])
    d_b = sq_distance(anchor, embeddings[question.option_b_id])
    if d_a == d_b:
        return A1
    model_pick = "A" if d_a < d_b else "B"
    return A0 if choice == model_pick else A1


def neighbor_tally(question: TripletQuery, oriented: list[OrientedAnswer],
                   questions: dict[str, TripletQuery],
                   pools: dict[str, Pool]) -> NeighborTally:
    """Count answers to questions fully contained in this question's pool."""
    if question.pool_id not in pools:
        raise UnknownIdError(f"unknown pool {question.pool_id!r}")
    members = set(pools[question.pool_id].member_ids)
    n = k = 0
    for ans in oriented:
        q = questions.get(ans.question_id)
        if q is None:
            continue
        if {q.anchor_id, q.option_a_id, q.option_b_id} <= members:
            n += 1
            if ans.label == A0:
                k += 1
    return NeighborTally(n=n, k=k)


def candidate_factors(candidates: list[TripletQuery], oriented: list[OrientedAnswer],
                      questions: dict[str, TripletQuery],
                      pools: dict[str, Pool]) -> list[float]:
    """Bayes factor for every candidate, with per-pool tallies computed once."""
    per_pool: dict[str, NeighborTally] = {}
    factors = []
    for cand in candidates:
        if cand.pool_id not in per_pool:
            per_pool[cand.pool_id] = neighbor_tally(cand, oriented, questions, pools)
        factors.append(bayes_factor(per_pool[cand.pool_id]))
    return factors


def select_round(candidates: list[TripletQuery], oriented: list[OrientedAnswer],
                 questions: dict[str, TripletQuery], pools: dict[str, Pool],
                 config: SelectionConfig) -> list[TripletQuery]:
    """Keep uncertain candidates (BF > tau), then mix top-BF with random fill.

    ceil(exploit_fraction * batch_size) come from the top of the BF sort; the
    remainder is drawn uniformly from the kept-but-not-top candidates, falling
    back to unkept ones when the kept set runs out.
    """
    if not candidates:
        return []
    if config.strategy == RANDOM:
        rng = np.random.default_rng(config.seed)
        take = min(config.batch_size, len(candidates))
        idx = rng.choice(len(candidates), size=take, replace=False)
        return [candidates[i] for i in sorted(idx)]
    factors = candidate_factors(candidates, oriented, questions, pools)
    scored = sorted(zip(candidates, factors), key=lambda cf: (-cf[1], cf[0].id))
    kept = [c for c, bf in scored if bf > config.tau]
    unkept = [c for c, bf in scored if bf <= config.tau]
    n_top = math.ceil(config.exploit_fraction * config.batch_size)
    selected = kept[:n_top]
    rng = np.random.default_rng(config.seed)
    need = config.batch_size - len(selected)
    rest = kept[n_top:]
    if need > 0 and rest:
        take = min(need, len(rest))
        idx = rng.choice(len(rest), size=take, replace=False)
        selected = selected + [rest[i] for i in sorted(idx)]
        need -= take
    if need > 0 and unkept:
        take = min(need, len(unkept))
        idx = rng.choice(len(unkept), size=take, replace=False)
        selected = selected + [unkept[i] for i in sorted(idx)]
    return selected[: config.batch_size]


def converged(candidates: list[TripletQuery], oriented: list[OrientedAnswer],
              questions: dict[str, TripletQuery], pools: dict[str, Pool],
              config: SelectionConfig, round_count: int = 0) -> bool:
    """Stop when almost no candidate still looks like a coin flip, or at the round cap."""
    if round_count >= config.max_rounds:
        return True
    if not candidates:
        return True
    factors = candidate_factors(candidates, oriented, questions, pools)
    uncertain = sum(1 for bf in factors if bf > config.tau)
    return uncertain / len(candidates) < config.converged_uncertain_fraction


def round_report(round_number: int, candidates: list[TripletQuery],
                 oriented: list[OrientedAnswer], questions: dict[str, TripletQuery],
                 pools: dict[str, Pool], config: SelectionConfig,
                 selected: list[TripletQuery]) -> dict:
    """JSON-serializable per-round selection summary with a BF histogram."""
    factors = candidate_factors(candidates, oriented, questions, pools)
    kept = sum(1 for bf in factors if bf > config.tau)
    edges = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, float("inf")]
    buckets = [0] * (len(edges) - 1)
    for bf in factors:
        for i in range(len(edges) - 1):
            if edges[i] <= bf < edges[i + 1]:
                buckets[i] += 1
                break
    return {
        "round": round_number,
        "candidate_count": len(candidates),
        "kept_count": kept,
        "bf_histogram": {
            f"[{edges[i]}, {edges[i + 1]})": buckets[i] for i in range(len(buckets))
        },
        "selected_question_ids": [c.id for c in selected],
    }
