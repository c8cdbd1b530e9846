"""Annotation session: question leasing, the answer log, and round advancement.

A session lives in a directory:

    config.json        immutable config bundle (all seeds explicit)
    answers.jsonl      append-only answer log, one JSON record per line
    state.json         questions, pools, pending order, phase, round
    checkpoints/       one model checkpoint per trained round
    rounds/            one selection report per round

Rounds are synchronous barriers: collect all answers, then train on the
cumulative answered set, rebuild pools and candidates from the fresh model
snapshot, and select the next batch by Bayes factor. Every random draw is
derived from the config seeds, so replaying the same answer log yields the
same batches. Leases are transient (never persisted): a crash returns leased
questions to pending, the same as lease expiry.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import clustering, selection
from .datasets import DatasetManifest, ImageRecord, load_dataset
from .errors import InputError, StateError, UnknownIdError
from .model import (
    EmbeddingModel,
    Triplet,
    TrainingConfig,
    default_architecture,
    embed_all,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .oracle import OracleConfig
from .oracle import answer as oracle_answer
from .selection import Pool, SelectionConfig, TripletQuery

COLLECTING = "collecting"
TRAINING = "training"
SELECTING = "selecting"
CONVERGED = "converged"

CHOICES = ("A", "B")


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from a tuple of labels and integers."""
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class AnswerRecord:
    question_id: str
    choice: str
    annotator_id: str
    timestamp: float
    round: int

    def dedupe_key(self) -> tuple[str, str, str]:
        return (self.question_id, self.annotator_id, self.choice)


@dataclass(frozen=True)
class SessionConfig:
    dataset_dir: str
    training: TrainingConfig = TrainingConfig()
    selection: SelectionConfig = SelectionConfig()
    oracle: OracleConfig | None = None
    embedding_dim: int = 8
    normalize_output: bool = True
    center_inputs: bool = True
    lease_seconds: float = 120.0
    round_deadline_seconds: float | None = None
    pools_per_round: int = 8
    master_seed: int = 0

    def to_json(self) -> dict:
        d = {
            "dataset_dir": self.dataset_dir,
            "training": asdict(self.training),
            "selection": asdict(self.selection),
            "oracle": asdict(self.oracle) if self.oracle else None,
            "embedding_dim": self.embedding_dim,
            "normalize_output": self.normalize_output,
            "center_inputs": self.center_inputs,
            "lease_seconds": self.lease_seconds,
            "round_deadline_seconds": self.round_deadline_seconds,
            "pools_per_round": self.pools_per_round,
            "master_seed": self.master_seed,
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SessionConfig":
        return cls(
            dataset_dir=d["dataset_dir"],
            training=TrainingConfig(**d["training"]),
            selection=SelectionConfig(**d["selection"]),
            oracle=OracleConfig(**d["oracle"]) if d.get("oracle") else None,
            embedding_dim=d.get("embedding_dim", 8),
            normalize_output=d.get("normalize_output", True),
            center_inputs=d.get("center_inputs", True),
            lease_seconds=d.get("lease_seconds", 120.0),
            round_deadline_seconds=d.get("round_deadline_seconds"),
            pools_per_round=d.get("pools_per_round", 8),
            master_seed=d.get("master_seed", 0),
        )


@dataclass(frozen=True)
class SessionState:
    round: int
    phase: str
    pending: int
    leased: int
    answered: int
    checkpoint: str | None
    converged: bool
    config: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)


def _random_triples(ids: list[str], count: int, seed: int,
                    exclude: set[tuple[str, str, str]]) -> list[tuple[str, str, str]]:
    """Seeded uniform canonical triples over the full image set, no repeats."""
    rng = np.random.default_rng(seed)
    chosen: list[tuple[str, str, str]] = []
    seen = set(exclude)
    attempts = 0
    limit = count * 200 + 1000
    while len(chosen) < count and attempts < limit:
        attempts += 1
        i, j, k = rng.choice(len(ids), size=3, replace=False)
        triple = selection.canonical_triple(ids[i], ids[j], ids[k])
        if triple in seen:
            continue
        seen.add(triple)
        chosen.append(triple)
    return chosen


class Session:
    """Single-writer annotation session over an on-disk directory."""

    def __init__(self, directory, config: SessionConfig, manifest: DatasetManifest,
                 records: list[ImageRecord]):
        self.directory = Path(directory)
        self.config = config
        self.manifest = manifest
        self.records = {r.id: r for r in records}
        # Model inputs are [0,1] floats, minus the dataset mean image when
        # centering is on: datasets with a dominant shared component (e.g. a
        # white background) otherwise start with near-identical embeddings
        # and SGD can stall in the collapsed zero-gradient fixed point. The
        # mean is a pure function of the dataset, so restarts recompute it.
        scaled = {r.id: r.pixels.astype(np.float32) / 255.0 for r in records}
        if config.center_inputs:
            mean = np.mean(np.stack(list(scaled.values())), axis=0)
            self.images = {k: v - mean for k, v in scaled.items()}
        else:
            self.images = scaled
        self.lock = threading.RLock()

        self.round = 0
        self.phase = COLLECTING
        self.converged_flag = False
        self.last_checkpoint_round: int | None = None
        self.round_started_at = time.time()
        self.questions: dict[str, TripletQuery] = {}
        self.question_round: dict[str, int] = {}
        self.pools: dict[str, Pool] = {}
        self.pending_order: list[str] = []
        self.answers: list[AnswerRecord] = []
        self._answer_keys: set[tuple[str, str, str]] = set()
        self.leases: dict[str, tuple[str, float]] = {}
        self.model: EmbeddingModel | None = None
        self.round_metrics: list[dict] = []

    # ------------------------------------------------------------------
    # construction / persistence

    @classmethod
    def create(cls, directory, config: SessionConfig) -> "Session":
        directory = Path(directory)
        if (directory / "state.json").exists():
            raise StateError(f"session already exists at {directory}")
        manifest, records = load_dataset(config.dataset_dir)
        session = cls(directory, config, manifest, records)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "checkpoints").mkdir(exist_ok=True)
        (directory / "rounds").mkdir(exist_ok=True)
        (directory / "config.json").write_text(json.dumps(config.to_json(), indent=2))
        (directory / "answers.jsonl").touch()
        session.model = session._fresh_model(derive_seed(config.master_seed, "init"))
        session._issue_initial_batch()
        session._persist_state()
        return session

    @classmethod
    def load(cls, directory) -> "Session":
        directory = Path(directory)
        config = SessionConfig.from_json(json.loads((directory / "config.json").read_text()))
        manifest, records = load_dataset(config.dataset_dir)
        session = cls(directory, config, manifest, records)
        state = json.loads((directory / "state.json").read_text())
        session.round = state["round"]
        session.phase = state["phase"]
        session.converged_flag = state["converged"]
        session.last_checkpoint_round = state["last_checkpoint_round"]
        session.round_started_at = state["round_started_at"]
        session.round_metrics = state.get("round_metrics", [])
        for p in state["pools"]:
            pool = Pool(id=p["id"], seed_image_id=p["seed_image_id"],
                        member_ids=tuple(p["member_ids"]), created_at_round=p["created_at_round"])
            session.pools[pool.id] = pool
        for q in state["questions"]:
            query = TripletQuery(id=q["id"], anchor_id=q["anchor_id"], option_a_id=q["option_a_id"],
                                 option_b_id=q["option_b_id"], pool_id=q["pool_id"],
                                 status=q["status"])
            if query.status == selection.LEASED:
                query.status = selection.PENDING  # leases are transient
            session.questions[query.id] = query
            session.question_round[query.id] = q["round"]
        session.pending_order = [
            qid for qid in state["pending_order"]
            if session.questions[qid].status == selection.PENDING
        ]
        with open(directory / "answers.jsonl") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    record = AnswerRecord(**d)
                    session.answers.append(record)
                    session._answer_keys.add(record.dedupe_key())
        # The log is the source of truth: state.json may lag behind it.
        for record in session.answers:
            question = session.questions.get(record.question_id)
            if question is not None and question.status != selection.SKIPPED:
                question.status = selection.ANSWERED
        session.pending_order = [
            qid for qid in session.pending_order
            if session.questions[qid].status == selection.PENDING
        ]
        # A crash mid-advance rolls back to collecting; retrying the advance
        # is deterministic given the log, so the round artifacts regenerate.
        if session.phase in (TRAINING, SELECTING):
            session.phase = COLLECTING
        if session.last_checkpoint_round is not None:
            path = session._checkpoint_path(session.last_checkpoint_round)
            session.model, _ = load_checkpoint(path)
        else:
            session.model = session._fresh_model(derive_seed(config.master_seed, "init"))
        return session

    def _fresh_model(self, seed: int) -> EmbeddingModel:
        shape = tuple(self.manifest.image_shape)
        layers = default_architecture(shape, self.config.embedding_dim)
        return EmbeddingModel.initialize(
            layers, shape, embedding_dim=self.config.embedding_dim,
            normalize_output=self.config.normalize_output, seed=seed,
        ).quantized()

    def _checkpoint_path(self, round_number: int) -> Path:
        return self.directory / "checkpoints" / f"round_{round_number:03d}.ckpt"

    def _persist_state(self) -> None:
        state = {
            "round": self.round,
            "phase": self.phase,
            "converged": self.converged_flag,
            "last_checkpoint_round": self.last_checkpoint_round,
            "round_started_at": self.round_started_at,
            "round_metrics": self.round_metrics,
            "pending_order": self.pending_order,
            "pools": [
                {"id": p.id, "seed_image_id": p.seed_image_id,
                 "member_ids": list(p.member_ids), "created_at_round": p.created_at_round}
                for p in self.pools.values()
            ],
            "questions": [
                {"id": q.id, "anchor_id": q.anchor_id, "option_a_id": q.option_a_id,
                 "option_b_id": q.option_b_id, "pool_id": q.pool_id, "status": q.status,
                 "round": self.question_round[q.id]}
                for q in self.questions.values()
            ],
        }
        tmp = self.directory / "state.json.tmp"
        tmp.write_text(json.dumps(state))
        os.replace(tmp, self.directory / "state.json")

    def _append_answer(self, record: AnswerRecord) -> None:
        with open(self.directory / "answers.jsonl", "a") as fh:
            fh.write(json.dumps(asdict(record)) + "\n")
            fh.flush()

    # ------------------------------------------------------------------
    # question issuing

    def _issue_initial_batch(self) -> None:
        """Algorithm start: a seeded batch of random unanswered triplets."""
        ids = sorted(self.images)
        if len(ids) < 3:
            raise InputError("a session needs at least 3 images")
        pool = Pool(id="pool:0:all", seed_image_id=ids[0], member_ids=tuple(ids), created_at_round=0)
        self.pools[pool.id] = pool
        triples = _random_triples(
            ids, self.config.selection.batch_size,
            derive_seed(self.config.master_seed, "init-batch"), set(),
        )
        batch = [
            TripletQuery(id=selection.question_id_for(t), anchor_id=t[0],
                         option_a_id=t[1], option_b_id=t[2], pool_id=pool.id)
            for t in triples
        ]
        self._install_batch(batch)

    def _install_batch(self, batch: list[TripletQuery]) -> None:
        for q in batch:
            q.status = selection.PENDING
            self.questions[q.id] = q
            self.question_round[q.id] = self.round
        self.pending_order = [q.id for q in batch]
        self.round_started_at = time.time()

    def _expire_leases(self, now: float | None = None) -> None:
        now = time.time() if now is None else now
        expired = []
        for qid, (_, expiry) in list(self.leases.items()):
            if now >= expiry:
                del self.leases[qid]
                question = self.questions[qid]
                if question.status == selection.LEASED:
                    question.status = selection.PENDING
                    if qid not in self.pending_order:
                        expired.append(qid)
        if expired:  # expired questions go to the next requester first
            self.pending_order = expired + self.pending_order

    def next_question(self, annotator_id: str) -> TripletQuery | None:
        """Lease the next pending question, or return the annotator's live lease."""
        with self.lock:
            if self.phase != COLLECTING:
                raise StateError(f"cannot issue questions in phase {self.phase!r}")
            now = time.time()
            self._expire_leases(now)
            for qid, (holder, _) in self.leases.items():
                if holder == annotator_id:
                    return self.questions[qid]
            while self.pending_order:
                qid = self.pending_order.pop(0)
                question = self.questions[qid]
                if question.status != selection.PENDING:
                    continue
                question.status = selection.LEASED
                self.leases[qid] = (annotator_id, now + self.config.lease_seconds)
                return question
            return None

    def submit_answer(self, question_id: str, choice: str, annotator_id: str) -> AnswerRecord:
        """Append to the answer log; idempotent on exact duplicates."""
        with self.lock:
            if choice not in CHOICES:
                raise InputError(f"choice must be one of {CHOICES}, got {choice!r}")
            question = self.questions.get(question_id)
            if question is None:
                raise UnknownIdError(f"unknown question {question_id!r}")
            key = (question_id, annotator_id, choice)
            if key in self._answer_keys:
                for record in reversed(self.answers):
                    if record.dedupe_key() == key:
                        return record
            record = AnswerRecord(
                question_id=question_id, choice=choice, annotator_id=annotator_id,
                timestamp=time.time(), round=self.round,
            )
            self.answers.append(record)
            self._answer_keys.add(key)
            self._append_answer(record)
            question.status = selection.ANSWERED
            self.leases.pop(question_id, None)
            self.pending_order = [qid for qid in self.pending_order if qid != question_id]
            return record

    # ------------------------------------------------------------------
    # training / selection

    def triplets_from_answers(self) -> list[Triplet]:
        """Every logged answer becomes one training triplet (chosen option is positive)."""
        triplets = []
        for record in self.answers:
            q = self.questions[record.question_id]
            if record.choice == "A":
                pos, neg = q.option_a_id, q.option_b_id
            else:
                pos, neg = q.option_b_id, q.option_a_id
            triplets.append(Triplet(q.anchor_id, pos, neg))
        return triplets

    def _oriented_answers(self, embeddings: dict[str, np.ndarray]) -> list[selection.OrientedAnswer]:
        return [
            selection.OrientedAnswer(
                question_id=record.question_id,
                label=selection.orient_answer(record.choice, self.questions[record.question_id], embeddings),
            )
            for record in self.answers
        ]

    def _round_open(self) -> bool:
        return any(
            q.status in (selection.PENDING, selection.LEASED) for q in self.questions.values()
        )

    def advance_round(self, now: float | None = None) -> SessionState:
        """Train on the cumulative answered set, then select the next batch."""
        with self.lock:
            if self.phase != COLLECTING:
                raise StateError(f"cannot advance in phase {self.phase!r}")
            now = time.time() if now is None else now
            self._expire_leases(now)
            if self._round_open():
                deadline = self.config.round_deadline_seconds
                if deadline is None or now - self.round_started_at < deadline:
                    raise StateError("round still has unanswered questions")
                for q in self.questions.values():
                    if q.status in (selection.PENDING, selection.LEASED):
                        q.status = selection.SKIPPED
                        self.leases.pop(q.id, None)
                self.pending_order = []
            if not self.answers:
                raise StateError("cannot advance a round with no answers")

            self.phase = TRAINING
            self._persist_state()
            triplets = self.triplets_from_answers()
            if self.config.training.reinitialize_per_round:
                self.model = self._fresh_model(derive_seed(self.config.master_seed, "reinit", self.round))
            train_config = replace(
                self.config.training,
                seed=derive_seed(self.config.training.seed, "train", self.round),
            )
            trained, losses = train(self.model, triplets, self.images, train_config)
            self.model = trained.quantized()
            self.last_checkpoint_round = self.round
            save_checkpoint(self.model, self._checkpoint_path(self.round),
                            seed=self.config.master_seed, round_number=self.round)

            self.phase = SELECTING
            self._persist_state()
            embeddings = embed_all(self.model, self.images)
            oriented = self._oriented_answers(embeddings)
            asked = {q.triple() for q in self.questions.values()}

            sel = self.config.selection
            rng = np.random.default_rng(derive_seed(sel.seed, "pools", self.round))
            ids = sorted(self.images)
            pool_count = min(self.config.pools_per_round, len(ids))
            seed_images = [ids[i] for i in rng.choice(len(ids), size=pool_count, replace=False)]
            new_pools = []
            for seed_image in seed_images:
                pool = selection.build_pool(
                    embeddings, seed_image, min(sel.pool_size, len(ids)),
                    pool_id=f"pool:{self.round + 1}:{seed_image}", created_at_round=self.round + 1,
                )
                self.pools[pool.id] = pool
                new_pools.append(pool)
            per_pool = math.ceil(sel.candidates_per_round / max(len(new_pools), 1))
            candidates: list[TripletQuery] = []
            seen_triples = set(asked)
            for i, pool in enumerate(new_pools):
                for cand in selection.generate_candidates(
                        pool, seen_triples, per_pool, derive_seed(sel.seed, "cand", self.round, i)):
                    seen_triples.add(cand.triple())
                    candidates.append(cand)
            candidates = candidates[: sel.candidates_per_round]
            round_selection = replace(sel, seed=derive_seed(sel.seed, "select", self.round))
            selected = selection.select_round(candidates, oriented, self.questions, self.pools, round_selection)
            done = selection.converged(candidates, oriented, self.questions, self.pools,
                                       round_selection, round_count=self.round + 1)

            report = selection.round_report(self.round, candidates, oriented, self.questions,
                                            self.pools, round_selection, selected)
            report["mean_loss_per_epoch"] = losses
            report["answers_total"] = len(self.answers)
            (self.directory / "rounds" / f"round_{self.round:03d}.json").write_text(
                json.dumps(report, indent=2))
            self.round_metrics.append({
                "round": self.round,
                "answers_total": len(self.answers),
                "final_epoch_loss": losses[-1] if losses else None,
                "candidates": len(candidates),
                "kept": report["kept_count"],
            })

            self.round += 1
            if done:
                self.phase = CONVERGED
                self.converged_flag = True
                self.pending_order = []
            else:
                self.phase = COLLECTING
                self._install_batch(selected)
            self._persist_state()
            return self.state()

    # ------------------------------------------------------------------
    # read-side views

    def state(self) -> SessionState:
        # lock-free read so status stays observable while a round advance
        # holds the writer lock; counts may be one mutation stale
        statuses = [q.status for q in list(self.questions.values())]
        return SessionState(
            round=self.round,
            phase=self.phase,
            pending=sum(1 for s in statuses if s == selection.PENDING),
            leased=sum(1 for s in statuses if s == selection.LEASED),
            answered=sum(1 for s in statuses if s == selection.ANSWERED),
            checkpoint=(
                str(self._checkpoint_path(self.last_checkpoint_round))
                if self.last_checkpoint_round is not None else None
            ),
            converged=self.converged_flag,
            config=self.config.to_json(),
        )

    def embeddings(self) -> dict[str, np.ndarray]:
        if self.last_checkpoint_round is None:
            raise StateError("no trained checkpoint yet")
        return embed_all(self.model, self.images)

    def dendrogram(self) -> clustering.Dendrogram:
        return clustering.complete_linkage(self.embeddings())

    def dendrogram_json(self) -> str:
        return clustering.to_json(self.dendrogram())

    def answer_with_oracle(self, question: TripletQuery) -> AnswerRecord:
        if self.config.oracle is None:
            raise StateError("session has no oracle configured")
        choice = oracle_answer(question, self.records, self.config.oracle)
        return self.submit_answer(question.id, choice, "oracle")
