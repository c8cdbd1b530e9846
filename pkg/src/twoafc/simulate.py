"""Full-loop simulation: the oracle answers every batch, rounds advance, reports land on disk."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import clustering
from .clustering import Partition
from .errors import InputError
from .evaluation import LevelReport, level_report, nmi, pixel_baseline
from .session import Session, SessionConfig


def family_partition(session: Session) -> Partition:
    return Partition.from_labels({
        r.id: r.attributes.family for r in session.records.values() if r.attributes
    })


def variant_partition(session: Session) -> Partition:
    return Partition.from_labels({
        r.id: r.attributes.variant for r in session.records.values() if r.attributes
    })


def label_partition(session: Session) -> Partition:
    return Partition.from_labels({
        r.id: r.label for r in session.records.values() if r.label is not None
    })


def true_labels_for(session: Session) -> Partition:
    """Class labels: full shape identity for synthetic data, dataset labels otherwise."""
    some = next(iter(session.records.values()))
    if some.attributes is not None:
        return variant_partition(session)
    return label_partition(session)


@dataclass
class SimulationReport:
    rounds_run: int
    answers_total: int
    per_round: list[dict] = field(default_factory=list)
    levels: LevelReport | None = None
    final_family_nmi_3: float | None = None

    def to_json(self) -> dict:
        return {
            "rounds_run": self.rounds_run,
            "answers_total": self.answers_total,
            "per_round": self.per_round,
            "levels": self.levels.as_json() if self.levels else None,
            "final_family_nmi_3": self.final_family_nmi_3,
        }


def run_simulation(session_dir, config: SessionConfig, rounds: int,
                   max_level: int = 3, annotator_id: str = "oracle",
                   stop_at_family_nmi: float | None = None) -> SimulationReport:
    """Drive the answer/train/select loop with the configured oracle annotator.

    stop_at_family_nmi ends the loop early once the 3-cluster cut reaches the
    given NMI against shape-family labels (used for annotation-cost studies).
    """
    if config.oracle is None:
        raise InputError("simulation requires an oracle config")
    session = Session.create(session_dir, config)
    report = SimulationReport(rounds_run=0, answers_total=0)
    coarse = family_partition(session) if next(iter(session.records.values())).attributes else None

    for _ in range(rounds):
        if session.phase != "collecting":
            break
        while True:
            question = session.next_question(annotator_id)
            if question is None:
                break
            session.answer_with_oracle(question)
        session.advance_round()
        report.rounds_run += 1
        row = dict(session.round_metrics[-1])
        if coarse is not None and coarse.n_clusters() >= 2:
            dendrogram = session.dendrogram()
            cut3 = clustering.cut(dendrogram, min(3, dendrogram.n_leaves))
            row["family_nmi_3"] = nmi(cut3, coarse)
        report.per_round.append(row)
        if stop_at_family_nmi is not None and row.get("family_nmi_3", 0.0) >= stop_at_family_nmi:
            break
        if session.phase == "converged":
            break

    report.answers_total = len(session.answers)
    out = Path(session_dir)
    if session.last_checkpoint_round is not None:
        dendrogram = session.dendrogram()
        (out / "dendrogram.json").write_text(clustering.to_json(dendrogram))
        (out / "dendrogram.newick").write_text(clustering.to_newick(dendrogram))
        labels = true_labels_for(session)
        if labels.assignment and 2 ** max_level <= len(labels.assignment):
            baseline = pixel_baseline({r.id: r.pixels for r in session.records.values()})
            report.levels = level_report(dendrogram, baseline, labels, max_level)
            (out / "level_report.csv").write_text(report.levels.as_csv())
            (out / "level_report.txt").write_text(report.levels.as_text())
        if coarse is not None and coarse.n_clusters() >= 2:
            cut3 = clustering.cut(dendrogram, min(3, dendrogram.n_leaves))
            report.final_family_nmi_3 = nmi(cut3, coarse)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    return report


def shapes_session_config(dataset_dir, batch_size: int = 105, master_seed: int = 0,
                          **overrides) -> SessionConfig:
    """Convenience bundle for desk-scale shapes runs."""
    from .model import TrainingConfig
    from .oracle import OracleConfig
    from .selection import SelectionConfig

    config = SessionConfig(
        dataset_dir=str(dataset_dir),
        training=TrainingConfig(seed=master_seed),
        selection=SelectionConfig(batch_size=batch_size, seed=master_seed),
        oracle=OracleConfig(seed=master_seed),
        master_seed=master_seed,
    )
    return replace(config, **overrides) if overrides else config
