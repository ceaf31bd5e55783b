"""One round of ensemble pseudo-labelling.

Case 1: every expert has the same Top-1 label.
Case 2: at least E-1 experts share the same (unordered) Top-2 pair; the most
frequent Top-1 label among those experts is kept if the pooled labels of the
k most cosine-similar training samples, gathered in every expert's embedding
space, have it as their unique most frequent value.
Case 3: anything else abstains until a later round.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import KTooLarge, ZeroVector
from .experts import Ensemble, plurality, top_labels

CASE1 = "1"
CASE2 = "2"
ABSTAIN = "abstain"

# Similarities closer than this are treated as ties (broken by lower index).
SIMILARITY_DECIMALS = 12


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    dists: tuple
    top1: tuple
    top2_sets: tuple

    @classmethod
    def from_dists(cls, sample_id, dists) -> "PredictionRecord":
        dists = tuple(np.asarray(d, dtype=np.float64) for d in dists)
        n2 = min(2, dists[0].shape[0])
        return cls(
            sample_id,
            dists,
            tuple(top_labels(d, 1)[0] for d in dists),
            tuple(frozenset(top_labels(d, n2)) for d in dists),
        )


@dataclass(frozen=True)
class PseudoLabelBatch:
    case1: tuple
    case2: tuple
    abstained: tuple
    audit: tuple = field(default=(), repr=False)

    @property
    def labeled(self) -> dict:
        return dict(self.case1 + self.case2)


def unanimous_vote(top1: Sequence[int]) -> Optional[int]:
    first = top1[0]
    return int(first) if all(t == first for t in top1) else None


def _matching_top2_set(top2_sets) -> Optional[frozenset]:
    E = len(top2_sets)
    counts = Counter(top2_sets)
    qualifying = [s for s, n in counts.items() if n >= E - 1 and len(s) == 2]
    if not qualifying:
        return None
    # Two sets can only both qualify when E == 2.
    return min(qualifying, key=lambda s: sorted(s))


def top2_consensus(record: PredictionRecord) -> Optional[int]:
    """Candidate label from near-unanimous Top-2 agreement, or None."""
    if len(record.top1) < 2:
        return None
    pair = _matching_top2_set(record.top2_sets)
    if pair is None:
        return None
    return plurality([t for t, s in zip(record.top1, record.top2_sets) if s == pair])


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _similarities(query, train) -> np.ndarray:
    # Zero-norm vectors get similarity 0 to everything instead of raising.
    q = np.asarray(query, dtype=np.float64)
    T = np.asarray(train, dtype=np.float64)
    qn = np.linalg.norm(q)
    tn = np.linalg.norm(T, axis=1)
    denom = qn * tn
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, (T @ q) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.round(np.clip(sims, -1.0, 1.0), SIMILARITY_DECIMALS)


def topk_neighbors(query_embedding, train_embeddings, k: int) -> list[tuple[int, float]]:
    """The ``k`` most cosine-similar training rows, most similar first.

    Equal similarities (to 12 decimals) rank the lower training index first.
    """
    n = len(train_embeddings)
    if k > n:
        raise KTooLarge(f"k={k} exceeds the {n} training embeddings")
    if k < 1:
        raise KTooLarge(f"k must be >= 1, got {k}")
    sims = _similarities(query_embedding, train_embeddings)
    order = np.lexsort((np.arange(n), -sims))[:k]
    return [(int(i), float(sims[i])) for i in order]


def pooled_vote(query_embeddings, train_embeddings, train_labels, k: int) -> Counter:
    """Neighbour-label histogram pooled over every expert's embedding space."""
    votes = Counter()
    labels = np.asarray(train_labels)
    for q, T in zip(query_embeddings, train_embeddings):
        votes.update(int(labels[i]) for i, _ in topk_neighbors(q, T, k))
    return votes


def vote_confirms(votes: Counter, candidate: int) -> bool:
    if not votes:
        return False
    ranked = votes.most_common(2)
    if len(ranked) == 2 and ranked[0][1] == ranked[1][1]:
        return False
    return ranked[0][0] == candidate


def similarity_confirm(candidate: int, sample, ensemble: Ensemble, train, k: int) -> bool:
    if k > len(train):
        raise KTooLarge(f"k={k} exceeds the {len(train)} training samples")
    X = np.stack([s.features for s in train])
    labels = [s.label for s in train]
    q = sample.features.reshape(1, -1)
    votes = pooled_vote(
        [e.transform(q)[0] for e in ensemble.experts],
        [e.transform(X) for e in ensemble.experts],
        labels,
        k,
    )
    return vote_confirms(votes, candidate)


def assign_pseudo_labels(ensemble: Ensemble, unlabeled, train, k: int) -> PseudoLabelBatch:
    """Route every unlabeled sample to Case 1, Case 2 or abstention.

    Output lists are ordered by sample id.  ``batch.audit`` holds one record
    per sample describing the decision.
    """
    unlabeled = sorted(unlabeled, key=lambda s: s.id)
    if not unlabeled:
        return PseudoLabelBatch((), (), ())
    if k > len(train):
        raise KTooLarge(f"k={k} exceeds the {len(train)} training samples")
    Xu = np.stack([s.features for s in unlabeled])
    probs = ensemble.predict_proba(Xu)
    E = len(ensemble)

    train_embs = query_embs = None
    if E >= 2:
        Xt = np.stack([s.features for s in train])
        train_labels = np.array([s.label for s in train])
        train_embs = [e.transform(Xt) for e in ensemble.experts]
        query_embs = [e.transform(Xu) for e in ensemble.experts]

    case1, case2, abstained, audit = [], [], [], []
    for i, s in enumerate(unlabeled):
        rec = PredictionRecord.from_dists(s.id, probs[:, i, :])
        entry = {"sample_id": s.id, "top1": list(rec.top1)}
        label = unanimous_vote(rec.top1)
        if label is not None:
            case1.append((s.id, label))
            entry.update(case=CASE1, label=label)
            audit.append(entry)
            continue
        cand = top2_consensus(rec)
        if cand is not None:
            votes = pooled_vote([q[i] for q in query_embs], train_embs, train_labels, k)
            entry["top2_set"] = sorted(_matching_top2_set(rec.top2_sets))
            entry["candidate"] = cand
            entry["votes"] = {str(c): n for c, n in sorted(votes.items())}
            if vote_confirms(votes, cand):
                case2.append((s.id, cand))
                entry.update(case=CASE2, label=cand)
                audit.append(entry)
                continue
        abstained.append(s.id)
        entry["case"] = ABSTAIN
        audit.append(entry)
    return PseudoLabelBatch(tuple(case1), tuple(case2), tuple(abstained), tuple(audit))

