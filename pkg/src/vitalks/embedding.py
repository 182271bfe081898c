"""Complex-valued embeddings, trilinear scoring, and triplet losses.

Vectors are stored as arrays of shape (2, d): row 0 holds the real part, row
1 the imaginary part.  The score of a triplet is the real part of the
trilinear product Re(<h, r, conj(t)>).  Correlation embeddings keep a zero
imaginary part, which makes their scores symmetric in head and tail.

All losses return analytic gradients alongside their value; optimization uses
a plain Adam implementation operating in place on named parameter arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError

ConceptRef = tuple[str, int]


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype="float64")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def log_sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    res = -np.logaddexp(0.0, -np.asarray(x, dtype="float64"))
    if res.ndim == 0:
        return float(res)
    return res


def _check_vec(v: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype="float64")
    if arr.ndim != 2 or arr.shape[0] != 2:
        raise InvalidArgumentError(f"{name} must have shape (2, d)")
    return arr


def complex_score(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> float:
    """Re(<h, r, conj(t)>) for one triplet of (2, d) vectors."""
    h = _check_vec(h, "h")
    r = _check_vec(r, "r")
    t = _check_vec(t, "t")
    if not (h.shape == r.shape == t.shape):
        raise InvalidArgumentError("h, r, t must share one dimension")
    return float(
        np.sum(
            h[0] * r[0] * t[0]
            + h[1] * r[0] * t[1]
            + h[0] * r[1] * t[1]
            - h[1] * r[1] * t[0]
        )
    )


def score_with_grads(
    h: np.ndarray, r: np.ndarray, t: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Score plus its gradients with respect to h, r, and t."""
    f = complex_score(h, r, t)
    gh = np.stack([r[0] * t[0] + r[1] * t[1], r[0] * t[1] - r[1] * t[0]])
    gr = np.stack([h[0] * t[0] + h[1] * t[1], h[0] * t[1] - h[1] * t[0]])
    gt = np.stack([h[0] * r[0] - h[1] * r[1], h[1] * r[0] + h[0] * r[1]])
    return f, gh, gr, gt


def score_batch(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Scores for a batch of triplets, inputs shaped (B, 2, d)."""
    return np.sum(
        h[:, 0] * r[:, 0] * t[:, 0]
        + h[:, 1] * r[:, 0] * t[:, 1]
        + h[:, 0] * r[:, 1] * t[:, 1]
        - h[:, 1] * r[:, 1] * t[:, 0],
        axis=1,
    )


def score_batch_grads(
    h: np.ndarray, r: np.ndarray, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-triplet gradients of the batched score, each shaped like its input."""
    gh = np.stack(
        [r[:, 0] * t[:, 0] + r[:, 1] * t[:, 1], r[:, 0] * t[:, 1] - r[:, 1] * t[:, 0]],
        axis=1,
    )
    gr = np.stack(
        [h[:, 0] * t[:, 0] + h[:, 1] * t[:, 1], h[:, 0] * t[:, 1] - h[:, 1] * t[:, 0]],
        axis=1,
    )
    gt = np.stack(
        [h[:, 0] * r[:, 0] - h[:, 1] * r[:, 1], h[:, 1] * r[:, 0] + h[:, 0] * r[:, 1]],
        axis=1,
    )
    return gh, gr, gt


def dynamic_margin(base: float, strength: float, scale: float) -> float:
    """Margin shrunk below ``base`` as the edge strength falls below 1."""
    if not 0.0 <= strength <= 1.0:
        raise InvalidArgumentError(f"strength must lie in [0, 1], got {strength}")
    return float(base * np.exp((strength - 1.0) * scale))


def sigmoid_triplet_loss(
    positive: tuple[np.ndarray, np.ndarray, np.ndarray],
    negatives: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    margin: float,
) -> tuple[float, dict]:
    """Log-sigmoid margin loss with uniformly weighted negatives.

    Returns the loss and gradients for every participating vector:
    ``{"positive": (gh, gr, gt), "negatives": [(gh, gr, gt), ...]}``.
    """
    if not negatives:
        raise InvalidArgumentError("at least one negative is required")
    n = len(negatives)
    f_pos, gh, gr, gt = score_with_grads(*positive)
    loss = -log_sigmoid(margin + f_pos)
    coeff_pos = sigmoid(margin + f_pos) - 1.0
    grads = {
        "positive": (coeff_pos * gh, coeff_pos * gr, coeff_pos * gt),
        "negatives": [],
    }
    for neg in negatives:
        f_neg, nh, nr, nt = score_with_grads(*neg)
        loss -= log_sigmoid(-f_neg - margin) / n
        coeff = sigmoid(f_neg + margin) / n
        grads["negatives"].append((coeff * nh, coeff * nr, coeff * nt))
    return float(loss), grads


def self_adversarial_loss(
    positive: tuple[np.ndarray, np.ndarray, np.ndarray],
    negatives: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    margin: float,
    temperature: float,
) -> tuple[float, dict]:
    """Margin loss with negatives weighted by a softmax over their scores.

    The weights are part of the differentiated expression, so the returned
    gradients are exact for the value as written.
    """
    if not negatives:
        raise InvalidArgumentError("at least one negative is required")
    f_pos, gh, gr, gt = score_with_grads(*positive)
    neg_scores = []
    neg_grads = []
    for neg in negatives:
        f, nh, nr, nt = score_with_grads(*neg)
        neg_scores.append(f)
        neg_grads.append((nh, nr, nt))
    f_neg = np.array(neg_scores)
    logits = temperature * f_neg
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    g = log_sigmoid(-f_neg - margin)
    g_bar = float(np.sum(weights * g))
    loss = -log_sigmoid(margin + f_pos) - g_bar
    coeff_pos = sigmoid(margin + f_pos) - 1.0
    # d/df_j = -alpha p_j (g_j - g_bar) + p_j sigmoid(f_j + margin)
    coeff_neg = -temperature * weights * (g - g_bar) + weights * sigmoid(f_neg + margin)
    grads = {
        "positive": (coeff_pos * gh, coeff_pos * gr, coeff_pos * gt),
        "negatives": [
            (c * nh, c * nr, c * nt)
            for c, (nh, nr, nt) in zip(coeff_neg, neg_grads)
        ],
    }
    return float(loss), grads


@dataclass
class EmbeddingStore:
    """Embeddings for all concepts (both channels), gap relations, correlations."""

    dim: int
    concept_index: dict[ConceptRef, int]
    concepts: np.ndarray      # (n_concepts, 2, d)
    relations: np.ndarray     # (n_relations, 2, d)
    correlations: np.ndarray  # (n_correlations, 2, d), imaginary part zero

    @classmethod
    def init(
        cls,
        concept_refs: Sequence[ConceptRef],
        n_relations: int,
        n_correlations: int,
        dim: int,
        seed: int,
    ) -> "EmbeddingStore":
        refs = sorted(set(concept_refs))
        if not refs:
            raise InvalidArgumentError("at least one concept is required")
        rng = np.random.default_rng(seed)
        bound = 6.0 / np.sqrt(2.0 * dim)
        conc = rng.uniform(-bound, bound, size=(len(refs), 2, dim))
        rel = rng.uniform(-bound, bound, size=(n_relations, 2, dim))
        corr = rng.uniform(-bound, bound, size=(max(n_correlations, 0), 2, dim))
        if corr.size:
            corr[:, 1, :] = 0.0
        return cls(
            dim=dim,
            concept_index={ref: i for i, ref in enumerate(refs)},
            concepts=conc,
            relations=rel,
            correlations=corr,
        )

    def concept(self, ref: ConceptRef) -> np.ndarray:
        idx = self.concept_index.get(ref)
        if idx is None:
            raise InvalidArgumentError(f"unknown concept {ref!r}")
        return self.concepts[idx]

    def relation(self, index: int) -> np.ndarray:
        return self.relations[index]

    def correlation(self, index: int) -> np.ndarray:
        return self.correlations[index]

    def flatten(self, vec: np.ndarray) -> np.ndarray:
        """Real coordinates then imaginary coordinates, shape (2d,)."""
        v = _check_vec(vec, "vec")
        return np.concatenate([v[0], v[1]])

    def enforce_correlation_symmetry(self) -> None:
        if self.correlations.size:
            self.correlations[:, 1, :] = 0.0

    def params(self) -> dict[str, np.ndarray]:
        return {
            "concepts": self.concepts,
            "relations": self.relations,
            "correlations": self.correlations,
        }

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(
            dim=self.dim,
            concept_index=dict(self.concept_index),
            concepts=self.concepts.copy(),
            relations=self.relations.copy(),
            correlations=self.correlations.copy(),
        )


@dataclass
class Adam:
    """Adam optimizer updating named arrays in place."""

    params: Mapping[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, arr in self.params.items():
            self.m.setdefault(name, np.zeros_like(arr))
            self.v.setdefault(name, np.zeros_like(arr))

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, grad in grads.items():
            if name not in self.m:
                raise InvalidArgumentError(f"unknown parameter group {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            self.params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
