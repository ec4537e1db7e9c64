"""Wheeze detection from the source bases of a fitted :class:`NmfModel`.

Tonal (wheeze) spectra are sparse across frequency, so the Gini index of each
source basis separates wheeze templates from broadband breath templates. The
sparser half of the bases rebuilds a wheeze spectrogram whose summed spectrum
is scored the same way to produce the binary label.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from ._validation import check_matrix, check_vector
from .exceptions import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class GiniScores:
    beta: np.ndarray
    threshold: float


@dataclass(frozen=True)
class WheezeSelection:
    selected_indices: np.ndarray
    B_W: np.ndarray
    G_W: np.ndarray
    X_W: np.ndarray


@dataclass(frozen=True)
class DetectionResult:
    gini: GiniScores
    selection: WheezeSelection
    energy_profile: np.ndarray
    profile_gini: float
    label: int
    threshold: float = DEFAULT_THRESHOLD

    def to_dict(self):
        return {
            "omega": int(self.label),
            "profile_gini": float(self.profile_gini),
            "threshold": float(self.threshold),
            "basis_gini": [float(b) for b in self.gini.beta],
            "median_gini": float(self.gini.threshold),
            "selected_indices": [int(i) for i in self.selection.selected_indices],
            "energy_profile": [float(v) for v in self.energy_profile],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _gini_sorted(sorted_b):
    # sorted_b ascending along axis 0; returns one score per column
    F = sorted_b.shape[0]
    weights = (F + 1 - np.arange(1, F + 1, dtype=np.float64)).reshape((F,) + (1,) * (sorted_b.ndim - 1))
    total = sorted_b.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        # one division keeps the flat and one-hot cases exact
        g = ((F + 1) * total - 2 * (weights * sorted_b).sum(axis=0)) / (F * total)
    g = np.where(total > 0, g, 0.0)
    return np.clip(g, 0.0, 1.0)


def gini_index(b):
    """Gini sparsity of a non-negative vector: 0 when flat, (F-1)/F when one-hot.

    The vector is sorted ascending first, so the score ignores bin order. An
    all-zero vector scores 0.
    """
    b = check_vector(b, "b")
    if not b.any():
        logger.debug("gini_index of an all-zero vector; returning 0")
        return 0.0
    return float(_gini_sorted(np.sort(b)))


def gini_columns(B):
    """:func:`gini_index` of every column of ``B``."""
    B = check_matrix(B, "B")
    return _gini_sorted(np.sort(B, axis=0))


def cluster_bases(B_S, G_S):
    """Keep the ``K_S / 2`` sparsest source bases (ties go to lower indices)."""
    B_S = check_matrix(B_S, "B_S")
    G_S = check_matrix(G_S, "G_S")
    K_S = B_S.shape[1]
    if G_S.shape[0] != K_S:
        raise InvalidInputError(f"G_S has {G_S.shape[0]} rows, B_S has {K_S} columns")
    scores = gini_columns(B_S)
    # stable sort on -score keeps the lower index first among equal scores
    order = np.argsort(-scores, kind="stable")
    selected = np.sort(order[: K_S // 2])
    B_W = B_S[:, selected]
    G_W = G_S[selected]
    return (
        GiniScores(scores, float(np.median(scores))),
        WheezeSelection(selected, B_W, G_W, B_W @ G_W),
    )


def spectral_energy(X_W):
    """Per-frequency energy: row sums of the wheeze spectrogram."""
    return check_matrix(X_W, "X_W").sum(axis=1)


def classify(energy_profile, threshold=DEFAULT_THRESHOLD):
    """1 (wheezing) when the profile's Gini index reaches ``threshold``."""
    return int(gini_index(energy_profile) >= threshold)


def detect(model, threshold=DEFAULT_THRESHOLD):
    scores, selection = cluster_bases(model.B_S, model.G_S)
    profile = spectral_energy(selection.X_W)
    profile_gini = gini_index(profile)
    return DetectionResult(
        gini=scores,
        selection=selection,
        energy_profile=profile,
        profile_gini=profile_gini,
        label=int(profile_gini >= threshold),
        threshold=threshold,
    )
