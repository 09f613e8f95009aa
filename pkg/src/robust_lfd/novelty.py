"""One-class SVM novelty detection with a cross-validated kernel-scale search."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import gram_matrix, solve_ocsvm_dual, sq_distances
from .model import Standardization

DEMONSTRATION_SPACE = "demonstration_space"
STATE_SPACE = "state_space"


@dataclass
class NoveltyModel:
    """Decision function x -> sum_i alpha_i k(sv_i, x) - rho."""

    support_vectors: np.ndarray
    alpha: np.ndarray
    rho: float
    gamma: float
    nu: float
    space_tag: str = DEMONSTRATION_SPACE
    standardization: Standardization | None = None
    n_train: int = 0

    def raw_scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(
                f"dimension mismatch: model has {self.support_vectors.shape[1]}, got {X.shape[1]}"
            )
        return gram_matrix(X, self.gamma, self.support_vectors) @ self.alpha - self.rho

    def signs(self, X) -> np.ndarray:
        return np.where(self.raw_scores(X) > 0.0, 1, -1)

    def to_dict(self) -> dict:
        return {
            "space_tag": self.space_tag,
            "nu": self.nu,
            "gamma": self.gamma,
            "rho": self.rho,
            "support_vectors": self.support_vectors.tolist(),
            "alpha": self.alpha.tolist(),
            "standardization": None if self.standardization is None else self.standardization.to_dict(),
            "n_train": self.n_train,
        }

    @classmethod
    def from_dict(cls, d) -> "NoveltyModel":
        std = d.get("standardization")
        return cls(
            support_vectors=np.asarray(d["support_vectors"], dtype=float),
            alpha=np.asarray(d["alpha"], dtype=float),
            rho=float(d["rho"]),
            gamma=float(d["gamma"]),
            nu=float(d["nu"]),
            space_tag=d["space_tag"],
            standardization=None if std is None else Standardization.from_dict(std),
            n_train=int(d.get("n_train", 0)),
        )


def train_ocsvm(X, nu: float, gamma: float, space_tag: str = DEMONSTRATION_SPACE,
                standardization: Standardization | None = None, tol: float = 1e-6) -> NoveltyModel:
    """Fit a one-class SVM on the rows of ``X`` (already in kernel space)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if not 0.0 < nu <= 1.0:
        raise ValueError("nu must lie in (0, 1]")
    if n < math.ceil(1.0 / nu - 1e-9):
        raise ValueError(f"need at least ceil(1/nu) = {math.ceil(1.0 / nu - 1e-9)} points, got {n}")
    sol = solve_ocsvm_dual(gram_matrix(X, gamma), nu, tol=tol, check_psd=False)
    sv = sol.coef > 0.0
    alpha = sol.coef[sv].copy()
    rho = sol.bias
    free = (sol.coef > 0.0) & (sol.coef < 1.0 / (nu * n))
    if free.any():
        # offset from the same arithmetic as raw_scores, so no free support
        # vector scores below zero through round-off
        rho = float((gram_matrix(X[free], gamma, X[sv]) @ alpha).min())
    return NoveltyModel(
        support_vectors=X[sv].copy(),
        alpha=alpha,
        rho=rho,
        gamma=float(gamma),
        nu=float(nu),
        space_tag=space_tag,
        standardization=standardization,
        n_train=n,
    )


def decide(model: NoveltyModel, x):
    """(sign, raw score) for one point; a score of exactly zero is an outlier."""
    score = float(model.raw_scores(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return (1 if score > 0.0 else -1), score


def median_sq_distance(X) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = sq_distances(X)
    iu = np.triu_indices(len(X), k=1)
    m = float(np.median(D[iu])) if len(iu[0]) else 0.0
    return m if m > 0 else 1.0


def default_gamma_grid(X, n: int = 15, span: float = 1e3) -> np.ndarray:
    """Log grid over [1/(span m), span/m], m the median squared pairwise distance."""
    m = median_sq_distance(X)
    return np.logspace(-math.log10(span), math.log10(span), n) / m


def kfold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold index per row: a seeded permutation dealt round-robin."""
    ids = np.empty(n, dtype=np.int64)
    ids[np.random.default_rng(seed).permutation(n)] = np.arange(n) % folds
    return ids


def select_gamma(X, nu: float, grid=None, folds: int = 5, seed: int = 0, fold_ids=None):
    """Kernel scale minimising held-out outliers; ties go to the smaller gamma.

    Returns (gamma, counts) where ``counts[g]`` is the total number of
    held-out points predicted -1 for grid value ``g``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grid = default_gamma_grid(X) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("gamma grid must be nonempty and positive")
    if folds < 2 or len(X) < folds:
        raise ValueError("need folds >= 2 and at least one point per fold")
    if fold_ids is None:
        fold_ids = kfold_ids(len(X), folds, seed)
    fold_ids = np.asarray(fold_ids)
    D = sq_distances(X)
    counts = {}
    for g in grid:
        K = np.exp(-g * D)
        total = 0
        for f in np.unique(fold_ids):
            tr = fold_ids != f
            te = ~tr
            sol = solve_ocsvm_dual(K[np.ix_(tr, tr)], nu, check_psd=False)
            scores = K[np.ix_(te, tr)] @ sol.coef - sol.bias
            total += int(np.sum(scores <= 0.0))
        counts[float(g)] = total
    best = min(counts, key=lambda g: (counts[g], g))
    return best, counts
