"""Selection of demonstrations consistent with the teacher's intended policy.

A demonstration is kept when it is an inlier in demonstration space or an
outlier in state space; only demonstrations that are ordinary in state but
unusual as a state-action pair are discarded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import STATE_DIM, DemonstrationSet, Standardization
from .novelty import DEMONSTRATION_SPACE, STATE_SPACE, NoveltyModel, default_gamma_grid, select_gamma, train_ocsvm

INLIER = "state_action_inlier"
STATE_OUTLIER = "state_outlier"
INCONSISTENT = "inconsistent"

DEFAULT_NU_D = 0.08
DEFAULT_NU_S = 0.05


class ConsistencyError(RuntimeError):
    pass


@dataclass
class ConsistencyReport:
    ids: np.ndarray
    demo_sign: np.ndarray
    state_sign: np.ndarray
    demo_score: np.ndarray
    state_score: np.ndarray
    demo_model: NoveltyModel
    state_model: NoveltyModel

    @property
    def keep(self) -> np.ndarray:
        return (self.demo_sign > 0) | (self.state_sign < 0)

    @property
    def regions(self) -> list[str]:
        out = []
        for gd, gs in zip(self.demo_sign, self.state_sign):
            if gd > 0:
                out.append(INLIER)
            elif gs < 0:
                out.append(STATE_OUTLIER)
            else:
                out.append(INCONSISTENT)
        return out

    @property
    def kept_ids(self) -> list[int]:
        return [int(i) for i in self.ids[self.keep]]

    @property
    def removed_ids(self) -> list[int]:
        return [int(i) for i in self.ids[~self.keep]]

    def to_lines(self) -> list[str]:
        """Audit records: one JSON object per demonstration."""
        return [
            json.dumps({
                "id": int(i),
                "region": r,
                "g_D_score": float(sd),
                "g_S_score": float(ss),
            })
            for i, r, sd, ss in zip(self.ids, self.regions, self.demo_score, self.state_score)
        ]

    def summary(self) -> dict:
        regions = self.regions
        return {
            "n": len(self.ids),
            "kept": int(self.keep.sum()),
            "removed": int((~self.keep).sum()),
            "gamma_D": self.demo_model.gamma,
            "gamma_S": self.state_model.gamma,
            "nu_D": self.demo_model.nu,
            "nu_S": self.state_model.nu,
            **{r: regions.count(r) for r in (INLIER, STATE_OUTLIER, INCONSISTENT)},
        }


def consistency_signs(Z, n_state: int, nu_D: float = DEFAULT_NU_D, nu_S: float = DEFAULT_NU_S,
                      gamma_grid=None, folds: int = 5, seed: int = 0, std_D=None, std_S=None):
    """Both novelty decisions on an already standardized demonstration matrix.

    ``Z`` holds one row per demonstration with the state in its first
    ``n_state`` columns.  Returns (g_D scores, g_S scores, g_D model,
    g_S model); a demonstration is kept when its g_D score is positive or
    its g_S score is not.
    """
    if not (0.0 < nu_D <= 1.0 and 0.0 < nu_S <= 1.0):
        raise ConsistencyError("nu_D and nu_S must lie in (0, 1]")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    S = Z[:, :n_state]
    grid_D, grid_S = (None, None) if gamma_grid is None else gamma_grid
    if grid_D is None:
        grid_D = default_gamma_grid(Z)
    if grid_S is None:
        grid_S = default_gamma_grid(S)
    try:
        gD, _ = select_gamma(Z, nu_D, grid_D, folds=folds, seed=seed)
        gS, _ = select_gamma(S, nu_S, grid_S, folds=folds, seed=seed)
        mD = train_ocsvm(Z, nu_D, gD, DEMONSTRATION_SPACE, std_D)
        mS = train_ocsvm(S, nu_S, gS, STATE_SPACE, std_S)
    except ValueError as exc:
        raise ConsistencyError(f"one-class SVM training failed: {exc}") from exc
    return mD.raw_scores(Z), mS.raw_scores(S), mD, mS


def filter_consistent(D: DemonstrationSet, nu_D: float = DEFAULT_NU_D, nu_S: float = DEFAULT_NU_S,
                      gamma_grid=None, folds: int = 5, seed: int = 0,
                      standardization: Standardization | None = None):
    """Return (consistent subset, report).

    Both one-class models are trained on the full set ``D`` after
    standardization (``D.standardization`` or ``standardization`` if given,
    otherwise fitted on ``D``).  ``gamma_grid`` may be a pair of grids
    (demonstration space, state space) or None for the median-heuristic
    defaults.
    """
    rec = standardization or D.standardization or Standardization.fit(D.matrix())
    sd, ss, mD, mS = consistency_signs(
        rec.apply(D.matrix()), STATE_DIM, nu_D, nu_S, gamma_grid, folds, seed,
        rec, rec.subset(slice(0, STATE_DIM)),
    )
    report = ConsistencyReport(
        ids=D.ids.copy(),
        demo_sign=np.where(sd > 0.0, 1, -1),
        state_sign=np.where(ss > 0.0, 1, -1),
        demo_score=sd,
        state_score=ss,
        demo_model=mD,
        state_model=mS,
    )
    keep = np.flatnonzero(report.keep)
    if keep.size == 0:
        raise ConsistencyError("no consistent demonstrations left; reduce nu_D")
    return D.take(keep), report
