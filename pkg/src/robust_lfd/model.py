"""Shared data model: states, actions, demonstrations and dataset utilities.

The 29-dimensional demonstration-space layout is frozen:

    0-11   state   x_a y_a z_a h_a l_a w_a cos_theta sin_theta h_b w_b h_c w_c
    12-28  action  p_x p_y p_z d1_x d1_y d1_z d2_x d2_y d2_z d3_x d3_y d3_z
                   f pre spt1 spt2 spt3
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STATE_FIELDS = (
    "x_a", "y_a", "z_a", "h_a", "l_a", "w_a",
    "cos_theta", "sin_theta", "h_b", "w_b", "h_c", "w_c",
)
ACTION_FIELDS = (
    "p_x", "p_y", "p_z",
    "d1_x", "d1_y", "d1_z",
    "d2_x", "d2_y", "d2_z",
    "d3_x", "d3_y", "d3_z",
    "f", "pre", "spt1", "spt2", "spt3",
)
STATE_DIM = len(STATE_FIELDS)
ACTION_DIM = len(ACTION_FIELDS)
DEMO_DIM = STATE_DIM + ACTION_DIM

LABELS = ("clean", "intention_deviation", "execution_deviation")

# action index groups used for reporting
POSITION = slice(0, 3)
ORIENTATION = slice(3, 12)
GRIPPER = slice(12, 14)
PRESSURE = slice(14, 17)


class ValidationError(ValueError):
    """A state, action or dataset violates its invariants."""


def _finite(values, what):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class StateVector:
    x_a: float
    y_a: float
    z_a: float
    h_a: float
    l_a: float
    w_a: float
    cos_theta: float
    sin_theta: float
    h_b: float
    w_b: float
    h_c: float
    w_c: float

    def __post_init__(self):
        arr = _finite(self.as_array(), "state")
        if abs(self.cos_theta**2 + self.sin_theta**2 - 1.0) > 1e-6:
            raise ValidationError("cos_theta^2 + sin_theta^2 must equal 1")
        if not self.l_a >= self.w_a >= 0.0:
            raise ValidationError(f"need l_a >= w_a >= 0, got {self.l_a}, {self.w_a}")
        if min(arr[[3, 8, 10]]) < 0.0 or min(arr[[9, 11]]) < 0.0:
            raise ValidationError("heights and widths must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in STATE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, values) -> "StateVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (STATE_DIM,):
            raise ValidationError(f"state needs {STATE_DIM} values, got shape {values.shape}")
        return cls(*map(float, values))


@dataclass(frozen=True)
class ActionVector:
    """Grasp action.  ``executable`` marks post-processed (orthonormal) actions."""

    p: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    f: float
    pre: float
    spt: np.ndarray
    executable: bool = False

    def __post_init__(self):
        for name in ("p", "d1", "d2", "d3", "spt"):
            arr = _finite(getattr(self, name), f"action.{name}")
            if arr.shape != (3,):
                raise ValidationError(f"action.{name} must have 3 components")
            object.__setattr__(self, name, arr)
        _finite([self.f, self.pre], "action gripper config")
        if self.executable:
            check_executable(self)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.d1, self.d2, self.d3, [self.f, self.pre], self.spt])

    @classmethod
    def from_array(cls, values, executable: bool = False) -> "ActionVector":
        v = np.asarray(values, dtype=float)
        if v.shape != (ACTION_DIM,):
            raise ValidationError(f"action needs {ACTION_DIM} values, got shape {v.shape}")
        return cls(v[0:3], v[3:6], v[6:9], v[9:12], float(v[12]), float(v[13]), v[14:17], executable)


def check_executable(a: ActionVector, tol: float = 1e-6) -> None:
    if abs(np.linalg.norm(a.d1) - 1) > tol or abs(np.linalg.norm(a.d2) - 1) > tol:
        raise ValidationError("executable action needs unit d1, d2")
    if abs(np.dot(a.d1, a.d2)) > tol:
        raise ValidationError("executable action needs d1 orthogonal to d2")
    if np.max(np.abs(np.cross(a.d1, a.d2) - a.d3)) > tol:
        raise ValidationError("executable action needs d3 = d1 x d2")
    if np.any(a.spt < 0):
        raise ValidationError("executable action needs spt >= 0")


@dataclass(frozen=True)
class Demonstration:
    state: StateVector
    action: ActionVector
    id: int
    label: str | None = None


def concat_demo(d: Demonstration) -> np.ndarray:
    """Point in demonstration space: 12 state values then 17 action values."""
    vec = np.concatenate([d.state.as_array(), d.action.as_array()])
    return _finite(vec, "demonstration")


@dataclass
class Standardization:
    """Per-feature affine map z = (x - mean) / scale."""

    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardization":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        scale = np.where(constant, 1.0, std)
        return cls(mean=mean, scale=scale, constant=constant)

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def invert(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.mean

    def subset(self, idx) -> "Standardization":
        return Standardization(self.mean[idx], self.scale[idx], self.constant[idx])

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "constant": self.constant.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Standardization":
        scale = np.asarray(d["scale"], dtype=float)
        if np.any(scale <= 0):
            raise ValidationError("standardization scales must be positive")
        return cls(np.asarray(d["mean"], dtype=float), scale, np.asarray(d["constant"], dtype=bool))


@dataclass
class DemonstrationSet:
    """Ordered demonstrations held as dense arrays (rows are demonstrations)."""

    states: np.ndarray
    actions: np.ndarray
    ids: np.ndarray
    labels: list = field(default_factory=list)
    standardization: Standardization | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float)).reshape(-1, STATE_DIM)
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=float)).reshape(-1, ACTION_DIM)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        n = len(self.states)
        if len(self.actions) != n or len(self.ids) != n:
            raise ValidationError("states, actions and ids must have equal length")
        if not self.labels:
            self.labels = [None] * n
        self.labels = list(self.labels)
        if len(self.labels) != n:
            raise ValidationError("labels must match the number of demonstrations")
        if len(np.unique(self.ids)) != n:
            raise ValidationError("demonstration ids must be unique")
        _finite(self.states, "states")
        _finite(self.actions, "actions")
        for lab in self.labels:
            if lab is not None and lab not in LABELS:
                raise ValidationError(f"unknown label {lab!r}")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> Demonstration:
        return Demonstration(
            StateVector.from_array(self.states[i]),
            ActionVector.from_array(self.actions[i]),
            int(self.ids[i]),
            self.labels[i],
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_demos(cls, demos: Iterable[Demonstration]) -> "DemonstrationSet":
        demos = list(demos)
        if not demos:
            return cls(np.empty((0, STATE_DIM)), np.empty((0, ACTION_DIM)), np.empty(0, np.int64), [])
        return cls(
            np.array([d.state.as_array() for d in demos]),
            np.array([d.action.as_array() for d in demos]),
            np.array([d.id for d in demos]),
            [d.label for d in demos],
        )

    def matrix(self) -> np.ndarray:
        """n x 29 demonstration-space matrix."""
        return np.hstack([self.states, self.actions])

    def take(self, idx) -> "DemonstrationSet":
        idx = np.asarray(idx, dtype=np.int64)
        return DemonstrationSet(
            self.states[idx], self.actions[idx], self.ids[idx],
            [self.labels[i] for i in idx], self.standardization,
        )

    def has_labels(self) -> bool:
        return len(self) > 0 and all(lab is not None for lab in self.labels)


def concat_sets(sets: Sequence[DemonstrationSet]) -> DemonstrationSet:
    return DemonstrationSet(
        np.vstack([s.states for s in sets]),
        np.vstack([s.actions for s in sets]),
        np.concatenate([s.ids for s in sets]),
        [lab for s in sets for lab in s.labels],
    )


def split_dataset(D: DemonstrationSet, train_fraction: float = 0.75, seed: int = 0):
    """Uniform random train/validation partition; both halves keep dataset order."""
    n = len(D)
    if n < 2:
        raise ValidationError("need at least 2 demonstrations to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must lie in (0, 1)")
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return D.take(np.sort(perm[:n_train])), D.take(np.sort(perm[n_train:]))


def standardize(D: DemonstrationSet):
    """Standardize the 29-vectors of ``D``; returns (standardized set, record)."""
    if len(D) < 2:
        raise ValidationError("need at least 2 demonstrations to standardize")
    rec = Standardization.fit(D.matrix())
    Z = rec.apply(D.matrix())
    out = DemonstrationSet(Z[:, :STATE_DIM], Z[:, STATE_DIM:], D.ids.copy(), list(D.labels), rec)
    return out, rec


# --------------------------------------------------------------------------
# dataset file: one JSON object per line


def _num(x) -> float:
    # json renders floats with repr(), i.e. 17 significant digits
    return float(x)


def write_dataset(D: DemonstrationSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(D)):
            rec = {
                "id": int(D.ids[i]),
                "state": [_num(v) for v in D.states[i]],
                "action": [_num(v) for v in D.actions[i]],
            }
            if D.labels[i] is not None:
                rec["label"] = D.labels[i]
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> DemonstrationSet:
    states, actions, ids, labels = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            s = [float(v) for v in rec["state"]]
            a = [float(v) for v in rec["action"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: malformed record ({exc})") from exc
        if len(s) != STATE_DIM or len(a) != ACTION_DIM:
            raise ValidationError(f"{path}:{lineno}: expected {STATE_DIM} state and {ACTION_DIM} action values")
        states.append(s)
        actions.append(a)
        ids.append(int(rec["id"]))
        labels.append(rec.get("label"))
    if not ids:
        return DemonstrationSet.from_demos([])
    return DemonstrationSet(np.array(states), np.array(actions), np.array(ids), labels)
