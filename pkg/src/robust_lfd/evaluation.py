"""Regression metrics, the filtered-vs-unfiltered comparison and grasp rollouts.

Reports are plain text built from fixed-precision numbers only, so a rerun
with the same seeds reproduces them byte for byte.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .consistency import DEFAULT_NU_D, DEFAULT_NU_S
from .model import (
    ACTION_DIM, ACTION_FIELDS, GRIPPER, ORIENTATION, POSITION, PRESSURE, DemonstrationSet, split_dataset,
)
from .policy import HyperGrid, VectorPolicy, learn_intended_policy, scalar_loss
from .synthlab import (
    TeacherConfig, Tolerances, generate_dataset, grasp_success, intended_action, observe, place, sample_scene,
)

GROUPS = {"position": POSITION, "orientation": ORIENTATION, "gripper": GRIPPER, "pressure": PRESSURE}
# Table-I style summaries cover position, orientation and pressure
REPORTED_GROUPS = ("position", "orientation", "pressure")


class EvaluationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# regression metrics


@dataclass
class RegressionReport:
    r2: np.ndarray  # per action dimension
    constant: np.ndarray  # True where the validation target has no spread
    group_mean: dict
    mean: float  # over the reported groups
    std: float  # population std of R^2 over the reported groups
    mean_all: float  # over all action dimensions
    loss: float  # mean summed literal epsilon-insensitive loss per demonstration
    n: int

    @property
    def reported_dims(self) -> np.ndarray:
        return np.concatenate([np.arange(ACTION_DIM)[GROUPS[g]] for g in REPORTED_GROUPS])

    def lines(self, label: str = "") -> list[str]:
        head = f"{label} " if label else ""
        out = [f"{head}n={self.n} mean_R2={self.mean:.4f} std_R2={self.std:.4f} "
               f"mean_R2_all={self.mean_all:.4f} loss={self.loss:.4f}"]
        out.append(head + " ".join(f"{g}={self.group_mean[g]:.4f}" for g in GROUPS))
        for k in range(ACTION_DIM):
            flag = " constant" if self.constant[k] else ""
            out.append(f"{head}  {ACTION_FIELDS[k]:<6} R2={self.r2[k]:.4f}{flag}")
        return out


def r2_scores(Y, Y_hat):
    """Per-column R^2 = 1 - SS_res/SS_tot; (r2, constant flags), constant columns get 0."""
    Y = np.asarray(Y, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    if Y.shape != Y_hat.shape or Y.ndim != 2 or len(Y) == 0:
        raise EvaluationError("targets and predictions must be equal-shape nonempty matrices")
    ss_tot = ((Y - Y.mean(axis=0)) ** 2).sum(axis=0)
    ss_res = ((Y - Y_hat) ** 2).sum(axis=0)
    constant = ss_tot <= 1e-12 * np.maximum(1.0, (Y**2).sum(axis=0))
    r2 = np.where(constant, 0.0, 1.0 - ss_res / np.where(constant, 1.0, ss_tot))
    return r2, constant


def r2_report(policy: VectorPolicy, val: DemonstrationSet) -> RegressionReport:
    """Score raw (pre post-processing) predictions against physical targets."""
    if len(val) == 0:
        raise EvaluationError("empty validation set")
    pred = policy.predict(val.states)
    if pred.shape != val.actions.shape:
        raise EvaluationError("policy and validation set disagree on action dimensions")
    r2, constant = r2_scores(val.actions, pred)
    eps = np.array([p.epsilon for p in policy.scalars])
    loss = float(scalar_loss(pred, val.actions, eps[None, :]).sum(axis=1).mean())
    group_mean = {g: float(r2[s].mean()) for g, s in GROUPS.items()}
    rep = np.concatenate([r2[GROUPS[g]] for g in REPORTED_GROUPS])
    return RegressionReport(
        r2=r2, constant=constant, group_mean=group_mean, mean=float(rep.mean()), std=float(rep.std()),
        mean_all=float(r2.mean()), loss=loss, n=len(val),
    )


def data_digest(D: DemonstrationSet) -> str:
    """SHA-256 over ids, states and actions."""
    h = hashlib.sha256()
    for arr in (D.ids.astype(np.int64), D.states, D.actions):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# filtered vs unfiltered


@dataclass
class RemovalStats:
    removed: int
    corrupted: int | None  # None without labels
    true_removed: int | None
    clean: int | None
    clean_removed: int | None

    @property
    def precision(self):
        if self.true_removed is None:
            return None
        return self.true_removed / self.removed if self.removed else 1.0

    @property
    def recall(self):
        if self.true_removed is None:
            return None
        return self.true_removed / self.corrupted if self.corrupted else 1.0

    @property
    def clean_removal_rate(self):
        if self.clean_removed is None:
            return None
        return self.clean_removed / self.clean if self.clean else 0.0


def removal_stats(train: DemonstrationSet, removed_ids) -> RemovalStats:
    removed = set(int(i) for i in removed_ids)
    if not train.has_labels():
        return RemovalStats(len(removed), None, None, None, None)
    bad = {int(i) for i, lab in zip(train.ids, train.labels) if lab != "clean"}
    clean = {int(i) for i in train.ids} - bad
    return RemovalStats(len(removed), len(bad), len(removed & bad), len(clean), len(removed & clean))


@dataclass
class SeedResult:
    seed: int
    n_train: int
    n_val: int
    digest: str
    filtered: RegressionReport
    unfiltered: RegressionReport
    removal: RemovalStats


@dataclass
class ExperimentResult:
    n_demos: int
    config: TeacherConfig
    nu_D: float
    nu_S: float
    runs: list = field(default_factory=list)

    def _series(self, fn):
        return np.array([fn(r) for r in self.runs], dtype=float)

    @property
    def gap(self) -> float:
        return float(self._series(lambda r: r.filtered.mean - r.unfiltered.mean).mean())

    @property
    def mean_filtered(self) -> float:
        return float(self._series(lambda r: r.filtered.mean).mean())

    @property
    def mean_unfiltered(self) -> float:
        return float(self._series(lambda r: r.unfiltered.mean).mean())

    def _pooled(self, num, den):
        vals = [(getattr(r.removal, num), getattr(r.removal, den)) for r in self.runs]
        if any(a is None for a, _ in vals):
            return None
        total = sum(b for _, b in vals)
        return sum(a for a, _ in vals) / total if total else None

    @property
    def recall(self):
        return self._pooled("true_removed", "corrupted")

    @property
    def precision(self):
        return self._pooled("true_removed", "removed")

    @property
    def clean_removal_rate(self):
        return self._pooled("clean_removed", "clean")

    def report(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"

        def spread(fn):
            s = self._series(fn)
            return f"{s.mean():.4f} +- {s.std():.4f}"

        cfg = self.config
        lines = [
            "robust_lfd table1",
            f"demos={self.n_demos} seeds={','.join(str(r.seed) for r in self.runs)} "
            f"p_intent={cfg.p_intent:.4f} p_exec={cfg.p_exec:.4f} nu_D={self.nu_D:.4f} nu_S={self.nu_S:.4f}",
            "",
            "arm                    mean_R2 (over seeds)   std_R2 across dims (mean over seeds)",
            f"consistent only        {spread(lambda r: r.filtered.mean):<22} "
            f"{self._series(lambda r: r.filtered.std).mean():.4f}",
            f"including inconsistent {spread(lambda r: r.unfiltered.mean):<22} "
            f"{self._series(lambda r: r.unfiltered.std).mean():.4f}",
            f"gap                    {spread(lambda r: r.filtered.mean - r.unfiltered.mean)}",
            "",
            "group means (consistent only / including inconsistent)",
        ]
        for g in GROUPS:
            lines.append(f"  {g:<12} {self._series(lambda r: r.filtered.group_mean[g]).mean():.4f} / "
                         f"{self._series(lambda r: r.unfiltered.group_mean[g]).mean():.4f}")
        lines += [
            "",
            f"filter: precision={fmt(self.precision)} recall={fmt(self.recall)} "
            f"clean_removal={fmt(self.clean_removal_rate)}",
            "",
            "seed  n_train n_val removed corrupt hit clean_rm R2_filtered R2_unfiltered digest",
        ]
        for r in self.runs:
            m = r.removal
            lines.append(
                f"{r.seed:<5} {r.n_train:<7} {r.n_val:<5} {m.removed:<7} {fmt_int(m.corrupted):<7} "
                f"{fmt_int(m.true_removed):<3} {fmt_int(m.clean_removed):<8} {r.filtered.mean:<11.4f} "
                f"{r.unfiltered.mean:<13.4f} {r.digest[:16]}"
            )
        return "\n".join(lines) + "\n"


def fmt_int(v) -> str:
    return "n/a" if v is None else str(v)


def run_table1_seed(D: DemonstrationSet, seed: int, nu_D: float = DEFAULT_NU_D, nu_S: float = DEFAULT_NU_S,
                    grid: HyperGrid | None = None, train_fraction: float = 0.75) -> SeedResult:
    """Both arms on one dataset: split, train with and without filtering, score."""
    grid = grid or HyperGrid(seed=seed)
    train, val = split_dataset(D, train_fraction, seed=seed)
    digest = data_digest(val)
    filtered, report = learn_intended_policy(train, nu_D, nu_S, grid, filter_demos=True)
    unfiltered, _ = learn_intended_policy(train, nu_D, nu_S, grid, filter_demos=False)
    if data_digest(val) != digest:
        raise EvaluationError("validation data changed between arms")
    return SeedResult(
        seed=seed, n_train=len(train), n_val=len(val), digest=digest,
        filtered=r2_report(filtered, val), unfiltered=r2_report(unfiltered, val),
        removal=removal_stats(train, report.removed_ids),
    )


def table1_experiment(n_demos: int = 525, seeds=range(10), config: TeacherConfig | None = None,
                      nu_D: float = DEFAULT_NU_D, nu_S: float = DEFAULT_NU_S,
                      grid_factory=None, render_noise: float = 1.0, progress=None) -> ExperimentResult:
    """Generate, split, filter and fit both arms for every seed.

    ``grid_factory(seed)`` returns the HyperGrid shared by both arms of a
    seed (default ``HyperGrid(seed=seed)``).
    """
    config = config or TeacherConfig()
    result = ExperimentResult(n_demos=n_demos, config=config, nu_D=nu_D, nu_S=nu_S)
    for seed in seeds:
        D, _ = generate_dataset(n_demos, config, seed=int(seed), render_noise=render_noise)
        grid = grid_factory(int(seed)) if grid_factory else HyperGrid(seed=int(seed))
        result.runs.append(run_table1_seed(D, int(seed), nu_D, nu_S, grid))
        if progress is not None:
            progress(result.runs[-1])
    if not result.runs:
        raise EvaluationError("no seeds given")
    return result


# --------------------------------------------------------------------------
# grasp rollouts


@dataclass
class SuccessTable:
    counts: np.ndarray  # successes per scene
    grasps: int
    reasons: list  # per scene, per grasp failure reason ("none" on success)

    @property
    def rate(self) -> float:
        return float(self.counts.sum() / (len(self.counts) * self.grasps))

    def report(self) -> str:
        lines = ["scene successes"]
        for i, c in enumerate(self.counts):
            fails = [r for r in self.reasons[i] if r != "none"]
            tail = f"  ({', '.join(fails)})" if fails else ""
            lines.append(f"{i + 1:<5} {int(c)}/{self.grasps}{tail}")
        lines.append(f"total {int(self.counts.sum())}/{len(self.counts) * self.grasps} rate={self.rate:.4f}")
        return "\n".join(lines) + "\n"


def teacher_policy(state, spec):
    """The analytic intended action (ignores the observed state)."""
    return intended_action(spec)


def success_experiment(policy, n_scenes: int = 14, grasps: int = 5, seed: int = 0,
                       tolerances: Tolerances = Tolerances(), render_noise: float = 1.0) -> SuccessTable:
    """Sample scenes, then per grasp re-place the object, observe and score.

    ``policy`` is a VectorPolicy (its post-processed action is used) or a
    callable ``(state, spec) -> executable ActionVector``.
    """
    act = (lambda s, spec: policy.act(s)) if isinstance(policy, VectorPolicy) else policy
    rng = np.random.default_rng(seed)
    counts = np.zeros(n_scenes, dtype=int)
    reasons = []
    for i in range(n_scenes):
        base = sample_scene(rng)
        row = []
        for _ in range(grasps):
            spec = place(base, rng)
            state = observe(spec, noise=render_noise, seed=int(rng.integers(2**31)))
            ok, why = grasp_success(spec, act(state, spec), tolerances)
            counts[i] += ok
            row.append(why)
        reasons.append(row)
    return SuccessTable(counts=counts, grasps=grasps, reasons=reasons)
