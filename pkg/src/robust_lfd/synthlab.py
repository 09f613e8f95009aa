"""Synthetic grasping world: scenes, an analytic teacher, demonstrations and a success judge.

Objects are tapered ellipses.  In object coordinates (u along the yaw
direction, v across it) the footprint is

    (u/A)^2 + (v/B(u))^2 <= 1,        B(u) = B (1 - k u/A)

and the height is ``H (1 + k u/A) (e + (1 - e) sqrt(1 - rho^2))`` with
``rho^2`` the left-hand side above and ``e`` the rim fraction.  For ``k > 0``
the +u end (the root) is taller and narrower; the -u end (the leaves) is
flatter, wider and more fragile.  The tolerated finger pressure grows
linearly towards the root with slope ``compliance``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .model import (
    ActionVector, Demonstration, DemonstrationSet, StateVector, ValidationError, check_executable,
)
from .perception import HeightImage, extract_state, grip_stop, height_from_depth, segment

RIM_FRACTION = 0.5
GRASP_FRACTION = 0.3  # grasp point offset toward the root, as a fraction of A
GRASP_HEIGHT_FRACTION = 0.5
BASE_PRESSURE = np.array([24.0, 28.0, 28.0])
FINGER_DEFAULT = 1.4
PRESHAPE_DEFAULT = 0.6
CAMERA_HEIGHT = 800.0
YAW_RANGE = math.pi / 6  # objects arrive roughly aligned with the feed direction
GRASP_AREA = 150.0  # |x|, |y| bound on object centres (mm)

DEFAULT_SHAPE = (250, 250)
DEFAULT_PITCH = 2.0
DEFAULT_ORIGIN = (-250.0, -250.0, 0.0)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    center: tuple = (0.0, 0.0)
    yaw: float = 0.0
    half_lengths: tuple = (90.0, 55.0)
    peak_height: float = 90.0
    asymmetry: float = 0.25
    compliance: float = 0.2
    area: float = GRASP_AREA

    def __post_init__(self):
        A, B = self.half_lengths
        if A <= 0 or B <= 0:
            raise SceneError("half-lengths must be positive")
        if self.peak_height <= 0:
            raise SceneError("peak height must be positive")
        if not -0.5 < self.asymmetry < 0.5:
            raise SceneError("asymmetry must lie in (-0.5, 0.5)")
        if max(abs(self.center[0]), abs(self.center[1])) > self.area:
            raise SceneError("object centre outside the grasping area")

    @property
    def axis(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw)])

    @property
    def root_sign(self) -> float:
        return 1.0 if self.asymmetry >= 0 else -1.0

    def canonical(self) -> "SceneSpec":
        """Same physical object with yaw in (-pi/2, pi/2]."""
        yaw = math.remainder(self.yaw, 2 * math.pi)
        if -math.pi / 2 < yaw <= math.pi / 2:
            return replace(self, yaw=yaw)
        yaw = yaw - math.pi if yaw > 0 else yaw + math.pi
        return replace(self, yaw=yaw, asymmetry=-self.asymmetry)


@dataclass
class TeacherConfig:
    """Per-dimension action noise plus the two deviation processes."""

    noise: tuple = (3.0, 3.0, 3.0) + (0.02,) * 9 + (0.0, 0.0) + (1.0, 1.0, 1.0)
    p_intent: float = 0.0
    p_exec: float = 28 / 525
    yaw_error: float = math.pi / 2
    spt_factor: float = 1.0 / 3.0  # bad grip: far too light, the head slips
    exec_orientation_share: float = 0.5

    def __post_init__(self):
        self.noise = tuple(float(v) for v in self.noise)
        if len(self.noise) != 17 or min(self.noise) < 0:
            raise ValueError("noise needs 17 non-negative standard deviations")
        for p in (self.p_intent, self.p_exec, self.exec_orientation_share):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.p_intent + self.p_exec > 1.0:
            raise ValueError("p_intent + p_exec must not exceed 1")
        if self.spt_factor <= 0:
            raise ValueError("spt_factor must be positive")

    @classmethod
    def noiseless(cls) -> "TeacherConfig":
        return cls(noise=(0.0,) * 17, p_intent=0.0, p_exec=0.0)


# --------------------------------------------------------------------------
# geometry


def _object_coords(spec: SceneSpec, x, y):
    c, s = math.cos(spec.yaw), math.sin(spec.yaw)
    dx, dy = x - spec.center[0], y - spec.center[1]
    return dx * c + dy * s, -dx * s + dy * c


def height_field(spec: SceneSpec, x, y):
    """Analytic height (mm) at robot-frame points; zero off the footprint."""
    A, B = spec.half_lengths
    k = spec.asymmetry
    u, v = _object_coords(spec, np.asarray(x, float), np.asarray(y, float))
    Bu = B * (1.0 - k * u / A)
    rho2 = (u / A) ** 2 + (v / np.where(Bu > 0, Bu, np.inf)) ** 2
    inside = (np.abs(u) <= A) & (rho2 <= 1.0)
    dome = RIM_FRACTION + (1.0 - RIM_FRACTION) * np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    return np.where(inside, spec.peak_height * (1.0 + k * u / A) * dome, 0.0)


def _axis_height(spec, u):
    A = spec.half_lengths[0]
    k = spec.asymmetry
    return spec.peak_height * (1 + k * u / A) * (RIM_FRACTION + (1 - RIM_FRACTION) * math.sqrt(max(0.0, 1 - (u / A) ** 2)))


def _width(spec, u):
    A, B = spec.half_lengths
    return 2 * B * (1 - spec.asymmetry * u / A) * math.sqrt(max(0.0, 1 - (u / A) ** 2))


def analytic_state(spec: SceneSpec, table_z: float = 0.0) -> StateVector:
    """Continuum values of the 12 features for a scene."""
    A, B = spec.half_lengths
    k = spec.asymmetry
    u_c = -k * A / 4.0  # mask centroid along u
    axis = spec.axis
    cx, cy = np.array(spec.center) + u_c * axis
    yaw = math.remainder(spec.yaw, 2 * math.pi)
    flipped = not (-math.pi / 2 < yaw <= math.pi / 2)
    ct, st = (-axis if flipped else axis)
    if k == 0:
        t_star = 0.0
    else:
        t_star = (1 - math.sqrt(1 + 8 * k * k)) / (4 * k)
    w_a = _width(spec, t_star * A)
    u_plus, u_minus = (A + u_c) / 2, (u_c - A) / 2
    u_b, u_cc = (u_minus, u_plus) if flipped else (u_plus, u_minus)
    h_a = _axis_height(spec, u_c)
    return StateVector(
        x_a=float(cx), y_a=float(cy), z_a=table_z + h_a, h_a=h_a, l_a=2 * A, w_a=w_a,
        cos_theta=float(ct), sin_theta=float(st),
        h_b=_axis_height(spec, u_b), w_b=_width(spec, u_b),
        h_c=_axis_height(spec, u_cc), w_c=_width(spec, u_cc),
    )


@dataclass
class RenderedScene:
    depth: np.ndarray
    reference: np.ndarray
    height: HeightImage
    mask: np.ndarray
    truth: StateVector


def render_scene(spec: SceneSpec, shape=DEFAULT_SHAPE, pitch: float = DEFAULT_PITCH,
                 origin=DEFAULT_ORIGIN, noise: float = 0.0, seed: int = 0,
                 camera_height: float = CAMERA_HEIGHT) -> RenderedScene:
    """Depth/reference pair for a scene seen by a downward camera."""
    rows, cols = shape
    x0, y0, z0 = origin
    A = spec.half_lengths[0]
    x_hi, y_hi = x0 + (cols - 1) * pitch, y0 + (rows - 1) * pitch
    cx, cy = spec.center
    if cx - A < x0 or cx + A > x_hi or cy - A < y0 or cy + A > y_hi:
        raise SceneError("scene does not fit inside the image grid")
    X = x0 + np.arange(cols) * pitch
    Y = y0 + np.arange(rows) * pitch
    h = height_field(spec, X[None, :], Y[:, None])
    reference = np.full(shape, camera_height)
    depth = reference - h
    if noise > 0:
        depth = depth + np.random.default_rng(seed).normal(0.0, noise, size=shape)
    return RenderedScene(
        depth=depth, reference=reference, height=HeightImage(h, pitch, origin),
        mask=h > 0, truth=analytic_state(spec, z0),
    )


def observe(spec: SceneSpec, noise: float = 1.0, seed: int = 0, **render_kw) -> StateVector:
    """Render, segment and extract the state of a scene."""
    sc = render_scene(spec, noise=noise, seed=seed, **render_kw)
    h = height_from_depth(sc.depth, sc.reference, sc.height.pitch, sc.height.origin)
    return extract_state(segment(h), h)


# --------------------------------------------------------------------------
# teacher


def grasp_point(spec: SceneSpec, toward_root: bool = True) -> np.ndarray:
    s = GRASP_FRACTION * spec.half_lengths[0] * spec.root_sign * (1.0 if toward_root else -1.0)
    return np.array(spec.center) + s * spec.axis


def local_pressure(spec: SceneSpec, xy) -> np.ndarray:
    """Pressure the object tolerates at a point: base + compliance x distance toward the root."""
    d = np.dot(np.asarray(xy, float)[:2] - np.array(spec.center), spec.axis) * spec.root_sign
    return BASE_PRESSURE + spec.compliance * d


def _grasp_z(spec, xy):
    u, _ = _object_coords(spec, xy[0], xy[1])
    return GRASP_HEIGHT_FRACTION * _axis_height(spec, float(u))


def intended_action(spec: SceneSpec) -> ActionVector:
    """Closed-form grasp the teacher means to perform."""
    xy = grasp_point(spec)
    c, s = math.cos(spec.yaw), math.sin(spec.yaw)
    d1 = np.array([0.0, 0.0, -1.0])
    d2 = np.array([-s, c, 0.0])
    return ActionVector(
        p=np.array([xy[0], xy[1], _grasp_z(spec, xy)]), d1=d1, d2=d2, d3=np.cross(d1, d2),
        f=FINGER_DEFAULT, pre=PRESHAPE_DEFAULT, spt=local_pressure(spec, xy), executable=True,
    )


def rotate_about_approach(a: ActionVector, angle: float) -> ActionVector:
    """Rotate d2, d3 about d1 by ``angle`` (Rodrigues)."""
    k = a.d1 / np.linalg.norm(a.d1)
    c, s = math.cos(angle), math.sin(angle)

    def rot(v):
        return v * c + np.cross(k, v) * s + k * np.dot(k, v) * (1 - c)

    return replace(a, d2=rot(a.d2), d3=rot(a.d3))


def demonstrate(spec: SceneSpec, cfg: TeacherConfig, seed: int, demo_id: int = 0,
                render_noise: float = 1.0, **render_kw) -> Demonstration:
    """One recorded demonstration with its ground-truth deviation label."""
    rng = np.random.default_rng(seed)
    state = observe(spec, noise=render_noise, seed=int(rng.integers(2**31)), **render_kw)
    a = intended_action(spec)
    label = "clean"
    u = rng.random()
    if u < cfg.p_intent:
        label = "intention_deviation"
        xy = grasp_point(spec, toward_root=False)
        a = replace(a, p=np.array([xy[0], xy[1], _grasp_z(spec, xy)]))
    elif u < cfg.p_intent + cfg.p_exec:
        label = "execution_deviation"
        if rng.random() < cfg.exec_orientation_share:
            a = rotate_about_approach(a, cfg.yaw_error * rng.choice([-1.0, 1.0]))
        else:
            a = replace(a, spt=a.spt * cfg.spt_factor)
    noisy = a.as_array() + rng.normal(0.0, 1.0, 17) * np.asarray(cfg.noise)
    return Demonstration(state, ActionVector.from_array(noisy), demo_id, label)


def sample_scene(rng: np.random.Generator, area: float = 100.0) -> SceneSpec:
    """Random lettuce-like object at a random canonical placement."""
    A = rng.uniform(65.0, 105.0)
    H = rng.uniform(60.0, 110.0)
    return SceneSpec(
        center=(float(rng.uniform(-area, area)), float(rng.uniform(-area, area))),
        yaw=float(rng.uniform(-YAW_RANGE, YAW_RANGE)),
        half_lengths=(A, A * rng.uniform(0.5, 0.68)),
        peak_height=float(H),
        asymmetry=float(rng.choice([-1.0, 1.0]) * rng.uniform(0.15, 0.4)),
        # taller heads are firmer and take more pressure
        compliance=float(max(0.05, 0.1 + 0.2 * (H - 60.0) / 50.0 + rng.normal(0.0, 0.01))),
    )


def place(spec: SceneSpec, rng: np.random.Generator, area: float = 100.0) -> SceneSpec:
    """The same object at a new random position and orientation."""
    moved = replace(
        spec,
        center=(float(rng.uniform(-area, area)), float(rng.uniform(-area, area))),
        yaw=float(rng.uniform(-YAW_RANGE, YAW_RANGE)),
    )
    # either end may face forward
    if rng.random() < 0.5:
        moved = replace(moved, yaw=moved.yaw + math.pi)
    return moved.canonical()


def generate_dataset(n: int, cfg: TeacherConfig | None = None, seed: int = 0,
                     render_noise: float = 1.0, **render_kw) -> tuple[DemonstrationSet, list]:
    """``n`` demonstrations on independently sampled scenes; returns (set, specs)."""
    cfg = cfg or TeacherConfig()
    ss = np.random.SeedSequence(seed)
    demos, specs = [], []
    for i, child in enumerate(ss.spawn(n)):
        rng = np.random.default_rng(child)
        spec = sample_scene(rng)
        demos.append(demonstrate(spec, cfg, int(rng.integers(2**31)), i, render_noise, **render_kw))
        specs.append(spec)
    return DemonstrationSet.from_demos(demos), specs


# --------------------------------------------------------------------------
# augmentation


def flip_gripper(action) -> np.ndarray:
    """Rotate the gripper by pi about its approach axis: d2, d3 change sign."""
    a = np.array(action, dtype=float)
    a[6:12] *= -1.0
    return a


def augment(D: DemonstrationSet, copies: int, seed: int = 0, sigma: float = 25.0,
            flip_prob: float = 0.5) -> DemonstrationSet:
    """Originals followed by ``copies`` rigidly translated (and maybe flipped) copies each."""
    if copies < 0:
        raise ValueError("copies must be >= 0")
    if copies == 0:
        return D
    rng = np.random.default_rng(seed)
    states, actions, ids, labels = [D.states], [D.actions], [D.ids], list(D.labels)
    next_id = int(D.ids.max()) + 1 if len(D) else 0
    for i in range(len(D)):
        for _ in range(copies):
            delta = rng.normal(0.0, sigma, 3)
            s = D.states[i].copy()
            a = D.actions[i].copy()
            s[0:3] += delta
            a[0:3] += delta
            if rng.random() < flip_prob:
                a = flip_gripper(a)
            states.append(s[None])
            actions.append(a[None])
            ids.append(np.array([next_id]))
            labels.append(D.labels[i])
            next_id += 1
    return DemonstrationSet(np.vstack(states), np.vstack(actions), np.concatenate(ids), labels)


# --------------------------------------------------------------------------
# success oracle


@dataclass(frozen=True)
class Tolerances:
    position: float = 25.0
    orientation_deg: float = 20.0
    pressure_band: float = 0.4


SUCCESS = "none"


def grasp_success(spec: SceneSpec, a: ActionVector, tol: Tolerances = Tolerances()):
    """(success, reason) with reason in position/orientation/pressure_low/pressure_high/none."""
    if not isinstance(a, ActionVector) or not a.executable:
        raise ValidationError("grasp_success needs an executable (post-processed) action")
    check_executable(a)
    target = intended_action(spec)
    if np.linalg.norm(a.p - target.p) > tol.position:
        return False, "position"
    cosang = min(1.0, abs(float(np.dot(a.d2, target.d2))))
    if math.degrees(math.acos(cosang)) > tol.orientation_deg:
        return False, "orientation"
    local = local_pressure(spec, a.p)
    if np.any(a.spt < (1 - tol.pressure_band) * local):
        return False, "pressure_low"
    if np.any(a.spt > (1 + tol.pressure_band) * local):
        return False, "pressure_high"
    return True, SUCCESS


# --------------------------------------------------------------------------
# tactile traces


@dataclass(frozen=True)
class ContactModel:
    """Fingers touch at ``contact_step`` and load linearly at ``rate`` units/step."""

    contact_step: tuple = (3, 5, 4)
    rate: tuple = (2.0, 1.5, 2.5)
    pattern: tuple = field(default=(0.2, 0.5, 1.0, 0.9, 0.75, 0.6, 0.3, 0.1, 0.0))

    def pattern_mean(self) -> float:
        p = np.asarray(self.pattern)
        return float(p[p > 0.7 * p.max()].mean())

    def frame(self, step: int) -> np.ndarray:
        load = np.maximum(0.0, step - np.asarray(self.contact_step, float)) * np.asarray(self.rate)
        return load[:, None] * np.asarray(self.pattern)[None, :]

    def trace(self, n_steps: int):
        for t in range(n_steps):
            yield self.frame(t)

    def stop_step(self, targets) -> int:
        """First step where any finger's significant pressure reaches its target."""
        targets = np.asarray(targets, float)
        pm = self.pattern_mean()
        steps = np.asarray(self.contact_step) + np.ceil(targets / (np.asarray(self.rate) * pm))
        steps = np.where(targets <= 0, 0, steps)
        return int(steps.min())


def simulate_grip(a: ActionVector, model: ContactModel = ContactModel(), n_steps: int = 200):
    return grip_stop(a.spt, model.trace(n_steps))


def spec_to_dict(spec: SceneSpec) -> dict:
    d = asdict(spec)
    d["center"] = list(spec.center)
    d["half_lengths"] = list(spec.half_lengths)
    return d


def spec_from_dict(d) -> SceneSpec:
    return SceneSpec(
        center=tuple(d["center"]), yaw=float(d["yaw"]), half_lengths=tuple(d["half_lengths"]),
        peak_height=float(d["peak_height"]), asymmetry=float(d["asymmetry"]),
        compliance=float(d["compliance"]), area=float(d.get("area", GRASP_AREA)),
    )
