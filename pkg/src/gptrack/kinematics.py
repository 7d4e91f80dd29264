"""Curvilinear-motion ground truth and range-bearing measurement simulation.

Heading ``phi`` is measured from the +X axis, counter-clockwise, so positive
cross-track acceleration turns left. Bearings use ``atan2(xi, eta)``: the
angle from the +Y axis, clockwise positive, with the sensor at the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from gptrack.exceptions import ConfigError, InvalidStateError
from gptrack.rng import stream

STATE_FIELDS = ("xi", "eta", "v", "phi", "a_t", "a_n")
SCENARIOS = ("S1", "S2", "S3", "custom")

# Default noise levels and speed; all are configurable per scenario.
DEFAULT_SIGMA_R = 5.0
DEFAULT_SIGMA_BEARING = math.radians(0.5)
DEFAULT_Q = 1.0
DEFAULT_SPEED = 15.0
S2_ACCEL_LEVELS = (0.1, 1.0, 10.0)

TRAIN_REGION_S1 = (-50.0, 100.0, 0.0, 250.0)
TEST_REGION_S1 = (-300.0, 100.0, 0.0, 1200.0)


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class KinematicState:
    xi: float
    eta: float
    v: float
    phi: float
    a_t: float = 0.0
    a_n: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.xi, self.eta, self.v, self.phi, self.a_t, self.a_n])

    @classmethod
    def from_array(cls, row) -> "KinematicState":
        return cls(*(float(x) for x in row))

    def velocity_delta(self, dt: float = 1.0) -> np.ndarray:
        """Displacement per step at the current speed and heading."""
        return self.v * dt * np.array([math.cos(self.phi), math.sin(self.phi)])


@dataclass(frozen=True)
class Measurement:
    r: float
    bearing: float


@dataclass
class MeasurementSet:
    """Unordered detections at one time index.

    ``z`` is ``(n, 2)`` of ``(range, bearing)``; ``origin`` holds the target
    index of each row or -1 for clutter.
    """

    t: int
    z: np.ndarray
    origin: np.ndarray | None = None

    def __len__(self) -> int:
        return self.z.shape[0]

    def for_target(self, k: int) -> np.ndarray:
        """Rows generated by target ``k`` (empty when missed)."""
        if self.origin is None:
            raise ValueError("measurement set carries no origin labels")
        return self.z[self.origin == k]


@dataclass
class ScenarioSpec:
    """Everything needed to simulate one scenario deterministically.

    ``initial_states`` holds one state per target. For ``custom`` scenarios,
    ``schedule`` is a ``(T-1, 2)`` list of per-step ``(a_t, a_n)``.
    """

    scenario: str = "S1"
    T: int = 100
    dt: float = 1.0
    initial_states: list = field(default_factory=lambda: [KinematicState(0.0, 10.0, DEFAULT_SPEED, 0.0)])
    turn_rate_deg: float = 15.0
    switch_every: int = 10
    accel_levels: tuple = S2_ACCEL_LEVELS
    speed_bounds: tuple = (5.0, 30.0)
    schedule: list | None = None
    q_xi: float = DEFAULT_Q
    q_eta: float = DEFAULT_Q
    sigma_r: float = DEFAULT_SIGMA_R
    sigma_bearing: float = DEFAULT_SIGMA_BEARING
    p_d: float = 1.0
    lambda_fa: float = 0.0
    region: tuple = TEST_REGION_S1
    seed: int = 0

    def __post_init__(self):
        self.initial_states = [
            s if isinstance(s, KinematicState) else KinematicState(**s) if isinstance(s, dict)
            else KinematicState.from_array(s)
            for s in self.initial_states
        ]
        self.region = tuple(float(x) for x in self.region)
        self.accel_levels = tuple(float(x) for x in self.accel_levels)
        self.speed_bounds = tuple(float(x) for x in self.speed_bounds)
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario id {self.scenario!r}; expected one of {SCENARIOS}")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError("T must be a positive integer")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not 0 < self.p_d <= 1:
            raise ConfigError("p_d must lie in (0, 1]")
        if self.lambda_fa < 0:
            raise ConfigError("lambda_fa must be >= 0")
        if min(self.q_xi, self.q_eta, self.sigma_r, self.sigma_bearing) < 0:
            raise ConfigError("noise parameters must be >= 0")
        if len(self.region) != 4 or not (self.region[0] < self.region[1] and self.region[2] < self.region[3]):
            raise ConfigError("region must be (xmin, xmax, ymin, ymax) with min < max")
        if not self.initial_states:
            raise ConfigError("need at least one initial state")
        lo, hi = self.speed_bounds
        if self.scenario == "S2" and not (0 < lo < hi):
            raise ConfigError("speed_bounds must satisfy 0 < lo < hi")
        if self.scenario == "custom":
            if self.schedule is None or len(self.schedule) < self.T - 1:
                raise ConfigError("custom scenario needs a schedule with T-1 (a_t, a_n) rows")

    @property
    def K(self) -> int:
        return len(self.initial_states)

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.sigma_r**2, self.sigma_bearing**2])

    @property
    def Q(self) -> tuple[float, float]:
        return (self.q_xi, self.q_eta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_states"] = [asdict(s) for s in self.initial_states]
        d["region"] = list(self.region)
        d["accel_levels"] = list(self.accel_levels)
        d["speed_bounds"] = list(self.speed_bounds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        if "seed" not in data:
            raise ConfigError("scenario config must carry an explicit 'seed'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ScenarioSpec":
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        return cls.from_dict(data)

    def with_(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)


def _check_finite_state(*values):
    if not all(np.all(np.isfinite(v)) for v in values):
        raise InvalidStateError("state contains non-finite values")


def advance(xi, eta, v, phi, a_t, a_n, dt: float):
    """Vectorized curvilinear step with accelerations held over the step.

    The turn rate is fixed at ``a_n / v`` (start-of-step speed) while speed
    changes linearly, which admits the closed form used here. Returns
    ``(xi, eta, v, phi)`` after ``dt``.
    """
    xi, eta, v, phi, a_t, a_n = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (xi, eta, v, phi, a_t, a_n))
    )
    turning = a_n != 0.0
    if np.any(turning & (v <= 0.0)):
        raise InvalidStateError("speed must be > 0 when cross-track acceleration is nonzero")
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(turning, a_n / np.where(turning, v, 1.0), 0.0)
    phi_new = phi + omega * dt
    # Straight-line displacement, also the small-turn limit.
    s = v * dt + 0.5 * a_t * dt**2
    dx = s * np.cos(phi)
    dy = s * np.sin(phi)
    big = np.abs(omega * dt) > 1e-9
    if np.any(big):
        w = np.where(big, omega, 1.0)
        sp, cp = np.sin(phi), np.cos(phi)
        sn, cn = np.sin(phi_new), np.cos(phi_new)
        arc_x = v / w * (sn - sp) + a_t * (dt * sn / w + (cn - cp) / w**2)
        arc_y = v / w * (cp - cn) + a_t * (-dt * cn / w + (sn - sp) / w**2)
        dx = np.where(big, arc_x, dx)
        dy = np.where(big, arc_y, dy)
    return xi + dx, eta + dy, v + a_t * dt, wrap_angle(phi_new)


def step_curvilinear(state: KinematicState, dt: float) -> KinematicState:
    """Advance one state by ``dt`` seconds, accelerations carried unchanged."""
    _check_finite_state(*state.as_array(), dt)
    if not dt > 0:
        raise ValueError("dt must be > 0")
    xi, eta, v, phi = advance(state.xi, state.eta, state.v, state.phi, state.a_t, state.a_n, dt)
    return KinematicState(float(xi), float(eta), float(v), float(phi), state.a_t, state.a_n)


def _turn_an(speed: float, turn_rate_rad: float, sign: float) -> float:
    return sign * turn_rate_rad * speed


def generate_trajectory(spec: ScenarioSpec, target: int = 0) -> np.ndarray:
    """Ground truth for one target as a ``(T, 6)`` array of STATE_FIELDS.

    Row ``t`` carries the accelerations applied over the step ``t -> t+1``.
    Process noise ``N(0, diag(q_xi, q_eta))`` is added to each new position.
    """
    spec.validate()
    rng = stream(spec.seed, "truth", target)
    s0 = spec.initial_states[target]
    out = np.empty((spec.T, 6))
    xi, eta, v, phi = s0.xi, s0.eta, s0.v, wrap_angle(s0.phi)
    omega = math.radians(spec.turn_rate_deg)
    sq = (math.sqrt(spec.q_xi), math.sqrt(spec.q_eta))
    lo, hi = spec.speed_bounds
    for t in range(spec.T):
        if spec.scenario == "S1":
            sign = 1.0 if (t // spec.switch_every) % 2 == 0 else -1.0
            a_t, a_n = 0.0, _turn_an(v, omega, sign)
        elif spec.scenario == "S3":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            a_t, a_n = 0.0, _turn_an(v, omega, sign)
        elif spec.scenario == "S2":
            mags = rng.choice(spec.accel_levels, size=2)
            signs = np.where(rng.random(2) < 0.5, -1.0, 1.0)
            a_t, a_n = float(mags[0] * signs[0]), float(mags[1] * signs[1])
            if not lo <= v + a_t * spec.dt <= hi:
                a_t = -a_t
        else:
            if t < spec.T - 1:
                a_t, a_n = (float(x) for x in spec.schedule[t])
            else:
                a_t, a_n = 0.0, 0.0
        out[t] = (xi, eta, v, phi, a_t, a_n)
        if t == spec.T - 1:
            break
        _check_finite_state(xi, eta, v, phi, a_t, a_n)
        nxi, neta, v, phi = advance(xi, eta, v, phi, a_t, a_n, spec.dt)
        noise = rng.standard_normal(2)
        xi = float(nxi) + sq[0] * noise[0]
        eta = float(neta) + sq[1] * noise[1]
        v, phi = float(v), float(phi)
    return out


def generate_truth(spec: ScenarioSpec) -> np.ndarray:
    """Ground truth for every target, shape ``(K, T, 6)``."""
    return np.stack([generate_trajectory(spec, k) for k in range(spec.K)])


def h(positions) -> np.ndarray:
    """Noiseless range-bearing of ``(..., 2)`` positions."""
    p = np.asarray(positions, dtype=float)
    r = np.hypot(p[..., 0], p[..., 1])
    b = np.arctan2(p[..., 0], p[..., 1])
    return np.stack([r, b], axis=-1)


def to_cartesian(z) -> np.ndarray:
    """Invert ``h``: position whose noiseless measurement is ``z``."""
    z = np.asarray(z, dtype=float)
    return np.stack([z[..., 0] * np.sin(z[..., 1]), z[..., 0] * np.cos(z[..., 1])], axis=-1)


def _diag_std(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    var = np.diag(R) if R.ndim == 2 else R
    if var.shape != (2,) or np.any(var < 0):
        raise ValueError("R must be a non-negative diagonal 2x2 covariance (or its diagonal)")
    if R.ndim == 2 and np.any(R - np.diag(var)):
        raise ValueError("R must be diagonal")
    return np.sqrt(var)


def measure(state, R, rng: np.random.Generator | None = None) -> Measurement:
    """Noisy range-bearing measurement of a state or ``(xi, eta)`` pair."""
    pos = (state.xi, state.eta) if isinstance(state, KinematicState) else tuple(state)[:2]
    _check_finite_state(*pos)
    if pos[0] == 0.0 and pos[1] == 0.0:
        raise InvalidStateError("bearing is undefined for a target at the sensor origin")
    std = _diag_std(R)
    r, b = h(np.asarray(pos))
    if np.any(std > 0):
        if rng is None:
            raise ValueError("rng required for noisy measurements")
        e = rng.standard_normal(2) * std
        r, b = r + e[0], b + e[1]
    return Measurement(max(float(r), 0.0), wrap_angle(b))


def measurement_space(region) -> tuple[float, float, float, float]:
    """Range-bearing box ``(r_min, r_max, b_min, b_max)`` covering ``region``."""
    x0, x1, y0, y1 = region
    rx = np.clip(0.0, x0, x1)
    ry = np.clip(0.0, y0, y1)
    r_min = math.hypot(rx, ry)
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
    r_max = float(np.max(np.hypot(corners[:, 0], corners[:, 1])))
    # Branch cut of atan2(xi, eta) is the ray xi = 0, eta < 0.
    if x0 <= 0.0 <= x1 and y0 < 0.0:
        return r_min, r_max, -math.pi, math.pi
    n = 512
    u = np.linspace(0.0, 1.0, n)
    edges = np.concatenate([
        np.column_stack([x0 + (x1 - x0) * u, np.full(n, y0)]),
        np.column_stack([x0 + (x1 - x0) * u, np.full(n, y1)]),
        np.column_stack([np.full(n, x0), y0 + (y1 - y0) * u]),
        np.column_stack([np.full(n, x1), y0 + (y1 - y0) * u]),
    ])
    nz = np.hypot(edges[:, 0], edges[:, 1]) > 0
    b = np.arctan2(edges[nz, 0], edges[nz, 1])
    return r_min, r_max, float(b.min()), float(b.max())


def clutter_density(region) -> float:
    """Uniform clutter pdf over the region's range-bearing box."""
    r0, r1, b0, b1 = measurement_space(region)
    return 1.0 / ((r1 - r0) * (b1 - b0))


def generate_measurement_set(
    positions, spec: ScenarioSpec, rng: np.random.Generator, t: int = 0
) -> MeasurementSet:
    """Detections of ``(K, 2)`` target positions plus Poisson clutter, shuffled."""
    spec.validate()
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    R = spec.R
    rows, origin = [], []
    detected = rng.random(positions.shape[0]) < spec.p_d
    for k, pos in enumerate(positions):
        if detected[k]:
            m = measure(pos, R, rng)
            rows.append((m.r, m.bearing))
            origin.append(k)
    n_clutter = int(rng.poisson(spec.lambda_fa)) if spec.lambda_fa > 0 else 0
    if n_clutter:
        r0, r1, b0, b1 = measurement_space(spec.region)
        rows.extend(zip(rng.uniform(r0, r1, n_clutter), rng.uniform(b0, b1, n_clutter)))
        origin.extend([-1] * n_clutter)
    z = np.array(rows, dtype=float).reshape(-1, 2)
    origin = np.array(origin, dtype=int)
    perm = rng.permutation(len(origin))
    return MeasurementSet(t=t, z=z[perm], origin=origin[perm])


def simulate_measurements(truth: np.ndarray, spec: ScenarioSpec) -> list[MeasurementSet]:
    """Measurement sets for a ``(K, T, 6)`` (or ``(T, 6)``) truth array."""
    truth = truth[None] if truth.ndim == 2 else truth
    return [
        generate_measurement_set(truth[:, t, :2], spec, stream(spec.seed, "meas", t), t)
        for t in range(truth.shape[1])
    ]
