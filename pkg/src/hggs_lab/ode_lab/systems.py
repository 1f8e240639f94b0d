"""Biological oscillator definitions: coefficient boxes, initial states, RHS kernels.

State vectors always put the observed species <X> first. Cell Cycle carries the
volume V as its last state component.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np


class SystemId(str, enum.Enum):
    BRUSSELATOR = "brusselator"
    CELL_CYCLE = "cell_cycle"
    MPF = "mpf"
    ACTIVATOR_INHIBITOR = "activator_inhibitor"


class NumericDomainError(ArithmeticError):
    """A right-hand side or state left the finite reals."""


@dataclass(frozen=True)
class SystemSpec:
    system_id: SystemId
    code: int
    coeff_lo: tuple[float, ...]
    coeff_hi: tuple[float, ...]
    initial_state: tuple[float, ...]
    t_end: float
    state_names: tuple[str, ...]
    observed_index: int = 0
    # integrator used when the config does not force one
    preferred_method: str = "dopri5"
    # unbounded state growth makes longer horizons meaningless
    allow_horizon_extension: bool = True

    def __post_init__(self):
        if len(self.coeff_lo) != len(self.coeff_hi):
            raise ValueError("coefficient bounds differ in length")
        if any(lo >= hi for lo, hi in zip(self.coeff_lo, self.coeff_hi)):
            raise ValueError("each coefficient interval needs lo < hi")
        if len(self.initial_state) != len(self.state_names):
            raise ValueError("initial state does not match state names")
        if not np.all(np.isfinite(self.initial_state)) or self.t_end <= 0:
            raise ValueError("initial state must be finite and t_end positive")

    @property
    def coeff_dim(self) -> int:
        return len(self.coeff_lo)

    @property
    def state_dim(self) -> int:
        return len(self.initial_state)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.coeff_lo, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.coeff_hi, dtype=float)

    def contains(self, coeffs) -> np.ndarray:
        """Componentwise box membership; works on a single vector or a batch."""
        c = np.asarray(coeffs, dtype=float)
        return np.all((c >= self.lo) & (c <= self.hi), axis=-1)

    def normalize(self, coeffs) -> np.ndarray:
        """Min-max map of model-unit coefficients onto the unit box."""
        return (np.asarray(coeffs, dtype=float) - self.lo) / (self.hi - self.lo)

    def denormalize(self, unit) -> np.ndarray:
        return self.lo + np.asarray(unit, dtype=float) * (self.hi - self.lo)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


BRUSSELATOR = SystemSpec(
    SystemId.BRUSSELATOR, 0,
    coeff_lo=(0.0, 0.0), coeff_hi=(5.0, 15.0),
    initial_state=(10.0, 10.0), t_end=500.0,
    state_names=("X", "Y"),
)

CELL_CYCLE = SystemSpec(
    SystemId.CELL_CYCLE, 1,
    coeff_lo=(0.0,) * 6, coeff_hi=(15.3, 0.4, 13.5, 0.2, 13.5, 1.0),
    initial_state=(320.0, 100.0, 100.0, 200.0, 30.0), t_end=1000.0,
    state_names=("X", "Y_T", "Y", "Z", "V"),
    preferred_method="lsoda",
    allow_horizon_extension=False,
)

MPF = SystemSpec(
    SystemId.MPF, 2,
    coeff_lo=(0.0,) * 6, coeff_hi=(0.1, 0.1, 0.4, 15.0, 1.0, 10.0),
    initial_state=(0.03657, 0.36615), t_end=1000.0,
    state_names=("X", "Y"),
)

ACTIVATOR_INHIBITOR = SystemSpec(
    SystemId.ACTIVATOR_INHIBITOR, 3,
    coeff_lo=(0.0,) * 6, coeff_hi=(28.0, 1.0, 1.0, 10.0, 50.0, 10.0),
    initial_state=(1.0, 4.0), t_end=5000.0,
    state_names=("X", "Y"),
)

SYSTEMS: dict[SystemId, SystemSpec] = {
    s.system_id: s for s in (BRUSSELATOR, CELL_CYCLE, MPF, ACTIVATOR_INHIBITOR)
}

_ALIASES = {
    "brusselator": SystemId.BRUSSELATOR,
    "cell_cycle": SystemId.CELL_CYCLE,
    "cellcycle": SystemId.CELL_CYCLE,
    "mpf": SystemId.MPF,
    "activator_inhibitor": SystemId.ACTIVATOR_INHIBITOR,
    "activatorinhibitor": SystemId.ACTIVATOR_INHIBITOR,
}


def get_system(name: str | SystemId) -> SystemSpec:
    if isinstance(name, SystemId):
        return SYSTEMS[name]
    key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
    if key not in _ALIASES:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(s.value for s in SystemId)}")
    return SYSTEMS[_ALIASES[key]]


@numba.njit(cache=True)
def rhs_kernel(code, u, p, out):
    """Write du/dt into ``out``. ``code`` selects the system."""
    if code == 0:
        x, y = u[0], u[1]
        x2y = x * x * y
        out[0] = p[0] - (p[1] + 1.0) * x + x2y
        out[1] = p[1] * x - x2y
    elif code == 1:
        x, yt, y, z, v = u[0], u[1], u[2], u[3], u[4]
        out[4] = 0.006 * v
        out[0] = p[0] * (1.04 * v / 3.5) * v - p[1] * x - 0.00741 * x * y / v
        out[1] = p[2] * (7.0 / 3.5) * v - p[3] * yt
        out[2] = (p[2] * (7.0 / 3.5) * v - p[3] * y
                  + (29.7 * v + 7.5 * z) * (yt - y) / (5.4 * v + yt - y)
                  - 1.88 * x * y / (5.4 * v + y))
        mv = 756.0 * v
        out[3] = p[4] * ((0.001 + 10.0 * x * x / (mv * mv + x * x)) / 0.15) * v - p[5] * z
    elif code == 2:
        x, y = u[0], u[1]
        g = 1.0 + p[4] / p[5]
        x2 = x * x
        out[0] = p[0] / g - (p[1] + 10.0 * x2 + p[3]) * x + (p[2] + 100.0 * x2) * (y / g - x)
        out[1] = p[0] - (p[1] + 10.0 * x2) * y
    else:
        x, y = u[0], u[1]
        x2 = x * x
        out[0] = (p[3] + p[4] * x2) / (1.0 + x2 + p[5] * y) - x
        out[1] = p[2] * (p[0] * x + p[1] - y)


def rhs_eval(spec: SystemSpec, state, coeffs) -> np.ndarray:
    """du/dt for ``spec`` at ``state`` with coefficients ``coeffs``."""
    u = np.asarray(state, dtype=float)
    p = np.asarray(coeffs, dtype=float)
    if u.shape != (spec.state_dim,) or p.shape != (spec.coeff_dim,):
        raise ValueError(
            f"{spec.system_id.value} expects state of length {spec.state_dim} "
            f"and coefficients of length {spec.coeff_dim}"
        )
    if not np.all(np.isfinite(u)):
        raise NumericDomainError("state is not finite")
    if spec.system_id is SystemId.MPF and p[5] == 0.0:
        raise ZeroDivisionError("MPF ratio G = 1 + l5/l6 is undefined for l6 = 0")
    out = np.empty_like(u)
    with np.errstate(all="ignore"):
        rhs_kernel(spec.code, u, p, out)
    if not np.all(np.isfinite(out)):
        raise NumericDomainError(f"non-finite derivative {out!r}")
    return out
