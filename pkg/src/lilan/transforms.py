"""Input/target/time rescalings fitted on a training dataset.

ODE pipeline: states are log10-scaled (floored away from zero), encoder
inputs are min-max scaled per component to [-1, 1], and time is
log10-scaled then mapped affinely to [0, 1].  PDE pipeline: states pass
through unchanged and time is mapped affinely to [0, 1].  The
"identity" kind leaves everything untouched (used by analytically
constructed models).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import TransformDomainError, UnfittedTransformError

STATE_FLOOR_DEFAULT = 1e-30


@dataclass
class TransformSpec:
    kind: str = "identity"  # "ode" | "pde" | "identity"
    state_log10: bool = False
    state_floor: float | None = STATE_FLOOR_DEFAULT
    time_log10: bool = False
    time_lo: float = 0.0
    time_hi: float = 1.0
    input_lo: np.ndarray | None = None  # per-component over [x0 | p]
    input_hi: np.ndarray | None = None
    fitted: bool = False

    def _require_fitted(self):
        if not self.fitted:
            raise UnfittedTransformError("transforms must be fitted before use")

    # -- states ------------------------------------------------------------

    def apply_states(self, x: np.ndarray) -> np.ndarray:
        self._require_fitted()
        x = np.asarray(x, dtype=float)
        if not self.state_log10:
            return x.copy()
        if self.state_floor is None:
            if np.any(x <= 0):
                idx = np.argwhere(x <= 0)[0]
                raise TransformDomainError(
                    f"non-positive state at index {tuple(idx)} cannot be log10-scaled "
                    "(no floor configured)"
                )
            return np.log10(x)
        return np.log10(np.maximum(x, self.state_floor))

    def invert_states(self, x: np.ndarray) -> np.ndarray:
        self._require_fitted()
        x = np.asarray(x, dtype=float)
        if not self.state_log10:
            return x.copy()
        return np.power(10.0, x)

    # -- encoder inputs ----------------------------------------------------

    def apply_inputs(self, xp: np.ndarray) -> np.ndarray:
        """Min-max scale a [x0 | p] block to [-1, 1] per component.

        Constant components map to 0 and invert back to their value.
        """
        self._require_fitted()
        xp = np.asarray(xp, dtype=float)
        if self.input_lo is None:
            return xp.copy()
        lo, hi = self.input_lo, self.input_hi
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (xp - lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def invert_inputs(self, v: np.ndarray) -> np.ndarray:
        self._require_fitted()
        v = np.asarray(v, dtype=float)
        if self.input_lo is None:
            return v.copy()
        lo, hi = self.input_lo, self.input_hi
        span = hi - lo
        out = lo + (v + 1.0) * span / 2.0
        return np.where(span > 0, out, lo)

    # -- time ----------------------------------------------------------------

    def apply_time(self, t) -> np.ndarray:
        self._require_fitted()
        t = np.asarray(t, dtype=float)
        if self.kind == "identity":
            return t.copy()
        if self.time_log10:
            if np.any(t <= 0):
                raise TransformDomainError("log10 time transform needs t > 0")
            lo, hi = np.log10(self.time_lo), np.log10(self.time_hi)
            return (np.log10(t) - lo) / (hi - lo)
        return (t - self.time_lo) / (self.time_hi - self.time_lo)

    def invert_time(self, s) -> np.ndarray:
        self._require_fitted()
        s = np.asarray(s, dtype=float)
        if self.kind == "identity":
            return s.copy()
        if self.time_log10:
            lo, hi = np.log10(self.time_lo), np.log10(self.time_hi)
            return np.power(10.0, lo + s * (hi - lo))
        return self.time_lo + s * (self.time_hi - self.time_lo)

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "state_log10": self.state_log10,
            "state_floor": self.state_floor,
            "time_log10": self.time_log10,
            "time_lo": self.time_lo,
            "time_hi": self.time_hi,
            "input_lo": None if self.input_lo is None else self.input_lo.tolist(),
            "input_hi": None if self.input_hi is None else self.input_hi.tolist(),
            "fitted": self.fitted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(
            kind=d["kind"],
            state_log10=d["state_log10"],
            state_floor=d["state_floor"],
            time_log10=d["time_log10"],
            time_lo=d["time_lo"],
            time_hi=d["time_hi"],
            input_lo=None if d["input_lo"] is None else np.asarray(d["input_lo"], dtype=float),
            input_hi=None if d["input_hi"] is None else np.asarray(d["input_hi"], dtype=float),
            fitted=d["fitted"],
        )


def identity_transforms() -> TransformSpec:
    return TransformSpec(kind="identity", state_log10=False, time_log10=False, fitted=True)


def fit_transforms(dataset, kind: str | None = None, state_floor=STATE_FLOOR_DEFAULT) -> TransformSpec:
    """Fit the problem-appropriate transform pipeline on a dataset.

    `kind` defaults to the dataset's problem kind ("ode" or "pde").
    """
    if kind is None:
        kind = dataset.problem_kind
    times = np.asarray(dataset.times, dtype=float)
    if kind == "ode":
        spec = TransformSpec(
            kind="ode",
            state_log10=True,
            state_floor=state_floor,
            time_log10=True,
            time_lo=float(times[0]),
            time_hi=float(times[-1]),
        )
    elif kind == "pde":
        spec = TransformSpec(
            kind="pde",
            state_log10=False,
            state_floor=None,
            time_log10=False,
            time_lo=float(times[0]),
            time_hi=float(times[-1]),
        )
    else:
        raise ValueError(f"unknown transform kind {kind!r}")
    xp = np.concatenate([dataset.x0, dataset.params], axis=1)
    if kind == "ode":
        spec.input_lo = xp.min(axis=0)
        spec.input_hi = xp.max(axis=0)
    spec.fitted = True
    return spec
