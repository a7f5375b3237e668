"""Market data model: instances, outcomes, solver configuration, generation, I/O.

A market instance is n bidders competing for m divisible goods sold through
independent first-price auctions. Bidder i has value v[i, j] >= 0 for good j
and a hard budget b[i] > 0 across all goods.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

STEP_RULES = ("fixed", "diminishing", "adaptive")


def _frozen_array(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarketInstance:
    """Immutable market: values is an (n, m) matrix, budgets a length-n vector.

    Instances are safe to share across threads; the arrays are marked
    read-only on construction.
    """

    values: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(np.atleast_2d(self.values)))
        object.__setattr__(self, "budgets", _frozen_array(np.atleast_1d(self.budgets)))

    @property
    def num_bidders(self) -> int:
        return self.values.shape[0]

    @property
    def num_goods(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarketInstance):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.budgets, other.budgets)
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.budgets.tobytes()))


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the pacing solver.

    tol_kkt is the absolute convergence tolerance on the max stationarity
    residual; tie_epsilon is the relative slack used to detect tied bids.
    """

    max_iters: int = 200_000
    step_rule: str = "adaptive"
    tol_kkt: float = 1e-6
    tie_epsilon: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.tol_kkt <= 0:
            raise ValueError("tol_kkt must be positive")
        if self.tie_epsilon <= 0:
            raise ValueError("tie_epsilon must be positive")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class PacingOutcome:
    """A candidate market outcome: multipliers, allocation, prices, and the
    per-bidder spend/utility implied by them."""

    alpha: np.ndarray
    allocation: np.ndarray
    prices: np.ndarray
    spend: np.ndarray
    utility: np.ndarray

    @classmethod
    def from_allocation(cls, inst: MarketInstance, alpha, allocation, prices) -> "PacingOutcome":
        """Build an outcome with spend and utility derived from (x, p, v)."""
        alpha = np.asarray(alpha, dtype=float)
        x = np.asarray(allocation, dtype=float)
        p = np.asarray(prices, dtype=float)
        spend = x @ p
        utility = np.sum(x * (inst.values - p[None, :]), axis=1)
        return cls(alpha=alpha, allocation=x, prices=p, spend=spend, utility=utility)


def validate_instance(inst: MarketInstance) -> list[str]:
    """Report-style validation; returns one message per violated invariant."""
    violations = []
    v, b = inst.values, inst.budgets
    if v.ndim != 2:
        violations.append(f"values must be a 2-d matrix, got ndim={v.ndim}")
        return violations
    n, m = v.shape
    if n < 1 or m < 1:
        violations.append(f"values must be nonempty, got shape {v.shape}")
    if b.shape != (n,):
        violations.append(
            f"budgets length {b.shape[0] if b.ndim == 1 else b.shape} "
            f"does not match {n} bidders"
        )
        return violations
    bad_v = np.argwhere(~np.isfinite(v) | (v < 0))
    for i, j in bad_v:
        violations.append(f"values[{i}][{j}] must be a finite nonnegative real, got {v[i, j]}")
    bad_b = np.argwhere(~np.isfinite(b) | (b <= 0)).ravel()
    for i in bad_b:
        violations.append(f"budgets[{i}] must be strictly positive, got {b[i]}")
    return violations


def generate_complete_graph(
    n: int, m: int, seed: int, budget_scale: float = 0.5
) -> MarketInstance:
    """Random dense instance: every bidder values every good.

    Values are i.i.d. Uniform(0, 1). Budgets are Uniform(0, 1) scaled by
    budget_scale * m / n so that, at the default scale, most bidders end up
    budget constrained. Deterministic for a fixed (n, m, seed, budget_scale).
    """
    if n < 1 or m < 1:
        raise ValueError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    if budget_scale <= 0:
        raise ValueError(f"budget_scale must be positive, got {budget_scale}")
    rng = np.random.default_rng(seed)
    values = rng.random((n, m))
    budgets = rng.random(n) * (budget_scale * m / n)
    return MarketInstance(values=values, budgets=budgets)


def save_instance(inst: MarketInstance, path) -> None:
    """Write the {"values": ..., "budgets": ...} JSON document.

    Floats are emitted with repr precision, so save/load round-trips exactly.
    """
    doc = {
        "values": [[float(x) for x in row] for row in inst.values],
        "budgets": [float(x) for x in inst.budgets],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


class InstanceFormatError(ValueError):
    """Raised when an instance file is malformed or violates model invariants."""


def load_instance(path) -> MarketInstance:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InstanceFormatError(f"{path}: top level must be an object")
    for key in ("values", "budgets"):
        if key not in doc:
            raise InstanceFormatError(f"{path}: missing field '{key}'")
    values = doc["values"]
    if not isinstance(values, list) or not values or not all(isinstance(r, list) for r in values):
        raise InstanceFormatError(f"{path}: field 'values' must be a nonempty list of rows")
    row_lens = {len(r) for r in values}
    if len(row_lens) != 1 or 0 in row_lens:
        raise InstanceFormatError(f"{path}: field 'values' rows have inconsistent lengths {sorted(row_lens)}")
    budgets = doc["budgets"]
    if not isinstance(budgets, list):
        raise InstanceFormatError(f"{path}: field 'budgets' must be a list")
    if len(budgets) != len(values):
        raise InstanceFormatError(
            f"{path}: field 'budgets' has {len(budgets)} entries for {len(values)} bidders"
        )
    try:
        inst = MarketInstance(values=np.array(values, dtype=float), budgets=np.array(budgets, dtype=float))
    except (TypeError, ValueError) as exc:
        raise InstanceFormatError(f"{path}: non-numeric entry ({exc})") from exc
    violations = validate_instance(inst)
    if violations:
        raise InstanceFormatError(f"{path}: " + "; ".join(violations))
    return inst
