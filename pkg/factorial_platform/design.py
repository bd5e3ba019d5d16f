"""
Design core - treatment indexing and contrast algebra for 2^K experiments.

Treatment combinations are numbered lexicographically from (0 ... 0) -> 1 to
(1 ... 1) -> J, with the first factor most significant. Factorial effects are
ordered mean first, then main effects in factor order, then interactions
grouped by order and lexicographic within an order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence, Tuple

import numpy as np

from .errors import DesignError, InputError

MAX_FACTORS = 16

INTERACTION_SEPARATOR = "×"
_SEPARATOR_ALIASES = ("x", "X", "*", ":")


@dataclass(frozen=True)
class FactorialDesign:
    """
    A 2^K design over named two-level factors.

    Example:
        design = FactorialDesign(("R", "G", "I"))
        design.J                 # 8
        design.effect_labels     # ('R', 'G', 'I', 'R×G', 'R×I', 'G×I', 'R×G×I')
    """

    factor_names: Tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.factor_names)
        object.__setattr__(self, "factor_names", names)
        if not 1 <= len(names) <= MAX_FACTORS:
            raise DesignError(
                f"A design needs between 1 and {MAX_FACTORS} factors, got {len(names)}"
            )
        for name in names:
            if not isinstance(name, str) or not name.strip():
                raise DesignError(f"Factor names must be non-empty strings, got {name!r}")
        if len(set(names)) != len(names):
            raise DesignError(f"Factor names must be distinct, got {list(names)}")

    @classmethod
    def with_default_names(cls, k: int) -> "FactorialDesign":
        """Design with factors named A, B, C, ..."""
        if not 1 <= k <= MAX_FACTORS:
            raise DesignError(f"A design needs between 1 and {MAX_FACTORS} factors, got {k}")
        return cls(tuple(chr(ord("A") + i) for i in range(k)))

    @property
    def K(self) -> int:
        return len(self.factor_names)

    @property
    def J(self) -> int:
        return 2 ** self.K

    @cached_property
    def effect_subsets(self) -> Tuple[Tuple[int, ...], ...]:
        """Factor-index subsets of every non-mean effect, in effect order."""
        subsets = []
        for order in range(1, self.K + 1):
            subsets.extend(itertools.combinations(range(self.K), order))
        return tuple(subsets)

    @cached_property
    def effect_labels(self) -> Tuple[str, ...]:
        return tuple(
            INTERACTION_SEPARATOR.join(self.factor_names[k] for k in subset)
            for subset in self.effect_subsets
        )

    def effect_index(self, label: str) -> int:
        """
        Map an effect label to its index ℓ in 1..J-1.

        Interactions may be written with any of ``×``, ``x``, ``*`` or ``:``
        between factor names, in any factor order.
        """
        candidates = [[label.strip()]]
        for separator in (INTERACTION_SEPARATOR,) + _SEPARATOR_ALIASES:
            if separator in label:
                candidates.append([part.strip() for part in label.split(separator)])
        for parts in candidates:
            if all(part in self.factor_names for part in parts):
                subset = tuple(sorted(self.factor_names.index(part) for part in parts))
                if len(set(subset)) != len(subset):
                    raise InputError(f"Effect '{label}' repeats a factor")
                return self.effect_subsets.index(subset) + 1
        raise InputError(
            f"Unknown effect '{label}'. Known effects: {', '.join(self.effect_labels)}"
        )


@dataclass(frozen=True)
class ContrastMatrix:
    """
    The J×J contrast matrix L.

    Column 0 is the all-ones mean column; column ℓ holds the contrast vector
    λ_ℓ of effect ℓ. Entries are stored as read-only int8.
    """

    design: FactorialDesign
    entries: np.ndarray

    @property
    def column_labels(self) -> Tuple[str, ...]:
        return ("mean",) + self.design.effect_labels

    @property
    def effects(self) -> np.ndarray:
        """The J×(J-1) block of effect columns as int64."""
        return self.entries[:, 1:].astype(np.int64)

    def column(self, label: str) -> np.ndarray:
        if label == "mean":
            return self.entries[:, 0].astype(np.int64)
        return self.entries[:, self.design.effect_index(label)].astype(np.int64)

    def as_int(self) -> np.ndarray:
        return self.entries.astype(np.int64)


def _check_binary(values: Sequence, what: str) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim != 1:
        raise InputError(f"{what} must be a one-dimensional vector")
    if not np.all((array == 0) | (array == 1)):
        raise InputError(f"{what} must contain only 0 and 1, got {array.tolist()}")
    return array.astype(np.int64)


def treatment_index(design: FactorialDesign, levels: Sequence[int]) -> int:
    """Lexicographic treatment index in 1..J of a 0/1 level vector."""
    levels = _check_binary(levels, "Factor levels")
    if levels.size != design.K:
        raise InputError(f"Expected {design.K} factor levels, got {levels.size}")
    index = 0
    for level in levels:
        index = 2 * index + int(level)
    return index + 1


def treatment_levels(design: FactorialDesign, index: int) -> Tuple[int, ...]:
    """Inverse of :func:`treatment_index`."""
    if not 1 <= int(index) <= design.J:
        raise InputError(f"Treatment index must be in 1..{design.J}, got {index}")
    value = int(index) - 1
    return tuple((value >> (design.K - 1 - k)) & 1 for k in range(design.K))


def level_string(design: FactorialDesign, index: int) -> str:
    return "".join(str(level) for level in treatment_levels(design, index))


def describe_treatment(design: FactorialDesign, index: int) -> str:
    """Human-readable treatment reference such as ``j=3 (010)``."""
    return f"j={index} ({level_string(design, index)})"


@lru_cache(maxsize=None)
def build_contrast_matrix(design: FactorialDesign) -> ContrastMatrix:
    """
    Build L for a design.

    Main-effect entries are λ_{k,j} = 2 z_{j,k} - 1; an interaction column is
    the element-wise product of its main-effect columns.
    """
    levels = np.array(
        [treatment_levels(design, j) for j in range(1, design.J + 1)], dtype=np.int8
    )
    mains = 2 * levels - 1
    columns = [np.ones(design.J, dtype=np.int8)]
    for subset in design.effect_subsets:
        columns.append(np.prod(mains[:, list(subset)], axis=1, dtype=np.int8))
    entries = np.column_stack(columns).astype(np.int8)
    entries.setflags(write=False)
    return ContrastMatrix(design=design, entries=entries)


def unit_effects(row: Sequence[int], L: ContrastMatrix) -> np.ndarray:
    """
    Unit-level effect vector (2τ_{i,0}, τ_{i,1}, ..., τ_{i,J-1}) = 2^{-(K-1)} Lᵀ Y_i.

    The integer product is formed first, so the division by a power of two is exact.
    """
    row = _check_binary(row, "Potential outcomes")
    if row.size != L.design.J:
        raise InputError(f"Expected {L.design.J} potential outcomes, got {row.size}")
    return (L.as_int().T @ row) / 2 ** (L.design.K - 1)


def outcomes_from_effects(effects: Sequence[float], L: ContrastMatrix) -> np.ndarray:
    """Inverse of :func:`unit_effects`: Y = L τ / 2."""
    effects = np.asarray(effects, dtype=float)
    return L.as_int() @ effects / 2
