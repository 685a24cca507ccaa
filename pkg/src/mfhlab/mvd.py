"""Synthetic two-modality Gaussian data with controllable feature overlap.

A decisive vector ``x* ~ N(0, I_d)`` fixes the label through a hyperplane
``delta``.  Modality ``a`` is ambient Gaussian noise of width ``d1`` with the
coordinates ``j1`` of ``x*`` copied into the same positions; modality ``b``
likewise with ``j2``.  Channels in ``j1 & j2`` are modality-general decisive,
the rest of ``j1`` (resp. ``j2``) are modality-specific decisive, everything
else is noise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .seeding import SeedLike, as_generator

GENERAL = "general-decisive"
SPECIFIC = "specific-decisive"
NOISE = "noise"
ROLES = (GENERAL, SPECIFIC, NOISE)

GAMMA_OVERLAPS = (0, 2, 4, 6, 8, 10)
ALPHA_TOTALS = (10, 20, 30, 40, 50)
# Size of the decisive vector behind the nested "table2" recipe; gammas of
# 1/4, 1/3, 1/2, 2/3 and 3/4 are all multiples of 1/12.
TABLE2_D_TOTAL = 12


def _index_tuple(idx, d: int, name: str) -> tuple[int, ...]:
    out = tuple(int(i) for i in idx)
    if len(set(out)) != len(out):
        raise ValueError(f"{name} contains duplicate indices")
    if any(i < 0 or i >= d for i in out):
        raise ValueError(f"{name} must be a subset of range({d})")
    return tuple(sorted(out))


@dataclass(frozen=True, eq=False)
class MvdSpec:
    """Generative blueprint for one synthetic task."""

    d1: int
    d2: int
    d: int
    j1: tuple[int, ...]
    j2: tuple[int, ...]
    delta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if min(self.d1, self.d2, self.d) < 1:
            raise ValueError("dimensions must be positive")
        if self.d > self.d1 or self.d > self.d2:
            raise ValueError(f"d={self.d} must not exceed d1={self.d1} or d2={self.d2}")
        object.__setattr__(self, "j1", _index_tuple(self.j1, self.d, "j1"))
        object.__setattr__(self, "j2", _index_tuple(self.j2, self.d, "j2"))
        delta = np.array(self.delta, dtype=float).reshape(-1)
        if delta.shape != (self.d,):
            raise ValueError(f"delta must have length {self.d}")
        if not np.all(np.isfinite(delta)) or not np.any(delta != 0):
            raise ValueError("delta must be finite with at least one nonzero entry")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    @property
    def general(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.j1) & set(self.j2)))

    @property
    def gamma(self) -> Fraction:
        return gamma_of(self)

    @property
    def alpha(self) -> Fraction:
        return alpha_of(self)

    @property
    def beta(self) -> Fraction:
        return beta_of(self)

    def roles(self, modality: str) -> tuple[str, ...]:
        """Ground-truth role of every channel of modality ``'a'`` or ``'b'``."""
        if modality == "a":
            width, own, other = self.d1, set(self.j1), set(self.j2)
        elif modality == "b":
            width, own, other = self.d2, set(self.j2), set(self.j1)
        else:
            raise ValueError(f"unknown modality {modality!r}")
        tags = []
        for j in range(width):
            if j in own and j in other:
                tags.append(GENERAL)
            elif j in own:
                tags.append(SPECIFIC)
            else:
                tags.append(NOISE)
        return tuple(tags)


def _union_size(spec: MvdSpec) -> int:
    size = len(set(spec.j1) | set(spec.j2))
    if size == 0:
        raise ValueError("no decisive features in either modality")
    return size


def gamma_of(spec: MvdSpec) -> Fraction:
    """Share of decisive features seen by both modalities."""
    return Fraction(len(spec.general), _union_size(spec))


def alpha_of(spec: MvdSpec) -> Fraction:
    """Share of decisive features seen only by modality a."""
    return 1 - Fraction(len(spec.j2), _union_size(spec))


def beta_of(spec: MvdSpec) -> Fraction:
    """Share of decisive features seen only by modality b."""
    return 1 - Fraction(len(spec.j1), _union_size(spec))


def build_gamma_point(overlap: int, rng: SeedLike = None) -> MvdSpec:
    """Gamma-sweep grid: d1=25, d2=50, d=20, |J1|=|J2|=10, |J1 & J2|=overlap.

    J1 = {0..9}; J2 = {10-overlap .. 19-overlap}.  Decisive coordinates outside
    J1 | J2 still drive the label and act as irreducible noise.
    """
    if overlap not in GAMMA_OVERLAPS:
        raise ValueError(f"overlap must be one of {GAMMA_OVERLAPS}, got {overlap}")
    gen = as_generator(rng)
    return MvdSpec(
        d1=25, d2=50, d=20,
        j1=tuple(range(10)),
        j2=tuple(range(10 - overlap, 20 - overlap)),
        delta=gen.standard_normal(20),
    )


def build_nested_point(n_general: int, d_total: int, rng: SeedLike = None,
                       d1: int = 50, d2: int = 50) -> MvdSpec:
    """Modality a holds every decisive feature, modality b only the first few.

    J1 = {0..d_total-1}, J2 = {0..n_general-1}, so beta = 0 and
    gamma = n_general / d_total.
    """
    if not 0 < n_general <= d_total:
        raise ValueError("need 0 < n_general <= d_total")
    gen = as_generator(rng)
    return MvdSpec(
        d1=d1, d2=d2, d=d_total,
        j1=tuple(range(d_total)),
        j2=tuple(range(n_general)),
        delta=gen.standard_normal(d_total),
    )


def build_alpha_point(d_total: int, rng: SeedLike = None) -> MvdSpec:
    """Alpha-sweep grid: d1=d2=50, |J2|=10 inside J1={0..d_total-1}."""
    if d_total not in ALPHA_TOTALS:
        raise ValueError(f"d_total must be one of {ALPHA_TOTALS}, got {d_total}")
    return build_nested_point(10, d_total, rng)


def table2_general_count(gamma: float | Fraction) -> int:
    """Number of general channels out of 12 decisive ones for a target gamma.

    Accepts two-decimal roundings such as 0.33 or 0.66.
    """
    target = Fraction(gamma).limit_denominator(1000) if isinstance(gamma, float) else Fraction(gamma)
    k = round(target * TABLE2_D_TOTAL)
    if k < 1 or k > TABLE2_D_TOTAL or abs(Fraction(k, TABLE2_D_TOTAL) - target) > Fraction(1, 100):
        raise ValueError(f"gamma={gamma} is not a multiple of 1/{TABLE2_D_TOTAL}")
    return k


def build_table2_point(gamma: float | Fraction, rng: SeedLike = None) -> MvdSpec:
    """Nested 12-feature recipe hitting ``gamma`` exactly (d1=d2=50)."""
    return build_nested_point(table2_general_count(gamma), TABLE2_D_TOTAL, rng)


@dataclass(frozen=True, eq=False)
class MultimodalDataset:
    xa: np.ndarray
    xb: np.ndarray
    y: np.ndarray
    roles_a: tuple[str, ...]
    roles_b: tuple[str, ...]
    spec: MvdSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.y)
        if self.xa.ndim != 2 or self.xb.ndim != 2:
            raise ValueError("xa and xb must be 2-D")
        if self.xa.shape[0] != n or self.xb.shape[0] != n:
            raise ValueError("row counts of xa, xb and y disagree")
        if len(self.roles_a) != self.xa.shape[1] or len(self.roles_b) != self.xb.shape[1]:
            raise ValueError("role vectors must match channel counts")
        for r in (*self.roles_a, *self.roles_b):
            if r not in ROLES:
                raise ValueError(f"unknown role {r!r}")
        if self.roles_a.count(GENERAL) != self.roles_b.count(GENERAL):
            raise ValueError("general-decisive channel counts differ between modalities")
        object.__setattr__(self, "roles_a", tuple(self.roles_a))
        object.__setattr__(self, "roles_b", tuple(self.roles_b))

    @property
    def n(self) -> int:
        return len(self.y)

    def view(self, modality: str) -> np.ndarray:
        """Input matrix for ``'a'``, ``'b'`` or the concatenation ``'ab'``."""
        if modality == "a":
            return self.xa
        if modality == "b":
            return self.xb
        if modality == "ab":
            return np.hstack([self.xa, self.xb])
        raise ValueError(f"unknown modality {modality!r}")

    def roles(self, modality: str) -> tuple[str, ...]:
        if modality == "a":
            return self.roles_a
        if modality == "b":
            return self.roles_b
        if modality == "ab":
            return self.roles_a + self.roles_b
        raise ValueError(f"unknown modality {modality!r}")


def sample(spec: MvdSpec, n: int, rng: SeedLike = None) -> MultimodalDataset:
    """Draw ``n`` paired samples.  Ties on the hyperplane are labelled 0.

    Draw order (x*, then xa, then xb) is part of the contract: tests
    regenerate x* from the same stream.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = as_generator(rng)
    x_star = gen.standard_normal((n, spec.d))
    y = (x_star @ spec.delta > 0).astype(np.int64)
    xa = gen.standard_normal((n, spec.d1))
    xb = gen.standard_normal((n, spec.d2))
    j1, j2 = list(spec.j1), list(spec.j2)
    xa[:, j1] = x_star[:, j1]
    xb[:, j2] = x_star[:, j2]
    return MultimodalDataset(xa, xb, y, spec.roles("a"), spec.roles("b"), spec)


def save_dataset(data: MultimodalDataset, path, roles_path=None) -> None:
    """CSV with ``sample_id, y, a_*, b_*`` plus a ``modality, channel, role`` sidecar."""
    path = Path(path)
    d1, d2 = data.xa.shape[1], data.xb.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "y"] + [f"a_{j}" for j in range(d1)] + [f"b_{j}" for j in range(d2)])
        for i in range(data.n):
            w.writerow([i, int(data.y[i])] + [repr(float(v)) for v in data.xa[i]]
                       + [repr(float(v)) for v in data.xb[i]])
    if roles_path is None:
        roles_path = path.with_name(path.stem + "_roles.csv")
    with Path(roles_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["modality", "channel", "role"])
        for mod, roles in (("a", data.roles_a), ("b", data.roles_b)):
            for j, r in enumerate(roles):
                w.writerow([mod, j, r])


def load_dataset(path, roles_path=None) -> MultimodalDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["sample_id", "y"]:
        raise ValueError(f"{path}: header must start with sample_id, y")
    a_cols = [k for k, h in enumerate(header) if h.startswith("a_")]
    b_cols = [k for k, h in enumerate(header) if h.startswith("b_")]
    table = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    xa, xb = table[:, a_cols], table[:, b_cols]
    y = table[:, 1].astype(np.int64)

    if roles_path is None:
        roles_path = path.with_name(path.stem + "_roles.csv")
    roles = {"a": [NOISE] * len(a_cols), "b": [NOISE] * len(b_cols)}
    if Path(roles_path).exists():
        with Path(roles_path).open(newline="") as fh:
            for rec in csv.DictReader(fh):
                roles[rec["modality"]][int(rec["channel"])] = rec["role"]
    return MultimodalDataset(xa, xb, y, tuple(roles["a"]), tuple(roles["b"]))
