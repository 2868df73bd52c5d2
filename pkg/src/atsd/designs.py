"""Sampling designs: SRSWOR, two-stage, two-stage double, ATS, and ATSD.

Every design is a pure function of (population, parameters, DrawRng) and
returns a complete draw record; estimators live in `estimators`. Within a
PSU the adaptive phase draws an initial SRSWOR sample, counts the units
meeting the condition, and draws d extra units per satisfier in one
SRSWOR batch from the remaining frame (capped at frame exhaustion, with
the cap recorded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .population import Population
from .rng import DrawRng


@dataclass(frozen=True)
class Condition:
    """Adaptive trigger: unit value of `var` exceeds `threshold`.

    With or_target set, a unit also triggers when its y value is positive
    (condition on "both target and auxiliary" information).
    """

    var: str = "y"
    threshold: float = 0.0
    or_target: bool = False

    def flags(self, pop: Population, h: int, within_psu: np.ndarray) -> np.ndarray:
        vals = pop.psu_values(self.var, h)[within_psu]
        out = vals > self.threshold
        if self.or_target and self.var != "y":
            out = out | (pop.psu_values("y", h)[within_psu] > 0)
        return out


def srswor(frame_size: int, n: int, rng) -> np.ndarray:
    """Uniform sample of n distinct indices from range(frame_size), sorted."""
    if not 0 <= n <= frame_size:
        raise ValueError(f"need 0 <= n <= frame_size, got n={n}, frame_size={frame_size}")
    gen = rng.generator() if isinstance(rng, DrawRng) else rng
    return np.sort(gen.choice(frame_size, size=n, replace=False))


@dataclass
class PsuAdaptiveSample:
    """Record of one sequential (adaptive) sample inside one PSU frame.

    The frame is s_1h for ATSD or the whole PSU for ATS. Positions index
    into the frame arrays; `frame_ids` maps positions back to within-PSU
    unit indices (0-based).
    """

    psu_index: int
    frame_ids: np.ndarray
    frame_y: np.ndarray
    frame_aux: np.ndarray
    cond: np.ndarray  # bool per frame position
    n_init: int
    d: int
    initial: np.ndarray  # positions
    adaptive: np.ndarray  # positions, disjoint from initial
    capped: bool = False

    @property
    def frame_size(self) -> int:
        return len(self.frame_y)

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([self.initial, self.adaptive]).astype(int)

    @property
    def l_initial(self) -> int:
        return int(np.count_nonzero(self.cond[self.initial]))

    @property
    def l_total(self) -> int:
        return int(np.count_nonzero(self.cond[self.positions]))

    @property
    def n_final(self) -> int:
        return len(self.initial) + len(self.adaptive)

    @property
    def p21(self) -> float:
        return self.l_initial / self.n_init

    def frame_values(self, var: str) -> np.ndarray:
        if var == "y":
            return self.frame_y
        if var == "aux":
            return self.frame_aux
        raise KeyError(f"unknown frame variable {var!r}")

    def validate(self):
        pos = self.positions
        if len(np.unique(pos)) != len(pos):
            raise ValueError("initial and adaptive samples overlap")
        if self.n_final > self.frame_size:
            raise ValueError("sample exceeds frame")
        want = min(self.d * self.l_initial, self.frame_size - self.n_init)
        if len(self.adaptive) != want:
            raise ValueError("expansion size law violated")


def make_psu_sample(frame_y, frame_aux, cond, n_init, d, initial, adaptive,
                    psu_index=0, frame_ids=None, capped=False) -> PsuAdaptiveSample:
    """Assemble a within-PSU draw record from explicit index sets."""
    frame_y = np.asarray(frame_y, dtype=float)
    frame_aux = np.asarray(frame_aux, dtype=float)
    cond = np.asarray(cond, dtype=bool)
    if frame_ids is None:
        frame_ids = np.arange(len(frame_y))
    s = PsuAdaptiveSample(
        psu_index=psu_index,
        frame_ids=np.asarray(frame_ids, dtype=int),
        frame_y=frame_y,
        frame_aux=frame_aux,
        cond=cond,
        n_init=int(n_init),
        d=int(d),
        initial=np.asarray(initial, dtype=int),
        adaptive=np.asarray(adaptive, dtype=int),
        capped=capped,
    )
    s.validate()
    return s


def sequential_expand(frame_y, frame_aux, cond, n_init: int, d: int, rng,
                      psu_index: int = 0, frame_ids=None) -> PsuAdaptiveSample:
    """Initial SRSWOR of n_init, then d extra draws per condition-satisfier."""
    frame_y = np.asarray(frame_y, dtype=float)
    n1 = len(frame_y)
    if n1 == 0:
        raise ValueError("empty frame")
    if not 1 <= n_init <= n1:
        raise ValueError(f"need 1 <= n_init <= frame size, got {n_init} vs {n1}")
    if d < 0:
        raise ValueError("d must be >= 0")
    gen = rng.generator() if isinstance(rng, DrawRng) else rng
    initial = srswor(n1, n_init, gen)
    cond = np.asarray(cond, dtype=bool)
    l_init = int(np.count_nonzero(cond[initial]))
    remainder = np.setdiff1d(np.arange(n1), initial, assume_unique=False)
    want = d * l_init
    k = min(want, len(remainder))
    adaptive = remainder[srswor(len(remainder), k, gen)] if k else np.empty(0, dtype=int)
    return make_psu_sample(frame_y, frame_aux, cond, n_init, d, initial, adaptive,
                           psu_index=psu_index, frame_ids=frame_ids,
                           capped=k < want)


@dataclass
class AtsdSample:
    """Full record of one ATSD draw (also used for ATS with n_1h = N_h)."""

    M: int
    N: int
    m: int
    selected_psus: np.ndarray  # h values, 1-based
    psu_samples: list  # PsuAdaptiveSample per selected PSU, frame = s_1h
    psu_sizes: list  # N_h per selected PSU
    aux_var: str = "x"

    @property
    def pi(self) -> float:
        return self.m / self.M

    def a(self, i: int) -> float:
        return self.psu_sizes[i] / self.psu_samples[i].frame_size

    @property
    def n_aux(self) -> int:
        return sum(s.frame_size for s in self.psu_samples)

    @property
    def n_target(self) -> int:
        return sum(s.n_final for s in self.psu_samples)


def _check_psu_params(pop: Population, m: int, n_1h: int):
    if not 1 <= m <= pop.M:
        raise ValueError(f"need 1 <= m <= M, got m={m}, M={pop.M}")
    if not 1 <= n_1h <= min(pop.psu_sizes):
        raise ValueError(f"n_1h={n_1h} exceeds smallest PSU ({min(pop.psu_sizes)})")


def run_atsd(pop: Population, m: int, n_1h: int, n_2h1: int, d: int,
             condition: Condition, rng: DrawRng, aux_var: str | None = None) -> AtsdSample:
    """Stage 1: SRSWOR of PSUs; phase 1: SRSWOR s_1h with x measured on all
    of it; phase 2: sequential expansion inside s_1h."""
    _check_psu_params(pop, m, n_1h)
    if not 1 <= n_2h1 <= n_1h:
        raise ValueError(f"need 1 <= n_2h1 <= n_1h, got {n_2h1} vs {n_1h}")
    if aux_var is None:
        aux_var = condition.var if condition.var != "y" else "x"
    gen = rng.generator()
    selected = srswor(pop.M, m, gen) + 1
    psu_samples, psu_sizes = [], []
    for h in selected:
        N_h = pop.psu_sizes[h - 1]
        s1 = srswor(N_h, n_1h, gen)
        frame_y = pop.psu_values("y", h)[s1]
        frame_aux = pop.psu_values(aux_var, h)[s1]
        cond = condition.flags(pop, h, s1)
        psu_samples.append(
            sequential_expand(frame_y, frame_aux, cond, n_2h1, d, gen,
                              psu_index=h, frame_ids=s1)
        )
        psu_sizes.append(N_h)
    return AtsdSample(pop.M, pop.N, m, selected, psu_samples, psu_sizes, aux_var=aux_var)


def run_ats(pop: Population, m: int, n_1: int, d_1: int, rng: DrawRng,
            condition: Condition | None = None) -> AtsdSample:
    """ATS: adaptive expansion over the whole PSU, condition on y by default."""
    if condition is None:
        condition = Condition("y")
    _check_psu_params(pop, m, 1)
    gen = rng.generator()
    selected = srswor(pop.M, m, gen) + 1
    psu_samples, psu_sizes = [], []
    for h in selected:
        N_h = pop.psu_sizes[h - 1]
        if not 1 <= n_1 <= N_h:
            raise ValueError(f"need 1 <= n_1 <= N_h, got {n_1} vs {N_h}")
        ids = np.arange(N_h)
        frame_y = pop.psu_values("y", h)
        cond = condition.flags(pop, h, ids)
        psu_samples.append(
            sequential_expand(frame_y, frame_y, cond, n_1, d_1, gen,
                              psu_index=h, frame_ids=ids)
        )
        psu_sizes.append(N_h)
    return AtsdSample(pop.M, pop.N, m, selected, psu_samples, psu_sizes, aux_var="y")


@dataclass
class TwoStageSample:
    M: int
    N: int
    m: int
    selected_psus: np.ndarray
    psu_sizes: list
    psu_positions: list  # within-PSU sampled indices
    psu_y: list

    @property
    def n_target(self) -> int:
        return sum(len(p) for p in self.psu_positions)


def run_two_stage(pop: Population, m: int, n: int, rng: DrawRng) -> TwoStageSample:
    _check_psu_params(pop, m, n)
    gen = rng.generator()
    selected = srswor(pop.M, m, gen) + 1
    positions, ys, sizes = [], [], []
    for h in selected:
        s = srswor(pop.psu_sizes[h - 1], n, gen)
        positions.append(s)
        ys.append(pop.psu_values("y", h)[s])
        sizes.append(pop.psu_sizes[h - 1])
    return TwoStageSample(pop.M, pop.N, m, selected, sizes, positions, ys)


@dataclass
class DoubleSample:
    """Two-stage double sampling: phase-1 x sample, phase-2 y subsample."""

    M: int
    N: int
    m: int
    selected_psus: np.ndarray
    psu_sizes: list
    phase1_aux: list  # aux values over s_1h, per selected PSU
    phase2_positions: list  # positions into s_1h
    phase2_y: list
    phase2_aux: list
    aux_var: str = "x"

    @property
    def n_aux(self) -> int:
        return sum(len(a) for a in self.phase1_aux)

    @property
    def n_target(self) -> int:
        return sum(len(p) for p in self.phase2_positions)


def run_two_stage_double(pop: Population, m: int, n_1h: int, n_ytR: int,
                         rng: DrawRng, aux_var: str = "x") -> DoubleSample:
    _check_psu_params(pop, m, n_1h)
    if not 1 <= n_ytR <= n_1h:
        raise ValueError(f"need 1 <= n_ytR <= n_1h, got {n_ytR} vs {n_1h}")
    gen = rng.generator()
    selected = srswor(pop.M, m, gen) + 1
    p1_aux, p2_pos, p2_y, p2_aux, sizes = [], [], [], [], []
    for h in selected:
        s1 = srswor(pop.psu_sizes[h - 1], n_1h, gen)
        aux = pop.psu_values(aux_var, h)[s1]
        sub = srswor(n_1h, n_ytR, gen)
        p1_aux.append(aux)
        p2_pos.append(sub)
        p2_y.append(pop.psu_values("y", h)[s1][sub])
        p2_aux.append(aux[sub])
        sizes.append(pop.psu_sizes[h - 1])
    return DoubleSample(pop.M, pop.N, m, selected, sizes, p1_aux, p2_pos, p2_y, p2_aux, aux_var)


@dataclass
class SrsSample:
    N: int
    positions: np.ndarray
    y: np.ndarray

    @property
    def n_target(self) -> int:
        return len(self.positions)


def run_srswor_design(pop: Population, n: int, rng: DrawRng) -> SrsSample:
    if not 1 <= n <= pop.N:
        raise ValueError(f"need 1 <= n <= N, got {n} vs {pop.N}")
    s = srswor(pop.N, n, rng)
    return SrsSample(pop.N, s, pop.y[s])
