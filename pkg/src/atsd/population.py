"""Clustered finite populations on a square grid of quadrats.

A population is N = grid_side**2 unit quadrats partitioned into M equal
contiguous PSU blocks. Each quadrat carries a target count y, two
auxiliaries x and z, and the binary indicator w = 1[y > 0].

The generator places individuals by a Poisson cluster process: a Poisson
number of cluster centers uniform on the square, individuals around each
center at exponential radial distance and uniform direction, clipped to
the square. y is the quadrat count. The auxiliaries are counts of
derived point patterns: each target individual is copied into the
auxiliary pattern with some probability (optionally jittered), extra
clustered points are added around the same centers, and an independent
uniform background is superposed. Tuning those knobs moves the
auxiliary's mean and its correlation with y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

VARIABLES = ("y", "x", "z", "w")


class PopulationFileError(ValueError):
    """Malformed, truncated, or inconsistent population file."""


@dataclass(frozen=True)
class Unit:
    psu_index: int  # h, 1-based
    ssu_index: int  # j, 1-based within PSU
    y: float
    x: float
    z: float
    w: int


@dataclass(frozen=True)
class AuxiliaryModel:
    """How an auxiliary point pattern derives from the target pattern.

    share_prob: probability each target individual is copied into the
        auxiliary pattern; jitter_scale: exponential radial displacement
        applied to copies (0 = exact location); extra_per_cluster: Poisson
        mean of additional points per cluster center; extra_scale: their
        exponential dispersion; background_rate: Poisson mean of points
        uniform over the whole square.
    """

    share_prob: float = 1.0
    jitter_scale: float = 0.0
    extra_per_cluster: float = 0.0
    extra_scale: float = 1.0
    background_rate: float = 0.0

    def validate(self):
        if not 0.0 <= self.share_prob <= 1.0:
            raise ValueError("share_prob must be in [0, 1]")
        if self.jitter_scale < 0 or self.extra_per_cluster < 0 or self.background_rate < 0:
            raise ValueError("rates and scales must be nonnegative")
        if self.extra_scale <= 0:
            raise ValueError("extra_scale must be positive")


@dataclass(frozen=True)
class PopulationSpec:
    grid_side: int = 20
    M: int = 4
    cluster_rate: float = 10.0
    points_per_cluster_rate: float = 8.0
    dispersion_scale: float = 1.0
    aux_x: AuxiliaryModel = field(default_factory=AuxiliaryModel)
    aux_z: AuxiliaryModel = field(default_factory=AuxiliaryModel)
    seed: int = 0

    def validate(self):
        if self.grid_side < 1 or self.M < 1:
            raise ValueError("grid_side and M must be positive")
        if self.cluster_rate <= 0 or self.points_per_cluster_rate <= 0:
            raise ValueError("cluster and points-per-cluster rates must be positive")
        if self.dispersion_scale <= 0:
            raise ValueError("dispersion_scale must be positive")
        if (self.grid_side * self.grid_side) % self.M != 0:
            raise ValueError("grid_side**2 must be divisible by M")
        _psu_block_shape(self.grid_side, self.M)
        self.aux_x.validate()
        self.aux_z.validate()


class Population:
    """Immutable finite population; values stored h-major, j-minor."""

    def __init__(self, psu_sizes, y, x, z, grid_side=0, seed=0):
        self.psu_sizes = [int(n) for n in psu_sizes]
        self.M = len(self.psu_sizes)
        self.N = sum(self.psu_sizes)
        self.grid_side = int(grid_side)
        self.seed = int(seed)
        self.y = np.asarray(y, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.z = np.asarray(z, dtype=float)
        for name, arr in (("y", self.y), ("x", self.x), ("z", self.z)):
            if arr.shape != (self.N,):
                raise ValueError(f"{name} must have length N={self.N}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} values must be finite and nonnegative")
        self.w = (self.y > 0).astype(float)
        self._offsets = np.concatenate([[0], np.cumsum(self.psu_sizes)])
        for arr in (self.y, self.x, self.z, self.w):
            arr.setflags(write=False)

    def values(self, var: str) -> np.ndarray:
        if var not in VARIABLES:
            raise KeyError(f"unknown variable {var!r}; expected one of {VARIABLES}")
        return getattr(self, var)

    def psu_slice(self, h: int) -> slice:
        """Global index range of PSU h (1-based)."""
        if not 1 <= h <= self.M:
            raise IndexError(f"PSU index {h} out of [1..{self.M}]")
        return slice(int(self._offsets[h - 1]), int(self._offsets[h]))

    def psu_values(self, var: str, h: int) -> np.ndarray:
        return self.values(var)[self.psu_slice(h)]

    def unit(self, h: int, j: int) -> Unit:
        if not 1 <= j <= self.psu_sizes[h - 1]:
            raise IndexError(f"SSU index {j} out of [1..{self.psu_sizes[h - 1]}]")
        g = int(self._offsets[h - 1]) + j - 1
        return Unit(h, j, float(self.y[g]), float(self.x[g]), float(self.z[g]), int(self.w[g]))

    def units(self):
        for h in range(1, self.M + 1):
            for j in range(1, self.psu_sizes[h - 1] + 1):
                yield self.unit(h, j)

    def mean(self, var: str = "y") -> float:
        return float(np.mean(self.values(var)))

    def psu_totals(self, var: str) -> np.ndarray:
        v = self.values(var)
        return np.array([v[self.psu_slice(h)].sum() for h in range(1, self.M + 1)])

    def __eq__(self, other):
        if not isinstance(other, Population):
            return NotImplemented
        return (
            self.psu_sizes == other.psu_sizes
            and self.grid_side == other.grid_side
            and self.seed == other.seed
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
        )


@dataclass(frozen=True)
class PopulationStats:
    means: dict
    variances: dict
    corr_with_y: dict  # x, z, w -> correlation or None when undefined
    psu_totals_y: list
    psu_totals_x: list
    rarity: list  # p^c_h = L_h / N_h for the requested condition variable
    condition_var: str
    threshold: float


def _psu_block_shape(grid_side: int, M: int):
    """Split the grid into M equal contiguous blocks (rows x cols of blocks)."""
    best = None
    for rows in range(1, M + 1):
        if M % rows:
            continue
        cols = M // rows
        if grid_side % rows == 0 and grid_side % cols == 0:
            score = abs(rows - math.isqrt(M))
            if best is None or score < best[0]:
                best = (score, rows, cols)
    if best is None:
        raise ValueError(f"cannot partition a {grid_side}x{grid_side} grid into {M} equal blocks")
    return best[1], best[2]


def _quadrat_counts(points: np.ndarray, grid_side: int) -> np.ndarray:
    """Count points per quadrat, row-major; points outside are discarded."""
    counts = np.zeros((grid_side, grid_side), dtype=float)
    if len(points):
        px, py = points[:, 0], points[:, 1]
        keep = (px >= 0) & (px < grid_side) & (py >= 0) & (py < grid_side)
        cols = np.floor(px[keep]).astype(int)
        rows = np.floor(py[keep]).astype(int)
        np.add.at(counts, (rows, cols), 1.0)
    return counts


def _radial_offsets(rng, scale, n):
    r = rng.exponential(scale, n)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _aux_points(rng, model: AuxiliaryModel, centers, cluster_points, grid_side):
    pts = []
    for c, base in zip(centers, cluster_points):
        if len(base) and model.share_prob > 0:
            keep = rng.random(len(base)) < model.share_prob
            kept = base[keep]
            if model.jitter_scale > 0 and len(kept):
                kept = kept + _radial_offsets(rng, model.jitter_scale, len(kept))
            pts.append(kept)
        n_extra = rng.poisson(model.extra_per_cluster)
        if n_extra:
            pts.append(c + _radial_offsets(rng, model.extra_scale, n_extra))
    n_bg = rng.poisson(model.background_rate)
    if n_bg:
        pts.append(rng.uniform(0.0, grid_side, (n_bg, 2)))
    if not pts:
        return np.empty((0, 2))
    return np.vstack(pts)


def _grid_to_psu_order(counts: np.ndarray, grid_side: int, M: int) -> tuple[list, np.ndarray]:
    brows, bcols = _psu_block_shape(grid_side, M)
    bh, bw = grid_side // brows, grid_side // bcols
    psu_sizes, flat = [], []
    for br in range(brows):
        for bc in range(bcols):
            block = counts[br * bh : (br + 1) * bh, bc * bw : (bc + 1) * bw]
            flat.append(block.reshape(-1))
            psu_sizes.append(bh * bw)
    return psu_sizes, np.concatenate(flat)


def generate_population(spec: PopulationSpec) -> Population:
    """Draw one population from the Poisson cluster process; deterministic in seed."""
    spec.validate()
    rng = _seeded_generator(spec.seed)
    side = spec.grid_side

    n_clusters = rng.poisson(spec.cluster_rate)
    centers = rng.uniform(0.0, side, (n_clusters, 2))
    cluster_points = []
    for c in centers:
        n_pts = rng.poisson(spec.points_per_cluster_rate)
        cluster_points.append(c + _radial_offsets(rng, spec.dispersion_scale, n_pts))

    target_pts = np.vstack(cluster_points) if cluster_points else np.empty((0, 2))
    y_counts = _quadrat_counts(target_pts, side)
    x_counts = _quadrat_counts(_aux_points(rng, spec.aux_x, centers, cluster_points, side), side)
    z_counts = _quadrat_counts(_aux_points(rng, spec.aux_z, centers, cluster_points, side), side)

    psu_sizes, y = _grid_to_psu_order(y_counts, side, spec.M)
    _, x = _grid_to_psu_order(x_counts, side, spec.M)
    _, z = _grid_to_psu_order(z_counts, side, spec.M)
    return Population(psu_sizes, y, x, z, grid_side=side, seed=spec.seed)


def _seeded_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)])))


def compute_stats(pop: Population, condition_var: str = "y", threshold: float = 0.0) -> PopulationStats:
    """Exact summary over all N units, Table-1 style."""
    vals = {v: pop.values(v) for v in VARIABLES}
    if condition_var not in VARIABLES:
        raise KeyError(f"unknown variable {condition_var!r}")
    means = {v: float(np.mean(a)) for v, a in vals.items()}
    variances = {v: float(np.var(a, ddof=1)) if pop.N > 1 else 0.0 for v, a in vals.items()}
    corr = {}
    sy = math.sqrt(variances["y"])
    for v in ("x", "z", "w"):
        sv = math.sqrt(variances[v])
        if sy == 0.0 or sv == 0.0:
            corr[v] = None
        else:
            c = float(np.cov(vals[v], vals["y"], ddof=1)[0, 1])
            corr[v] = c / (sv * sy)
    rarity = [
        float(np.count_nonzero(pop.psu_values(condition_var, h) > threshold)) / pop.psu_sizes[h - 1]
        for h in range(1, pop.M + 1)
    ]
    return PopulationStats(
        means=means,
        variances=variances,
        corr_with_y=corr,
        psu_totals_y=[float(t) for t in pop.psu_totals("y")],
        psu_totals_x=[float(t) for t in pop.psu_totals("x")],
        rarity=rarity,
        condition_var=condition_var,
        threshold=threshold,
    )


@dataclass(frozen=True)
class VarianceComponents:
    """Exact population quantities feeding the three-part variance formulas."""

    s2_t_y: float  # between-PSU variance of y totals
    s2_t_x: float
    s_t_xy: float  # between-PSU covariance of (x totals, y totals)
    s2_y_h: list  # within-PSU variance of y, per PSU
    s2_x_h: list
    s_xy_h: list


def population_variance_components(pop: Population, yvar: str = "y", xvar: str = "x") -> VarianceComponents:
    if pop.M < 2:
        raise ValueError("need M >= 2 PSUs")
    if any(n < 2 for n in pop.psu_sizes):
        raise ValueError("every PSU needs N_h >= 2")
    ty = pop.psu_totals(yvar)
    tx = pop.psu_totals(xvar)
    s2_ty = float(np.var(ty, ddof=1))
    s2_tx = float(np.var(tx, ddof=1))
    s_txy = float(np.cov(tx, ty, ddof=1)[0, 1])
    s2_y_h, s2_x_h, s_xy_h = [], [], []
    for h in range(1, pop.M + 1):
        yv = pop.psu_values(yvar, h)
        xv = pop.psu_values(xvar, h)
        s2_y_h.append(float(np.var(yv, ddof=1)))
        s2_x_h.append(float(np.var(xv, ddof=1)))
        s_xy_h.append(float(np.cov(xv, yv, ddof=1)[0, 1]))
    return VarianceComponents(s2_ty, s2_tx, s_txy, s2_y_h, s2_x_h, s_xy_h)


# --- persistence -----------------------------------------------------------

def _fnv64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _format_real(v: float) -> str:
    return f"{v:.17g}"


def population_to_text(pop: Population) -> str:
    lines = [
        f"M={pop.M}",
        "Nh=" + ",".join(str(n) for n in pop.psu_sizes),
        f"grid={pop.grid_side}",
        f"seed={pop.seed}",
    ]
    for u in pop.units():
        lines.append(
            f"{u.psu_index},{u.ssu_index},{_format_real(u.y)},{_format_real(u.x)},"
            f"{_format_real(u.z)},{u.w}"
        )
    body = "\n".join(lines) + "\n"
    return body + f"checksum={_fnv64(body.encode('utf-8')):016x}\n"


def save_population(pop: Population, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(population_to_text(pop))


def population_from_text(text: str) -> Population:
    lines = text.splitlines()
    if not lines or not lines[-1].startswith("checksum="):
        raise PopulationFileError("missing checksum line (truncated file?)")
    body = "\n".join(lines[:-1]) + "\n"
    want = lines[-1].split("=", 1)[1].strip()
    got = f"{_fnv64(body.encode('utf-8')):016x}"
    if want != got:
        raise PopulationFileError(f"checksum mismatch: file says {want}, body hashes to {got}")
    try:
        header = dict(line.split("=", 1) for line in lines[:4])
        M = int(header["M"])
        psu_sizes = [int(s) for s in header["Nh"].split(",")]
        grid = int(header["grid"])
        seed = int(header["seed"])
    except (KeyError, ValueError) as exc:
        raise PopulationFileError(f"bad header: {exc}") from exc
    if len(psu_sizes) != M:
        raise PopulationFileError("Nh list length disagrees with M")
    N = sum(psu_sizes)
    rows = lines[4:-1]
    if len(rows) != N:
        raise PopulationFileError(f"expected {N} unit lines, found {len(rows)}")
    y = np.empty(N)
    x = np.empty(N)
    z = np.empty(N)
    w = np.empty(N)
    offsets = np.concatenate([[0], np.cumsum(psu_sizes)])
    seen = 0
    for line in rows:
        parts = line.split(",")
        if len(parts) != 6:
            raise PopulationFileError(f"bad unit line: {line!r}")
        h, j = int(parts[0]), int(parts[1])
        if not (1 <= h <= M and 1 <= j <= psu_sizes[h - 1]):
            raise PopulationFileError(f"unit address ({h},{j}) out of range")
        g = int(offsets[h - 1]) + j - 1
        y[g], x[g], z[g], w[g] = (float(parts[k]) for k in (2, 3, 4, 5))
        seen += 1
    if seen != N:
        raise PopulationFileError("duplicate or missing unit lines")
    if not np.array_equal(w, (y > 0).astype(float)):
        raise PopulationFileError("w column inconsistent with y > 0")
    return Population(psu_sizes, y, x, z, grid_side=grid, seed=seed)


def load_population(path) -> Population:
    with open(path, "r", encoding="utf-8") as f:
        return population_from_text(f.read())
