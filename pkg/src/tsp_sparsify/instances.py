"""TSP instances: the four TSPLIB distance conventions, TSPLIB I/O and
synthetic generators for five spatial distributions.

Distances follow the TSPLIB reference formulas:

    EUC_2D  nint(sqrt(dx^2 + dy^2))
    MAN_2D  nint(|dx| + |dy|)
    ATT     ceil(sqrt((dx^2 + dy^2) / 10))
    GEO     floor(R * acos(((1 + q1) q2 - (1 - q1) q3) / 2) + 1)

with nint(x) = floor(x + 0.5), R = 6378.388 and GEO coordinates given in
DDD.MM (degrees, minutes) form.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DistanceType",
    "Family",
    "GeneratorConfig",
    "TspInstance",
    "TsplibError",
    "edge_distance",
    "distance_matrix",
    "parse_tsplib",
    "write_tsplib",
    "read_tsplib",
    "generate_instance",
    "geo_to_radians",
]

EARTH_RADIUS = 6378.388
# TSPLIB's reference code (and LKH) use this truncated constant for GEO.
GEO_PI = 3.141592
CARTESIAN_BOX = 1_000_000.0
GEO_LAT_RANGE = (-80.0, 80.0)
GEO_LON_RANGE = (-180.0, 180.0)


class TsplibError(ValueError):
    """Malformed or unsupported TSPLIB input."""


class DistanceType(str, enum.Enum):
    EUC_2D = "EUC_2D"
    MAN_2D = "MAN_2D"
    ATT = "ATT"
    GEO = "GEO"

    @classmethod
    def parse(cls, tag: str) -> "DistanceType":
        try:
            return cls(tag.strip().upper())
        except ValueError:
            raise TsplibError(f"unsupported EDGE_WEIGHT_TYPE: {tag.strip()!r}") from None


class Family(str, enum.Enum):
    UNIFORM = "uniform"
    CLUSTERED = "clustered"
    GRID_JITTER = "grid_jitter"
    OUTLIER_MIXTURE = "outlier_mixture"
    CORRIDOR = "corridor"


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the spatial distributions (all in unit-square units)."""

    n_clusters: int = 5
    cluster_sigma: float = 0.05
    grid_jitter: float = 0.20
    outlier_fraction: float = 0.10
    outlier_core: float = 0.60
    corridor_aspect: float = 10.0

    @classmethod
    def from_mapping(cls, data: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator option(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def geo_to_radians(value: float, pi: float = GEO_PI) -> float:
    """Convert a DDD.MM coordinate to radians (TSPLIB convention)."""
    degrees = math.trunc(value)
    minutes = value - degrees
    return pi * (degrees + 5.0 * minutes / 3.0) / 180.0


@dataclass(frozen=True, eq=False)
class TspInstance:
    name: str
    distance_type: DistanceType
    coords: np.ndarray
    family: str | None = None
    seed: int | None = None
    _dm: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must be an (n, 2) array")
        if coords.shape[0] < 3:
            raise ValueError(f"an instance needs at least 3 cities, got {coords.shape[0]}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        dt = DistanceType(self.distance_type)
        if dt is DistanceType.GEO:
            lat = np.array([geo_to_radians(v) for v in coords[:, 0]]) * 180.0 / GEO_PI
            lon = np.array([geo_to_radians(v) for v in coords[:, 1]]) * 180.0 / GEO_PI
            if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
                raise ValueError("GEO coordinates out of range after DDD.MM conversion")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "distance_type", dt)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def distance(self, i: int, j: int) -> int:
        return edge_distance(self, i, j)

    def distance_matrix(self) -> np.ndarray:
        """Memoized integer distance matrix (read-only)."""
        if not self._dm:
            dm = distance_matrix(self)
            dm.setflags(write=False)
            self._dm.append(dm)
        return self._dm[0]


def _nint(x: float) -> int:
    return math.floor(x + 0.5)


def edge_distance(inst: TspInstance, i: int, j: int) -> int:
    n = inst.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"city index out of range: ({i}, {j}) for n={n}")
    if i == j:
        return 0
    xi, yi = inst.coords[i]
    xj, yj = inst.coords[j]
    dt = inst.distance_type
    if dt is DistanceType.EUC_2D:
        dx, dy = float(xi - xj), float(yi - yj)
        return _nint(math.sqrt(dx * dx + dy * dy))
    if dt is DistanceType.MAN_2D:
        return _nint(abs(float(xi - xj)) + abs(float(yi - yj)))
    if dt is DistanceType.ATT:
        dx, dy = float(xi - xj), float(yi - yj)
        return math.ceil(math.sqrt((dx * dx + dy * dy) / 10.0))
    lat_i, lon_i = geo_to_radians(float(xi)), geo_to_radians(float(yi))
    lat_j, lon_j = geo_to_radians(float(xj)), geo_to_radians(float(yj))
    return _geo(lat_i, lon_i, lat_j, lon_j)


def _geo(lat_i: float, lon_i: float, lat_j: float, lon_j: float) -> int:
    q1 = math.cos(lon_i - lon_j)
    q2 = math.cos(lat_i - lat_j)
    q3 = math.cos(lat_i + lat_j)
    arg = 0.5 * ((1.0 + q1) * q2 - (1.0 - q1) * q3)
    # rounding can push |arg| a hair past 1 for (near-)coincident points
    arg = min(1.0, max(-1.0, arg))
    return math.floor(EARTH_RADIUS * math.acos(arg) + 1.0)


def distance_matrix(inst: TspInstance) -> np.ndarray:
    """Symmetric int64 matrix with zero diagonal, equal to ``edge_distance``."""
    c = inst.coords
    dt = inst.distance_type
    n = inst.n
    if dt is DistanceType.GEO:
        rad = [(geo_to_radians(float(x)), geo_to_radians(float(y))) for x, y in c]
        dm = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            for j in range(i + 1, n):
                dm[i, j] = dm[j, i] = _geo(rad[i][0], rad[i][1], rad[j][0], rad[j][1])
        return dm
    # +, -, *, / and sqrt are correctly rounded in numpy and math alike, so the
    # vectorised form matches edge_distance bit for bit.
    dx = c[:, 0][:, None] - c[:, 0][None, :]
    dy = c[:, 1][:, None] - c[:, 1][None, :]
    if dt is DistanceType.EUC_2D:
        dm = np.floor(np.sqrt(dx * dx + dy * dy) + 0.5)
    elif dt is DistanceType.MAN_2D:
        dm = np.floor(np.abs(dx) + np.abs(dy) + 0.5)
    else:
        dm = np.ceil(np.sqrt((dx * dx + dy * dy) / 10.0))
    dm = dm.astype(np.int64)
    np.fill_diagonal(dm, 0)
    return dm


# --------------------------------------------------------------------------
# TSPLIB I/O

_KEY_RE = re.compile(r"^\s*([A-Z_]+)\s*(?::\s*(.*?))?\s*$")
_UNSUPPORTED_SECTIONS = {
    "EDGE_WEIGHT_SECTION",
    "DISPLAY_DATA_SECTION",
    "EDGE_DATA_SECTION",
    "FIXED_EDGES_SECTION",
    "DEPOT_SECTION",
    "DEMAND_SECTION",
    "TOUR_SECTION",
}
_COMMENT_RE = re.compile(r"family=(\S+)\s+seed=(\d+)")


def _format_coord(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_tsplib(inst: TspInstance) -> str:
    lines = [f"NAME : {inst.name}"]
    if inst.family is not None or inst.seed is not None:
        lines.append(f"COMMENT : family={inst.family} seed={inst.seed}")
    lines += [
        "TYPE : TSP",
        f"DIMENSION : {inst.n}",
        f"EDGE_WEIGHT_TYPE : {inst.distance_type.value}",
        "NODE_COORD_SECTION",
    ]
    for k, (x, y) in enumerate(inst.coords, start=1):
        lines.append(f"{k} {_format_coord(x)} {_format_coord(y)}")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def parse_tsplib(text: str) -> TspInstance:
    header: dict[str, str] = {}
    rows: list[tuple[int, float, float]] | None = None
    lines = text.splitlines()
    pos = 0
    while pos < len(lines):
        raw = lines[pos]
        pos += 1
        if not raw.strip():
            continue
        m = _KEY_RE.match(raw)
        if not m:
            if rows is not None and raw.split()[0].lstrip("-").isdigit():
                raise TsplibError(
                    f"DIMENSION is {len(rows)} but NODE_COORD_SECTION has more coordinate lines"
                )
            raise TsplibError(f"line {pos}: cannot parse {raw.strip()!r}")
        key, value = m.group(1), m.group(2)
        if key == "EOF":
            break
        if key in _UNSUPPORTED_SECTIONS:
            raise TsplibError(f"unsupported section {key}")
        if key == "NODE_COORD_SECTION":
            if "DIMENSION" not in header:
                raise TsplibError("missing required keyword DIMENSION before NODE_COORD_SECTION")
            n = _parse_dimension(header["DIMENSION"])
            rows = []
            while len(rows) < n:
                if pos >= len(lines):
                    raise TsplibError(
                        f"DIMENSION is {n} but NODE_COORD_SECTION has {len(rows)} coordinate lines"
                    )
                raw = lines[pos]
                pos += 1
                parts = raw.split()
                if not parts:
                    continue
                if parts[0] == "EOF" or _KEY_RE.match(raw) and parts[0].isalpha():
                    raise TsplibError(
                        f"DIMENSION is {n} but NODE_COORD_SECTION has {len(rows)} coordinate lines"
                    )
                if len(parts) != 3:
                    raise TsplibError(f"line {pos}: malformed coordinate line {raw.strip()!r}")
                try:
                    rows.append((int(parts[0]), float(parts[1]), float(parts[2])))
                except ValueError:
                    raise TsplibError(f"line {pos}: malformed coordinate line {raw.strip()!r}") from None
            continue
        if value is None:
            raise TsplibError(f"line {pos}: unsupported section {key}")
        header[key] = value

    for key in ("NAME", "TYPE", "DIMENSION", "EDGE_WEIGHT_TYPE"):
        if key not in header:
            raise TsplibError(f"missing required keyword {key}")
    if header["TYPE"].strip().upper() != "TSP":
        raise TsplibError(f"unsupported TYPE: {header['TYPE']!r}")
    dt = DistanceType.parse(header["EDGE_WEIGHT_TYPE"])
    if rows is None:
        raise TsplibError("missing required keyword NODE_COORD_SECTION")
    n = _parse_dimension(header["DIMENSION"])
    ids = sorted(r[0] for r in rows)
    if ids != list(range(1, n + 1)):
        raise TsplibError("node ids in NODE_COORD_SECTION must be 1..DIMENSION")
    rows.sort(key=lambda r: r[0])
    coords = np.array([(x, y) for _, x, y in rows], dtype=np.float64)

    family, seed = None, None
    m = _COMMENT_RE.search(header.get("COMMENT", ""))
    if m:
        family = None if m.group(1) == "None" else m.group(1)
        seed = int(m.group(2))
    try:
        return TspInstance(header["NAME"].strip(), dt, coords, family=family, seed=seed)
    except ValueError as exc:
        raise TsplibError(str(exc)) from None


def _parse_dimension(value: str) -> int:
    try:
        n = int(value.strip())
    except ValueError:
        raise TsplibError(f"malformed DIMENSION: {value!r}") from None
    if n < 3:
        raise TsplibError(f"DIMENSION must be at least 3, got {n}")
    return n


def read_tsplib(path) -> TspInstance:
    with open(path, encoding="utf-8") as fh:
        return parse_tsplib(fh.read())


# --------------------------------------------------------------------------
# generators


def _unit_points(family: Family, n: int, rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    if family is Family.UNIFORM:
        return rng.random((n, 2))
    if family is Family.CLUSTERED:
        centers = rng.random((cfg.n_clusters, 2))
        labels = rng.integers(0, cfg.n_clusters, size=n)
        pts = np.empty((n, 2))
        for k in range(n):
            while True:
                p = centers[labels[k]] + cfg.cluster_sigma * rng.standard_normal(2)
                if 0.0 <= p[0] <= 1.0 and 0.0 <= p[1] <= 1.0:
                    break
            pts[k] = p
        return pts
    if family is Family.GRID_JITTER:
        m = math.isqrt(n - 1) + 1  # ceil(sqrt(n))
        cells = rng.choice(m * m, size=n, replace=False)
        size = 1.0 / m
        centers = np.stack([(cells % m + 0.5) * size, (cells // m + 0.5) * size], axis=1)
        return centers + rng.uniform(-cfg.grid_jitter, cfg.grid_jitter, size=(n, 2)) * size
    if family is Family.OUTLIER_MIXTURE:
        n_out = int(round(cfg.outlier_fraction * n))
        lo = 0.5 - cfg.outlier_core / 2.0
        core = lo + cfg.outlier_core * rng.random((n - n_out, 2))
        outliers = rng.random((n_out, 2))
        pts = np.concatenate([core, outliers])
        return pts[rng.permutation(n)]
    if family is Family.CORRIDOR:
        height = 1.0 / cfg.corridor_aspect
        pts = rng.random((n, 2))
        pts[:, 1] = 0.5 - height / 2.0 + height * pts[:, 1]
        return pts
    raise ValueError(f"unknown family {family!r}")


def _to_ddd_mm(deg: float) -> float:
    sign = -1.0 if deg < 0 else 1.0
    a = abs(deg)
    whole = math.floor(a)
    minutes = round((a - whole) * 60.0, 2)
    if minutes >= 60.0:
        whole, minutes = whole + 1, 0.0
    return round(sign * (whole + minutes / 100.0), 4)


def _map_to_box(unit: np.ndarray, dt: DistanceType) -> np.ndarray:
    unit = np.clip(unit, 0.0, 1.0)
    if dt is DistanceType.GEO:
        lat = GEO_LAT_RANGE[0] + (GEO_LAT_RANGE[1] - GEO_LAT_RANGE[0]) * unit[:, 1]
        lon = GEO_LON_RANGE[0] + (GEO_LON_RANGE[1] - GEO_LON_RANGE[0]) * unit[:, 0]
        return np.array([(_to_ddd_mm(a), _to_ddd_mm(b)) for a, b in zip(lat, lon)])
    return np.round(unit * CARTESIAN_BOX)


def generate_instance(
    family: Family | str,
    dt: DistanceType | str,
    n: int,
    seed: int,
    cfg: GeneratorConfig | None = None,
) -> TspInstance:
    """Sample ``n`` distinct cities from ``family``.

    Randomness comes from numpy's PCG64 bit generator seeded with ``seed``,
    which is platform independent. Points are drawn in the unit square and
    mapped to [0, 1e6]^2 (rounded to integers) for Cartesian types, or to
    latitude [-80, 80] x longitude [-180, 180] in DDD.MM form for GEO.
    Coincident cities are redrawn so every distance is positive.
    """
    if n < 3:
        raise ValueError(f"n must be at least 3, got {n}")
    family = Family(family)
    dt = DistanceType(dt)
    cfg = cfg or GeneratorConfig()
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    rng = np.random.Generator(np.random.PCG64(seed))
    coords = _map_to_box(_unit_points(family, n, rng, cfg), dt)
    for _ in range(1000):
        _, first = np.unique(coords, axis=0, return_index=True)
        if len(first) == n:
            break
        dup = np.setdiff1d(np.arange(n), first)
        coords[dup] = _map_to_box(rng.random((len(dup), 2)), dt)
    else:  # pragma: no cover - only with absurdly small boxes
        raise RuntimeError("could not draw distinct cities")
    name = f"{family.value}_{dt.value}_{n}_{seed}"
    return TspInstance(name, dt, coords, family=family.value, seed=int(seed))
