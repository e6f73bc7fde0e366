"""Ground-truth unimodal energy fields and noisy sensor sampling.

Two source families on an N x N grid covering a square of physical diameter
d km (cell (i, j) is the center of its grid square):

* isotropic underwater-acoustic sources with Thorp-style attenuation
  P(x) = p / (a(x) + 1), a(x) = d(x)^alpha * 10^(-af_dB * d(x) / 10);
* bivariate skew-normal bumps 2 phi2(z; omega) Phi(delta1 z1 + delta2 z2),
  scaled to peak value p and shifted so the mode sits at the source position.

Sensors land uniformly in the square, are quantized to cells (first sensor
wins a shared cell), and read truth + N(0, noise_sd^2).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .exceptions import InputError, ParameterError, PlacementError
from .matrix_core import DenseMatrix, ObservationSet

__all__ = [
    "SourceSpec",
    "FieldConfig",
    "SourceField",
    "ScenarioSpec",
    "attenuation_db",
    "isotropic_field",
    "isotropic_layer",
    "skew_field",
    "skew_layer",
    "build_field",
    "sample_observations",
    "place_sources",
    "cell_centers",
    "load_scenario",
    "generate_scenario",
]


@dataclass(frozen=True)
class SourceSpec:
    """One source: position in km, kind, peak power, skew parameters."""

    x: float
    y: float
    kind: str = "isotropic"
    p: float = 6.0
    delta1: float = 0.0
    delta2: float = 0.0
    omega: float = 0.0
    scale_km: float = 2.0

    def __post_init__(self):
        if self.kind not in ("isotropic", "skew"):
            raise InputError(f"unknown source kind {self.kind!r}")
        if not self.p > 0:
            raise InputError("source power must be positive")
        if self.kind == "skew":
            if not abs(self.omega) < 1:
                raise ParameterError("skew correlation omega must satisfy |omega| < 1")
            if not self.scale_km > 0:
                raise ParameterError("scale_km must be positive")


@dataclass(frozen=True)
class FieldConfig:
    n: int
    diameter_km: float = 15.0
    frequency_khz: float = 5.0
    path_exponent: float = 3.0
    noise_sd: float = 0.01
    sensor_count: int = 4500

    def __post_init__(self):
        if self.n < 2:
            raise InputError("grid side must be >= 2")
        if not self.diameter_km > 0:
            raise InputError("diameter must be positive")
        if self.noise_sd < 0:
            raise InputError("noise_sd must be >= 0")


@dataclass(frozen=True)
class SourceField:
    truth: DenseMatrix
    sources: tuple
    cfg: FieldConfig


def attenuation_db(f: float) -> float:
    """Absorption coefficient af_dB at frequency f in kHz."""
    if not f > 0:
        raise InputError("frequency must be positive")
    f2 = f * f
    return 0.11 * f2 / (1 + f2) + 44 * f2 / (4100 + f2) + 2.75e-4 * f2 + 0.003


def cell_centers(cfg: FieldConfig) -> tuple[np.ndarray, np.ndarray]:
    """x coordinate per column, y coordinate per row, in km."""
    step = cfg.diameter_km / cfg.n
    centers = (np.arange(cfg.n) + 0.5) * step
    return centers, centers


def _check_position(s: SourceSpec, cfg: FieldConfig) -> None:
    d = cfg.diameter_km
    if not (0 <= s.x <= d and 0 <= s.y <= d):
        raise InputError(f"source at ({s.x}, {s.y}) outside the {d} km square")


def isotropic_layer(s: SourceSpec, cfg: FieldConfig) -> np.ndarray:
    xs, ys = cell_centers(cfg)
    dx = xs[None, :] - s.x
    dy = ys[:, None] - s.y
    dist = np.hypot(dx, dy)
    af = attenuation_db(cfg.frequency_khz)
    a = dist ** cfg.path_exponent * 10.0 ** (-af * dist / 10.0)
    return s.p / (a + 1.0)


def isotropic_field(sources, cfg: FieldConfig) -> SourceField:
    sources = tuple(sources)
    if not sources:
        raise InputError("need at least one source")
    total = np.zeros((cfg.n, cfg.n))
    for s in sources:
        if s.kind != "isotropic":
            raise InputError("isotropic_field requires isotropic sources")
        _check_position(s, cfg)
        total += isotropic_layer(s, cfg)
    return SourceField(DenseMatrix.from_array(total), sources, cfg)


def _sn_log_density(z1, z2, delta1, delta2, omega):
    """log of 2 phi2(z; omega) Phi(delta1 z1 + delta2 z2), up to a constant."""
    det = 1.0 - omega * omega
    quad = (z1 * z1 - 2.0 * omega * z1 * z2 + z2 * z2) / det
    return -0.5 * quad + special.log_ndtr(delta1 * z1 + delta2 * z2)


def _sn_mode(delta1, delta2, omega) -> np.ndarray:
    """Mode of the standardized skew-normal density (log-concave, unique)."""
    res = optimize.minimize(
        lambda z: -_sn_log_density(z[0], z[1], delta1, delta2, omega),
        x0=np.zeros(2),
        method="BFGS",
    )
    return res.x


def skew_layer(s: SourceSpec, cfg: FieldConfig) -> np.ndarray:
    xs, ys = cell_centers(cfg)
    z1 = (xs[None, :] - s.x) / s.scale_km
    z2 = (ys[:, None] - s.y) / s.scale_km
    mode = _sn_mode(s.delta1, s.delta2, s.omega)
    # shift so the density peak lands on the source position
    logf = _sn_log_density(z1 + mode[0], z2 + mode[1], s.delta1, s.delta2, s.omega)
    logpeak = _sn_log_density(mode[0], mode[1], s.delta1, s.delta2, s.omega)
    layer = s.p * np.exp(logf - logpeak)
    if not np.all(layer > 0):
        raise ParameterError("skew density not positive on the grid")
    return layer


def skew_field(sources, cfg: FieldConfig) -> SourceField:
    sources = tuple(sources)
    if not sources:
        raise InputError("need at least one source")
    total = np.zeros((cfg.n, cfg.n))
    for s in sources:
        if s.kind != "skew":
            raise InputError("skew_field requires skew sources")
        _check_position(s, cfg)
        total += skew_layer(s, cfg)
    return SourceField(DenseMatrix.from_array(total), sources, cfg)


def build_field(sources, cfg: FieldConfig) -> SourceField:
    """Dispatch on the (uniform) source kind."""
    sources = tuple(sources)
    kinds = {s.kind for s in sources}
    if kinds == {"isotropic"}:
        return isotropic_field(sources, cfg)
    if kinds == {"skew"}:
        return skew_field(sources, cfg)
    raise InputError("sources must share one kind")


def sample_observations(
    field: SourceField,
    sensor_count: int,
    noise_sd: float,
    seed,
    grid_mode: bool = False,
) -> ObservationSet:
    """Noisy sensor readings of the field, one observation per occupied cell."""
    if sensor_count < 1:
        raise InputError("sensor_count must be >= 1")
    if noise_sd < 0:
        raise InputError("noise_sd must be >= 0")
    cfg = field.cfg
    rng = np.random.default_rng(seed)
    if grid_mode:
        if sensor_count != cfg.n * cfg.n:
            raise InputError("grid mode needs sensor_count = n^2")
        lin = np.arange(cfg.n * cfg.n)
    else:
        px = rng.uniform(0.0, cfg.diameter_km, sensor_count)
        py = rng.uniform(0.0, cfg.diameter_km, sensor_count)
        step = cfg.diameter_km / cfg.n
        jj = np.minimum((px / step).astype(np.int64), cfg.n - 1)
        ii = np.minimum((py / step).astype(np.int64), cfg.n - 1)
        # first sensor wins a shared cell: unique keeps the first occurrence
        lin_all = ii * cfg.n + jj
        lin, _ = np.unique(lin_all, return_index=True)
    ii = lin // cfg.n
    jj = lin % cfg.n
    values = field.truth.data[ii, jj]
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, lin.size)
    return ObservationSet(cfg.n, cfg.n, ii, jj, values)


def place_sources(
    K: int,
    mode: str = "random",
    min_separation: float = 3.0,
    seed=0,
    *,
    diameter_km: float = 15.0,
    margin_km: float = 2.0,
    kind: str = "isotropic",
    p: float = 6.0,
    scale_km: float = 2.0,
    skew_low: float = -0.25,
    skew_high: float = 0.25,
    colinear_margin_km: float | None = None,
    max_tries: int = 2000,
) -> list[SourceSpec]:
    """K source positions: random with separation, colinear, or mirrored.

    In random mode, colinear_margin_km additionally rejects any triple whose
    smallest point-to-line altitude is below the margin, keeping accidental
    near-colinear geometry (a distinct pathological scenario) out of random
    draws.
    """
    if K < 1:
        raise InputError("K must be >= 1")
    if mode not in ("random", "colinear", "mirrored"):
        raise InputError(f"unknown placement mode {mode!r}")
    if 2 * margin_km >= diameter_km:
        raise InputError("margin leaves no interior")
    rng = np.random.default_rng(seed)
    lo, hi = margin_km, diameter_km - margin_km

    def uniform_point():
        return rng.uniform(lo, hi), rng.uniform(lo, hi)

    def altitude_ok(cand, accepted):
        if colinear_margin_km is None or len(accepted) < 2:
            return True
        for a in range(len(accepted)):
            for b in range(a + 1, len(accepted)):
                p0 = np.asarray(accepted[a])
                p1 = np.asarray(accepted[b])
                p2 = np.asarray(cand)
                e01, e02, e12 = p1 - p0, p2 - p0, p2 - p1
                area2 = abs(e01[0] * e02[1] - e01[1] * e02[0])
                longest = max(map(np.linalg.norm, (e01, e02, e12)))
                if area2 / longest < colinear_margin_km:
                    return False
        return True

    positions: list[tuple[float, float]] = []
    if mode == "random":
        tries = 0
        while len(positions) < K:
            if tries >= max_tries:
                raise PlacementError(
                    f"could not place {K} sources {min_separation} km apart "
                    f"in {max_tries} tries"
                )
            tries += 1
            cand = uniform_point()
            if (all(np.hypot(cand[0] - q[0], cand[1] - q[1]) >= min_separation
                    for q in positions)
                    and altitude_ok(cand, positions)):
                positions.append(cand)
    elif mode == "colinear":
        # along a grid row: the degenerate geometry rotation is meant to break
        y0 = rng.uniform(lo, hi)
        if K == 1:
            positions = [(rng.uniform(lo, hi), y0)]
        else:
            spacing = (hi - lo) / (K - 1)
            if spacing < min_separation:
                raise PlacementError(
                    f"cannot fit {K} colinear sources {min_separation} km apart"
                )
            positions = [(lo + k * spacing, y0) for k in range(K)]
    else:  # mirrored about the field center
        center = diameter_km / 2.0
        while len(positions) + 1 < K:
            cand = uniform_point()
            positions.append(cand)
            positions.append((2 * center - cand[0], 2 * center - cand[1]))
        if len(positions) < K:
            positions.append((center, center))

    out = []
    for (x, y) in positions:
        if kind == "skew":
            d1 = rng.uniform(skew_low, skew_high)
            d2 = rng.uniform(skew_low, skew_high)
            om = rng.uniform(skew_low, skew_high)
            out.append(SourceSpec(x, y, "skew", p, d1, d2, om, scale_km))
        else:
            out.append(SourceSpec(x, y, "isotropic", p))
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    """One experiment scenario: field physics, source recipe, sampling."""

    field: FieldConfig
    count: int = 2
    kind: str = "isotropic"
    mode: str = "random"
    min_separation_km: float = 3.0
    margin_km: float = 2.0
    colinear_margin_km: float | None = None
    p: float = 6.0
    scale_km: float = 2.0
    skew_low: float = -0.25
    skew_high: float = 0.25
    positions: tuple | None = None
    grid_mode: bool = False


def load_scenario(path) -> ScenarioSpec:
    """Read a [field]/[sources]/[sampling] INI scenario file."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise InputError(f"cannot read scenario config {path}")
    try:
        fsec = parser["field"]
        field_cfg = FieldConfig(
            n=fsec.getint("n"),
            diameter_km=fsec.getfloat("diameter_km", 15.0),
            frequency_khz=fsec.getfloat("frequency_khz", 5.0),
            path_exponent=fsec.getfloat("path_exponent", 3.0),
            noise_sd=parser.getfloat("sampling", "noise_sd", fallback=0.01),
            sensor_count=parser.getint("sampling", "sensor_count", fallback=4500),
        )
        ssec = parser["sources"] if parser.has_section("sources") else {}
        positions = None
        raw_pos = ssec.get("positions") if ssec else None
        if raw_pos:
            positions = tuple(
                tuple(float(t) for t in chunk.split(","))
                for chunk in raw_pos.split(";") if chunk.strip()
            )
            for pos in positions:
                if len(pos) != 2:
                    raise InputError("positions must be x,y pairs separated by ;")
        get = ssec.get if ssec else (lambda *a, **k: None)
        return ScenarioSpec(
            field=field_cfg,
            count=int(get("count") or 2),
            kind=(get("kind") or "isotropic"),
            mode=(get("mode") or "random"),
            min_separation_km=float(get("min_separation_km") or 3.0),
            margin_km=float(get("margin_km") or 2.0),
            colinear_margin_km=(float(get("colinear_margin_km"))
                                if get("colinear_margin_km") else None),
            p=float(get("p") or 6.0),
            scale_km=float(get("scale_km") or 2.0),
            skew_low=float(get("skew_low") or -0.25),
            skew_high=float(get("skew_high") or 0.25),
            positions=positions,
            grid_mode=parser.getboolean("sampling", "grid_mode", fallback=False),
        )
    except (configparser.Error, KeyError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"malformed scenario config {path}: {e}") from e


def generate_scenario(
    spec: ScenarioSpec, seed, count: int | None = None
) -> tuple[SourceField, ObservationSet]:
    """Place sources, build the field, and sample observations from one seed."""
    k = count if count is not None else spec.count
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    place_seed, sample_seed = ss.spawn(2)
    if spec.positions is not None:
        if spec.kind == "skew":
            rng = np.random.default_rng(place_seed)
            sources = [
                SourceSpec(x, y, "skew", spec.p,
                           rng.uniform(spec.skew_low, spec.skew_high),
                           rng.uniform(spec.skew_low, spec.skew_high),
                           rng.uniform(spec.skew_low, spec.skew_high),
                           spec.scale_km)
                for (x, y) in spec.positions
            ]
        else:
            sources = [SourceSpec(x, y, "isotropic", spec.p)
                       for (x, y) in spec.positions]
    else:
        sources = place_sources(
            k, spec.mode, spec.min_separation_km, place_seed,
            diameter_km=spec.field.diameter_km, margin_km=spec.margin_km,
            kind=spec.kind, p=spec.p, scale_km=spec.scale_km,
            skew_low=spec.skew_low, skew_high=spec.skew_high,
            colinear_margin_km=spec.colinear_margin_km,
        )
    field = build_field(sources, spec.field)
    obs = sample_observations(
        field, spec.field.sensor_count, spec.field.noise_sd, sample_seed,
        grid_mode=spec.grid_mode,
    )
    return field, obs
