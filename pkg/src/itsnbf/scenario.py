"""Scenario generation and the YAML scenario format.

A scenario fixes everything except the operating point: the system
parameters, the satellite-user ground positions and the terrestrial layout.
Units are explicit in key names and dB values appear only in this file
format; in memory everything is linear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .geometry import (SatUserGeometry, SystemConfig, UserSet, as_user_set,
                       build_sat_user_stats, db_to_linear, linear_to_db, make_rng)
from .interference import (InterferenceModel, PolarGrid, TerrestrialLayout,
                           integral_interference_matrix, pa_interference_matrix)
from .problem import RobustProblem

FORMAT_VERSION = 1
_DB_DIGITS = 10


class ScenarioError(ValueError):
    """Malformed scenario file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    sat_positions_m: tuple  # ((x, y), ...) ground offsets from the sub-satellite point
    layout: TerrestrialLayout
    seed: int | None = None
    weights: tuple | None = None

    @property
    def k_s(self) -> int:
        return len(self.sat_positions_m)

    @property
    def k_g(self) -> int:
        return self.layout.total_users

    def with_cell_radius(self, cell_radius_m: float) -> "Scenario":
        return replace(self, layout=self.layout.with_cell_radius(cell_radius_m))

    def with_users(self, k_s: int) -> "Scenario":
        if not 1 <= k_s <= self.k_s:
            raise ValueError(f"scenario holds {self.k_s} users, asked for {k_s}")
        w = None if self.weights is None else self.weights[:k_s]
        return replace(self, sat_positions_m=self.sat_positions_m[:k_s], weights=w)


def hexagonal_stations(center_radius_m: float, center_azimuth_rad: float,
                       spacing_m: float, n_stations: int = 7) -> tuple:
    """One center station plus up to six on the surrounding hexagon, in polar form."""
    if not 1 <= n_stations <= 7:
        raise ValueError("hexagonal cluster holds 1 to 7 stations")
    cx = center_radius_m * math.cos(center_azimuth_rad)
    cy = center_radius_m * math.sin(center_azimuth_rad)
    pts = [(cx, cy)]
    for i in range(n_stations - 1):
        a = math.pi / 6 + i * math.pi / 3
        pts.append((cx + spacing_m * math.cos(a), cy + spacing_m * math.sin(a)))
    return tuple((math.hypot(x, y), math.atan2(y, x)) for x, y in pts)


def generate_scenario(config: SystemConfig | None = None, k_s: int = 12, n_bs: int = 7,
                      users_per_bs: int = 10, cell_radius_m: float = 500.0,
                      cluster_radius_m: float = 400e3, cluster_azimuth_rad: float = 0.0,
                      min_separation_m: float = 100e3, seed: int = 0,
                      density: str = "uniform") -> Scenario:
    """Random satellite users around a hexagonal terrestrial cluster.

    Users are drawn uniformly over the coverage disk (rejection sampling),
    keeping ``min_separation_m`` from the cluster center so that no user sits
    inside the terrestrial footprint. Stations are spaced ``sqrt(3) R_bs``
    apart. Deterministic in ``seed``.
    """
    config = config or SystemConfig()
    if k_s < 1:
        raise ValueError("k_s must be >= 1")
    rng = make_rng(seed)
    stations = hexagonal_stations(cluster_radius_m, cluster_azimuth_rad,
                                  math.sqrt(3.0) * cell_radius_m, n_bs)
    cx = cluster_radius_m * math.cos(cluster_azimuth_rad)
    cy = cluster_radius_m * math.sin(cluster_azimuth_rad)
    radius = config.coverage_radius_m
    pts = []
    for _ in range(10000 * k_s):
        x, y = rng.uniform(-radius, radius, size=2)
        if x * x + y * y > radius * radius:
            continue
        if math.hypot(x - cx, y - cy) < min_separation_m:
            continue
        pts.append((float(x), float(y)))
        if len(pts) == k_s:
            break
    else:
        raise ValueError("could not place the satellite users; relax min_separation_m")
    layout = TerrestrialLayout(stations, cell_radius_m, users_per_bs, density)
    return Scenario(config, tuple(pts), layout, seed)


def scenario_users(scenario: Scenario, snr_db: float, noise_power_w: float | None = None) -> UserSet:
    cfg = scenario.config
    weights = scenario.weights or (1.0,) * scenario.k_s
    stats = [build_sat_user_stats(SatUserGeometry.from_ground(x, y, cfg), cfg, snr_db,
                                  k_s=scenario.k_s, noise_power_w=noise_power_w, weight=w)
             for (x, y), w in zip(scenario.sat_positions_m, weights)]
    return as_user_set(stats)


def build_problem(scenario: Scenario, snr_db: float, i_thr_dbw: float, model: str = "integral",
                  grid: PolarGrid | None = None, tol: float = 1e-4, iter_max: int = 100,
                  integral: InterferenceModel | None = None) -> RobustProblem:
    """Assemble the beamforming problem at one operating point.

    ``model="pa"`` designs against the position-aided covariance and keeps
    the integral model as the audit reference. A precomputed integral model
    may be passed to avoid recomputing it across operating points.
    """
    users = scenario_users(scenario, snr_db)
    if integral is None:
        integral = integral_interference_matrix(scenario.layout, scenario.config,
                                                grid or PolarGrid())
    i_thr = math.inf if math.isinf(i_thr_dbw) and i_thr_dbw > 0 else db_to_linear(i_thr_dbw)
    kw = dict(i_thr_w=i_thr, p_t_w=scenario.config.tx_power_w, k_g=scenario.k_g, tol=tol,
              iter_max=iter_max)
    if model == "integral":
        return RobustProblem(users, integral, **kw)
    if model == "pa":
        pa = pa_interference_matrix(scenario.layout, scenario.config)
        return RobustProblem(users, pa, audit=integral, **kw)
    raise ValueError(f"unknown interference model {model!r}; use 'integral' or 'pa'")


# --------------------------------------------------------------------------
# file format


def _db(value: float) -> float:
    return round(linear_to_db(value), _DB_DIGITS)


def scenario_to_dict(scenario: Scenario) -> dict:
    c = scenario.config
    doc = {
        "format_version": FORMAT_VERSION,
        "seed": scenario.seed,
        "system": {
            "carrier_frequency_hz": c.carrier_frequency_hz,
            "orbit_altitude_m": c.orbit_altitude_m,
            "coverage_radius_m": c.coverage_radius_m,
            "array_m_x": c.m_x,
            "array_m_y": c.m_y,
            "element_spacing_wavelengths": c.element_spacing_ratio,
            "p_t_dbw": _db(c.tx_power_w),
            "rician_factor_db": _db(c.rician_factor_linear),
            "tx_gain_dbi": _db(c.per_antenna_tx_gain_linear),
            "rx_gain_dbi": _db(c.rx_gain_linear),
            "noise_figure_db": _db(c.noise_figure_linear),
            "antenna_temperature_k": c.antenna_temp_k,
            "bandwidth_hz": c.bandwidth_hz,
        },
        "satellite_users": [
            {"x_m": x, "y_m": y} | ({} if scenario.weights is None
                                    else {"weight": scenario.weights[i]})
            for i, (x, y) in enumerate(scenario.sat_positions_m)
        ],
        "terrestrial": {
            "cell_radius_m": scenario.layout.cell_radius_m,
            "users_per_bs": scenario.layout.users_per_bs,
            "density": scenario.layout.density,
            "base_stations": [{"distance_m": r, "azimuth_rad": p}
                              for r, p in scenario.layout.stations],
        },
    }
    return doc


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False, default_flow_style=False)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_scenario(scenario))


def _key_lines(node, prefix=()) -> dict:
    """Map key paths to 1-based line numbers from a composed YAML node."""
    out = {prefix: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out.update(_key_lines(v, path))
            out[path] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.update(_key_lines(v, prefix + (i,)))
    return out


@dataclass
class _Reader:
    doc: dict
    lines: dict = field(default_factory=dict)

    def line(self, path):
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def get(self, path, kind=float, default=None, required=True):
        node = self.doc
        for i, key in enumerate(path):
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
            else:
                if not required:
                    return default
                raise ScenarioError(f"missing key {'.'.join(map(str, path))!r}",
                                    self.line(path[:i]))
        try:
            if kind is int and (isinstance(node, bool) or float(node) != int(node)):
                raise TypeError
            return kind(node)
        except (TypeError, ValueError):
            raise ScenarioError(f"{'.'.join(map(str, path))}: expected {kind.__name__}, "
                                f"got {node!r}", self.line(path)) from None


def _compose(text: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ScenarioError(str(exc.problem or exc), mark.line + 1 if mark else None) from None
    if not isinstance(doc, dict):
        raise ScenarioError("document must be a mapping", 1)
    return doc, _Reader(doc, _key_lines(node))


def _read_layout(r: _Reader, t: tuple) -> TerrestrialLayout:
    bss = r.get(t + ("base_stations",), list)
    stations = [(r.get(t + ("base_stations", i, "distance_m")),
                 r.get(t + ("base_stations", i, "azimuth_rad"))) for i in range(len(bss))]
    try:
        return TerrestrialLayout(tuple(stations), r.get(t + ("cell_radius_m",)),
                                 r.get(t + ("users_per_bs",), int),
                                 r.get(t + ("density",), str, "uniform", required=False))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), r.line(t)) from None


def parse_scenario(text: str) -> Scenario:
    doc, r = _compose(text)
    version = r.get(("format_version",), int)
    if version != FORMAT_VERSION:
        raise ScenarioError(f"unsupported format_version {version}", r.line(("format_version",)))
    s = ("system",)
    try:
        config = SystemConfig(
            carrier_frequency_hz=r.get(s + ("carrier_frequency_hz",)),
            orbit_altitude_m=r.get(s + ("orbit_altitude_m",)),
            coverage_radius_m=r.get(s + ("coverage_radius_m",)),
            m_x=r.get(s + ("array_m_x",), int),
            m_y=r.get(s + ("array_m_y",), int),
            element_spacing_ratio=r.get(s + ("element_spacing_wavelengths",), default=0.5,
                                        required=False),
            tx_power_w=db_to_linear(r.get(s + ("p_t_dbw",))),
            rician_factor_linear=db_to_linear(r.get(s + ("rician_factor_db",))),
            per_antenna_tx_gain_linear=db_to_linear(r.get(s + ("tx_gain_dbi",))),
            rx_gain_linear=db_to_linear(r.get(s + ("rx_gain_dbi",))),
            noise_figure_linear=db_to_linear(r.get(s + ("noise_figure_db",))),
            antenna_temp_k=r.get(s + ("antenna_temperature_k",)),
            bandwidth_hz=r.get(s + ("bandwidth_hz",), default=20e6, required=False),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), r.line(s)) from None
    users = doc.get("satellite_users")
    if not isinstance(users, list) or not users:
        raise ScenarioError("satellite_users must be a nonempty list", r.line(("satellite_users",)))
    positions, weights = [], []
    for i in range(len(users)):
        p = ("satellite_users", i)
        x, y = r.get(p + ("x_m",)), r.get(p + ("y_m",))
        if x * x + y * y > config.coverage_radius_m ** 2 * (1 + 1e-12):
            raise ScenarioError(f"satellite user {i} lies outside the coverage radius", r.line(p))
        positions.append((x, y))
        weights.append(r.get(p + ("weight",), default=None, required=False))
    if all(w is None for w in weights):
        weights = None
    elif any(w is None for w in weights):
        raise ScenarioError("either all or no satellite users may carry a weight",
                            r.line(("satellite_users",)))
    layout = _read_layout(r, ("terrestrial",))
    seed = doc.get("seed")
    return Scenario(config, tuple(positions), layout,
                    None if seed is None else r.get(("seed",), int),
                    None if weights is None else tuple(weights))


def layout_to_dict(layout: TerrestrialLayout) -> dict:
    return scenario_to_dict(Scenario(SystemConfig(), ((0.0, 0.0),), layout))["terrestrial"]


def parse_layout(text: str) -> TerrestrialLayout:
    """Read a terrestrial layout, either bare or under a ``terrestrial`` key."""
    doc, r = _compose(text)
    prefix = ("terrestrial",) if "terrestrial" in doc else ()
    return _read_layout(r, prefix)


def load_layout(path) -> TerrestrialLayout:
    with open(path, encoding="utf-8") as fh:
        return parse_layout(fh.read())


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())

