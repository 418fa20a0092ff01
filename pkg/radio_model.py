"""
Path loss and per-resource-block rates.

b = W log2(1 + SNR), where SNR is the received power over the noise power
W*N0, and the received power follows an alpha-beta-gamma path-loss model.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from core_model import Cell, InfrastructureGraph, Rect, SliceSpec

try:
    from backend.cache import cache_result, rate_cache
except ImportError:
    from .backend.cache import cache_result, rate_cache

logger = logging.getLogger(__name__)

# RRH standing on the representative point
MIN_DISTANCE = 1.0


class RadioError(ValueError):
    pass


class Conservatism(str, Enum):
    CENTER = "center"
    WORST_CORNER = "worst_corner"


@dataclass(frozen=True)
class RadioParams:
    rb_bandwidth: float = 0.2e6  # Hz
    carrier_freq: float = 2.6  # GHz
    tx_power_down: float = 43.0  # dBm
    tx_gain_down: float = 15.0  # dBi
    tx_power_up: float = 23.0
    tx_gain_up: float = 3.0
    rx_gain_down: float = 3.0
    rx_gain_up: float = 15.0
    noise_density: float = -174.0  # dBm/Hz
    alpha: float = 3.6
    beta: float = 7.6
    gamma: float = 2.0
    conservatism: Conservatism = Conservatism.CENTER

    def __post_init__(self):
        object.__setattr__(self, "conservatism", Conservatism(self.conservatism))
        if not self.rb_bandwidth > 0:
            raise RadioError(f"RB bandwidth must be positive, got {self.rb_bandwidth}")
        if not self.carrier_freq > 0:
            raise RadioError(f"carrier frequency must be positive, got {self.carrier_freq}")
        if self.alpha < 0 or self.gamma < 0:
            raise RadioError("alpha and gamma must be >= 0")

    def link_budget(self, direction: str) -> Tuple[float, float, float]:
        """(P_tx, G_tx, G_rx) for 'up' or 'down'."""
        if direction == "down":
            return self.tx_power_down, self.tx_gain_down, self.rx_gain_down
        if direction == "up":
            return self.tx_power_up, self.tx_gain_up, self.rx_gain_up
        raise RadioError(f"unknown direction {direction!r}")


def path_loss(d: float, f: float, params: RadioParams) -> float:
    """PL(d) = 10 alpha log10(d) + beta + 10 gamma log10(f), d in meters, f in GHz."""
    if not d > 0:
        raise RadioError(f"distance must be positive, got {d}")
    if not f > 0:
        raise RadioError(f"frequency must be positive, got {f}")
    return 10 * params.alpha * math.log10(d) + params.beta + 10 * params.gamma * math.log10(f)


def noise_power_dbm(params: RadioParams) -> float:
    return params.noise_density + 10 * math.log10(params.rb_bandwidth)


def representative_point(rrh_pos, rect: Rect, conservatism: Conservatism) -> Tuple[float, float]:
    if conservatism == Conservatism.CENTER:
        return rect.center
    return max(rect.corners, key=lambda c: math.dist(rrh_pos, c))


def link_distance(rrh_pos, cell: Union[Cell, Rect], params: RadioParams) -> float:
    if rrh_pos is None:
        raise RadioError("RRH has no position")
    rect = cell.rect if isinstance(cell, Cell) else cell
    d = math.dist(rrh_pos, representative_point(rrh_pos, rect, params.conservatism))
    if d < MIN_DISTANCE:
        logger.debug("distance %.3f m clamped to %.1f m", d, MIN_DISTANCE)
        return MIN_DISTANCE
    return d


def snr_db(d: float, direction: str, params: RadioParams) -> float:
    p_tx, g_tx, g_rx = params.link_budget(direction)
    p_rx = p_tx + g_tx + g_rx - path_loss(d, params.carrier_freq, params)
    return p_rx - noise_power_dbm(params)


@cache_result(rate_cache)
def bits_per_rb_at(d: float, direction: str, params: RadioParams) -> float:
    """Bits per second carried by one RB at distance d (already clamped)."""
    snr = 10 ** (snr_db(d, direction, params) / 10)
    return params.rb_bandwidth * math.log2(1 + snr)


def bits_per_rb_down(rrh_pos, cell: Union[Cell, Rect], params: RadioParams) -> float:
    return bits_per_rb_at(link_distance(rrh_pos, cell, params), "down", params)


def bits_per_rb_up(rrh_pos, cell: Union[Cell, Rect], params: RadioParams) -> float:
    return bits_per_rb_at(link_distance(rrh_pos, cell, params), "up", params)


@dataclass(eq=False)
class RateTables:
    """Per-slice arrays of shape (RRH, cell) for each direction, RRHs in infrastructure order."""
    rrh_ids: Tuple[str, ...]
    up: Dict[str, np.ndarray] = field(default_factory=dict)
    down: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self._row = {rrh: k for k, rrh in enumerate(self.rrh_ids)}

    def table(self, direction: str, slice_id: str) -> np.ndarray:
        tables = self.up if direction == "up" else self.down
        if slice_id not in tables:
            raise RadioError(f"no rate table for slice {slice_id}")
        return tables[slice_id]

    def rate(self, direction: str, slice_id: str, rrh_id: str, q: int) -> float:
        return float(self.table(direction, slice_id)[self._row[rrh_id], q])

    def covers(self, slices: Sequence[SliceSpec]) -> bool:
        for s in slices:
            for tables in (self.up, self.down):
                arr = tables.get(s.id)
                if arr is None or arr.shape != (len(self.rrh_ids), len(s.cells)):
                    return False
        return True


def precompute_rate_tables(infra: InfrastructureGraph, slices: Sequence[SliceSpec], params: RadioParams) -> RateTables:
    rrhs = infra.rrh_nodes
    tables = RateTables(tuple(n.id for n in rrhs))
    for s in slices:
        shape = (len(rrhs), len(s.cells))
        up = np.zeros(shape)
        down = np.zeros(shape)
        for i, node in enumerate(rrhs):
            if node.position is None:
                raise RadioError(f"RRH {node.id} has no position")
            for q, cell in enumerate(s.cells):
                up[i, q] = bits_per_rb_up(node.position, cell, params)
                down[i, q] = bits_per_rb_down(node.position, cell, params)
        tables.up[s.id] = up
        tables.down[s.id] = down
    logger.debug("rate tables: %d RRHs x %d slices", len(rrhs), len(slices))
    return tables
