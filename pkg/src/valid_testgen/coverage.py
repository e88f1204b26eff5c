"""Neuron coverage (NC) and multi-granularity coverage (KMNC, NBC, SNAC).

Neurons are enumerated in (layer, unit) order over every dense layer; a final
softmax layer contributes its logits. All bitsets only ever gain bits, so
states built over input shards combine with :func:`merge`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation, ShapeError
from .models import CoverageConfig, CoverageReport, LayerBoundsDocument, ProfileDocument
from .nn import Network, dump_document, parse_document
from .tools import get_logger, log_operation

logger = get_logger(__name__)

PROFILE_BATCH = 1024


class NeuronId(NamedTuple):
    layer_index: int
    unit_index: int


def neuron_ids(widths: tuple[int, ...]) -> list[NeuronId]:
    return [NeuronId(layer, unit) for layer, width in enumerate(widths) for unit in range(width)]


def _flat_activations(net: Network, x: np.ndarray) -> np.ndarray:
    return np.concatenate(net.coverage_activations(np.atleast_2d(x)), axis=1)


@dataclass(frozen=True)
class ActivationProfile:
    low: np.ndarray  # [neurons], flattened in (layer, unit) order
    high: np.ndarray
    widths: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.low.shape != self.high.shape or self.low.shape != (sum(self.widths),):
            raise ShapeError("Profile bounds do not match widths", self.low.shape, (sum(self.widths),), operation="profile")
        if np.any(self.low > self.high):
            raise ContractViolation("Profile has low > high", operation="profile")

    def bounds(self, neuron: NeuronId) -> tuple[float, float]:
        index = sum(self.widths[: neuron.layer_index]) + neuron.unit_index
        return float(self.low[index]), float(self.high[index])

    def to_bytes(self) -> bytes:
        layers, start = [], 0
        for width in self.widths:
            layers.append(
                LayerBoundsDocument(low=self.low[start : start + width].tolist(), high=self.high[start : start + width].tolist())
            )
            start += width
        return dump_document(ProfileDocument(layers=layers).model_dump())

    @classmethod
    def from_bytes(cls, data: bytes, file_path: str | None = None) -> "ActivationProfile":
        document = parse_document(data, ProfileDocument, file_path)
        widths = tuple(len(layer.low) for layer in document.layers)
        low = np.array([value for layer in document.layers for value in layer.low], dtype=np.float64)
        high = np.array([value for layer in document.layers for value in layer.high], dtype=np.float64)
        return cls(low, high, widths)


@log_operation("profile")
def profile(net: Network, training_inputs: np.ndarray) -> ActivationProfile:
    """Exact per-neuron min/max of coverage activations over the training inputs."""

    inputs = np.atleast_2d(np.asarray(training_inputs, dtype=np.float64))
    if inputs.shape[0] == 0 or np.asarray(training_inputs).size == 0:
        raise ContractViolation("Training set is empty", operation="profile")
    low = np.full(sum(net.layer_widths), np.inf)
    high = np.full(sum(net.layer_widths), -np.inf)
    for start in range(0, inputs.shape[0], PROFILE_BATCH):
        values = _flat_activations(net, inputs[start : start + PROFILE_BATCH])
        low = np.minimum(low, values.min(axis=0))
        high = np.maximum(high, values.max(axis=0))
    return ActivationProfile(low, high, net.layer_widths)


class CoverageState:
    """Covered-unit bitsets for one network and bin count ``k``.

    Equality compares provenance and bitsets; ``input_count`` is bookkeeping.
    """

    def __init__(self, widths: tuple[int, ...], k: int):
        self.widths = tuple(widths)
        self.k = k
        total = sum(self.widths)
        self.nc_bits = np.zeros(total, dtype=bool)
        self.kmnc_bits = np.zeros((total, k), dtype=bool)
        self.nbc_low_bits = np.zeros(total, dtype=bool)
        self.nbc_high_bits = np.zeros(total, dtype=bool)
        self.input_count = 0

    @classmethod
    def for_network(cls, net: Network, cfg: CoverageConfig) -> "CoverageState":
        return cls(net.layer_widths, cfg.k)

    @property
    def total_neurons(self) -> int:
        return int(self.nc_bits.shape[0])

    def copy(self) -> "CoverageState":
        clone = CoverageState(self.widths, self.k)
        clone.nc_bits = self.nc_bits.copy()
        clone.kmnc_bits = self.kmnc_bits.copy()
        clone.nbc_low_bits = self.nbc_low_bits.copy()
        clone.nbc_high_bits = self.nbc_high_bits.copy()
        clone.input_count = self.input_count
        return clone

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoverageState):
            return NotImplemented
        return (
            self.widths == other.widths
            and self.k == other.k
            and np.array_equal(self.nc_bits, other.nc_bits)
            and np.array_equal(self.kmnc_bits, other.kmnc_bits)
            and np.array_equal(self.nbc_low_bits, other.nbc_low_bits)
            and np.array_equal(self.nbc_high_bits, other.nbc_high_bits)
        )

    def uncovered_neurons(self) -> list[NeuronId]:
        ids = neuron_ids(self.widths)
        return [ids[index] for index in np.flatnonzero(~self.nc_bits)]

    def nc_vector(self) -> str:
        """'0'/'1' per neuron in (layer, unit) order."""

        return "".join("1" if bit else "0" for bit in self.nc_bits)

    @classmethod
    def from_nc_vector(cls, vector: str, widths: tuple[int, ...] | None = None, k: int = 1) -> "CoverageState":
        if set(vector) - {"0", "1"}:
            raise ContractViolation("Coverage vector must contain only '0' and '1'", operation="from_nc_vector")
        widths = widths or (len(vector),)
        if sum(widths) != len(vector):
            raise ShapeError("Vector length does not match widths", (len(vector),), (sum(widths),), operation="from_nc_vector")
        state = cls(widths, k)
        state.nc_bits = np.array([char == "1" for char in vector], dtype=bool)
        return state


def _check_provenance(state: CoverageState, net: Network, cfg: CoverageConfig) -> None:
    if state.widths != net.layer_widths or state.k != cfg.k:
        raise ContractViolation(
            "Coverage state was built for another network or k",
            operation="coverage_update",
            state=(state.widths, state.k),
            network=(net.layer_widths, cfg.k),
        )


def update_nc(state: CoverageState, net: Network, x: np.ndarray, cfg: CoverageConfig) -> None:
    """Set the NC bit of every neuron whose layer-scaled activation exceeds t.

    Activations are min-max scaled per layer per input; a constant layer
    covers nothing for that input. Advances ``input_count``.
    """

    _check_provenance(state, net, cfg)
    start = 0
    batch = np.atleast_2d(x)
    for values in net.coverage_activations(batch):
        width = values.shape[1]
        lo = values.min(axis=1, keepdims=True)
        hi = values.max(axis=1, keepdims=True)
        span = hi - lo
        scaled = np.where(span > 0, (values - lo) / np.where(span > 0, span, 1.0), 0.0)
        covered = (scaled > cfg.nc_threshold) & (span > 0)
        state.nc_bits[start : start + width] |= covered.any(axis=0)
        start += width
    state.input_count += batch.shape[0]


def update_multigranularity(
    state: CoverageState, profile: ActivationProfile, net: Network, x: np.ndarray, cfg: CoverageConfig
) -> None:
    """KMNC bins and NBC/SNAC corners for raw activations against the profile."""

    _check_provenance(state, net, cfg)
    if profile.widths != net.layer_widths:
        raise ContractViolation("Profile was computed for another network", operation="coverage_update")
    values = _flat_activations(net, x)
    low, high = profile.low, profile.high
    span = high - low
    in_range = (values >= low) & (values <= high)
    safe_span = np.where(span > 0, span, 1.0)
    bins = np.where(span > 0, np.floor(cfg.k * (values - low) / safe_span), 0.0)
    bins = np.clip(bins, 0, cfg.k - 1).astype(np.int64)
    rows, neurons = np.nonzero(in_range)
    state.kmnc_bits[neurons, bins[rows, neurons]] = True
    state.nbc_high_bits |= (values > high).any(axis=0)
    state.nbc_low_bits |= (values < low).any(axis=0)


def update(
    state: CoverageState,
    net: Network,
    x: np.ndarray,
    cfg: CoverageConfig,
    profile: ActivationProfile | None = None,
) -> None:
    update_nc(state, net, x, cfg)
    if profile is not None:
        update_multigranularity(state, profile, net, x, cfg)


def ratios(state: CoverageState, total_neurons: int, cfg: CoverageConfig) -> CoverageReport:
    if total_neurons <= 0:
        raise ContractViolation("total_neurons must be positive", operation="ratios")
    if total_neurons != state.total_neurons:
        raise ContractViolation(
            "total_neurons does not match the state", operation="ratios", total=total_neurons, state=state.total_neurons
        )
    if state.k != cfg.k:
        raise ContractViolation("State was accumulated with another k", operation="ratios", state_k=state.k, k=cfg.k)
    return CoverageReport(
        nc=float(state.nc_bits.sum()) / total_neurons,
        kmnc=float(state.kmnc_bits.sum()) / (cfg.k * total_neurons),
        nbc=float(state.nbc_low_bits.sum() + state.nbc_high_bits.sum()) / (2 * total_neurons),
        snac=float(state.nbc_high_bits.sum()) / total_neurons,
        inputs=state.input_count,
        neurons=total_neurons,
        k=cfg.k,
        t=cfg.nc_threshold,
    )


def report(state: CoverageState, cfg: CoverageConfig) -> CoverageReport:
    return ratios(state, state.total_neurons, cfg)


def merge(state_a: CoverageState, state_b: CoverageState) -> CoverageState:
    if state_a.widths != state_b.widths or state_a.k != state_b.k:
        raise ContractViolation(
            "Cannot merge states of different provenance",
            operation="merge",
            left=(state_a.widths, state_a.k),
            right=(state_b.widths, state_b.k),
        )
    merged = state_a.copy()
    merged.nc_bits |= state_b.nc_bits
    merged.kmnc_bits |= state_b.kmnc_bits
    merged.nbc_low_bits |= state_b.nbc_low_bits
    merged.nbc_high_bits |= state_b.nbc_high_bits
    merged.input_count = state_a.input_count + state_b.input_count
    return merged


def coverage_of(
    net: Network, inputs: np.ndarray, cfg: CoverageConfig, profile: ActivationProfile | None = None
) -> CoverageState:
    """From-scratch coverage of a whole suite."""

    state = CoverageState.for_network(net, cfg)
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, net.input_dim)
    if inputs.shape[0]:
        update(state, net, inputs, cfg, profile)
    return state


class CoverageTracker:
    """Accumulates coverage for one network as inputs arrive."""

    def __init__(self, net: Network, cfg: CoverageConfig, profile: ActivationProfile | None = None):
        self.net = net
        self.cfg = cfg
        self.profile = profile
        self.state = CoverageState.for_network(net, cfg)

    def update(self, x: np.ndarray) -> None:
        update(self.state, self.net, x, self.cfg, self.profile)

    def report(self) -> CoverageReport:
        return report(self.state, self.cfg)
