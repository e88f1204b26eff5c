"""Variational autoencoder with a Gaussian decoder, reconstruction probability
scoring and F-measure threshold calibration."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .autodiff import LOG_2PI, Graph
from .data_io import Dataset
from .errors import ContractViolation, DegenerateCalibrationError, LayerShapeError, NumericError, ShapeError
from .models import ReconProbConfig, ThresholdDocument, TrainConfig, VaeDocument
from .nn import Network, Trainer, dump_document, init_network, network_from_document, network_to_document, parse_document
from .tools import get_logger, log_operation

logger = get_logger(__name__)

SIGMA_FLOOR = 1e-3
SEPARATION_MARGIN = 0.05


class Validity(str, Enum):
    VALID = "valid"
    INVALID = "invalid"


def log_normal(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """log N(x; mu, diag sigma^2) summed over the last axis."""

    residual = (x - mu) / sigma
    return -(0.5 * LOG_2PI + np.log(sigma) + 0.5 * residual * residual).sum(axis=-1)


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, exp(logvar)) || N(0, I))."""

    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar))


@dataclass(frozen=True)
class Vae:
    encoder: Network  # x -> [mu_z | logvar_z]
    decoder: Network  # z -> [mu_x | raw sigma_x]
    latent_dim: int

    def __post_init__(self) -> None:
        if self.encoder.output_dim != 2 * self.latent_dim or self.decoder.input_dim != self.latent_dim:
            raise ShapeError(
                "Encoder/decoder do not match latent_dim",
                (self.encoder.output_dim, self.decoder.input_dim),
                (2 * self.latent_dim, self.latent_dim),
                operation="vae",
            )
        if self.decoder.output_dim != 2 * self.encoder.input_dim:
            raise ShapeError(
                "Decoder must emit mean and scale per input",
                (self.decoder.output_dim,),
                (2 * self.encoder.input_dim,),
                operation="vae",
            )

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.encoder.forward(x)
        return out[..., : self.latent_dim], out[..., self.latent_dim :]

    def decode(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.decoder.forward(z)
        return out[..., : self.input_dim], SIGMA_FLOOR + np.logaddexp(0.0, out[..., self.input_dim :])

    def build_encode(self, graph: Graph, x: int, params: Sequence[int] | None = None) -> tuple[int, int]:
        _, out = self.encoder.build(graph, x, params)
        return graph.slice_last(out, 0, self.latent_dim), graph.slice_last(out, self.latent_dim, 2 * self.latent_dim)

    def build_decode(self, graph: Graph, z: int, params: Sequence[int] | None = None) -> tuple[int, int]:
        _, out = self.decoder.build(graph, z, params)
        mu = graph.slice_last(out, 0, self.input_dim)
        raw = graph.slice_last(out, self.input_dim, 2 * self.input_dim)
        return mu, graph.add(graph.softplus(raw), graph.constant(SIGMA_FLOOR))

    def build_sample(self, graph: Graph, mu: int, logvar: int, eps: np.ndarray) -> int:
        """Reparameterized draw z = mu + exp(logvar / 2) * eps."""

        std = graph.exp(graph.scale(logvar, 0.5))
        return graph.add(mu, graph.mul(std, graph.constant(eps)))

    def build_log_density(self, graph: Graph, x: int, eps: np.ndarray, params: Sequence[int] | None = None) -> int:
        """One-sample log N(x; mu_x, sigma_x) through encode -> sample -> decode."""

        enc_params, dec_params = self._split(params)
        mu_z, logvar_z = self.build_encode(graph, x, enc_params)
        z = self.build_sample(graph, mu_z, logvar_z, eps)
        mu_x, sigma_x = self.build_decode(graph, z, dec_params)
        return graph.gaussian_log_density(x, mu_x, sigma_x)

    def _split(self, params: Sequence[int] | None) -> tuple[Sequence[int] | None, Sequence[int] | None]:
        if params is None:
            return None, None
        cut = 2 * len(self.encoder.layers)
        return params[:cut], params[cut:]

    @property
    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters + self.decoder.parameters

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "Vae":
        cut = 2 * len(self.encoder.layers)
        return Vae(self.encoder.with_parameters(arrays[:cut]), self.decoder.with_parameters(arrays[cut:]), self.latent_dim)


def init_vae(input_dim: int, hidden: Sequence[int], latent_dim: int, rng_seed: int) -> Vae:
    enc_widths = [input_dim, *hidden, 2 * latent_dim]
    dec_widths = [latent_dim, *reversed(hidden), 2 * input_dim]
    hidden_acts = ["relu"] * len(hidden)
    encoder = init_network(enc_widths, hidden_acts + ["identity"], np.random.default_rng([rng_seed, 0]))
    decoder = init_network(dec_widths, hidden_acts + ["identity"], np.random.default_rng([rng_seed, 3]))
    return Vae(encoder, decoder, latent_dim)


def _elbo_builder(vae: Vae):
    def build(graph: Graph, params: list[int], xb: np.ndarray, yb: np.ndarray, rng: np.random.Generator) -> int:
        enc_params, dec_params = vae._split(params)
        x = graph.constant(xb)
        mu_z, logvar_z = vae.build_encode(graph, x, enc_params)
        eps = rng.standard_normal(graph.value(mu_z).shape)
        z = vae.build_sample(graph, mu_z, logvar_z, eps)
        mu_x, sigma_x = vae.build_decode(graph, z, dec_params)
        kl_terms = graph.sub(graph.add(graph.square(mu_z), graph.exp(logvar_z)), logvar_z)
        kl = graph.add(graph.scale(graph.reduce_sum(kl_terms), 0.5), graph.constant(-0.5 * graph.value(mu_z).size))
        nll = graph.neg(graph.gaussian_log_density(x, mu_x, sigma_x))
        return graph.scale(graph.add(kl, nll), 1.0 / xb.shape[0])

    return build


@log_operation("train_vae")
def train_vae(
    train: Dataset,
    hidden: Sequence[int],
    cfg: TrainConfig,
    latent_dim: int = 16,
    trainer: Trainer | None = None,
) -> Vae:
    """Minimise the negative ELBO with reparameterized single-sample estimates."""

    vae = init_vae(train.dim, hidden, latent_dim, cfg.rng_seed)
    if cfg.epochs == 0 or len(train) == 0:
        return vae
    trainer = trainer or Trainer(cfg, stage="train_vae")
    params = trainer.fit(vae.parameters, _elbo_builder(vae), train.inputs, train.labels)
    return vae.with_parameters(params)


def _score(vae: Vae, x: np.ndarray, rng: np.random.Generator, num_samples: int) -> float:
    mu_z, logvar_z = vae.encode(x)
    eps = rng.standard_normal((num_samples, vae.latent_dim))
    z = mu_z + np.exp(0.5 * logvar_z) * eps
    mu_x, sigma_x = vae.decode(z)
    score = float(np.mean(log_normal(x, mu_x, sigma_x)))
    if not np.isfinite(score):
        raise NumericError("Reconstruction probability is not finite", operation="reconstruction_probability")
    return score


def _check_input(vae: Vae, x: np.ndarray) -> np.ndarray:
    array = np.asarray(x, dtype=np.float64)
    if array.shape != (vae.input_dim,):
        raise ShapeError("Input does not match VAE", array.shape, (vae.input_dim,), operation="reconstruction_probability")
    return array


def reconstruction_probability(vae: Vae, x: np.ndarray, cfg: ReconProbConfig, index: int = 0) -> float:
    """Mean log-density of ``x`` over L decoder distributions (log space).

    ``index`` selects the per-input random stream (seed, index).
    """

    rng = np.random.default_rng([cfg.rng_seed, index])
    return _score(vae, _check_input(vae, x), rng, cfg.num_samples)


def reconstruction_scores(vae: Vae, xs: np.ndarray, cfg: ReconProbConfig) -> np.ndarray:
    inputs = np.asarray(xs, dtype=np.float64).reshape(-1, vae.input_dim)
    return np.array([reconstruction_probability(vae, x, cfg, index) for index, x in enumerate(inputs)])


@dataclass(frozen=True)
class ValidityThreshold:
    alpha: float
    f_measure: float
    precision: float
    recall: float
    valid_set: str
    invalid_set: str
    false_positive_rate: float = 0.0
    false_negative_rate: float = 0.0
    separable: bool = True

    def to_bytes(self) -> bytes:
        return dump_document(ThresholdDocument(**asdict(self)).model_dump())

    @classmethod
    def from_bytes(cls, data: bytes, file_path: str | None = None) -> "ValidityThreshold":
        return cls(**parse_document(data, ThresholdDocument, file_path).model_dump())


def _harmonic(precision: np.ndarray, recall: np.ndarray) -> np.ndarray:
    total = precision + recall
    return np.where(total > 0, 2.0 * precision * recall / np.where(total > 0, total, 1.0), 0.0)


@log_operation("calibrate_threshold")
def calibrate_threshold(
    valid_scores: Sequence[float],
    invalid_scores: Sequence[float],
    valid_set: str = "valid",
    invalid_set: str = "invalid",
) -> ValidityThreshold:
    """Pick alpha maximising the F-measure of "invalid <=> score < alpha".

    Candidates are the distinct observed scores; ties go to the smaller alpha.
    """

    valid = np.sort(np.asarray(valid_scores, dtype=np.float64))
    invalid = np.sort(np.asarray(invalid_scores, dtype=np.float64))
    if valid.size == 0 or invalid.size == 0:
        raise ContractViolation("Both score lists must be nonempty", operation="calibrate_threshold")
    if not (np.all(np.isfinite(valid)) and np.all(np.isfinite(invalid))):
        raise NumericError("Calibration scores must be finite", operation="calibrate_threshold")
    candidates = np.unique(np.concatenate([valid, invalid]))
    if candidates.size == 1:
        raise DegenerateCalibrationError("All calibration scores are identical", operation="calibrate_threshold")

    true_pos = np.searchsorted(invalid, candidates, side="left").astype(np.float64)
    false_pos = np.searchsorted(valid, candidates, side="left").astype(np.float64)
    flagged = true_pos + false_pos
    precision = np.where(flagged > 0, true_pos / np.where(flagged > 0, flagged, 1.0), 0.0)
    recall = true_pos / invalid.size
    f_measure = _harmonic(precision, recall)
    best = int(np.argmax(f_measure))

    invalid_share = invalid.size / (invalid.size + valid.size)
    trivial = 2.0 * invalid_share / (1.0 + invalid_share)
    threshold = ValidityThreshold(
        alpha=float(candidates[best]),
        f_measure=float(f_measure[best]),
        precision=float(precision[best]),
        recall=float(recall[best]),
        valid_set=valid_set,
        invalid_set=invalid_set,
        false_positive_rate=float(false_pos[best] / valid.size),
        false_negative_rate=float((invalid.size - true_pos[best]) / invalid.size),
        separable=bool(f_measure[best] >= trivial + SEPARATION_MARGIN),
    )
    logger.info("Calibrated validity threshold", alpha=threshold.alpha, f_measure=threshold.f_measure)
    if not threshold.separable:
        logger.warning("Calibration sets are not separated by the VAE score", f_measure=threshold.f_measure)
    return threshold


def classify_score(score: float, threshold: ValidityThreshold) -> Validity:
    return Validity.INVALID if score < threshold.alpha else Validity.VALID


def classify(vae: Vae, threshold: ValidityThreshold, x: np.ndarray, cfg: ReconProbConfig) -> Validity:
    return classify_score(reconstruction_probability(vae, x, cfg), threshold)


class InputValidator:
    """A trained VAE paired with its calibrated threshold."""

    def __init__(self, vae: Vae, threshold: ValidityThreshold, cfg: ReconProbConfig | None = None):
        self.vae = vae
        self.threshold = threshold
        self.cfg = cfg or ReconProbConfig()

    def score(self, x: np.ndarray) -> float:
        return reconstruction_probability(self.vae, x, self.cfg)

    def classify(self, x: np.ndarray) -> Validity:
        return classify_score(self.score(x), self.threshold)


def save_vae(vae: Vae) -> bytes:
    document = VaeDocument(
        latent_dim=vae.latent_dim,
        encoder=network_to_document(vae.encoder),
        decoder=network_to_document(vae.decoder),
    )
    return dump_document(document.model_dump())


def load_vae(data: bytes, file_path: str | None = None) -> Vae:
    document = parse_document(data, VaeDocument, file_path)
    encoder = network_from_document(document.encoder, "encoder.", file_path)
    decoder = network_from_document(document.decoder, "decoder.", file_path)
    try:
        return Vae(encoder, decoder, document.latent_dim)
    except ShapeError as exc:
        raise LayerShapeError(exc.message, "latent_dim", file_path) from exc
