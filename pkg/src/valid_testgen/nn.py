"""Dense feed-forward networks, their training loop and the JSON model format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from pydantic import ValidationError

from .autodiff import Graph, Tensor, as_tensor, softmax
from .data_io import Dataset
from .errors import ContractViolation, LayerShapeError, ModelFormatError, NumericError, ShapeError, TrainingError
from .models import NetworkDocument, TrainConfig
from .tools import get_logger, log_operation

logger = get_logger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "identity", "softmax")

# (graph, parameter node ids, batch inputs, batch labels, rng) -> scalar loss node
LossBuilder = Callable[[Graph, list[int], np.ndarray, np.ndarray, np.random.Generator], int]


@dataclass(frozen=True)
class DenseLayer:
    weights: Tensor  # [out x in]
    bias: Tensor  # [out]
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ContractViolation("Unknown activation", operation="dense_layer", activation=self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("Weights and bias disagree", self.weights.shape, self.bias.shape, operation="dense_layer")

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[0])

    def pre_activation(self, inputs: np.ndarray) -> np.ndarray:
        return inputs @ self.weights.T + self.bias

    def apply(self, pre: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(pre, 0.0)
        if self.activation == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * pre))
        if self.activation == "softmax":
            return softmax(pre)
        return pre


@dataclass(frozen=True)
class Network:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ContractViolation("Network needs at least one layer", operation="network")
        for index, (current, following) in enumerate(zip(self.layers, self.layers[1:])):
            if current.out_dim != following.in_dim:
                raise ShapeError(
                    f"Layer {index} output does not feed layer {index + 1}",
                    (current.out_dim,),
                    (following.in_dim,),
                    operation="network",
                )
        if any(layer.activation == "softmax" for layer in self.layers[:-1]):
            raise ContractViolation("softmax is only allowed on the final layer", operation="network")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.layers)

    @property
    def parameters(self) -> list[np.ndarray]:
        return [array for layer in self.layers for array in (layer.weights, layer.bias)]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        array = np.asarray(x, dtype=np.float64)
        if array.shape[-1:] != (self.input_dim,) or array.ndim > 2:
            raise ShapeError("Input does not match network", array.shape, (self.input_dim,), operation="network_input")
        return array

    def coverage_activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Per-layer neuron values used for coverage.

        Hidden layers report post-activation outputs; a final softmax layer
        reports its logits instead.
        """

        values = []
        current = self._check_input(x)
        for layer in self.layers:
            pre = layer.pre_activation(current)
            current = layer.apply(pre)
            values.append(pre if layer.activation == "softmax" else current)
        return values

    def logits(self, x: np.ndarray) -> np.ndarray:
        current = self._check_input(x)
        for layer in self.layers[:-1]:
            current = layer.apply(layer.pre_activation(current))
        return self.layers[-1].pre_activation(current)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.layers[-1].apply(self.logits(x))

    def build(self, graph: Graph, x: int, params: Sequence[int] | None = None) -> tuple[list[int], int]:
        """Append this network to ``graph``.

        Returns the coverage node of every layer (logits for a softmax layer)
        and the output node. ``params`` are (weights, bias) node ids per layer;
        when omitted the current weights enter the graph as constants.
        """

        coverage_nodes = []
        current = x
        for index, layer in enumerate(self.layers):
            if params is None:
                weights_t = graph.constant(layer.weights.T)
                bias = graph.constant(layer.bias)
            else:
                weights_t = graph.transpose(params[2 * index])
                bias = params[2 * index + 1]
            pre = graph.add(graph.matmul(current, weights_t), bias)
            if layer.activation == "relu":
                current = graph.relu(pre)
            elif layer.activation == "sigmoid":
                current = graph.sigmoid(pre)
            elif layer.activation == "softmax":
                coverage_nodes.append(pre)
                current = graph.softmax(pre)
                continue
            else:
                current = pre
            coverage_nodes.append(current)
        return coverage_nodes, current

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "Network":
        layers = tuple(
            DenseLayer(as_tensor(arrays[2 * i]), as_tensor(arrays[2 * i + 1]), layer.activation)
            for i, layer in enumerate(self.layers)
        )
        return Network(layers)


def init_network(widths: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> Network:
    """Glorot-uniform weights, zero biases. ``widths`` includes the input width."""

    if len(activations) != len(widths) - 1:
        raise ContractViolation("One activation per layer is required", operation="init_network")
    layers = []
    for fan_in, fan_out, activation in zip(widths, widths[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(as_tensor(weights), as_tensor(np.zeros(fan_out)), activation))
    return Network(tuple(layers))


def classifier_activations(widths: Sequence[int], hidden_activation: str = "relu") -> list[str]:
    return [hidden_activation] * (len(widths) - 2) + ["softmax"]


class Optimizer:
    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        raise NotImplementedError


class Sgd(Optimizer):
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        return [p - self.learning_rate * g for p, g in zip(params, grads)]


class Adam(Optimizer):
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.m is None or self.v is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        updated = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**self.t)
            v_hat = self.v[i] / (1.0 - self.beta2**self.t)
            updated.append(p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


def make_optimizer(cfg: TrainConfig) -> Optimizer:
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


class Trainer:
    """Mini-batch gradient descent over a loss built on a fresh tape per batch."""

    def __init__(self, cfg: TrainConfig, stage: str = "train"):
        self.cfg = cfg
        self.stage = stage
        self.epoch_losses: list[float] = []

    def fit(
        self,
        params: list[np.ndarray],
        loss_builder: LossBuilder,
        inputs: np.ndarray,
        labels: np.ndarray,
    ) -> list[np.ndarray]:
        cfg = self.cfg
        optimizer = make_optimizer(cfg)
        shuffle_rng = np.random.default_rng([cfg.rng_seed, 1])
        noise_rng = np.random.default_rng([cfg.rng_seed, 2])
        params = [np.array(p, dtype=np.float64) for p in params]
        count = inputs.shape[0]
        self.epoch_losses = []
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(count)
            total = 0.0
            for start in range(0, count, cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                graph = Graph()
                try:
                    param_nodes = [graph.input(p) for p in params]
                    loss = loss_builder(graph, param_nodes, inputs[batch], labels[batch], noise_rng)
                    value = float(graph.value(loss))
                except NumericError as exc:
                    raise TrainingError(f"Training diverged: {exc.message}", epoch=epoch, stage=self.stage) from exc
                if not np.isfinite(value):
                    raise TrainingError("Training loss is NaN", epoch=epoch, stage=self.stage)
                params = optimizer.step(params, graph.gradients(loss, param_nodes))
                total += value * len(batch)
            epoch_loss = total / max(count, 1)
            self.epoch_losses.append(epoch_loss)
            logger.debug("Epoch finished", stage=self.stage, epoch=epoch, loss=epoch_loss)
        if self.epoch_losses:
            logger.info("Training finished", stage=self.stage, epoch=cfg.epochs, loss=self.epoch_losses[-1])
        return params


def _cross_entropy_builder(network: Network) -> LossBuilder:
    def build(graph: Graph, params: list[int], xb: np.ndarray, yb: np.ndarray, rng: np.random.Generator) -> int:
        coverage_nodes, _ = network.build(graph, graph.constant(xb), params)
        return graph.softmax_cross_entropy(coverage_nodes[-1], yb)

    return build


@log_operation("train_classifier")
def train_classifier(
    train: Dataset,
    arch: Sequence[int],
    cfg: TrainConfig,
    hidden_activation: str = "relu",
    trainer: Trainer | None = None,
) -> Network:
    """Train a softmax classifier with layer widths ``arch`` (input width first)."""

    if arch[0] != train.dim or arch[-1] < train.num_classes:
        raise ShapeError("Architecture does not fit dataset", tuple(arch), (train.dim, train.num_classes), operation="train_classifier")
    rng = np.random.default_rng([cfg.rng_seed, 0])
    network = init_network(arch, classifier_activations(arch, hidden_activation), rng)
    if cfg.epochs == 0 or len(train) == 0:
        return network
    trainer = trainer or Trainer(cfg, stage="train_classifier")
    params = trainer.fit(network.parameters, _cross_entropy_builder(network), train.inputs, train.labels)
    return network.with_parameters(params)


def predict(net: Network, x: np.ndarray) -> tuple[int, Tensor]:
    """Label and class probabilities for one input; ties go to the lowest index."""

    array = np.asarray(x, dtype=np.float64)
    if array.shape != (net.input_dim,):
        raise ShapeError("Input does not match network", array.shape, (net.input_dim,), operation="predict")
    probabilities = softmax(net.logits(array))
    return int(np.argmax(probabilities)), as_tensor(probabilities)


def predict_labels(net: Network, xs: np.ndarray) -> np.ndarray:
    return np.argmax(net.logits(np.atleast_2d(xs)), axis=1)


def accuracy(net: Network, xs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict_labels(net, xs) == labels))


def network_to_document(net: Network) -> NetworkDocument:
    return NetworkDocument(
        input_dim=net.input_dim,
        layers=[
            {"activation": layer.activation, "weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
            for layer in net.layers
        ],
    )


def network_from_document(document: NetworkDocument, prefix: str = "", file_path: str | None = None) -> Network:
    layers = []
    width = document.input_dim
    for index, layer in enumerate(document.layers):
        path = f"{prefix}layers.{index}"
        rows = len(layer.weights)
        if rows == 0 or any(len(row) != width for row in layer.weights):
            raise LayerShapeError(f"Weights must be [out x {width}]", f"{path}.weights", file_path)
        if len(layer.bias) != rows:
            raise LayerShapeError(f"Bias must have {rows} entries", f"{path}.bias", file_path)
        try:
            layers.append(DenseLayer(as_tensor(layer.weights), as_tensor(layer.bias), layer.activation))
        except NumericError as exc:
            raise ModelFormatError("Non-finite weight", path, file_path) from exc
        width = rows
    try:
        return Network(tuple(layers))
    except ContractViolation as exc:
        raise ModelFormatError(exc.message, f"{prefix}layers", file_path) from exc


def dump_document(document: dict) -> bytes:
    return json.dumps(document, allow_nan=False).encode("utf-8")


def parse_document(data: bytes, schema, file_path: str | None = None):
    """Decode JSON bytes into ``schema`` or raise ModelFormatError with a field path."""

    try:
        raw = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"Invalid JSON: {exc}", "$", file_path) from exc
    try:
        return schema.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "$"
        raise ModelFormatError(first["msg"], path, file_path) from exc


def save_model(net: Network) -> bytes:
    return dump_document(network_to_document(net).model_dump())


def load_model(data: bytes, file_path: str | None = None) -> Network:
    return network_from_document(parse_document(data, NetworkDocument, file_path), file_path=file_path)


