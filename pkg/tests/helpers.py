from pathlib import Path

import numpy as np
from valid_testgen.autodiff import as_tensor
from valid_testgen.nn import DenseLayer, Network
from valid_testgen.vae import Vae, ValidityThreshold

FIXTURES = Path(__file__).parent / "fixtures"


def layer(weights, bias, activation="identity") -> DenseLayer:
    return DenseLayer(as_tensor(weights), as_tensor(bias), activation)


def constant_classifier(label: int, dim: int = 2, classes: int = 2) -> Network:
    """Softmax net that predicts ``label`` for every input."""

    bias = np.zeros(classes)
    bias[label] = 5.0
    return Network((layer(np.zeros((classes, dim)), bias, "softmax"),))


def identity_vae(dim: int = 2) -> Vae:
    """Encoder mean = x with a collapsed posterior; decoder mean = z with sigma = 1."""

    eye = np.eye(dim)
    stacked = np.vstack([eye, np.zeros((dim, dim))])
    raw_sigma = np.log(np.expm1(1.0 - 1e-3))
    encoder = Network((layer(stacked, np.concatenate([np.zeros(dim), np.full(dim, -200.0)])),))
    decoder = Network((layer(stacked, np.concatenate([np.zeros(dim), np.full(dim, raw_sigma)])),))
    return Vae(encoder, decoder, dim)


def threshold_at(alpha: float) -> ValidityThreshold:
    return ValidityThreshold(
        alpha=alpha, f_measure=1.0, precision=1.0, recall=1.0, valid_set="valid", invalid_set="invalid"
    )
