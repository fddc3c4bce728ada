'''
File holding the two-layer perceptron trained by every simulated client, its optimizers and the
minibatch training loop. Parameters are kept as the list [W1, b1, W2, b2] so that they flatten
into a ModelVector with one layer span per weight array.
'''
from __future__ import annotations

import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from model_core import ModelVector, flatten, unflatten
from uni_chars import *

Params = List[np.ndarray]


class OptimizerKind(Enum):
    SGD = 'sgd'
    ADAM = 'adam'

    @staticmethod
    def from_name(name: str) -> OptimizerKind:
        for kind in OptimizerKind:
            if kind.value == name:
                return kind
        raise ValueError(f"{ERROR} Unknown optimizer '{name}'")


class OptimizerSpec:
    def __init__(self, kind: OptimizerKind = OptimizerKind.ADAM, learning_rate: float = 0.001) -> None:
        if learning_rate <= 0:
            raise ValueError(f"{ERROR} Learning rate must be positive, got {learning_rate}")
        self.kind = kind
        self.learning_rate = float(learning_rate)

    def build(self):
        if self.kind == OptimizerKind.SGD:
            return Sgd(self.learning_rate)
        return Adam(self.learning_rate)

    def __str__(self) -> str:
        return f"{self.kind.value}(lr={self.learning_rate})"

    def __repr__(self) -> str:
        return self.__str__()


class Sgd:
    def __init__(self, learning_rate: float) -> None:
        self.learning_rate = learning_rate

    def step(self, params: Params, grads: Params) -> None:
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class Adam:
    '''
    Adam with bias-corrected moments, state is created lazily on the first step.
    '''

    def __init__(self, learning_rate: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[Params] = None
        self.v: Optional[Params] = None

    def step(self, params: Params, grads: Params) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def init_params(inputs: int, hidden: int, classes: int, rng: np.random.Generator) -> Params:
    '''
    He-uniform weights and zero biases.
    '''
    limit1 = math.sqrt(6.0 / inputs)
    limit2 = math.sqrt(6.0 / hidden)
    return [rng.uniform(-limit1, limit1, size=(inputs, hidden)), np.zeros(hidden),
            rng.uniform(-limit2, limit2, size=(hidden, classes)), np.zeros(classes)]


def initial_model(inputs: int, hidden: int, classes: int, rng: np.random.Generator) -> ModelVector:
    return flatten(init_params(inputs, hidden, classes, rng))


def params_of(model: ModelVector) -> Params:
    if model.layer_count != 4:
        raise ValueError(f"{ERROR} Expected the 4 weight arrays of the perceptron, got {model.layer_count}")
    return unflatten(model)


def forward(params: Params, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    w1, b1, w2, b2 = params
    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ w2 + b2
    return logits, hidden, pre


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def loss_and_grads(params: Params, x: np.ndarray, y: np.ndarray) -> Tuple[float, Params]:
    '''
    Mean cross-entropy of the batch and its gradients with respect to [W1, b1, W2, b2].
    '''
    _, _, w2, _ = params
    logits, hidden, pre = forward(params, x)
    probabilities = _softmax(logits)
    rows = np.arange(y.size)
    loss = -float(np.mean(np.log(np.maximum(probabilities[rows, y], 1e-300))))

    d_logits = probabilities
    d_logits[rows, y] -= 1.0
    d_logits /= y.size
    d_hidden = (d_logits @ w2.T) * (pre > 0)
    return loss, [x.T @ d_hidden, d_hidden.sum(axis=0), hidden.T @ d_logits, d_logits.sum(axis=0)]


def predict(params: Params, x: np.ndarray) -> np.ndarray:
    logits, _, _ = forward(params, x)
    return np.argmax(logits, axis=1)


def error_rate(model: ModelVector, x: np.ndarray, y: np.ndarray) -> float:
    '''
    Fraction of misclassified examples, 0 for an empty set.
    '''
    if y.size == 0:
        return 0.0
    return float(np.mean(predict(params_of(model), x) != y))


def train(params: Params, x: np.ndarray, y: np.ndarray, epochs: int, optimizer, batch_size: int,
          rng: np.random.Generator) -> List[float]:
    '''
    Minibatch training in place, the example order is reshuffled from `rng` every epoch.

    :return: Mean batch loss of every epoch.
    '''
    losses: List[float] = []
    if y.size == 0:
        return losses
    for _ in range(epochs):
        order = rng.permutation(y.size)
        total, batches = 0.0, 0
        for start in range(0, y.size, batch_size):
            batch = order[start:start + batch_size]
            loss, grads = loss_and_grads(params, x[batch], y[batch])
            optimizer.step(params, grads)
            total += loss
            batches += 1
        losses.append(total / batches)
    return losses
