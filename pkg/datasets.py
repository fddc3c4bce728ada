'''
File responsible for the labelled datasets the simulation trains on: CSV files, the bundled
handwritten digits and seeded synthetic blobs.
'''
from __future__ import annotations

import os
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from sklearn.datasets import load_digits, make_blobs
from sklearn.model_selection import train_test_split

from uni_chars import *


class SimDataset:
    '''
    Feature matrix with integer labels in [0, num_classes).
    '''

    def __init__(self, features: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2 or features.shape[0] != labels.size:
            raise ValueError(f"{ERROR} Features {features.shape} do not match {labels.size} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"{ERROR} Labels must lie in [0, {num_classes})")
        self.features = features
        self.labels = labels
        self.num_classes = int(num_classes)

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def feature_count(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> SimDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return SimDataset(self.features[indices], self.labels[indices], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __len__(self) -> int:
        return self.size

    def __str__(self) -> str:
        return f"SimDataset({self.size} examples, {self.feature_count} features, {self.num_classes} classes)"

    def __repr__(self) -> str:
        return self.__str__()


def load_csv(path: Union[str, Path], num_classes: int = 10) -> SimDataset:
    '''
    One example per line: `label,feature_1,...,feature_d`.
    '''
    if not os.path.exists(path):
        raise FileNotFoundError(f"{ERROR} Dataset file {path} does not exist!")
    table = np.loadtxt(path, delimiter=',', ndmin=2)
    labels = table[:, 0]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{ERROR} Dataset {path} has non-integer labels")
    return SimDataset(table[:, 1:], labels.astype(np.int64), num_classes)


def digits() -> SimDataset:
    '''
    The 8x8 handwritten digits, 64 features scaled to [0, 1].
    '''
    bunch = load_digits()
    return SimDataset(bunch.data / 16.0, bunch.target, 10)


def synthetic_blobs(seed: int, num_classes: int = 10, features: int = 64, per_class: int = 120,
                    spread: float = 1.0) -> SimDataset:
    '''
    Gaussian blobs, one per class, min-max scaled to [0, 1].
    '''
    x, y = make_blobs(n_samples=num_classes * per_class, n_features=features, centers=num_classes,
                      cluster_std=spread, random_state=seed)
    low, high = x.min(axis=0), x.max(axis=0)
    x = (x - low) / np.where(high > low, high - low, 1.0)
    return SimDataset(x, y, num_classes)


def load_dataset(source: str, seed: int) -> SimDataset:
    '''
    :param source: `digits`, `blobs` or the path of a CSV file.
    '''
    if source == 'digits':
        return digits()
    if source == 'blobs':
        return synthetic_blobs(seed)
    return load_csv(source)


def split(dataset: SimDataset, test_fraction: float, seed: int) -> Tuple[SimDataset, SimDataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"{ERROR} Test fraction must lie in (0, 1), got {test_fraction}")
    train_idx, test_idx = train_test_split(np.arange(dataset.size), test_size=test_fraction, random_state=seed,
                                           stratify=dataset.labels)
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


def stamp_trigger(features: np.ndarray, trigger_size: int = 4) -> np.ndarray:
    '''
    Copy of the features with the last `trigger_size` features set to 1, the backdoor trigger.
    '''
    if not 1 <= trigger_size <= features.shape[1]:
        raise ValueError(f"{ERROR} Trigger size {trigger_size} out of range for {features.shape[1]} features")
    stamped = np.array(features)
    stamped[:, -trigger_size:] = 1.0
    return stamped


def backdoored(dataset: SimDataset, target: int, trigger_size: int = 4) -> SimDataset:
    '''
    Every example stamped with the trigger and relabelled to the target class.
    '''
    if not 0 <= target < dataset.num_classes:
        raise ValueError(f"{ERROR} Backdoor target {target} out of range")
    return SimDataset(stamp_trigger(dataset.features, trigger_size), np.full(dataset.size, target),
                      dataset.num_classes)
