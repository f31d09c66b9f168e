"""Pinned pseudo-random streams

Every stream is numpy's Philox counter-based generator keyed by an integer
seed sequence, and normal variates come from the inverse normal CDF of
uniforms, so generated data does not depend on numpy's sampling algorithms.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

# Stream tags mixed into per-video seed sequences
GROUND_TRUTH = 0
DETECTIONS = 1
FEATURES = 2
PREDICTIONS = 3

_UNIT_MARGIN = 2.0**-53


def seeded_generator(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def standard_normal(rng: np.random.Generator, size=None):
    u = rng.random(size)
    return ndtri(np.clip(u, _UNIT_MARGIN, 1.0 - _UNIT_MARGIN))


def normal(rng: np.random.Generator, loc: float, scale: float, size=None):
    return loc + scale * standard_normal(rng, size)


def log_uniform(rng: np.random.Generator, low: float, high: float, size=None):
    return np.exp(rng.uniform(np.log(low), np.log(high), size))
