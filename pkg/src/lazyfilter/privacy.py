"""Local DP mechanisms: clipped Gaussian noise for shared head updates and
permanent randomized response for ±1 votes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lazyfilter.errors import InvalidInput


@dataclass(frozen=True)
class GradientNoiseConfig:
    clip_threshold: float = 1.0
    noise_multiplier: float = 0.0

    def __post_init__(self):
        if not self.clip_threshold > 0:
            raise InvalidInput("clip_threshold must be positive")
        if not self.noise_multiplier >= 0:
            raise InvalidInput("noise_multiplier must be non-negative")


def clip_and_noise(delta, cfg: GradientNoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Scale ``delta`` into the L2 ball of radius clip, then add N(0, (sigma*clip)^2) per coordinate."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size == 0:
        raise InvalidInput("empty update")
    if not np.all(np.isfinite(delta)):
        raise InvalidInput("non-finite update")
    norm = np.linalg.norm(delta)
    clipped = delta * min(1.0, cfg.clip_threshold / norm) if norm > 0 else delta.copy()
    if cfg.noise_multiplier == 0:
        return clipped
    return clipped + rng.normal(0.0, cfg.noise_multiplier * cfg.clip_threshold, size=delta.shape)


def epsilon_from_p(p: float) -> float:
    """Worst-case epsilon of randomized response with flip mass ``p``.

    ``p == 0`` releases the truth and returns ``math.inf``.
    """
    if not 0 <= p <= 1:
        raise InvalidInput(f"p must lie in [0, 1], got {p}")
    if p == 0:
        return math.inf
    half = p / 2
    return 2.0 * math.log((1.0 - half) / half)


def p_from_epsilon(epsilon: float) -> float:
    if not epsilon >= 0:
        raise InvalidInput(f"epsilon must be non-negative, got {epsilon}")
    if math.isinf(epsilon):
        return 0.0
    return 2.0 / (1.0 + math.exp(epsilon / 2.0))


@dataclass
class VotePrivacy:
    """One tester's flip mass and its memo of released values.

    The memo is keyed by ``(contributor_id, true_sign)``; an entry, once
    written, is returned unchanged for every later report.
    """

    p: float
    memo: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise InvalidInput(f"p must lie in [0, 1], got {self.p}")

    @property
    def epsilon(self) -> float:
        return epsilon_from_p(self.p)


def randomized_response(v: int, priv: VotePrivacy, contributor_id, rng: np.random.Generator) -> int:
    if v not in (1, -1):
        raise InvalidInput(f"vote must be +1 or -1, got {v}")
    key = (contributor_id, v)
    if key in priv.memo:
        return priv.memo[key]
    u = rng.random()
    if u < priv.p / 2:
        out = 1
    elif u < priv.p:
        out = -1
    else:
        out = v
    priv.memo[key] = out
    return out
