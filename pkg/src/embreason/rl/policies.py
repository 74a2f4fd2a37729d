"""Desk-scale differentiable policies that stand in for a language model.

Both policies emit complete tagged responses, so they run through exactly the
same parsing and reward code as real model output. Each response is a single
decision, which makes its sequence log-probability exact.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..errors import UnparseableResponse
from ..reward import extract_choice, parse_response, parse_vector_answer
from ..templates import OPTION_LETTERS, format_state

THINK_STUB = "Compare each option with the scene and the current robot state, then pick the best match."

FeatureFn = Callable[[Any], np.ndarray]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@functools.lru_cache(maxsize=4096)
def _choice_index(text: str) -> int:
    parsed = parse_response(text)
    letter = extract_choice(parsed.answer) if parsed.valid_format else None
    if letter is None:
        raise UnparseableResponse(f"no option letter in response: {text[:80]!r}")
    return OPTION_LETTERS.index(letter)


def render_choice(k: int) -> str:
    return f"<think>{THINK_STUB}</think><answer>[[{OPTION_LETTERS[k]}]]</answer>"


@dataclass(frozen=True, eq=False)
class ToyCategoricalPolicy:
    """Linear softmax over the four MCQA options: logits = phi(q) @ W."""

    weights: np.ndarray  # (feature_dim, 4)
    feature_fn: FeatureFn

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != len(OPTION_LETTERS):
            raise ValueError(f"weights must be (d, 4), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    def with_weights(self, w: np.ndarray) -> "ToyCategoricalPolicy":
        return ToyCategoricalPolicy(w, self.feature_fn)

    def logits(self, query) -> np.ndarray:
        return np.asarray(self.feature_fn(query), dtype=float) @ self.weights

    def sample(self, query, n: int, temperature: float, rng: np.random.Generator) -> list[tuple[str, float]]:
        z = self.logits(query)
        ks = rng.choice(len(z), size=n, p=softmax(z / temperature))
        logp = log_softmax(z)
        return [(render_choice(int(k)), float(logp[k])) for k in ks]

    def greedy(self, query) -> str:
        return render_choice(int(np.argmax(self.logits(query))))

    def logprobs(self, query, responses: Sequence[str]) -> np.ndarray:
        logp = log_softmax(self.logits(query))
        return np.array([logp[_choice_index(r)] for r in responses])

    def grad_logprob(self, query, response: str) -> np.ndarray:
        """(onehot(k) - softmax(phi @ W)) placed in the column space of phi."""
        phi = np.asarray(self.feature_fn(query), dtype=float)
        g = -softmax(phi @ self.weights)
        g[_choice_index(response)] += 1.0
        return np.outer(phi, g)

    def weighted_grad(self, query, responses: Sequence[str], coefs: np.ndarray) -> np.ndarray:
        """sum_i coefs[i] * grad log pi(response_i | query)."""
        phi = np.asarray(self.feature_fn(query), dtype=float)
        p = softmax(phi @ self.weights)
        g = -np.sum(coefs) * p
        for r, c in zip(responses, coefs):
            g[_choice_index(r)] += c
        return np.outer(phi, g)


@dataclass(frozen=True, eq=False)
class ToyGaussianPolicy:
    """Isotropic-per-axis Gaussian over 3-D positions with mean phi(q) @ W.

    Log-densities are evaluated at the position as rendered in the response
    (3 decimals), so the scored and the emitted answers agree.
    """

    weights: np.ndarray  # (feature_dim, 3)
    sigma: np.ndarray  # (3,)
    feature_fn: FeatureFn

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.broadcast_to(np.asarray(self.sigma, dtype=float), (3,)).copy()
        if w.ndim != 2 or w.shape[1] != 3:
            raise ValueError(f"weights must be (d, 3), got {w.shape}")
        if not np.all(s > 0):
            raise ValueError("sigma must be > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigma", s)

    def with_weights(self, w: np.ndarray) -> "ToyGaussianPolicy":
        return ToyGaussianPolicy(w, self.sigma, self.feature_fn)

    def mean(self, query) -> np.ndarray:
        return np.asarray(self.feature_fn(query), dtype=float) @ self.weights

    @staticmethod
    def _position(response: str) -> np.ndarray:
        parsed = parse_response(response)
        pos = parse_vector_answer(parsed.answer) if parsed.valid_format else None
        if pos is None:
            raise UnparseableResponse(f"no position in response: {response[:80]!r}")
        return pos.as_array()

    def _render(self, x: np.ndarray) -> str:
        return f"<think>{THINK_STUB}</think><answer>{format_state(x)}</answer>"

    def _logpdf(self, mu: np.ndarray, x: np.ndarray) -> float:
        z = (x - mu) / self.sigma
        return float(np.sum(-0.5 * z * z - np.log(self.sigma)) - 1.5 * math.log(2 * math.pi))

    def sample(self, query, n: int, temperature: float, rng: np.random.Generator) -> list[tuple[str, float]]:
        mu = self.mean(query)
        xs = mu + math.sqrt(temperature) * self.sigma * rng.standard_normal((n, 3))
        out = []
        for x in xs:
            text = self._render(x)
            out.append((text, self._logpdf(mu, self._position(text))))
        return out

    def greedy(self, query) -> str:
        return self._render(self.mean(query))

    def logprobs(self, query, responses: Sequence[str]) -> np.ndarray:
        mu = self.mean(query)
        return np.array([self._logpdf(mu, self._position(r)) for r in responses])

    def grad_logprob(self, query, response: str) -> np.ndarray:
        phi = np.asarray(self.feature_fn(query), dtype=float)
        x = self._position(response)
        return np.outer(phi, (x - phi @ self.weights) / self.sigma**2)

    def weighted_grad(self, query, responses: Sequence[str], coefs: np.ndarray) -> np.ndarray:
        phi = np.asarray(self.feature_fn(query), dtype=float)
        mu = phi @ self.weights
        g = np.zeros(3)
        for r, c in zip(responses, coefs):
            g += c * (self._position(r) - mu) / self.sigma**2
        return np.outer(phi, g)


Policy = ToyCategoricalPolicy | ToyGaussianPolicy


def toy_generate(policy: Policy, query, n: int, temperature: float, seed) -> list[tuple[str, float]]:
    """Sample ``n`` responses at ``temperature``.

    The returned log-probabilities are under the temperature-1 policy, which
    is what the training objective measures.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return policy.sample(query, n, temperature, np.random.default_rng(seed))


def toy_grad_logprob(policy: Policy, query, response: str) -> np.ndarray:
    return policy.grad_logprob(query, response)


def one_hot_features(keys: Sequence[str]) -> FeatureFn:
    """Feature map giving each known key its own indicator dimension.

    Queries may be the key itself or any object with an ``id`` attribute.
    """
    index = {k: i for i, k in enumerate(keys)}
    eye = np.eye(len(keys))

    def phi(query) -> np.ndarray:
        key = query if isinstance(query, str) else query.id
        return eye[index[key]]

    return phi
