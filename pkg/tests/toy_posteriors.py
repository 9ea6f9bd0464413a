"""Small duck-typed posteriors with closed-form answers, for exercising the
sampler without the full model."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from prevsynth.model import Block


@dataclass
class ToyState:
    theta: np.ndarray
    log_post: float


class _Layout:
    def __init__(self, size, blocks):
        self.size = size
        self._blocks = blocks
        self.names = [f"logit_p[{i}]" for i in range(size)]

    def blocks(self):
        return list(self._blocks)


class BetaBinomialPosterior:
    """Independent Beta(a + y, b + n - y) posteriors for ``k`` probabilities,
    sampled on the logit scale. ``joint=True`` updates them as one block."""

    def __init__(self, y, n, a=1.0, b=1.0, joint=False):
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.n = np.atleast_1d(np.asarray(n, dtype=float))
        self.a, self.b = a, b
        k = self.y.size
        if joint:
            blocks = [Block("p", np.arange(k), "alpha")]
        else:
            blocks = [Block(f"p{i}", np.array([i]), "alpha") for i in range(k)]
        self.layout = _Layout(k, blocks)
        self.tracked_names = [f"p[{i}]" for i in range(k)]

    def posterior_params(self):
        return self.a + self.y, self.b + self.n - self.y

    def evaluate(self, theta):
        theta = np.asarray(theta, dtype=float)
        a1, b1 = self.posterior_params()
        # density of logit p: Beta density times the Jacobian p(1 - p)
        lp = float(np.sum(a1 * log_expit(theta) + b1 * log_expit(-theta)))
        return ToyState(theta.copy(), lp)

    def update(self, state, block, theta):
        return self.evaluate(theta)

    def tracked(self, state):
        return expit(state.theta)

    def require_possible(self, state):
        pass
