"""Non-negative matrix factorization by multiplicative updates.

All routines operate on the last two dimensions, so a stack of problems
``V`` shaped ``(..., d, hw)`` is factorized independently per leading index
with ``D`` shaped ``(..., d, r)`` and ``C`` shaped ``(..., r, hw)``.

The differentiable entry point is :func:`one_step_grad_boundary`: the solver
runs ``iters - 1`` updates without recording a graph and only the last
update (plus the product ``D @ C``) is differentiated.
"""

from dataclasses import dataclass, replace

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ConfigurationError, InputError, check_positive_int


@dataclass
class FactorState:
    D: torch.Tensor
    C: torch.Tensor
    iteration: int = 0

    def reconstruct(self):
        return self.D @ self.C

    def detach(self):
        return FactorState(self.D.detach(), self.C.detach(), self.iteration)


@dataclass(frozen=True)
class NMFConfig:
    rank: int = 1
    iters: int = 6
    eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.rank, "rank")
        check_positive_int(self.iters, "iters")
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")

    def with_rank(self, rank):
        return replace(self, rank=rank)


def _generator(rng, seed):
    if isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(seed if rng is None else rng))
    return g


def init_factors(d, hw, rank, rng=None, *, batch_shape=(), dtype=torch.float32):
    """Draw half-normal factors ``|N(0, 1)|`` for a ``d x hw`` problem."""
    if rank < 1 or rank > min(d, hw):
        raise ConfigurationError(f"rank {rank} must lie in [1, min(d={d}, hw={hw})]")
    g = _generator(rng, 0)
    batch_shape = tuple(batch_shape)
    D = torch.randn(batch_shape + (d, rank), generator=g, dtype=dtype).abs_()
    C = torch.randn(batch_shape + (rank, hw), generator=g, dtype=dtype).abs_()
    return FactorState(D, C, 0)


def _check_nonnegative(V):
    if bool((V < 0).any()):
        raise InputError(f"NMF input must be non-negative, min entry is {V.min().item():.3g}")


def mu_step(V, state, eps=1e-6):
    """One Lee-Seung update: codes first, then dictionary.

    ``eps`` enters numerator and denominator alike, which keeps each
    half-step the exact minimizer of the usual diagonal auxiliary function:
    the Frobenius error cannot increase for any ``eps > 0`` and an exact
    factorization ``V == D @ C`` is a fixed point.
    """
    D, C = state.D, state.C
    Dt = D.transpose(-1, -2)
    C = C * (Dt @ V + eps) / (Dt @ D @ C + eps)
    Ct = C.transpose(-1, -2)
    D = D * (V @ Ct + eps) / (D @ (C @ Ct) + eps)
    return FactorState(D, C, state.iteration + 1)


def _init_for(V, config, rng):
    d, hw = V.shape[-2:]
    return init_factors(
        d, hw, config.rank, _generator(rng, config.seed), batch_shape=V.shape[:-2], dtype=V.dtype
    )


def nmf_reconstruct(V, config, rng=None):
    """Run ``config.iters`` updates from a fresh initialization.

    Returns ``(L, state)`` with ``L = D @ C``.
    """
    _check_nonnegative(V)
    state = _init_for(V, config, rng)
    for _ in range(config.iters):
        state = mu_step(V, state, config.eps)
    return state.reconstruct(), state


def truncated_prefix(V, config, rng=None):
    """Factors after the first ``iters - 1`` updates, outside the graph."""
    with torch.no_grad():
        V = V.detach()
        _check_nonnegative(V)
        state = _init_for(V, config, rng)
        for _ in range(config.iters - 1):
            state = mu_step(V, state, config.eps)
    return state


def final_step(V, prefix, eps):
    """Last update and reconstruction, recorded by autograd w.r.t. ``V``."""
    return mu_step(V, prefix.detach(), eps).reconstruct()


def one_step_grad_boundary(V, config, rng=None):
    """Low-rank reconstruction of ``V`` that differentiates only the last update."""
    return final_step(V, truncated_prefix(V, config, rng), config.eps)


def error_trajectory(V, config, rng=None):
    """Frobenius errors ``||V - D_t C_t||`` for ``t = 0 .. iters``."""
    _check_nonnegative(V)
    with torch.no_grad():
        state = _init_for(V, config, rng)
        errors = [torch.linalg.norm(V - state.reconstruct()).item()]
        for _ in range(config.iters):
            state = mu_step(V, state, config.eps)
            errors.append(torch.linalg.norm(V - state.reconstruct()).item())
    return errors, state


class MultiplicativeNMF(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``X (n_samples, n_features) ~= W @ components_``.

    Parameters
    ----------
    n_components : int
        Factorization rank.
    max_iter : int
        Number of multiplicative updates.
    eps : float
        Guard added to numerator and denominator of every update.
    random_state : int
        Seed of the half-normal initialization.

    Attributes
    ----------
    components_ : ndarray (n_components, n_features)
    errors_ : list of float
        Reconstruction error before the first and after every update.
    reconstruction_err_ : float
    n_iter_ : int
    """

    def __init__(self, n_components=2, max_iter=200, eps=1e-6, random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.eps = eps
        self.random_state = random_state

    def _config(self):
        return NMFConfig(self.n_components, self.max_iter, self.eps, self.random_state)

    def _validate(self, X):
        X = check_array(X, dtype=np.float64)
        if (X < 0).any():
            raise InputError("MultiplicativeNMF needs a non-negative X")
        return torch.from_numpy(X)

    def fit_transform(self, X, y=None):
        V = self._validate(X)
        errors, state = error_trajectory(V, self._config())
        self.components_ = state.C.numpy()
        self.errors_ = errors
        self.reconstruction_err_ = errors[-1]
        self.n_iter_ = state.iteration
        self.n_features_in_ = V.shape[1]
        return state.D.numpy()

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def transform(self, X):
        """Solve for ``W`` with the learned components held fixed."""
        check_is_fitted(self, "components_")
        V = self._validate(X)
        if V.shape[1] != self.n_features_in_:
            raise InputError(f"X has {V.shape[1]} features, expected {self.n_features_in_}")
        C = torch.from_numpy(self.components_)
        W = init_factors(V.shape[0], V.shape[1], self.n_components, self.random_state,
                         dtype=V.dtype).D
        Ct = C.T
        for _ in range(self.max_iter):
            W = W * (V @ Ct + self.eps) / (W @ (C @ Ct) + self.eps)
        return W.numpy()

    def inverse_transform(self, W):
        check_is_fitted(self, "components_")
        return np.asarray(W) @ self.components_
