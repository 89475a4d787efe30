"""scikit-learn style wrapper around a conditional coupling flow.

The condition embeddings play the role that ``y`` plays for supervised
transformers: they are required by ``fit`` and by every method that maps
data, so the signatures are ``fit(X, G)``, ``transform(X, G)`` and so on.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .condnet import FlowArch
from .flowcore import FlowStack
from .synthdata import DatasetSpec
from .trainer import TrainConfig, fit_arrays, fresh_checkpoint, log_likelihood


class ConditionalFlow(TransformerMixin, BaseEstimator):
    """Conditional normalizing flow trained by exact maximum likelihood.

    Parameters
    ----------
    mode : {"snac", "baseline"}
        ``"snac"`` normalizes by condition-predicted statistics inside each
        coupling layer; ``"baseline"`` feeds the embedding to the scale/bias
        network instead.
    n_layers, hidden, depth, clamp :
        Architecture, see :class:`snacflow.condnet.FlowArch`.
    learning_rate, batch_size, max_steps :
        Adam step size, minibatch size and number of updates.
    random_state : int
        Seed for initialization and minibatch sampling.

    Attributes
    ----------
    stack_ : FlowStack
    checkpoint_ : Checkpoint
    n_features_in_ : int
    n_frames_ : int
    embed_dim_ : int
    """

    def __init__(self, mode="snac", n_layers=4, hidden=64, depth=2, clamp=4.0,
                 learning_rate=1e-3, batch_size=64, max_steps=2000, random_state=0):
        self.mode = mode
        self.n_layers = n_layers
        self.hidden = hidden
        self.depth = depth
        self.clamp = clamp
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.random_state = random_state

    def _validate(self, X, G, *, reset=False):
        X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_features=2)
        if X.ndim == 2:
            X = X[:, None, :]
        elif X.ndim != 3:
            raise ValueError(f"X must be (n, D) or (n, T, D), got shape {X.shape}")
        G = check_array(G, dtype=np.float64)
        if len(G) != len(X):
            raise ValueError(f"X has {len(X)} rows but G has {len(G)}")
        if reset:
            self.n_features_in_ = X.shape[-1]
            self.n_frames_ = X.shape[1]
            self.embed_dim_ = G.shape[1]
        else:
            if X.shape[-1] != self.n_features_in_:
                raise ValueError(f"X has {X.shape[-1]} channels, expected {self.n_features_in_}")
            if G.shape[1] != self.embed_dim_:
                raise ValueError(f"G has {G.shape[1]} columns, expected {self.embed_dim_}")
        return X, G

    def _reshape_out(self, out, like):
        return out[:, 0, :] if np.ndim(like) == 2 else out

    def fit(self, X, G):
        X, G = self._validate(X, G, reset=True)
        config = TrainConfig(mode=self.mode, n_layers=self.n_layers, hidden=self.hidden,
                             depth=self.depth, clamp=self.clamp,
                             learning_rate=self.learning_rate, batch_size=self.batch_size,
                             steps=self.max_steps, seed=int(self.random_state), eval_every=0)
        data = DatasetSpec(channels=self.n_features_in_, frames=self.n_frames_,
                           embed_dim=self.embed_dim_, n_seen=0, n_unseen=0)
        self.checkpoint_ = fit_arrays(fresh_checkpoint(config, data), X, G)
        self.stack_ = self.checkpoint_.stack()
        self.history_ = [row["train_nll"] for row in self.checkpoint_.history]
        return self

    def fit_transform(self, X, G, **fit_params):
        return self.fit(X, G, **fit_params).transform(X, G)

    def transform(self, X, G):
        """Latent codes ``z = f(x; g)``, same shape as ``X``."""
        check_is_fitted(self, "stack_")
        X3, G = self._validate(X, G)
        return self._reshape_out(self.stack_.forward(X3, G)[0], X)

    def inverse_transform(self, Z, G):
        check_is_fitted(self, "stack_")
        Z3, G = self._validate(Z, G)
        return self._reshape_out(self.stack_.inverse(Z3, G), Z)

    def score_samples(self, X, G):
        """Log-likelihood of each observation under its condition."""
        check_is_fitted(self, "stack_")
        X, G = self._validate(X, G)
        return log_likelihood(self.stack_, X, G)

    def score(self, X, G):
        return float(np.mean(self.score_samples(X, G)))

    def sample(self, G, random_state=None):
        """One observation per row of ``G``, shaped ``(n, D)`` or ``(n, T, D)``."""
        check_is_fitted(self, "stack_")
        G = check_array(G, dtype=np.float64)
        rng = np.random.default_rng(random_state)
        z = rng.standard_normal((len(G), self.n_frames_, self.n_features_in_))
        x = self.stack_.inverse(z, G)
        return x[:, 0, :] if self.n_frames_ == 1 else x

    @property
    def arch_(self) -> FlowArch:
        check_is_fitted(self, "stack_")
        return self.stack_.arch

    def __sklearn_is_fitted__(self):
        return hasattr(self, "stack_") and isinstance(self.stack_, FlowStack)
