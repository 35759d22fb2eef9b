"""Base learners for outcome regression.

Three interchangeable estimators with the sklearn fit/predict/get_params
surface: ordinary least squares (minimum-norm under rank deficiency), a
from-scratch bagged CART forest, and a stacked ensemble that weights its
members on the simplex by out-of-fold squared error. A constant predictor is
included for robustness checks: conformal validity does not depend on model
quality, only interval length does.

Every fit is a deterministic function of (data, hyperparameters, seed).
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone

from . import _tree
from .errors import DimensionMismatch, EmptyTrainingSet, TooFewSamples
from .rng import derive_seed, generator

_MAX_SEED = 2**63 - 1


def as_float_matrix(X) -> np.ndarray:
    """Validate and convert features to a 2-D float64 array."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def as_float_vector(y, n_rows: int | None = None) -> np.ndarray:
    """Validate and convert targets to a 1-D float64 array matching n_rows."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"targets must be 1-D, got shape {arr.shape}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise DimensionMismatch(f"{arr.shape[0]} targets for {n_rows} feature rows")
    return np.ascontiguousarray(arr)


def _check_fitted_width(model, X: np.ndarray) -> None:
    expected = getattr(model, "n_features_", None)
    if expected is not None and X.shape[1] != expected:
        raise DimensionMismatch(f"model fitted with p={expected}, got p={X.shape[1]}")


class OlsModel(BaseEstimator, RegressorMixin):
    """Least squares with intercept; minimum-norm solution when rank deficient.

    Attributes
    ----------
    coef_ : ndarray of shape (p + 1,)
        Intercept first, then one slope per feature column.
    """

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y, X.shape[0])
        if X.shape[0] == 0:
            raise EmptyTrainingSet("fit_ols needs at least one row")
        design = np.hstack([np.ones((X.shape[0], 1)), X])
        self.coef_, *_ = np.linalg.lstsq(design, y, rcond=None)
        self.n_features_ = X.shape[1]
        return self

    def predict(self, X):
        X = as_float_matrix(X)
        _check_fitted_width(self, X)
        return self.coef_[0] + X @ self.coef_[1:]


class ConstantModel(BaseEstimator, RegressorMixin):
    """Predicts a fixed value everywhere; the intentionally wrong baseline."""

    def __init__(self, value: float = 0.0):
        self.value = value

    def fit(self, X, y):
        X = as_float_matrix(X)
        as_float_vector(y, X.shape[0])
        self.n_features_ = X.shape[1]
        return self

    def predict(self, X):
        X = as_float_matrix(X)
        return np.full(X.shape[0], float(self.value))


class ForestModel(BaseEstimator, RegressorMixin):
    """Bagged CART regression forest built from scratch.

    Each tree trains on a bootstrap resample; splits are axis-aligned and
    chosen to minimize the summed child squared error among ``mtry`` randomly
    subsampled features; leaves predict the node mean, so every prediction
    lies within [min(y), max(y)].

    Parameters
    ----------
    n_trees, max_depth, min_leaf : int
        Forest size, depth cap, and minimum samples per leaf.
    mtry : int or None
        Features considered per split; default ceil(p / 3).
    seed : int
        Master seed; per-tree streams derive from it by tree index.
    auto_shrink : bool
        If True, shrink min_leaf to fit tiny training sets (down to a
        single-leaf tree at n = 1) instead of raising TooFewSamples.
    """

    def __init__(self, n_trees: int = 100, max_depth: int = 8, min_leaf: int = 5,
                 mtry: int | None = None, seed: int = 0, auto_shrink: bool = False):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.seed = seed
        self.auto_shrink = auto_shrink

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y, X.shape[0])
        n, p = X.shape
        if n == 0:
            raise EmptyTrainingSet("fit_forest needs at least one row")
        min_leaf = self.min_leaf
        if self.auto_shrink and n < 2 * min_leaf:
            min_leaf = max(1, n // 2)
        if n < 2 * min_leaf and not (self.auto_shrink and n == 1):
            raise TooFewSamples(f"forest needs n >= 2*min_leaf = {2 * min_leaf}, got {n}")
        mtry = self.mtry if self.mtry is not None else max(1, math.ceil(p / 3))
        cap = min(2 * n - 1 if n > 1 else 1, 2 ** (self.max_depth + 1) - 1)
        cap = max(cap, 1)
        arrays = _tree.build_forest(
            X, y, self.n_trees, self.max_depth, min_leaf, mtry,
            int(self.seed) % _MAX_SEED, cap,
        )
        (self.node_feature_, self.node_threshold_, self.node_left_,
         self.node_right_, self.node_value_, self.n_nodes_) = arrays
        self.n_features_ = p
        return self

    def predict(self, X):
        X = as_float_matrix(X)
        _check_fitted_width(self, X)
        if X.shape[0] == 0:
            return np.empty(0)
        return _tree.predict_forest(
            self.node_feature_, self.node_threshold_, self.node_left_,
            self.node_right_, self.node_value_, X,
        )


def _simplex_grid_2(oof: np.ndarray, y: np.ndarray) -> np.ndarray:
    # grid over w1 in {0, 0.01, ..., 1} for two members; first minimum wins
    best_w = 0.0
    best_loss = np.inf
    for step in range(101):
        w = step / 100.0
        resid = w * oof[0] + (1.0 - w) * oof[1] - y
        loss = float(resid @ resid)
        if loss < best_loss:
            best_loss = loss
            best_w = w
    return np.asarray([best_w, 1.0 - best_w])


def _simplex_descent(oof: np.ndarray, y: np.ndarray) -> np.ndarray:
    # pairwise coordinate descent at 0.01 resolution for 3+ members
    k = oof.shape[0]
    w = np.full(k, 1.0 / k)

    def loss(wv: np.ndarray) -> float:
        resid = wv @ oof - y
        return float(resid @ resid)

    current = loss(w)
    for _ in range(50):
        improved = False
        for i in range(k):
            for j in range(i + 1, k):
                mass = w[i] + w[j]
                if mass <= 0.0:
                    continue
                for step in range(101):
                    wi = mass * step / 100.0
                    cand = w.copy()
                    cand[i] = wi
                    cand[j] = mass - wi
                    c_loss = loss(cand)
                    if c_loss < current - 1e-15:
                        current = c_loss
                        w = cand
                        improved = True
        if not improved:
            break
    return w


class EnsembleModel(BaseEstimator, RegressorMixin):
    """Stacked ensemble: simplex weights from out-of-fold squared error.

    Folds split the rows deterministically from ``seed``; each member is
    cloned per fold with a derived seed, out-of-fold predictions are scored,
    weights are chosen on the simplex (0.01 grid for two members, pairwise
    coordinate descent otherwise), and members are refit on the full data.

    Parameters
    ----------
    members : list of estimators or None
        Unfitted member prototypes; default [OlsModel(), ForestModel()].
    k_folds : int
        Stacking folds (default 5).
    seed : int
        Drives fold assignment and member seeds.
    auto_shrink : bool
        If True, shrink k_folds to n and fall back to uniform weights when
        out-of-fold scoring is impossible (n < 2) instead of raising.
    """

    def __init__(self, members=None, k_folds: int = 5, seed: int = 0,
                 auto_shrink: bool = False):
        self.members = members
        self.k_folds = k_folds
        self.seed = seed
        self.auto_shrink = auto_shrink

    def _prototypes(self) -> list:
        if self.members is None:
            return [OlsModel(), ForestModel(auto_shrink=self.auto_shrink)]
        return list(self.members)

    def _spawn(self, proto, *path) -> BaseEstimator:
        member = clone(proto)
        if "seed" in member.get_params():
            member.set_params(seed=derive_seed(int(self.seed), *path))
        return member

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y, X.shape[0])
        n = X.shape[0]
        if n == 0:
            raise EmptyTrainingSet("fit_ensemble needs at least one row")
        protos = self._prototypes()
        k = self.k_folds
        if self.auto_shrink:
            k = min(k, n)
        if not self.auto_shrink and (k < 2 or n < k):
            raise TooFewSamples(f"ensemble needs n >= k_folds >= 2, got n={n}, k_folds={k}")
        if len(protos) == 1 or k < 2:
            self.weights_ = np.full(len(protos), 1.0 / len(protos))
        else:
            perm = generator(int(self.seed), "folds").permutation(n)
            bounds = np.linspace(0, n, k + 1).astype(int)
            oof = np.empty((len(protos), n))
            for fold in range(k):
                val = perm[bounds[fold]:bounds[fold + 1]]
                train = np.concatenate([perm[:bounds[fold]], perm[bounds[fold + 1]:]])
                for m, proto in enumerate(protos):
                    member = self._spawn(proto, "oof", m, fold)
                    member.fit(X[train], y[train])
                    oof[m, val] = member.predict(X[val])
            if len(protos) == 2:
                self.weights_ = _simplex_grid_2(oof, y)
            else:
                self.weights_ = _simplex_descent(oof, y)
        self.members_ = []
        for m, proto in enumerate(protos):
            member = self._spawn(proto, "full", m)
            self.members_.append(member.fit(X, y))
        self.n_features_ = X.shape[1]
        return self

    def predict(self, X):
        X = as_float_matrix(X)
        _check_fitted_width(self, X)
        preds = np.vstack([member.predict(X) for member in self.members_])
        return self.weights_ @ preds


# --- functional entry points -------------------------------------------------

def fit_ols(features, targets) -> OlsModel:
    """Fit least squares; minimum-norm under rank deficiency."""
    return OlsModel().fit(features, targets)


def fit_forest(features, targets, n_trees: int = 100, max_depth: int = 8,
               min_leaf: int = 5, mtry: int | None = None, seed: int = 0) -> ForestModel:
    """Fit the bagged CART forest; raises TooFewSamples when n < 2 * min_leaf."""
    return ForestModel(
        n_trees=n_trees, max_depth=max_depth, min_leaf=min_leaf, mtry=mtry, seed=seed,
    ).fit(features, targets)


def fit_ensemble(features, targets, members=None, k_folds: int = 5, seed: int = 0) -> EnsembleModel:
    """Fit the stacked ensemble; raises TooFewSamples unless n >= k_folds >= 2."""
    return EnsembleModel(members=members, k_folds=k_folds, seed=seed).fit(features, targets)
