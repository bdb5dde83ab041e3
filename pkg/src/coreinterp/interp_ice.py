"""NMF-based interpretation: depth-reducing components and inverted maps.

Activations of one class, flattened to [(n*h*w), d], are factorized as
V ~ S @ W with multiplicative Frobenius updates. New tensors are projected
onto the frozen components (nonnegative least squares, same update rule)
and inverted back to activation shape; the reconstructions are the
interpretation maps (d' = d).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import ValidationError, check_matrix, check_tensor4

_EPS = 1e-12


class ActivationNmf(BaseEstimator, TransformerMixin):
    """Nonnegative factorization of pooled-location activation rows.

    Parameters
    ----------
    r : number of components (rows of `components_`).
    max_iter, tol : stop after `max_iter` alternating updates or when the
        relative loss change drops below `tol`.
    seed : seeds the component init; the coefficient matrix starts constant
        so the fit is equivariant to row permutations of V.

    Attributes
    ----------
    components_ : [r, d], nonnegative.
    fit_loss_ : final Frobenius reconstruction error ||V - S W||_F.
    iterations_run_ : update iterations actually performed.
    loss_curve_ : per-iteration loss, non-increasing up to 1e-9 slack.
    """

    def __init__(self, r: int = 8, max_iter: int = 200, tol: float = 1e-4, seed: int = 0):
        self.r = r
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def fit(self, V, y=None):
        V = _check_nonnegative(V)
        n, d = V.shape
        if not 1 <= self.r <= min(n, d):
            raise ValidationError(f"r={self.r} out of range for V of shape {V.shape}")
        scale = np.sqrt(V.mean() / self.r)
        rng = np.random.default_rng(self.seed)
        W = rng.random((self.r, d)) * scale
        S = np.full((n, self.r), scale)

        losses = []
        prev = None
        it = 0
        for it in range(1, self.max_iter + 1):
            S *= (V @ W.T) / (S @ (W @ W.T) + _EPS)
            W *= (S.T @ V) / ((S.T @ S) @ W + _EPS)
            loss = float(np.linalg.norm(V - S @ W))
            losses.append(loss)
            if prev is not None and abs(prev - loss) < self.tol * max(prev, _EPS):
                prev = loss
                break
            prev = loss

        self.components_ = W
        self.fit_loss_ = losses[-1] if losses else float(np.linalg.norm(V))
        self.iterations_run_ = it
        self.loss_curve_ = losses
        return self

    def transform(self, V, max_iter: int | None = None, tol: float | None = None):
        """Nonnegative projection coefficients S for frozen components."""
        V = _check_nonnegative(V)
        W = self.components_
        if V.shape[1] != W.shape[1]:
            raise ValidationError(
                f"depth mismatch: V has {V.shape[1]} channels, components expect {W.shape[1]}"
            )
        max_iter = self.max_iter if max_iter is None else max_iter
        tol = self.tol if tol is None else tol
        S = np.full((V.shape[0], self.r), max(np.sqrt(V.mean() / self.r), np.sqrt(_EPS)))
        gram = W @ W.T
        target = V @ W.T
        prev = None
        for _ in range(max_iter):
            S *= target / (S @ gram + _EPS)
            loss = float(np.linalg.norm(V - S @ W))
            if prev is not None and abs(prev - loss) < tol * max(prev, _EPS):
                break
            prev = loss
        return S

    def inverse_transform(self, S):
        return np.asarray(S) @ self.components_


def fit_nmf(V, r: int, max_iter: int = 200, tol: float = 1e-4, seed: int = 0) -> ActivationNmf:
    """Factorize nonnegative V [N, d] into r components; returns the fitted model."""
    return ActivationNmf(r=r, max_iter=max_iter, tol=tol, seed=seed).fit(V)


def ice_maps(
    tensor, model: ActivationNmf, max_iter: int | None = None, tol: float | None = None
) -> np.ndarray:
    """Interpretation maps: project a tensor on frozen components, invert, reshape.

    Negative activations are clamped to zero first (factorization requires
    nonnegativity). Output shape equals the input tensor's ([n, h, w, d]).
    """
    data = check_tensor4(tensor, "tensor")
    n, h, w, d = data.shape
    if d != model.components_.shape[1]:
        raise ValidationError(
            f"depth mismatch: tensor depth {d}, components expect {model.components_.shape[1]}"
        )
    V = np.maximum(data.reshape(n * h * w, d).astype(np.float64), 0.0)
    S = model.transform(V, max_iter=max_iter, tol=tol)
    return model.inverse_transform(S).reshape(n, h, w, d)


def save_nmf(model: ActivationNmf, directory, class_index: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / f"components_class{class_index}.npy", model.components_.astype(np.float32))
    sidecar = {
        "class": class_index,
        "r": model.r,
        "max_iter": model.max_iter,
        "tol": model.tol,
        "seed": model.seed,
        "fit_loss": model.fit_loss_,
        "iterations_run": model.iterations_run_,
    }
    path = directory / f"model_class{class_index}.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_nmf(directory, class_index: int) -> ActivationNmf:
    directory = Path(directory)
    sidecar = json.loads((directory / f"model_class{class_index}.json").read_text())
    model = ActivationNmf(
        r=sidecar["r"], max_iter=sidecar["max_iter"], tol=sidecar["tol"], seed=sidecar["seed"]
    )
    model.components_ = np.load(directory / f"components_class{class_index}.npy").astype(np.float64)
    model.fit_loss_ = sidecar["fit_loss"]
    model.iterations_run_ = sidecar["iterations_run"]
    model.loss_curve_ = []
    return model


def _check_nonnegative(V) -> np.ndarray:
    V = check_matrix(V, "V")
    if V.size and V.min() < 0:
        raise ValidationError("V must be nonnegative; clamp activations at 0 first")
    return V
