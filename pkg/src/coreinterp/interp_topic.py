"""Topic-based interpretation: projection onto learned topic vectors.

A topic matrix T [d, m] and a two-matrix recovery (W1 [m, l], W2 [l, d])
are trained jointly by mini-batch gradient descent so that
head(GAP(relu(relu(A @ T) @ W1 @ W2))) keeps classifying well through the
frozen linear head. Topic columns are renormalized to unit L2 norm after
every epoch. Interpretation maps are relu(A @ T) with d' = m.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .activation_store import ClassifierHead
from .validation import ComputationError, ValidationError, check_labels, check_tensor4


class TopicModel(BaseEstimator):
    """Trainable topic projection with a frozen classifier head.

    Parameters
    ----------
    head : ClassifierHead consuming pooled last-layer features.
    m, l : topic count and recovery hidden width.
    epochs, lr, batch_size, seed : plain mini-batch SGD settings; the seed
        drives both the init noise and the per-epoch shuffles.
    init_noise : scale of the perturbation around the identity-composition
        init (T = leading identity columns, W1 @ W2 = leading identity block).

    Attributes
    ----------
    topics_ : [d, m], unit-norm columns.
    recovery_w1_, recovery_w2_ : [m, l] and [l, d].
    train_loss_curve_ : mean cross-entropy per epoch.
    """

    def __init__(
        self,
        head: ClassifierHead | None = None,
        m: int = 10,
        l: int = 64,
        epochs: int = 20,
        lr: float = 1e-2,
        batch_size: int = 64,
        seed: int = 0,
        init_noise: float = 0.01,
    ):
        self.head = head
        self.m = m
        self.l = l
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.init_noise = init_noise

    def fit(self, X, y):
        """Train on activation tensors X [n, h, w, d] with integer labels y."""
        A = check_tensor4(X, "X").astype(np.float64)
        labels = check_labels(y, A.shape[0])
        if self.head is None:
            raise ValidationError("TopicModel requires a classifier head")
        d = A.shape[3]
        if self.m > d:
            raise ValidationError(f"m={self.m} exceeds activation depth {d}")
        if self.head.input_depth != d:
            raise ValidationError("head depth does not match activation depth")

        rng = np.random.default_rng(self.seed)
        T = np.eye(d, self.m) + self.init_noise * rng.standard_normal((d, self.m))
        W1 = np.eye(self.m, self.l) + self.init_noise * rng.standard_normal((self.m, self.l))
        W2 = np.eye(self.l, d) + self.init_noise * rng.standard_normal((self.l, d))
        T = _normalize_columns(T)

        n = A.shape[0]
        curve = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            batch_losses = []
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                loss, gT, gW1, gW2 = loss_and_gradients(
                    A[batch], labels[batch], self.head, T, W1, W2
                )
                if not np.isfinite(loss):
                    raise ComputationError(
                        "topic training diverged (loss is not finite); lower the learning rate"
                    )
                T -= self.lr * gT
                W1 -= self.lr * gW1
                W2 -= self.lr * gW2
                batch_losses.append(loss)
            T = _normalize_columns(T)
            curve.append(float(np.mean(batch_losses)))

        self.topics_ = T
        self.recovery_w1_ = W1
        self.recovery_w2_ = W2
        self.train_loss_curve_ = curve
        return self

    def maps(self, tensor) -> np.ndarray:
        """Interpretation maps relu(A @ T): [n, h, w, m]."""
        return topic_maps(tensor, self)

    def reconstruct(self, maps) -> np.ndarray:
        """Back to activation depth: relu(maps @ W1 @ W2): [n, h, w, d]."""
        return topic_reconstruct(maps, self)


def fit_topics(
    view,
    head: ClassifierHead,
    m: int = 10,
    l: int = 64,
    epochs: int = 20,
    lr: float = 1e-2,
    seed: int = 0,
    batch_size: int = 64,
    init_noise: float = 0.01,
) -> TopicModel:
    """Train a TopicModel on a dataset view's last-layer tensors."""
    model = TopicModel(
        head=head,
        m=m,
        l=l,
        epochs=epochs,
        lr=lr,
        batch_size=batch_size,
        seed=seed,
        init_noise=init_noise,
    )
    return model.fit(view.tensor(), view.labels)


def topic_maps(tensor, model: TopicModel) -> np.ndarray:
    data = check_tensor4(tensor, "tensor").astype(np.float64)
    T = model.topics_
    if data.shape[3] != T.shape[0]:
        raise ValidationError(
            f"depth mismatch: tensor depth {data.shape[3]}, topics expect {T.shape[0]}"
        )
    return np.maximum(data @ T, 0.0)


def topic_reconstruct(maps, model: TopicModel) -> np.ndarray:
    data = check_tensor4(maps, "maps").astype(np.float64)
    if data.shape[3] != model.topics_.shape[1]:
        raise ValidationError(
            f"maps depth {data.shape[3]} does not match topic count {model.topics_.shape[1]}"
        )
    return np.maximum(data @ model.recovery_w1_ @ model.recovery_w2_, 0.0)


def loss_and_gradients(A, labels, head: ClassifierHead, T, W1, W2):
    """Mean cross-entropy through the frozen head, with analytic gradients.

    Forward: Z = relu(A T); R = relu(Z W1 W2); logits = GAP(R) Wc^T + bc.
    Returns (loss, dT, dW1, dW2).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        n, h, w, d = A.shape
        Af = A.reshape(n * h * w, d)
        pre1 = Af @ T
        Z = np.maximum(pre1, 0.0)
        H = Z @ W1
        pre2 = H @ W2
        R = np.maximum(pre2, 0.0)
        pooled = R.reshape(n, h * w, d).mean(axis=1)
        logits = pooled @ head.weights.T + head.bias

        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))

        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        dpooled = dlogits @ head.weights  # [n, d]
        dR = np.repeat(dpooled / (h * w), h * w, axis=0)  # [n*h*w, d]
        dpre2 = dR * (pre2 > 0)
        dW2 = H.T @ dpre2
        dH = dpre2 @ W2.T
        dW1 = Z.T @ dH
        dZ = dH @ W1.T
        dpre1 = dZ * (pre1 > 0)
        dT = Af.T @ dpre1
        return loss, dT, dW1, dW2


def save_topic_model(model: TopicModel, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "topics.npy", model.topics_.astype(np.float32))
    np.save(directory / "recovery_w1.npy", model.recovery_w1_.astype(np.float32))
    np.save(directory / "recovery_w2.npy", model.recovery_w2_.astype(np.float32))
    sidecar = {
        "m": model.m,
        "l": model.l,
        "epochs": model.epochs,
        "lr": model.lr,
        "batch_size": model.batch_size,
        "seed": model.seed,
        "init_noise": model.init_noise,
        "train_loss_curve": model.train_loss_curve_,
    }
    if extra:
        sidecar.update(extra)
    path = directory / "topic.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_topic_model(directory, head: ClassifierHead | None = None) -> TopicModel:
    directory = Path(directory)
    sidecar = json.loads((directory / "topic.json").read_text())
    model = TopicModel(
        head=head,
        m=sidecar["m"],
        l=sidecar["l"],
        epochs=sidecar["epochs"],
        lr=sidecar["lr"],
        batch_size=sidecar["batch_size"],
        seed=sidecar["seed"],
        init_noise=sidecar["init_noise"],
    )
    model.topics_ = np.load(directory / "topics.npy").astype(np.float64)
    model.recovery_w1_ = np.load(directory / "recovery_w1.npy").astype(np.float64)
    model.recovery_w2_ = np.load(directory / "recovery_w2.npy").astype(np.float64)
    model.train_loss_curve_ = sidecar["train_loss_curve"]
    return model


def _normalize_columns(T: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(T, axis=0)
    return T / np.maximum(norms, 1e-12)
