"""Second-stage learner: stacked RBMs plus a supervised feedforward head.

Training has two phases. Greedy layerwise pretraining fits one RBM per
hidden layer with persistent-chain contrastive divergence (the negative
phase advances Gibbs chains that survive across updates instead of
restarting at the data). The resulting weights initialize a sigmoid
feedforward network that is fine-tuned by minibatch backpropagation with
inverted dropout and L1/L2 penalties on the weight matrices.

Two output heads exist: "logistic" (softmax + mean negative log likelihood)
for classification and "linear" (mean squared error) for regression.

Visible units take real values in [0, 1], interpreted as Bernoulli
probabilities; inputs are expected to be min-max normalized upstream.
All arithmetic is float64 and deterministic given the seeds.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# RBM


@dataclass
class Rbm:
    W: np.ndarray  # (n_visible, n_hidden)
    b: np.ndarray  # visible bias
    c: np.ndarray  # hidden bias
    chains: np.ndarray  # (n_chains, n_visible) persistent negative states

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]


def init_rbm(n_visible, n_hidden, n_chains=15, seed=0) -> Rbm:
    rng = _as_rng(seed)
    bound = 4.0 * np.sqrt(6.0 / (n_visible + n_hidden))
    W = rng.uniform(-bound, bound, size=(n_visible, n_hidden))
    chains = (rng.random((n_chains, n_visible)) < 0.5).astype(np.float64)
    return Rbm(W, np.zeros(n_visible), np.zeros(n_hidden), chains)


def rbm_free_energy(rbm: Rbm, v):
    """F(v) = -b.v - sum_j log(1 + exp(c_j + W[:, j].v))."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    if v2.shape[1] != rbm.n_visible:
        raise ShapeError(f"v has {v2.shape[1]} units, RBM has {rbm.n_visible}")
    hidden_term = np.logaddexp(0.0, v2 @ rbm.W + rbm.c).sum(axis=1)
    out = -(v2 @ rbm.b) - hidden_term
    return float(out[0]) if single else out


def pcd_gradient(rbm: Rbm, batch, gibbs_k, rng):
    """One PCD log-likelihood gradient estimate.

    Positive statistics from the data batch, negative statistics from the
    persistent chains after gibbs_k sampled sweeps. Returns
    (grad_W, grad_b, grad_c, advanced_chains) without touching parameters.
    """
    rng = _as_rng(rng)
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != rbm.n_visible:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns, RBM has {rbm.n_visible} "
            "visible units")
    h_data = sigmoid(batch @ rbm.W + rbm.c)
    n = batch.shape[0]
    pos_W = batch.T @ h_data / n

    v = rbm.chains
    for _ in range(max(1, gibbs_k)):
        h_prob = sigmoid(v @ rbm.W + rbm.c)
        h = (rng.random(h_prob.shape) < h_prob).astype(np.float64)
        v_prob = sigmoid(h @ rbm.W.T + rbm.b)
        v = (rng.random(v_prob.shape) < v_prob).astype(np.float64)
    h_model = sigmoid(v @ rbm.W + rbm.c)
    m = v.shape[0]
    neg_W = v.T @ h_model / m

    grad_W = pos_W - neg_W
    grad_b = batch.mean(axis=0) - v.mean(axis=0)
    grad_c = h_data.mean(axis=0) - h_model.mean(axis=0)
    return grad_W, grad_b, grad_c, v


def rbm_pcd_step(rbm: Rbm, batch, lr, gibbs_k, rng):
    """Gradient-ascent update from one PCD estimate.

    Returns (updated Rbm, reconstruction error). Chains advance even at
    lr = 0. The reconstruction error is the mean squared difference between
    the batch and its deterministic one-step reconstruction.
    """
    if gibbs_k < 1:
        raise ValidationError(f"gibbs_k must be >= 1, got {gibbs_k}")
    grad_W, grad_b, grad_c, chains = pcd_gradient(rbm, batch, gibbs_k, rng)
    updated = Rbm(rbm.W + lr * grad_W, rbm.b + lr * grad_b,
                  rbm.c + lr * grad_c, chains)
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    h_prob = sigmoid(batch @ rbm.W + rbm.c)
    recon = sigmoid(h_prob @ rbm.W.T + rbm.b)
    return updated, float(np.mean((batch - recon) ** 2))


# ---------------------------------------------------------------------------
# DBN


@dataclass
class DbnModel:
    weights: list  # per hidden layer, (n_in, n_out)
    biases: list  # per hidden layer, (n_out,)
    head_kind: str | None = None  # "logistic" | "linear"
    head_W: np.ndarray | None = None
    head_b: np.ndarray | None = None
    dropout: list = field(default_factory=list)  # rate per hidden layer
    l1: float = 0.0
    l2: float = 0.0

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_out(self):
        return None if self.head_W is None else self.head_W.shape[1]

    def init_head(self, kind, n_out, seed=0):
        if kind not in ("logistic", "linear"):
            raise ValidationError(f"unknown head kind {kind!r}")
        rng = _as_rng(seed)
        self.head_kind = kind
        n_in = self.layer_sizes[-1]
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.head_W = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.head_b = np.zeros(n_out)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)  # fine-tune loss per epoch
    recon_errors: list = field(default_factory=list)  # per RBM: per-epoch MSE
    val_metrics: list = field(default_factory=list)  # per epoch, if validation given
    final_val: float | None = None


def pretrain_stack(sizes, data, epochs, lr=0.01, gibbs_k=1, seed=0,
                   batch_size=64, n_chains=15):
    """Greedy layerwise RBM pretraining.

    ``sizes`` is [visible, hidden1, ...]; each RBM trains on the hidden
    activation probabilities of the one below. Returns (DbnModel with
    uninitialized head, per-layer reconstruction-error history).
    """
    if len(sizes) < 2:
        raise ValidationError("need at least one hidden layer")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValidationError("pretraining data must be a nonempty matrix")
    if data.shape[1] != sizes[0]:
        raise ShapeError(f"data has {data.shape[1]} columns, sizes[0] is {sizes[0]}")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValidationError("pretraining data must lie in [0, 1]")

    master = _as_rng(seed)
    weights, biases, history = [], [], []
    current = data
    for n_visible, n_hidden in zip(sizes[:-1], sizes[1:]):
        rbm = init_rbm(n_visible, n_hidden, n_chains, master)
        layer_errors = []
        for _ in range(epochs):
            order = master.permutation(current.shape[0])
            batch_errors = []
            for start in range(0, len(order), batch_size):
                batch = current[order[start:start + batch_size]]
                rbm, err = rbm_pcd_step(rbm, batch, lr, gibbs_k, master)
                batch_errors.append(err)
            layer_errors.append(float(np.mean(batch_errors)))
        weights.append(rbm.W)
        biases.append(rbm.c)
        history.append(layer_errors)
        current = sigmoid(current @ rbm.W + rbm.c)
    return DbnModel(weights, biases), history


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_full(model: DbnModel, x, masks=None):
    """All layer activations plus head pre-activation output."""
    activations = [x]
    a = x
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = sigmoid(a @ W + b)
        if masks is not None and masks[i] is not None:
            a = a * masks[i]
        activations.append(a)
    z_head = a @ model.head_W + model.head_b
    return activations, z_head


def make_dropout_masks(model: DbnModel, n_rows, rng):
    """Inverted-dropout masks: survivors scaled by 1/(1-p)."""
    rng = _as_rng(rng)
    masks = []
    for W, rate in zip(model.weights, _dropout_rates(model)):
        if rate > 0.0:
            keep = (rng.random((n_rows, W.shape[1])) >= rate)
            masks.append(keep / (1.0 - rate))
        else:
            masks.append(None)
    return masks


def _dropout_rates(model: DbnModel):
    if not model.dropout:
        return [0.0] * len(model.weights)
    if np.isscalar(model.dropout):
        return [float(model.dropout)] * len(model.weights)
    return list(model.dropout)


def forward(model: DbnModel, x, train=False, rng=None, masks=None):
    """Head outputs: softmax probabilities (logistic) or raw values (linear).

    In train mode dropout masks are applied to hidden activations (drawn
    from ``rng`` unless ``masks`` is given); inference applies none.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model.head_kind is None:
        raise ValidationError("model head is uninitialized")
    if x.shape[1] != model.layer_sizes[0]:
        raise ShapeError(
            f"input has {x.shape[1]} features, model expects {model.layer_sizes[0]}")
    if train and masks is None:
        masks = make_dropout_masks(model, x.shape[0], rng)
    elif not train:
        masks = None
    _, z_head = _forward_full(model, x, masks)
    return _softmax(z_head) if model.head_kind == "logistic" else z_head


def nll_loss(probs, labels):
    """Mean negative log likelihood of the true classes."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValidationError(
            f"label outside [0, {probs.shape[1] - 1}]")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def mse_loss(pred, targets):
    """Squared error averaged over observations and output components."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if pred.shape != targets.shape:
        raise ShapeError(f"pred {pred.shape} vs targets {targets.shape}")
    return float(np.mean((pred - targets) ** 2))


def _regularization(model: DbnModel):
    penalty = 0.0
    for W in list(model.weights) + [model.head_W]:
        penalty += model.l1 * np.abs(W).sum() + model.l2 * np.square(W).sum()
    return penalty


def objective(model: DbnModel, x, y, masks=None):
    """Head loss plus L1/L2 weight penalties (dropout via fixed masks)."""
    out = _head_output(model, x, masks)
    if model.head_kind == "logistic":
        loss = nll_loss(out, y)
    else:
        loss = mse_loss(out, np.atleast_2d(np.asarray(y, dtype=np.float64)))
    return loss + _regularization(model)


def _head_output(model, x, masks):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, z_head = _forward_full(model, x, masks)
    return _softmax(z_head) if model.head_kind == "logistic" else z_head


def objective_grads(model: DbnModel, x, y, masks=None):
    """Analytic gradients of `objective` wrt every weight and bias.

    Returns (loss, dict with 'weights', 'biases', 'head_W', 'head_b').
    L1 subgradient at exactly 0 is taken as 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    activations, z_head = _forward_full(model, x, masks)

    if model.head_kind == "logistic":
        probs = _softmax(z_head)
        y = np.asarray(y, dtype=np.int64)
        loss = nll_loss(probs, y)
        dz = probs.copy()
        dz[np.arange(n), y] -= 1.0
        dz /= n
    else:
        targets = np.atleast_2d(np.asarray(y, dtype=np.float64))
        loss = mse_loss(z_head, targets)
        dz = 2.0 * (z_head - targets) / targets.size

    top = activations[-1]
    grad_head_W = top.T @ dz + model.l1 * np.sign(model.head_W) \
        + 2.0 * model.l2 * model.head_W
    grad_head_b = dz.sum(axis=0)

    grad_W, grad_b = [None] * len(model.weights), [None] * len(model.weights)
    da = dz @ model.head_W.T
    for i in range(len(model.weights) - 1, -1, -1):
        a = activations[i + 1]
        if masks is not None and masks[i] is not None:
            # a includes the mask scaling; the sigmoid derivative needs the
            # pre-mask activation
            da = da * masks[i]
            s = sigmoid(activations[i] @ model.weights[i] + model.biases[i])
            dzl = da * s * (1.0 - s)
        else:
            dzl = da * a * (1.0 - a)
        grad_W[i] = activations[i].T @ dzl + model.l1 * np.sign(model.weights[i]) \
            + 2.0 * model.l2 * model.weights[i]
        grad_b[i] = dzl.sum(axis=0)
        da = dzl @ model.weights[i].T

    loss += _regularization(model)
    return loss, {"weights": grad_W, "biases": grad_b,
                  "head_W": grad_head_W, "head_b": grad_head_b}


@dataclass
class FineTuneConfig:
    lr: float = 0.1
    epochs: int = 10
    batch: int = 64
    l1: float = 1e-5
    l2: float = 1e-4
    dropout: float = 0.5
    seed: int = 0
    early_stop: bool = False  # stop when the validation metric degrades


def fine_tune(model: DbnModel, sample, config: FineTuneConfig, validation=None):
    """Minibatch SGD on the regularized head loss.

    Learning rate decays as lr / (1 + epoch). Deterministic given the seed.
    Returns (trained model, TrainReport). ``sample`` and ``validation`` are
    CoreSamples (or anything with .features/.targets).
    """
    features = np.asarray(sample.features, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValidationError("empty training sample")
    if sample.targets is None:
        raise ValidationError("fine-tuning needs targets")
    if model.head_kind is None:
        raise ValidationError("initialize the head before fine-tuning")
    targets = np.asarray(sample.targets)
    if model.head_kind == "linear" and targets.ndim == 1:
        targets = targets[:, None].astype(np.float64)

    model.l1, model.l2 = config.l1, config.l2
    model.dropout = [float(config.dropout)] * len(model.weights)
    rng = _as_rng(config.seed)
    report = TrainReport()

    for epoch in range(config.epochs):
        lr = config.lr / (1.0 + epoch)
        order = rng.permutation(features.shape[0])
        loss_sum = 0.0
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            xb, yb = features[idx], targets[idx]
            masks = make_dropout_masks(model, xb.shape[0], rng)
            loss, grads = objective_grads(model, xb, yb, masks)
            loss_sum += loss * len(idx)
            for i in range(len(model.weights)):
                model.weights[i] = model.weights[i] - lr * grads["weights"][i]
                model.biases[i] = model.biases[i] - lr * grads["biases"][i]
            model.head_W = model.head_W - lr * grads["head_W"]
            model.head_b = model.head_b - lr * grads["head_b"]
        report.losses.append(loss_sum / features.shape[0])
        if validation is not None:
            metric = _validation_metric(model, validation)
            report.val_metrics.append(metric)
            if config.early_stop and len(report.val_metrics) > 1:
                prev = report.val_metrics[-2]
                worse = metric < prev if model.head_kind == "logistic" else metric > prev
                if worse:
                    break
    if report.val_metrics:
        report.final_val = report.val_metrics[-1]
    return model, report


def _validation_metric(model, validation):
    out = predict(model, validation.features)
    if model.head_kind == "logistic":
        return float(np.mean(out == np.asarray(validation.targets)))
    targets = np.asarray(validation.targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    return mse_loss(out, targets)


def predict(model: DbnModel, rows):
    """Argmax class per row (ties -> lowest index) or raw regression values."""
    out = forward(model, rows, train=False)
    if model.head_kind == "logistic":
        return np.argmax(out, axis=1)
    return out
