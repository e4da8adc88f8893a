"""Shared test utilities: independent oracles and synthetic fixtures.

The oracles here are deliberately naive re-implementations (explicit loops,
no shared code with the package) so kernel and gradient tests have an
independent reference.
"""
import numpy as np
from PIL import Image

from coreseg import kernels
from coreseg.network import LayerDef, NetworkModel, write_weights


# ---------------------------------------------------------------------------
# independent numeric oracles


def naive_conv2d(x, weights, bias, stride, padding):
    c, h, w = x.shape
    o, _, kh, kw = weights.shape
    padded = np.zeros((c, h + 2 * padding, w + 2 * padding))
    padded[:, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for y in range(oh):
            for xx in range(ow):
                acc = bias[oc]
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            acc += weights[oc, ic, i, j] * \
                                padded[ic, y * stride + i, xx * stride + j]
                out[oc, y, xx] = acc
    return out


def naive_maxpool(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for y in range(oh):
            for xx in range(ow):
                block = x[ch, y * stride:y * stride + window,
                          xx * stride:xx * stride + window]
                out[ch, y, xx] = max(block.reshape(-1))
    return out


def reference_bilinear(x, target_w, target_h):
    c, src_h, src_w = x.shape
    out = np.zeros((c, target_h, target_w))
    for y in range(target_h):
        sy = min(max((y + 0.5) * src_h / target_h - 0.5, 0.0), src_h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, src_h - 1)
        fy = sy - y0
        for xx in range(target_w):
            sx = min(max((xx + 0.5) * src_w / target_w - 0.5, 0.0), src_w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, src_w - 1)
            fx = sx - x0
            for ch in range(c):
                top = x[ch, y0, x0] * (1 - fx) + x[ch, y0, x1] * fx
                bot = x[ch, y1, x0] * (1 - fx) + x[ch, y1, x1] * fx
                out[ch, y, xx] = top * (1 - fy) + bot * fy
    return out


def rbm_exact_log_likelihood_grad(W, b, c, batch):
    """Exact d/dtheta of mean log p(v) by enumerating all visible states."""
    nv, nh = W.shape

    def free_energy(v):
        return -v @ b - np.logaddexp(0.0, v @ W + c).sum()

    states = np.array([[(i >> j) & 1 for j in range(nv)]
                       for i in range(2 ** nv)], dtype=np.float64)
    log_unnorm = np.array([-free_energy(v) for v in states])
    log_z = np.logaddexp.reduce(log_unnorm)
    probs = np.exp(log_unnorm - log_z)

    def sigmoid(z):
        return 1.0 / (1.0 + np.exp(-z))

    h_states = sigmoid(states @ W + c)  # E[h | v] per state
    model_W = (states[:, :, None] * h_states[:, None, :] * probs[:, None, None]).sum(0)
    model_b = (states * probs[:, None]).sum(0)
    model_c = (h_states * probs[:, None]).sum(0)

    h_data = sigmoid(batch @ W + c)
    data_W = batch.T @ h_data / len(batch)
    data_b = batch.mean(0)
    data_c = h_data.mean(0)
    return data_W - model_W, data_b - model_b, data_c - model_c


# ---------------------------------------------------------------------------
# fixture networks and datasets


def conv_layer(name, out_c, in_c, k, pad, rng, scale=0.3):
    weights = rng.normal(0.0, scale, size=(out_c, in_c, k, k))
    bias = rng.normal(0.0, 0.01, size=out_c)
    return LayerDef("conv", name,
                    conv_spec=kernels.ConvSpec(out_c, in_c, k, k, 1, pad,
                                               weights, bias))


def small_fixture_network(seed=7, input_channels=1, means=(120.0,)):
    """Seeded fixed-filter 2-block CNN: conv-relu-pool twice, 8 maps each."""
    rng = np.random.default_rng(seed)
    layers = [
        conv_layer("conv1", 8, input_channels, 3, 1, rng, scale=0.05),
        LayerDef("relu", "relu1"),
        LayerDef("maxpool", "pool1", window=2, stride=2),
        conv_layer("conv2", 8, 8, 3, 1, rng, scale=0.1),
        LayerDef("relu", "relu2"),
        LayerDef("maxpool", "pool2", window=2, stride=2),
    ]
    return NetworkModel(layers, np.array(means, dtype=np.float64),
                        input_channels)


VGG_PLAN = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]


def vgg_like_network(seed=0, input_channels=3):
    """The full 13-conv/5-pool layer plan with small random weights."""
    rng = np.random.default_rng(seed)
    layers = []
    in_c = input_channels
    for block, (out_c, convs) in enumerate(VGG_PLAN, start=1):
        for i in range(1, convs + 1):
            layers.append(conv_layer(f"conv{block}_{i}", out_c, in_c, 3, 1,
                                     rng, scale=0.05))
            layers.append(LayerDef("relu", f"relu{block}_{i}"))
            in_c = out_c
        layers.append(LayerDef("maxpool", f"pool{block}", window=2, stride=2))
    means = np.full(input_channels, 120.0)
    return NetworkModel(layers, means, input_channels)


def write_fixture_weights(path, model):
    write_weights(path, model)
    return path


def texture_image(rng, size=64):
    """Half horizontal stripes, half checkerboard, split at a random column.

    Returns (image (1, size, size) float, labels (size, size) in {0, 1}),
    0 = stripes, 1 = checkerboard.
    """
    boundary = int(rng.integers(size // 4, 3 * size // 4))
    ys, xs = np.mgrid[0:size, 0:size]
    stripes = np.where(ys % 2 == 0, 200.0, 40.0)
    checker = np.where((xs + ys) % 2 == 0, 200.0, 40.0)
    labels = (xs >= boundary).astype(np.int64)
    image = np.where(labels == 0, stripes, checker)
    return image[None, :, :], labels


def write_texture_dataset(root, n_train=20, n_test=10, seed=13, size=64):
    """PNG dataset + palette for the stripes-vs-checkerboard toy problem."""
    dirs = {}
    for name in ("train", "train_labels", "test", "test_labels"):
        path = root / name
        path.mkdir(parents=True, exist_ok=True)
        dirs[name] = path
    rng = np.random.default_rng(seed)
    label_colors = {0: 64, 1: 192}
    for split, count in (("train", n_train), ("test", n_test)):
        for i in range(count):
            image, labels = texture_image(rng, size)
            rendered = np.vectorize(label_colors.get)(labels).astype(np.uint8)
            Image.fromarray(image[0].astype(np.uint8), mode="L").save(
                dirs[split] / f"img{i:03d}.png")
            Image.fromarray(rendered, mode="L").save(
                dirs[f"{split}_labels"] / f"img{i:03d}.png")
    palette_path = root / "palette.txt"
    palette_path.write_text("64 stripes\n192 checker\nrest other\n")
    return dirs, palette_path
