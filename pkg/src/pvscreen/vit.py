"""Patch-based transformer classifier with hand-written reverse mode.

Parameters live in a flat ``name -> ndarray`` dict.  Linear maps are stored
as ``(in, out)`` matrices so that a layer computes ``x @ W + b``.  Patches
are flattened in ``(channel, row, col)`` order, matching the layout of a
stride-``patch_size`` convolution kernel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import erf
from scipy.stats import truncnorm

from . import container
from .errors import ConfigError, ContractError, IncompatibleWeightsError, ModelFormatError
from .imaging import IMAGENET_MEAN, IMAGENET_STD, AugmentationConfig, RgbImage, augment, normalize, resize_bilinear
from .taxonomy import NUM_CLASSES, DefectClass

LN_EPS = 1e-6
HEAD_PARAMS = ("head.weight", "head.bias")


@dataclass(frozen=True)
class ViTConfig:
    """Shape configuration.  Defaults describe ViT-B/16."""

    image_size: int = 224
    patch_size: int = 16
    hidden_dim: int = 768
    num_layers: int = 12
    num_heads: int = 12
    mlp_dim: int = 3072
    num_classes: int = NUM_CLASSES
    dropout_hidden: float = 0.3
    dropout_attention: float = 0.3

    def __post_init__(self):
        for name in ("image_size", "patch_size", "hidden_dim", "num_layers", "num_heads", "mlp_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        for name in ("dropout_hidden", "dropout_attention"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")

    @classmethod
    def tiny(cls, **overrides) -> "ViTConfig":
        """Desk-scale shape used for CPU experiments and tests."""
        base = dict(image_size=32, patch_size=8, hidden_dim=64, num_layers=2, num_heads=4,
                    mlp_dim=128, dropout_hidden=0.1, dropout_attention=0.1)
        base.update(overrides)
        return cls(**base)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def seq_len(self) -> int:
        return 1 + self.num_patches

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def parameter_shapes(self) -> dict:
        d, m, c = self.hidden_dim, self.mlp_dim, self.num_classes
        shapes = {
            "patch_embed.weight": (3 * self.patch_size ** 2, d),
            "patch_embed.bias": (d,),
            "cls_token": (d,),
            "pos_embed": (self.seq_len, d),
        }
        for layer in range(self.num_layers):
            p = f"blocks.{layer}."
            shapes.update({
                p + "ln1.gamma": (d,), p + "ln1.beta": (d,),
                p + "attn.q.weight": (d, d), p + "attn.q.bias": (d,),
                p + "attn.k.weight": (d, d), p + "attn.k.bias": (d,),
                p + "attn.v.weight": (d, d), p + "attn.v.bias": (d,),
                p + "attn.out.weight": (d, d), p + "attn.out.bias": (d,),
                p + "ln2.gamma": (d,), p + "ln2.beta": (d,),
                p + "mlp.fc1.weight": (d, m), p + "mlp.fc1.bias": (m,),
                p + "mlp.fc2.weight": (m, d), p + "mlp.fc2.bias": (d,),
            })
        shapes.update({
            "ln_final.gamma": (d,), "ln_final.beta": (d,),
            "head.weight": (d, c), "head.bias": (c,),
        })
        return shapes


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class ViTModel:
    config: ViTConfig
    params: dict
    # bumped on every in-place update; backward() refuses caches from older revisions
    revision: int = 0

    def copy(self) -> "ViTModel":
        return ViTModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.revision)

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def _trunc_normal(rng, shape, std=0.02):
    return truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def init_model(cfg: ViTConfig, rng: np.random.Generator) -> ViTModel:
    params = {}
    for name, shape in cfg.parameter_shapes().items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            params[name] = np.zeros(shape)
        else:
            params[name] = _trunc_normal(rng, shape)
    return ViTModel(cfg, params)


# ---------------------------------------------------------------------------
# serialization


def export_weights(model: ViTModel, path) -> None:
    header = {"config": asdict(model.config), "class_names": [c.label for c in DefectClass]}
    tensors = {k: v.astype(np.float32) for k, v in model.params.items()}
    container.write_container(path, "vit", header, tensors)


def import_weights(path, cfg: ViTConfig | None = None) -> ViTModel:
    """Load a classifier; when ``cfg`` is given every tensor must match its shapes."""
    header, tensors = container.read_container(path, kind="vit")
    try:
        stored_cfg = ViTConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: header lacks a valid config: {exc}") from exc
    cfg = cfg or stored_cfg
    expected = cfg.parameter_shapes()
    problems = []
    for name, shape in expected.items():
        if name not in tensors:
            problems.append(f"{name}: missing (expected {shape})")
        elif tensors[name].shape != tuple(shape):
            problems.append(f"{name}: file has {tensors[name].shape}, config needs {tuple(shape)}")
    extra = sorted(set(tensors) - set(expected))
    problems.extend(f"{name}: unexpected tensor" for name in extra)
    if problems:
        raise IncompatibleWeightsError(f"{path}: incompatible weights\n  " + "\n  ".join(problems))
    params = {name: tensors[name].astype(np.float64) for name in expected}
    return ViTModel(cfg, params)


# ---------------------------------------------------------------------------
# forward pass


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _layernorm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _layernorm_backward(dy, gamma, saved):
    xhat, inv = saved
    dgamma = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _dropout_mask(shape, p, training, rng):
    if not training or p == 0.0:
        return None
    if rng is None:
        raise ValueError("training-mode forward with dropout needs an rng")
    return (rng.random(shape) >= p) / (1.0 - p)


def _apply(mask, x):
    return x if mask is None else x * mask


def patchify(batch: np.ndarray, patch_size: int) -> np.ndarray:
    b, c, h, w = batch.shape
    g = h // patch_size
    x = batch.reshape(b, c, g, patch_size, g, patch_size)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * patch_size * patch_size)


@dataclass
class ForwardCache:
    model_id: int
    revision: int
    training: bool
    patches: np.ndarray
    embed_mask: np.ndarray | None
    layers: list = field(default_factory=list)
    final_ln: tuple = ()
    cls_out: np.ndarray | None = None

    @property
    def attention(self):
        """Post-softmax attention weights per layer, shape (B, heads, T, T)."""
        return [layer["attn"] for layer in self.layers]


def forward(model: ViTModel, batch, training: bool = False, rng: np.random.Generator | None = None):
    """Return ``(logits, cache)`` for a ``(B, 3, H, W)`` batch."""
    cfg, p = model.config, model.params
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != (3, cfg.image_size, cfg.image_size):
        raise ValueError(f"expected batch of shape (B, 3, {cfg.image_size}, {cfg.image_size}), got {batch.shape}")
    b = batch.shape[0]
    t, d, nh, dh = cfg.seq_len, cfg.hidden_dim, cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)

    patches = patchify(batch, cfg.patch_size)
    emb = patches @ p["patch_embed.weight"] + p["patch_embed.bias"]
    x = np.concatenate([np.broadcast_to(p["cls_token"], (b, 1, d)), emb], axis=1) + p["pos_embed"]
    embed_mask = _dropout_mask(x.shape, cfg.dropout_hidden, training, rng)
    x = _apply(embed_mask, x)
    cache = ForwardCache(id(model), model.revision, training, patches, embed_mask)

    for layer in range(cfg.num_layers):
        pre = f"blocks.{layer}."
        s = {}
        h, s["ln1"] = _layernorm(x, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
        s["h"] = h
        heads = []
        for proj in ("q", "k", "v"):
            y = h @ p[pre + f"attn.{proj}.weight"] + p[pre + f"attn.{proj}.bias"]
            heads.append(y.reshape(b, t, nh, dh).transpose(0, 2, 1, 3))
        q, k, v = heads
        attn = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
        s["attn_mask"] = _dropout_mask(attn.shape, cfg.dropout_attention, training, rng)
        attn_d = _apply(s["attn_mask"], attn)
        ctx = (attn_d @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        o = ctx @ p[pre + "attn.out.weight"] + p[pre + "attn.out.bias"]
        s["out_mask"] = _dropout_mask(o.shape, cfg.dropout_hidden, training, rng)
        x = x + _apply(s["out_mask"], o)
        s.update(q=q, k=k, v=v, attn=attn, attn_d=attn_d, ctx=ctx)

        h2, s["ln2"] = _layernorm(x, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
        u = h2 @ p[pre + "mlp.fc1.weight"] + p[pre + "mlp.fc1.bias"]
        g = gelu(u)
        s["fc1_mask"] = _dropout_mask(g.shape, cfg.dropout_hidden, training, rng)
        g_d = _apply(s["fc1_mask"], g)
        m = g_d @ p[pre + "mlp.fc2.weight"] + p[pre + "mlp.fc2.bias"]
        s["fc2_mask"] = _dropout_mask(m.shape, cfg.dropout_hidden, training, rng)
        x = x + _apply(s["fc2_mask"], m)
        s.update(h2=h2, u=u, g_d=g_d)
        cache.layers.append(s)

    xf, cache.final_ln = _layernorm(x, p["ln_final.gamma"], p["ln_final.beta"])
    cache.cls_out = xf[:, 0]
    logits = cache.cls_out @ p["head.weight"] + p["head.bias"]
    return logits, cache


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    b, c = logits.shape
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError("labels must be a length-B vector of valid class codes")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    loss = -log_probs[rows, labels].mean()
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / b


# ---------------------------------------------------------------------------
# reverse mode


def resolve_selector(model: ViTModel, selector) -> list:
    """``"head"`` (default fine-tuning subset), ``"full"``, or an explicit name list."""
    if selector == "head":
        return list(HEAD_PARAMS)
    if selector == "full":
        return list(model.params)
    names = list(selector)
    unknown = [n for n in names if n not in model.params]
    if unknown:
        raise ValueError(f"unknown parameter names: {unknown}")
    return names


def _wgrad(inp, dout):
    return inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])


def _bgrad(dout):
    return dout.reshape(-1, dout.shape[-1]).sum(axis=0)


def backward(model: ViTModel, cache: ForwardCache, dlogits, trainable="head") -> dict:
    """Exact gradients of ``sum(dlogits * logits)`` for the selected parameters."""
    if cache.model_id != id(model) or cache.revision != model.revision:
        raise ContractError("forward cache does not belong to the current model state")
    cfg, p = model.config, model.params
    dlogits = np.asarray(dlogits, dtype=np.float64)
    b = cache.patches.shape[0]
    if dlogits.shape != (b, cfg.num_classes):
        raise ContractError(f"dlogits shape {dlogits.shape} does not match cached batch ({b}, {cfg.num_classes})")
    wanted = set(resolve_selector(model, trainable))
    grads = {
        "head.weight": cache.cls_out.T @ dlogits,
        "head.bias": dlogits.sum(axis=0),
    }
    if wanted <= set(HEAD_PARAMS):
        return {k: v for k, v in grads.items() if k in wanted}

    t, d, nh, dh = cfg.seq_len, cfg.hidden_dim, cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    dxf = np.zeros((b, t, d))
    dxf[:, 0] = dlogits @ p["head.weight"].T
    dx, grads["ln_final.gamma"], grads["ln_final.beta"] = _layernorm_backward(dxf, p["ln_final.gamma"], cache.final_ln)

    for layer in reversed(range(cfg.num_layers)):
        pre = f"blocks.{layer}."
        s = cache.layers[layer]
        # MLP branch
        dm = _apply(s["fc2_mask"], dx)
        grads[pre + "mlp.fc2.weight"] = _wgrad(s["g_d"], dm)
        grads[pre + "mlp.fc2.bias"] = _bgrad(dm)
        dg = _apply(s["fc1_mask"], dm @ p[pre + "mlp.fc2.weight"].T)
        du = dg * _gelu_grad(s["u"])
        grads[pre + "mlp.fc1.weight"] = _wgrad(s["h2"], du)
        grads[pre + "mlp.fc1.bias"] = _bgrad(du)
        dh2 = du @ p[pre + "mlp.fc1.weight"].T
        dln, grads[pre + "ln2.gamma"], grads[pre + "ln2.beta"] = _layernorm_backward(dh2, p[pre + "ln2.gamma"], s["ln2"])
        dx = dx + dln
        # attention branch
        do = _apply(s["out_mask"], dx)
        grads[pre + "attn.out.weight"] = _wgrad(s["ctx"], do)
        grads[pre + "attn.out.bias"] = _bgrad(do)
        dctx = (do @ p[pre + "attn.out.weight"].T).reshape(b, t, nh, dh).transpose(0, 2, 1, 3)
        dv = s["attn_d"].transpose(0, 1, 3, 2) @ dctx
        dattn = _apply(s["attn_mask"], dctx @ s["v"].transpose(0, 1, 3, 2))
        attn = s["attn"]
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ s["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ s["q"]
        dhid = np.zeros((b, t, d))
        for proj, dy in (("q", dq), ("k", dk), ("v", dv)):
            dy = dy.transpose(0, 2, 1, 3).reshape(b, t, d)
            grads[pre + f"attn.{proj}.weight"] = _wgrad(s["h"], dy)
            grads[pre + f"attn.{proj}.bias"] = _bgrad(dy)
            dhid += dy @ p[pre + f"attn.{proj}.weight"].T
        dln, grads[pre + "ln1.gamma"], grads[pre + "ln1.beta"] = _layernorm_backward(dhid, p[pre + "ln1.gamma"], s["ln1"])
        dx = dx + dln

    dtok = _apply(cache.embed_mask, dx)
    grads["pos_embed"] = dtok.sum(axis=0)
    grads["cls_token"] = dtok[:, 0].sum(axis=0)
    demb = dtok[:, 1:]
    grads["patch_embed.weight"] = _wgrad(cache.patches, demb)
    grads["patch_embed.bias"] = _bgrad(demb)
    return {k: grads[k] for k in model.params if k in wanted}


# ---------------------------------------------------------------------------
# optimizer


def decays(name: str) -> bool:
    """Decoupled weight decay touches weight matrices only."""
    return name.endswith(".weight")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict, grads: dict, state: AdamState, opt: OptimizerConfig, decay=decays):
    """One AdamW update of every parameter named in ``grads`` (in place)."""
    state.t += 1
    bc1 = 1.0 - opt.beta1 ** state.t
    bc2 = 1.0 - opt.beta2 ** state.t
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(theta), np.zeros_like(theta)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.epsilon)
        if opt.weight_decay and decay(name):
            update = update + opt.weight_decay * theta
        theta -= opt.learning_rate * update
    return params, state


# ---------------------------------------------------------------------------
# training and inference


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float


def prepare_batch(images, image_size: int, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """Evaluation-path preprocessing: resize then normalize."""
    return np.stack([
        normalize(img if (img.width, img.height) == (image_size, image_size)
                  else resize_bilinear(img, image_size, image_size), mean, std)
        for img in images
    ])


def train(model: ViTModel, dataset, opt: OptimizerConfig, epochs: int, batch_size: int = 16,
          selector="head", rng: np.random.Generator | None = None,
          augmentation: AugmentationConfig | None = None, mean=IMAGENET_MEAN, std=IMAGENET_STD,
          callback=None):
    """Mini-batch training with AdamW.

    ``dataset`` is a sequence of ``(RgbImage, label)`` pairs.  With
    ``augmentation=None`` images are only resized.  ``callback(log_entry,
    model)`` runs after each epoch; a truthy return stops training early.
    Returns ``(model, log)``; the model is updated in place.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cfg = model.config
    if augmentation is not None and augmentation.output_size != cfg.image_size:
        raise ConfigError(f"augmentation output_size {augmentation.output_size} != image_size {cfg.image_size}")
    rng = rng if rng is not None else np.random.default_rng(0)
    names = resolve_selector(model, selector)
    state = AdamState()
    log = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            images = [dataset[i][0] for i in idx]
            labels = np.array([int(dataset[i][1]) for i in idx])
            if augmentation is not None:
                batch = np.stack([normalize(augment(img, augmentation, rng), mean, std) for img in images])
            else:
                batch = prepare_batch(images, cfg.image_size, mean, std)
            logits, cache = forward(model, batch, training=True, rng=rng)
            loss, dlogits = cross_entropy(logits, labels)
            grads = backward(model, cache, dlogits, names)
            adamw_step(model.params, grads, state, opt)
            model.revision += 1
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels).sum())
        entry = EpochLog(epoch + 1, total_loss / len(dataset), correct / len(dataset))
        log.append(entry)
        if callback is not None and callback(entry, model):
            break
    return model, log


@dataclass
class Prediction:
    defect: DefectClass
    probabilities: np.ndarray


def predict_proba(model: ViTModel, images, mean=IMAGENET_MEAN, std=IMAGENET_STD, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        batch = prepare_batch(images[start:start + batch_size], model.config.image_size, mean, std)
        logits, _ = forward(model, batch, training=False)
        out.append(softmax(logits))
    if not out:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(out)


def predict(model: ViTModel, img: RgbImage, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> Prediction:
    probs = predict_proba(model, [img], mean, std)[0]
    # argmax returns the first maximum, i.e. the lowest class code on ties
    return Prediction(DefectClass(int(np.argmax(probs))), probs)


def config_fields():
    return [f.name for f in fields(ViTConfig)]
