"""Text-entity matching network.

Both sides of a pair pass through one shared bank of three-layer wide
convolution filters. The three per-layer responses are mixed by a learned
attention vector (a1 for the entity side, a2 for the text side), pooled by
k-max averaging, compared through a bilinear form, and the joint vector
[x1, x_sim, x2] feeds a two-class softmax.

Training uses hand-derived gradients for every parameter group. Besides the
plain single-pair operations there is a batched padded path (used by the
trainer and the linker) whose padding positions are masked out before
pooling; both paths compute the same function and the tests hold them to it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class TrainingError(RuntimeError):
    """Training diverged or received unusable pairs."""


CHECKPOINT_TAG = "matchnet-v1"


@dataclass
class MatchModelConfig:
    filter_count: int = 100
    window_height: int = 5
    kma_k: int = 2
    dim: int = 50
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    decision_threshold: float = 0.5
    # the source material leaves these unstated; defaults recorded here
    activation: str = "relu"  # "relu" | "identity"
    train_attention: bool = True
    optimizer: str = "sgd"
    early_stop_loss: float | None = None

    def __post_init__(self) -> None:
        if min(self.filter_count, self.window_height, self.kma_k) < 1:
            raise ValueError("filter_count, window_height and kma_k must be >= 1")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.optimizer != "sgd":
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def cols(self) -> int:
        return self.dim + 2


@dataclass
class MatchModel:
    config: MatchModelConfig
    filters: np.ndarray  # (F, h, D+2, 3)
    conv_bias: np.ndarray  # (F, 3)
    a1: np.ndarray  # (3,) entity-side attention
    a2: np.ndarray  # (3,) text-side attention
    U: np.ndarray  # (F, F)
    cls_w: np.ndarray  # (2, 2F+1)
    cls_b: np.ndarray  # (2,)

    def param_groups(self) -> dict[str, np.ndarray]:
        return {
            "filters": self.filters,
            "conv_bias": self.conv_bias,
            "a1": self.a1,
            "a2": self.a2,
            "U": self.U,
            "classifier_w": self.cls_w,
            "classifier_b": self.cls_b,
        }


def init_model(cfg: MatchModelConfig) -> MatchModel:
    """Fresh model: random filters, unit attention, identity U, zero classifier.

    With a1 = a2 = [1,1,1] the attention step starts out as the plain sum of
    the three channel responses, and the zero classifier makes the initial
    loss exactly ln 2 regardless of filter draw.
    """
    rng = np.random.default_rng(cfg.seed)
    F, h, cols = cfg.filter_count, cfg.window_height, cfg.cols
    return MatchModel(
        config=cfg,
        filters=rng.uniform(-0.1, 0.1, size=(F, h, cols, 3)),
        conv_bias=np.zeros((F, 3)),
        a1=np.ones(3),
        a2=np.ones(3),
        U=np.eye(F),
        cls_w=np.zeros((2, 2 * F + 1)),
        cls_b=np.zeros(2),
    )


# ---------------------------------------------------------------------------
# single-pair operations (reference path)


def wide_conv(fm: np.ndarray, model: MatchModel) -> np.ndarray:
    """Zero-padded convolution of one feature matrix: (L, D+2, 3) -> (F, L+h-1, 3)."""
    F, h, cols, _ = model.filters.shape
    L = fm.shape[0]
    out = np.zeros((F, L + h - 1, 3))
    for p in range(L + h - 1):
        for j in range(h):
            row = p - h + 1 + j
            if 0 <= row < L:
                # filt[f, j, c, l] * fm[row, c, l], summed over c
                out[:, p, :] += np.einsum("fcl,cl->fl", model.filters[:, j], fm[row])
    out += model.conv_bias[:, None, :]
    return out


def attention_combine(channel_map: np.ndarray, a: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Mix the three per-layer responses: (F, P, 3) x (3,) -> (F, P)."""
    pre = channel_map @ a
    if activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def kma_pool(vec: np.ndarray, k: int) -> float:
    """Mean of the min(k, len) largest values."""
    v = np.asarray(vec, dtype=np.float64)
    if v.size == 0:
        raise ValueError("kma_pool needs a non-empty vector")
    kk = min(k, v.size)
    return float(np.sort(v)[::-1][:kk].mean())


def bilinear_sim(x1: np.ndarray, U: np.ndarray, x2: np.ndarray) -> float:
    return float(x1 @ U @ x2)


def forward(pair: tuple[np.ndarray, np.ndarray], model: MatchModel) -> float:
    """Match probability for one (entity fm, text fm) pair."""
    ent_fm, txt_fm = pair
    cfg = model.config
    x1 = np.array([
        kma_pool(row, cfg.kma_k)
        for row in attention_combine(wide_conv(ent_fm, model), model.a1, cfg.activation)
    ])
    x2 = np.array([
        kma_pool(row, cfg.kma_k)
        for row in attention_combine(wide_conv(txt_fm, model), model.a2, cfg.activation)
    ])
    x_sim = bilinear_sim(x1, model.U, x2)
    joint = np.concatenate([x1, [x_sim], x2])
    logits = model.cls_w @ joint + model.cls_b
    logits = logits - logits.max()
    expd = np.exp(logits)
    return float(expd[1] / expd.sum())


# ---------------------------------------------------------------------------
# batched path


def pad_side(mats: list[np.ndarray], dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length feature matrices into (B, Lmax, D+2, 3) + lengths."""
    lens = np.array([m.shape[0] for m in mats], dtype=np.int64)
    B, Lmax = len(mats), int(lens.max())
    cols, nl = mats[0].shape[1], mats[0].shape[2]
    out = np.zeros((B, Lmax, cols, nl), dtype=dtype)
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
    return out, lens


def _im2col(x: np.ndarray, h: int) -> tuple[np.ndarray, int]:
    """(B, L, C, 3) -> per-layer window matrix (3, B*P, h*C), P = L+h-1."""
    B, L, C, nl = x.shape
    P = L + h - 1
    padded = np.zeros((B, L + 2 * (h - 1), C, nl))
    padded[:, h - 1 : h - 1 + L] = x
    win = sliding_window_view(padded, h, axis=1)  # (B, P, C, 3, h)
    win = win.transpose(3, 0, 1, 4, 2)  # (3, B, P, h, C)
    return win.reshape(nl, B * P, h * C), P


def _filters_flat(filters: np.ndarray) -> np.ndarray:
    F, h, C, nl = filters.shape
    # contiguous copy: stacked matmul with a strided operand falls off the
    # BLAS path and runs an order of magnitude slower
    return np.ascontiguousarray(filters.transpose(3, 1, 2, 0).reshape(nl, h * C, F))


@dataclass
class _SideCache:
    X: np.ndarray  # (3, B*P, h*C) im2col windows
    conv: np.ndarray  # (B, P, F, 3)
    pre: np.ndarray  # (B, P, F) attention-combined, pre-activation
    act: np.ndarray  # (B, P, F) after activation, padding at -inf
    idx: np.ndarray  # (B, maxk, F) pooled positions
    poolw: np.ndarray  # (B, maxk) pooling weights (1/k_b or 0)
    x: np.ndarray  # (B, F)
    P: int


@dataclass
class _PairCache:
    ent: _SideCache
    txt: _SideCache
    joint: np.ndarray  # (B, 2F+1)
    probs: np.ndarray  # (B, 2)


def _side_forward(model: MatchModel, x: np.ndarray, lens: np.ndarray, a: np.ndarray) -> _SideCache:
    cfg = model.config
    F, h = cfg.filter_count, cfg.window_height
    B = x.shape[0]
    X, P = _im2col(x, h)
    conv = np.matmul(X, _filters_flat(model.filters))  # (3, B*P, F)
    conv = conv.reshape(3, B, P, F).transpose(1, 2, 3, 0) + model.conv_bias[None, None]
    pre = conv @ a
    act = np.maximum(pre, 0.0) if cfg.activation == "relu" else pre.copy()
    louts = lens + h - 1
    valid = np.arange(P)[None, :] < louts[:, None]  # (B, P)
    act[~valid] = -np.inf
    order = np.argsort(-act, axis=1, kind="stable")
    maxk = min(cfg.kma_k, P)
    idx = order[:, :maxk, :]
    kb = np.minimum(cfg.kma_k, louts).astype(np.float64)
    poolw = (np.arange(maxk)[None, :] < kb[:, None]) / kb[:, None]  # (B, maxk)
    vals = np.take_along_axis(act, idx, axis=1)
    vals = np.where(poolw[:, :, None] > 0, vals, 0.0)  # dead slots may hold -inf
    pooled = np.einsum("bkf,bk->bf", vals, poolw)
    return _SideCache(X=X, conv=conv, pre=pre, act=act, idx=idx, poolw=poolw, x=pooled, P=P)


def batched_forward(
    model: MatchModel,
    ent_x: np.ndarray,
    ent_lens: np.ndarray,
    txt_x: np.ndarray,
    txt_lens: np.ndarray,
) -> tuple[np.ndarray, _PairCache]:
    """Match probabilities for B padded pairs; returns cache for backward."""
    ent = _side_forward(model, ent_x, ent_lens, model.a1)
    txt = _side_forward(model, txt_x, txt_lens, model.a2)
    x_sim = np.einsum("bf,bf->b", ent.x @ model.U, txt.x)
    joint = np.concatenate([ent.x, x_sim[:, None], txt.x], axis=1)
    logits = joint @ model.cls_w.T + model.cls_b[None, :]
    logits = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    probs = expd / expd.sum(axis=1, keepdims=True)
    return probs[:, 1], _PairCache(ent=ent, txt=txt, joint=joint, probs=probs)


def _side_backward(
    model: MatchModel, side: _SideCache, dx: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Push gradient at the pooled vector back to (filters, bias, a)."""
    cfg = model.config
    F, h, C = cfg.filter_count, cfg.window_height, cfg.cols
    B, P = side.pre.shape[0], side.P
    dvals = dx[:, None, :] * side.poolw[:, :, None]  # (B, maxk, F)
    dact = np.zeros((B, P, F))
    np.put_along_axis(dact, side.idx, dvals, axis=1)
    dpre = dact * (side.pre > 0) if cfg.activation == "relu" else dact
    da = np.einsum("bpf,bpfl->l", dpre, side.conv)
    dconv = dpre[:, :, :, None] * a[None, None, None, :]
    dCl = dconv.transpose(3, 0, 1, 2).reshape(3, B * P, F)
    # np.dot buffers the strided operands into BLAS; stacked matmul on these
    # views drops to a slow elementwise loop
    dWl = np.stack([np.dot(side.X[layer].T, dCl[layer]) for layer in range(3)])  # (3, h*C, F)
    dfilters = dWl.reshape(3, h, C, F).transpose(3, 1, 2, 0)
    dbias = dconv.sum(axis=(0, 1))
    return dfilters, dbias, da


def batched_backward(
    model: MatchModel, cache: _PairCache, labels: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy over the batch for every group."""
    B = labels.shape[0]
    F = model.config.filter_count
    dlogits = cache.probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    d_cls_w = dlogits.T @ cache.joint
    d_cls_b = dlogits.sum(axis=0)
    djoint = dlogits @ model.cls_w  # (B, 2F+1)
    dx1 = djoint[:, :F].copy()
    dxsim = djoint[:, F]
    dx2 = djoint[:, F + 1 :].copy()
    x1, x2 = cache.ent.x, cache.txt.x
    dx1 += dxsim[:, None] * (x2 @ model.U.T)
    dx2 += dxsim[:, None] * (x1 @ model.U)
    dU = x1.T @ (dxsim[:, None] * x2)
    df1, db1, da1 = _side_backward(model, cache.ent, dx1, model.a1)
    df2, db2, da2 = _side_backward(model, cache.txt, dx2, model.a2)
    return {
        "filters": df1 + df2,
        "conv_bias": db1 + db2,
        "a1": da1,
        "a2": da2,
        "U": dU,
        "classifier_w": d_cls_w,
        "classifier_b": d_cls_b,
    }


def batch_loss(probs2: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy given the two-class probabilities."""
    picked = probs2[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


# ---------------------------------------------------------------------------
# training


@dataclass
class MatchTrainResult:
    model: MatchModel
    epoch_losses: list[float] = field(default_factory=list)


Pair = tuple[tuple[np.ndarray, np.ndarray], int]  # ((entity fm, text fm), label)


def _decayed_lr(cfg: MatchModelConfig, epoch: int) -> float:
    if cfg.epochs == 1:
        return cfg.learning_rate
    return cfg.learning_rate * (1.0 - 0.9 * epoch / (cfg.epochs - 1))


def train(model: MatchModel, pairs: list[Pair], cfg: MatchModelConfig | None = None) -> MatchTrainResult:
    """Mini-batch SGD over all parameter groups; embeddings stay frozen.

    Deterministic under cfg.seed. Aborts with TrainingError on a non-finite
    loss. If cfg.early_stop_loss is set, training stops once an epoch's mean
    loss falls below it.
    """
    cfg = cfg or model.config
    if not pairs:
        raise TrainingError("no training pairs")
    labels_all = np.array([lbl for _, lbl in pairs], dtype=np.int64)
    if labels_all.min() == labels_all.max():
        raise TrainingError("training pairs must include both labels")
    ent_x, ent_lens = pad_side([p[0][0] for p in pairs])
    txt_x, txt_lens = pad_side([p[0][1] for p in pairs])
    return _train_padded(model, ent_x, ent_lens, txt_x, txt_lens, labels_all, cfg)


def _train_padded(
    model: MatchModel,
    ent_x: np.ndarray,
    ent_lens: np.ndarray,
    txt_x: np.ndarray,
    txt_lens: np.ndarray,
    labels: np.ndarray,
    cfg: MatchModelConfig,
) -> MatchTrainResult:
    """Training core over pre-padded arrays (shared by train and the harness)."""
    n = labels.shape[0]
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        lr = _decayed_lr(cfg, epoch)
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            probs, cache = batched_forward(
                model, ent_x[sel], ent_lens[sel], txt_x[sel], txt_lens[sel]
            )
            loss = batch_loss(cache.probs, labels[sel])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            total += loss * sel.shape[0]
            grads = batched_backward(model, cache, labels[sel])
            model.filters -= lr * grads["filters"]
            model.conv_bias -= lr * grads["conv_bias"]
            if cfg.train_attention:
                model.a1 -= lr * grads["a1"]
                model.a2 -= lr * grads["a2"]
            model.U -= lr * grads["U"]
            model.cls_w -= lr * grads["classifier_w"]
            model.cls_b -= lr * grads["classifier_b"]
        losses.append(total / n)
        if cfg.early_stop_loss is not None and losses[-1] < cfg.early_stop_loss:
            break
    for name, arr in model.param_groups().items():
        if not np.all(np.isfinite(arr)):
            raise TrainingError(f"non-finite values in {name} after training")
    return MatchTrainResult(model=model, epoch_losses=losses)


# ---------------------------------------------------------------------------
# gradient checking


def _pair_loss(model: MatchModel, pair: tuple[np.ndarray, np.ndarray], label: int) -> float:
    ent_fm, txt_fm = pair
    _, cache = batched_forward(
        model,
        ent_fm[None, :, :, :],
        np.array([ent_fm.shape[0]]),
        txt_fm[None, :, :, :],
        np.array([txt_fm.shape[0]]),
    )
    return batch_loss(cache.probs, np.array([label]))


def grad_check(
    model: MatchModel,
    pair: tuple[np.ndarray, np.ndarray],
    label: int,
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    The classifier starts at zero in a fresh model, which would hide errors
    behind exactly-zero gradients; callers should randomize parameters first
    (grad_check_model does).
    """
    ent_fm, txt_fm = pair
    _, cache = batched_forward(
        model,
        ent_fm[None, :, :, :],
        np.array([ent_fm.shape[0]]),
        txt_fm[None, :, :, :],
        np.array([txt_fm.shape[0]]),
    )
    analytic = batched_backward(model, cache, np.array([label]))
    groups = {
        "filters": model.filters,
        "conv_bias": model.conv_bias,
        "a1": model.a1,
        "a2": model.a2,
        "U": model.U,
        "classifier_w": model.cls_w,
        "classifier_b": model.cls_b,
    }
    errs: dict[str, float] = {}
    for name, arr in groups.items():
        worst = 0.0
        flat = arr.ravel()
        ga = analytic[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = _pair_loss(model, pair, label)
            flat[i] = keep - step
            down = _pair_loss(model, pair, label)
            flat[i] = keep
            gn = (up - down) / (2 * step)
            denom = max(abs(ga[i]), abs(gn), 1e-6)
            worst = max(worst, abs(ga[i] - gn) / denom)
        errs[name] = worst
    return errs


def grad_check_model(cfg: MatchModelConfig, L_ent: int = 3, L_txt: int = 4, seed: int = 0) -> dict[str, float]:
    """Random small instance + randomized parameters, then grad_check."""
    rng = np.random.default_rng(seed)
    model = init_model(cfg)
    model.filters = rng.uniform(-0.5, 0.5, size=model.filters.shape)
    model.conv_bias = rng.uniform(-0.5, 0.5, size=model.conv_bias.shape)
    model.a1 = rng.uniform(0.2, 1.5, size=3)
    model.a2 = rng.uniform(0.2, 1.5, size=3)
    model.U = rng.uniform(-0.5, 0.5, size=model.U.shape)
    model.cls_w = rng.uniform(-0.5, 0.5, size=model.cls_w.shape)
    model.cls_b = rng.uniform(-0.5, 0.5, size=model.cls_b.shape)
    cols = cfg.cols
    ent_fm = rng.uniform(-1.0, 1.0, size=(L_ent, cols, 3))
    txt_fm = rng.uniform(-1.0, 1.0, size=(L_txt, cols, 3))
    label = int(rng.integers(0, 2))
    return grad_check(model, (ent_fm, txt_fm), label)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: MatchModel, path: str | Path) -> None:
    cfg = model.config
    doc = {
        "format": CHECKPOINT_TAG,
        "config": {
            "filter_count": cfg.filter_count,
            "window_height": cfg.window_height,
            "kma_k": cfg.kma_k,
            "dim": cfg.dim,
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "decision_threshold": cfg.decision_threshold,
            "activation": cfg.activation,
            "train_attention": cfg.train_attention,
            "optimizer": cfg.optimizer,
            "early_stop_loss": cfg.early_stop_loss,
        },
    }
    for name, arr in model.param_groups().items():
        doc[name] = [float(x) for x in arr.ravel()]
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path) -> MatchModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_TAG:
        raise ValueError(f"{path}: not a {CHECKPOINT_TAG} checkpoint")
    cfg = MatchModelConfig(**doc["config"])
    F, h, cols = cfg.filter_count, cfg.window_height, cfg.cols
    shapes = {
        "filters": (F, h, cols, 3),
        "conv_bias": (F, 3),
        "a1": (3,),
        "a2": (3,),
        "U": (F, F),
        "classifier_w": (2, 2 * F + 1),
        "classifier_b": (2,),
    }
    arrays = {
        name: np.array(doc[name], dtype=np.float64).reshape(shape)
        for name, shape in shapes.items()
    }
    return MatchModel(
        config=cfg,
        filters=arrays["filters"],
        conv_bias=arrays["conv_bias"],
        a1=arrays["a1"],
        a2=arrays["a2"],
        U=arrays["U"],
        cls_w=arrays["classifier_w"],
        cls_b=arrays["classifier_b"],
    )
