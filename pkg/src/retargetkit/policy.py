"""Context-conditioned pose policy: hashed text embedding, MLP encoders, trunk, trainer.

Inputs are aligned as ``concat(proprio_encoder(s, g), text_encoder(embed(l)))``
and the trunk regresses the full 11-keypoint action. Training minimizes
mean squared position error plus ``lambda_rot`` times the mean squared
geodesic angle; gradients are computed by hand and can be checked against
central finite differences with :func:`gradient_check`.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .dataset import EE_INDEX, GoalSet, MaskedState, TrainingTuple
from .skeleton import KEYPOINTS, KeypointFrame

N_KP = len(KEYPOINTS)
STATE_DIM = N_KP * 8  # position, quaternion, presence flag
GOAL_DIM = 3 * 7
PROPRIO_DIM = STATE_DIM + GOAL_DIM
OUT_DIM = N_KP * 7


class PolicyConfigError(ValueError):
    pass


class PolicyNumericError(FloatingPointError):
    def __init__(self, layer: int, msg: str = "non-finite activation"):
        super().__init__(f"{msg} at layer {layer}")
        self.layer = layer


# -- text embedding --------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def _token_hash(token: str, seed: int) -> int:
    h = hashlib.blake2b(f"{seed}\x1f{token}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


def embed_text(text: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Signed hashed bag of tokens, L2-normalized; empty text maps to zeros."""
    v = np.zeros(dim)
    for tok in tokenize(text):
        h = _token_hash(tok, seed)
        v[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


# -- model -----------------------------------------------------------------

@dataclass
class PolicyConfig:
    d_text: int = 256
    d_proprio: int = 256
    encoder_hidden: int = 512
    trunk_hidden: tuple = (512, 512)
    hash_seed: int = 0
    lambda_rot: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        self.trunk_hidden = tuple(self.trunk_hidden)
        if self.d_proprio != self.d_text:
            raise PolicyConfigError("proprioception embedding must match the text embedding size")

    def layer_shapes(self) -> list:
        h = self.encoder_hidden
        shapes = [(h, PROPRIO_DIM), (self.d_proprio, h), (h, self.d_text), (self.d_text, h)]
        prev = self.d_proprio + self.d_text
        for w in self.trunk_hidden:
            shapes.append((w, prev))
            prev = w
        shapes.append((OUT_DIM, prev))
        return shapes


# layer roles for the default layout
_PROPRIO = (0, 1)
_TEXT = (2, 3)


@dataclass
class Normalization:
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(PROPRIO_DIM))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(PROPRIO_DIM))
    pos_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_KP * 3))
    pos_std: np.ndarray = field(default_factory=lambda: np.ones(N_KP * 3))
    quat_offset: np.ndarray = field(default_factory=lambda: np.tile([1.0, 0.0, 0.0, 0.0], N_KP))
    fitted: bool = False


def _unique_rows(x: np.ndarray):
    """Distinct rows (first-seen order) and the row index of each input row."""
    seen = {}
    rows = np.fromiter((seen.setdefault(r.tobytes(), len(seen)) for r in x), dtype=np.int64, count=len(x))
    first = np.zeros(len(seen), dtype=np.int64)
    first[rows[::-1]] = np.arange(len(x) - 1, -1, -1)
    return x[first], rows


class PolicyModel:
    def __init__(self, config: PolicyConfig | None = None, zero: bool = False):
        self.config = config or PolicyConfig()
        rng = np.random.default_rng(self.config.init_seed)
        self.W, self.b = [], []
        for rows, cols in self.config.layer_shapes():
            if zero:
                self.W.append(np.zeros((rows, cols)))
            else:
                self.W.append(rng.standard_normal((rows, cols)) * np.sqrt(2.0 / cols))
            self.b.append(np.zeros(rows))
        if not zero:
            self.W[-1] *= 0.1
        self.norm = Normalization()
        self._text_cache = {}

    # parameters as a flat list of arrays (W0, b0, W1, b1, ...)
    def params(self) -> list:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "PolicyModel":
        m = PolicyModel.__new__(PolicyModel)
        m.config = PolicyConfig(**asdict(self.config))
        m.W = [w.copy() for w in self.W]
        m.b = [b.copy() for b in self.b]
        m.norm = Normalization(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(self.norm).items()})
        m._text_cache = {}
        return m

    def text_vector(self, text: str) -> np.ndarray:
        v = self._text_cache.get(text)
        if v is None:
            v = embed_text(text, self.config.d_text, self.config.hash_seed)
            self._text_cache[text] = v
        return v

    # -- forward ------------------------------------------------------------
    def _dense(self, i, x):
        return x @ self.W[i].T + self.b[i]

    def forward(self, xp: np.ndarray, xt: np.ndarray, keep: bool = False, check: bool = True):
        """Batch forward. ``xp`` (B, 109) raw proprio features, ``xt`` (B, d_text) text vectors.

        Returns the raw (B, 77) head output and, when ``keep``, the cache for backprop.
        """
        n = (xp - self.norm.in_mean) / self.norm.in_std
        cache = {"x": [], "z": []}
        h = n
        for i in _PROPRIO:
            cache["x"].append(h)
            z = self._dense(i, h)
            cache["z"].append(z)
            h = np.maximum(z, 0.0)
            if check and not np.all(np.isfinite(h)):
                raise PolicyNumericError(i)
        ep = h
        # the text branch runs once per distinct text row; batches usually share a few texts
        h, rows = _unique_rows(xt)
        cache["text_rows"] = rows
        for i in _TEXT:
            cache["x"].append(h)
            z = self._dense(i, h)
            cache["z"].append(z)
            h = np.maximum(z, 0.0)
            if check and not np.all(np.isfinite(h)):
                raise PolicyNumericError(i)
        et = h[rows]
        h = np.concatenate([ep, et], axis=1)
        cache["aligned"] = h
        last = len(self.W) - 1
        for i in range(4, last):
            cache["x"].append(h)
            z = self._dense(i, h)
            cache["z"].append(z)
            h = np.maximum(z, 0.0)
            if check and not np.all(np.isfinite(h)):
                raise PolicyNumericError(i)
        cache["penultimate"] = h
        cache["x"].append(h)
        out = self._dense(last, h)
        if check and not np.all(np.isfinite(out)):
            raise PolicyNumericError(last)
        return (out, cache) if keep else out

    def decode(self, out: np.ndarray):
        """Head output -> positions (B, 11, 3), unit quaternions (B, 11, 4), raw quats and norms."""
        B = out.shape[0]
        P = (out[:, : N_KP * 3] * self.norm.pos_std + self.norm.pos_mean).reshape(B, N_KP, 3)
        R = (out[:, N_KP * 3:] + self.norm.quat_offset).reshape(B, N_KP, 4)
        nr = np.linalg.norm(R, axis=2, keepdims=True)
        if np.any(nr == 0.0):
            raise PolicyNumericError(len(self.W) - 1, "zero-norm quaternion output")
        return P, R / nr, nr

    def backward(self, cache, d_out):
        """Parameter gradients given dL/d(head output); returns list matching ``params()``."""
        grads_W = [None] * len(self.W)
        grads_b = [None] * len(self.W)
        last = len(self.W) - 1
        xs, zs = cache["x"], cache["z"]
        grads_W[last] = d_out.T @ xs[last]
        grads_b[last] = d_out.sum(axis=0)
        dh = d_out @ self.W[last]
        for i in range(last - 1, 3, -1):
            dz = dh * (zs[i] > 0)
            grads_W[i] = dz.T @ xs[i]
            grads_b[i] = dz.sum(axis=0)
            dh = dz @ self.W[i]
        dp = self.config.d_proprio
        d_ep, d_et = dh[:, :dp], dh[:, dp:]
        rows = cache["text_rows"]
        # sum per distinct text; masks and inputs are shared within a group
        grouped = np.zeros((int(rows.max()) + 1, d_et.shape[1]))
        np.add.at(grouped, rows, d_et)
        d_et = grouped
        for branch, dhb in ((_TEXT, d_et), (_PROPRIO, d_ep)):
            for i in reversed(branch):
                dz = dhb * (zs[i] > 0)
                grads_W[i] = dz.T @ xs[i]
                grads_b[i] = dz.sum(axis=0)
                if i != branch[0]:
                    dhb = dz @ self.W[i]
        out = []
        for gW, gb in zip(grads_W, grads_b):
            out += [gW, gb]
        return out

    # -- persistence --------------------------------------------------------
    def to_json(self) -> dict:
        cfg = asdict(self.config)
        cfg["trunk_hidden"] = list(cfg["trunk_hidden"])
        return {
            "config": cfg,
            "layers": [{"rows": W.shape[0], "cols": W.shape[1], "w": W.ravel().tolist(), "b": b.tolist()}
                       for W, b in zip(self.W, self.b)],
            "normalization": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(self.norm).items()},
            "hash_seed": self.config.hash_seed,
            "lambda_rot": self.config.lambda_rot,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PolicyModel":
        cfg = PolicyConfig(**d["config"])
        if "hash_seed" in d:
            cfg.hash_seed = int(d["hash_seed"])
        if "lambda_rot" in d:
            cfg.lambda_rot = float(d["lambda_rot"])
        m = cls(cfg, zero=True)
        shapes = cfg.layer_shapes()
        if len(d["layers"]) != len(shapes):
            raise PolicyConfigError(f"checkpoint has {len(d['layers'])} layers, config implies {len(shapes)}")
        for i, (layer, (rows, cols)) in enumerate(zip(d["layers"], shapes)):
            if (layer["rows"], layer["cols"]) != (rows, cols) or len(layer["w"]) != rows * cols or len(layer["b"]) != rows:
                raise PolicyConfigError(f"layer {i}: dimension mismatch with config ({rows}x{cols})")
            m.W[i] = np.array(layer["w"], dtype=float).reshape(rows, cols)
            m.b[i] = np.array(layer["b"], dtype=float)
        nd = d.get("normalization")
        if nd:
            m.norm = Normalization(**{k: (np.array(v, dtype=float) if isinstance(v, list) else v) for k, v in nd.items()})
        return m

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "PolicyModel":
        with open(path) as f:
            return cls.from_json(json.load(f))


# -- input encoding ----------------------------------------------------------

def _canon(Q: np.ndarray) -> np.ndarray:
    """Sign-canonicalize quaternions along the last axis (w > 0, ties by first nonzero)."""
    Q = np.array(Q, dtype=float)
    flat = Q.reshape(-1, 4)
    nz = flat != 0.0
    first = np.argmax(nz, axis=1)
    lead = flat[np.arange(len(flat)), first]
    flat[lead < 0] *= -1.0
    return flat.reshape(Q.shape)


def state_features(s) -> np.ndarray:
    """88 scalars: per keypoint (p, q, presence) with pose zeroed where absent."""
    if isinstance(s, MaskedState):
        frame, presence = s.frame, s.presence.astype(float)
    else:
        frame, presence = s, np.ones(N_KP)
    f = np.concatenate([frame.positions, _canon(frame.orientations)], axis=1) * presence[:, None]
    return np.concatenate([f, presence[:, None]], axis=1).ravel()


def goal_features(g: GoalSet) -> np.ndarray:
    return np.concatenate([g.positions, _canon(g.orientations)], axis=1).ravel()


def proprio_features(s, g: GoalSet) -> np.ndarray:
    return np.concatenate([state_features(s), goal_features(g)])


@dataclass
class EncodedBatch:
    xp: np.ndarray
    xt: np.ndarray
    P: np.ndarray | None = None
    Q: np.ndarray | None = None


def encode(model: PolicyModel, tuples, masks=None, drop_text: bool = False) -> EncodedBatch:
    """Stack tuples into arrays. ``masks`` optionally gives an ObservationMask per tuple or one for all."""
    from .dataset import apply_mask

    n = len(tuples)
    xp = np.empty((n, PROPRIO_DIM))
    xt = np.empty((n, model.config.d_text))
    P = np.empty((n, N_KP, 3))
    Q = np.empty((n, N_KP, 4))
    for i, tp in enumerate(tuples):
        m = masks[i] if isinstance(masks, (list, tuple)) else masks
        s = apply_mask(tp.s, m) if m is not None else tp.s
        xp[i] = proprio_features(s, tp.g)
        xt[i] = model.text_vector("" if drop_text else tp.l)
        P[i] = tp.a.positions
        Q[i] = tp.a.orientations
    return EncodedBatch(xp, xt, P, _canon(Q))


def align_inputs(s, g: GoalSet, l: str, model: PolicyModel) -> np.ndarray:
    """The aligned vector fed to the trunk: proprio half then text half."""
    xp = proprio_features(s, g)[None, :]
    if xp.shape[1] != model.W[0].shape[1]:
        raise PolicyConfigError(f"proprio input has {xp.shape[1]} features, model expects {model.W[0].shape[1]}")
    xt = model.text_vector(l)[None, :]
    if xt.shape[1] != model.W[2].shape[1]:
        raise PolicyConfigError("text embedding size does not match model")
    _, cache = model.forward(xp, xt, keep=True)
    return cache["aligned"][0]


def predict(model: PolicyModel, s, g: GoalSet, l: str) -> KeypointFrame:
    xp = proprio_features(s, g)[None, :]
    xt = model.text_vector(l)[None, :]
    P, Q, _ = model.decode(model.forward(xp, xt))
    return KeypointFrame(P[0], Q[0], normalize=False)


def predict_batch(model: PolicyModel, batch: EncodedBatch):
    P, Q, _ = model.decode(model.forward(batch.xp, batch.xt))
    return P, Q


# -- loss --------------------------------------------------------------------

def _chord_terms(Qhat, Qt):
    """Sign-aligned chord d = |q_hat - s q_t| and the geodesic angle 4 asin(d/2)."""
    s = np.where(np.sum(Qhat * Qt, axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    diff = Qhat - s * Qt
    d = np.linalg.norm(diff, axis=-1)
    theta = 4.0 * np.arcsin(np.minimum(d / 2.0, 1.0))
    return diff, d, theta


def loss_arrays(P, Qhat, Pt, Qt, lambda_rot: float = 1.0):
    """Mean over keypoints (and batch) of squared position error and squared geodesic angle."""
    pos = np.mean(np.sum((P - Pt) ** 2, axis=-1))
    _, _, theta = _chord_terms(Qhat, Qt)
    rot = np.mean(theta ** 2)
    return pos + lambda_rot * rot, pos, rot


def loss(prediction: KeypointFrame, target: KeypointFrame, lambda_rot: float = 1.0):
    """Returns (total, position component, rotation component)."""
    total, pos, rot = loss_arrays(prediction.positions, prediction.orientations,
                                  target.positions, _canon(target.orientations), lambda_rot)
    return float(total), float(pos), float(rot)


def loss_and_grads(model: PolicyModel, batch: EncodedBatch, lambda_rot: float | None = None):
    lam = model.config.lambda_rot if lambda_rot is None else lambda_rot
    out, cache = model.forward(batch.xp, batch.xt, keep=True)
    P, Qhat, nr = model.decode(out)
    B = out.shape[0]
    total, pos, rot = loss_arrays(P, Qhat, batch.P, batch.Q, lam)
    denom = B * N_KP
    dP = 2.0 * (P - batch.P) / denom
    diff, d, theta = _chord_terms(Qhat, batch.Q)
    # d(theta^2)/dq = 4 (theta/d) / sqrt(1 - d^2/4) * diff ; theta/d -> 2 as d -> 0
    ratio = np.where(d > 1e-12, theta / np.where(d > 1e-12, d, 1.0), 2.0)
    coef = 4.0 * ratio / np.sqrt(np.maximum(1.0 - d * d / 4.0, 1e-300))
    dQhat = (lam / denom) * coef[..., None] * diff
    # through q = r / |r|
    radial = np.sum(dQhat * Qhat, axis=-1, keepdims=True)
    dR = (dQhat - radial * Qhat) / nr
    d_out = np.concatenate([(dP.reshape(B, -1) * model.norm.pos_std), dR.reshape(B, -1)], axis=1)
    grads = model.backward(cache, d_out)
    return (float(total), float(pos), float(rot)), grads


# -- training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch: int = 64
    step_size: float = 1e-3
    seed: int = 0
    lambda_rot: float | None = None
    optimizer: str = "adam"
    # cosine decay of the step size down to step_size * final_lr_fraction
    final_lr_fraction: float = 0.05
    drop_text: bool = False
    divergence_threshold: float = 1e6


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    epoch_pos: list = field(default_factory=list)
    epoch_rot: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)
    seed: int = 0
    steps: int = 0
    diverged: bool = False
    validation: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def fit_normalization(model: PolicyModel, batch: EncodedBatch) -> None:
    norm = model.norm
    norm.in_mean = batch.xp.mean(axis=0)
    norm.in_std = np.maximum(batch.xp.std(axis=0), 1e-3)
    flatP = batch.P.reshape(len(batch.P), -1)
    norm.pos_mean = flatP.mean(axis=0)
    norm.pos_std = np.maximum(flatP.std(axis=0), 1e-3)
    qm = batch.Q.mean(axis=0)
    qm /= np.maximum(np.linalg.norm(qm, axis=1, keepdims=True), 1e-12)
    norm.quat_offset = qm.ravel()
    norm.fitted = True


class _Adam:
    def __init__(self, params, b1=0.9, b2=0.999, eps=1e-8):
        if not all(p.flags.c_contiguous for p in params):
            raise ValueError("Adam updates parameters in place and needs C-contiguous arrays")
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def step(self, params, grads, lr):
        # bias corrections folded into the step size and epsilon
        self.t += 1
        sc2 = np.sqrt(1.0 - self.b2 ** self.t)
        lr_t = lr * sc2 / (1.0 - self.b1 ** self.t)
        eps_t = self.eps * sc2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = np.ascontiguousarray(g)
            kernels.adam_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                                self.b1, self.b2, lr_t, eps_t)


def train(model: PolicyModel, tuples, config: TrainConfig = TrainConfig(), validation=None,
          batch: EncodedBatch | None = None) -> TrainReport:
    """Mini-batch training in place. ``batch`` may pass pre-encoded tuples."""
    report = TrainReport(seed=config.seed)
    if config.epochs <= 0:
        return report
    if batch is None:
        if not tuples:
            raise ValueError("train needs at least one tuple")
        batch = encode(model, tuples, drop_text=config.drop_text)
    if not model.norm.fitted:
        fit_normalization(model, batch)
    rng = np.random.default_rng(config.seed)
    n = len(batch.xp)
    bs = min(config.batch, n)
    per_epoch = -(-n // bs)
    total_steps = per_epoch * config.epochs
    params = model.params()
    if config.optimizer == "adam":
        opt = _Adam(params)
    elif config.optimizer != "sgd":
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for k in range(per_epoch):
            idx = order[k * bs:(k + 1) * bs]
            sub = EncodedBatch(batch.xp[idx], batch.xt[idx], batch.P[idx], batch.Q[idx])
            (tot, pos, rot), grads = loss_and_grads(model, sub, config.lambda_rot)
            if not np.isfinite(tot) or tot > config.divergence_threshold:
                report.diverged = True
                report.steps = step
                return report
            frac = step / max(total_steps - 1, 1)
            lr = config.step_size * (config.final_lr_fraction + (1 - config.final_lr_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))
            if config.optimizer == "adam":
                opt.step(params, grads, lr)
            else:
                for p, g in zip(params, grads):
                    p -= lr * g
            sums += (tot * len(idx), pos * len(idx), rot * len(idx))
            report.step_loss.append(tot)
            step += 1
        report.epoch_loss.append(sums[0] / n)
        report.epoch_pos.append(sums[1] / n)
        report.epoch_rot.append(sums[2] / n)
    report.steps = step
    if validation:
        report.validation = evaluate_loss(model, validation, drop_text=config.drop_text)
    return report


def evaluate_loss(model: PolicyModel, tuples, masks=None, drop_text=False, batch: EncodedBatch | None = None) -> dict:
    if batch is None:
        batch = encode(model, tuples, masks=masks, drop_text=drop_text)
    P, Q = predict_batch(model, batch)
    tot, pos, rot = loss_arrays(P, Q, batch.P, batch.Q, model.config.lambda_rot)
    return {"loss": float(tot), "position": float(pos), "rotation": float(rot)}


# -- gradient verification ------------------------------------------------------


def _loss_only(model, batch, lam):
    P, Q, _ = model.decode(model.forward(batch.xp, batch.xt))
    return loss_arrays(P, Q, batch.P, batch.Q, lam)[0]


def _forward_partial(model, cache, layer, W, b):
    """Forward pass re-evaluated from ``layer`` using cached upstream activations.

    Returns the head output and the list of re-evaluated pre-activations.
    """
    last = len(model.W) - 1
    zs = []

    def run(i, h):
        z = h @ W[i].T + b[i]
        zs.append(z)
        return z if i == last else np.maximum(z, 0.0)

    if layer in _PROPRIO or layer in _TEXT:
        branch = _PROPRIO if layer in _PROPRIO else _TEXT
        h = cache["x"][layer]
        for i in branch[branch.index(layer):]:
            h = run(i, h)
        dp = model.config.d_proprio
        aligned = cache["aligned"].copy()
        if branch is _PROPRIO:
            aligned[:, :dp] = h
        else:
            aligned[:, dp:] = h[cache["text_rows"]]
        h, layer = aligned, 4
    else:
        h = cache["x"][layer]
    for i in range(layer, last + 1):
        h = run(i, h)
    return h, zs


def _loss_from_out(model, out, batch, lam):
    P, Q, _ = model.decode(out)
    return loss_arrays(P, Q, batch.P, batch.Q, lam)[0]


def gradient_check(model: PolicyModel, tup: TrainingTuple, epsilon: float = 1e-5, seed: int = 0,
                   fraction: float = 0.01, which: str = "all", min_count: int = 50,
                   atol: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients on sampled parameters.

    Relative error is ``|a - n| / max(|a|, |n|, atol)``; ``atol`` keeps gradients that sit
    below float64 difference noise from dominating. Parameters whose probes straddle a
    ReLU kink are skipped since the loss is not differentiable there.
    ``which`` selects ``"all"`` parameters or ``"bias"`` vectors only.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    batch = encode(model, [tup])
    lam = model.config.lambda_rot
    _, grads = loss_and_grads(model, batch, lam)
    _, cache = model.forward(batch.xp, batch.xt, keep=True)
    params = model.params()
    sizes = [p.size for p in params]
    pool = [i for i in range(len(params)) if which == "all" or i % 2 == 1]
    offsets = np.cumsum([0] + [sizes[i] for i in pool])
    rng = np.random.default_rng(seed)
    k = min(int(offsets[-1]), max(min_count, int(fraction * offsets[-1])))
    picks = np.sort(rng.choice(int(offsets[-1]), size=k, replace=False))
    worst = 0.0
    for c in picks:
        slot = int(np.searchsorted(offsets, c, side="right") - 1)
        i = pool[slot]
        j = int(c - offsets[slot])
        layer = i // 2
        flat = params[i].reshape(-1)
        old = flat[j]
        flat[j] = old + epsilon
        out_p, z_p = _forward_partial(model, cache, layer, model.W, model.b)
        flat[j] = old - epsilon
        out_m, z_m = _forward_partial(model, cache, layer, model.W, model.b)
        flat[j] = old
        if any(np.any((a[:, :] > 0) != (bb > 0)) for a, bb in zip(z_p[:-1], z_m[:-1])):
            continue
        num = (_loss_from_out(model, out_p, batch, lam) - _loss_from_out(model, out_m, batch, lam)) / (2.0 * epsilon)
        ana = grads[i].reshape(-1)[j]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), atol))
    return worst
