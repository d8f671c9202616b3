"""Desk-scale segmentation network: a 4-stage convolutional encoder shared by
the detection decoder and three token-based reconstruction decoders (pixel,
low-frequency, high-frequency), plus the boundary-weighted structure loss.

The encoder is trained from scratch; pretrained backbones are out of scope.
All forward passes are per-sample (channels-first, no batch axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

NORM_EPS = 1e-5
RECON_BRANCHES = ("pix", "low", "high")


@dataclass
class NetworkConfig:
    resolution: int = 128
    base: int = 32          # stage channels: base * 2^i for stages i = 0..3
    embed: int = 64         # reconstruction-decoder token width (paper scale: 512)
    depth: int = 4
    heads: int = 4
    patch: int = 16
    keep_fraction: float = 0.7  # TAG Top-K retention

    def __post_init__(self):
        if self.resolution % 32:
            raise ContractError("resolution must be divisible by 32")
        if self.resolution % self.patch:
            raise ContractError("resolution must be divisible by the patch size")
        if self.embed % self.heads:
            raise ContractError("embedding dim must be divisible by head count")
        # token grid comes off the stride-16 feature map, so patches are 16 px
        if self.patch != 16:
            raise ContractError("patch size is fixed at 16 by the token grid")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ContractError("keep_fraction must lie in (0, 1]")

    def stage_channels(self):
        return [self.base * (2 ** i) for i in range(4)]

    def token_grid(self):
        g = self.resolution // self.patch
        return g, g


class ModelState:
    """Named parameter store with bit-exact snapshot/restore semantics."""

    def __init__(self, config, params):
        self.config = config
        self.params = params  # insertion-ordered name -> Tensor

    def named_parameters(self):
        return self.params

    def parameters(self, name_filter=None):
        if name_filter is None:
            return list(self.params.values())
        return [v for k, v in self.params.items() if name_filter(k)]

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def restore(self, snap):
        if set(snap) != set(self.params):
            raise ContractError("snapshot does not match the parameter set")
        for k, v in self.params.items():
            v.data = snap[k].copy()
            v.grad = None

    def zero_grad(self):
        for v in self.params.values():
            v.grad = None

    def save(self, path):
        records = {f"config/{f.name}": np.asarray(getattr(self.config, f.name),
                                                  dtype=np.float64)
                   for f in fields(self.config)}
        records.update({k: v.data for k, v in self.params.items()})
        T.save_checkpoint(records, path)

    @classmethod
    def load(cls, path):
        records = dict(T.load_checkpoint(path))
        kwargs = {}
        for f in fields(NetworkConfig):
            key = f"config/{f.name}"
            if key not in records:
                raise ContractError(f"checkpoint missing {key}")
            raw = float(records.pop(key))
            kwargs[f.name] = raw if f.name == "keep_fraction" else int(raw)
        state = init_model(NetworkConfig(**kwargs), seed=0)
        if set(records) != set(state.params):
            raise ContractError("checkpoint parameter names do not match the model")
        state.restore(records)
        return state


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


def init_model(config, seed=0):
    """Uniform fan-in weights, zero biases, unit norm gains, N(0, 0.02^2) tokens."""
    rng = np.random.default_rng(seed)
    p = {}

    def conv(name, cin, cout, k, norm=True):
        p[f"{name}.w"] = _uniform(rng, (cout, cin, k, k), cin * k * k)
        p[f"{name}.b"] = _zeros(cout)
        if norm:
            p[f"{name}.norm.gain"] = _ones(cout)
            p[f"{name}.norm.bias"] = _zeros(cout)

    def linear(name, din, dout, bias=True):
        p[f"{name}.w"] = _uniform(rng, (din, dout), din)
        if bias:
            p[f"{name}.b"] = _zeros(dout)

    ch = config.stage_channels()
    conv("enc.stem", 3, ch[0], 3)
    conv("enc.s1", ch[0], ch[0], 3)
    for i in (2, 3, 4):
        conv(f"enc.s{i}", ch[i - 2], ch[i - 1], 3)

    base = config.base
    for i in (1, 2, 3, 4):
        conv(f"det.lat{i}", ch[i - 1], base, 1)
    for i in (1, 2, 3):
        conv(f"det.mix{i}", base, base, 3)
    for i in (1, 2, 3, 4):
        conv(f"det.head{i}", base, 1, 1, norm=False)

    emb, gh = config.embed, config.resolution // config.patch
    for br in RECON_BRANCHES:
        linear(f"rec.{br}.embed", ch[3], emb)
        p[f"rec.{br}.mask_token"] = Tensor(rng.normal(scale=0.02, size=(1, emb)),
                                           requires_grad=True)
        p[f"rec.{br}.pos"] = Tensor(rng.normal(scale=0.02, size=(gh * gh, emb)),
                                    requires_grad=True)
        for k in range(config.depth):
            blk = f"rec.{br}.blk{k}"
            p[f"{blk}.ln1.gain"] = _ones(emb)
            p[f"{blk}.ln1.bias"] = _zeros(emb)
            for proj in ("wq", "wk", "wv", "wo"):
                p[f"{blk}.{proj}"] = _uniform(rng, (emb, emb), emb)
            p[f"{blk}.ln2.gain"] = _ones(emb)
            p[f"{blk}.ln2.bias"] = _zeros(emb)
            linear(f"{blk}.fc1", emb, 4 * emb)
            linear(f"{blk}.fc2", 4 * emb, emb)
        p[f"rec.{br}.ln.gain"] = _ones(emb)
        p[f"rec.{br}.ln.bias"] = _zeros(emb)
        linear(f"rec.{br}.head", emb, config.patch * config.patch * 3)

    d = ch[3] * ch[3]
    for proj in ("wq", "wk", "wv"):
        p[f"tag.{proj}"] = _ones(d)

    for head in ("mu", "sigma"):
        p[f"pcc.{head}_w"] = _uniform(rng, (base, base), base)
        p[f"pcc.{head}_b"] = _zeros(base)
    p["pcc.fuse_w"] = _uniform(rng, (base, 2), base)
    p["pcc.fuse_b"] = _zeros(2)
    p["pcc.gamma"] = _ones(())

    return ModelState(config, p)


def instance_norm(x, gain, bias, eps=NORM_EPS):
    """Per-channel normalization over the spatial axes with affine rescale."""
    mu = T.tmean(x, axis=(1, 2), keepdims=True)
    var = T.tmean(T.square(x - mu), axis=(1, 2), keepdims=True)
    y = (x - mu) / T.sqrt(var + eps)
    c = x.shape[0]
    return y * T.reshape(gain, (c, 1, 1)) + T.reshape(bias, (c, 1, 1))


def layer_norm(x, gain, bias, eps=NORM_EPS):
    """Per-token normalization over the feature axis of an (N, D) matrix."""
    mu = T.tmean(x, axis=1, keepdims=True)
    var = T.tmean(T.square(x - mu), axis=1, keepdims=True)
    return ((x - mu) / T.sqrt(var + eps)) * gain + bias


@dataclass
class DetectOutput:
    preds: list       # stage maps (1,H,W), coarsest first; preds[-1] is O
    final: Tensor     # (H, W) probability map
    feature: Tensor   # (base, H, W) full-resolution decoder feature


class Model:
    """Functional wrapper binding a ModelState to the forward passes."""

    def __init__(self, state):
        self.state = state
        self.cfg = state.config
        self.p = state.params

    def _stage(self, name, x, stride):
        y = T.conv2d(x, self.p[f"{name}.w"], self.p[f"{name}.b"],
                     stride=stride, padding=self.p[f"{name}.w"].shape[2] // 2)
        y = instance_norm(y, self.p[f"{name}.norm.gain"], self.p[f"{name}.norm.bias"])
        return T.relu(y)

    def encode(self, image):
        image = T.as_tensor(image)
        r = self.cfg.resolution
        if image.shape != (3, r, r):
            raise ContractError(f"expected (3,{r},{r}) input, got {image.shape}")
        x = self._stage("enc.stem", image, 2)
        f1 = self._stage("enc.s1", x, 2)          # stride 4
        f2 = self._stage("enc.s2", f1, 2)         # stride 8
        f3 = self._stage("enc.s3", f2, 2)         # stride 16
        f4 = self._stage("enc.s4", f3, 2)         # stride 32
        return [f1, f2, f3, f4]

    def decode_detect(self, feats, deepest_override=None):
        """Top-down decoder with a sigmoid head per stage, upsampled to full res."""
        if len(feats) != 4:
            raise ContractError("decoder expects 4 feature scales")
        f4 = feats[3] if deepest_override is None else deepest_override
        lats = [self._stage(f"det.lat{i + 1}", f, 1)
                for i, f in enumerate([feats[0], feats[1], feats[2], f4])]
        d = lats[3]
        preds = []
        strides = [32, 16, 8, 4]
        stages = [None, "det.mix3", "det.mix2", "det.mix1"]
        heads = ["det.head4", "det.head3", "det.head2", "det.head1"]
        for level in range(4):
            if level > 0:
                d = self._stage(stages[level], T.upsample_nearest(d, 2) + lats[3 - level], 1)
            logit = T.conv2d(d, self.p[f"{heads[level]}.w"], self.p[f"{heads[level]}.b"])
            pred = T.upsample_nearest(T.sigmoid(logit), strides[level])
            preds.append(pred)
        feature = T.upsample_nearest(d, 4)
        r = self.cfg.resolution
        final = T.reshape(preds[-1], (r, r))
        return DetectOutput(preds, final, feature)

    def _block(self, x, blk):
        p, emb, nh = self.p, self.cfg.embed, self.cfg.heads
        dh = emb // nh
        h = layer_norm(x, p[f"{blk}.ln1.gain"], p[f"{blk}.ln1.bias"])
        q = T.matmul(h, p[f"{blk}.wq"])
        k = T.matmul(h, p[f"{blk}.wk"])
        v = T.matmul(h, p[f"{blk}.wv"])
        outs = []
        for i in range(nh):
            sl = slice(i * dh, (i + 1) * dh)
            attn = T.softmax(T.matmul(q[:, sl], T.transpose(k[:, sl])) / math.sqrt(dh),
                             axis=1)
            outs.append(T.matmul(attn, v[:, sl]))
        x = x + T.matmul(T.concat(outs, axis=1), p[f"{blk}.wo"])
        h = layer_norm(x, p[f"{blk}.ln2.gain"], p[f"{blk}.ln2.bias"])
        h = T.relu(T.matmul(h, p[f"{blk}.fc1.w"]) + p[f"{blk}.fc1.b"])
        return x + (T.matmul(h, p[f"{blk}.fc2.w"]) + p[f"{blk}.fc2.b"])

    def decode_reconstruct(self, deepest_feat, spatial_mask, branch):
        """Token decoder: visible tokens from the masked encoding, learnable
        tokens at masked positions, then `depth` attention blocks and a linear
        patch projection back to a (3, H, W) image in (0, 1)."""
        if branch not in RECON_BRANCHES:
            raise ContractError(f"unknown branch {branch!r}")
        p, cfg = self.p, self.cfg
        gh, gw = cfg.token_grid()
        if spatial_mask.patch_grid != (gh, gw):
            raise ContractError("spatial mask grid does not match the token grid")
        up = T.upsample_nearest(deepest_feat, 2)              # stride 16
        emb = cfg.embed
        n = gh * gw
        tok = T.matmul(T.transpose(T.reshape(up, (up.shape[0], n))),
                       p[f"rec.{branch}.embed.w"]) + p[f"rec.{branch}.embed.b"]
        vis = spatial_mask.patch_visibility()[:, None]
        tok = tok * vis + p[f"rec.{branch}.mask_token"] * (1.0 - vis)
        x = tok + p[f"rec.{branch}.pos"]
        for k in range(cfg.depth):
            x = self._block(x, f"rec.{branch}.blk{k}")
        x = layer_norm(x, p[f"rec.{branch}.ln.gain"], p[f"rec.{branch}.ln.bias"])
        out = T.matmul(x, p[f"rec.{branch}.head.w"]) + p[f"rec.{branch}.head.b"]
        ps = cfg.patch
        img = T.reshape(out, (gh, gw, 3, ps, ps))
        img = T.reshape(T.transpose(img, (2, 0, 3, 1, 4)), (3, gh * ps, gw * ps))
        return T.sigmoid(img)


def structure_loss(pred, gt):
    """Boundary-weighted BCE plus boundary-weighted soft IoU for one map."""
    pred = T.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    weit = 1.0 + 5.0 * np.abs(T.box_mean_array(gt, 31) - gt)
    p = T.clamp(pred, 1e-7, 1.0 - 1e-7)
    bce = T.neg(T.log(p) * gt + T.log(1.0 - p) * (1.0 - gt))
    wbce = T.tsum(bce * weit) / float(weit.sum())
    inter = T.tsum(pred * (gt * weit))
    union = T.tsum((pred + gt) * weit)
    wiou = 1.0 - (inter + 1.0) / (union - inter + 1.0)
    return wbce + wiou


def detection_loss(preds, gt):
    """Structure loss summed over all decoder stages."""
    gt = np.asarray(gt, dtype=np.float64)
    total = None
    for pred in preds:
        term = structure_loss(T.reshape(pred, gt.shape), gt)
        total = term if total is None else total + term
    return total
