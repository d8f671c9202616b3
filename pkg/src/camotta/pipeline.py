"""End-to-end training, per-sample test-time adaptation, the entropy-descent
baseline, and benchmark orchestration.

Both stages share one encoder. Stage 1 reconstructs the masked input in the
pixel and two frequency branches; stage 2 feeds the (detached) pixel
reconstruction back through the detection path and calibrates prototypes
between the two views. At inference the supervised term is dropped and the
self-supervised remainder drives per-sample gradient updates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import affinity as af
from . import data as D
from . import metrics as mx
from . import prototypes as pc
from . import reconstruction as rc
from . import spectral as sp
from . import tensor as T
from .model import Model, detection_loss
from .tensor import AdamW, ContractError, Tensor

log = logging.getLogger(__name__)

PARAM_SUBSETS = ("all", "norm", "encoder_detect")
MODES = ("frozen", "hcl", "tent")


@dataclass
class AdaptationConfig:
    iterations: int = 30
    lr: float = 0.001
    episodic: bool = True
    resample_masks: bool = True
    views: int = 1
    sample_latents: bool = True
    param_subset: str = "all"
    lambda_hrr: float = 1.0
    lambda_kl: float = 1.0
    lambda_pro: float = 1.0
    lambda_pro_rec: float = 1.0
    lambda_dec: float = 1.0
    spatial_ratio: float = 0.25
    freq_ratio: float = 0.25
    lambda_low: float = 0.4
    lambda_high: float = 0.6
    ffl_beta: float = 1.0
    tau: float = 0.1
    edge_alpha: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ContractError("iteration count must be >= 0")
        if self.views < 1:
            raise ContractError("views must be >= 1")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        for name in ("lambda_hrr", "lambda_kl", "lambda_pro", "lambda_pro_rec",
                     "lambda_dec"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if self.param_subset not in PARAM_SUBSETS:
            raise ContractError(f"param_subset must be one of {PARAM_SUBSETS}")

    @classmethod
    def from_config(cls, cfg):
        """Build from the sectioned run-config dict."""
        a, l, m = cfg["adapt"], cfg["losses"], cfg["masks"]
        return cls(iterations=a["iterations"], lr=a["lr"], episodic=a["episodic"],
                   resample_masks=a["resample_masks"], views=a["views"],
                   sample_latents=a["sample_latents"],
                   param_subset=a["param_subset"],
                   lambda_hrr=l["lambda_hrr"], lambda_kl=l["lambda_kl"],
                   lambda_pro=l["lambda_pro"], lambda_pro_rec=l["lambda_pro_rec"],
                   lambda_dec=l["lambda_dec"], spatial_ratio=m["spatial_ratio"],
                   freq_ratio=m["freq_ratio"], lambda_low=l["lambda_low"],
                   lambda_high=l["lambda_high"], ffl_beta=l["ffl_beta"],
                   tau=l["tau"], edge_alpha=l["edge_alpha"])


@dataclass
class LossReport:
    hrr: float
    kl: float
    pro: float
    pro_rec: float
    dec: float  # None at test time
    total: float

    def components(self):
        out = {"hrr": self.hrr, "kl": self.kl, "pro": self.pro,
               "pro_rec": self.pro_rec}
        if self.dec is not None:
            out["dec"] = self.dec
        return out


def _pool(feat, class_mask, phi=None):
    """Masked average pooling; empty regions fall back to the global mean."""
    count = class_mask.sum()
    if count == 0:
        return pc.global_mean_prototype(feat)
    weight = class_mask if phi is None else class_mask * phi
    return T.tsum(feat * weight, axis=(1, 2)) / float(count)


def compute_losses(net, image, cfg, seed, gt=None, eta_seed=None):
    """One forward pass of both stages; returns (total Tensor, LossReport, O).

    eta_seed optionally decouples the reparameterization draws from the mask
    seed; by default both derive from the same seed.
    """
    p = net.p
    image = T.as_tensor(image)
    _, h, w = image.shape

    # stage 1: masked reconstructions
    smask = rc.make_spatial_mask(h, w, net.cfg.patch, cfg.spatial_ratio, seed)
    fmask_low = sp.make_freq_mask(h, w, "low", cfg.freq_ratio, seed + 1)
    fmask_high = sp.make_freq_mask(h, w, "high", cfg.freq_ratio, seed + 2)
    branch_inputs = {
        "pix": image * smask.grid,
        "low": sp.apply_spectrum_mask(image, fmask_low),
        "high": sp.apply_spectrum_mask(image, fmask_high),
    }
    deepest = {}
    recons = {}
    for branch, masked in branch_inputs.items():
        feats_b = net.encode(masked)
        deepest[branch] = feats_b[3]
        recons[branch] = net.decode_reconstruct(feats_b[3], smask, branch)
    hrr = rc.hrr_total_loss(image, recons["pix"], recons["low"], recons["high"],
                            lambda_low=cfg.lambda_low, lambda_high=cfg.lambda_high,
                            beta=cfg.ffl_beta)

    # cross-branch guidance on the deepest detection feature
    feats = net.encode(image)
    x4 = feats[3]
    x4_hat, a_det = af.channel_nonlocal(x4)
    tag_params = {k: p[f"tag.{k}"] for k in ("wq", "wk", "wv")}
    for branch in ("pix", "low", "high"):
        _, a_rec = af.channel_nonlocal(deepest[branch])
        fw = af.fuse_affinities(a_det, a_rec, net.cfg.keep_fraction, tag_params)
        x4 = af.apply_guidance(x4, x4_hat, a_det, a_rec, fw)
    det = net.decode_detect(feats, deepest_override=x4)

    # stage 2: detection on the (detached) reconstruction and calibration
    i_rec = Tensor(np.clip(recons["pix"].data, 0.0, 1.0))
    det_rec = net.decode_detect(net.encode(i_rec))
    labels = (det.final.data >= 0.5).astype(int)
    labels_rec = (det_rec.final.data >= 0.5).astype(int)
    conf = pc.entropy_confidence(det_rec.final.data, pc.edge_map(det_rec.final.data),
                                 alpha=cfg.edge_alpha)

    heads = {k: p[f"pcc.{k}"] for k in ("mu_w", "mu_b", "sigma_w", "sigma_b")}
    weight_heads = {"w": p["pcc.fuse_w"], "b": p["pcc.fuse_b"]}
    dim = det.feature.shape[0]
    rng = np.random.default_rng([seed if eta_seed is None else eta_seed, 9157])

    def draw_eta():
        # deterministic latents (the posterior mean) when sampling is off
        eta = rng.standard_normal(dim)
        return eta if cfg.sample_latents else np.zeros_like(eta)
    fused = {}
    kl_pairs = []
    for m in (0, 1):
        proto_o = _pool(det.feature, (labels == m).astype(np.float64))
        proto_r = _pool(det_rec.feature, (labels_rec == m).astype(np.float64), conf.phi)
        mu_o, sig_o, z_o = pc.variational_encode(proto_o, heads, draw_eta())
        mu_r, sig_r, z_r = pc.variational_encode(proto_r, heads, draw_eta())
        f = pc.variational_fuse(z_o, z_r, weight_heads, p["pcc.gamma"], class_id=m)
        fused[m] = f.vector
        kl_pairs += [(mu_o, sig_o), (mu_r, sig_r),
                     (f.mu_a_o, f.sigma_a_o), (f.mu_a_r, f.sigma_a_r)]
    kl = pc.kl_loss(kl_pairs)
    _, probs = pc.metric_consistency(det.feature, fused, tau=cfg.tau)
    _, probs_rec = pc.metric_consistency(det_rec.feature, fused, tau=cfg.tau)
    pro, pro_rec = pc.prototype_losses(probs, det.final,
                                       probs_rec, det_rec.final, conf)

    total = (cfg.lambda_hrr * hrr.total + cfg.lambda_kl * kl
             + cfg.lambda_pro * pro + cfg.lambda_pro_rec * pro_rec)
    dec_val = None
    if gt is not None:
        dec = detection_loss(det.preds, gt)
        total = total + cfg.lambda_dec * dec
        dec_val = dec.item()
    report = LossReport(hrr.total.item(), kl.item(), pro.item(), pro_rec.item(),
                        dec_val, total.item())
    return total, report, det.final


def predict(state, image):
    """Plain detection forward pass; the evaluation path for every mode."""
    net = Model(state)
    out = net.decode_detect(net.encode(T.as_tensor(np.asarray(image, dtype=np.float64))))
    return out.final.data.copy()


def _subset_params(state, subset):
    if subset == "all":
        keep = lambda k: True
    elif subset == "norm":
        keep = lambda k: ".norm." in k
    elif subset == "encoder_detect":
        keep = lambda k: k.startswith(("enc.", "det."))
    else:
        raise ContractError(f"unknown parameter subset {subset!r}")
    return [v for k, v in state.params.items() if keep(k)]


def train_step(batch, state, optimizer, cfg, seed=0):
    """One supervised optimizer step over a batch of (image, gt) pairs."""
    if not batch:
        raise ContractError("empty batch")
    net = Model(state)
    state.zero_grad()
    total = None
    reports = []
    for i, (image, gt) in enumerate(batch):
        if gt is None:
            raise ContractError("train_step requires ground-truth masks")
        loss, report, _ = compute_losses(net, Tensor(np.asarray(image)), cfg,
                                         seed + 1000 * i, gt=gt)
        total = loss if total is None else total + loss
        reports.append(report)
    T.backward(total / len(batch))
    optimizer.step()
    n = len(batch)
    return LossReport(*(sum(getattr(r, f) for r in reports) / n
                        for f in ("hrr", "kl", "pro", "pro_rec", "dec", "total")))


def tta_adapt(image, state, cfg, seed=0):
    """Episodic self-supervised adaptation on a single unlabeled image."""
    image = np.asarray(image, dtype=np.float64)
    snapshot = state.snapshot()
    net = Model(state)
    candidates = _subset_params(state, cfg.param_subset)
    optimizer = None
    trace = []
    for i in range(cfg.iterations):
        state.zero_grad()
        # average the loss over several independently masked views of the
        # sample; matches batched training updates and damps gradient noise
        view_losses = []
        report = None
        for v in range(cfg.views):
            mask_seed = seed + 10 * i + 3001 * v if cfg.resample_masks else seed
            total, report, _ = compute_losses(net, Tensor(image), cfg, mask_seed)
            view_losses.append(total)
        total = view_losses[0] if cfg.views == 1 else \
            sum(view_losses[1:], view_losses[0]) * (1.0 / cfg.views)
        T.backward(total)
        if optimizer is None:
            live = [q for q in candidates if q.grad is not None]
            optimizer = AdamW(live, lr=cfg.lr)
        optimizer.step()
        trace.append(report)
    pred = predict(state, image)
    if cfg.episodic:
        state.restore(snapshot)
    return pred, trace


def tent_baseline(image, state, steps, lr=0.001):
    """Entropy minimization over normalization affine parameters only."""
    image = np.asarray(image, dtype=np.float64)
    snapshot = state.snapshot()
    net = Model(state)
    params = _subset_params(state, "norm")
    optimizer = AdamW(params, lr=lr)
    for _ in range(steps):
        state.zero_grad()
        out = net.decode_detect(net.encode(Tensor(image)))
        prob = T.clamp(out.final, 1e-7, 1.0 - 1e-7)
        entropy = T.tmean(T.neg(prob * T.log(prob)
                                + (1.0 - prob) * T.log(1.0 - prob)))
        T.backward(entropy)
        optimizer.step()
    pred = predict(state, image)
    state.restore(snapshot)
    return pred


CSV_HEADER = ["sample", "mode", "degradation", "severity",
              "s_measure", "e_measure", "wfbeta", "mae"]


def run_benchmark(dataset_root, state, mode, cfg, out_csv=None,
                  degradation="none", severity=0, seed=0, dump_dir=None):
    """Evaluate every dataset sample under one mode; returns (records, skipped)."""
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    if degradation != "none" and degradation not in D.DEGRADATION_KINDS:
        raise ContractError(f"unknown degradation {degradation!r}")
    records = []
    skipped = 0
    for idx, (name, image, gt) in enumerate(D.load_dataset(dataset_root)):
        try:
            if degradation != "none":
                image = D.degrade(image, degradation, severity, seed=seed + idx)
            if mode == "frozen":
                pred = predict(state, image)
            elif mode == "hcl":
                pred, _ = tta_adapt(image, state, cfg, seed=seed + idx)
            else:
                pred = tent_baseline(image, state, cfg.iterations, lr=cfg.lr)
            vals = mx.evaluate_metrics(pred, gt)
        except (ContractError, OSError) as exc:
            log.warning("sample %r skipped: %s", name, exc)
            skipped += 1
            continue
        if dump_dir is not None:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            D.save_image(Path(dump_dir) / f"{name}_{mode}.png", pred)
        records.append(D.SampleRecord(name, mode, degradation, int(severity),
                                      *vals.as_tuple()))
    if out_csv is not None:
        write_csv(records, out_csv)
    return records, skipped


def write_csv(records, path):
    """Per-sample rows plus one trailing mean row, fixed 8-decimal formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([r.sample, r.mode, r.degradation, r.severity,
                             f"{r.s_measure:.8f}", f"{r.e_measure:.8f}",
                             f"{r.wfbeta:.8f}", f"{r.mae:.8f}"])
        if records:
            means = [np.mean([getattr(r, k) for r in records])
                     for k in ("s_measure", "e_measure", "wfbeta", "mae")]
            writer.writerow(["mean", records[0].mode, records[0].degradation,
                             records[0].severity] + [f"{v:.8f}" for v in means])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ContractError(f"unexpected CSV header in {path}")
        return [row for row in reader]
