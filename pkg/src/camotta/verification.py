"""Runnable property suite binding every module invariant to a named, seeded
check. Each property reports its measured value and tolerance so failures are
reproducible from the command line.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import affinity as af
from . import data as D
from . import metrics as mx
from . import model as M
from . import pipeline as pl
from . import prototypes as pc
from . import reconstruction as rc
from . import spectral as sp
from . import tensor as T
from .tensor import ContractError, Tensor

log = logging.getLogger(__name__)

_MINI = dict(resolution=64, base=8, embed=16, depth=2, heads=2)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seed: int

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: value={self.value:.3e} "
                f"tol={self.tolerance:.3e} seed={self.seed}")


def _naive_dft2(img):
    c, h, w = img.shape
    u = np.arange(h)[:, None] * np.arange(h)[None, :]
    v = np.arange(w)[:, None] * np.arange(w)[None, :]
    eu = np.exp(-2j * np.pi * u / h)
    ev = np.exp(-2j * np.pi * v / w)
    return np.einsum("uh,chw,wv->cuv", eu, img, ev)


def _mini_net(seed):
    return M.Model(M.init_model(M.NetworkConfig(**_MINI), seed=seed))


def _rand_image(rng, size=64):
    return rng.random((3, size, size))


# -- tensor-core ---------------------------------------------------------------

def prop_tensor_gradient_battery(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    t6, t6b = Tensor(rng.random((1, 6, 6))), Tensor(rng.random((1, 6, 6)))
    t8 = [Tensor(rng.random((1, 8, 8))) for _ in range(3)]
    gt6 = (rng.random((6, 6)) > 0.5).astype(float)

    def f_pix(x):
        return rc.pixel_loss(x, t6)

    def f_freq(x):
        return sp.focal_frequency_loss(sp.dft2(x), sp.dft2(t6b))

    def f_hrr(x):
        return rc.hrr_total_loss(t8[0], x, t8[1], t8[2]).total

    def f_struct(x):
        return M.structure_loss(T.sigmoid(x), gt6)

    for fn, shape in ((f_pix, (1, 6, 6)), (f_freq, (1, 6, 6)),
                      (f_hrr, (1, 8, 8)), (f_struct, (6, 6))):
        worst = max(worst, T.grad_check(fn, rng.random(shape), eps=1e-5))
    return worst < 1e-3, worst, 1e-3


def prop_tensor_determinism(seed):
    rng = np.random.default_rng(seed)
    point = rng.random((1, 8, 8))
    outs = []
    for _ in range(2):
        x = Tensor(point.copy(), requires_grad=True)
        loss = sp.focal_frequency_loss(sp.dft2(x), sp.dft2(Tensor(np.zeros((1, 8, 8)))))
        T.backward(loss)
        outs.append((loss.data.tobytes(), x.grad.tobytes()))
    same = outs[0] == outs[1]
    return same, 0.0 if same else 1.0, 0.0


def prop_tensor_broadcast_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 1, 4))
    b = rng.random((1, 5, 4))
    got = (Tensor(a) * Tensor(b) + Tensor(b)).data
    ref = np.empty((3, 5, 4))
    for i in range(3):
        for j in range(5):
            for k in range(4):
                ref[i, j, k] = a[i, 0, k] * b[0, j, k] + b[0, j, k]
    err = float(np.abs(got - ref).max())
    return err <= 1e-12, err, 1e-12


# -- spectral ------------------------------------------------------------------

def prop_spectral_parseval(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        img = rng.random((1, 8, 8))
        spec = sp.dft2(Tensor(img))
        spatial = float((img ** 2).sum())
        spectral = float((spec.real.data ** 2 + spec.imag.data ** 2).sum()) / 64.0
        worst = max(worst, abs(spatial - spectral) / spatial)
    return worst < 1e-6, worst, 1e-6


def prop_spectral_linearity(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((1, 8, 8)), rng.random((1, 8, 8))
    a, b = 1.7, -0.4
    lhs = sp.dft2(Tensor(a * x + b * y))
    rx, ry = sp.dft2(Tensor(x)), sp.dft2(Tensor(y))
    err = max(np.abs(lhs.real.data - (a * rx.real.data + b * ry.real.data)).max(),
              np.abs(lhs.imag.data - (a * rx.imag.data + b * ry.imag.data)).max())
    return err < 1e-9, float(err), 1e-9


def prop_spectral_mask_real(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((1, 16, 16))
    worst = 0.0
    for region in ("low", "high"):
        mask = sp.make_freq_mask(16, 16, region, 0.4, seed)
        spec = sp.dft2(Tensor(img))
        low, high = sp.split_spectrum(spec, mask.radius)
        if region == "low":
            deg = sp.Spectrum(low.real * mask.grid + high.real,
                              low.imag * mask.grid + high.imag)
        else:
            deg = sp.Spectrum(low.real + high.real * mask.grid,
                              low.imag + high.imag * mask.grid)
        worst = max(worst, float(sp.inverse_imag_residue(deg)))
    return worst < 1e-9, worst, 1e-9


def prop_spectral_ffl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((1, 8, 8))
    same = sp.focal_frequency_loss(sp.dft2(Tensor(x)), sp.dft2(Tensor(x.copy()))).item()
    diff = sp.focal_frequency_loss(sp.dft2(Tensor(x)),
                                   sp.dft2(Tensor(rng.random((1, 8, 8))))).item()
    ok = abs(same) < 1e-12 and diff > 0
    return ok, same, 1e-12


# -- hrr -------------------------------------------------------------------------

def prop_hrr_zero_iff_perfect(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((1, 8, 8))
    perfect = rc.hrr_total_loss(Tensor(img), Tensor(img.copy()), Tensor(img.copy()),
                                Tensor(img.copy())).total.item()
    off = rc.hrr_total_loss(Tensor(img), Tensor(img + 0.05), Tensor(img.copy()),
                            Tensor(img.copy())).total.item()
    ok = abs(perfect) < 1e-9 and off > 1e-9
    return ok, perfect, 1e-9


def prop_hrr_gradient(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((1, 8, 8))
    lrec, hrec = Tensor(rng.random((1, 8, 8))), Tensor(rng.random((1, 8, 8)))

    def f(x):
        return rc.hrr_total_loss(Tensor(img), x, lrec, hrec).total

    err = T.grad_check(f, rng.random((1, 8, 8)), eps=1e-5)
    return err < 1e-3, err, 1e-3


def prop_hrr_monotone_masking(seed):
    rng = np.random.default_rng(seed)
    means = []
    for ratio in (0.0, 0.25, 0.5, 1.0):
        vals = []
        for s in range(10):
            img = rng.random((1, 32, 32))
            m = rc.make_spatial_mask(32, 32, 16, ratio, seed=seed + s)
            vals.append(rc.pixel_loss(Tensor(img * m.grid), Tensor(img)).item())
        means.append(float(np.mean(vals)))
    worst = min(b - a for a, b in zip(means, means[1:]))
    return worst >= -1e-12, worst, 1e-12


# -- tag -------------------------------------------------------------------------

def prop_tag_residual_identity(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 4, 4)))
    x_hat, a = af.channel_nonlocal(x)
    zero = Tensor(np.zeros((3, 3)))
    fw = af.FusionWeights(zero, zero, 1.0, np.ones((3, 3)))
    err = float(np.abs(af.apply_guidance(x, x_hat, a, a, fw).data - x.data).max())
    return err < 1e-12, err, 1e-12


def prop_tag_partition_of_unity(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.random((4, 4)))
    b = Tensor(rng.random((4, 4)))
    fw = af.fuse_affinities(a, b, 0.5, af.init_fusion_params(4, False))
    s = fw.w1.data + fw.w2.data
    err = float(np.abs(s[fw.keep_mask == 1] - 1.0).max())
    return err < 1e-9, err, 1e-9


def prop_tag_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 3, 3))
    perm = rng.permutation(5)
    x_hat, a = af.channel_nonlocal(Tensor(x))
    xp_hat, ap = af.channel_nonlocal(Tensor(x[perm]))
    err = max(float(np.abs(ap.data - a.data[perm][:, perm]).max()),
              float(np.abs(xp_hat.data - x_hat.data[perm]).max()))
    return err < 1e-9, err, 1e-9


# -- pcc -------------------------------------------------------------------------

def prop_pcc_confidence_sum(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        h, w = rng.integers(3, 10, size=2)
        conf = pc.entropy_confidence(rng.random((h, w)),
                                     (rng.random((h, w)) > 0.5).astype(float))
        worst = max(worst, abs(conf.phi.sum() - (h * w - 1) / (h * w)))
    return worst < 1e-9, worst, 1e-9


def prop_pcc_fusion_monotone(seed):
    gamma = Tensor(1.0)
    prev = None
    ok = True
    for v in np.linspace(0.05, 2.0, 10):
        a = pc.variance_attention(Tensor(np.array([float(v), 1.0])), gamma)
        ok = ok and abs(a.data.sum() - 1.0) < 1e-9
        if prev is not None and a.data[0] >= prev:
            ok = False
        prev = a.data[0]
    return ok, 0.0 if ok else 1.0, 1e-9


def prop_pcc_kl_minimum(seed):
    base = pc.kl_loss([(Tensor(np.zeros(2)), Tensor(np.ones(2)))]).item()
    worst = np.inf
    for dmu, dsig in ((0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)):
        val = pc.kl_loss([(Tensor(np.zeros(2) + dmu), Tensor(np.ones(2) + dsig))]).item()
        worst = min(worst, val - base)
    return worst > 0 and abs(base) < 1e-12, worst, 0.0


def prop_pcc_gradients(seed):
    rng = np.random.default_rng(seed)
    protos = {0: Tensor(rng.normal(size=2)), 1: Tensor(rng.normal(size=2))}
    target = (rng.random((2, 2)) > 0.5).astype(float)
    conf = pc.entropy_confidence(rng.random((2, 2)), np.zeros((2, 2)))

    def f_kl(x):
        return pc.kl_loss([(x[0:1], x[1:2])])

    def f_metric(x):
        # moderate tau keeps the softmax unsaturated so finite differences
        # resolve the gradient above float noise
        _, probs = pc.metric_consistency(x, protos, tau=0.5)
        return T.tsum(T.square(probs))

    def f_losses(x):
        probs = T.softmax(x, axis=0)
        a, b = pc.prototype_losses(probs, target, probs, target, conf)
        return a + b

    worst = max(T.grad_check(f_kl, np.array([0.3, 0.7]), eps=1e-6),
                T.grad_check(f_metric, rng.normal(size=(2, 3, 3)) + 2.0, eps=1e-5),
                T.grad_check(f_losses, rng.normal(size=(2, 2, 2)), eps=1e-5))
    return worst < 1e-3, worst, 1e-3


def prop_pcc_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(3, 4, 4))
    protos = {0: Tensor(rng.normal(size=3)), 1: Tensor(rng.normal(size=3))}
    s1, _ = pc.metric_consistency(Tensor(feat), protos)
    s2, _ = pc.metric_consistency(Tensor(feat * 11.0), protos)
    err = float(np.abs(s1.data - s2.data).max())
    return err < 1e-9, err, 1e-9


# -- model -----------------------------------------------------------------------

def prop_model_snapshot_bit_exact(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    rng = np.random.default_rng(seed)
    img = Tensor(_rand_image(rng))
    before = M.Model(state).decode_detect(M.Model(state).encode(img)).final.data.copy()
    snap = state.snapshot()
    for v in state.params.values():
        v.data = v.data + 0.01
    state.restore(snap)
    after = M.Model(state).decode_detect(M.Model(state).encode(img)).final.data
    same = before.tobytes() == after.tobytes()
    return same, 0.0 if same else 1.0, 0.0


def prop_model_no_dead_parameters(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    img, gt = D.gen_scene(D.SceneSpec(size=64, seed=seed))
    total, _, _ = pl.compute_losses(M.Model(state), Tensor(img),
                                    pl.AdaptationConfig(), seed, gt=gt)
    T.backward(total)
    dead = [k for k, v in state.params.items()
            if v.grad is None or np.abs(v.grad).max() == 0.0]
    return not dead, float(len(dead)), 0.0


def prop_model_encoder_shared(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    net = M.Model(state)
    rng = np.random.default_rng(seed)
    img = Tensor(_rand_image(rng))
    mask = rc.make_spatial_mask(64, 64, 16, 0.25, seed)
    feats = net.encode(img)
    rec = net.decode_reconstruct(feats[3], mask, "pix")
    state.zero_grad()
    T.backward(T.tmean(T.square(rec)))
    rec_grads = {k for k, v in state.params.items()
                 if k.startswith("enc.") and v.grad is not None}
    state.zero_grad()
    T.backward(T.tmean(net.decode_detect(net.encode(img)).final))
    det_grads = {k for k, v in state.params.items()
                 if k.startswith("enc.") and v.grad is not None}
    enc_names = {k for k in state.params if k.startswith("enc.")}
    ok = rec_grads == enc_names and det_grads == enc_names
    return ok, float(len(enc_names - (rec_grads & det_grads))), 0.0


# -- pipeline --------------------------------------------------------------------

def prop_pipeline_no_gt_dependence(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    img, _ = D.gen_scene(D.SceneSpec(size=64, seed=seed))
    cfg = pl.AdaptationConfig(iterations=1)
    a, _ = pl.tta_adapt(img, state, cfg, seed=seed)
    # a corrupted ground truth cannot influence the result: the interface
    # never receives it, so a second run must match bit-exactly
    b, _ = pl.tta_adapt(img.copy(), state, cfg, seed=seed)
    same = a.tobytes() == b.tobytes()
    return same, 0.0 if same else 1.0, 0.0


def prop_pipeline_episodic_isolation(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    img_a, _ = D.gen_scene(D.SceneSpec(size=64, seed=seed))
    img_b, _ = D.gen_scene(D.SceneSpec(size=64, seed=seed + 1))
    before = pl.predict(state, img_b)
    pl.tta_adapt(img_a, state, pl.AdaptationConfig(iterations=1), seed=seed)
    after = pl.predict(state, img_b)
    same = before.tobytes() == after.tobytes()
    return same, 0.0 if same else 1.0, 0.0


def prop_pipeline_loss_composition(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    img, _ = D.gen_scene(D.SceneSpec(size=64, seed=seed))
    net = M.Model(state)
    t1, r1, _ = pl.compute_losses(net, Tensor(img), pl.AdaptationConfig(), seed)
    t0, r0, _ = pl.compute_losses(net, Tensor(img),
                                  pl.AdaptationConfig(lambda_kl=0.0), seed)
    err = abs((t1.item() - t0.item()) - r1.kl) / max(abs(r1.kl), 1e-12)
    return err < 1e-9, err, 1e-9


def prop_pipeline_self_supervised_descent(seed):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    cfg = pl.AdaptationConfig(iterations=30)
    deltas = []
    for i in range(20):
        img, _ = D.gen_scene(D.SceneSpec(size=64, seed=seed + i))
        img = D.degrade(img, "gb", 4, seed=seed + i)
        _, trace = pl.tta_adapt(img, state, cfg, seed=seed + i)
        deltas.append(trace[-1].hrr - trace[0].hrr)
    med = float(np.median(deltas))
    return med < 0.0, med, 0.0


# -- data-bench ------------------------------------------------------------------

def prop_data_degrade_deterministic(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((3, 24, 24))
    ok = True
    for kind in D.DEGRADATION_KINDS:
        for sev in (1, 3, 5):
            a = D.degrade(img, kind, sev, seed=seed)
            b = D.degrade(img, kind, sev, seed=seed)
            ok = ok and a.tobytes() == b.tobytes()
    return ok, 0.0 if ok else 1.0, 0.0


def prop_data_degrade_bounds(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((3, 24, 24))
    worst = 0.0
    ok = True
    for kind in D.DEGRADATION_KINDS:
        out = D.degrade(img, kind, 5, seed=seed)
        ok = ok and out.shape == img.shape
        worst = max(worst, float(max(-out.min(), out.max() - 1.0)))
    return ok and worst <= 0.0, worst, 0.0


def prop_data_metric_bounds(seed):
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(5):
        pred = rng.random((12, 12))
        gt = (rng.random((12, 12)) > 0.5).astype(float)
        vals = mx.evaluate_metrics(pred, gt).as_tuple()
        ok = ok and all(0.0 <= v <= 1.0 for v in vals)
    perfect = mx.evaluate_metrics(gt, gt)
    ok = ok and perfect.mae == 0.0 and abs(perfect.wfbeta - 1.0) < 1e-6
    return ok, 0.0 if ok else 1.0, 1e-6


def prop_data_monotone_difficulty(seed, samples=50):
    state = M.init_model(M.NetworkConfig(**_MINI), seed=seed)
    scenes = [D.gen_scene(D.SceneSpec(size=64, seed=seed + i)) for i in range(samples)]
    worst = np.inf
    for kind in D.DEGRADATION_KINDS:
        prev = None
        for sev in (1, 3, 5):
            maes = []
            for i, (img, gt) in enumerate(scenes):
                pred = pl.predict(state, D.degrade(img, kind, sev, seed=seed + i))
                maes.append(mx.mae(pred, gt))
            mean = float(np.mean(maes))
            if prev is not None:
                worst = min(worst, mean - prev)
            prev = mean
    return worst >= -0.005, worst, 0.005


REGISTRY = {
    "tensor.gradient-battery": prop_tensor_gradient_battery,
    "tensor.determinism": prop_tensor_determinism,
    "tensor.broadcast-oracle": prop_tensor_broadcast_oracle,
    "spectral.parseval": prop_spectral_parseval,
    "spectral.linearity": prop_spectral_linearity,
    "spectral.symmetric-mask-real": prop_spectral_mask_real,
    "spectral.ffl-nonnegative": prop_spectral_ffl_nonnegative,
    "hrr.zero-iff-perfect": prop_hrr_zero_iff_perfect,
    "hrr.gradient": prop_hrr_gradient,
    "hrr.monotone-masking": prop_hrr_monotone_masking,
    "tag.residual-identity": prop_tag_residual_identity,
    "tag.partition-of-unity": prop_tag_partition_of_unity,
    "tag.permutation-equivariance": prop_tag_permutation_equivariance,
    "pcc.confidence-sum": prop_pcc_confidence_sum,
    "pcc.fusion-monotone": prop_pcc_fusion_monotone,
    "pcc.kl-minimum": prop_pcc_kl_minimum,
    "pcc.gradients": prop_pcc_gradients,
    "pcc.scale-invariance": prop_pcc_scale_invariance,
    "model.snapshot-bit-exact": prop_model_snapshot_bit_exact,
    "model.no-dead-parameters": prop_model_no_dead_parameters,
    "model.encoder-shared": prop_model_encoder_shared,
    "pipeline.no-gt-dependence": prop_pipeline_no_gt_dependence,
    "pipeline.episodic-isolation": prop_pipeline_episodic_isolation,
    "pipeline.loss-composition": prop_pipeline_loss_composition,
    "pipeline.self-supervised-descent": prop_pipeline_self_supervised_descent,
    "data.degrade-deterministic": prop_data_degrade_deterministic,
    "data.degrade-bounds": prop_data_degrade_bounds,
    "data.metric-bounds": prop_data_metric_bounds,
    "data.monotone-difficulty": prop_data_monotone_difficulty,
}

# properties that run benchmark-sized experiments; skipped unless requested
SLOW_PROPERTIES = {"pipeline.self-supervised-descent", "data.monotone-difficulty"}


def run_property_suite(name_filter=None, seed=0, include_slow=True):
    results = []
    for name, fn in REGISTRY.items():
        if name_filter and name_filter not in name:
            continue
        if not include_slow and name in SLOW_PROPERTIES:
            continue
        try:
            passed, value, tol = fn(seed)
        except Exception as exc:  # a crash is a failure, not an abort
            log.warning("property %s raised: %s", name, exc)
            passed, value, tol = False, float("nan"), 0.0
        results.append(PropertyResult(name, bool(passed), float(value), tol, seed))
    return results


# -- acceptance experiments ------------------------------------------------------
#
# Benchmark-scale constants. The network runs at the smallest configuration
# that keeps all architectural structure intact; training and adaptation
# recipes were selected by grid search on held-out synthetic scenes.

ACCEPTANCE_NET = dict(resolution=64, base=16, embed=32, depth=2, heads=2)
ACCEPTANCE_CAMOUFLAGE = 0.7
TRAIN_SCENES = 200
TRAIN_STEPS = 500
TRAIN_BATCH = 4
TRAIN_LR = 2e-3
TRAIN_CONTRAST_JITTER = 0.5
TEST_SEED_BASE = 1000
BENCH_SAMPLES = 50
RATIO_SAMPLES = 30
TENT_LR = 1e-3  # the entropy baseline's published default


def acceptance_train_config():
    """Training loss weights: detection-dominant, reconstruction co-trained."""
    return pl.AdaptationConfig(lambda_hrr=1e-3)


def acceptance_tta_config():
    """Benchmark adaptation recipe: normalization affine subset, 30 iterations,
    two masked views per update, deterministic (mean) latents."""
    return pl.AdaptationConfig(param_subset="norm", lr=1.5e-2, views=2,
                               sample_latents=False,
                               lambda_hrr=1e-3, lambda_kl=0.1)


def train_acceptance_model(seed=0, verbose=False):
    """Train the benchmark checkpoint from scratch; deterministic in seed."""
    from .tensor import AdamW

    net_cfg = M.NetworkConfig(**ACCEPTANCE_NET)
    scenes = [D.gen_scene(D.SceneSpec(size=net_cfg.resolution,
                                      camouflage=ACCEPTANCE_CAMOUFLAGE, seed=seed + i))
              for i in range(TRAIN_SCENES)]
    state = M.init_model(net_cfg, seed=seed)
    cfg = acceptance_train_config()
    optimizer = AdamW(state.parameters(), lr=TRAIN_LR)
    rng = np.random.default_rng(seed)
    for step in range(TRAIN_STEPS):
        idx = rng.choice(TRAIN_SCENES, size=TRAIN_BATCH, replace=False)
        batch = [(D.contrast_jitter(scenes[i][0], TRAIN_CONTRAST_JITTER, rng),
                  scenes[i][1]) for i in idx]
        report = pl.train_step(batch, state, optimizer, cfg, seed=seed + 100 * step)
        if verbose and step % 100 == 0:
            log.info("train step %d: dec=%.3f hrr=%.1f", step, report.dec, report.hrr)
    return state


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} ({self.name}): {status} [{self.detail}]"


class AcceptanceContext:
    """Shared state for the acceptance criteria: the trained checkpoint, the
    synthetic test set, and cached benchmark results reused across criteria.
    """

    def __init__(self, checkpoint=None, allow_train=True, seed=0):
        if checkpoint is None and not allow_train:
            raise ContractError(
                "no checkpoint given and training is disabled; provide a "
                "checkpoint or allow training within the run")
        self.checkpoint = checkpoint
        self.allow_train = allow_train
        self.seed = seed
        self.train_time = 0.0
        self._state = None
        self._cache = {}

    @property
    def state(self):
        if self._state is None:
            if self.checkpoint is not None:
                self._state = M.ModelState.load(self.checkpoint)
            else:
                t0 = time.time()
                self._state = train_acceptance_model(seed=self.seed)
                self.train_time = time.time() - t0
        return self._state

    def scenes(self, n=BENCH_SAMPLES):
        key = ("scenes", n)
        if key not in self._cache:
            res = ACCEPTANCE_NET["resolution"]
            self._cache[key] = [
                D.gen_scene(D.SceneSpec(size=res, camouflage=ACCEPTANCE_CAMOUFLAGE,
                                        seed=TEST_SEED_BASE + i))
                for i in range(n)]
        return self._cache[key]

    def degraded(self, kind="gb", severity=4, n=BENCH_SAMPLES):
        key = ("deg", kind, severity, n)
        if key not in self._cache:
            self._cache[key] = [
                (D.degrade(img, kind, severity, seed=i), gt)
                for i, (img, gt) in enumerate(self.scenes(n))]
        return self._cache[key]

    def frozen_maes(self, kind="gb", severity=4, n=BENCH_SAMPLES):
        key = ("frozen", kind, severity, n)
        if key not in self._cache:
            self._cache[key] = np.array([
                mx.mae(pl.predict(self.state, img), gt)
                for img, gt in self.degraded(kind, severity, n)])
        return self._cache[key]

    def clean_maes(self, n=BENCH_SAMPLES):
        key = ("clean", n)
        if key not in self._cache:
            self._cache[key] = np.array([
                mx.mae(pl.predict(self.state, img), gt)
                for img, gt in self.scenes(n)])
        return self._cache[key]

    def hcl_maes(self, spatial_ratio=None, n=BENCH_SAMPLES):
        key = ("hcl", spatial_ratio, n)
        if key not in self._cache:
            cfg = acceptance_tta_config()
            if spatial_ratio is not None:
                cfg.spatial_ratio = spatial_ratio
            self._cache[key] = np.array([
                mx.mae(pl.tta_adapt(img, self.state, cfg, seed=i)[0], gt)
                for i, (img, gt) in enumerate(self.degraded(n=n))])
        return self._cache[key]

    def tent_maes(self, n=BENCH_SAMPLES):
        key = ("tent", n)
        if key not in self._cache:
            iters = acceptance_tta_config().iterations
            self._cache[key] = np.array([
                mx.mae(pl.tent_baseline(img, self.state, iters, lr=TENT_LR), gt)
                for img, gt in self.degraded(n=n)])
        return self._cache[key]


def criterion_1_spectral_exactness(ctx):
    rng = np.random.default_rng(ctx.seed)
    t0 = time.time()
    worst_dft = worst_round = worst_parseval = 0.0
    for _ in range(20):
        h, w = rng.integers(8, 17, size=2)
        img = rng.random((1, int(h), int(w)))
        spec = sp.dft2(Tensor(img))
        ref = _naive_dft2(img)
        worst_dft = max(worst_dft,
                        float(np.abs(spec.real.data - ref.real).max()),
                        float(np.abs(spec.imag.data - ref.imag).max()))
        worst_round = max(worst_round,
                          float(np.abs(sp.idft2(spec).data - img).max()))
        spatial = float((img ** 2).sum())
        spectral = spec.energy() / (int(h) * int(w))
        worst_parseval = max(worst_parseval, abs(spatial - spectral) / spatial)
    elapsed = time.time() - t0
    ok = worst_dft < 1e-9 and worst_round < 1e-6 and worst_parseval < 1e-6 \
        and elapsed < 10.0
    return ok, (f"dft={worst_dft:.2e} roundtrip={worst_round:.2e} "
                f"parseval={worst_parseval:.2e} time={elapsed:.1f}s")


def criterion_2_closed_forms(ctx):
    ffl = sp.focal_frequency_loss(
        sp.Spectrum(Tensor(np.array([[[3.0]]])), Tensor(np.array([[[4.0]]]))),
        sp.Spectrum(Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 1, 1)))),
        beta=1.0).item()
    kl = pc.kl_loss([(Tensor(np.array([1.0])), Tensor(np.array([1.0])))]).item()
    rng = np.random.default_rng(ctx.seed)
    worst_phi = 0.0
    for _ in range(5):
        h, w = rng.integers(3, 12, size=2)
        conf = pc.entropy_confidence(rng.random((h, w)),
                                     (rng.random((h, w)) > 0.5).astype(float))
        worst_phi = max(worst_phi, abs(conf.phi.sum() - (h * w - 1) / (h * w)))
    att = pc.variance_attention(Tensor(np.array([0.0, np.log(4.0)])),
                                Tensor(1.0)).data
    att_err = float(np.abs(att - np.array([0.8, 0.2])).max())
    ok = (abs(ffl - 125.0) < 1e-9 and abs(kl - 0.5) < 1e-12
          and worst_phi < 1e-9 and att_err < 1e-12)
    return ok, (f"ffl={ffl:.12g} kl={kl:.12g} phi_err={worst_phi:.2e} "
                f"att_err={att_err:.2e}")


def criterion_3_gradient_battery(ctx):
    t0 = time.time()
    rng = np.random.default_rng(ctx.seed)
    worst = max(prop_tensor_gradient_battery(ctx.seed)[1],
                prop_hrr_gradient(ctx.seed)[1],
                prop_pcc_gradients(ctx.seed)[1])

    # TAG path: non-local affinity, fusion, and residual guidance
    other = Tensor(rng.normal(size=(4, 3, 3)))
    _, a_rec = af.channel_nonlocal(other)
    tag_params = af.init_fusion_params(4, requires_grad=False)

    def f_tag(x):
        x_hat, a = af.channel_nonlocal(x)
        # keep_fraction 1 keeps the Top-K selection off the finite-difference path
        fw = af.fuse_affinities(a, a_rec, 1.0, tag_params)
        return T.tsum(T.square(af.apply_guidance(x, x_hat, a, a_rec, fw)))

    worst = max(worst, T.grad_check(f_tag, rng.normal(size=(4, 3, 3)), eps=1e-5))

    # variational-fusion path: encode both prototypes, fuse, plus the KL term
    d = 3
    heads = {"mu_w": Tensor(rng.normal(size=(d, d)) * 0.3),
             "mu_b": Tensor(rng.normal(size=d) * 0.1),
             "sigma_w": Tensor(rng.normal(size=(d, d)) * 0.3),
             "sigma_b": Tensor(rng.normal(size=d) * 0.1)}
    weight_heads = {"w": Tensor(rng.normal(size=(d, 2)) * 0.3),
                    "b": Tensor(rng.normal(size=2) * 0.1)}
    gamma = Tensor(1.0)
    etas = rng.standard_normal((2, d))

    def f_fuse(v):
        mu_o, sig_o, z_o = pc.variational_encode(v[0], heads, etas[0])
        mu_r, sig_r, z_r = pc.variational_encode(v[1], heads, etas[1])
        fused = pc.variational_fuse(z_o, z_r, weight_heads, gamma)
        return (T.tsum(T.square(fused.vector))
                + pc.kl_loss([(mu_o, sig_o), (mu_r, sig_r)]))

    worst = max(worst, T.grad_check(f_fuse, rng.normal(size=(2, d)), eps=1e-5))
    elapsed = time.time() - t0
    ok = worst < 1e-3 and elapsed < 120.0
    return ok, f"max_rel_err={worst:.2e} time={elapsed:.1f}s"


def criterion_4_overfit(ctx):
    from .tensor import AdamW

    t0 = time.time()
    net_cfg = M.NetworkConfig(**ACCEPTANCE_NET)
    batch = [D.gen_scene(D.SceneSpec(size=net_cfg.resolution,
                                     camouflage=ACCEPTANCE_CAMOUFLAGE,
                                     seed=ctx.seed + i)) for i in range(4)]
    state = M.init_model(net_cfg, seed=ctx.seed)
    cfg = acceptance_train_config()
    optimizer = AdamW(state.parameters(), lr=TRAIN_LR)
    totals = []
    for step in range(50):
        report = pl.train_step(batch, state, optimizer, cfg,
                               seed=ctx.seed + 100 * step)
        totals.append(report.total)
    elapsed = time.time() - t0
    reduction = 1.0 - totals[-1] / totals[0]
    ok = reduction >= 0.5 and elapsed < 300.0
    return ok, (f"total {totals[0]:.1f} -> {totals[-1]:.1f} "
                f"(-{100 * reduction:.0f}%) time={elapsed:.0f}s")


def criterion_5_adaptation_helps(ctx):
    t0 = time.time()
    frozen = ctx.frozen_maes()
    hcl = ctx.hcl_maes()
    frac = float((hcl < frozen).mean())
    elapsed = time.time() - t0 + ctx.train_time
    ok = hcl.mean() < frozen.mean() and frac >= 0.70 and elapsed < 1800.0
    return ok, (f"frozen={frozen.mean():.4f} hcl={hcl.mean():.4f} "
                f"improved={100 * frac:.0f}% time={elapsed:.0f}s")


def criterion_6_degradation_ordering(ctx):
    clean = ctx.clean_maes().mean()
    inc = {kind: ctx.frozen_maes(kind, 3).mean() - clean
           for kind in ("gb", "gn", "cr")}
    slack = 0.005
    ok = (inc["gb"] + slack >= inc["gn"]) and (inc["gn"] + slack >= inc["cr"])
    return ok, (f"gb=+{inc['gb']:.4f} gn=+{inc['gn']:.4f} cr=+{inc['cr']:.4f} "
                f"slack={slack}")


def criterion_7_hcl_vs_tent(ctx):
    hcl = ctx.hcl_maes().mean()
    tent = ctx.tent_maes().mean()
    ok = hcl <= tent
    return ok, f"hcl={hcl:.4f} tent={tent:.4f}"


def criterion_8_mask_ratio(ctx):
    frozen = ctx.frozen_maes(n=RATIO_SAMPLES)
    gain25 = float((frozen - ctx.hcl_maes(spatial_ratio=0.25, n=RATIO_SAMPLES)).mean())
    gain75 = float((frozen - ctx.hcl_maes(spatial_ratio=0.75, n=RATIO_SAMPLES)).mean())
    ok = gain25 >= gain75
    return ok, f"gain@25%={gain25:.4f} gain@75%={gain75:.4f}"


def criterion_9_episodic_integrity(ctx):
    import tempfile
    from pathlib import Path

    state = ctx.state
    before = {k: v.data.tobytes() for k, v in state.params.items()}
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for i, (img, gt) in enumerate(ctx.degraded(n=3)):
            D.save_sample(root, f"s{i}", img, gt)
        cfg = acceptance_tta_config()
        cfg.iterations = 2
        pl.run_benchmark(root, state, "hcl", cfg,
                         out_csv=str(root / "bench.csv"), seed=ctx.seed)
    after = {k: v.data.tobytes() for k, v in state.params.items()}
    params_ok = before == after

    img = ctx.degraded(n=1)[0][0]
    cfg0 = acceptance_tta_config()
    cfg0.iterations = 0
    zero_iter, _ = pl.tta_adapt(img, state, cfg0, seed=ctx.seed)
    frozen = pl.predict(state, img)
    zero_ok = zero_iter.tobytes() == frozen.tobytes()
    ok = params_ok and zero_ok
    return ok, f"params_bit_identical={params_ok} zero_iter_equals_frozen={zero_ok}"


def criterion_10_metric_sanity(ctx):
    rng = np.random.default_rng(ctx.seed)
    gt = (rng.random((24, 24)) > 0.5).astype(float)
    perfect = mx.evaluate_metrics(gt, gt).as_tuple()
    perfect_err = float(np.abs(np.array(perfect) - np.array([1, 1, 1, 0])).max())
    inverted = mx.mae(1.0 - gt, gt)
    pred = rng.random((24, 24))
    loop = sum(abs(pred[i, j] - gt[i, j]) for i in range(24) for j in range(24)) / 576
    loop_err = abs(mx.mae(pred, gt) - loop)
    ok = perfect_err < 1e-9 and abs(inverted - 1.0) < 1e-12 and loop_err < 1e-12
    return ok, (f"perfect_err={perfect_err:.2e} inverted_mae={inverted} "
                f"loop_err={loop_err:.2e}")


CRITERIA = [
    (1, "spectral exactness", criterion_1_spectral_exactness),
    (2, "closed-form loss values", criterion_2_closed_forms),
    (3, "gradient battery", criterion_3_gradient_battery),
    (4, "overfit smoke test", criterion_4_overfit),
    (5, "adaptation helps under degradation", criterion_5_adaptation_helps),
    (6, "degradation ordering", criterion_6_degradation_ordering),
    (7, "hcl vs tent", criterion_7_hcl_vs_tent),
    (8, "mask-ratio sweep", criterion_8_mask_ratio),
    (9, "episodic integrity", criterion_9_episodic_integrity),
    (10, "metric sanity", criterion_10_metric_sanity),
]


def run_acceptance(checkpoint=None, allow_train=True, seed=0, out_dir=None):
    """Execute every acceptance criterion once; returns CriterionResults.

    Raises ContractError when no checkpoint is given and training is
    disallowed. With out_dir set, writes acceptance.txt (one line per
    criterion) and acceptance.csv.
    """
    ctx = AcceptanceContext(checkpoint=checkpoint, allow_train=allow_train,
                            seed=seed)
    results = []
    for number, name, fn in CRITERIA:
        try:
            passed, detail = fn(ctx)
        except Exception as exc:  # a crash is a failure, not an abort
            log.warning("criterion %d raised: %s", number, exc)
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CriterionResult(number, name, bool(passed), detail))
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "acceptance.txt").write_text(
            "\n".join(r.line() for r in results) + "\n")
        rows = ["number,name,passed,detail"]
        rows += [f"{r.number},{r.name},{int(r.passed)},\"{r.detail}\""
                 for r in results]
        (out / "acceptance.csv").write_text("\n".join(rows) + "\n")
    return results
