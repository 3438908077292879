"""Stage-one training: predictor abstraction (per-scene tables or a small
shared conv net, both with hand-derived backward passes), the canonical and
cycle-aggregative novel branches, the no-aggregation baseline branch, the
optimizer, and checkpoint IO.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .aggregate import aggregate_pair
from .core import Camera, GaussianSet, LossWeights, Thresholds
from .lift import (AttributeMaps, LiftGradients, RgbdInput, footprint_log_scale,
                   init_attribute_maps, lift_backward, lift_pixel_aligned,
                   rgbd_from_render)
from .losses import (LossReport, StopGradBoundary, cycle_loss_grad, make_report,
                     photometric_loss_grad, pyramid_surrogate, recon_loss_grad,
                     total_loss, tv_loss_grad)
from .raster import (GradientBuffer, RenderGradients, rasterize,
                     rasterize_backward, rasterize_with_cache)
from .views import CameraSampler, sample_novel_camera

CHECKPOINT_MAGIC = b"SPLC"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# predictors


class DirectFitPredictor:
    """Per-(scene, view) learnable attribute tables; the lightest predictor
    whose gradients are exactly the lift gradients."""

    name = "direct_fit"

    def __init__(self):
        self.tables: dict[str, dict[str, np.ndarray]] = {}

    def _table(self, rgbd: RgbdInput) -> dict[str, np.ndarray]:
        t = self.tables.get(rgbd.key)
        if t is None:
            init = init_attribute_maps(rgbd)
            t = {"offset": init.offset.copy(),
                 "color_residual": init.color_residual.copy(),
                 "opacity_raw": init.opacity_raw.copy(),
                 "log_scale": init.log_scale.copy(),
                 "rotation": init.rotation.copy()}
            self.tables[rgbd.key] = t
        return t

    def predict(self, rgbd: RgbdInput) -> AttributeMaps:
        t = self._table(rgbd)
        return AttributeMaps(**{k: v for k, v in t.items()})

    def backward(self, rgbd: RgbdInput, lg: LiftGradients):
        grads = {f"{rgbd.key}/offset": lg.d_offset,
                 f"{rgbd.key}/color_residual": lg.d_color_residual,
                 f"{rgbd.key}/opacity_raw": lg.d_opacity_raw,
                 f"{rgbd.key}/log_scale": lg.d_log_scale,
                 f"{rgbd.key}/rotation": lg.d_rotation}
        return grads, np.zeros_like(rgbd.image), np.zeros_like(rgbd.depth)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{key}/{fieldname}": arr
                for key, t in self.tables.items() for fieldname, arr in t.items()}

    def load_params(self, tensors: dict[str, np.ndarray]):
        for name, arr in tensors.items():
            key, fieldname = name.rsplit("/", 1)
            self.tables.setdefault(key, {})[fieldname] = arr.astype(np.float64)


def _conv_cols(x: np.ndarray) -> np.ndarray:
    """im2col for 3x3 same-padding convolution of an (H,W,C) map."""
    H, W, C = x.shape
    xp = np.zeros((H + 2, W + 2, C))
    xp[1:-1, 1:-1] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(0, 1))
    return win.reshape(H * W, C * 9)  # ordering: (C, ky, kx)


def _conv_cols_backward(d_cols: np.ndarray, shape) -> np.ndarray:
    H, W, C = shape
    d = d_cols.reshape(H, W, C, 3, 3)
    d_xp = np.zeros((H + 2, W + 2, C))
    for ky in range(3):
        for kx in range(3):
            d_xp[ky:ky + H, kx:kx + W] += d[:, :, :, ky, kx]
    return d_xp[1:-1, 1:-1]


class TinyConvPredictor:
    """Shared 3-layer 3x3 conv net (16 channels, ReLU) over the RGB-D input.
    The head starts at zero so step 0 reproduces the identity-style maps;
    log scales are predicted as residuals on the footprint-based default.
    """

    name = "tiny_conv"
    HIDDEN = 16
    OUT = 14  # offset 3 | color residual 3 | opacity 1 | log scale 3 | rotation 4

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        h = self.HIDDEN

        def he(cout, cin):
            return rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), (cout, cin * 9))

        self.weights = {
            "w1": he(h, 4), "b1": np.zeros(h),
            "w2": he(h, h), "b2": np.zeros(h),
            "w3": np.zeros((self.OUT, h * 9)),
            "b3": np.concatenate([np.zeros(6), [4.0], np.zeros(3), [1.0, 0, 0, 0]]),
        }

    def _stack_input(self, rgbd: RgbdInput) -> np.ndarray:
        return np.concatenate([rgbd.image, rgbd.depth[..., None]], axis=-1)

    def _forward(self, rgbd: RgbdInput):
        x = self._stack_input(rgbd)
        H, W, _ = x.shape
        w = self.weights
        c1 = _conv_cols(x)
        a1 = c1 @ w["w1"].T + w["b1"]
        h1 = np.maximum(a1, 0.0).reshape(H, W, self.HIDDEN)
        c2 = _conv_cols(h1)
        a2 = c2 @ w["w2"].T + w["b2"]
        h2 = np.maximum(a2, 0.0).reshape(H, W, self.HIDDEN)
        c3 = _conv_cols(h2)
        out = (c3 @ w["w3"].T + w["b3"]).reshape(H, W, self.OUT)
        return out, (x, c1, a1, h1, c2, a2, h2, c3)

    def predict(self, rgbd: RgbdInput) -> AttributeMaps:
        out, _ = self._forward(rgbd)
        base_ls = footprint_log_scale(rgbd.depth, rgbd.camera)[..., None]
        return AttributeMaps(
            offset=out[..., 0:3],
            color_residual=out[..., 3:6],
            opacity_raw=out[..., 6],
            log_scale=out[..., 7:10] + base_ls,
            rotation=out[..., 10:14],
        )

    def backward(self, rgbd: RgbdInput, lg: LiftGradients):
        out, (x, c1, a1, h1, c2, a2, h2, c3) = self._forward(rgbd)
        H, W, _ = x.shape
        d_out = np.concatenate([
            lg.d_offset, lg.d_color_residual, lg.d_opacity_raw[..., None],
            lg.d_log_scale, lg.d_rotation], axis=-1).reshape(H * W, self.OUT)
        w = self.weights
        grads = {}
        grads["w3"] = d_out.T @ c3
        grads["b3"] = d_out.sum(axis=0)
        d_c3 = d_out @ w["w3"]
        d_h2 = _conv_cols_backward(d_c3, (H, W, self.HIDDEN))
        d_a2 = d_h2.reshape(-1, self.HIDDEN) * (a2 > 0)
        grads["w2"] = d_a2.T @ c2
        grads["b2"] = d_a2.sum(axis=0)
        d_c2 = d_a2 @ w["w2"]
        d_h1 = _conv_cols_backward(d_c2, (H, W, self.HIDDEN))
        d_a1 = d_h1.reshape(-1, self.HIDDEN) * (a1 > 0)
        grads["w1"] = d_a1.T @ c1
        grads["b1"] = d_a1.sum(axis=0)
        d_x = _conv_cols_backward(d_a1 @ w["w1"], (H, W, 4))
        d_image = d_x[..., :3]
        # the footprint base makes log scales depend on depth directly
        d_depth = d_x[..., 3] + lg.d_log_scale.sum(axis=-1) / rgbd.depth
        return grads, d_image, d_depth

    def params(self) -> dict[str, np.ndarray]:
        return self.weights

    def load_params(self, tensors: dict[str, np.ndarray]):
        for name, arr in tensors.items():
            self.weights[name] = arr.astype(np.float64)


PREDICTOR_KINDS = {
    DirectFitPredictor.name: DirectFitPredictor,
    TinyConvPredictor.name: TinyConvPredictor,
}


def make_predictor(kind: str, seed: int = 0):
    if kind == TinyConvPredictor.name:
        return TinyConvPredictor(seed=seed)
    if kind == DirectFitPredictor.name:
        return DirectFitPredictor()
    raise ValueError(f"unknown predictor kind {kind!r}")


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_scale: float = 1.0):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= (self.lr * lr_scale) * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# configuration and trainer state


@dataclass
class TrainConfig:
    stage1_steps: int = 500
    stage2_steps: int = 0
    base_lr: float = 1e-3
    canonical_prob: float = 0.5      # branch mix: canonical vs novel per step
    predictor: str = "direct_fit"
    cycle_aggregation: bool = True   # False reproduces the no-aggregation baseline
    yaw_spread: float = 0.3
    pitch_spread: float = 0.15
    refine_lr_scale: float = 0.1
    arc_views: int = 16
    eval_every: int = 50
    seed: int = 0
    workers: int = 1
    background: tuple = (0.0, 0.0, 0.0)
    weights: LossWeights = field(default_factory=LossWeights)
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        if not (0.0 <= self.canonical_prob <= 1.0):
            raise ValueError("canonical_prob must lie in [0,1]")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")


@dataclass
class TrainState:
    predictor: object
    optimizer: Adam
    config: TrainConfig
    rng: np.random.Generator
    step: int = 0

    @staticmethod
    def create(cfg: TrainConfig) -> "TrainState":
        return TrainState(
            predictor=make_predictor(cfg.predictor, seed=cfg.seed),
            optimizer=Adam(lr=cfg.base_lr),
            config=cfg,
            rng=np.random.default_rng(cfg.seed),
        )

    def sampler_for(self, scene: RgbdInput) -> CameraSampler:
        return CameraSampler(yaw_spread=self.config.yaw_spread,
                             pitch_spread=self.config.pitch_spread,
                             pivot_depth=float(np.median(scene.depth)))


def _apply_step(state: TrainState, grads: dict, total: float,
                lr_scale: float = 1.0) -> bool:
    """One optimizer step unless the loss went non-finite."""
    if not np.isfinite(total):
        return False
    state.optimizer.step(state.predictor.params(), grads, lr_scale=lr_scale)
    return True


def _merge_grads(*dicts):
    out: dict[str, np.ndarray] = {}
    for d in dicts:
        for k, v in d.items():
            out[k] = out.get(k, 0.0) + v
    return out


def _slice_buffer(gb: GradientBuffer, sl) -> GradientBuffer:
    return GradientBuffer(
        d_position=gb.d_position[sl], d_color=gb.d_color[sl],
        d_opacity_raw=gb.d_opacity_raw[sl], d_log_scale=gb.d_log_scale[sl],
        d_rotation=gb.d_rotation[sl])


def _scatter_buffer(n: int, idx: np.ndarray, part: GradientBuffer) -> GradientBuffer:
    gb = GradientBuffer.zeros(n)
    gb.d_position[idx] = part.d_position
    gb.d_color[idx] = part.d_color
    gb.d_opacity_raw[idx] = part.d_opacity_raw
    gb.d_log_scale[idx] = part.d_log_scale
    gb.d_rotation[idx] = part.d_rotation
    return gb


# ---------------------------------------------------------------------------
# training branches


def train_step_canonical(state: TrainState, scene: RgbdInput) -> LossReport:
    """Reconstruction branch: lift, render the canonical view, L1 RGB-D plus
    depth smoothing, one optimizer step."""
    cfg = state.config
    w = cfg.weights
    maps = state.predictor.predict(scene)
    gs0 = lift_pixel_aligned(scene, maps)
    targets, ctx = rasterize_with_cache(gs0, scene.camera, cfg.background)
    recon, g_rec = recon_loss_grad(targets, scene, cfg.thresholds.tau)
    reg, g_tv = tv_loss_grad(targets.depth)
    report = make_report("canonical", {"recon": recon, "reg": reg}, w)

    upstream = RenderGradients(d_color=g_rec.d_color,
                               d_depth=g_rec.d_depth + w.lambda_reg * g_tv,
                               d_alpha=g_rec.d_alpha)
    gb = rasterize_backward(gs0, scene.camera, cfg.background, upstream, ctx)
    lg = lift_backward(scene, maps, gb)
    grads, _, _ = state.predictor.backward(scene, lg)
    _apply_step(state, grads, report.weighted_total)
    return report


def _boundary_pass_masks(rendered, rgbd1: RgbdInput):
    """Gradient pass-through masks of rgbd_from_render's clamping."""
    color_pass = (rendered.color > 0.0) & (rendered.color < 1.0)
    depth_pass = rendered.depth > 0.0
    return color_pass, depth_pass


@dataclass
class CycleDiagnostics:
    gs0: GaussianSet
    gs1: GaussianSet
    merged0: GaussianSet
    merged1: GaussianSet
    cam1: Camera
    boundary: StopGradBoundary
    donor_count_0: int
    donor_count_1: int


def cycle_gradients(state: TrainState, scene: RgbdInput,
                    cam1: Camera | None = None,
                    bypass_stop_gradient: bool = False,
                    extra_objective=None):
    """Forward and backward of the cycle-aggregative novel branch without
    applying the optimizer step.

    Returns (report, parameter gradients, diagnostics). The rendered novel
    RGB-D pair is a stop-gradient boundary: its upstream path into the first
    lift is dropped unless ``bypass_stop_gradient`` (test harness only).
    ``extra_objective``, if given, is called as f(merged_set, cam0, cam1)
    after the forward pass and returns (extra term dict, extra total addend,
    [(camera, RenderGradients, ctx|None), ...]) of additional objectives on
    renders of the merged set (stage two's video loss)."""
    cfg = state.config
    w = cfg.weights
    tau = cfg.thresholds.tau
    cam0 = scene.camera
    if cam1 is None:
        cam1 = sample_novel_camera(cam0, state.sampler_for(scene), state.rng)

    maps0 = state.predictor.predict(scene)
    gs0 = lift_pixel_aligned(scene, maps0)
    novel_render = rasterize(gs0, cam1, cfg.background)
    boundary = StopGradBoundary(image=novel_render.color, depth=novel_render.depth,
                                blocked=not bypass_stop_gradient)
    rgbd1 = rgbd_from_render(novel_render, cam1, view_id=scene.view_id + 1,
                             key=f"{scene.key}:novel")
    maps1 = state.predictor.predict(rgbd1)
    gs1 = lift_pixel_aligned(rgbd1, maps1)

    out0, out1 = aggregate_pair(gs0, gs1, cam0, cam1, tau,
                                view0=scene.view_id, view1=rgbd1.view_id)
    merged0, merged1 = out0.merged_set, out1.merged_set

    hat1, ctx1 = rasterize_with_cache(merged0, cam1, cfg.background)
    hat0, ctx0 = rasterize_with_cache(merged1, cam0, cfg.background)

    cyc, g_cyc = cycle_loss_grad(hat0, scene, tau)
    reg, g_tv = tv_loss_grad(hat1.depth)
    photo, d_photo = photometric_loss_grad(scene.image, scene.depth, hat1.color,
                                           cam0, cam1)
    perp, d_perp = pyramid_surrogate.grad(hat1.color, scene.image)
    terms = {"cycle": cyc, "reg": reg, "photo": photo,
             "perp_surrogate": perp, "clip": perp}
    extra_total = 0.0
    extra_grads = ()
    if extra_objective is not None:
        extra_terms, extra_total, extra_grads = extra_objective(merged0, cam0, cam1)
        terms.update(extra_terms)
    base = make_report("novel", terms, w)
    report = LossReport(branch="novel", terms=base.terms,
                        weighted_total=base.weighted_total + extra_total)

    up1 = RenderGradients(
        d_color=w.lambda_novel * (d_photo + (w.lambda_perp + w.lambda_clip) * d_perp),
        d_depth=w.lambda_reg * g_tv,
        d_alpha=np.zeros_like(hat1.alpha))
    gb_m0 = rasterize_backward(merged0, cam1, cfg.background, up1, ctx1)
    for cam_x, up_x, ctx_x in extra_grads:
        gb_m0.add_(rasterize_backward(merged0, cam_x, cfg.background, up_x, ctx_x))
    gb_m1 = rasterize_backward(merged1, cam0, cfg.background, g_cyc, ctx0)

    n0, n1 = len(gs0), len(gs1)
    donors_into_0 = np.flatnonzero(
        out0.donor_mask.values[gs1.provenance[:, 1], gs1.provenance[:, 2]]) \
        if n1 else np.zeros(0, dtype=np.int64)
    donors_into_1 = np.flatnonzero(
        out1.donor_mask.values[gs0.provenance[:, 1], gs0.provenance[:, 2]]) \
        if n0 else np.zeros(0, dtype=np.int64)

    gb_gs0 = _slice_buffer(gb_m0, slice(0, n0)).add_(
        _scatter_buffer(n0, donors_into_1, _slice_buffer(gb_m1, slice(n1, None))))
    gb_gs1 = _slice_buffer(gb_m1, slice(0, n1)).add_(
        _scatter_buffer(n1, donors_into_0, _slice_buffer(gb_m0, slice(n0, None))))

    lg0 = lift_backward(scene, maps0, gb_gs0)
    grads0, _, _ = state.predictor.backward(scene, lg0)
    lg1 = lift_backward(rgbd1, maps1, gb_gs1)
    grads1, d_img1_pred, d_dep1_pred = state.predictor.backward(rgbd1, lg1)
    grads = _merge_grads(grads0, grads1)

    if bypass_stop_gradient:
        color_pass, depth_pass = _boundary_pass_masks(novel_render, rgbd1)
        up_bypass = RenderGradients(
            d_color=np.where(color_pass, lg1.d_image + d_img1_pred, 0.0),
            d_depth=np.where(depth_pass, lg1.d_depth + d_dep1_pred, 0.0),
            d_alpha=np.zeros_like(novel_render.alpha))
        gb_bypass = rasterize_backward(gs0, cam1, cfg.background, up_bypass)
        lg_bypass = lift_backward(scene, maps0, gb_bypass)
        grads_bypass, _, _ = state.predictor.backward(scene, lg_bypass)
        grads = _merge_grads(grads, grads_bypass)

    diag = CycleDiagnostics(gs0=gs0, gs1=gs1, merged0=merged0, merged1=merged1,
                            cam1=cam1, boundary=boundary,
                            donor_count_0=out0.donor_count,
                            donor_count_1=out1.donor_count)
    return report, grads, diag


def train_step_cycle(state: TrainState, scene: RgbdInput,
                     cam1: Camera | None = None) -> LossReport:
    """Cycle-aggregative novel branch plus one optimizer step."""
    report, grads, _ = cycle_gradients(state, scene, cam1)
    _apply_step(state, grads, report.weighted_total)
    return report


def train_step_novel_baseline(state: TrainState, scene: RgbdInput,
                              cam1: Camera | None = None) -> LossReport:
    """Ablation baseline: no aggregation, no cycle term; the novel-view
    losses supervise the raw novel render of the input's set."""
    cfg = state.config
    w = cfg.weights
    cam0 = scene.camera
    if cam1 is None:
        cam1 = sample_novel_camera(cam0, state.sampler_for(scene), state.rng)
    maps0 = state.predictor.predict(scene)
    gs0 = lift_pixel_aligned(scene, maps0)
    t1, ctx = rasterize_with_cache(gs0, cam1, cfg.background)
    reg, g_tv = tv_loss_grad(t1.depth)
    photo, d_photo = photometric_loss_grad(scene.image, scene.depth, t1.color,
                                           cam0, cam1)
    perp, d_perp = pyramid_surrogate.grad(t1.color, scene.image)
    report = make_report("novel", {"cycle": 0.0, "reg": reg, "photo": photo,
                                   "perp_surrogate": perp, "clip": perp}, w)
    up = RenderGradients(
        d_color=w.lambda_novel * (d_photo + (w.lambda_perp + w.lambda_clip) * d_perp),
        d_depth=w.lambda_reg * g_tv,
        d_alpha=np.zeros_like(t1.alpha))
    gb = rasterize_backward(gs0, cam1, cfg.background, up, ctx)
    lg = lift_backward(scene, maps0, gb)
    grads, _, _ = state.predictor.backward(scene, lg)
    _apply_step(state, grads, report.weighted_total)
    return report


def run_training(corpus: list[RgbdInput], cfg: TrainConfig,
                 state: TrainState | None = None, metrics_hook=None):
    """Stage-one loop: per step pick a scene uniformly and a branch by the
    configured mix; stage two (if configured) appends geometry-guided refine
    steps. Returns (state, metrics records)."""
    from .refine import refine_step  # stage two lives in the refine module

    if not corpus:
        raise ValueError("training corpus is empty")
    if state is None:
        state = TrainState.create(cfg)
    records = []

    def record(report: LossReport, stage: str):
        rec = {"step": state.step, "stage": stage, "branch": report.branch,
               "total": report.weighted_total}
        rec.update({f"loss_{k}": float(v) for k, v in report.terms.items()})
        if metrics_hook is not None:
            extra = metrics_hook(state, rec)
            if extra:
                rec.update(extra)
        records.append(rec)

    for _ in range(cfg.stage1_steps):
        scene = corpus[int(state.rng.integers(len(corpus)))]
        if state.rng.random() < cfg.canonical_prob:
            report = train_step_canonical(state, scene)
        elif cfg.cycle_aggregation:
            report = train_step_cycle(state, scene)
        else:
            report = train_step_novel_baseline(state, scene)
        record(report, "stage1")
        state.step += 1

    for _ in range(cfg.stage2_steps):
        scene = corpus[int(state.rng.integers(len(corpus)))]
        cam1 = sample_novel_camera(scene.camera, state.sampler_for(scene), state.rng)
        report = refine_step(state, scene, cam1, cfg.thresholds,
                             lr_scale=cfg.refine_lr_scale)
        record(report, "stage2")
        state.step += 1

    return state, records


# ---------------------------------------------------------------------------
# checkpoints


def _config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["background"] = list(cfg.background)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    th = d["thresholds"]
    d["thresholds"] = Thresholds(**th)
    d["background"] = tuple(d["background"])
    return TrainConfig(**d)


def save_checkpoint(path, predictor, cfg: TrainConfig):
    """Versioned little-endian binary container: predictor id, config
    snapshot, then raw float32 tensors."""
    tensors = predictor.params()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    ident = predictor.name.encode()
    buf.write(struct.pack("<H", len(ident)))
    buf.write(ident)
    cfg_blob = json.dumps(_config_to_dict(cfg), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (predictor, TrainConfig)."""
    with open(path, "rb") as f:
        data = f.read()
    view = memoryview(data)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4
    (version,) = struct.unpack_from("<I", view, off); off += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (idlen,) = struct.unpack_from("<H", view, off); off += 2
    ident = bytes(view[off:off + idlen]).decode(); off += idlen
    (cfglen,) = struct.unpack_from("<I", view, off); off += 4
    cfg = _config_from_dict(json.loads(bytes(view[off:off + cfglen]))); off += cfglen
    (ntensors,) = struct.unpack_from("<I", view, off); off += 4
    tensors = {}
    for _ in range(ntensors):
        (nlen,) = struct.unpack_from("<H", view, off); off += 2
        name = bytes(view[off:off + nlen]).decode(); off += nlen
        (ndim,) = struct.unpack_from("<B", view, off); off += 1
        shape = struct.unpack_from(f"<{ndim}I", view, off); off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(view, dtype="<f4", count=count, offset=off)
        off += 4 * count
        tensors[name] = arr.reshape(shape).astype(np.float64)
    predictor = make_predictor(ident, seed=cfg.seed)
    predictor.load_params(tensors)
    return predictor, cfg
