"""Renderer backends behind one contract: a deterministic raster oracle, a
toy diffusion backend that exercises the full conditioning path, and a
remote bridge to an external renderer process.

Every backend maps a RenderRequest to per-camera float images in [0, 1],
shape (3, H, W), deterministically under a fixed request seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffusion, geometry
from .scenario import Camera, CameraRig, WorldState

DEFAULT_RESOLUTION = (400, 224)  # (W, H), render-time resolution
PE_DIM = 64
PE_ROI = ((-8.0, 72.0), (-40.0, 40.0), (-3.0, 8.0))
FRUSTUM_DEPTH_BINS = 64
FRUSTUM_DEPTH_RANGE = (1.0, 60.0)
TOY_SIGMA = 0.1
TOY_REF_BLEND = 0.1
TOY_PREV_BLEND = 0.05
GROUND_FALLOFF = 60.0  # m, warp lookup cap

# per-channel flat-shade palette (box classes then map classes, cycled)
PALETTE = (
    (0.90, 0.25, 0.20),
    (0.20, 0.55, 0.95),
    (0.95, 0.80, 0.15),
    (0.60, 0.30, 0.80),
    (0.30, 0.75, 0.35),
    (0.95, 0.50, 0.10),
    (0.15, 0.80, 0.80),
    (0.85, 0.35, 0.60),
    (0.55, 0.55, 0.55),
)


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class RefPose:
    x: float
    y: float
    heading: float
    offset: float  # signed along-track distance, meters


@dataclass(frozen=True)
class Reference:
    pose: RefPose
    images: dict  # camera name -> (3, H, W) float image
    side: str  # "front" | "rear"


@dataclass(frozen=True)
class RenderRequest:
    world: WorldState
    rig: CameraRig
    masks: dict  # camera name -> (C, H, W) uint8 stack at `resolution`
    prev_images: dict | None = None  # camera name -> (3, H, W), absent on first frame
    prev_noise_level: int | None = None
    ref_front: Reference | None = None
    ref_rear: Reference | None = None
    resolution: tuple[int, int] = DEFAULT_RESOLUTION
    seed: int = 0

    def refs(self) -> tuple[Reference, ...]:
        return tuple(r for r in (self.ref_front, self.ref_rear) if r is not None)


@dataclass(frozen=True)
class RenderedFrame:
    images: dict  # camera name -> (3, H, W) float in [0, 1]
    tick: int
    backend_id: str
    timing_ms: float = field(compare=False, default=0.0)


def _validate_request(req: RenderRequest) -> None:
    w, h = req.resolution
    if w <= 0 or h <= 0:
        raise RenderError("resolution must be positive")
    for cam in req.rig.cameras:
        if cam.name not in req.masks:
            raise RenderError(f"request missing mask stack for camera {cam.name!r}")


def render_frame(backend, req: RenderRequest) -> RenderedFrame:
    """Dispatch to a backend and stamp timing; output invariants enforced."""
    _validate_request(req)
    t0 = time.perf_counter()
    try:
        frame = backend.render(req)
    except Exception as e:
        raise RenderError(f"backend {backend.backend_id!r} failed: {e}") from e
    ms = (time.perf_counter() - t0) * 1e3
    images = {}
    for cam in req.rig.cameras:
        if cam.name not in frame.images:
            raise RenderError(f"backend {backend.backend_id!r} dropped camera {cam.name!r}")
        images[cam.name] = np.clip(frame.images[cam.name], 0.0, 1.0)
    return RenderedFrame(
        images=images, tick=frame.tick, backend_id=frame.backend_id, timing_ms=ms
    )


def horizon_gradient(width: int, height: int) -> np.ndarray:
    """Flat sky-over-ground vertical gradient used when references are absent."""
    t = np.linspace(0.0, 1.0, height)[None, :, None]  # (1, H, 1)
    sky = np.array([0.55, 0.70, 0.92])[:, None, None]
    ground = np.array([0.36, 0.33, 0.30])[:, None, None]
    img = sky * (1.0 - t) + ground * t
    return np.broadcast_to(img, (3, height, width)).copy()


def _ground_warp(
    ref_img: np.ndarray, ref_pose: RefPose, cur_world: WorldState, cam: Camera
) -> np.ndarray:
    """Warp a reference camera image to the current pose via the ground plane.

    Rays through current pixels are intersected with z = 0; hits are
    reprojected into the reference camera and sampled bilinearly. Rays that
    miss the ground (at or above the horizon) fall back to the unwarped
    reference pixel.
    """
    ego = cur_world.ego
    if (
        ref_pose.x == ego.position[0]
        and ref_pose.y == ego.position[1]
        and ref_pose.heading == ego.heading
    ):
        return ref_img.copy()  # identity warp, keep it exact
    C, H, W = ref_img.shape
    K_inv = np.linalg.inv(cam.k_matrix())
    us, vs = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    d = 1.0
    hom = np.stack([us * d, vs * d, np.full_like(us, d), np.ones_like(us)], axis=-1)
    rays = (hom @ K_inv.T)[..., :3]  # points at depth 1 in current ego frame

    cam_center = -np.linalg.inv(cam.extrinsic_matrix()[:3, :3]) @ cam.extrinsic_matrix()[:3, 3]
    dirs = rays - cam_center
    dz = dirs[..., 2]
    denom = np.where(np.abs(dz) < 1e-9, -1e-9, dz)
    t_hit = -cam_center[2] / denom
    valid = (t_hit > 0.0) & (dz < 0.0)
    ground = cam_center + dirs * t_hit[..., None]  # current ego frame, z = 0
    dist = np.hypot(ground[..., 0], ground[..., 1])
    valid &= dist < GROUND_FALLOFF

    gx = ego.position[0] + math.cos(ego.heading) * ground[..., 0] - math.sin(ego.heading) * ground[..., 1]
    gy = ego.position[1] + math.sin(ego.heading) * ground[..., 0] + math.cos(ego.heading) * ground[..., 1]
    rc, rs = math.cos(ref_pose.heading), math.sin(ref_pose.heading)
    rx = rc * (gx - ref_pose.x) + rs * (gy - ref_pose.y)
    ry = -rs * (gx - ref_pose.x) + rc * (gy - ref_pose.y)

    pts = np.stack([rx, ry, np.zeros_like(rx), np.ones_like(rx)], axis=-1)
    img_h = pts @ cam.k_matrix().T
    depth = img_h[..., 2]
    valid &= depth > geometry.CLIP_EPS
    safe = np.where(valid, depth, 1.0)
    ru = img_h[..., 0] / safe
    rv = img_h[..., 1] / safe
    valid &= (ru >= 0) & (ru <= W - 1) & (rv >= 0) & (rv <= H - 1)

    ru = np.where(valid, ru, us)
    rv = np.where(valid, rv, vs)
    u0 = np.clip(np.floor(ru).astype(int), 0, W - 2)
    v0 = np.clip(np.floor(rv).astype(int), 0, H - 2)
    fu = np.clip(ru - u0, 0.0, 1.0)
    fv = np.clip(rv - v0, 0.0, 1.0)
    out = np.empty_like(ref_img)
    for c in range(C):
        ch = ref_img[c]
        out[c] = (
            ch[v0, u0] * (1 - fu) * (1 - fv)
            + ch[v0, u0 + 1] * fu * (1 - fv)
            + ch[v0 + 1, u0] * (1 - fu) * fv
            + ch[v0 + 1, u0 + 1] * fu * fv
        )
    return out


def _scaled_rig_camera(cam: Camera, resolution: tuple[int, int]) -> Camera:
    w, h = resolution
    if cam.width == w and cam.height == h:
        return cam
    return cam.scaled(w, h)


def _background(req: RenderRequest, cam: Camera) -> np.ndarray:
    refs = req.refs()
    w, h = req.resolution
    if not refs:
        return horizon_gradient(w, h)
    warped = []
    weights = []
    for ref in refs:
        if cam.name not in ref.images:
            continue
        warped.append(_ground_warp(ref.images[cam.name], ref.pose, req.world, cam))
        weights.append(1.0 / (abs(ref.pose.offset) + 1e-6))
    if not warped:
        return horizon_gradient(w, h)
    total = sum(weights)
    out = np.zeros_like(warped[0])
    for img, wgt in zip(warped, weights):
        out += img * (wgt / total)
    return out


class OracleBackend:
    """Deterministic geometric compositor standing in for the neural renderer."""

    backend_id = "oracle"

    def render(self, req: RenderRequest) -> RenderedFrame:
        images = {}
        for rig_cam in req.rig.cameras:
            cam = _scaled_rig_camera(rig_cam, req.resolution)
            img = _background(req, cam)
            stack = req.masks[rig_cam.name]
            for ch in range(stack.shape[0]):
                color = np.array(PALETTE[ch % len(PALETTE)])[:, None]
                sel = stack[ch] > 0
                img[:, sel] = color
            images[rig_cam.name] = np.clip(img, 0.0, 1.0)
        return RenderedFrame(images=images, tick=req.world.tick, backend_id=self.backend_id)


def _attended_reference_latent(
    req: RenderRequest, rig_cam: Camera, cam: Camera, latent_hw: tuple[int, int]
) -> np.ndarray | None:
    """Reference feature path: 3D-position-encoded cross-attention over
    reference latents, queried by the current view's pixel-wise encodings.

    Feature rows carry latent RGB in the first three dimensions and zeros
    elsewhere, so attended rows read back as RGB estimates aligned with the
    current view.
    """
    refs = [r for r in req.refs() if rig_cam.name in r.images]
    if not refs:
        return None
    lh, lw = latent_hw
    lat_cam = cam.scaled(lw, lh)
    _, pts_cur, _ = geometry.frustum_points(
        lh, lw, 8, FRUSTUM_DEPTH_RANGE, lat_cam.k_matrix()
    )
    pe_cur = geometry.positional_encoding(pts_cur, PE_ROI, PE_DIM).reshape(-1, PE_DIM)

    ego = req.world.ego
    h_refs = []
    pe_refs = []
    for ref in refs:
        lat = diffusion.to_latent(ref.images[rig_cam.name])
        _, pts_ref, _ = geometry.frustum_points(
            lh, lw, 8, FRUSTUM_DEPTH_RANGE, lat_cam.k_matrix()
        )
        # reference frustum points into the current ego frame
        flat = pts_ref.reshape(-1, 3)
        rc, rs = math.cos(ref.pose.heading), math.sin(ref.pose.heading)
        gx = ref.pose.x + rc * flat[:, 0] - rs * flat[:, 1]
        gy = ref.pose.y + rs * flat[:, 0] + rc * flat[:, 1]
        ec, es = math.cos(ego.heading), math.sin(ego.heading)
        dx, dy = gx - ego.position[0], gy - ego.position[1]
        cur = np.stack([ec * dx + es * dy, -es * dx + ec * dy, flat[:, 2]], axis=1)
        pe_ref = geometry.positional_encoding(
            cur.reshape(pts_ref.shape), PE_ROI, PE_DIM
        ).reshape(-1, PE_DIM)
        h = np.zeros((lh * lw, PE_DIM))
        h[:, :3] = lat.reshape(3, -1).T
        h_refs.append(h)
        pe_refs.append(pe_ref)

    h_cur = np.zeros((lh * lw, PE_DIM))
    out = geometry.reference_cross_attention(
        h_cur, pe_cur, np.concatenate(h_refs), np.concatenate(pe_refs)
    )
    return out[:, :3].T.reshape(3, lh, lw)


class ToyDiffusionBackend:
    """Toy conditional sampler: the denoiser's target mean is the oracle
    image's latent, so the conditioning path provably steers the output.
    """

    backend_id = "toy_diffusion"

    def __init__(
        self,
        steps: int = 20,
        sched: diffusion.NoiseSchedule | None = None,
        sigma: float = TOY_SIGMA,
        guidance_scale: float = diffusion.DEFAULT_GUIDANCE_SCALE,
        n_max: int = diffusion.DEFAULT_N_MAX,
    ):
        self.steps = steps
        self.sched = sched if sched is not None else diffusion.build_schedule()
        self.sigma = sigma
        self.guidance_scale = guidance_scale
        self.n_max = n_max
        self._oracle = OracleBackend()

    @staticmethod
    def request_rng(req: RenderRequest, cam_index: int) -> np.random.Generator:
        """Per-camera generator; all toy randomness flows from the request seed."""
        return np.random.default_rng(
            np.random.SeedSequence(entropy=(req.seed, req.world.tick, cam_index))
        )

    def _target_latent(self, req: RenderRequest, cam_name: str, with_refs: bool) -> np.ndarray:
        r = req if with_refs else _strip_refs(req)
        oracle = self._oracle.render(r)
        return diffusion.to_latent(oracle.images[cam_name])

    def render(self, req: RenderRequest) -> RenderedFrame:
        w, h = req.resolution
        if w % diffusion.LATENT_DOWNSAMPLE or h % diffusion.LATENT_DOWNSAMPLE:
            raise RenderError("resolution must be divisible by the latent factor")
        lh, lw = h // diffusion.LATENT_DOWNSAMPLE, w // diffusion.LATENT_DOWNSAMPLE
        images = {}
        for idx, rig_cam in enumerate(req.rig.cameras):
            cam = _scaled_rig_camera(rig_cam, req.resolution)
            rng = self.request_rng(req, idx)
            mu_cond = self._target_latent(req, rig_cam.name, with_refs=True)
            mu_uncond = self._target_latent(req, rig_cam.name, with_refs=False)

            attended = _attended_reference_latent(req, rig_cam, cam, (lh, lw))
            if attended is not None:
                mu_cond = (1.0 - TOY_REF_BLEND) * mu_cond + TOY_REF_BLEND * attended

            if req.prev_images is not None and rig_cam.name in req.prev_images:
                prev_lat = diffusion.to_latent(req.prev_images[rig_cam.name])
                c_prev, n = diffusion.modulate_previous(
                    prev_lat, self.sched, self.n_max, rng
                )
                # shrink toward the declared noise level before mixing
                recov = math.sqrt(self.sched.alpha_bar[n]) * c_prev
                mu_cond = (1.0 - TOY_PREV_BLEND) * mu_cond + TOY_PREV_BLEND * recov
                mu_uncond = (1.0 - TOY_PREV_BLEND) * mu_uncond + TOY_PREV_BLEND * recov

            def denoiser(z_t, t, condition):
                mu = mu_cond if condition == "refs" else mu_uncond
                return diffusion.analytic_gaussian_denoiser(mu, self.sigma, self.sched)(
                    z_t, t, condition
                )

            guidance = []
            if req.refs():
                guidance.append(diffusion.Guidance("no_refs", self.guidance_scale))
            latent = diffusion.sample(
                denoiser,
                "refs",
                self.steps,
                self.sched,
                rng,
                (3, lh, lw),
                guidance=guidance,
            )
            images[rig_cam.name] = np.clip(diffusion.from_latent(latent), 0.0, 1.0)
        return RenderedFrame(images=images, tick=req.world.tick, backend_id=self.backend_id)


def _strip_refs(req: RenderRequest) -> RenderRequest:
    return replace(req, ref_front=None, ref_rear=None)


def bicubic_upsample(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Catmull-Rom (a = -0.5) bicubic upsample to target (W, H), edge-clamped."""
    tw, th = target
    C, H, W = img.shape
    if tw < W or th < H:
        raise ValueError("bicubic_upsample only upscales")

    def weights(x: np.ndarray) -> np.ndarray:
        a = -0.5
        x = np.abs(x)
        w = np.zeros_like(x)
        m1 = x <= 1.0
        w[m1] = (a + 2.0) * x[m1] ** 3 - (a + 3.0) * x[m1] ** 2 + 1.0
        m2 = (x > 1.0) & (x < 2.0)
        w[m2] = a * x[m2] ** 3 - 5.0 * a * x[m2] ** 2 + 8.0 * a * x[m2] - 4.0 * a
        return w

    def axis_resample(data: np.ndarray, out_n: int, axis: int) -> np.ndarray:
        in_n = data.shape[axis]
        pos = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
        base = np.floor(pos).astype(int)
        out = np.zeros(data.shape[:axis] + (out_n,) + data.shape[axis + 1 :])
        for k in range(-1, 3):
            idx = np.clip(base + k, 0, in_n - 1)
            wgt = weights(pos - (base + k))
            taken = np.take(data, idx, axis=axis)
            shape = [1] * data.ndim
            shape[axis] = out_n
            out += taken * wgt.reshape(shape)
        return out

    out = axis_resample(img.astype(float), th, axis=1)
    out = axis_resample(out, tw, axis=2)
    return out


class RemoteBackend:
    """Bridge to an external renderer process; see bridge module."""

    backend_id = "remote"

    def __init__(self, session):
        self.session = session

    def render(self, req: RenderRequest) -> RenderedFrame:
        images = self.session.render(req)
        return RenderedFrame(images=images, tick=req.world.tick, backend_id=self.backend_id)


def make_backend(backend_id: str, config: dict | None = None):
    config = config or {}
    if backend_id == "oracle":
        return OracleBackend()
    if backend_id == "toy":
        diff = config.get("diffusion", {})
        sched = None
        if {"T", "beta_start", "beta_end", "kind"} & set(diff):
            sched = diffusion.build_schedule(
                T=int(diff.get("T", diffusion.DEFAULT_T)),
                beta_start=float(diff.get("beta_start", diffusion.DEFAULT_BETA_START)),
                beta_end=float(diff.get("beta_end", diffusion.DEFAULT_BETA_END)),
                kind=str(diff.get("kind", "scaled_linear")),
            )
        return ToyDiffusionBackend(
            steps=int(diff.get("steps", 20)),
            sched=sched,
            sigma=float(diff.get("sigma", TOY_SIGMA)),
            guidance_scale=float(diff.get("guidance_scale", diffusion.DEFAULT_GUIDANCE_SCALE)),
            n_max=int(diff.get("n_max", diffusion.DEFAULT_N_MAX)),
        )
    if backend_id == "remote":
        from . import bridge

        return RemoteBackend(bridge.open_session(config.get("remote", {})))
    raise RenderError(f"unknown renderer backend {backend_id!r}")
