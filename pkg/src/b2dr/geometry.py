"""Camera projection, control-mask rasterization, frustum grids with 3D
positional encodings, and the PE-augmented reference cross-attention.

Image convention: u is the column (x right), v the row (y down). Projection
runs through the combined 4x4 camera matrix K (ego frame -> homogeneous
image coordinates); depth is the third homogeneous component and must be
positive for a point to be visible.
"""

from __future__ import annotations

import math

import numpy as np

from .scenario import AgentBox, Camera, EgoState, MapElement, global_to_ego

CLIP_EPS = 0.1  # m, near-plane clip before image clipping


class BehindCameraError(ValueError):
    """Point has non-positive depth in the camera frame."""


def box_corners(box: AgentBox) -> np.ndarray:
    """The 8 global-frame corners of a box, (8, 3).

    Bottom face counter-clockwise from front-left, then the top face in the
    same order. Callers rely on this ordering for the edge topology.
    """
    l, w, h = box.dims
    xs = np.array([1, -1, -1, 1, 1, -1, -1, 1], dtype=float) * (l / 2.0)
    ys = np.array([1, 1, -1, -1, 1, 1, -1, -1], dtype=float) * (w / 2.0)
    zs = np.array([-1, -1, -1, -1, 1, 1, 1, 1], dtype=float) * (h / 2.0)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    gx = box.center[0] + c * xs - s * ys
    gy = box.center[1] + s * xs + c * ys
    gz = box.center[2] + zs
    return np.stack([gx, gy, gz], axis=1)


BOX_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),  # bottom
    (4, 5), (5, 6), (6, 7), (7, 4),  # top
    (0, 4), (1, 5), (2, 6), (3, 7),  # verticals
)


def project_point(point_ego, K: np.ndarray) -> tuple[float, float, float]:
    """Project one ego-frame point; returns (u, v, depth)."""
    p = np.asarray(K, dtype=float) @ np.array(
        [point_ego[0], point_ego[1], point_ego[2], 1.0]
    )
    depth = p[2]
    if depth <= 0.0:
        raise BehindCameraError(f"point at depth {depth:.3f} is behind the camera")
    return (p[0] / depth, p[1] / depth, depth)


def project_points(points_ego: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Vectorized projection of (N, 3) ego points to (N, 3) (u, v, depth).

    Non-positive depths are passed through unprojected (u, v are invalid
    there); callers cull by depth.
    """
    pts = np.asarray(points_ego, dtype=float)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    img = hom @ np.asarray(K, dtype=float).T
    depth = img[:, 2]
    safe = np.where(depth > 0.0, depth, 1.0)
    return np.stack([img[:, 0] / safe, img[:, 1] / safe, depth], axis=1)


def _clip_near(a: np.ndarray, b: np.ndarray, da: float, db: float):
    """Clip the segment (camera-hom coords with depths da, db) to depth > eps."""
    if da <= CLIP_EPS and db <= CLIP_EPS:
        return None
    if da <= CLIP_EPS:
        t = (CLIP_EPS - da) / (db - da)
        return a + t * (b - a), b
    if db <= CLIP_EPS:
        t = (CLIP_EPS - db) / (da - db)
        return a, b + t * (a - b)
    return a, b


def _clip_rect(u0, v0, u1, v1, W, H):
    """Liang-Barsky clip of an image-space segment to the pixel rectangle."""
    t0, t1 = 0.0, 1.0
    du, dv = u1 - u0, v1 - v0
    lo, hi = -0.5, None
    for p, q in (
        (-du, u0 - (-0.5)),
        (du, (W - 0.5) - u0),
        (-dv, v0 - (-0.5)),
        (dv, (H - 0.5) - v0),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return (u0 + t0 * du, v0 + t0 * dv, u0 + t1 * du, v0 + t1 * dv)


def draw_segment(mask: np.ndarray, u0: float, v0: float, u1: float, v1: float) -> None:
    """1-px wide integer-stepped segment into a (H, W) mask, no anti-aliasing."""
    H, W = mask.shape
    clipped = _clip_rect(u0, v0, u1, v1, W, H)
    if clipped is None:
        return
    u0, v0, u1, v1 = clipped
    n = int(max(abs(u1 - u0), abs(v1 - v0))) + 1
    ts = np.linspace(0.0, 1.0, n + 1)
    us = np.rint(u0 + ts * (u1 - u0)).astype(int)
    vs = np.rint(v0 + ts * (v1 - v0)).astype(int)
    keep = (us >= 0) & (us < W) & (vs >= 0) & (vs < H)
    mask[vs[keep], us[keep]] = 1


def _draw_polyline_3d(mask: np.ndarray, pts_ego: np.ndarray, K: np.ndarray, closed: bool) -> None:
    hom = np.concatenate([pts_ego, np.ones((len(pts_ego), 1))], axis=1)
    cam = hom @ np.asarray(K, dtype=float).T
    n = len(pts_ego)
    pairs = [(i, i + 1) for i in range(n - 1)]
    if closed and n > 2:
        pairs.append((n - 1, 0))
    for i, j in pairs:
        seg = _clip_near(cam[i], cam[j], cam[i][2], cam[j][2])
        if seg is None:
            continue
        a, b = seg
        draw_segment(mask, a[0] / a[2], a[1] / a[2], b[0] / b[2], b[1] / b[2])


def rasterize_controls(
    boxes: tuple[AgentBox, ...],
    map_elements: tuple[MapElement, ...],
    ego: EgoState,
    camera: Camera,
    n_box_classes: int,
    n_map_classes: int,
    height: int | None = None,
    width: int | None = None,
) -> np.ndarray:
    """Per-class binary control masks for one camera view.

    Box wireframes (12 edges) land in channel class_id; map linestrings are
    drawn as polylines and polygons as closed outlines in channel
    n_box_classes + class_id. Segments are clipped to depth > eps and then
    to the image rectangle. Returns uint8 (n_box_classes + n_map_classes, H, W).
    """
    H = camera.height if height is None else height
    W = camera.width if width is None else width
    if H <= 0 or W <= 0:
        raise ValueError("mask size must be positive")
    cam = camera if (H == camera.height and W == camera.width) else camera.scaled(W, H)
    K = cam.k_matrix()

    stack = np.zeros((n_box_classes + n_map_classes, H, W), dtype=np.uint8)
    for box in boxes:
        corners = box_corners(box)
        corners_ego = np.array([global_to_ego(p, ego) for p in corners])
        ch = stack[box.class_id]
        for i, j in BOX_EDGES:
            _draw_polyline_3d(ch, corners_ego[[i, j]], K, closed=False)
    for el in map_elements:
        pts = np.array(
            [list(global_to_ego((x, y, 0.0), ego)) for x, y in el.vertices]
        )
        _draw_polyline_3d(
            stack[n_box_classes + el.class_id], pts, K, closed=el.kind == "polygon"
        )
    return stack


# ---------------------------------------------------------------------------
# frustum grid and positional encodings


def frustum_points(
    H: int, W: int, D: int, depth_range: tuple[float, float], K: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel x depth lattice in frustum space and its ego-frame positions.

    Returns (points_hom (H, W, D, 4), points_ego (H, W, D, 3), depth_bins (D,)).
    Homogeneous entries are (u*d, v*d, d, 1); ego points come from K^-1.
    """
    d_min, d_max = depth_range
    if not (0.0 < d_min < d_max):
        raise ValueError("depth_range must satisfy 0 < d_min < d_max")
    if D < 1:
        raise ValueError("need at least one depth bin")
    depth_bins = np.linspace(d_min, d_max, D) if D > 1 else np.array([d_min])
    us = np.arange(W, dtype=float)
    vs = np.arange(H, dtype=float)
    uu, vv, dd = np.meshgrid(us, vs, depth_bins, indexing="xy")
    # meshgrid xy gives (H, W, D) for (v-rows, u-cols, d)
    points_hom = np.stack([uu * dd, vv * dd, dd, np.ones_like(dd)], axis=-1)
    K_inv = np.linalg.inv(np.asarray(K, dtype=float))
    ego_hom = points_hom @ K_inv.T
    points_ego = ego_hom[..., :3] / ego_hom[..., 3:4]
    return points_hom, points_ego, depth_bins


def positional_encoding(
    points_ego: np.ndarray, roi: tuple[tuple[float, float], ...], d_pe: int = 64
) -> np.ndarray:
    """Sinusoidal 3D position encodings averaged over depth bins.

    Each coordinate is normalized into [0, 1] by the region of interest
    (clamped outside), expanded with d_pe // 6 sin/cos frequency pairs, and
    the D bins are averaged. Output is (H, W, d_pe); when d_pe is not a
    multiple of 6 the trailing remainder stays zero.
    """
    if d_pe < 6:
        raise ValueError("d_pe must be at least 6")
    lo = np.array([r[0] for r in roi], dtype=float)
    hi = np.array([r[1] for r in roi], dtype=float)
    if np.any(hi <= lo):
        raise ValueError("roi must be non-degenerate")
    norm = np.clip((points_ego - lo) / (hi - lo), 0.0, 1.0)  # (H, W, D, 3)

    n_pairs = d_pe // 6
    freqs = (2.0 ** np.arange(n_pairs)) * math.pi
    ang = norm[..., None] * freqs  # (H, W, D, 3, n_pairs)
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)  # (..., 3, 2*n_pairs)
    enc = enc.reshape(*enc.shape[:-2], 6 * n_pairs).mean(axis=-2)  # average D bins
    H, W = points_ego.shape[:2]
    out = np.zeros((H, W, d_pe), dtype=float)
    out[..., : 6 * n_pairs] = enc
    return out


def reference_cross_attention(
    h_cur: np.ndarray,
    pe_cur: np.ndarray,
    h_ref: np.ndarray,
    pe_ref: np.ndarray,
) -> np.ndarray:
    """Scaled dot-product attention with position-augmented queries and keys.

    Q = h_cur + pe_cur, K = h_ref + pe_ref, V = h_ref. Shapes (N_q, d) and
    (N_k, d); the output is (N_q, d) with attention rows summing to 1.

    Key/value rows are reduced in a canonical (sorted) order so the result
    is bitwise invariant to permutations of the reference entries.
    """
    h_cur = np.asarray(h_cur, dtype=float)
    h_ref = np.asarray(h_ref, dtype=float)
    if h_cur.shape[1] != h_ref.shape[1] or h_cur.shape != np.shape(pe_cur) or h_ref.shape != np.shape(pe_ref):
        raise ValueError("feature/PE dimension mismatch")
    q = h_cur + pe_cur
    k = h_ref + np.asarray(pe_ref, dtype=float)
    order = np.lexsort(np.concatenate([h_ref, k], axis=1).T[::-1])
    k = np.ascontiguousarray(k[order])
    v = np.ascontiguousarray(h_ref[order])
    logits = q @ k.T / math.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ v
