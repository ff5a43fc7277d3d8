"""Independent reference implementations used only by the tests."""

import numpy as np


def zbuffer_bruteforce(points, colors, pose, background):
    """Sequential z-buffer: visit points in order, replace only on strictly nearer depth."""
    H, W = pose.height, pose.width
    K, E = pose.intrinsics, pose.extrinsics
    image = np.empty((H, W, 3), dtype=colors.dtype)
    image[:] = background
    mask = np.zeros((H, W), dtype=bool)
    zbuf = np.full((H, W), np.inf)
    cam = points @ E.rotation.T + E.translation
    for i in range(len(points)):
        x, y, z = cam[i]
        if not z > 1e-9:
            continue
        u = int(np.floor(K.fx * x / z + K.cx - 0.5 + 0.5))
        v = int(np.floor(K.fy * y / z + K.cy - 0.5 + 0.5))
        if 0 <= u < W and 0 <= v < H and z < zbuf[v, u]:
            zbuf[v, u] = z
            image[v, u] = colors[i]
            mask[v, u] = True
    return image, mask


def dense_march(origin, direction, grid, t_max, step_frac=0.02):
    """Voxels containing sample points spaced ``step_frac`` voxel sizes along the ray."""
    h = step_frac * float(grid.voxel_size.min())
    t = np.arange(h / 2, t_max, h)
    pts = origin + t[:, None] * direction
    rel = (pts - grid.lower) / grid.voxel_size
    idx = np.floor(rel).astype(np.int64)
    res = np.asarray(grid.resolution)
    ok = np.all((idx >= 0) & (idx < res), axis=1)
    idx = idx[ok]
    return set(((idx[:, 0] * res[1] + idx[:, 1]) * res[2] + idx[:, 2]).tolist())


def voxel_crossing(origin, direction, grid, voxel):
    """Exact ``(t0, t1)`` of the ray inside one voxel box for t > 0 (slab test)."""
    ix, iy, iz = np.unravel_index(voxel, grid.resolution)
    lo = grid.lower + np.array([ix, iy, iz]) * grid.voxel_size
    hi = lo + grid.voxel_size
    t0, t1 = 0.0, np.inf
    for a in range(3):
        if direction[a] == 0:
            if not lo[a] <= origin[a] <= hi[a]:
                return None
            continue
        ta, tb = (lo[a] - origin[a]) / direction[a], (hi[a] - origin[a]) / direction[a]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return (t0, t1) if t1 > t0 else None


def dense_incidence_mask(origins, directions, grid, min_length):
    """(rays, voxels) mask of ray/voxel pairs crossing for longer than ``min_length`` at t > 0.

    Every ray is slab-tested against every voxel box independently of any
    traversal order.
    """
    o = np.asarray(origins, dtype=np.float64)[:, None, :]
    d = np.asarray(directions, dtype=np.float64)[:, None, :]
    ijk = np.stack(np.unravel_index(np.arange(grid.n_voxels), grid.resolution), axis=1)
    lo = (grid.lower + ijk * grid.voxel_size)[None]
    hi = lo + grid.voxel_size
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - o) / d
        tb = (hi - o) / d
    par = d == 0
    inside = (o >= lo) & (o < hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    t0 = np.maximum(tmin.max(axis=2), 0.0)
    t1 = tmax.min(axis=2)
    return (t1 - t0) > min_length


def masked_softmax_attention(q, k, v, mask):
    """Dense reference: softmax over masked columns, zero rows where nothing is allowed."""
    scores = q @ k.T / np.sqrt(q.shape[1])
    scores = np.where(mask, scores, -np.inf)
    m = np.max(scores, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    ex = np.where(mask, np.exp(scores - m), 0.0)
    den = ex.sum(axis=1, keepdims=True)
    w = np.divide(ex, den, out=np.zeros_like(ex), where=den > 0)
    return w @ v, w


def sinusoid(frame, dim):
    out = np.empty(dim)
    for j in range(dim // 2):
        a = frame / 10000.0 ** (2 * j / dim)
        out[2 * j], out[2 * j + 1] = np.sin(a), np.cos(a)
    return out


def dense_attention_pair(pixels, voxels, mask, params, frames):
    """Dense 2D->3D and 3D->2D outputs for one head layout.

    pixels: (frames*H*W, Fp) flattened frame-major; mask: (rays, voxels).
    """
    P = {k: v.detach().numpy() for k, v in zip(["seed", "q3", "k3", "v3", "q2", "k2", "v2"], params.tensors())}
    n_per = len(pixels) // frames
    temb = np.repeat(np.stack([sinusoid(f, pixels.shape[1]) for f in range(frames)]), n_per, axis=0)
    x = pixels + temb
    h = params.heads
    q, k, v = P["seed"] @ P["q3"], x @ P["k3"], x @ P["v3"]
    dh = q.shape[1] // h
    lift, lift_w = [], []
    for i in range(h):
        s = slice(i * dh, (i + 1) * dh)
        o, w = masked_softmax_attention(q[:, s], k[:, s], v[:, s], mask.T)
        lift.append(o)
        lift_w.append(w)
    q2, k2, v2 = pixels @ P["q2"], voxels @ P["k2"], voxels @ P["v2"]
    dv = v2.shape[1] // h
    proj, proj_w = [], []
    for i in range(h):
        s, sv = slice(i * dh, (i + 1) * dh), slice(i * dv, (i + 1) * dv)
        o, w = masked_softmax_attention(q2[:, s], k2[:, s], v2[:, sv], mask)
        proj.append(o)
        proj_w.append(w)
    return np.concatenate(lift, 1), lift_w, np.concatenate(proj, 1), proj_w
