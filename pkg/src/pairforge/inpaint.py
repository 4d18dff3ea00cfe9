"""Hole filling: native coarse-to-fine PatchMatch, plus a remote sidecar path.

The native path is fully deterministic for a fixed (image, hole, params):
randomness comes from an internal xorshift stream seeded per pyramid level,
and the scan schedule is sequential. Pixels outside the hole are bit-exact
copies of the input for both backends (enforced after decoding for the
remote one).

Remote wire protocol (frozen): HTTP POST ``/inpaint``, multipart body with
``image`` (PNG) and ``mask`` (8-bit PNG, 255 = hole); the response body is a
PNG of identical dimensions, status 200 on success.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from numba import njit
from PIL import Image

from .geometry import PixelMask


class UninpaintableError(ValueError):
    """The hole leaves no usable source content."""


class RemoteInpaintError(RuntimeError):
    pass


class RemoteTimeout(RemoteInpaintError):
    pass


class RemoteBadStatus(RemoteInpaintError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"remote inpainter returned status {status}")
        self.status = status


class RemoteDimensionMismatch(RemoteInpaintError):
    pass


@dataclass
class InpaintParams:
    patch_size: int = 7
    pyramid_levels: int | None = None  # None: halve until min side would drop below 32
    iterations_per_level: int = 5
    rng_seed: int = 0

    def validate(self) -> None:
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")


MIN_PYRAMID_SIDE = 32


def _as_hole_array(hole, shape) -> np.ndarray:
    if isinstance(hole, PixelMask):
        arr = hole.data
    else:
        arr = np.asarray(hole, dtype=bool)
    if arr.shape != shape[:2]:
        raise ValueError(f"hole shape {arr.shape} does not match image {shape[:2]}")
    return arr


def _downsample(img: np.ndarray, hole: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x box downsample averaging only non-hole pixels; coarse pixel is hole
    when any contributing pixel is."""
    h, w = hole.shape
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    ph, pw = h2 * 2, w2 * 2
    img_p = np.zeros((ph, pw, 3), dtype=np.float64)
    img_p[:h, :w] = img
    img_p[h:, :w] = img_p[h - 1 : h, :w]
    img_p[:, w:] = img_p[:, w - 1 : w]
    hole_p = np.ones((ph, pw), dtype=bool)
    hole_p[:h, :w] = hole
    hole_p[h:, :w] = hole_p[h - 1 : h, :w]
    hole_p[:, w:] = hole_p[:, w - 1 : w]

    valid = (~hole_p).astype(np.float64)
    num = (img_p * valid[..., None]).reshape(h2, 2, w2, 2, 3).sum(axis=(1, 3))
    den = valid.reshape(h2, 2, w2, 2).sum(axis=(1, 3))
    coarse_hole = hole_p.reshape(h2, 2, w2, 2).any(axis=(1, 3))
    out = np.zeros((h2, w2, 3), dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz][..., None]
    return out.astype(np.float32), coarse_hole


def _source_ok(hole: np.ndarray, pr: int) -> np.ndarray:
    """Centers whose (2pr+1)^2 window fits in the image and holds no hole pixel."""
    h, w = hole.shape
    ok = np.zeros((h, w), dtype=bool)
    if h < 2 * pr + 1 or w < 2 * pr + 1:
        return ok
    c = np.zeros((h + 1, w + 1), dtype=np.int64)
    c[1:, 1:] = np.cumsum(np.cumsum(hole.astype(np.int64), axis=0), axis=1)
    y0 = np.arange(pr, h - pr)
    x0 = np.arange(pr, w - pr)
    ys, xs = np.meshgrid(y0, x0, indexing="ij")
    a, b = ys - pr, xs - pr
    d, e = ys + pr + 1, xs + pr + 1
    window = c[d, e] - c[a, e] - c[d, b] + c[a, b]
    ok[pr : h - pr, pr : w - pr] = window == 0
    return ok


@njit(cache=True, fastmath=True)
def _patch_dist(img, ty, tx, sy, sx, pr, cutoff):
    h, w, _ = img.shape
    d = 0.0
    for dy in range(-pr, pr + 1):
        tyy = min(max(ty + dy, 0), h - 1)
        syy = sy + dy
        row = 0.0
        for dx in range(-pr, pr + 1):
            txx = min(max(tx + dx, 0), w - 1)
            sxx = sx + dx
            for ch in range(3):
                diff = img[tyy, txx, ch] - img[syy, sxx, ch]
                row += diff * diff
        d += row
        if d >= cutoff:
            return d
    return d


@njit(cache=True)
def _xorshift(state):
    state ^= state << np.uint64(13)
    state &= np.uint64(0xFFFFFFFFFFFFFFFF)
    state ^= state >> np.uint64(7)
    state ^= state << np.uint64(17)
    state &= np.uint64(0xFFFFFFFFFFFFFFFF)
    return state


@njit(cache=True)
def _rand01(state):
    state = _xorshift(state)
    return state, (state >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, fastmath=True)
def _pm_sweeps(img, src_ok, ys, xs, nnf_y, nnf_x, dist, iters, pr, seed, energies, search_radius):
    """Propagation + random search sweeps with colors held fixed.

    Alternates scan direction per iteration; accepts strictly better matches
    only, so the recorded per-iteration energy never increases. search_radius
    caps the random-search span: levels seeded from an upsampled match field
    only need local refinement.
    """
    h, w, _ = img.shape
    n = ys.shape[0]
    hole_index = np.full((h, w), -1, dtype=np.int64)
    for i in range(n):
        hole_index[ys[i], xs[i]] = i
    state = np.uint64(seed) | np.uint64(1)
    wmax = min(float(max(h, w)), search_radius)
    # a match whose mean squared error is <= 1 per sample is visually exact;
    # refining it further cannot change the fill perceptibly
    good_enough = float((2 * pr + 1) * (2 * pr + 1) * 3)

    for it in range(iters):
        forward = it % 2 == 0
        for k in range(n):
            i = k if forward else n - 1 - k
            y, x = ys[i], xs[i]
            best = dist[i]
            if best <= good_enough:
                continue
            by, bx = nnf_y[i], nnf_x[i]

            # propagate from the two already-visited neighbours
            for nb in range(2):
                if forward:
                    nyy = y - 1 if nb == 0 else y
                    nxx = x if nb == 0 else x - 1
                else:
                    nyy = y + 1 if nb == 0 else y
                    nxx = x if nb == 0 else x + 1
                if nyy < 0 or nyy >= h or nxx < 0 or nxx >= w:
                    continue
                j = hole_index[nyy, nxx]
                if j < 0:
                    continue
                cy = nnf_y[j] + (y - nyy)
                cx = nnf_x[j] + (x - nxx)
                if cy < 0 or cy >= h or cx < 0 or cx >= w:
                    continue
                if not src_ok[cy, cx]:
                    continue
                if cy == by and cx == bx:
                    continue
                d = _patch_dist(img, y, x, cy, cx, pr, best)
                if d < best:
                    best, by, bx = d, cy, cx

            # random search around the current best, radius halving
            radius = wmax
            while radius >= 1.0:
                state, r1 = _rand01(state)
                state, r2 = _rand01(state)
                cy = by + int((r1 * 2.0 - 1.0) * radius)
                cx = bx + int((r2 * 2.0 - 1.0) * radius)
                radius *= 0.5
                if cy < 0 or cy >= h or cx < 0 or cx >= w:
                    continue
                if not src_ok[cy, cx]:
                    continue
                if cy == by and cx == bx:
                    continue
                d = _patch_dist(img, y, x, cy, cx, pr, best)
                if d < best:
                    best, by, bx = d, cy, cx

            dist[i] = best
            nnf_y[i] = by
            nnf_x[i] = bx

        total = 0.0
        for i in range(n):
            total += dist[i]
        energies[it] = total


@njit(cache=True, fastmath=True)
def _init_dists(img, ys, xs, nnf_y, nnf_x, pr):
    n = ys.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = _patch_dist(img, ys[i], xs[i], nnf_y[i], nnf_x[i], pr, np.inf)
    return out


@njit(cache=True, fastmath=True)
def _pm_vote(img, hole, ys, xs, nnf_y, nnf_x, pr):
    """Average, per hole pixel, the source pixels proposed by every patch
    covering it. Returns the voted colors for the hole pixels only."""
    h, w, _ = img.shape
    n = ys.shape[0]
    acc = np.zeros((h, w, 3), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    for i in range(n):
        ty, tx = ys[i], xs[i]
        sy, sx = nnf_y[i], nnf_x[i]
        for dy in range(-pr, pr + 1):
            py = ty + dy
            if py < 0 or py >= h:
                continue
            for dx in range(-pr, pr + 1):
                px = tx + dx
                if px < 0 or px >= w:
                    continue
                if not hole[py, px]:
                    continue
                for ch in range(3):
                    acc[py, px, ch] += img[sy + dy, sx + dx, ch]
                cnt[py, px] += 1.0
    out = np.zeros((n, 3), dtype=np.float32)
    for i in range(n):
        y, x = ys[i], xs[i]
        if cnt[y, x] > 0:
            for ch in range(3):
                out[i, ch] = np.float32(acc[y, x, ch] / cnt[y, x])
        else:
            for ch in range(3):
                out[i, ch] = img[y, x, ch]
    return out


def _level_count(h: int, w: int, params: InpaintParams) -> int:
    levels = 1
    side = min(h, w)
    while side // 2 >= MIN_PYRAMID_SIDE:
        side //= 2
        levels += 1
    if params.pyramid_levels is not None:
        levels = max(1, min(levels, params.pyramid_levels))
    return levels


def inpaint_native(
    image: np.ndarray,
    hole,
    params: InpaintParams = InpaintParams(),
    energy_trace: list | None = None,
) -> np.ndarray:
    """Fill the hole with coarse-to-fine PatchMatch; outside stays bit-exact.

    energy_trace, when given, receives one list of per-iteration
    correspondence energies per pyramid level (coarsest first).
    """
    params.validate()
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3) uint8")
    hole0 = _as_hole_array(hole, image.shape)
    if not hole0.any():
        return image.copy()
    if hole0.all():
        raise UninpaintableError("hole covers the entire image")

    pr = params.patch_size // 2
    # build the pyramid, finest first
    levels = [(image.astype(np.float32), hole0.copy())]
    for _ in range(_level_count(*image.shape[:2], params) - 1):
        levels.append(_downsample(*levels[-1]))

    seeds = np.random.SeedSequence(params.rng_seed).generate_state(len(levels), dtype=np.uint64)
    filled_prev: np.ndarray | None = None
    nnf_prev: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None

    for li in range(len(levels) - 1, -1, -1):
        img, hol = levels[li]
        img = img.copy()
        src_ok = _source_ok(hol, pr)
        if not src_ok.any():
            raise UninpaintableError(
                f"no {params.patch_size}x{params.patch_size} source patch is free of the hole"
            )
        ys64, xs64 = np.nonzero(hol)
        ys = ys64.astype(np.int64)
        xs = xs64.astype(np.int64)
        n = ys.size
        rng = np.random.default_rng(seeds[li])

        if filled_prev is None:
            mean = img[~hol].mean(axis=0)
            img[hol] = mean
        else:
            # seed colors from the coarser solve (nearest-neighbor upsample)
            cy = np.minimum(ys // 2, filled_prev.shape[0] - 1)
            cx = np.minimum(xs // 2, filled_prev.shape[1] - 1)
            img[ys, xs] = filled_prev[cy, cx]

        src_ys, src_xs = np.nonzero(src_ok)
        pick = rng.integers(0, src_ys.size, size=n)
        nnf_y = src_ys[pick].astype(np.int64)
        nnf_x = src_xs[pick].astype(np.int64)
        if nnf_prev is not None:
            pys, pxs, pny, pnx = nnf_prev
            up = np.full((levels[li + 1][1].shape[0], levels[li + 1][1].shape[1], 2), -1, dtype=np.int64)
            up[pys, pxs, 0] = pny
            up[pys, pxs, 1] = pnx
            gy = np.minimum(ys // 2, up.shape[0] - 1)
            gx = np.minimum(xs // 2, up.shape[1] - 1)
            cand_y = up[gy, gx, 0] * 2
            cand_x = up[gy, gx, 1] * 2
            ok = (
                (cand_y >= 0)
                & (cand_y < img.shape[0])
                & (cand_x >= 0)
                & (cand_x < img.shape[1])
            )
            ok &= src_ok[np.clip(cand_y, 0, img.shape[0] - 1), np.clip(cand_x, 0, img.shape[1] - 1)]
            nnf_y[ok] = cand_y[ok]
            nnf_x[ok] = cand_x[ok]

        dist = _init_dists(img, ys, xs, nnf_y, nnf_x, pr)
        energies = np.zeros(params.iterations_per_level, dtype=np.float64)
        search_radius = float(max(img.shape[:2])) if nnf_prev is None else 2.0 * params.patch_size
        _pm_sweeps(
            img, src_ok, ys, xs, nnf_y, nnf_x, dist,
            params.iterations_per_level, pr, int(seeds[li]) & 0x7FFFFFFFFFFFFFFF, energies,
            search_radius,
        )
        if energy_trace is not None:
            energy_trace.append([float(e) for e in energies])

        voted = _pm_vote(img, hol, ys, xs, nnf_y, nnf_x, pr)
        img[ys, xs] = voted
        filled_prev = img
        nnf_prev = (ys, xs, nnf_y, nnf_x)

    out = image.copy()
    final = np.clip(np.rint(filled_prev[hole0]), 0, 255).astype(np.uint8)
    out[hole0] = final
    return out


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def inpaint_remote(
    endpoint: str,
    image: np.ndarray,
    hole,
    timeout: float = 30.0,
    client=None,
) -> np.ndarray:
    """POST the image and hole mask to a sidecar inpainter.

    The caller contract is enforced here: whatever the sidecar returns,
    pixels outside the hole are overwritten with the originals.
    """
    import httpx

    image = np.asarray(image)
    hole_arr = _as_hole_array(hole, image.shape)
    mask_png = _png_bytes((hole_arr.astype(np.uint8)) * 255)
    files = {
        "image": ("image.png", _png_bytes(image), "image/png"),
        "mask": ("mask.png", mask_png, "image/png"),
    }
    own = client is None
    cli = client or httpx.Client()
    try:
        try:
            resp = cli.post(endpoint, files=files, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise RemoteTimeout(f"remote inpainter timed out after {timeout}s") from exc
        if resp.status_code != 200:
            raise RemoteBadStatus(resp.status_code, resp.text[:200])
        returned = np.array(Image.open(io.BytesIO(resp.content)).convert("RGB"))
        if returned.shape != image.shape:
            raise RemoteDimensionMismatch(
                f"remote inpainter returned {returned.shape}, expected {image.shape}"
            )
    finally:
        if own:
            cli.close()
    out = image.copy()
    out[hole_arr] = returned[hole_arr]
    return out


def inpaint(
    image: np.ndarray,
    hole,
    params: InpaintParams = InpaintParams(),
    backend: str = "native",
    endpoint: str | None = None,
    fallback_to_native: bool = True,
    timeout: float = 30.0,
    client=None,
) -> np.ndarray:
    """Backend dispatch used by the compositor."""
    if backend == "native":
        return inpaint_native(image, hole, params)
    if backend == "remote":
        if not endpoint:
            raise ValueError("remote backend requires an endpoint URL")
        try:
            return inpaint_remote(endpoint, image, hole, timeout=timeout, client=client)
        except RemoteInpaintError:
            if not fallback_to_native:
                raise
            return inpaint_native(image, hole, params)
    raise ValueError(f"unknown inpaint backend {backend!r}")
