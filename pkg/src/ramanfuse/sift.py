"""Scale-invariant keypoint detection and 128-d descriptors for greyscale
images.

Classic difference-of-Gaussians detector: a Gaussian pyramid per octave,
26-neighbour extrema with quadratic sub-pixel refinement, contrast and edge
rejection, 36-bin orientation assignment and 4x4x8 trilinearly pooled
gradient descriptors. All parameter defaults are the canonical published
values; nothing here is data-dependent or random.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import GreyImage
from .errors import ImageTooSmall

DESCRIPTOR_LENGTH = 128
ORIENTATION_BINS = 36
PEAK_RATIO = 0.8
DESCRIPTOR_CLAMP = 0.2


@dataclass(frozen=True)
class SiftParams:
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.04
    edge_ratio_threshold: float = 10.0
    n_octaves: int | None = None      # None: derived from image size
    upsample_first: bool = False      # start one octave below the input
    assumed_blur: float = 0.5

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if min(self.base_sigma, self.contrast_threshold, self.edge_ratio_threshold) <= 0:
            raise ValueError("sigma and thresholds must be positive")


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float        # sigma in input-image pixels
    orientation: float  # radians in [0, 2*pi)
    response: float     # |DoG| at the refined extremum
    octave: int = 0
    layer: int = 0
    octave_scale: float = 0.0  # sigma in octave pixels, for window sizing


@dataclass(frozen=True)
class ScaleSpace:
    gaussians: list       # per octave: (s+3, h, w) arrays
    dogs: list            # per octave: (s+2, h, w) arrays
    deltas: list          # per octave: pixel size relative to the input image
    params: SiftParams
    sigmas: np.ndarray = field(default=None)  # per-level sigma within an octave


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.copy()
    radius = max(1, int(math.ceil(4.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    pad = np.pad(img, ((0, 0), (radius, radius)), mode="edge")
    img = sliding_window_view(pad, 2 * radius + 1, axis=1) @ kernel
    pad = np.pad(img, ((radius, radius), (0, 0)), mode="edge")
    return sliding_window_view(pad, 2 * radius + 1, axis=0) @ kernel


def _level_sigmas(params: SiftParams) -> np.ndarray:
    s = params.scales_per_octave
    return params.base_sigma * 2.0 ** (np.arange(s + 3) / s)


def build_scale_space(img: GreyImage, params: SiftParams = SiftParams()) -> ScaleSpace:
    """Gaussian and DoG pyramids. Per octave there are s+3 Gaussian levels
    with geometrically spaced sigmas; each next octave halves the resolution
    starting from the level at exactly twice the base sigma."""
    if min(img.height, img.width) < 16:
        raise ImageTooSmall(f"need at least 16x16, got {img.width}x{img.height}")
    base = img.pixels.astype(np.float64) / 255.0
    delta = 1.0
    blur = params.assumed_blur
    if params.upsample_first:
        base = np.repeat(np.repeat(base, 2, axis=0), 2, axis=1)
        delta = 0.5
        blur *= 2.0
    seed_sigma = math.sqrt(max(params.base_sigma**2 - blur**2, 0.01))
    base = _gaussian_blur(base, seed_sigma)

    n_octaves = params.n_octaves
    if n_octaves is None:
        n_octaves = max(1, int(math.floor(math.log2(min(base.shape)))) - 2)

    sigmas = _level_sigmas(params)
    increments = np.sqrt(np.diff(sigmas**2))
    s = params.scales_per_octave

    gaussians, dogs, deltas = [], [], []
    current = base
    for _ in range(n_octaves):
        levels = [current]
        for inc in increments:
            levels.append(_gaussian_blur(levels[-1], inc))
        stack = np.stack(levels)
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
        deltas.append(delta)
        current = levels[s][::2, ::2]
        delta *= 2.0
        if min(current.shape) < 4:
            break
    return ScaleSpace(gaussians, dogs, deltas, params, sigmas)


def _local_extrema(dog: np.ndarray, floor: float) -> np.ndarray:
    """(layer, row, col) indices of strict 26-neighbour extrema with
    |value| above the prefilter floor. Indices refer to the full arrays."""
    n_l, h, w = dog.shape
    centre = dog[1:-1, 1:-1, 1:-1]
    is_max = np.abs(centre) > floor
    is_min = is_max.copy()
    for dl in (-1, 0, 1):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dl == dr == dc == 0:
                    continue
                nb = dog[1 + dl:n_l - 1 + dl, 1 + dr:h - 1 + dr, 1 + dc:w - 1 + dc]
                is_max &= centre > nb
                is_min &= centre < nb
    return np.argwhere(is_max | is_min) + 1


def _refine(dog: np.ndarray, layer: int, row: int, col: int, params: SiftParams):
    """Quadratic (3-D Taylor) refinement of an extremum.

    Returns (layer_f, row_f, col_f, value) or None when the fit walks out of
    range, fails to settle in five moves, or the refined point fails the
    contrast or edge tests.
    """
    n_layers, h, w = dog.shape
    offset = np.zeros(3)
    for _ in range(5):
        d = dog
        grad = 0.5 * np.array(
            [
                d[layer + 1, row, col] - d[layer - 1, row, col],
                d[layer, row + 1, col] - d[layer, row - 1, col],
                d[layer, row, col + 1] - d[layer, row, col - 1],
            ]
        )
        centre = d[layer, row, col]
        hll = d[layer + 1, row, col] + d[layer - 1, row, col] - 2 * centre
        hrr = d[layer, row + 1, col] + d[layer, row - 1, col] - 2 * centre
        hcc = d[layer, row, col + 1] + d[layer, row, col - 1] - 2 * centre
        hlr = 0.25 * (
            d[layer + 1, row + 1, col] - d[layer + 1, row - 1, col]
            - d[layer - 1, row + 1, col] + d[layer - 1, row - 1, col]
        )
        hlc = 0.25 * (
            d[layer + 1, row, col + 1] - d[layer + 1, row, col - 1]
            - d[layer - 1, row, col + 1] + d[layer - 1, row, col - 1]
        )
        hrc = 0.25 * (
            d[layer, row + 1, col + 1] - d[layer, row + 1, col - 1]
            - d[layer, row - 1, col + 1] + d[layer, row - 1, col - 1]
        )
        hessian = np.array([[hll, hlr, hlc], [hlr, hrr, hrc], [hlc, hrc, hcc]])
        try:
            offset = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        layer += int(round(offset[0]))
        row += int(round(offset[1]))
        col += int(round(offset[2]))
        if not (1 <= layer <= n_layers - 2 and 1 <= row <= h - 2 and 1 <= col <= w - 2):
            return None
    else:
        return None

    value = dog[layer, row, col] + 0.5 * float(grad @ offset)
    if abs(value) < params.contrast_threshold:
        return None
    # 2x2 spatial Hessian edge test at the settled integer location
    tr = hrr + hcc
    det = hrr * hcc - hrc**2
    r = params.edge_ratio_threshold
    if det <= 0 or tr**2 * r >= det * (r + 1) ** 2:
        return None
    return layer + offset[0], row + offset[1], col + offset[2], abs(value)


def detect_keypoints(space: ScaleSpace, params: SiftParams | None = None) -> list[Keypoint]:
    """Unoriented keypoints (orientation 0) from the DoG pyramids."""
    params = params or space.params
    s = params.scales_per_octave
    floor = 0.5 * params.contrast_threshold / s
    found = []
    for octave, dog in enumerate(space.dogs):
        delta = space.deltas[octave]
        for layer, row, col in _local_extrema(dog, floor):
            refined = _refine(dog, int(layer), int(row), int(col), params)
            if refined is None:
                continue
            layer_f, row_f, col_f, value = refined
            octave_scale = params.base_sigma * 2.0 ** (layer_f / s)
            found.append(
                Keypoint(
                    x=col_f * delta,
                    y=row_f * delta,
                    scale=octave_scale * delta,
                    orientation=0.0,
                    response=value,
                    octave=octave,
                    layer=int(round(layer_f)),
                    octave_scale=octave_scale,
                )
            )
    found.sort(key=lambda k: (k.octave, k.y, k.x, k.scale))
    return found


def normalize_descriptor(raw: np.ndarray) -> np.ndarray | None:
    """L2 normalize, clamp entries at 0.2, renormalize. None when the raw
    histogram carries no energy."""
    norm = np.linalg.norm(raw)
    if norm < 1e-12:
        return None
    clamped = np.minimum(raw / norm, DESCRIPTOR_CLAMP)
    norm = np.linalg.norm(clamped)
    if norm < 1e-12:
        return None
    return clamped / norm


def _smooth_circular(hist: np.ndarray) -> np.ndarray:
    pad = np.concatenate([hist[-2:], hist, hist[:2]])
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    return np.convolve(pad, kernel, mode="valid")


def assign_orientations(kp: Keypoint, space: ScaleSpace) -> list[Keypoint]:
    """One or more oriented copies of a keypoint: histogram peaks within 80%
    of the top peak each spawn a keypoint, with parabolic peak refinement."""
    level = space.gaussians[kp.octave][min(kp.layer, len(space.gaussians[kp.octave]) - 1)]
    h, w = level.shape
    delta = space.deltas[kp.octave]
    col_c = kp.x / delta
    row_c = kp.y / delta
    sigma = 1.5 * kp.octave_scale
    radius = int(round(3.0 * sigma))

    r0 = max(1, int(round(row_c)) - radius)
    r1 = min(h - 2, int(round(row_c)) + radius)
    c0 = max(1, int(round(col_c)) - radius)
    c1 = min(w - 2, int(round(col_c)) + radius)
    if r1 < r0 or c1 < c0:
        return []

    patch = level[r0 - 1:r1 + 2, c0 - 1:c1 + 2]
    dy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    dx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    mag = np.hypot(dx, dy)
    ang = np.arctan2(dy, dx)

    rows = np.arange(r0, r1 + 1)[:, None] - row_c
    cols = np.arange(c0, c1 + 1)[None, :] - col_c
    weight = np.exp(-(rows**2 + cols**2) / (2.0 * sigma**2))
    bins = np.rint(ang * (ORIENTATION_BINS / (2.0 * np.pi))).astype(int) % ORIENTATION_BINS
    hist = np.bincount(bins.ravel(), weights=(weight * mag).ravel(), minlength=ORIENTATION_BINS)
    hist = _smooth_circular(hist)

    top = hist.max()
    if top <= 0:
        return []
    out = []
    for i in range(ORIENTATION_BINS):
        left = hist[i - 1]
        right = hist[(i + 1) % ORIENTATION_BINS]
        if hist[i] <= left or hist[i] <= right or hist[i] < PEAK_RATIO * top:
            continue
        shift = 0.5 * (left - right) / (left - 2.0 * hist[i] + right)
        angle = (i + shift) * (2.0 * np.pi / ORIENTATION_BINS) % (2.0 * np.pi)
        out.append(
            Keypoint(
                kp.x, kp.y, kp.scale, float(angle), kp.response,
                kp.octave, kp.layer, kp.octave_scale,
            )
        )
    return out


def compute_descriptor(kp: Keypoint, space: ScaleSpace) -> np.ndarray | None:
    """128-d gradient histogram descriptor, or None when the sampling window
    leaves the octave image (such keypoints are dropped)."""
    n_bins = 8
    grid = 4
    level = space.gaussians[kp.octave][min(kp.layer, len(space.gaussians[kp.octave]) - 1)]
    h, w = level.shape
    delta = space.deltas[kp.octave]
    col_c = kp.x / delta
    row_c = kp.y / delta

    hist_width = 3.0 * kp.octave_scale
    half = int(round(hist_width * math.sqrt(2) * (grid + 1) * 0.5))
    row_i = int(round(row_c))
    col_i = int(round(col_c))
    if row_i - half < 1 or row_i + half > h - 2 or col_i - half < 1 or col_i + half > w - 2:
        return None

    rows = np.arange(row_i - half, row_i + half + 1)
    cols = np.arange(col_i - half, col_i + half + 1)
    patch = level[rows[0] - 1:rows[-1] + 2, cols[0] - 1:cols[-1] + 2]
    dy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    dx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    mag = np.hypot(dx, dy)
    ang = np.arctan2(dy, dx)

    dr = rows[:, None] - row_c
    dc = cols[None, :] - col_c
    cos_t = math.cos(kp.orientation)
    sin_t = math.sin(kp.orientation)
    # rotate sample offsets into the keypoint frame
    r_rot = -sin_t * dc + cos_t * dr
    c_rot = cos_t * dc + sin_t * dr
    row_bin = r_rot / hist_width + 0.5 * grid - 0.5
    col_bin = c_rot / hist_width + 0.5 * grid - 0.5
    inside = (row_bin > -1) & (row_bin < grid) & (col_bin > -1) & (col_bin < grid)

    weight = np.exp(
        -((r_rot / hist_width) ** 2 + (c_rot / hist_width) ** 2)
        / (2.0 * (0.5 * grid) ** 2)
    )
    contrib = weight * mag
    o_bin = ((ang - kp.orientation) * (n_bins / (2.0 * np.pi))) % n_bins

    rb = row_bin[inside]
    cb = col_bin[inside]
    ob = o_bin[inside]
    cv = contrib[inside]

    hist = np.zeros((grid + 2, grid + 2, n_bins))
    r_f = np.floor(rb).astype(int)
    c_f = np.floor(cb).astype(int)
    o_f = np.floor(ob).astype(int)
    r_d = rb - r_f
    c_d = cb - c_f
    o_d = ob - o_f
    for r_off in (0, 1):
        wr = cv * (r_d if r_off else 1 - r_d)
        for c_off in (0, 1):
            wc = wr * (c_d if c_off else 1 - c_d)
            for o_off in (0, 1):
                wo = wc * (o_d if o_off else 1 - o_d)
                np.add.at(
                    hist,
                    (r_f + r_off + 1, c_f + c_off + 1, (o_f + o_off) % n_bins),
                    wo,
                )

    return normalize_descriptor(hist[1:-1, 1:-1, :].ravel())


def extract(img: GreyImage, params: SiftParams = SiftParams()) -> list[tuple[Keypoint, np.ndarray]]:
    """Full pipeline: pyramid, detection, orientation, descriptors.

    Output order is deterministic: sorted by (octave, y, x, scale,
    orientation)."""
    space = build_scale_space(img, params)
    out = []
    for kp in detect_keypoints(space, params):
        for oriented in assign_orientations(kp, space):
            desc = compute_descriptor(oriented, space)
            if desc is not None:
                out.append((oriented, desc))
    out.sort(key=lambda kd: (kd[0].octave, kd[0].y, kd[0].x, kd[0].scale, kd[0].orientation))
    return out


def descriptor_matrix(pairs: list[tuple[Keypoint, np.ndarray]]) -> np.ndarray:
    """Stack extracted descriptors as an (n, 128) matrix (empty-safe)."""
    if not pairs:
        return np.zeros((0, DESCRIPTOR_LENGTH))
    return np.stack([d for _, d in pairs])


def save_descriptors(path, pairs) -> None:
    """Debug dump: one CSV row of 128 values per descriptor."""
    np.savetxt(path, descriptor_matrix(pairs), delimiter=",", fmt="%.9g")


def load_descriptors(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != DESCRIPTOR_LENGTH:
        raise ValueError(f"descriptor rows must have {DESCRIPTOR_LENGTH} values")
    return data
