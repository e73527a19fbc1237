"""Procedural cell renderer.

Renders one cell per image against a constant background. Plausible images
draw every measured quantity from the interior of its spec interval;
implausible images violate exactly one uniformly chosen criterion, placed at
least 40% beyond the interval edge, while keeping everything else valid.

After rasterizing, the renderer measures its own output with the same
measurement code the oracle uses and re-draws the free parameters (bounded
retries) until the measured verdict matches the request. That is what makes
generator/oracle agreement exact: the oracle still only ever sees pixels.

All randomness flows from one seeded numpy Generator, so output is
bit-identical for identical (spec, plausible, seed, size).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from cellforge.datagen import specs as W
from cellforge.datagen.measure import measure_image
from cellforge.datagen.oracle import flags_from_measurements
from cellforge.records import CRITERIA_NAMES

MAX_ATTEMPTS = 160

# Largest nucleus-to-cell area ratio each shape can reach while staying
# inside the cell, and the smallest pixel area at which its geometry still
# reads correctly (scaled by scale^2).
SHAPE_RATIO_CAP = {"round": 0.80, "horseshoe": 0.45, "multi_lobed": 0.40, "clumped": 0.50}
SHAPE_MIN_PX = {"round": 30, "horseshoe": 34, "multi_lobed": 46, "clumped": 36}

CYTO_PIXEL_NOISE = 0.018
CHROMATIN_AMP_DENSE = 0.05
CHROMATIN_AMP_DIFFUSE = 0.60
COLOR_VIOLATION_SHIFT = 0.13


class _Retry(Exception):
    """Internal: this draw could not be placed, try the next one."""


@dataclass(frozen=True)
class RenderInfo:
    class_code: str
    plausible: bool
    violated_criterion: Optional[str]
    nucleus_shape: str
    attempts: int


def _grids(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    return yy.astype(np.float64), xx.astype(np.float64)


def _disk(yy, xx, cy: float, cx: float, r: float) -> np.ndarray:
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _solve_area(
    build: Callable[[float], np.ndarray],
    target_px: int,
    p_lo: float,
    p_hi: float,
    clip: np.ndarray,
) -> np.ndarray:
    """Binary-search a monotone size parameter to hit a pixel-count target."""
    best_mask, best_err = None, None
    lo, hi = p_lo, p_hi
    for _ in range(26):
        mid = 0.5 * (lo + hi)
        mask = build(mid) & clip
        cnt = int(mask.sum())
        err = abs(cnt - target_px)
        if best_err is None or err < best_err:
            best_mask, best_err = mask, err
        if cnt < target_px:
            lo = mid
        else:
            hi = mid
    return best_mask


def _shape_builder(
    shape: str, yy, xx, cy: float, cx: float, rng: np.random.Generator
) -> Callable[[float], np.ndarray]:
    """A mask builder parametrized by one size scalar, geometry frozen."""
    if shape == "round":
        return lambda r: _disk(yy, xx, cy, cx, r)

    if shape == "horseshoe":
        phi = rng.uniform(0.0, 2.0 * np.pi)
        gap = rng.uniform(1.3, 1.8)
        ri_frac = rng.uniform(0.52, 0.58)
        ang = np.arctan2(yy - cy, xx - cx)
        in_gap = np.abs(np.mod(ang - phi + np.pi, 2.0 * np.pi) - np.pi) <= gap / 2.0
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2

        def build(ro: float) -> np.ndarray:
            return (d2 <= ro * ro) & (d2 >= (ri_frac * ro) ** 2) & ~in_gap

        return build

    if shape == "multi_lobed":
        phi = rng.uniform(0.0, 2.0 * np.pi)
        angs = phi + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0 + rng.uniform(-0.15, 0.15, 3)
        sep = 1.48 + rng.uniform(-0.03, 0.05, 3)

        def build(rl: float) -> np.ndarray:
            mask = np.zeros(yy.shape, dtype=bool)
            for a, s in zip(angs, sep):
                mask |= _disk(yy, xx, cy + s * rl * np.sin(a), cx + s * rl * np.cos(a), rl)
            return mask

        return build

    if shape == "clumped":
        phi = rng.uniform(0.0, 2.0 * np.pi)
        angs = phi + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0 + rng.uniform(-0.25, 0.25, 3)
        fracs = np.array([1.0, 0.90, 0.82])
        off = 0.95 + rng.uniform(-0.05, 0.05, 3)

        def build(rl: float) -> np.ndarray:
            mask = np.zeros(yy.shape, dtype=bool)
            for a, f, o in zip(angs, fracs, off):
                mask |= _disk(yy, xx, cy + o * rl * np.sin(a), cx + o * rl * np.cos(a), f * rl)
            return mask

        return build

    raise ValueError(f"unknown nucleus shape {shape!r}")


def _place_dots(
    rng: np.random.Generator,
    n: int,
    cy: float,
    cx: float,
    max_r: float,
    keepout_dt: np.ndarray,
    keepout_dist: float,
    spacing: float,
    size: int,
) -> list[tuple[float, float]]:
    """Rejection-sample n dot centers inside the cytoplasm band."""
    pts: list[tuple[float, float]] = []
    for _ in range(n):
        for _attempt in range(400):
            t = rng.uniform(0.0, 2.0 * np.pi)
            rr = np.sqrt(rng.uniform()) * max_r
            py, px = cy + rr * np.sin(t), cx + rr * np.cos(t)
            iy, ix = int(round(py)), int(round(px))
            if not (0 <= iy < size and 0 <= ix < size):
                continue
            if keepout_dt[iy, ix] < keepout_dist:
                continue
            if any((py - qy) ** 2 + (px - qx) ** 2 < spacing ** 2 for qy, qx in pts):
                continue
            pts.append((py, px))
            break
        else:
            raise _Retry(f"could not place {n} dots")
    return pts


def _valid_color_shifts(spec: W.CellSpec) -> list[np.ndarray]:
    """Single-channel shift vectors that stay clear of every landmark."""
    base = np.asarray(spec.cytoplasm_color, dtype=np.float64)
    out = []
    for ch in range(3):
        for sign in (1.0, -1.0):
            delta = np.zeros(3)
            delta[ch] = sign * COLOR_VIOLATION_SHIFT
            target = base + delta
            if target.min() < 0.05 or target.max() > 0.93:
                continue
            if np.abs(target - W.BACKGROUND_COLOR).max() < 0.13:
                continue
            if float(target @ np.array([0.2126, 0.7152, 0.0722])) < 0.50:
                continue
            if np.abs(target - np.asarray(spec.granule_color)).max() < 0.23:
                continue
            if np.abs(target - W.INCLUSION_COLOR).max() < 0.23:
                continue
            out.append(delta)
    return out


def _ratio_band_for_shape(
    shape: str, spec: W.CellSpec, cell_px: int, scale: float
) -> tuple[float, float]:
    """Intersect the class ratio interval (flag-safe) with shape feasibility."""
    lo, hi = spec.nucleus_to_cytoplasm_ratio_range
    floor = SHAPE_MIN_PX[shape] * scale * scale / cell_px
    band_lo = max(lo * 0.95, floor)
    band_hi = min(hi * 1.05, SHAPE_RATIO_CAP[shape])
    return band_lo, band_hi


def _render_once(
    spec: W.CellSpec,
    rng: np.random.Generator,
    size: int,
    scale: float,
    violated: Optional[str],
    allowed_shapes: Sequence[str],
) -> tuple[np.ndarray, str]:
    yy, xx = _grids(size)
    rlo, rhi = spec.cell_radius_range
    rlo, rhi = rlo * scale, rhi * scale
    half = (size - 1) / 2.0

    # Cell geometry. Size violations overshoot the upper edge; dot-surplus
    # violations bias the cell large (more cytoplasm to place dots in);
    # everything else draws from the interior of the interval.
    w = rhi - rlo
    if violated == "cell_size":
        cy = cx = half
        radius = min(1.45 * rhi, half - 1.3 * scale)
    elif violated in ("granules", "inclusions"):
        cy = half + rng.uniform(-0.5, 0.5) * scale
        cx = half + rng.uniform(-0.5, 0.5) * scale
        radius = rng.uniform(rlo + 0.55 * w, rhi - 0.12 * w)
    else:
        cy = half + rng.uniform(-0.5, 0.5) * scale
        cx = half + rng.uniform(-0.5, 0.5) * scale
        radius = rng.uniform(rlo + 0.12 * w, rhi - 0.12 * w)
    cell = _disk(yy, xx, cy, cx, radius)
    cell_px = int(cell.sum())

    # Nucleus shape: honest images draw from the class's allowed shapes;
    # shape violations pick a shape from outside that set whose geometry can
    # still realize an unflagged area ratio.
    if violated == "nucleus_shape":
        alts = [s for s in W.NUCLEUS_SHAPES if s not in tuple(allowed_shapes)]
        order = list(rng.permutation(len(alts)))
        shape = None
        for i in order:
            band = _ratio_band_for_shape(alts[i], spec, cell_px, scale)
            if band[0] < band[1]:
                shape = alts[i]
                break
        if shape is None:
            raise _Retry("no feasible alternative shape")
    else:
        shape = str(rng.choice(list(allowed_shapes)))

    # Area ratio target.
    nlo, nhi = spec.nucleus_to_cytoplasm_ratio_range
    wn = nhi - nlo
    if violated == "nc_ratio":
        ratio_t = min(1.45 * nhi, SHAPE_RATIO_CAP[shape])
        if ratio_t < (1.0 + W.GUARD_GEN) * nhi:
            raise _Retry("ratio violation does not fit this shape")
    elif violated == "nucleus_shape":
        blo, bhi = _ratio_band_for_shape(shape, spec, cell_px, scale)
        ratio_t = rng.uniform(blo, bhi)
    elif violated in ("granules", "inclusions"):
        # leave extra cytoplasm room for the surplus dots
        ratio_t = rng.uniform(nlo + 0.05 * wn, nlo + 0.4 * wn)
    else:
        ratio_t = rng.uniform(nlo + 0.12 * wn, nhi - 0.12 * wn)

    target_px = max(int(round(ratio_t * cell_px)), SHAPE_MIN_PX[shape] * int(scale * scale))
    clip = _disk(yy, xx, cy, cx, radius - max(1.0 * scale, 0.08 * radius))
    build = _shape_builder(shape, yy, xx, cy, cx, rng)
    nucleus = _solve_area(build, target_px, 1.2 * scale, radius, clip)

    # Colors.
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = W.BACKGROUND_COLOR

    base = np.asarray(spec.cytoplasm_color, dtype=np.float64)
    if violated == "cytoplasm_color":
        shifts = _valid_color_shifts(spec)
        if not shifts:
            raise RuntimeError(f"{spec.class_code}: no safe color-violation direction")
        base = base + shifts[rng.integers(len(shifts))]
    else:
        base = base + rng.uniform(-0.45, 0.45, 3) * spec.cytoplasm_tol
    noise = rng.uniform(-CYTO_PIXEL_NOISE, CYTO_PIXEL_NOISE, (size, size, 3))
    img[cell] = np.clip(base + noise, 0.0, 1.0)[cell]

    # Nucleus with chromatin texture (multiplicative luminance jitter).
    dense = spec.chromatin_texture == "dense"
    if violated == "chromatin_pattern":
        dense = not dense
    amp = CHROMATIN_AMP_DENSE if dense else CHROMATIN_AMP_DIFFUSE
    amp *= 1.0 + rng.uniform(-0.08, 0.08)
    jitter = 1.0 + rng.uniform(-amp, amp, (size, size))
    nuc_color = np.asarray(W.NUCLEUS_COLOR, dtype=np.float64)
    img[nucleus] = np.clip(nuc_color[None, :] * jitter[nucleus, None], 0.0, 1.0)

    # Granules. Violations that inflate the nucleus leave no reliable
    # cytoplasm ring, so those images carry no granules; a count of zero
    # never flags because every granular class has a lower edge <= 2 and
    # counts only flag beyond the absolute margin.
    glo, ghi = spec.granule_count_range
    if violated == "granules":
        count = ghi + max(W.COUNT_GEN_MARGIN, int(np.ceil(W.GUARD_GEN * ghi)))
    elif violated in ("nc_ratio", "nucleus_shape"):
        count = 0
    else:
        count = int(rng.integers(glo, ghi + 1))
    dt_nucleus = ndimage.distance_transform_edt(~nucleus)
    granule_pts: list[tuple[float, float]] = []
    if count > 0:
        granule_pts = _place_dots(
            rng, count, cy, cx,
            max_r=radius - 1.5 * scale,
            keepout_dt=dt_nucleus,
            keepout_dist=1.5 * scale,
            spacing=3.9 * scale,
            size=size,
        )
        gcol = np.asarray(spec.granule_color, dtype=np.float64)
        for py, px in granule_pts:
            dot = _disk(yy, xx, py, px, 1.15 * scale)
            img[dot] = np.clip(gcol + rng.uniform(-0.015, 0.015, 3), 0.0, 1.0)

    # Inclusions (a violation by definition: no class allows them).
    if violated == "inclusions":
        gmask = np.zeros((size, size), dtype=bool)
        for py, px in granule_pts:
            gmask |= _disk(yy, xx, py, px, 1.15 * scale)
        dt_busy = ndimage.distance_transform_edt(~(nucleus | gmask))
        pts = _place_dots(
            rng, 2, cy, cx,
            max_r=radius - 1.6 * scale,
            keepout_dt=dt_busy,
            keepout_dist=1.45 * scale,
            spacing=4.0 * scale,
            size=size,
        )
        icol = np.asarray(W.INCLUSION_COLOR, dtype=np.float64)
        for py, px in pts:
            dot = _disk(yy, xx, py, px, 1.3 * scale)
            img[dot] = np.clip(icol + rng.uniform(-0.015, 0.015, 3), 0.0, 1.0)

    return img, shape


def generate_cell_image(
    spec: W.CellSpec,
    *,
    plausible: bool,
    seed: int,
    size: int = W.REFERENCE_SIZE,
    allowed_shapes: Optional[Sequence[str]] = None,
) -> tuple[np.ndarray, RenderInfo]:
    """Render one image for a class spec.

    Returns (pixels float32 (size, size, 3) in [0, 1], RenderInfo). The
    rendered image is guaranteed to round-trip through the oracle: plausible
    images measure clean, implausible ones measure exactly one violated
    criterion (the one reported in RenderInfo).
    """
    scale = size / W.REFERENCE_SIZE
    if allowed_shapes is None:
        allowed_shapes = (spec.nucleus_shape,)
    salt = zlib.crc32(spec.class_code.encode("utf-8"))
    rng = np.random.default_rng(np.random.SeedSequence([salt, int(plausible), int(seed) & 0xFFFFFFFF, size]))

    violated = None if plausible else CRITERIA_NAMES[int(rng.integers(len(CRITERIA_NAMES)))]
    expected = tuple(name == violated for name in CRITERIA_NAMES)

    last_flags: tuple[bool, ...] = ()
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            img, shape = _render_once(spec, rng, size, scale, violated, allowed_shapes)
        except _Retry:
            continue
        # Verify on the 8-bit grid the PNG writer uses, and return exactly
        # those values, so a save/load cycle cannot flip the verdict.
        img = (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)
        m = measure_image(img, spec, scale)
        flags = flags_from_measurements(m, spec, scale, allowed_shapes)
        if flags == expected:
            return img.astype(np.float32), RenderInfo(
                class_code=spec.class_code,
                plausible=plausible,
                violated_criterion=violated,
                nucleus_shape=shape,
                attempts=attempt,
            )
        last_flags = flags
    raise RuntimeError(
        f"could not render {spec.class_code} (plausible={plausible}, "
        f"violated={violated}, seed={seed}): last flags {last_flags}"
    )


def render_for_class(
    world: W.CellWorld, class_code: str, *, plausible: bool, seed: int
) -> tuple[np.ndarray, RenderInfo]:
    """World-level rendering: honors subtype parents' either-shape rule."""
    spec = world.spec_for(class_code)
    return generate_cell_image(
        spec,
        plausible=plausible,
        seed=seed,
        size=world.image_size,
        allowed_shapes=world.allowed_shapes(class_code),
    )
