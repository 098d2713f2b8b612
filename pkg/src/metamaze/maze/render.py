"""First-person raycast rendering, top-down observations, and visibility.

The renderer casts one ray per image column against the cell grid (90
degree horizontal FOV), shades wall faces from a procedural per-texture
palette with distance fade, and composites PNT light beams back-to-front
with alpha 0.5.  Visibility for the privileged agents is heading
independent (360 degrees) and shares the same grid geometry.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

from .core import (FREE, WALL, Heading, MazeTask, SimState, NUM_TEXTURES,
                   current_command)

FRAME_W = 128
FRAME_H = 128
HUD_ROWS = 8
BEAM_ALPHA = 0.5

# Observed cell classes (shared with the agents' memory).
CLASS_FREE = 0
CLASS_WALL = 1
CLASS_OUT_OF_RANGE = 2
CLASS_PNT_BASE = 10     # CLASS_PNT_BASE + color_id

CEILING_RGB = np.array([60, 60, 70], dtype=np.float64)
FLOOR_RGB = np.array([85, 70, 55], dtype=np.float64)
BACKGROUND_RGB = np.array([25, 25, 30], dtype=np.float64)

_TEXTURE_BASE = np.array([
    [170, 60, 60], [60, 140, 170], [180, 150, 60], [110, 170, 80],
    [150, 90, 170], [200, 120, 90], [90, 110, 190], [140, 140, 140],
], dtype=np.float64)


def texture_palette(texture_id: int) -> np.ndarray:
    """Base and side-shaded RGB for one wall texture id."""
    base = _TEXTURE_BASE[texture_id % NUM_TEXTURES]
    return np.stack([base, base * 0.8])


def pnt_color(color_id: int) -> np.ndarray:
    """Distinct saturated RGB per PNT color id (golden-angle hues)."""
    hue = (color_id * 0.381966) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.95, 1.0)
    return np.array([r * 255, g * 255, b * 255], dtype=np.float64)


def cell_class(task: MazeTask, cell: tuple[int, int]) -> int:
    if task.grid[cell] == WALL:
        return CLASS_WALL
    pnt = task.pnt_by_cell.get(cell)
    return CLASS_FREE if pnt is None else CLASS_PNT_BASE + pnt.color_id


def visible_from(task: MazeTask, cell: tuple[int, int]) -> frozenset:
    """All (cell, class) pairs in line of sight from `cell`'s center.

    A target cell center is visible when it lies within view_range
    (meters, Euclidean) and the connecting segment, sampled at
    quarter-cell steps, passes through no intervening WALL cell.
    Cached per task since the world is static.
    """
    cached = task._vis_cache.get(cell)
    if cached is not None:
        return cached
    size = task.config.size
    range_cells = task.config.view_range / task.config.cell_size
    r0, c0 = cell
    ay, ax = r0 + 0.5, c0 + 0.5
    out = [(cell, cell_class(task, cell))]
    rr = int(np.ceil(range_cells))
    for r in range(max(0, r0 - rr), min(size, r0 + rr + 1)):
        for c in range(max(0, c0 - rr), min(size, c0 + rr + 1)):
            if (r, c) == cell:
                continue
            ty, tx = r + 0.5, c + 0.5
            dist = np.hypot(ty - ay, tx - ax)
            if dist > range_cells:
                continue
            nsteps = max(2, int(np.ceil(dist / 0.25)))
            blocked = False
            for i in range(1, nsteps):
                t = i / nsteps
                sr = int(ay + (ty - ay) * t)
                sc = int(ax + (tx - ax) * t)
                if (sr, sc) != (r, c) and (sr, sc) != cell \
                        and task.grid[sr, sc] == WALL:
                    blocked = True
                    break
            if not blocked:
                out.append(((r, c), cell_class(task, (r, c))))
    result = frozenset(out)
    task._vis_cache[cell] = result
    return result


def visible_cells(task: MazeTask, state: SimState) -> frozenset:
    return visible_from(task, state.agent_cell)


def render_topdown(task: MazeTask, state: SimState, k: int) -> np.ndarray:
    """(2k+1)^2 egocentric crop of cell classes, agent facing up."""
    if k < 1:
        raise ValueError("k must be >= 1")
    size = task.config.size
    r0, c0 = state.agent_cell
    crop = np.full((2 * k + 1, 2 * k + 1), CLASS_OUT_OF_RANGE, dtype=np.int16)
    for dr in range(-k, k + 1):
        for dc in range(-k, k + 1):
            r, c = r0 + dr, c0 + dc
            if 0 <= r < size and 0 <= c < size:
                crop[dr + k, dc + k] = cell_class(task, (r, c))
    return np.rot90(crop, k=int(state.heading))


# Heading direction and right vectors in (x, y) world coordinates where
# x = column, y = row (y grows southward).
_DIR_XY = {Heading.N: (0.0, -1.0), Heading.E: (1.0, 0.0),
           Heading.S: (0.0, 1.0), Heading.W: (-1.0, 0.0)}


def _raycast(task: MazeTask, pos_x: float, pos_y: float,
             dir_xy: tuple[float, float]):
    """Cast FRAME_W rays; returns (perp distance in cells, texture id,
    side, hit rows, hit cols)."""
    grid = task.grid
    dx, dy = dir_xy
    rx, ry = -dy, dx      # right vector
    cam = 2.0 * (np.arange(FRAME_W) + 0.5) / FRAME_W - 1.0
    ray_x = dx + rx * cam
    ray_y = dy + ry * cam

    map_x = np.full(FRAME_W, int(pos_x), dtype=np.int64)
    map_y = np.full(FRAME_W, int(pos_y), dtype=np.int64)
    with np.errstate(divide="ignore"):
        delta_x = np.abs(1.0 / ray_x)
        delta_y = np.abs(1.0 / ray_y)
    step_x = np.where(ray_x < 0, -1, 1)
    step_y = np.where(ray_y < 0, -1, 1)
    side_x = np.where(ray_x < 0, (pos_x - map_x) * delta_x,
                      (map_x + 1.0 - pos_x) * delta_x)
    side_y = np.where(ray_y < 0, (pos_y - map_y) * delta_y,
                      (map_y + 1.0 - pos_y) * delta_y)

    perp = np.zeros(FRAME_W)
    side = np.zeros(FRAME_W, dtype=np.int8)
    tex = np.zeros(FRAME_W, dtype=np.int64)
    alive = np.ones(FRAME_W, dtype=bool)
    for _ in range(4 * task.config.size):
        if not alive.any():
            break
        go_x = alive & (side_x < side_y)
        go_y = alive & ~go_x
        map_x[go_x] += step_x[go_x]
        map_y[go_y] += step_y[go_y]
        hit = alive & (grid[map_y, map_x] == WALL)
        hx = hit & go_x
        hy = hit & go_y
        perp[hx] = side_x[hx]
        perp[hy] = side_y[hy]
        side[hy] = 1
        tex[hit] = task.wall_textures[map_y[hit], map_x[hit]]
        side_x[go_x] += delta_x[go_x]
        side_y[go_y] += delta_y[go_y]
        alive &= ~hit
    return perp, tex, side, map_y, map_x


def render_fp(task: MazeTask, state: SimState) -> np.ndarray:
    """Render the first-person 128x128 RGB frame for (task, state)."""
    cfg = task.config
    r0, c0 = state.agent_cell
    pos_x, pos_y = c0 + 0.5, r0 + 0.5
    dx, dy = _DIR_XY[state.heading]
    rx, ry = -dy, dx
    focal = FRAME_W / 2.0   # 90 degree horizontal FOV

    perp_cells, tex, side, _, _ = _raycast(task, pos_x, pos_y, (dx, dy))
    depth = np.maximum(perp_cells * cfg.cell_size, 1e-6)

    shade = np.clip(1.0 - depth / cfg.view_range, 0.0, 1.0)
    base = _TEXTURE_BASE[tex % NUM_TEXTURES] * np.where(side == 1, 0.8, 1.0)[:, None]
    col_rgb = BACKGROUND_RGB + (base - BACKGROUND_RGB) * shade[:, None]

    half = FRAME_H / 2.0
    top = half - (cfg.ceiling_height - cfg.view_height) * focal / depth
    bot = half + cfg.view_height * focal / depth

    rows = np.arange(FRAME_H)[:, None]
    img = np.where(rows < half, CEILING_RGB[None, None, :],
                   FLOOR_RGB[None, None, :]) * np.ones((FRAME_H, FRAME_W, 1))
    wall_mask = (rows >= np.floor(top)[None, :]) & (rows < np.ceil(bot)[None, :])
    img = np.where(wall_mask[:, :, None], col_rgb[None, :, :], img)

    # PNT beams, farthest first.
    beams = []
    for pnt in task.pnts:
        br, bc = pnt.cell
        rel_x = (bc + 0.5 - pos_x) * cfg.cell_size
        rel_y = (br + 0.5 - pos_y) * cfg.cell_size
        forward = rel_x * dx + rel_y * dy
        right = rel_x * rx + rel_y * ry
        if forward < 0.1 or forward > cfg.view_range:
            continue
        beams.append((forward, right, pnt.color_id))
    beams.sort(reverse=True)
    for forward, right, color_id in beams:
        col_center = (right / forward + 1.0) * FRAME_W / 2.0
        half_w = (cfg.cell_size / 6.0) / forward * focal
        lo = max(0, int(np.floor(col_center - half_w)))
        hi = min(FRAME_W, int(np.ceil(col_center + half_w)))
        if lo >= hi:
            continue
        cols = np.arange(lo, hi)
        cols = cols[depth[cols] > forward]
        if cols.size == 0:
            continue
        t_row = max(0, int(half - (cfg.ceiling_height - cfg.view_height)
                           * focal / forward))
        b_row = min(FRAME_H, int(half + cfg.view_height * focal / forward))
        rgb = pnt_color(color_id)
        img[t_row:b_row, cols] = ((1 - BEAM_ALPHA) * img[t_row:b_row, cols]
                                  + BEAM_ALPHA * rgb)

    img[:HUD_ROWS, :] = pnt_color(current_command(task, state))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def frame_to_png(frame: np.ndarray, path) -> None:
    from PIL import Image
    Image.fromarray(frame, mode="RGB").save(path)


def topdown_to_png(task: MazeTask, state: SimState, path, k=None,
                   scale: int = 8) -> None:
    """Debug dump of the full map (k=None) or an egocentric crop."""
    from PIL import Image
    if k is None:
        size = task.config.size
        classes = np.array([[cell_class(task, (r, c)) for c in range(size)]
                            for r in range(size)], dtype=np.int16)
        classes[task.agent_start] = classes[task.agent_start]
    else:
        classes = render_topdown(task, state, k)
    rgb = np.zeros(classes.shape + (3,), dtype=np.uint8)
    rgb[classes == CLASS_FREE] = (220, 220, 220)
    rgb[classes == CLASS_WALL] = (40, 40, 40)
    rgb[classes == CLASS_OUT_OF_RANGE] = (0, 0, 0)
    for color_id in range(len(np.unique(classes))):
        mask = classes == CLASS_PNT_BASE + color_id
        if mask.any():
            rgb[mask] = pnt_color(color_id).astype(np.uint8)
    img = Image.fromarray(rgb, mode="RGB")
    img = img.resize((rgb.shape[1] * scale, rgb.shape[0] * scale),
                     Image.NEAREST)
    img.save(path)
