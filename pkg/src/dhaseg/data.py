"""Synthetic compound-domain segmentation benchmark: scene generation, photometric
styles, and manifest I/O.

Images are H x W x 3 float arrays in [0, 1]; masks are H x W integer class maps.
Classes: 0 sky, 1 ground, 2 building, 3 vegetation, 4 vehicle.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

NUM_CLASSES = 5
CLASS_NAMES = ("sky", "ground", "building", "vegetation", "vehicle")
SKY, GROUND, BUILDING, VEGETATION, VEHICLE = range(5)

SPLITS = ("source", "compound", "open")


class ManifestError(ValueError):
    """Raised for malformed manifest files."""


@dataclass(frozen=True)
class StyleParams:
    """Photometric (geometry-preserving) transform parameters."""

    hue_shift: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0
    color_cast: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.0
    vignette: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.brightness <= 0:
            raise ValueError(f"brightness must be > 0, got {self.brightness}")
        if self.contrast <= 0:
            raise ValueError(f"contrast must be > 0, got {self.contrast}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.vignette < 1.0:
            raise ValueError(f"vignette must be in [0, 1), got {self.vignette}")


IDENTITY_STYLE = StyleParams()

# Default compound styles. The open style sits between "cloudy" and "night"
# brightness with a warm cast, i.e. inside the photometric hull of the
# compound styles.
DEFAULT_STYLES = {
    "night": StyleParams(brightness=0.45, contrast=0.85,
                         color_cast=(-0.04, -0.02, 0.10), noise_sigma=0.02,
                         vignette=0.7),
    "rain": StyleParams(brightness=0.75, contrast=0.55,
                        color_cast=(0.0, 0.02, 0.04), noise_sigma=0.035,
                        vignette=0.2),
    "cloudy": StyleParams(brightness=1.05, contrast=0.65,
                          color_cast=(0.13, 0.13, 0.13), noise_sigma=0.0),
}
OPEN_STYLE_NAME = "sunset"
DEFAULT_OPEN_STYLE = StyleParams(brightness=0.70, contrast=0.75,
                                 color_cast=(0.16, 0.04, -0.05), noise_sigma=0.02)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    mask_path: str
    split: str
    true_style_id: int | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    # Resolution root for relative paths; not serialized, excluded from equality.
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate image_id in manifest")

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, relpath: str) -> Path:
        return (self.root / relpath) if self.root is not None else Path(relpath)

    def strip_truth(self) -> "DatasetManifest":
        """Copy with ground-truth style ids removed (for training code paths)."""
        return DatasetManifest(
            [dataclasses.replace(e, true_style_id=None) for e in self.entries],
            root=self.root,
        )


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 5

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("canvas must be at least 16x16")
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"default layout requires C={NUM_CLASSES}")


@dataclass(frozen=True)
class BenchmarkConfig:
    out_dir: Path
    master_seed: int = 0
    n_source: int = 300
    n_per_style: int = 150
    n_open: int = 100
    scene: SceneConfig = SceneConfig()
    styles: dict[str, StyleParams] = field(
        default_factory=lambda: dict(DEFAULT_STYLES))
    open_style: StyleParams = DEFAULT_OPEN_STYLE

    def __post_init__(self):
        if len(self.styles) < 2:
            raise ValueError("compound benchmark requires at least 2 styles")


def _fill_ellipse(img, mask, cy, cx, ry, rx, color, cls):
    H, W = mask.shape
    yy, xx = np.ogrid[:H, :W]
    sel = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img[sel] = color
    mask[sel] = cls


def generate_scene(seed: int, scene_config: SceneConfig = SceneConfig()):
    """Procedural landscape scene. Deterministic in the seed.

    Returns (image HxWx3 in [0,1], mask HxW of class indices). The mask covers
    the canvas exactly; layers are drawn back to front.
    """
    if seed < 0:
        raise ValueError("seed must be >= 0")
    H, W = scene_config.height, scene_config.width
    rng = np.random.default_rng(seed)
    img = np.zeros((H, W, 3), dtype=np.float64)
    mask = np.full((H, W), SKY, dtype=np.int64)

    horizon = int(rng.integers(H * 3 // 8, H * 5 // 8))

    # Sky: vertical blue gradient.
    t = (np.arange(H) / max(H - 1, 1))[:, None, None]
    sky_top = np.array([0.35, 0.55, 0.95]) + rng.uniform(-0.05, 0.05, 3)
    sky_bot = np.array([0.65, 0.78, 0.95]) + rng.uniform(-0.05, 0.05, 3)
    img[:] = sky_top + (sky_bot - sky_top) * np.clip(t / max(horizon / H, 1e-6), 0, 1)

    # Ground below the horizon.
    ground_col = np.array([0.42, 0.34, 0.22]) + rng.uniform(-0.04, 0.04, 3)
    img[horizon:] = ground_col + 0.08 * (t[horizon:] - horizon / H)
    mask[horizon:] = GROUND

    # Buildings: 1-4 gray rectangles rising above the horizon.
    for _ in range(int(rng.integers(1, 5))):
        bw = int(rng.integers(W // 10, W // 3))
        bh = int(rng.integers(H // 8, horizon))
        x0 = int(rng.integers(0, max(W - bw, 1)))
        top = max(horizon - bh, 0)
        shade = rng.uniform(0.35, 0.60)
        col = np.array([shade, shade, shade * rng.uniform(0.95, 1.1)])
        img[top:horizon + 2, x0:x0 + bw] = col
        mask[top:horizon + 2, x0:x0 + bw] = BUILDING

    # Vegetation: 0-3 green blobs straddling the horizon.
    for _ in range(int(rng.integers(0, 4))):
        cy = horizon + int(rng.integers(-H // 16, H // 8))
        cx = int(rng.integers(0, W))
        ry = int(rng.integers(max(H // 16, 2), H // 6))
        rx = int(rng.integers(max(W // 16, 2), W // 5))
        col = np.array([0.10, 0.45, 0.15]) + rng.uniform(-0.05, 0.05, 3)
        _fill_ellipse(img, mask, cy, cx, ry, rx, col, VEGETATION)

    # Vehicles: 0-3 saturated ellipses on the ground.
    palette = np.array([[0.85, 0.15, 0.15], [0.15, 0.25, 0.85], [0.90, 0.80, 0.15]])
    for _ in range(int(rng.integers(0, 4))):
        cy = int(rng.integers(min(horizon + 2, H - 2), H))
        cx = int(rng.integers(0, W))
        ry = int(rng.integers(2, max(H // 12, 3)))
        rx = int(rng.integers(3, max(W // 8, 4)))
        col = palette[int(rng.integers(0, 3))] + rng.uniform(-0.05, 0.05, 3)
        _fill_ellipse(img, mask, cy, cx, ry, rx, col, VEHICLE)

    # Mild texture so the image is not piecewise constant.
    img += rng.normal(0.0, 0.015, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img, mask


def _hue_rotation_matrix(theta: float) -> np.ndarray:
    # Rotation about the gray axis (1,1,1)/sqrt(3) in RGB space.
    axis = np.ones(3) / np.sqrt(3.0)
    kx = np.array([[0, -axis[2], axis[1]],
                   [axis[2], 0, -axis[0]],
                   [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def apply_style(image: np.ndarray, params: StyleParams) -> np.ndarray:
    """Photometric style transform; geometry (and thus any mask) is untouched.

    Identity parameters return the input bit-exactly; noise is deterministic in
    params.seed.
    """
    validate_image(image)
    x = image.astype(np.float64, copy=True)
    if params.hue_shift != 0.0:
        x = x @ _hue_rotation_matrix(params.hue_shift).T
    if params.brightness != 1.0:
        x = x * params.brightness
    if params.contrast != 1.0:
        x = x + (params.contrast - 1.0) * (x - 0.5)
    cast = np.asarray(params.color_cast, dtype=np.float64)
    if np.any(cast != 0.0):
        x = x + cast
    if params.vignette > 0.0:
        x = x * (1.0 - params.vignette * _radial_falloff(x.shape[0], x.shape[1]))
    if params.noise_sigma > 0.0:
        rng = np.random.default_rng(params.seed)
        x = x + rng.normal(0.0, params.noise_sigma, size=x.shape)
    return np.clip(x, 0.0, 1.0)


def _radial_falloff(height: int, width: int) -> np.ndarray:
    """Squared distance from the image center, normalized to 1.0 at the corners,
    shaped (H, W, 1). A fixed spatial lighting field, unlike the per-pixel
    photometric terms above."""
    yy = (np.arange(height) - (height - 1) / 2.0) / ((height - 1) / 2.0)
    xx = (np.arange(width) - (width - 1) / 2.0) / ((width - 1) / 2.0)
    r2 = (yy[:, None] ** 2 + xx[None, :] ** 2) / 2.0
    return r2[:, :, None]


def validate_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    if image.shape[0] < 16 or image.shape[1] < 16:
        raise ValueError("image smaller than 16x16")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values outside [0,1]")


# ---------------------------------------------------------------------------
# PNG + manifest I/O

def save_image_png(image: np.ndarray, path: Path) -> None:
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image_png(path: Path) -> np.ndarray:
    arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_mask_png(mask: np.ndarray, path: Path) -> None:
    PILImage.fromarray(mask.astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask_png(path: Path) -> np.ndarray:
    return np.asarray(PILImage.open(path).convert("L"), dtype=np.int64)


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    lines = []
    for e in manifest.entries:
        style = "" if e.true_style_id is None else str(e.true_style_id)
        lines.append(f"{e.image_id}\t{e.image_path}\t{e.mask_path}\t{e.split}\t{style}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    entries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 5:
            raise ManifestError(
                f"{path}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
        image_id, image_path, mask_path, split, style = fields
        if not image_path or not mask_path:
            raise ManifestError(f"{path}:{lineno}: empty image_path or mask_path")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        style_id = None
        if style != "":
            try:
                style_id = int(style)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad true_style_id {style!r}")
        entries.append(ManifestEntry(image_id, image_path, mask_path, split, style_id))
    return DatasetManifest(entries, root=path.parent)


# ---------------------------------------------------------------------------
# Benchmark builder

_SOURCE_SEED_BLOCK = 0
_TARGET_SEED_BLOCK = 1_000_000  # source/target scene seeds never overlap


def build_benchmark(config: BenchmarkConfig) -> DatasetManifest:
    """Generate the full benchmark on disk and return its manifest.

    Source scenes carry no style; compound/open scenes use disjoint seeds and
    record their true style id (1-based, open style = K*+1).
    """
    out = Path(config.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    base = config.master_seed * 10_000_000
    entries = []

    def emit(image_id, image, mask, split, style_id):
        img_rel = f"images/{image_id}.png"
        msk_rel = f"masks/{image_id}.png"
        save_image_png(image, out / img_rel)
        save_mask_png(mask, out / msk_rel)
        entries.append(ManifestEntry(image_id, img_rel, msk_rel, split, style_id))

    for i in range(config.n_source):
        img, msk = generate_scene(base + _SOURCE_SEED_BLOCK + i, config.scene)
        emit(f"src_{i:04d}", img, msk, "source", None)

    style_names = list(config.styles)
    tgt_seed = base + _TARGET_SEED_BLOCK
    for j, name in enumerate(style_names, start=1):
        params = config.styles[name]
        for i in range(config.n_per_style):
            img, msk = generate_scene(tgt_seed, config.scene)
            styled = apply_style(img, dataclasses.replace(params, seed=tgt_seed + 7))
            emit(f"cmp{j}_{i:04d}", styled, msk, "compound", j)
            tgt_seed += 1

    open_id = len(style_names) + 1
    for i in range(config.n_open):
        img, msk = generate_scene(tgt_seed, config.scene)
        styled = apply_style(img, dataclasses.replace(config.open_style, seed=tgt_seed + 7))
        emit(f"open_{i:04d}", styled, msk, "open", open_id)
        tgt_seed += 1

    manifest = DatasetManifest(entries, root=out)
    write_manifest(manifest, out / "manifest.tsv")
    return manifest


def load_entry_arrays(manifest: DatasetManifest, entries: list[ManifestEntry],
                      with_masks: bool = True):
    """Load images (and optionally masks) for the given entries into arrays."""
    images = np.stack([load_image_png(manifest.resolve(e.image_path)) for e in entries])
    if not with_masks:
        return images
    masks = np.stack([load_mask_png(manifest.resolve(e.mask_path)) for e in entries])
    return images, masks


def style_names_by_id(config: BenchmarkConfig) -> dict[int, str]:
    names = {j: name for j, name in enumerate(config.styles, start=1)}
    names[len(config.styles) + 1] = OPEN_STYLE_NAME
    return names
