"""Synthetic ground-truth scenes for desk-scale training and evaluation.

Every scene is a deterministic 256×256 reflectivity map (no randomness), so
a corpus is fully described by its scene ids plus the seeds used to draw
speckle realizations from it.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field

from src.models import ComplexImage, ReflectivityImage, RngStream, TransferFunctionSpec
from src.raster_io import save_reflectivity
from src.speckle_sim import simulate_slc

SCENE_SIZE = 256


class SceneCategory(str, Enum):
    """Scene categories for dataset organization."""

    CONSTANT = "constant"
    GRADIENT = "gradient"
    TEXTURE = "texture"
    TARGETS = "targets"


class SceneSplit(str, Enum):
    TRAIN = "train"
    TEST = "test"


class SceneSpec(BaseModel):
    """A single synthetic scene: amplitude layout plus metadata."""

    id: str = Field(description="Unique identifier (e.g., 'const_050')")
    category: SceneCategory
    split: SceneSplit
    low: float = Field(gt=0, description="Smallest amplitude in the scene")
    high: float = Field(gt=0, description="Largest amplitude in the scene")
    period: int = Field(default=32, gt=1, description="Texture or target spacing in pixels")
    notes: str = Field(default="")


class SceneDataset(BaseModel):
    """Scene catalog with split and category helpers."""

    version: str = Field(default="1.0.0")
    scenes: list[SceneSpec] = Field(default_factory=list)

    def by_category(self, category: SceneCategory) -> list[SceneSpec]:
        return [s for s in self.scenes if s.category == category]

    def by_split(self, split: SceneSplit) -> list[SceneSpec]:
        return [s for s in self.scenes if s.split == split]

    def get(self, scene_id: str) -> SceneSpec:
        for scene in self.scenes:
            if scene.id == scene_id:
                return scene
        raise KeyError(scene_id)


def get_scene_dataset() -> SceneDataset:
    """Training scenes cover constants, both gradient directions and a texture; test scenes are held out."""
    scenes = [
        SceneSpec(id="const_050", category=SceneCategory.CONSTANT, split=SceneSplit.TRAIN, low=50, high=50),
        SceneSpec(id="const_150", category=SceneCategory.CONSTANT, split=SceneSplit.TRAIN, low=150, high=150),
        SceneSpec(id="grad_h", category=SceneCategory.GRADIENT, split=SceneSplit.TRAIN, low=20, high=200),
        SceneSpec(id="grad_v", category=SceneCategory.GRADIENT, split=SceneSplit.TRAIN, low=20, high=200),
        SceneSpec(id="texture_32", category=SceneCategory.TEXTURE, split=SceneSplit.TRAIN, low=40, high=180),
        SceneSpec(
            id="texture_24",
            category=SceneCategory.TEXTURE,
            split=SceneSplit.TEST,
            low=50,
            high=170,
            period=24,
            notes="Different period than the training texture",
        ),
        SceneSpec(
            id="targets",
            category=SceneCategory.TARGETS,
            split=SceneSplit.TEST,
            low=40,
            high=230,
            period=64,
            notes="Bright 8-px squares on a dark background",
        ),
        SceneSpec(id="const_100", category=SceneCategory.CONSTANT, split=SceneSplit.TEST, low=100, high=100),
    ]
    return SceneDataset(scenes=scenes)


def _amplitude(scene: SceneSpec, size: int) -> NDArray[np.float64]:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    ramp = np.linspace(0.0, 1.0, size)
    if scene.category == SceneCategory.CONSTANT:
        unit = np.zeros((size, size))
    elif scene.category == SceneCategory.GRADIENT:
        unit = np.broadcast_to(ramp[None, :] if scene.id.endswith("_h") else ramp[:, None], (size, size))
    elif scene.category == SceneCategory.TEXTURE:
        wave = np.sin(2 * np.pi * rows / scene.period) * np.sin(2 * np.pi * cols / (1.5 * scene.period))
        unit = 0.5 + 0.5 * wave
    else:
        half = scene.period // 2
        bright = ((rows % scene.period) >= half - 4) & ((rows % scene.period) < half + 4)
        bright &= ((cols % scene.period) >= half - 4) & ((cols % scene.period) < half + 4)
        unit = bright.astype(np.float64)
    return scene.low + (scene.high - scene.low) * unit


def render_scene(scene: SceneSpec | str, size: int = SCENE_SIZE) -> ReflectivityImage:
    """Reflectivity r = amplitude² of a catalog scene."""
    spec = get_scene_dataset().get(scene) if isinstance(scene, str) else scene
    return ReflectivityImage(values=_amplitude(spec, size) ** 2, convolved_flag=False)


def scenes_for(split: SceneSplit, size: int = SCENE_SIZE) -> dict[str, ReflectivityImage]:
    return {scene.id: render_scene(scene, size) for scene in get_scene_dataset().by_split(split)}


def realizations(
    scenes: dict[str, ReflectivityImage],
    count: int,
    seed: int,
    spec: TransferFunctionSpec | None = None,
) -> list[ComplexImage]:
    """`count` independent SLC realizations per scene, stream ids disjoint across scenes."""
    spec = spec or TransferFunctionSpec.identity()
    return [
        simulate_slc(scene, spec, RngStream(seed=seed, stream_id=index * 1000 + k))
        for index, scene in enumerate(scenes.values())
        for k in range(count)
    ]


def independent_pairs(
    scenes: dict[str, ReflectivityImage],
    count: int,
    seed: int,
    spec: TransferFunctionSpec | None = None,
) -> list[tuple[ComplexImage, ComplexImage]]:
    """Pairs of realizations with independent speckle, for the supervised baseline."""
    images = realizations(scenes, 2 * count, seed, spec)
    return list(zip(images[0::2], images[1::2]))


def export_scenes(output_dir: str | Path = "research/scenes") -> Path:
    """Write every scene as an .rfl container plus a catalog JSON.

    Raises:
        ValueError: If the directory is outside the project or temp directories.
        OSError: If the directory or files cannot be written.
    """
    dataset = get_scene_dataset()
    target = Path(output_dir).resolve()

    allowed_dirs = [
        Path.cwd().resolve(),
        Path("/tmp").resolve(),
        Path("/private/var/folders").resolve(),  # macOS tmp
    ]
    if not any(target.is_relative_to(d) for d in allowed_dirs):
        raise ValueError(f"Output path must be within project directory. Got: {target}")

    target.mkdir(parents=True, exist_ok=True)
    for scene in dataset.scenes:
        save_reflectivity(render_scene(scene), target / f"{scene.id}.rfl")
    (target / "catalog.json").write_text(dataset.model_dump_json(indent=2))

    print(f"Scenes exported to: {target}")
    print(f"   Total scenes: {len(dataset.scenes)}")
    return target


if __name__ == "__main__":
    import sys

    try:
        export_scenes(sys.argv[1] if len(sys.argv) > 1 else "research/scenes")
    except ValueError as e:
        print(f"Error: Invalid path - {e}", file=sys.stderr)
        sys.exit(1)
    except OSError as e:
        print(f"Error: File system error - {e}", file=sys.stderr)
        sys.exit(1)
