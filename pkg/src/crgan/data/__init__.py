from crgan.data.dataset import (Batch, DatasetConfig, Manifest, WordSample, bucket_batches, generate_dataset,
                                load_manifest, load_samples, make_sample)
from crgan.data.fonts import FontSpec, default_catalog, make_procedural_font, render_word
from crgan.data.images import (PATCH, PatchSequence, WordImage, align_ground_truth, assemble_patches,
                               extract_patches, load_png, resize_to_height, save_png)

__all__ = [
    "Batch", "DatasetConfig", "FontSpec", "Manifest", "PATCH", "PatchSequence", "WordImage", "WordSample",
    "align_ground_truth", "assemble_patches", "bucket_batches", "default_catalog", "extract_patches",
    "generate_dataset", "load_manifest", "load_png", "load_samples", "make_procedural_font", "make_sample",
    "render_word", "resize_to_height", "save_png",
]
