"""Paired image dataset backed by a tomopet dataset manifest."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from tomopet.phantom import load_image, load_manifest

from .model import TrainerError


class PairDataset(Dataset):
    """(conditioning, ground truth) tensor pairs for one manifest split.

    The conditioning stack is (2, H, W): the low-dose reconstruction plus its
    anatomical side channel when the manifest provides one, otherwise the
    reconstruction duplicated. Both images are scaled by the ground truth's
    max so intensities land in a stable range.
    """

    def __init__(self, manifest_path, split: str = "train"):
        base = Path(manifest_path).parent
        manifest = load_manifest(manifest_path)
        entries = manifest.split_entries(split)
        if not entries:
            raise TrainerError(f"manifest has no {split!r} entries")
        self.items = []
        for e in entries:
            lpet = load_image(base / e.input_lpet_path)
            gt = load_image(base / e.ground_truth_path)
            if (lpet.width, lpet.height) != (gt.width, gt.height):
                raise TrainerError(f"{e.input_lpet_path}: input/truth size mismatch")
            aux = load_image(base / e.input_mri_path).values \
                if e.input_mri_path else lpet.values
            scale = gt.values.max()
            if scale <= 0:
                raise TrainerError(f"{e.ground_truth_path}: empty ground truth")
            cond = np.stack([lpet.values, aux]) / scale
            truth = gt.values[None] / scale
            self.items.append((torch.tensor(cond, dtype=torch.float32),
                               torch.tensor(truth, dtype=torch.float32)))
        h, w = self.items[0][0].shape[1:]
        self.image_size = (h, w)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int):
        return self.items[idx]
