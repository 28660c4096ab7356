"""Image/text encoders behind one small interface.

``ClipEncoder`` wraps a HuggingFace CLIP checkpoint (ViT-L/14 by default)
and needs the ``clip`` extra installed. ``ToyEncoder`` is a deterministic
hash-to-sphere stand-in used by the test suite and for format-level dry
runs; its image and text spaces carry no semantics.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

DEFAULT_CLIP = "openai/clip-vit-large-patch14"


class ToyEncoder:
    """Deterministic encoder: bytes/string -> seeded random unit vector."""

    def __init__(self, dim: int = 32):
        self.dim = dim

    def _vec(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        v = np.random.default_rng(seed).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def encode_images(self, paths) -> np.ndarray:
        return np.stack([self._vec(Path(p).read_bytes()) for p in paths])

    def encode_texts(self, texts) -> np.ndarray:
        return np.stack([self._vec(("text:" + t).encode("utf-8")) for t in texts])


class ClipEncoder:
    """CLIP checkpoint via transformers; preprocessing is the model's own."""

    def __init__(self, model_id: str = DEFAULT_CLIP, device: str | None = None, batch_size: int = 32):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "ClipEncoder needs the clip extra: pip install 'cirexport[clip]'"
            ) from exc
        self._torch = torch
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.batch_size = batch_size
        self.model = CLIPModel.from_pretrained(model_id).to(self.device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = self.model.config.projection_dim

    def _normalized(self, feats) -> np.ndarray:
        feats = feats / feats.norm(dim=-1, keepdim=True)
        return feats.detach().cpu().numpy().astype(np.float32)

    def encode_images(self, paths) -> np.ndarray:
        from PIL import Image

        torch = self._torch
        out = []
        for lo in range(0, len(paths), self.batch_size):
            batch = [Image.open(p).convert("RGB") for p in paths[lo : lo + self.batch_size]]
            inputs = self.processor(images=batch, return_tensors="pt").to(self.device)
            with torch.no_grad():
                feats = self.model.get_image_features(**inputs)
            out.append(self._normalized(feats))
        return np.concatenate(out, axis=0)

    def encode_texts(self, texts) -> np.ndarray:
        torch = self._torch
        out = []
        for lo in range(0, len(texts), self.batch_size):
            inputs = self.processor(
                text=list(texts[lo : lo + self.batch_size]), return_tensors="pt", padding=True, truncation=True
            ).to(self.device)
            with torch.no_grad():
                feats = self.model.get_text_features(**inputs)
            out.append(self._normalized(feats))
        return np.concatenate(out, axis=0)


def make_encoder(kind: str, model_id: str = DEFAULT_CLIP, dim: int = 32, batch_size: int = 32):
    if kind == "toy":
        return ToyEncoder(dim=dim)
    if kind == "clip":
        return ClipEncoder(model_id=model_id, batch_size=batch_size)
    raise ValueError(f"unknown encoder {kind!r}")
