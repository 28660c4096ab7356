"""Offline exporter producing embedding bundles for the retrieval engine."""

from .datasets import ADAPTERS, ImageRecord
from .encoders import ClipEncoder, ToyEncoder, make_encoder
from .export import ExportJob, export_images, export_vocab_and_composed
from .fdem import write_fdem

__all__ = [
    "ADAPTERS",
    "ClipEncoder",
    "ExportJob",
    "ImageRecord",
    "ToyEncoder",
    "export_images",
    "export_vocab_and_composed",
    "make_encoder",
    "write_fdem",
]
