"""Activation extractor: hooks pretrained CNNs and writes the interchange format."""

from .extract import ExtractionJob, extract, list_image_folder, load_images
from .models import REGISTRY, SmallResNet, SmallVgg, build_model

__version__ = "0.1.0"
