"""SDF shape prior: tri-plane VAE, codebooks and conditioned latent diffusion."""
from .config import PROFILES, PriorConfig
from .diffusion import Schedule, diffusion_loss, diffusion_sample
from .model import PartGenerator, PartGeometry, ShapePrior, part_field
from .quantize import Codebooks, distance_logits, quantize

__all__ = ["PROFILES", "PriorConfig", "Schedule", "diffusion_loss", "diffusion_sample", "PartGenerator",
           "PartGeometry", "ShapePrior", "part_field", "Codebooks", "distance_logits", "quantize"]
