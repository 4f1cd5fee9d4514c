"""Articulation transformer: tree position embedding, round decoding and training."""
from .config import PROFILES, ArtFormerConfig
from .decode import DecodeResult, EmptyObjectError, edit, iterative_decode, project_attributes, remove_parts
from .model import ArtFormer, RoundPrediction, TextEncoder, TreePositionEmbedding
from .rounds import TERMINAL, Round, RoundTargets, canonical_children, loss_total, teacher_forcing_rounds

__all__ = ["PROFILES", "ArtFormerConfig", "DecodeResult", "EmptyObjectError", "edit", "iterative_decode",
           "project_attributes", "remove_parts", "ArtFormer", "RoundPrediction", "TextEncoder",
           "TreePositionEmbedding", "TERMINAL", "Round", "RoundTargets", "canonical_children", "loss_total",
           "teacher_forcing_rounds"]
