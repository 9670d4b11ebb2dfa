"""Prior encoder, lane decoder and the exportable prior grid."""

from .decoder import DecodedLanes, DeformableAttention, GCNStep, LaneDecoder, LaneHeads, bilinear_sample
from .encoder import (
    BEVFusion,
    PriorEncoder,
    SatelliteBackbone,
    SDEncoder,
    embed_polylines,
    encoder_inputs,
    normalize_xy,
    sd_to_arrays,
)
from .export import read_decoded, read_prior, write_decoded, write_prior
from .layers import MultiHeadAttention, sinusoidal_embed
from .model import MapPriorModel, PriorGrid, assemble_graph, assemble_graphs

__all__ = [
    "BEVFusion",
    "DecodedLanes",
    "DeformableAttention",
    "GCNStep",
    "LaneDecoder",
    "LaneHeads",
    "MapPriorModel",
    "MultiHeadAttention",
    "PriorEncoder",
    "PriorGrid",
    "SDEncoder",
    "SatelliteBackbone",
    "assemble_graph",
    "assemble_graphs",
    "bilinear_sample",
    "embed_polylines",
    "encoder_inputs",
    "normalize_xy",
    "read_decoded",
    "read_prior",
    "sd_to_arrays",
    "sinusoidal_embed",
    "write_decoded",
    "write_prior",
]
