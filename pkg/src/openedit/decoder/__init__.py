from .spade import SpadeNorm
from .generator import Generator, SpadeResBlock, decode, edge_tensor
from .discriminator import MultiScalePatchDiscriminator, PatchDiscriminator
from .losses import LossWeights, discriminator_loss, generator_loss, perceptual_distance
