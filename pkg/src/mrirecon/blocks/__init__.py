from .attention import attention_selection, cbam_forward, init_cbam, sci_forward
from .discriminator import DiscriminatorSpec, discriminator_forward, init_discriminator
from .generator import GeneratorSpec, generator_forward, init_generator
from .lcfi import LCFIppSpec, init_lcfipp, lcfipp_forward
from .params import ParamStore, conv, instance_norm
from .rrdb import init_rrdb, rrdb_forward
from .unet import UNetSpec, init_unet, unet_forward

__all__ = [
    "DiscriminatorSpec", "GeneratorSpec", "LCFIppSpec", "ParamStore", "UNetSpec",
    "attention_selection", "cbam_forward", "conv", "discriminator_forward", "generator_forward",
    "init_cbam", "init_discriminator", "init_generator", "init_lcfipp", "init_rrdb", "init_unet",
    "instance_norm", "lcfipp_forward", "rrdb_forward", "sci_forward", "unet_forward",
]
