"""One synthesizer per noise placement: input (DP-MERF), model (DPDM-lite), output (PE), mixed (DP-FETA)."""
from .diffusion import (
    NoiseSchedule,
    denoiser_spec,
    denoising_loss,
    diffuse_forward,
    dpdmlite_train,
    generate_diffusion,
    generate_with,
    pretrain,
)
from .dpfeta import CentralImages, dpfeta_central, dpfeta_train
from .dpmerf import dpmerf_train, generate_merf, generator_spec
from .pe import PeState, jitter_variation, pe_synthesize, uniform_api
from .privimage import privimage_select, train_classifier
