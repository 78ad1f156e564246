from .layers import Backbone, BatchNorm, Conv2d, Dense, ResidualBlock, DOWNSAMPLE
from .attention import AlphaGrid, MaskNet, SegmentedPair, mask_forward, segment, upsample_mask
from .encoders import (
    Autoencoder,
    FmriEncoder,
    ImageEncoder,
    encode_fmri,
    encode_image,
    init_from_autoencoder,
    l1_penalty,
    pretrain_autoencoder,
)
from .relational import (
    ReconstructionNet,
    RelationalBatchInputs,
    RelationalNet,
    relate,
    relational_loss,
    total_loss,
    triplet_loss,
)
from .avan import AvanModel, build_model, training_graph
