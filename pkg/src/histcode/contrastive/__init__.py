from .augment import AugmentParams, augment_pair
from .bank import MemoryBank, init_bank
from .encoder import TileEncoder, build_encoder, encode, encoder_checksum, project
from .loss import contrastive_loss, contrastive_loss_and_grads, l2_normalize, update_negatives
from .optim import SGDMomentum, update_encoder
from .train import PretrainConfig, PretrainResult, load_checkpoint, pretrain
