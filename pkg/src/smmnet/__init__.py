"""Multi-task facial affect model with separate sign (AU) and message (EXPR/VA) spaces."""
from .backbone_roi import BackboneConfig, BackboneROI, extract_feature_map, extract_roi_features
from .data import (
    DatasetIndex, FrameRecord, ManifestError, SyntheticConfig, TaskWeights, compute_au_weights,
    compute_expr_weights, downsample_sequence, load_manifest, make_synthetic_dataset, save_dataset,
    write_manifest,
)
from .losses import LossBatch, au_loss, ccc, expr_loss, total_loss, va_loss
from .message_space import MessageSpace, consensus, decode, project_region, verify_linearity_equivalence
from .metrics import f1_au, f1_binary, macro_f1_expr, mtl_score
from .model import ModelConfig, SMMEmotionNet, load_checkpoint, save_checkpoint
from .sign_space import SignConfig, SignSpace, au_scores, positional_encoding, sign_transform
from .temporal import (
    SmoothingConfig, apply_smoothed_heads, grid_search_mu, smooth_sequence, synthetic_feature_videos,
)
from .trainer import TrainConfig, cosine_lr, evaluate, train

__version__ = "0.1.0"
