"""
Two feature spaces on top of ROI features
=========================================

Region features feed a transformer (one output per AU) and a set of
per-region linear projections averaged into one shared vector.
"""
import numpy as np
import torch

from smmnet.backbone_roi import extract_feature_map, extract_roi_features
from smmnet.message_space import verify_linearity_equivalence
from smmnet.model import ModelConfig, SMMEmotionNet

# Full-size profile: 299 px input, 17x17x768 map, 17 regions of width 16.
model = SMMEmotionNet(ModelConfig.paper(), seed=0)
image = np.random.default_rng(0).random((299, 299, 3))
with torch.no_grad():
    fmap = extract_feature_map(image, model.backbone_roi)
    rois = extract_roi_features(fmap, model.backbone_roi)
    pred = model.predict_images(image[None])
print("feature map", tuple(fmap.shape), "ROI features", tuple(rois.shape))
print("sign vectors", tuple(pred.signs.shape), "messages", tuple(pred.messages.shape))
print("AU probabilities", pred.au_probs.numpy().round(2))
print("expression logits", tuple(pred.expr_logits.shape), "valence/arousal", pred.va.numpy().round(3))

# Each region has its own attention map over the 17x17 grid.
att = model.backbone_roi.roi.attention(fmap.permute(2, 0, 1)[None])
print("attention rows sum to", att.sum(-1).detach().numpy().round(6).min())

# Averaging messages before the affine heads is the same as decoding each
# region and averaging the outputs (checked on the pre-tanh values).
toy = SMMEmotionNet(ModelConfig(), seed=0).double()
rois = torch.randn(8, 17, 16, dtype=torch.float64)
print("average-then-decode == decode-then-average:", verify_linearity_equivalence(rois, toy.message_space))
