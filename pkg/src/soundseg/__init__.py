"""Flow- and text-prompted sounding-object segmentation, desk scale.

Mask algebra, flow alignment, a from-scratch reverse-mode engine, the
composite training objective, a two-pass visual-textual alignment module,
segmentation metrics, and a deterministic synthetic training harness behind
an sklearn-style estimator.
"""

from .autodiff import Tensor, backward, grad_check
from .errors import (FormatError, GroundTruthLeakError, ShapeError,
                     TrainingDivergedError)
from .flow import flow_to_gray, frame_diff_flow, temporal_align
from .losses import (LossWeights, avs_loss, bce_mask_loss, class_bce_loss,
                     dice_loss, post_mask_loss, total_loss)
from .masks import (apply_premask, binarize, mask_stats, postmask_label,
                    premask, test_premask)
from .metrics import (EvalReport, evaluate_manifest, evaluate_pairs, fscore,
                      miou, miou_semantic)
from .model import (ModelConfig, SoundingObjectSegmenter, map_object_queries,
                    toy_decoder, toy_encoder)
from .scenes import (CLASS_NAMES, GroundTruthStore, SceneConfig,
                     SceneSequence, gen_scene, gen_scene_set)
from .training import (ABLATION_VARIANTS, AblationReport, TrainConfig,
                       TrainReport, ablate, parse_config, train)
from .vta import (TextPrompt, TokenSeq, VtaConfig, VtaParams, cross_encode,
                  embed_text, embed_visual, fuse_features, project_normalize,
                  refine, tokenize, unify_attention_masks, vta_align)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad_check",
    "ShapeError", "FormatError", "TrainingDivergedError", "GroundTruthLeakError",
    "temporal_align", "flow_to_gray", "frame_diff_flow",
    "binarize", "premask", "test_premask", "postmask_label", "apply_premask",
    "mask_stats",
    "LossWeights", "bce_mask_loss", "dice_loss", "class_bce_loss", "avs_loss",
    "post_mask_loss", "total_loss",
    "miou", "miou_semantic", "fscore", "evaluate_pairs", "evaluate_manifest",
    "EvalReport",
    "ModelConfig", "SoundingObjectSegmenter", "map_object_queries",
    "toy_encoder", "toy_decoder",
    "SceneConfig", "SceneSequence", "GroundTruthStore", "CLASS_NAMES",
    "gen_scene", "gen_scene_set",
    "TrainConfig", "TrainReport", "AblationReport", "ABLATION_VARIANTS",
    "train", "ablate", "parse_config",
    "TextPrompt", "TokenSeq", "VtaConfig", "VtaParams", "tokenize",
    "embed_text", "embed_visual", "unify_attention_masks", "cross_encode",
    "refine", "project_normalize", "fuse_features", "vta_align",
    "__version__",
]
