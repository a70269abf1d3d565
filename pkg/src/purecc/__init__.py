"""Pure concept customization for rectified-flow models on synthetic scenes.

A desk-scale lab: a small conditional velocity network with exact
hand-written gradients, rectified-flow training and Euler sampling with
classifier-free guidance, a two-stage dual-branch customization procedure
with implicit target-concept guidance and a closed-form adaptive guidance
scale, plus preservation/fidelity metrics and a CLI pipeline.
"""

from .condition import Condition
from .customization import (
    CustomSet,
    GuidancePair,
    PureCCConfig,
    adaptive_lambda,
    customize,
    finetune_plain,
    learned_representation,
    pure_learning_step,
    purecc_loss,
    purecc_target,
    target_guidance,
    train_extractor,
)
from .data import SceneSpec, Vocabulary, make_custom_set, make_pretrain_set, vocabulary
from .evaluation import (
    EvalReport,
    HistogramGrid,
    behavior_consistency,
    concept_fidelity,
    histogram_kl,
    preservation_drift,
)
from .flow import (
    FlowBatch,
    SamplerConfig,
    TrainConfig,
    cfg_velocity,
    cfg_velocity_implicit,
    cfm_loss,
    interpolate,
    sample,
    target_velocity,
    train_flow,
)
from .net import (
    Gradients,
    LowRankAdapter,
    NetworkConfig,
    VelocityNetwork,
    attach_adapter,
    build_network,
    clone_frozen,
    encode_condition,
    merge_adapter,
)

__version__ = "0.1.0"
