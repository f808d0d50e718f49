"""Training-free attention-guidance engine with depth-arbitrated losses.

Scenes declare boxes and relative depths; a differentiable surrogate renders
per-object attention maps; three analytic losses (alignment, depth-weighted
orthogonality, spatial compactness) drive a two-stage gradient-descent loop;
metrics score the result.  Everything is deterministic given a seed.
"""

from .attention import (
    AttentionError,
    AttentionField,
    CoordGrid,
    NONE_ID,
    aggregate_maps,
    coord_grid,
    normalize_map,
    pseudo_segment,
    threshold_mask,
)
from .dumpio import DumpError, read_dump, round_trip32, write_dump
from .gradcheck import GradCheckResult, check_gradients, random_field_latent, random_scene
from .losses import (
    ConfigError,
    GuidanceConfig,
    LossBreakdown,
    alignment_ratio,
    arbitration_weight,
    attention_energies,
    grad_staged_loss,
    interference,
    loss_align,
    loss_compact,
    loss_ortho,
    spatial_mean,
    spatial_variance,
    staged_loss,
    staged_total,
)
from .metrics import (
    FocrResult,
    LayoutMiou,
    MetricReport,
    build_metric_report,
    focr,
    layout_miou,
    mask_iou,
)
from .optimizer import (
    NumericalAbort,
    StepRecord,
    Trajectory,
    run_guidance,
    stage_of,
    step_size,
)
from .scene import (
    OcclusionPair,
    SceneError,
    SceneObject,
    SceneSpec,
    canonical_scene,
    derive_occlusion_pairs,
    parse_scene,
    rasterize_mask,
    scene_masks,
)
from .surrogate import (
    LatentState,
    SurrogateError,
    backprop_to_latent,
    init_latent,
    render_attention,
)

__version__ = "0.1.0"
