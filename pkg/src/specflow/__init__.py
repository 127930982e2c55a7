"""Sequence generative modeling via spectral tensor-network embeddings and flow matching."""

from .spectral import (
    SpectralParams,
    contract_bruteforce,
    contract_sequence,
    init_spectral_params,
    materialize_mean_embedding,
    matrix_states,
    ring_from_uniforms,
    stability_loss,
    tensor_inner_product,
)
from .features import FeatureNet, FeatureNetConfig, Switch, SwitchBank, sinusoidal_embedding
from .flow import (
    FlowModel,
    FlowModelConfig,
    OTPathConfig,
    SamplerConfig,
    TrainConfig,
    Trainer,
    build_flow_model,
    cfm_loss,
    midpoint_integrate,
    ot_sample,
    ot_target_field,
    sample,
    train,
    vector_field,
    witness,
)
from .mmdflow import KernelSpec, ParticleCloud, mmd2, mmd_flow_step, rbf, run_mmd_flow
from .data import (
    NormalizationRecord,
    SequenceBatch,
    drop_irregular,
    gen_checkerboard,
    gen_pendulum,
    gen_sines,
    interpolate_missing,
    intervals_as_channel,
    inverse_time_delay,
    load_delimited,
    normalize,
    denormalize,
    time_delay,
)
from .metrics import (
    MetricProtocol,
    MetricReport,
    correlational_score,
    discriminative_score,
    marginal_score,
    mmd_report,
    predictive_score,
)

__all__ = [name for name in dir() if not name.startswith("_")]
