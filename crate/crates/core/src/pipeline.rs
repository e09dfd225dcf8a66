//! End-to-end driver: pretrain, initialise centroids, fine-tune, infer.

use crate::error::Result;
use crate::fiberdata::Bundle;
use crate::finetune::{finetune, init_centroids, ClusterModel, FinetuneConfig, FinetuneRecord, InitMode};
use crate::infer::{infer, Inference, InferenceConfig};
use crate::nn::{embed, EncoderWeights, View};
use crate::pretrain::{pretrain_view, EpochLoss, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Both views with collaborative fine-tuning.
    Full,
    /// Geometric view alone, no clustering loss.
    GeometryOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub init: InitMode,
    pub kmeans_seed: u64,
    pub inference: InferenceConfig,
}

impl PipelineConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            init: InitMode::Cross,
            kmeans_seed: 0,
            inference: InferenceConfig::default(),
        }
    }
}

/// Pretrained encoders of one or both views.
#[derive(Clone, Debug)]
pub struct PretrainedViews {
    pub geo: EncoderWeights,
    pub func: Option<EncoderWeights>,
    pub history_geo: Vec<EpochLoss>,
    pub history_func: Vec<EpochLoss>,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub geo: EncoderWeights,
    pub func: Option<EncoderWeights>,
    pub initial_model: ClusterModel,
    pub model: ClusterModel,
    pub finetune_history: Vec<FinetuneRecord>,
    pub inference: Inference,
}

pub fn pretrain_views(bundle: &Bundle, cfg: &PretrainConfig, mode: Mode) -> Result<PretrainedViews> {
    let geo = pretrain_view(bundle, View::Geometric, cfg)?;
    let func = match mode {
        Mode::Full => Some(pretrain_view(bundle, View::Functional, cfg)?),
        Mode::GeometryOnly => None,
    };
    Ok(PretrainedViews {
        geo: geo.weights,
        history_geo: geo.history,
        history_func: func.as_ref().map(|f| f.history.clone()).unwrap_or_default(),
        func: func.map(|f| f.weights),
    })
}

/// Centroid initialisation, fine-tuning and inference from pretrained
/// encoders. In geometry-only mode the clustering weight is forced to 0.
pub fn cluster_views(bundle: &Bundle, pre: &PretrainedViews, cfg: &PipelineConfig, mode: Mode) -> Result<PipelineRun> {
    let z_geo = embed(&pre.geo, bundle)?;
    let (func, ft_cfg) = match (mode, &pre.func) {
        (Mode::Full, Some(f)) => (Some(f.clone()), cfg.finetune.clone()),
        _ => (None, FinetuneConfig { gamma: 0.0, ..cfg.finetune.clone() }),
    };
    let z_func = match &func {
        Some(f) => embed(f, bundle)?,
        None => z_geo.clone(),
    };
    let initial_model = init_centroids(&z_geo, &z_func, cfg.k, cfg.kmeans_seed, cfg.init)?;
    let tuned = finetune(bundle, pre.geo.clone(), func, initial_model.clone(), &ft_cfg)?;
    let inference = infer(bundle, &tuned.geo, &tuned.model, &cfg.inference)?;
    let mut model = tuned.model;
    model.fa_reference = inference.fa_reference.clone();
    Ok(PipelineRun {
        geo: tuned.geo,
        func: tuned.func,
        initial_model,
        model,
        finetune_history: tuned.history,
        inference,
    })
}

pub fn run_pipeline(bundle: &Bundle, cfg: &PipelineConfig, mode: Mode) -> Result<PipelineRun> {
    let pre = pretrain_views(bundle, &cfg.pretrain, mode)?;
    cluster_views(bundle, &pre, cfg, mode)
}
