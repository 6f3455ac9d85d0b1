//! The detection network: residual encoder with ASPP, feature pyramid,
//! attention refinement with learnable 2D positions, and the anchor-free head.

mod attention;
mod config;
mod encoder;
mod fpn;
mod head;
mod layers;
mod params;

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{NormMode, RunningStats};
use crate::tensor::Tensor;

pub use config::{ModelConfig, STAGE_STRIDES};
pub use head::{cell_center, decode_box, HeadOutputs, LevelOutputs, LevelVars};
pub use params::ParamStore;

use attention::Refiner;
use encoder::{check_input, Aspp, Encoder};
use fpn::Fpn;
use head::Head;
use layers::{Builder, Ctx};

#[derive(Clone, Debug)]
struct Network {
    encoder: Encoder,
    aspp: Aspp,
    fpn: Fpn,
    refiner: Refiner,
    head: Head,
}

/// Network layout together with its parameters and batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    net: Network,
    params: ParamStore,
    stats: Vec<RunningStats>,
    stat_names: Vec<String>,
}

/// Intermediate activations of one forward pass.
pub struct Trace<'t> {
    /// C2..C5, with C5 replaced by the ASPP output.
    pub stages: Vec<Var<'t>>,
    /// Raw C5 before ASPP.
    pub c5: Var<'t>,
    /// FPN levels, finest first.
    pub pyramid: Vec<Var<'t>>,
    /// Attention-refined levels.
    pub refined: Vec<Var<'t>>,
    pub levels: Vec<LevelVars<'t>>,
    /// Batch-norm statistics after this pass (updated in train mode).
    pub stats: Vec<RunningStats>,
}

impl Model {
    /// Builds a freshly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut rng);
        let net = Network {
            encoder: Encoder::build(&mut b, &config),
            aspp: Aspp::build(&mut b, &config),
            fpn: Fpn::build(&mut b, &config),
            refiner: Refiner::build(&mut b, &config),
            head: Head::build(&mut b, &config),
        };
        let stats = b.stats.iter().map(|(_, c)| RunningStats::new(*c)).collect();
        let stat_names = b.stats.iter().map(|(n, _)| n.clone()).collect();
        Ok(Model {
            config,
            net,
            params: b.params,
            stats,
            stat_names,
        })
    }

    /// Rebuilds a model from stored parameters and statistics, checking that
    /// names and shapes match the layout implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        params: Vec<(String, Tensor)>,
        stats: Vec<(String, RunningStats)>,
    ) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (name, tensor) in params {
            model.params.set(&name, tensor)?;
        }
        if stats.len() != model.stats.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} batch-norm layers, found {}",
                model.stats.len(),
                stats.len()
            )));
        }
        for (i, (name, s)) in stats.into_iter().enumerate() {
            if name != model.stat_names[i] || s.mean.len() != model.stats[i].mean.len() {
                return Err(Error::Checkpoint(format!(
                    "unexpected batch-norm entry `{name}`"
                )));
            }
            model.stats[i] = s;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn set_stats(&mut self, stats: Vec<RunningStats>) -> Result<()> {
        if stats.len() != self.stats.len() {
            return Err(Error::InvalidInput(
                "batch-norm statistics length mismatch".into(),
            ));
        }
        self.stats = stats;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Registers all parameters on `tape` (tracked when `trainable`).
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params.bind(tape, trainable)
    }

    /// Level sizes `(stride, Hs, Ws)` for an `h × w` input.
    pub fn level_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        self.config
            .pyramid_strides
            .iter()
            .map(|&s| (s, h.div_ceil(s), w.div_ceil(s)))
            .collect()
    }

    pub fn trace<'t>(
        &self,
        params: &[Var<'t>],
        images: Var<'t>,
        mode: NormMode,
    ) -> Result<Trace<'t>> {
        check_input(&images.shape(), &self.config)?;
        let ctx = self.ctx(params, mode);
        let mut stages = self.net.encoder.forward(&ctx, images)?;
        let c5 = stages[3];
        stages[3] = self.net.aspp.forward(&ctx, c5)?;
        let pyramid = self.net.fpn.forward(&ctx, &stages)?;
        let refined = pyramid
            .iter()
            .map(|&p| self.net.refiner.forward(&ctx, p))
            .collect::<Result<Vec<_>>>()?;
        let levels = self.net.head.forward(&ctx, &refined)?;
        Ok(Trace {
            stages,
            c5,
            pyramid,
            refined,
            levels,
            stats: ctx.stats.into_inner(),
        })
    }

    /// Forward pass returning the per-level head variables and updated
    /// batch-norm statistics.
    pub fn forward<'t>(
        &self,
        params: &[Var<'t>],
        images: Var<'t>,
        mode: NormMode,
    ) -> Result<(Vec<LevelVars<'t>>, Vec<RunningStats>)> {
        let t = self.trace(params, images, mode)?;
        Ok((t.levels, t.stats))
    }

    /// Inference with frozen parameters and running statistics.
    pub fn predict(&self, images: &Tensor) -> Result<HeadOutputs> {
        let tape = Tape::new();
        let params = self.bind(&tape, false);
        let x = tape.constant(images.clone());
        let (levels, _) = self.forward(&params, x, NormMode::Eval)?;
        Ok(levels.iter().map(LevelVars::snapshot).collect())
    }

    fn ctx<'a, 't>(&self, params: &'a [Var<'t>], mode: NormMode) -> Ctx<'a, 't> {
        Ctx {
            params,
            stats: RefCell::new(self.stats.clone()),
            mode,
        }
    }
}
