//! Fitting a mixture to a posed image sequence.

pub mod adam;
pub mod batch;
pub mod init;
pub mod loss;
pub mod schedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, OptState};
pub use batch::{full_batch, sample_batch, RayBatch, RayRecord};
pub use init::{init_mixture, look_at_centroid};
pub use loss::{compute_loss, loss_and_gradient, Gradient, LossOutput, LossTerms, LossWeights};
pub use schedule::{lr_decay_check, DecayConfig, DecayOutcome};

pub use crate::dataset::canonical_rescale;
use crate::dataset::Dataset;
use crate::gmm::{Mixture, PARAMS_PER_COMPONENT};
use crate::render::RenderConfig;
use crate::reparam::{self, ReparamConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub decay: DecayConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub components: usize,
    pub reparam_rounds: usize,
    pub reparam: ReparamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            decay: DecayConfig::default(),
            batch_size: 50_000,
            max_steps: 4000,
            seed: 0,
            components: 40,
            reparam_rounds: 0,
            reparam: ReparamConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.weights.validate()?;
        self.reparam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if self.components == 0 {
            return Err(Error::Invalid("at least one component is required".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: LossTerms,
    pub lr: f64,
    pub components: usize,
    /// `decay`, `converged`, `reparam:-P+S` or `degenerate:-N`.
    pub event: String,
}

impl LogEntry {
    pub const CSV_HEADER: &'static str = "step,loss,mask,color,flow,lr,components,event";

    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{},{}",
            self.step,
            self.loss.total,
            self.loss.mask,
            self.loss.color,
            self.loss.flow,
            self.lr,
            self.components,
            self.event
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub mixture: Mixture,
    pub log: Vec<LogEntry>,
    pub steps: usize,
    pub converged: bool,
    /// True when the observer asked to stop early.
    pub interrupted: bool,
}

/// Called after every step with the current mixture and log row; returning
/// `false` stops the fit.
pub type Observer<'a> = dyn FnMut(&Mixture, &LogEntry) -> bool + 'a;

/// Fits from the default random-sphere initialization.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<FitResult> {
    let init = init_mixture(config.components, config.seed, look_at_centroid(&dataset.cameras));
    fit_from(dataset, init, config, &mut |_, _| true)
}

fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub fn fit_from(
    dataset: &Dataset,
    init: Mixture,
    config: &FitConfig,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    config.validate()?;
    let total = dataset.ray_count();
    if total == 0 {
        return Err(Error::Invalid("dataset has no rays".into()));
    }
    let mut weights = config.weights;
    if !dataset.has_flow() && weights.lambda_f != 0.0 {
        log::warn!("dataset has no flow targets; flow loss disabled");
        weights.lambda_f = 0.0;
    }
    let batch_size = config.batch_size.min(total);
    let mut rng = batch_rng(config.seed);
    let mut mix = init;
    let mut params = mix.to_params();
    let mut opt = OptState::new(params.len(), config.adam);
    let mut log = Vec::new();
    let mut rounds_left = config.reparam_rounds;
    let round_every = config.max_steps / (config.reparam_rounds + 1);
    let mut converged = false;
    let mut interrupted = false;
    let mut step = 0;
    while step < config.max_steps {
        let batch = sample_batch(dataset, batch_size, &mut rng)?;
        let (loss, grad) = loss_and_gradient(&mix, &batch, &config.render, &weights)?;
        adam_step(&mut opt, &mut params, &grad.params)?;
        mix.set_params(&params);
        step += 1;
        opt.history.push(loss.total());
        let mut events = Vec::new();
        let outcome = lr_decay_check(&mut opt, &config.decay);
        match outcome {
            DecayOutcome::Decayed => events.push("decay".to_string()),
            DecayOutcome::Converged => events.push("converged".to_string()),
            DecayOutcome::Keep => {}
        }

        let degenerate = mix.degenerate_components();
        if !degenerate.is_empty() && degenerate.len() < mix.len() {
            let origin: Vec<Option<usize>> = (0..mix.len()).filter(|i| !degenerate.contains(i)).map(Some).collect();
            mix.components = origin.iter().map(|o| mix.components[o.unwrap()].clone()).collect();
            opt.remap(&origin, PARAMS_PER_COMPONENT);
            params = mix.to_params();
            events.push(format!("degenerate:-{}", degenerate.len()));
        }

        let scheduled = rounds_left > 0 && round_every > 0 && step % round_every == 0;
        let mut finished = false;
        if outcome == DecayOutcome::Converged || scheduled {
            if rounds_left > 0 {
                rounds_left -= 1;
                let (next, origin, report) =
                    reparam::reparam_round(&mix, dataset, &config.render, &weights, &config.reparam, &mut rng)?;
                mix = next;
                opt.remap(&origin, PARAMS_PER_COMPONENT);
                opt.lr = config.adam.lr;
                opt.history.clear();
                params = mix.to_params();
                events.push(format!("reparam:-{}+{}", report.pruned, report.split));
            } else {
                converged = true;
                finished = true;
            }
        }

        let entry = LogEntry {
            step,
            loss: loss.terms,
            lr: opt.lr,
            components: mix.len(),
            event: events.join(";"),
        };
        log::debug!("{}", entry.csv());
        let keep_going = observer(&mix, &entry);
        log.push(entry);
        if !keep_going {
            interrupted = true;
            break;
        }
        if finished {
            break;
        }
    }
    Ok(FitResult {
        mixture: mix,
        log,
        steps: step,
        converged,
        interrupted,
    })
}

/// Mean loss over every ray of the dataset.
pub fn dataset_loss(mix: &Mixture, dataset: &Dataset, cfg: &RenderConfig, weights: &LossWeights) -> Result<LossOutput> {
    let mut weights = *weights;
    if !dataset.has_flow() {
        weights.lambda_f = 0.0;
    }
    compute_loss(mix, &full_batch(dataset), cfg, &weights)
}
