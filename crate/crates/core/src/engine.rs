//! Metropolis-Hastings fitting with coarse-to-fine early rejection and
//! parallel tempering.
//!
//! A proposal is tested against the current state's top-level posterior at
//! every dividing level from 0 upward, each with a fresh uniform draw. Most
//! bad proposals fail at a coarse level where evaluation is cheap.

use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{eta_top, model_gamma, PointCloud};
use crate::grammar::{GrammarError, ModelFamily, ParamKind, ParamVector};
use crate::metrics::{similarity, MetricConfig, MetricKind, SampledModel};
use crate::spatial_index::{IndexError, NnIndex};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
    #[error("negative similarity {0}")]
    NegativeSimilarity(f64),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub sigma: f64,
    pub delta: f64,
    pub h: f64,
    pub metric: MetricKind,
    /// Total proposals across all chains.
    pub budget: u64,
    pub n_chains: usize,
    /// Defaults to `1.5^k` for chain `k`.
    pub temperatures: Option<Vec<f64>>,
    pub swap_probability: f64,
    pub seed: u64,
    pub early_rejection: bool,
    /// Record a best-state snapshot at most this often; `None` means
    /// `budget / 20`.
    pub snapshot_every: Option<u64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            beta: 0.8,
            sigma: 0.05,
            delta: 0.04,
            h: 2.5,
            metric: MetricKind::Wmm,
            budget: 2000,
            n_chains: 10,
            temperatures: None,
            swap_probability: 0.1,
            seed: 0,
            early_rejection: true,
            snapshot_every: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return bad(format!("h must be non-negative, got {}", self.h));
        }
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.swap_probability) {
            return bad(format!(
                "swap_probability must lie in [0, 1], got {}",
                self.swap_probability
            ));
        }
        if let Some(ts) = &self.temperatures {
            if ts.len() != self.n_chains {
                return bad(format!("{} temperatures for {} chains", ts.len(), self.n_chains));
            }
            if ts.iter().any(|t| !(*t >= 1.0 && t.is_finite())) {
                return bad("temperatures must be finite and >= 1".into());
            }
        }
        Ok(())
    }

    pub fn ladder(&self) -> Vec<f64> {
        self.temperatures
            .clone()
            .unwrap_or_else(|| (0..self.n_chains).map(|k| 1.5f64.powi(k as i32)).collect())
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            epsilon: self.epsilon,
            h: self.h,
            ..MetricConfig::default()
        }
    }

    /// Warns when the dividing resolution is too coarse for the query.
    pub fn check_against_query(&self, query: &PointCloud) {
        if let Some(res) = query.resolution_hint {
            if self.delta > res / 2.0 {
                warn!("delta {} is coarser than half the query resolution {}", self.delta, res);
            }
        }
    }
}

/// Log of the likelihood `exp(sqrt(r))`.
pub fn log_likelihood(r: f64) -> Result<f64, EngineError> {
    if r < 0.0 {
        return Err(EngineError::NegativeSimilarity(r));
    }
    Ok(r.sqrt())
}

/// MH acceptance for a symmetric proposal at `temperature`.
pub fn accept_prob(logp_new: f64, logp_cur: f64, temperature: f64) -> f64 {
    if logp_new.is_nan() || logp_new == f64::NEG_INFINITY {
        return 0.0;
    }
    if logp_cur == f64::NEG_INFINITY {
        return 1.0;
    }
    let d = (logp_new - logp_cur) / temperature;
    if d >= 0.0 {
        1.0
    } else {
        d.exp()
    }
}

/// A posterior that can be evaluated at any dividing level.
pub trait Posterior: Sync {
    fn family(&self) -> &ModelFamily;

    /// Finest level used for `params`.
    fn top_level(&self, params: &ParamVector) -> u32;

    fn log_posterior(&self, params: &ParamVector, level: u32) -> f64;

    fn log_posterior_top(&self, params: &ParamVector) -> f64 {
        self.log_posterior(params, self.top_level(params))
    }
}

/// Posterior of a model family given an indexed query.
pub struct ModelPosterior<'a> {
    pub family: &'a ModelFamily,
    pub index: &'a NnIndex,
    pub metric: MetricKind,
    pub metric_config: MetricConfig,
    pub delta: f64,
}

impl<'a> ModelPosterior<'a> {
    pub fn new(family: &'a ModelFamily, index: &'a NnIndex, cfg: &FitConfig) -> Self {
        Self {
            family,
            index,
            metric: cfg.metric,
            metric_config: cfg.metric_config(),
            delta: cfg.delta,
        }
    }

    /// Similarity of the instantiated model at `level`; `None` when the
    /// parameters do not instantiate.
    pub fn similarity_at(&self, params: &ParamVector, level: u32) -> Option<f64> {
        let prims = self.family.instantiate(params).ok()?;
        let model = SampledModel::from_primitives(&prims, level);
        Some(similarity(self.metric, &model, self.index, &self.metric_config).value)
    }
}

impl Posterior for ModelPosterior<'_> {
    fn family(&self) -> &ModelFamily {
        self.family
    }

    fn top_level(&self, params: &ParamVector) -> u32 {
        match self.family.instantiate(params) {
            Ok(prims) => eta_top(model_gamma(&prims), self.delta).unwrap_or(0),
            Err(_) => 0,
        }
    }

    fn log_posterior(&self, params: &ParamVector, level: u32) -> f64 {
        let prior = self.family.log_prior(params);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        match self.similarity_at(params, level).map(log_likelihood) {
            Some(Ok(ll)) if ll.is_finite() => ll + prior,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Changes one uniformly chosen active parameter. Continuous parameters take
/// a local Gaussian step with probability `beta` and a uniform draw
/// otherwise; discrete parameters always take a uniform draw. Newly active
/// parameters are then sampled from their priors.
pub fn propose<R: Rng + ?Sized>(
    params: &ParamVector,
    family: &ModelFamily,
    rng: &mut R,
    beta: f64,
    sigma: f64,
) -> Result<ParamVector, EngineError> {
    let active = family.active_params(params)?;
    if active.is_empty() {
        return Err(EngineError::InvalidConfig("family has no active parameters".into()));
    }
    let d = &active[rng.gen_range(0..active.len())];
    let t: f64 = rng.gen();
    let value = match &d.kind {
        ParamKind::Continuous { min, max } => {
            if t < beta {
                let cur = params.values.get(&d.key).copied().unwrap_or(0.5 * (min + max));
                let sd = sigma * (max - min);
                Normal::new(cur, sd)
                    .map_err(|e| EngineError::InvalidConfig(e.to_string()))?
                    .sample(rng)
            } else {
                rng.gen_range(*min..=*max)
            }
        }
        ParamKind::Discrete { values } => values[rng.gen_range(0..values.len())],
    };
    let mut next = params.clone();
    next.set(d.key.clone(), value);
    Ok(family.resync_params(&next, rng))
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub params: ParamVector,
    /// Posterior at the top level of `params`.
    pub log_post_top: f64,
    pub temperature: f64,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Deepest level evaluated.
    pub level_reached: u32,
}

/// One MH step on `chain`.
pub fn mh_step<P: Posterior + ?Sized>(
    chain: &mut ChainState,
    posterior: &P,
    beta: f64,
    sigma: f64,
    early_rejection: bool,
) -> Result<StepOutcome, EngineError> {
    let proposal = propose(&chain.params, posterior.family(), &mut chain.rng, beta, sigma)?;
    if posterior.family().log_prior(&proposal) == f64::NEG_INFINITY {
        let _: f64 = chain.rng.gen();
        return Ok(StepOutcome {
            accepted: false,
            level_reached: 0,
        });
    }
    let top = posterior.top_level(&proposal);
    let first = if early_rejection { 0 } else { top };
    let mut logp = f64::NEG_INFINITY;
    for level in first..=top {
        logp = posterior.log_posterior(&proposal, level);
        let alpha = accept_prob(logp, chain.log_post_top, chain.temperature);
        let u: f64 = chain.rng.gen();
        if u >= alpha {
            return Ok(StepOutcome {
                accepted: false,
                level_reached: level,
            });
        }
    }
    chain.params = proposal;
    chain.log_post_top = logp;
    Ok(StepOutcome {
        accepted: true,
        level_reached: top,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub seconds: f64,
    pub chain: usize,
    pub temperature: f64,
    pub level_reached: u32,
    /// Top-level log-posterior of the chain after the step.
    pub log_likelihood: f64,
    pub accepted: bool,
    pub best_log_post: f64,
}

impl TraceRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &TraceRecord) -> bool {
        self.iter == other.iter
            && self.chain == other.chain
            && self.temperature.to_bits() == other.temperature.to_bits()
            && self.level_reached == other.level_reached
            && self.log_likelihood.to_bits() == other.log_likelihood.to_bits()
            && self.accepted == other.accepted
            && self.best_log_post.to_bits() == other.best_log_post.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: u64,
    pub log_post: f64,
    pub params: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub best_params: ParamVector,
    pub best_log_post: f64,
    pub proposals: u64,
    pub accepted: u64,
    pub swaps_attempted: u64,
    pub swaps_accepted: u64,
    pub early_rejection: bool,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub snapshots: Vec<Snapshot>,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl FitResult {
    pub fn proposals_per_second(&self) -> f64 {
        if self.elapsed_seconds > 0.0 {
            self.proposals as f64 / self.elapsed_seconds
        } else {
            f64::INFINITY
        }
    }

    /// Fraction of proposals that reached each level.
    pub fn level_histogram(&self) -> Vec<u64> {
        let max = self.trace.iter().map(|r| r.level_reached).max().unwrap_or(0);
        let mut hist = vec![0; max as usize + 1];
        for r in &self.trace {
            hist[r.level_reached as usize] += 1;
        }
        hist
    }
}

/// Random stream `stream` of `seed`; stream 0 drives swaps, stream k+1 drives chain k.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fits `family` to `query`.
pub fn run_fit(family: &ModelFamily, query: &PointCloud, cfg: &FitConfig) -> Result<FitResult, EngineError> {
    cfg.validate()?;
    cfg.check_against_query(query);
    let index = NnIndex::build(query)?;
    let posterior = ModelPosterior::new(family, &index, cfg);
    run_chains(&posterior, cfg)
}

/// Runs the tempered chains against any posterior. Chains step in
/// round-robin order; after each round a coordinator stream may swap one
/// adjacent pair. Results depend only on the seed, chain count and budget.
pub fn run_chains<P: Posterior>(posterior: &P, cfg: &FitConfig) -> Result<FitResult, EngineError> {
    cfg.validate()?;
    let start = Instant::now();
    let family = posterior.family();
    let mut coordinator = chain_rng(cfg.seed, 0);
    let mut chains: Vec<ChainState> = cfg
        .ladder()
        .into_iter()
        .enumerate()
        .map(|(k, temperature)| {
            let mut rng = chain_rng(cfg.seed, k as u64 + 1);
            let params = family.sample_prior(&mut rng);
            ChainState {
                log_post_top: posterior.log_posterior_top(&params),
                params,
                temperature,
                rng,
            }
        })
        .collect();

    let mut best = 0;
    for (k, c) in chains.iter().enumerate() {
        if c.log_post_top > chains[best].log_post_top {
            best = k;
        }
    }
    let mut best_params = chains[best].params.clone();
    let mut best_log_post = chains[best].log_post_top;
    let snapshot_every = cfg.snapshot_every.unwrap_or(cfg.budget / 20).max(1);
    let mut snapshots = vec![Snapshot {
        iter: 0,
        log_post: best_log_post,
        params: best_params.clone(),
    }];

    let n = chains.len() as u64;
    let mut trace = Vec::with_capacity(cfg.budget as usize);
    let (mut accepted, mut swaps_attempted, mut swaps_accepted) = (0, 0, 0);
    let mut round = 0u64;
    while round * n < cfg.budget {
        let active = (cfg.budget - round * n).min(n) as usize;
        let outcomes: Vec<Result<StepOutcome, EngineError>> = chains[..active]
            .par_iter_mut()
            .map(|c| mh_step(c, posterior, cfg.beta, cfg.sigma, cfg.early_rejection))
            .collect();
        let seconds = start.elapsed().as_secs_f64();
        for (k, outcome) in outcomes.into_iter().enumerate() {
            let outcome = outcome?;
            let c = &chains[k];
            if c.log_post_top > best_log_post {
                best_log_post = c.log_post_top;
                best_params = c.params.clone();
            }
            accepted += outcome.accepted as u64;
            let iter = round * n + k as u64;
            trace.push(TraceRecord {
                iter,
                seconds,
                chain: k,
                temperature: c.temperature,
                level_reached: outcome.level_reached,
                log_likelihood: c.log_post_top,
                accepted: outcome.accepted,
                best_log_post,
            });
            if (iter + 1).is_multiple_of(snapshot_every) {
                snapshots.push(Snapshot {
                    iter: iter + 1,
                    log_post: best_log_post,
                    params: best_params.clone(),
                });
            }
        }
        if chains.len() > 1 && coordinator.gen::<f64>() < cfg.swap_probability {
            swaps_attempted += 1;
            let a = coordinator.gen_range(0..chains.len() - 1);
            let (ca, cb) = (&chains[a], &chains[a + 1]);
            let alpha = swap_prob(ca.temperature, cb.temperature, ca.log_post_top, cb.log_post_top);
            if coordinator.gen::<f64>() < alpha {
                swaps_accepted += 1;
                let (left, right) = chains.split_at_mut(a + 1);
                let (ca, cb) = (&mut left[a], &mut right[0]);
                std::mem::swap(&mut ca.params, &mut cb.params);
                std::mem::swap(&mut ca.log_post_top, &mut cb.log_post_top);
            }
        }
        round += 1;
    }
    let elapsed_seconds = start.elapsed().as_secs_f64();
    debug!(
        "{} proposals, {} accepted, {}/{} swaps, best {best_log_post}",
        trace.len(),
        accepted,
        swaps_accepted,
        swaps_attempted
    );
    Ok(FitResult {
        best_params,
        best_log_post,
        proposals: trace.len() as u64,
        accepted,
        swaps_attempted,
        swaps_accepted,
        early_rejection: cfg.early_rejection,
        trace,
        snapshots,
        elapsed_seconds,
    })
}

/// Replica-exchange acceptance for swapping the states of two chains.
pub fn swap_prob(t_a: f64, t_b: f64, logp_a: f64, logp_b: f64) -> f64 {
    let d = (1.0 / t_a - 1.0 / t_b) * (logp_b - logp_a);
    if d.is_nan() {
        0.0
    } else if d >= 0.0 {
        1.0
    } else {
        d.exp()
    }
}
