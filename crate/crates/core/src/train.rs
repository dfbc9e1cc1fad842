//! Likelihood loss, masked ADAM, the two curricula and the success-rate
//! harness.
//!
//! Every schedule compiles to a list of [`Stage`]s that a [`Trainer`] walks
//! one optimizer step at a time, which is what makes checkpoint/resume exact.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamVector, Tape};
use crate::data::{generate, sample_ground_truth, CountTable, DatasetSpec, DEFAULT_TIMESTAMPS};
use crate::dynamics::IntegratorConfig;
use crate::error::{check_dim, Error, Result};
use crate::model::{HybridModel, MlpSpec, ModelFile};
use crate::pauli::HamiltonianFamily;
use crate::seeds::{self, stream};
use crate::statevec::outcome_probabilities;

/// Probabilities below this are clamped before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRange {
    pub low: f64,
    pub high: f64,
}

impl Default for InitRange {
    fn default() -> Self {
        Self { low: -0.5, high: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub warmup_steps: usize,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub success_threshold: f64,
    pub theta_init: InitRange,
    pub integrator: IntegratorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 200,
            phase1_steps: 800,
            phase2_steps: 200,
            lr_theta: 5e-2,
            lr_phi: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            success_threshold: 0.1,
            theta_init: InitRange::default(),
            integrator: IntegratorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(open_unit(self.beta1) && open_unit(self.beta2)) {
            return Err(Error::invalid("ADAM betas must lie in (0, 1)"));
        }
        if !(self.lr_theta > 0.0 && self.lr_phi > 0.0 && self.eps > 0.0) {
            return Err(Error::invalid("learning rates and epsilon must be positive"));
        }
        if !(self.theta_init.low <= self.theta_init.high
            && self.theta_init.low.is_finite()
            && self.theta_init.high.is_finite())
        {
            return Err(Error::invalid("theta_init needs finite low <= high"));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::invalid("success threshold must be positive"));
        }
        self.integrator.validate()
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `θ ~ U[low, high]` on the `THETA_INIT` stream of `seed`, network
/// weights on the `PHI_INIT` stream.
pub fn initial_params(model: &HybridModel, init: InitRange, seed: u64) -> Result<ParamVector> {
    let mut theta_rng = seeds::rng(seed, stream::THETA_INIT);
    let theta: Vec<f64> = (0..model.num_theta())
        .map(|_| {
            if init.low == init.high {
                init.low
            } else {
                theta_rng.random_range(init.low..=init.high)
            }
        })
        .collect();
    model.init_params(&theta, &mut seeds::rng(seed, stream::PHI_INIT))
}

// ---------------------------------------------------------------------------
// loss

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub max_norm_drift: f64,
}

fn check_table(model: &HybridModel, params: &ParamVector, table: &CountTable) -> Result<()> {
    model.check_params(params)?;
    check_dim(model.num_sites(), table.num_sites)?;
    if table.total == 0 {
        return Err(Error::invalid("dataset has no records"));
    }
    Ok(())
}

/// Mean negative log-likelihood plus the network regularizer (tape-free).
pub fn nll_loss(model: &HybridModel, params: &ParamVector, table: &CountTable, cfg: &IntegratorConfig) -> Result<f64> {
    check_table(model, params, table)?;
    let total = table.total as f64;
    let per_state = (0..table.initial_states.len())
        .into_par_iter()
        .map(|s| {
            let pred = model.predict_states(&table.initial_states[s], &table.timestamps, cfg, params)?;
            let mut acc = 0.0;
            for (&(_, j, k), counts) in table.keys_for_state(s) {
                let probs = outcome_probabilities(&pred.states[j], &table.bases[k])?;
                for (c, p) in counts.iter().zip(&probs) {
                    if *c > 0.0 {
                        acc -= c * p.max(PROB_FLOOR).ln();
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_state.iter().sum::<f64>() / total + model.regularization(params))
}

/// Loss and its gradient through the recorded integration.
pub fn nll_loss_and_grad(
    model: &HybridModel,
    params: &ParamVector,
    table: &CountTable,
    cfg: &IntegratorConfig,
) -> Result<LossValue> {
    check_table(model, params, table)?;
    let total = table.total as f64;
    let per_state = (0..table.initial_states.len())
        .into_par_iter()
        .map(|s| {
            let mut tape = Tape::new(&params.values);
            let (states, drift) =
                model.record_prediction(&mut tape, &table.initial_states[s], &table.timestamps, cfg)?;
            let mut terms = Vec::new();
            for (&(_, j, k), counts) in table.keys_for_state(s) {
                let rotated = tape.rotate(states[j], &table.bases[k]);
                let probs = tape.abs2(rotated);
                let probs = tape.normalize(probs);
                let logs = tape.log_clamped(probs, PROB_FLOOR);
                terms.push(tape.weighted_sum(logs, counts.iter().map(|c| -c / total).collect()));
            }
            let out = tape.sum(&terms);
            let grad = tape.backward(out)?;
            Ok((tape.scalar(out), grad, drift))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut loss = model.regularization(params);
    let mut grad = vec![0.0; params.values.len()];
    let mut drift: f64 = 0.0;
    for (l, g, d) in per_state {
        loss += l;
        drift = drift.max(d);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if let (Some(spec), true) = (model.mlp(), model.network_active()) {
        for i in model.phi_range() {
            grad[i] += 2.0 * spec.weight_decay * params.values[i];
        }
    }
    Ok(LossValue {
        loss,
        grad,
        max_norm_drift: drift,
    })
}

// ---------------------------------------------------------------------------
// optimizer

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments with a step count per coordinate, so that
/// coordinates unmasked late get their own bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<u64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Bias-corrected ADAM update of the coordinates where `mask` is true.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    mask: &[bool],
    hyper: &AdamHyper,
) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), mask.len(), state.m.len(), state.v.len(), state.t.len()] {
        check_dim(n, len)?;
    }
    for i in (0..n).filter(|&i| mask[i]) {
        let g = grads[i];
        state.t[i] += 1;
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let t = state.t[i] as i32;
        let m_hat = state.m[i] / (1.0 - hyper.beta1.powi(t));
        let v_hat = state.v[i] / (1.0 - hyper.beta2.powi(t));
        params[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// schedules

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// `θ` and `φ` together, network on.
    Warmup,
    /// Network off, `θ` trainable.
    NetworkOff,
    /// Network on, `θ` frozen, `φ` trainable.
    ThetaFrozen,
    /// Ansatz-only baseline.
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub kind: StageKind,
    pub steps: usize,
    pub nn_enabled: bool,
    pub theta_mask: Vec<bool>,
    pub train_phi: bool,
    /// `θ` coordinates set to zero on entry.
    #[serde(default)]
    pub zero_theta: Vec<usize>,
    /// Polynomial order batch, for Curriculum 2.
    #[serde(default)]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Curriculum1,
    Curriculum2,
    Vanilla,
}

fn curriculum1_block(cfg: &TrainConfig, theta_mask: Vec<bool>, order: Option<usize>) -> Vec<Stage> {
    let none = vec![false; theta_mask.len()];
    vec![
        Stage {
            kind: StageKind::Warmup,
            steps: cfg.warmup_steps,
            nn_enabled: true,
            theta_mask: theta_mask.clone(),
            train_phi: true,
            zero_theta: Vec::new(),
            order,
        },
        Stage {
            kind: StageKind::NetworkOff,
            steps: cfg.phase1_steps,
            nn_enabled: false,
            theta_mask,
            train_phi: false,
            zero_theta: Vec::new(),
            order,
        },
        Stage {
            kind: StageKind::ThetaFrozen,
            steps: cfg.phase2_steps,
            nn_enabled: true,
            theta_mask: none,
            train_phi: true,
            zero_theta: Vec::new(),
            order,
        },
    ]
}

/// Warm-up, network off, then `θ` frozen.
pub fn curriculum1_stages(model: &HybridModel, cfg: &TrainConfig) -> Vec<Stage> {
    curriculum1_block(cfg, vec![true; model.num_theta()], None)
}

/// Network permanently off; the warm-up budget is spent on `θ` as well.
pub fn vanilla_stages(model: &HybridModel, cfg: &TrainConfig) -> Vec<Stage> {
    vec![Stage {
        kind: StageKind::Vanilla,
        steps: cfg.warmup_steps + cfg.phase1_steps,
        nn_enabled: false,
        theta_mask: vec![true; model.num_theta()],
        train_phi: false,
        zero_theta: Vec::new(),
        order: None,
    }]
}

/// One Curriculum 1 block per polynomial order up to `max_order`, lowest
/// first. Each block trains only its own order; higher orders are zeroed on
/// entry and lower orders stay frozen.
pub fn curriculum2_stages(model: &HybridModel, cfg: &TrainConfig, max_order: usize) -> Result<Vec<Stage>> {
    let orders = model.ansatz().param_orders();
    let mut batches: Vec<usize> = orders.iter().copied().filter(|&o| o <= max_order).collect();
    batches.sort_unstable();
    batches.dedup();
    if batches.is_empty() {
        return Err(Error::invalid(format!("no Ansatz terms of order <= {max_order}")));
    }
    let mut stages = Vec::new();
    for &m in &batches {
        let mask: Vec<bool> = orders.iter().map(|&o| o == m).collect();
        let mut block = curriculum1_block(cfg, mask, Some(m));
        block[0].zero_theta = (0..orders.len()).filter(|&i| orders[i] > m).collect();
        stages.extend(block);
    }
    Ok(stages)
}

// ---------------------------------------------------------------------------
// trainer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub schedule: Schedule,
    pub theta: Vec<f64>,
    /// `θ` at the end of the last network-off stage.
    pub theta_after_phase1: Option<Vec<f64>>,
    pub relative_error: Option<f64>,
    pub success: bool,
    pub final_loss: Option<f64>,
    pub loss_trace: Vec<f64>,
    pub norm_drift_trace: Vec<f64>,
    /// Diagnostics when the run diverged.
    pub failure: Option<String>,
    /// Kept out of serialized results so they stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schedule: Schedule,
    pub config: TrainConfig,
    pub model: ModelFile,
    pub stages: Vec<Stage>,
    pub stage: usize,
    pub step: usize,
    pub adam: AdamState,
    pub loss_trace: Vec<f64>,
    pub norm_drift_trace: Vec<f64>,
    pub theta_after_phase1: Option<Vec<f64>>,
    pub failure: Option<String>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.format_version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                cp.format_version
            )));
        }
        let (model, params) = cp.model.restore()?;
        let n = params.values.len();
        cp.config.validate()?;
        if cp.adam.m.len() != n || cp.adam.v.len() != n || cp.adam.t.len() != n {
            return Err(Error::Parse("optimizer state does not match the parameters".into()));
        }
        if cp.stage > cp.stages.len() || cp.stages.get(cp.stage).is_some_and(|s| cp.step >= s.steps.max(1)) {
            return Err(Error::Parse("stage cursor out of range".into()));
        }
        for s in &cp.stages {
            if s.theta_mask.len() != model.num_theta() || s.zero_theta.iter().any(|&i| i >= model.num_theta()) {
                return Err(Error::Parse("stage mask does not match the Ansatz".into()));
            }
        }
        if cp.norm_drift_trace.len() != cp.loss_trace.len() {
            return Err(Error::Parse("trace lengths differ".into()));
        }
        Ok(cp)
    }
}

pub struct Trainer<'d> {
    model: HybridModel,
    params: ParamVector,
    table: &'d CountTable,
    cfg: TrainConfig,
    schedule: Schedule,
    stages: Vec<Stage>,
    stage: usize,
    step: usize,
    adam: AdamState,
    loss_trace: Vec<f64>,
    drift_trace: Vec<f64>,
    theta_after_phase1: Option<Vec<f64>>,
    failure: Option<String>,
    started: Instant,
}

impl<'d> Trainer<'d> {
    pub fn new(
        model: HybridModel,
        params: ParamVector,
        table: &'d CountTable,
        cfg: TrainConfig,
        schedule: Schedule,
        stages: Vec<Stage>,
    ) -> Result<Self> {
        cfg.validate()?;
        check_table(&model, &params, table)?;
        let adam = AdamState::new(params.values.len());
        let mut t = Self {
            model,
            params,
            table,
            cfg,
            schedule,
            stages,
            stage: 0,
            step: 0,
            adam,
            loss_trace: Vec::new(),
            drift_trace: Vec::new(),
            theta_after_phase1: None,
            failure: None,
            started: Instant::now(),
        };
        t.enter_stage();
        Ok(t)
    }

    pub fn resume(cp: &Checkpoint, table: &'d CountTable) -> Result<Self> {
        let (model, params) = cp.model.restore()?;
        check_table(&model, &params, table)?;
        let mut t = Self {
            model,
            params,
            table,
            cfg: cp.config.clone(),
            schedule: cp.schedule,
            stages: cp.stages.clone(),
            stage: cp.stage,
            step: cp.step,
            adam: cp.adam.clone(),
            loss_trace: cp.loss_trace.clone(),
            drift_trace: cp.norm_drift_trace.clone(),
            theta_after_phase1: cp.theta_after_phase1.clone(),
            failure: cp.failure.clone(),
            started: Instant::now(),
        };
        t.apply_flags();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            schedule: self.schedule,
            config: self.cfg.clone(),
            model: ModelFile::capture(&self.model, &self.params)?,
            stages: self.stages.clone(),
            stage: self.stage,
            step: self.step,
            adam: self.adam.clone(),
            loss_trace: self.loss_trace.clone(),
            norm_drift_trace: self.drift_trace.clone(),
            theta_after_phase1: self.theta_after_phase1.clone(),
            failure: self.failure.clone(),
        })
    }

    pub fn model(&self) -> &HybridModel {
        &self.model
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn current_stage(&self) -> Option<&Stage> {
        self.stages.get(self.stage)
    }

    pub fn steps_taken(&self) -> usize {
        self.loss_trace.len()
    }

    pub fn is_done(&self) -> bool {
        self.stage >= self.stages.len()
    }

    fn apply_flags(&mut self) {
        if let Some(s) = self.stages.get(self.stage) {
            self.model.nn_enabled = s.nn_enabled;
            self.model.theta_frozen = !s.theta_mask.iter().any(|m| *m);
        }
    }

    /// Zeroes the entry coordinates and skips empty stages.
    fn enter_stage(&mut self) {
        while let Some(s) = self.stages.get(self.stage) {
            for &i in &s.zero_theta {
                self.params.values[i] = 0.0;
            }
            if s.steps > 0 {
                break;
            }
            self.finish_stage();
        }
        self.apply_flags();
    }

    fn finish_stage(&mut self) {
        if self.stages[self.stage].kind == StageKind::NetworkOff {
            self.theta_after_phase1 = Some(self.params.values[..self.model.num_theta()].to_vec());
        }
        self.stage += 1;
        self.step = 0;
        // each stage is a fresh optimization
        self.adam = AdamState::new(self.params.values.len());
    }

    /// One optimizer step. Numerical blow-ups end the run with diagnostics
    /// instead of an error.
    pub fn step(&mut self) -> Result<()> {
        let Some(stage) = self.stages.get(self.stage) else {
            return Ok(());
        };
        let value = match nll_loss_and_grad(&self.model, &self.params, self.table, &self.cfg.integrator) {
            Ok(v) if v.grad.iter().all(|g| g.is_finite()) => v,
            Ok(_) => return self.fail("non-finite gradient".into()),
            Err(e @ (Error::Divergence { .. } | Error::Numeric(_) | Error::DegenerateState)) => {
                return self.fail(e.to_string())
            }
            Err(e) => return Err(e),
        };
        let hyper = self.cfg.hyper();
        let theta_len = self.model.num_theta();
        let mut theta_mask = stage.theta_mask.clone();
        theta_mask.resize(self.params.values.len(), false);
        let phi_mask: Vec<bool> = (0..self.params.values.len())
            .map(|i| stage.train_phi && self.model.network_active() && i >= theta_len)
            .collect();
        adam_step(
            &mut self.params.values,
            &value.grad,
            &mut self.adam,
            self.cfg.lr_theta,
            &theta_mask,
            &hyper,
        )?;
        adam_step(
            &mut self.params.values,
            &value.grad,
            &mut self.adam,
            self.cfg.lr_phi,
            &phi_mask,
            &hyper,
        )?;
        self.loss_trace.push(value.loss);
        self.drift_trace.push(value.max_norm_drift);

        self.step += 1;
        if self.step >= self.stages[self.stage].steps {
            self.finish_stage();
            self.enter_stage();
        }
        Ok(())
    }

    fn fail(&mut self, msg: String) -> Result<()> {
        log::warn!("training stopped after {} steps: {msg}", self.loss_trace.len());
        self.failure = Some(msg);
        self.stage = self.stages.len();
        self.step = 0;
        Ok(())
    }

    /// Runs at most `max_steps` further steps.
    pub fn run_steps(&mut self, max_steps: usize) -> Result<()> {
        for _ in 0..max_steps {
            if self.is_done() {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Final metrics; `truth` enables the relative error and success flag.
    pub fn finish(self, truth: Option<&[f64]>) -> Result<TrialResult> {
        let theta = self.params.values[..self.model.num_theta()].to_vec();
        let final_loss = if self.failure.is_none() {
            nll_loss(&self.model, &self.params, self.table, &self.cfg.integrator).ok()
        } else {
            None
        };
        let relative_error = match truth {
            Some(t) if theta.iter().all(|v| v.is_finite()) => Some(relative_error(t, &theta)?),
            _ => None,
        };
        let success = self.failure.is_none() && relative_error.is_some_and(|e| e < self.cfg.success_threshold);
        Ok(TrialResult {
            schedule: self.schedule,
            theta,
            theta_after_phase1: self.theta_after_phase1,
            relative_error,
            success,
            final_loss,
            loss_trace: self.loss_trace,
            norm_drift_trace: self.drift_trace,
            failure: self.failure,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn into_params(self) -> (HybridModel, ParamVector) {
        (self.model, self.params)
    }
}

fn run_schedule(
    model: &HybridModel,
    params: &ParamVector,
    table: &CountTable,
    cfg: &TrainConfig,
    schedule: Schedule,
    stages: Vec<Stage>,
    truth: Option<&[f64]>,
) -> Result<TrialResult> {
    let mut trainer = Trainer::new(model.clone(), params.clone(), table, cfg.clone(), schedule, stages)?;
    trainer.run()?;
    trainer.finish(truth)
}

pub fn run_curriculum1(
    model: &HybridModel,
    params: &ParamVector,
    table: &CountTable,
    cfg: &TrainConfig,
    truth: Option<&[f64]>,
) -> Result<TrialResult> {
    let stages = curriculum1_stages(model, cfg);
    run_schedule(model, params, table, cfg, Schedule::Curriculum1, stages, truth)
}

pub fn run_vanilla(
    model: &HybridModel,
    params: &ParamVector,
    table: &CountTable,
    cfg: &TrainConfig,
    truth: Option<&[f64]>,
) -> Result<TrialResult> {
    let stages = vanilla_stages(model, cfg);
    run_schedule(model, params, table, cfg, Schedule::Vanilla, stages, truth)
}

pub fn run_curriculum2(
    model: &HybridModel,
    params: &ParamVector,
    table: &CountTable,
    cfg: &TrainConfig,
    max_order: usize,
    truth: Option<&[f64]>,
) -> Result<TrialResult> {
    let stages = curriculum2_stages(model, cfg, max_order)?;
    run_schedule(model, params, table, cfg, Schedule::Curriculum2, stages, truth)
}

/// `‖θ − θ̃‖₁ / ‖θ‖₁`.
pub fn relative_error(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_dim(truth.len(), estimate.len())?;
    let norm: f64 = truth.iter().map(|x| x.abs()).sum();
    if norm == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let diff: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b).abs()).sum();
    Ok(diff / norm)
}

// ---------------------------------------------------------------------------
// success-rate harness

/// Dataset parameters shared by every trial; the seed comes from the trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetShape {
    pub num_states: usize,
    pub timestamps: Vec<f64>,
    pub num_bases: usize,
    pub shots: usize,
}

impl Default for DatasetShape {
    fn default() -> Self {
        Self {
            num_states: 5,
            timestamps: DEFAULT_TIMESTAMPS.to_vec(),
            num_bases: 200,
            shots: 100,
        }
    }
}

impl DatasetShape {
    pub fn spec(&self, family: HamiltonianFamily, num_sites: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            num_sites,
            family,
            num_states: self.num_states,
            timestamps: self.timestamps.clone(),
            num_bases: self.num_bases,
            shots: self.shots,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub family: HamiltonianFamily,
    pub num_sites: usize,
    pub num_trials: usize,
    pub seed: u64,
    pub dataset: DatasetShape,
    pub train: TrainConfig,
    /// Defaults to [`MlpSpec::default_for`].
    pub mlp: Option<MlpSpec>,
    pub run_vanilla: bool,
    pub run_node: bool,
}

impl HarnessConfig {
    pub fn new(family: HamiltonianFamily, num_sites: usize, num_trials: usize, seed: u64) -> Self {
        Self {
            family,
            num_sites,
            num_trials,
            seed,
            dataset: DatasetShape::default(),
            train: TrainConfig::default(),
            mlp: None,
            run_vanilla: true,
            run_node: true,
        }
    }

    /// Seed of trial `i`; ground truth, data and initialization all derive
    /// from it.
    pub fn trial_seed(&self, i: usize) -> u64 {
        seeds::derive_seed(seeds::derive_seed(self.seed, stream::TRIAL), i as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub vanilla: Option<TrialResult>,
    pub node: Option<TrialResult>,
}

/// Gap between the worst success and the best failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub max_success_error: f64,
    pub min_failure_error: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_error: Option<f64>,
    pub errors: Vec<Option<f64>>,
    pub separation: Option<Separation>,
}

impl RateSummary {
    /// Diverged runs count as failures with an infinite error.
    pub fn from_results<'r>(results: impl Iterator<Item = &'r TrialResult>, threshold: f64) -> Self {
        let errors: Vec<Option<f64>> = results
            .map(|r| r.relative_error.filter(|_| r.failure.is_none()))
            .collect();
        let trials = errors.len();
        let successes = errors.iter().filter(|e| e.is_some_and(|e| e < threshold)).count();
        let mut finite: Vec<f64> = errors.iter().map(|e| e.unwrap_or(f64::INFINITY)).collect();
        finite.sort_by(f64::total_cmp);
        let median_error = (!finite.is_empty()).then(|| median_sorted(&finite));
        let max_success = finite.iter().copied().rfind(|e| *e < threshold);
        let min_failure = finite.iter().copied().find(|e| *e >= threshold);
        let separation = match (max_success, min_failure) {
            (Some(a), Some(b)) => Some(Separation {
                max_success_error: a,
                min_failure_error: b,
                gap: b - a,
            }),
            _ => None,
        };
        Self {
            trials,
            successes,
            success_rate: if trials == 0 {
                0.0
            } else {
                successes as f64 / trials as f64
            },
            median_error,
            errors,
            separation,
        }
    }
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            b
        } else {
            0.5 * (a + b)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub family: HamiltonianFamily,
    pub num_sites: usize,
    pub trials: Vec<TrialRecord>,
    pub vanilla: Option<RateSummary>,
    pub node: Option<RateSummary>,
}

/// Ground truth, dataset, and both learners for trial `i`.
pub fn run_trial(cfg: &HarnessConfig, i: usize) -> Result<TrialRecord> {
    let seed = cfg.trial_seed(i);
    let truth = sample_ground_truth(cfg.family, cfg.num_sites, seed);
    let dataset = generate(&cfg.dataset.spec(cfg.family, cfg.num_sites, seed), &truth)?;
    let table = CountTable::from_dataset(&dataset)?;
    let mut train = cfg.train.clone();
    train.seed = seed;

    let vanilla = if cfg.run_vanilla {
        let model = HybridModel::vanilla(cfg.family, cfg.num_sites)?;
        let params = initial_params(&model, train.theta_init, seed)?;
        Some(run_vanilla(&model, &params, &table, &train, Some(&truth))?)
    } else {
        None
    };
    let node = if cfg.run_node {
        let mlp = cfg.mlp.clone().unwrap_or_else(|| MlpSpec::default_for(cfg.num_sites));
        let model = HybridModel::hybrid(cfg.family, cfg.num_sites, mlp)?;
        let params = initial_params(&model, train.theta_init, seed)?;
        Some(run_curriculum1(&model, &params, &table, &train, Some(&truth))?)
    } else {
        None
    };
    Ok(TrialRecord {
        trial: i,
        seed,
        truth,
        vanilla,
        node,
    })
}

/// Success-rate summary over seeded trials: trials are independent and run in parallel; results are
/// assembled in trial order.
pub fn success_rate_harness(cfg: &HarnessConfig) -> Result<HarnessReport> {
    if cfg.num_trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    cfg.train.validate()?;
    let trials = (0..cfg.num_trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let threshold = cfg.train.success_threshold;
    let vanilla = cfg
        .run_vanilla
        .then(|| RateSummary::from_results(trials.iter().filter_map(|t| t.vanilla.as_ref()), threshold));
    let node = cfg
        .run_node
        .then(|| RateSummary::from_results(trials.iter().filter_map(|t| t.node.as_ref()), threshold));
    Ok(HarnessReport {
        family: cfg.family,
        num_sites: cfg.num_sites,
        trials,
        vanilla,
        node,
    })
}
