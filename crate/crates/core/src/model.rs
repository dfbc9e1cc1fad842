//! Vanilla and hybrid (Ansatz + MLP) vector fields and their integration.
//!
//! The hybrid field is `dψ/dt = -i (H_A(θ) ψ + NN(ψ; φ))`, where the network
//! reads and writes the interleaved real view of `ψ`. With the network
//! switched off the field is exactly the vanilla `-i H_A(θ) ψ`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{kernels, ParamLayout, ParamVector, Tape, Var};
use crate::dynamics::{integrate, IntegratorConfig, Rk3System};
use crate::error::{check_dim, Error, Result};
use crate::pauli::{Ansatz, HamiltonianFamily};
use crate::statevec::StateVector;

pub const THETA_SEGMENT: &str = "theta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Full widths, input and output included; both ends equal `2 · 2^N`.
    pub layer_widths: Vec<usize>,
    pub weight_decay: f64,
}

impl MlpSpec {
    /// `[2·2^N, 64, 64, 2·2^N]` with weight decay `1e-3`.
    pub fn default_for(n: usize) -> Self {
        Self::with_hidden(n, &[64, 64], 1e-3)
    }

    pub fn with_hidden(n: usize, hidden: &[usize], weight_decay: f64) -> Self {
        let io = 2 << n;
        let mut layer_widths = vec![io];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(io);
        Self {
            layer_widths,
            weight_decay,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let io = 2 << n;
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(Error::invalid("MLP needs at least one hidden layer"));
        }
        if w[0] != io || w[w.len() - 1] != io {
            return Err(Error::invalid(format!("MLP input and output widths must be {io}")));
        }
        if w.contains(&0) {
            return Err(Error::invalid("MLP layer widths must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    weights: usize,
    bias: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    ansatz: Ansatz,
    mlp: Option<MlpSpec>,
    layers: Vec<Layer>,
    layout: ParamLayout,
    /// Include the network in forward and backward passes.
    pub nn_enabled: bool,
    /// Keep `θ` fixed during optimizer steps.
    pub theta_frozen: bool,
}

impl HybridModel {
    /// Ansatz plus MLP; parameters are laid out as `theta` then, per layer,
    /// `w{k}` (row-major) and `b{k}`.
    pub fn hybrid(family: HamiltonianFamily, n: usize, mlp: MlpSpec) -> Result<Self> {
        mlp.validate(n)?;
        Self::build(Ansatz::new(family, n)?, Some(mlp))
    }

    /// Ansatz-only model; it has no network parameters at all.
    pub fn vanilla(family: HamiltonianFamily, n: usize) -> Result<Self> {
        Self::build(Ansatz::new(family, n)?, None)
    }

    pub fn from_ansatz(ansatz: Ansatz, mlp: Option<MlpSpec>) -> Result<Self> {
        if let Some(m) = &mlp {
            m.validate(ansatz.num_sites())?;
        }
        Self::build(ansatz, mlp)
    }

    fn build(ansatz: Ansatz, mlp: Option<MlpSpec>) -> Result<Self> {
        let mut layout = ParamLayout::new();
        layout.push(THETA_SEGMENT, ansatz.num_params());
        let mut layers = Vec::new();
        if let Some(spec) = &mlp {
            for (k, pair) in spec.layer_widths.windows(2).enumerate() {
                let (cols, rows) = (pair[0], pair[1]);
                let weights = layout.push(format!("w{k}"), rows * cols);
                let bias = layout.push(format!("b{k}"), rows);
                layers.push(Layer {
                    weights,
                    bias,
                    rows,
                    cols,
                });
            }
        }
        let nn_enabled = mlp.is_some();
        Ok(Self {
            ansatz,
            mlp,
            layers,
            layout,
            nn_enabled,
            theta_frozen: false,
        })
    }

    pub fn ansatz(&self) -> &Ansatz {
        &self.ansatz
    }

    pub fn family(&self) -> HamiltonianFamily {
        self.ansatz.family()
    }

    pub fn num_sites(&self) -> usize {
        self.ansatz.num_sites()
    }

    pub fn mlp(&self) -> Option<&MlpSpec> {
        self.mlp.as_ref()
    }

    pub fn has_network(&self) -> bool {
        self.mlp.is_some()
    }

    /// Whether the network actually contributes to the field.
    pub fn network_active(&self) -> bool {
        self.nn_enabled && self.mlp.is_some()
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_theta(&self) -> usize {
        self.ansatz.num_params()
    }

    /// Index range of the network parameters `φ`.
    pub fn phi_range(&self) -> std::ops::Range<usize> {
        self.num_theta()..self.layout.len()
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout != self.layout {
            return Err(Error::Layout("parameter layout does not match the model".into()));
        }
        Ok(())
    }

    /// Zero parameters for this layout.
    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout.clone())
    }

    /// `θ` as given, weights `U(-1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<ParamVector> {
        if theta.len() != self.num_theta() {
            return Err(Error::ParamCount {
                family: self.family().to_string(),
                sites: self.num_sites(),
                expected: self.num_theta(),
                found: theta.len(),
            });
        }
        let mut p = self.zero_params();
        p.values[..theta.len()].copy_from_slice(theta);
        for layer in &self.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut p.values[layer.weights..layer.weights + layer.rows * layer.cols] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// Records `dψ/dt` for the state node `psi`.
    pub fn record_field<'a>(&'a self, tape: &mut Tape<'a>, psi: Var) -> Var {
        let h = tape.pauli_sum(&self.ansatz, 0, psi);
        let total = if self.network_active() {
            let nn = self.record_mlp(tape, psi);
            tape.lincomb(&[(1.0, h), (1.0, nn)])
        } else {
            h
        };
        tape.scale_neg_i(total)
    }

    fn record_mlp<'a>(&'a self, tape: &mut Tape<'a>, input: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut x = input;
        for (k, l) in self.layers.iter().enumerate() {
            x = tape.affine(x, l.weights, l.bias, l.rows);
            if k != last {
                x = tape.tanh(x);
            }
        }
        x
    }

    /// Tape-free network evaluation on the interleaved real view.
    pub fn mlp_forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let last = self.layers.len().saturating_sub(1);
        let mut x = input.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.rows];
            kernels::affine(
                &params[l.weights..l.weights + l.rows * l.cols],
                &params[l.bias..l.bias + l.rows],
                &x,
                &mut y,
            );
            if k != last {
                kernels::tanh_in_place(&mut y);
            }
            x = y;
        }
        x
    }

    /// Tape-free `dψ/dt` on raw amplitudes.
    pub fn eval_field(&self, params: &[f64], psi: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        self.ansatz.accumulate(&params[..self.num_theta()], psi, out);
        if self.network_active() {
            let nn = self.mlp_forward(params, bytemuck::cast_slice(psi));
            let nn: &[Complex64] = bytemuck::cast_slice(&nn);
            for (o, v) in out.iter_mut().zip(nn) {
                *o += v;
            }
        }
        kernels::scale_neg_i_in_place(bytemuck::cast_slice_mut(out));
    }

    pub fn vector_field(&self, psi: &StateVector, params: &ParamVector) -> Result<StateVector> {
        self.check_params(params)?;
        check_dim(self.num_sites(), psi.num_sites())?;
        let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
        self.eval_field(&params.values, psi.amplitudes(), &mut out);
        StateVector::from_amplitudes(out)
    }

    /// `weight_decay · Σ φ²`; zero while the network is off.
    pub fn regularization(&self, params: &ParamVector) -> f64 {
        match self.mlp.as_ref().filter(|_| self.nn_enabled) {
            Some(spec) => spec.weight_decay * params.values[self.phi_range()].iter().map(|x| x * x).sum::<f64>(),
            None => 0.0,
        }
    }

    /// Records the regularizer when the network is active.
    pub fn record_regularization(&self, tape: &mut Tape<'_>) -> Option<Var> {
        let spec = self.mlp.as_ref().filter(|_| self.nn_enabled)?;
        let range = self.phi_range();
        let phi = tape.param(range.start, range.len());
        Some(tape.sum_squares(phi, spec.weight_decay))
    }

    /// Integrated states at each time in `t_grid` (tape-free).
    pub fn predict_states(
        &self,
        psi0: &StateVector,
        t_grid: &[f64],
        cfg: &IntegratorConfig,
        params: &ParamVector,
    ) -> Result<Prediction> {
        self.check_params(params)?;
        check_dim(self.num_sites(), psi0.num_sites())?;
        let mut sys = PlainModelSystem {
            model: self,
            params: &params.values,
            max_norm_drift: 0.0,
        };
        let states = integrate(&mut sys, psi0.amplitudes().to_vec(), t_grid, cfg)
            .map_err(|e| with_snapshot(e, &params.values))?;
        Ok(Prediction {
            states: states
                .into_iter()
                .map(StateVector::from_amplitudes)
                .collect::<Result<_>>()?,
            max_norm_drift: sys.max_norm_drift,
        })
    }

    /// Records the integration on `tape`; returns one state node per time.
    pub fn record_prediction<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        psi0: &StateVector,
        t_grid: &[f64],
        cfg: &IntegratorConfig,
    ) -> Result<(Vec<Var>, f64)> {
        check_dim(self.num_sites(), psi0.num_sites())?;
        let start = tape.constant(psi0.as_real_slice().to_vec());
        let mut sys = TapeSystem {
            model: self,
            tape,
            max_norm_drift: 0.0,
        };
        let vars = integrate(&mut sys, start, t_grid, cfg)?;
        let drift = sys.max_norm_drift;
        Ok((vars, drift))
    }
}

/// Short content hash of a parameter vector, used to tag diagnostics.
pub fn snapshot_id(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

pub(crate) fn with_snapshot(e: Error, values: &[f64]) -> Error {
    match e {
        Error::Divergence { step, snapshot: None } => Error::Divergence {
            step,
            snapshot: Some(snapshot_id(values)),
        },
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub states: Vec<StateVector>,
    pub max_norm_drift: f64,
}

fn drift_of(amps: &[Complex64]) -> Option<f64> {
    let mut n = 0.0;
    for a in amps {
        if !(a.re.is_finite() && a.im.is_finite()) {
            return None;
        }
        n += a.norm_sqr();
    }
    Some((f64::sqrt(n) - 1.0).abs())
}

struct PlainModelSystem<'a> {
    model: &'a HybridModel,
    params: &'a [f64],
    max_norm_drift: f64,
}

impl Rk3System for PlainModelSystem<'_> {
    type State = Vec<Complex64>;

    fn field(&mut self, state: &Self::State) -> Result<Self::State> {
        let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
        self.model.eval_field(self.params, state, &mut out);
        Ok(out)
    }

    fn combine(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State> {
        let mut out = vec![Complex64::new(0.0, 0.0); terms[0].1.len()];
        for (c, x) in terms {
            for (o, v) in out.iter_mut().zip(x.iter()) {
                *o += v * c;
            }
        }
        Ok(out)
    }

    fn after_step(&mut self, state: &Self::State, step: usize) -> Result<()> {
        let d = drift_of(state).ok_or(Error::Divergence { step, snapshot: None })?;
        self.max_norm_drift = self.max_norm_drift.max(d);
        Ok(())
    }
}

struct TapeSystem<'a, 't> {
    model: &'a HybridModel,
    tape: &'t mut Tape<'a>,
    max_norm_drift: f64,
}

impl Rk3System for TapeSystem<'_, '_> {
    type State = Var;

    fn field(&mut self, state: &Var) -> Result<Var> {
        Ok(self.model.record_field(self.tape, *state))
    }

    fn combine(&mut self, terms: &[(f64, &Var)]) -> Result<Var> {
        let terms: Vec<(f64, Var)> = terms.iter().map(|(c, v)| (*c, **v)).collect();
        Ok(self.tape.lincomb(&terms))
    }

    fn after_step(&mut self, state: &Var, step: usize) -> Result<()> {
        let amps: &[Complex64] = bytemuck::cast_slice(self.tape.value(*state));
        let d = drift_of(amps).ok_or_else(|| Error::Divergence {
            step,
            snapshot: Some(snapshot_id(self.tape.params())),
        })?;
        self.max_norm_drift = self.max_norm_drift.max(d);
        Ok(())
    }
}

/// On-disk model: structure, flags and full-precision parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: HamiltonianFamily,
    pub num_sites: usize,
    pub mlp: Option<MlpSpec>,
    pub nn_enabled: bool,
    pub theta_frozen: bool,
    pub params: ParamVector,
}

impl ModelFile {
    pub fn capture(model: &HybridModel, params: &ParamVector) -> Result<Self> {
        model.check_params(params)?;
        Ok(Self {
            family: model.family(),
            num_sites: model.num_sites(),
            mlp: model.mlp.clone(),
            nn_enabled: model.nn_enabled,
            theta_frozen: model.theta_frozen,
            params: params.clone(),
        })
    }

    pub fn restore(&self) -> Result<(HybridModel, ParamVector)> {
        let mut model = match &self.mlp {
            Some(spec) => HybridModel::hybrid(self.family, self.num_sites, spec.clone())?,
            None => HybridModel::vanilla(self.family, self.num_sites)?,
        };
        model.nn_enabled = self.nn_enabled;
        model.theta_frozen = self.theta_frozen;
        let params = ParamVector::new(self.params.values.clone(), self.params.layout.clone())?;
        model.check_params(&params)?;
        Ok((model, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::exact_evolve;
    use crate::pauli::build_hamiltonian;
    use crate::statevec::fidelity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
        let amps: Vec<Complex64> = (0..1 << n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).unwrap()
    }

    /// Straightforward matrix-vector MLP written independently of the kernels.
    fn reference_mlp(widths: &[usize], params: &[f64], offset: usize, x: &[f64]) -> Vec<f64> {
        let mut cursor = offset;
        let mut act = x.to_vec();
        for (k, pair) in widths.windows(2).enumerate() {
            let (cols, rows) = (pair[0], pair[1]);
            let w = &params[cursor..cursor + rows * cols];
            cursor += rows * cols;
            let b = &params[cursor..cursor + rows];
            cursor += rows;
            let mut next = vec![0.0; rows];
            for r in 0..rows {
                let mut s = b[r];
                for c in 0..cols {
                    s += w[r * cols + c] * act[c];
                }
                next[r] = if k + 2 < widths.len() { s.tanh() } else { s };
            }
            act = next;
        }
        act
    }

    #[test]
    fn vanilla_field_on_z_eigenstate() {
        let model = HybridModel::vanilla(HamiltonianFamily::Heisenberg, 2).unwrap();
        // Jz = 1, everything else 0: ZZ|00⟩ = |00⟩
        let mut p = model.zero_params();
        p.values[2] = 1.0;
        let psi = StateVector::basis_state(2, 0).unwrap();
        let f = model.vector_field(&psi, &p).unwrap();
        assert_eq!(f.amplitudes()[0], Complex64::new(0.0, -1.0));
        assert!(f.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn zero_network_equals_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hybrid = HybridModel::hybrid(HamiltonianFamily::Pxp, 3, MlpSpec::default_for(3)).unwrap();
        let vanilla = HybridModel::vanilla(HamiltonianFamily::Pxp, 3).unwrap();
        let mut ph = hybrid.zero_params();
        ph.values[0] = 0.8;
        let mut pv = vanilla.zero_params();
        pv.values[0] = 0.8;
        let psi = random_state(&mut rng, 3);
        assert_eq!(
            hybrid.vector_field(&psi, &ph).unwrap(),
            vanilla.vector_field(&psi, &pv).unwrap()
        );
    }

    #[test]
    fn hybrid_field_matches_independent_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::with_hidden(2, &[7, 5], 1e-3);
        let model = HybridModel::hybrid(HamiltonianFamily::Heisenberg, 2, spec.clone()).unwrap();
        let theta: Vec<f64> = (0..model.num_theta()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = model.init_params(&theta, &mut rng).unwrap();
        for v in &mut p.values[model.phi_range()] {
            *v = rng.random_range(-1.0..1.0);
        }
        let psi = random_state(&mut rng, 2);
        let got = model.vector_field(&psi, &p).unwrap();

        let h = build_hamiltonian(HamiltonianFamily::Heisenberg, 2, &theta).unwrap();
        let hpsi = crate::pauli::apply_hamiltonian(&h, &psi).unwrap();
        let nn = reference_mlp(&spec.layer_widths, &p.values, model.num_theta(), psi.as_real_slice());
        for (k, g) in got.amplitudes().iter().enumerate() {
            let total = hpsi.amplitudes()[k] + Complex64::new(nn[2 * k], nn[2 * k + 1]);
            let want = Complex64::new(0.0, -1.0) * total;
            assert!((g - want).norm() < 1e-13, "{g} vs {want}");
        }
    }

    #[test]
    fn disabled_network_is_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = HybridModel::hybrid(HamiltonianFamily::Pxp, 3, MlpSpec::default_for(3)).unwrap();
        let p = model.init_params(&[0.5], &mut rng).unwrap();
        let vanilla = HybridModel::vanilla(HamiltonianFamily::Pxp, 3).unwrap();
        let mut pv = vanilla.zero_params();
        pv.values[0] = 0.5;
        model.nn_enabled = false;
        let psi = random_state(&mut rng, 3);
        assert_eq!(
            model.vector_field(&psi, &p).unwrap(),
            vanilla.vector_field(&psi, &pv).unwrap()
        );
    }

    #[test]
    fn zero_model_is_stationary() {
        let model = HybridModel::hybrid(HamiltonianFamily::Pxp, 3, MlpSpec::default_for(3)).unwrap();
        let p = model.zero_params();
        let psi0 = StateVector::from_bitstring("010").unwrap();
        let pred = model
            .predict_states(&psi0, &[0.2, 1.0], &IntegratorConfig::default(), &p)
            .unwrap();
        assert!(pred.states.iter().all(|s| *s == psi0));
    }

    #[test]
    fn ground_truth_vanilla_tracks_exact_evolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vanilla = HybridModel::vanilla(HamiltonianFamily::Heisenberg, 3).unwrap();
        let mut pv = vanilla.zero_params();
        pv.values.copy_from_slice(&theta);
        let hybrid = HybridModel::hybrid(HamiltonianFamily::Heisenberg, 3, MlpSpec::default_for(3)).unwrap();
        let mut ph = hybrid.zero_params();
        ph.values[..6].copy_from_slice(&theta);

        let psi0 = StateVector::from_bitstring("011").unwrap();
        let cfg = IntegratorConfig::default();
        let a = vanilla.predict_states(&psi0, &[1.0], &cfg, &pv).unwrap();
        let b = hybrid.predict_states(&psi0, &[1.0], &cfg, &ph).unwrap();
        let h = build_hamiltonian(HamiltonianFamily::Heisenberg, 3, &theta).unwrap();
        let exact = exact_evolve(&h, &psi0, 1.0).unwrap();
        assert!(fidelity(&a.states[0], &exact).unwrap() >= 1.0 - 1e-6);
        assert_eq!(a.states, b.states);
        assert!(a.max_norm_drift <= 1e-6);
    }

    #[test]
    fn tape_forward_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = HybridModel::hybrid(HamiltonianFamily::DenseNn, 2, MlpSpec::default_for(2)).unwrap();
        let theta: Vec<f64> = (0..model.num_theta()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = model.init_params(&theta, &mut rng).unwrap();
        let psi0 = StateVector::from_bitstring("10").unwrap();
        let cfg = IntegratorConfig::with_dt(0.05);
        let times = [0.2, 0.4];
        let direct = model.predict_states(&psi0, &times, &cfg, &p).unwrap();
        let mut tape = Tape::new(&p.values);
        let (vars, _) = model.record_prediction(&mut tape, &psi0, &times, &cfg).unwrap();
        for (v, s) in vars.iter().zip(&direct.states) {
            for (a, b) in tape.value(*v).iter().zip(s.as_real_slice()) {
                assert!((a - b).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn regularization_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = HybridModel::hybrid(HamiltonianFamily::Heisenberg, 2, MlpSpec::with_hidden(2, &[1], 0.0)).unwrap();
        let p = model.init_params(&[0.5; 5], &mut rng).unwrap();
        assert_eq!(model.regularization(&p), 0.0);
        let m2 = HybridModel::hybrid(HamiltonianFamily::Heisenberg, 2, MlpSpec::with_hidden(2, &[1], 0.1)).unwrap();
        let mut p = m2.zero_params();
        let r = m2.phi_range();
        p.values[r.start] = 1.0;
        p.values[r.start + 1] = -1.0;
        assert!((m2.regularization(&p) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn regularization_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = HybridModel::hybrid(HamiltonianFamily::Heisenberg, 2, MlpSpec::with_hidden(2, &[3], 0.25)).unwrap();
        let p = model.init_params(&[0.1; 5], &mut rng).unwrap();
        let mut tape = Tape::new(&p.values);
        let reg = model.record_regularization(&mut tape).unwrap();
        assert!((tape.scalar(reg) - model.regularization(&p)).abs() < 1e-15);
        let grad = tape.backward(reg).unwrap();
        for k in model.phi_range() {
            let h = 1e-6;
            let mut up = p.clone();
            up.values[k] += h;
            let mut down = p.clone();
            down.values[k] -= h;
            let fd = (model.regularization(&up) - model.regularization(&down)) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-8);
            assert!((grad[k] - 2.0 * 0.25 * p.values[k]).abs() < 1e-15);
        }
        assert!(grad[..5].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn vanilla_field_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = HybridModel::vanilla(HamiltonianFamily::ThirdOrderHeisenberg, 3).unwrap();
        let mut p = model.zero_params();
        p.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let a = random_state(&mut rng, 3);
        let b = random_state(&mut rng, 3);
        let (alpha, beta) = (Complex64::new(0.3, -1.1), Complex64::new(-0.7, 0.2));
        let mix: Vec<Complex64> = a
            .amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        let lhs = model
            .vector_field(&StateVector::from_amplitudes(mix).unwrap(), &p)
            .unwrap();
        let fa = model.vector_field(&a, &p).unwrap();
        let fb = model.vector_field(&b, &p).unwrap();
        for k in 0..8 {
            let rhs = alpha * fa.amplitudes()[k] + beta * fb.amplitudes()[k];
            assert!((lhs.amplitudes()[k] - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let model = HybridModel::vanilla(HamiltonianFamily::Pxp, 3).unwrap();
        let other = HybridModel::vanilla(HamiltonianFamily::Pxp, 4).unwrap();
        let psi = StateVector::basis_state(3, 0).unwrap();
        assert!(matches!(
            model.vector_field(&psi, &other.zero_params()),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = HybridModel::hybrid(HamiltonianFamily::Pxp, 3, MlpSpec::with_hidden(3, &[4], 1e-3)).unwrap();
        let p = model.init_params(&[0.123456789], &mut rng).unwrap();
        let file = ModelFile::capture(&model, &p).unwrap();
        let json = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        let (m2, p2) = back.restore().unwrap();
        assert_eq!(m2, model);
        assert!(p.values.iter().zip(&p2.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
