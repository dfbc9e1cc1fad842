//! Ground-truth propagation by eigendecomposition and fixed-step RK3.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pauli::{dense_matrix, PauliSumHamiltonian};
use crate::statevec::StateVector;

/// `U(t) = V diag(e^{-iλt}) V†` for a Hermitian `H = V diag(λ) V†`.
#[derive(Debug, Clone)]
pub struct ExactPropagator {
    num_sites: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<Complex64>,
}

impl ExactPropagator {
    pub fn new(h: &PauliSumHamiltonian) -> Result<Self> {
        let m = dense_matrix(h)?;
        Self::from_matrix(h.num_sites(), m)
    }

    pub fn from_matrix(num_sites: usize, m: DMatrix<Complex64>) -> Result<Self> {
        check_dim(1 << num_sites, m.nrows())?;
        let skew = (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if skew > 1e-10 {
            return Err(Error::Numeric(format!(
                "matrix is not Hermitian (max |H - H†| = {skew:e})"
            )));
        }
        let eig = SymmetricEigen::try_new(m, 1e-14, 0)
            .ok_or_else(|| Error::Numeric("eigendecomposition did not converge".into()))?;
        if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite eigenvalue".into()));
        }
        Ok(Self {
            num_sites,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.eigenvectors
    }

    /// `V diag(λ) V†`.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            self.eigenvalues.len(),
            self.eigenvalues.iter().map(|l| Complex64::new(*l, 0.0)),
        ));
        &self.eigenvectors * d * self.eigenvectors.adjoint()
    }

    pub fn propagate(&self, psi: &StateVector, t: f64) -> Result<StateVector> {
        check_dim(self.num_sites, psi.num_sites())?;
        if t == 0.0 {
            return Ok(psi.clone());
        }
        let v = DVector::from_column_slice(psi.amplitudes());
        let mut coeffs = self.eigenvectors.adjoint() * v;
        for (c, l) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c *= Complex64::from_polar(1.0, -l * t);
        }
        let out = &self.eigenvectors * coeffs;
        StateVector::from_amplitudes(out.iter().copied().collect())
    }
}

/// `e^{-iHt} ψ₀`.
pub fn exact_evolve(h: &PauliSumHamiltonian, psi0: &StateVector, t: f64) -> Result<StateVector> {
    ExactPropagator::new(h)?.propagate(psi0, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Method {
    #[default]
    Rk3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            method: Method::Rk3,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            method: Method::Rk3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Step sizes covering `delta`: equal steps when `delta` is a multiple of
/// `dt` (to 1e-9 relative), otherwise full `dt` steps and one shortened one.
pub fn interval_steps(delta: f64, dt: f64) -> Vec<f64> {
    if delta <= 0.0 {
        return Vec::new();
    }
    let k = (delta / dt).round();
    if k >= 1.0 && (k * dt - delta).abs() <= 1e-9 * delta.max(1.0) {
        return vec![delta / k; k as usize];
    }
    let full = (delta / dt).floor() as usize;
    let mut steps = vec![dt; full];
    let rest = delta - full as f64 * dt;
    if rest > 1e-12 {
        steps.push(rest);
    }
    steps
}

/// Minimal algebra the RK3 stepper needs; implemented for plain vectors and
/// for autodiff tape nodes, so one stepper serves prediction and training.
pub trait Rk3System {
    type State: Clone;

    fn field(&mut self, state: &Self::State) -> Result<Self::State>;

    /// `Σ c_i x_i`.
    fn combine(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State>;

    /// Called after every completed step; errors abort the integration.
    fn after_step(&mut self, _state: &Self::State, _step: usize) -> Result<()> {
        Ok(())
    }
}

/// One step of Kutta's third-order method (nodes 0, 1/2, 1; weights 1/6, 2/3, 1/6).
pub fn rk3_step<S: Rk3System>(sys: &mut S, y: &S::State, h: f64) -> Result<S::State> {
    let k1 = sys.field(y)?;
    let y2 = sys.combine(&[(1.0, y), (0.5 * h, &k1)])?;
    let k2 = sys.field(&y2)?;
    let y3 = sys.combine(&[(1.0, y), (-h, &k1), (2.0 * h, &k2)])?;
    let k3 = sys.field(&y3)?;
    sys.combine(&[(1.0, y), (h / 6.0, &k1), (2.0 * h / 3.0, &k2), (h / 6.0, &k3)])
}

/// Integrates from `t = 0` and returns the state at every requested time.
/// `times` must be ascending and non-negative.
pub fn integrate<S: Rk3System>(
    sys: &mut S,
    y0: S::State,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<S::State>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0;
    let mut t_prev = 0.0;
    let mut step = 0usize;
    for &t in times {
        if !(t.is_finite() && t >= t_prev) {
            return Err(Error::invalid(format!(
                "output times must be ascending from 0, got {t} after {t_prev}"
            )));
        }
        for h in interval_steps(t - t_prev, cfg.dt) {
            y = rk3_step(sys, &y, h)?;
            sys.after_step(&y, step)?;
            step += 1;
        }
        out.push(y.clone());
        t_prev = t;
    }
    Ok(out)
}

/// Right-hand side `dψ/dt = f(ψ)` over raw amplitudes.
pub trait VectorField {
    fn eval(&self, psi: &[Complex64], out: &mut [Complex64]);
}

impl<F: Fn(&[Complex64], &mut [Complex64])> VectorField for F {
    fn eval(&self, psi: &[Complex64], out: &mut [Complex64]) {
        self(psi, out)
    }
}

/// `-i H ψ` for a fixed Hamiltonian.
pub struct SchrodingerField<'a>(pub &'a PauliSumHamiltonian);

impl VectorField for SchrodingerField<'_> {
    fn eval(&self, psi: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        self.0.accumulate(psi, out);
        out.iter_mut().for_each(|o| *o = Complex64::new(o.im, -o.re));
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Rk3Stats {
    pub steps: usize,
    pub evaluations: usize,
    /// Largest `|‖ψ‖ - 1|` over all completed steps.
    pub max_norm_drift: f64,
}

struct PlainSystem<'a, F: ?Sized> {
    field: &'a F,
    stats: Rk3Stats,
}

impl<F: VectorField + ?Sized> Rk3System for PlainSystem<'_, F> {
    type State = Vec<Complex64>;

    fn field(&mut self, state: &Self::State) -> Result<Self::State> {
        let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
        self.field.eval(state, &mut out);
        self.stats.evaluations += 1;
        Ok(out)
    }

    fn combine(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State> {
        let mut out = terms[0].1.iter().map(|x| x * terms[0].0).collect::<Vec<_>>();
        for (c, x) in &terms[1..] {
            for (o, v) in out.iter_mut().zip(x.iter()) {
                *o += v * c;
            }
        }
        Ok(out)
    }

    fn after_step(&mut self, state: &Self::State, step: usize) -> Result<()> {
        let mut norm_sqr = 0.0;
        for a in state {
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(Error::Divergence { step, snapshot: None });
            }
            norm_sqr += a.norm_sqr();
        }
        self.stats.steps += 1;
        self.stats.max_norm_drift = self.stats.max_norm_drift.max((norm_sqr.sqrt() - 1.0).abs());
        Ok(())
    }
}

pub fn rk3_evolve<F: VectorField + ?Sized>(
    field: &F,
    psi0: &StateVector,
    t_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<StateVector>> {
    Ok(rk3_evolve_with_stats(field, psi0, t_grid, cfg)?.0)
}

pub fn rk3_evolve_with_stats<F: VectorField + ?Sized>(
    field: &F,
    psi0: &StateVector,
    t_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(Vec<StateVector>, Rk3Stats)> {
    let mut sys = PlainSystem {
        field,
        stats: Rk3Stats::default(),
    };
    let states = integrate(&mut sys, psi0.amplitudes().to_vec(), t_grid, cfg)?;
    let states = states
        .into_iter()
        .map(StateVector::from_amplitudes)
        .collect::<Result<Vec<_>>>()?;
    Ok((states, sys.stats))
}
