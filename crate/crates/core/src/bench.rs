//! Evaluation instruments: extrapolation infidelity curves, power-law fits,
//! measurement-budget sweeps and loss-landscape scans.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamVector;
use crate::data::CountTable;
use crate::dynamics::{ExactPropagator, IntegratorConfig};
use crate::error::{Error, Result};
use crate::model::{snapshot_id, HybridModel};
use crate::pauli::PauliSumHamiltonian;
use crate::seeds::{self, stream};
use crate::statevec::{fidelity, format_bitstring, StateVector};
use crate::train::{
    curriculum1_stages, initial_params, success_rate_harness, HarnessConfig, RateSummary, Schedule, StageKind,
    TrainConfig, Trainer,
};

/// Infidelity at which the 1% error boundary is drawn.
pub const ERROR_BOUNDARY: f64 = 1e-2;

/// `points` values from `start` to `end` with constant ratio.
pub fn geometric_grid(start: f64, end: f64, points: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > start && points >= 2) {
        return Err(Error::invalid(
            "geometric grid needs 0 < start < end and at least 2 points",
        ));
    }
    let ratio = (end / start).ln() / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|k| start * (ratio * k as f64).exp()).collect();
    grid[points - 1] = end;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolationConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub num_test_states: usize,
    /// Largest time seen in training; `t_max` must exceed it.
    pub training_horizon: f64,
    /// Permit test states that were also used in training.
    pub allow_reuse: bool,
    pub seed: u64,
    pub integrator: IntegratorConfig,
}

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        Self {
            t_min: 0.2,
            t_max: 20.0,
            points: 40,
            num_test_states: 5,
            training_horizon: 1.0,
            allow_reuse: false,
            seed: 0,
            integrator: IntegratorConfig::with_dt(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub infidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationCurve {
    pub points: Vec<CurvePoint>,
    pub test_states: Vec<String>,
    pub reused_training_states: bool,
}

/// Picks `count` basis states avoiding `exclude` where possible.
pub fn pick_test_states(
    n: usize,
    exclude: &[u64],
    count: usize,
    allow_reuse: bool,
    seed: u64,
) -> Result<(Vec<u64>, bool)> {
    let dim = 1usize << n;
    if count == 0 || count > dim {
        return Err(Error::invalid(format!(
            "cannot draw {count} distinct states from {dim}"
        )));
    }
    let unseen: Vec<u64> = (0..dim as u64).filter(|i| !exclude.contains(i)).collect();
    let mut rng = seeds::rng(seed, stream::TEST_STATES);
    if unseen.len() >= count {
        let picked = index::sample(&mut rng, unseen.len(), count)
            .into_iter()
            .map(|i| unseen[i])
            .collect();
        return Ok((picked, false));
    }
    if !allow_reuse {
        return Err(Error::invalid(format!(
            "only {} unseen basis states for {count} test states; enable reuse to continue",
            unseen.len()
        )));
    }
    log::warn!("reusing training states: {} unseen for {count} requested", unseen.len());
    let mut picked = unseen;
    let seen: Vec<u64> = (0..dim as u64).filter(|i| exclude.contains(i)).collect();
    let extra = index::sample(&mut rng, seen.len(), count - picked.len());
    picked.extend(extra.into_iter().map(|i| seen[i]));
    Ok((picked, true))
}

/// Mean `1 − |⟨ψ_true(t)|ψ_model(t)⟩|²` over unseen basis states, with
/// `t = 0` prepended.
pub fn extrapolation_curve(
    model: &HybridModel,
    params: &ParamVector,
    truth: &PauliSumHamiltonian,
    training_states: &[u64],
    cfg: &ExtrapolationConfig,
) -> Result<ExtrapolationCurve> {
    if !(cfg.t_max > cfg.training_horizon) {
        return Err(Error::invalid("extrapolation must extend past the training horizon"));
    }
    let n = model.num_sites();
    let (states, reused) = pick_test_states(n, training_states, cfg.num_test_states, cfg.allow_reuse, cfg.seed)?;
    let grid = geometric_grid(cfg.t_min, cfg.t_max, cfg.points)?;
    let propagator = ExactPropagator::new(truth)?;

    let per_state = states
        .par_iter()
        .map(|&s| {
            let psi0 = StateVector::basis_state(n, s)?;
            let pred = model.predict_states(&psi0, &grid, &cfg.integrator, params)?;
            grid.iter()
                .zip(&pred.states)
                .map(|(&t, psi)| Ok(1.0 - fidelity(&propagator.propagate(&psi0, t)?, psi)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = vec![CurvePoint {
        t: 0.0,
        infidelity: 0.0,
    }];
    for (k, &t) in grid.iter().enumerate() {
        let mean = per_state.iter().map(|v| v[k]).sum::<f64>() / per_state.len() as f64;
        points.push(CurvePoint { t, infidelity: mean });
    }
    Ok(ExtrapolationCurve {
        points,
        test_states: states.iter().map(|&s| format_bitstring(s, n)).collect(),
        reused_training_states: reused,
    })
}

/// `1 − F = A t^b` fitted by ordinary least squares in log–log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    #[serde(rename = "A")]
    pub a: f64,
    pub b: f64,
    #[serde(rename = "stderr_A")]
    pub stderr_a: f64,
    pub stderr_b: f64,
    pub t_range: (f64, f64),
    pub num_points: usize,
    /// Where the fitted curve reaches [`ERROR_BOUNDARY`].
    pub crossing_time: Option<f64>,
}

impl PowerLawFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.a * t.powf(self.b)
    }
}

/// Fits points with `t` in `window`; non-positive infidelities are dropped.
pub fn fit_power_law(curve: &[CurvePoint], window: (f64, f64)) -> Result<PowerLawFit> {
    let inside: Vec<&CurvePoint> = curve
        .iter()
        .filter(|p| p.t >= window.0 && p.t <= window.1 && p.t > 0.0)
        .collect();
    let kept: Vec<(f64, f64)> = inside
        .iter()
        .filter(|p| p.infidelity > 0.0 && p.infidelity.is_finite())
        .map(|p| (p.t.ln(), p.infidelity.ln()))
        .collect();
    if kept.len() < inside.len() {
        log::warn!(
            "dropped {} non-positive infidelities from the fit",
            inside.len() - kept.len()
        );
    }
    let n = kept.len();
    if n < 3 {
        return Err(Error::Fit(format!("{n} usable points in window, need at least 3")));
    }
    let nf = n as f64;
    let mean_x = kept.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = kept.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all times coincide".into()));
    }
    let b = sxy / sxx;
    let intercept = mean_y - b * mean_x;
    let ssr: f64 = kept.iter().map(|p| (p.1 - intercept - b * p.0).powi(2)).sum();
    let s2 = ssr / (nf - 2.0);
    let stderr_b = (s2 / sxx).sqrt();
    let stderr_intercept = (s2 * (1.0 / nf + mean_x * mean_x / sxx)).sqrt();
    let a = intercept.exp();
    let crossing_time = (b != 0.0)
        .then(|| (ERROR_BOUNDARY / a).powf(1.0 / b))
        .filter(|t| t.is_finite());
    let t_lo = kept.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).exp();
    let t_hi = kept.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).exp();
    Ok(PowerLawFit {
        a,
        b,
        stderr_a: a * stderr_intercept,
        stderr_b,
        t_range: (t_lo, t_hi),
        num_points: n,
        crossing_time,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_bases: usize,
    pub num_records: usize,
    pub summary: RateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Smallest `K` with success rate at least one half.
    pub threshold_bases: Option<usize>,
}

/// Success-rate harness per `K`, every other dataset field held fixed. The
/// neural ODE learner is reported when enabled, otherwise the vanilla one.
pub fn pauli_budget_sweep(base: &HarnessConfig, k_values: &[usize]) -> Result<SweepReport> {
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::invalid("K values must be non-empty and positive"));
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::new();
    for k in ks {
        let mut cfg = base.clone();
        cfg.dataset.num_bases = k;
        let report = success_rate_harness(&cfg)?;
        let summary = report
            .node
            .or(report.vanilla)
            .expect("harness runs at least one learner");
        let num_records = cfg.dataset.spec(cfg.family, cfg.num_sites, 0).cardinality();
        rows.push(SweepRow {
            num_bases: k,
            num_records,
            summary,
        });
    }
    let threshold_bases = rows.iter().find(|r| r.summary.success_rate >= 0.5).map(|r| r.num_bases);
    Ok(SweepReport { rows, threshold_bases })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub extent: f64,
    pub resolution: usize,
    pub seed: u64,
    pub integrator: IntegratorConfig,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            extent: 1.0,
            resolution: 21,
            seed: 0,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl LandscapeConfig {
    fn validate(&self) -> Result<()> {
        if self.resolution < 3 || self.resolution.is_multiple_of(2) {
            return Err(Error::invalid("resolution must be odd and at least 3"));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::invalid("extent must be positive"));
        }
        Ok(())
    }

    /// Evenly spaced offsets in `[-extent, extent]`; the middle one is 0.
    pub fn offsets(&self) -> Vec<f64> {
        let half = (self.resolution / 2) as f64;
        (0..self.resolution)
            .map(|i| self.extent * (i as f64 - half) / half)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeScan {
    pub model_kind: String,
    pub center: Vec<f64>,
    /// Hash of the network parameters held fixed during the scan.
    pub phi_snapshot: Option<String>,
    pub directions: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    /// Row `i` is the first offset, column `j` the second (row-major).
    pub values: Vec<f64>,
    /// Strict interior minima over the 8-neighbourhood (1-D: 2 neighbours).
    pub local_minima: usize,
    /// Interior minima along each axis slice through the centre.
    pub axis_slice_minima: Vec<usize>,
}

impl LandscapeScan {
    pub fn resolution(&self) -> usize {
        self.offsets.len()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution() + j]
    }

    pub fn center_value(&self) -> f64 {
        let c = self.resolution() / 2;
        if self.directions.len() == 1 {
            self.values[c]
        } else {
            self.value(c, c)
        }
    }
}

/// Up to `count` orthonormal Gaussian directions (Gram–Schmidt), retrying
/// near-degenerate draws.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return Err(Error::invalid(format!(
            "{count} orthogonal directions in a {dim}-dimensional space"
        )));
    }
    let mut rng = seeds::rng(seed, stream::LANDSCAPE);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while dirs.len() < count {
        attempts += 1;
        if attempts > 64 {
            return Err(Error::Numeric("could not draw independent directions".into()));
        }
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for d in &dirs {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        dirs.push(v);
    }
    Ok(dirs)
}

fn interior_minima_1d(values: &[f64]) -> usize {
    values.windows(3).filter(|w| w[1] < w[0] && w[1] < w[2]).count()
}

fn interior_minima_2d(values: &[f64], res: usize) -> usize {
    let mut count = 0;
    for i in 1..res - 1 {
        for j in 1..res - 1 {
            let v = values[i * res + j];
            let lowest = (-1i64..=1)
                .flat_map(|di| (-1i64..=1).map(move |dj| (di, dj)))
                .filter(|&d| d != (0, 0))
                .all(|(di, dj)| v < values[(i as i64 + di) as usize * res + (j as i64 + dj) as usize]);
            if lowest {
                count += 1;
            }
        }
    }
    count
}

/// Loss on `θ = center + α d₁ + β d₂` with the network part of `center`
/// fixed. A one-dimensional `θ`-space is scanned along its single axis.
pub fn landscape_scan(
    model: &HybridModel,
    center: &ParamVector,
    table: &CountTable,
    cfg: &LandscapeConfig,
) -> Result<LandscapeScan> {
    cfg.validate()?;
    model.check_params(center)?;
    let dim = model.num_theta();
    if dim == 0 {
        return Err(Error::invalid("model has no Ansatz parameters"));
    }
    let directions = random_directions(dim, dim.min(2), cfg.seed)?;
    let offsets = cfg.offsets();
    let res = offsets.len();
    let cells: Vec<Vec<f64>> = if directions.len() == 1 {
        offsets.iter().map(|&a| vec![a]).collect()
    } else {
        offsets
            .iter()
            .flat_map(|&a| offsets.iter().map(move |&b| vec![a, b]))
            .collect()
    };
    let values = cells
        .par_iter()
        .map(|coef| {
            let mut p = center.clone();
            for (c, d) in coef.iter().zip(&directions) {
                for (x, dx) in p.values[..dim].iter_mut().zip(d) {
                    *x += c * dx;
                }
            }
            crate::train::nll_loss(model, &p, table, &cfg.integrator)
        })
        .collect::<Result<Vec<f64>>>()?;

    let (local_minima, axis_slice_minima) = if directions.len() == 1 {
        let m = interior_minima_1d(&values);
        (m, vec![m])
    } else {
        let c = res / 2;
        let row: Vec<f64> = (0..res).map(|j| values[c * res + j]).collect();
        let col: Vec<f64> = (0..res).map(|i| values[i * res + c]).collect();
        (
            interior_minima_2d(&values, res),
            vec![interior_minima_1d(&col), interior_minima_1d(&row)],
        )
    };
    Ok(LandscapeScan {
        model_kind: if model.network_active() { "hybrid" } else { "vanilla" }.into(),
        center: center.values[..dim].to_vec(),
        phi_snapshot: model
            .network_active()
            .then(|| snapshot_id(&center.values[model.phi_range()])),
        directions,
        offsets,
        values,
        local_minima,
        axis_slice_minima,
    })
}

/// Centre for a hybrid scan: `θ` at the ground truth and `φ` taken from a
/// warm-up run started there.
pub fn warmed_up_center(
    model: &HybridModel,
    truth: &[f64],
    table: &CountTable,
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    let mut params = initial_params(model, cfg.theta_init, cfg.seed)?;
    params.values[..truth.len()].copy_from_slice(truth);
    let stages: Vec<_> = curriculum1_stages(model, cfg)
        .into_iter()
        .filter(|s| s.kind == StageKind::Warmup)
        .collect();
    let mut trainer = Trainer::new(model.clone(), params, table, cfg.clone(), Schedule::Curriculum1, stages)?;
    trainer.run()?;
    let (_, mut warmed) = trainer.into_params();
    warmed.values[..truth.len()].copy_from_slice(truth);
    Ok(warmed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{build_hamiltonian, HamiltonianFamily};

    fn synthetic(a: f64, b: f64, ts: &[f64]) -> Vec<CurvePoint> {
        ts.iter()
            .map(|&t| CurvePoint {
                t,
                infidelity: a * t.powf(b),
            })
            .collect()
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let grid = geometric_grid(0.2, 20.0, 40).unwrap();
        let fit = fit_power_law(&synthetic(2.0, 1.5, &grid), (1.0, 20.0)).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-10 && (fit.b - 1.5).abs() < 1e-10);
        assert!(fit.stderr_a < 1e-10 && fit.stderr_b < 1e-10);
        let cross = fit.crossing_time.unwrap();
        assert!((fit.eval(cross) - ERROR_BOUNDARY).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_three_points() {
        let pts = synthetic(1.0, 1.0, &[1.0, 2.0]);
        assert!(matches!(fit_power_law(&pts, (1.0, 20.0)), Err(Error::Fit(_))));
        let mut pts = synthetic(1.0, 1.0, &[1.0, 2.0, 3.0, 4.0]);
        pts[1].infidelity = 0.0;
        pts[2].infidelity = -1e-9;
        assert!(fit_power_law(&pts, (1.0, 20.0)).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = geometric_grid(0.2, 20.0, 40).unwrap();
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.2).abs() < 1e-15 && g[39] == 20.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn directions_are_orthonormal() {
        let d = random_directions(6, 2, 3).unwrap();
        let dot: f64 = d[0].iter().zip(&d[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() <= 1e-10);
        for v in &d {
            assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
        }
        assert!(random_directions(1, 2, 0).is_err());
    }

    #[test]
    fn minima_counts() {
        assert_eq!(interior_minima_1d(&[3.0, 1.0, 2.0, 0.5, 4.0]), 2);
        assert_eq!(interior_minima_1d(&[1.0, 2.0, 3.0]), 0);
        let bowl: Vec<f64> = (0..25)
            .map(|k| ((k / 5) as f64 - 2.0).powi(2) + ((k % 5) as f64 - 2.0).powi(2))
            .collect();
        assert_eq!(interior_minima_2d(&bowl, 5), 1);
    }

    #[test]
    fn offsets_are_centred() {
        let cfg = LandscapeConfig {
            resolution: 5,
            extent: 2.0,
            ..Default::default()
        };
        assert_eq!(cfg.offsets(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!(LandscapeConfig {
            resolution: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn ground_truth_extrapolates_cleanly() {
        let family = HamiltonianFamily::Heisenberg;
        let truth = [0.3, -0.7, 0.5, 0.2, -0.4, 0.9];
        let h = build_hamiltonian(family, 3, &truth).unwrap();
        let model = HybridModel::vanilla(family, 3).unwrap();
        let params = ParamVector::new(truth.to_vec(), model.layout().clone()).unwrap();
        // RK3 loses norm at O(dt³) per unit time; this step keeps t = 20 under 1e-8
        let cfg = ExtrapolationConfig {
            points: 8,
            integrator: IntegratorConfig::with_dt(5e-4),
            ..Default::default()
        };
        let curve = extrapolation_curve(&model, &params, &h, &[0, 1, 2], &cfg).unwrap();
        assert_eq!(curve.points[0].infidelity, 0.0);
        assert!(
            curve.points.iter().all(|p| p.infidelity.abs() <= 1e-8),
            "{:?}",
            curve.points
        );
        assert!(!curve.reused_training_states);
        assert!(curve
            .test_states
            .iter()
            .all(|s| !["000", "001", "010"].contains(&s.as_str())));
    }

    #[test]
    fn test_state_reuse_needs_the_flag() {
        assert!(pick_test_states(2, &[0, 1], 3, false, 0).is_err());
        let (s, reused) = pick_test_states(2, &[0, 1], 3, true, 0).unwrap();
        assert!(reused && s.len() == 3 && s.contains(&2) && s.contains(&3));
    }
}
