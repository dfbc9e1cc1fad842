//! State vectors, Pauli-basis readout and finite-shot sampling.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pauli::MAX_SITES;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_sites: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::invalid(format!("state length {len} is not 2^N with N >= 1")));
        }
        Ok(Self {
            num_sites: len.trailing_zeros() as usize,
            amps,
        })
    }

    /// Computational basis state `|index⟩`; site 1 is the most significant bit.
    pub fn basis_state(n: usize, index: u64) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::invalid(format!("unsupported chain length {n}")));
        }
        if index >> n != 0 {
            return Err(Error::invalid(format!("basis index {index} does not fit in {n} bits")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[index as usize] = Complex64::new(1.0, 0.0);
        Ok(Self { num_sites: n, amps })
    }

    /// Parses a bitstring such as `"101"` (site 1 first) into a basis state.
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        let index = parse_bitstring(bits)?;
        Self::basis_state(bits.len(), index)
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// Interleaved `(re, im)` view used by the autodiff tape.
    pub fn as_real_slice(&self) -> &[f64] {
        bytemuck::cast_slice(&self.amps)
    }

    pub fn from_real_slice(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::invalid("interleaved state needs an even length"));
        }
        Self::from_amplitudes(bytemuck::cast_slice::<f64, Complex64>(values).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }
}

pub fn parse_bitstring(bits: &str) -> Result<u64> {
    if bits.is_empty() || bits.len() > MAX_SITES {
        return Err(Error::Parse(format!("bad bitstring length {}", bits.len())));
    }
    bits.chars().try_fold(0u64, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        other => Err(Error::Parse(format!("invalid bit `{other}`"))),
    })
}

pub fn format_bitstring(index: u64, n: usize) -> String {
    (0..n)
        .map(|s| if (index >> (n - 1 - s)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// `|⟨a|b⟩|²`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr())
}

/// Single-site measurement axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// Unitary taking this axis' eigenbasis to the computational basis.
    fn rotation(self) -> Option<[[Complex64; 2]; 2]> {
        let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let ri = Complex64::new(0.0, FRAC_1_SQRT_2);
        match self {
            Axis::Z => None,
            // Hadamard
            Axis::X => Some([[r, r], [r, -r]]),
            // Hadamard · S†
            Axis::Y => Some([[r, -ri], [r, ri]]),
        }
    }

    fn to_char(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }
}

/// Per-site measurement axes, site 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliBasis {
    axes: Vec<Axis>,
}

impl PauliBasis {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_SITES {
            return Err(Error::invalid("measurement basis must cover 1..=62 sites"));
        }
        Ok(Self { axes })
    }

    pub fn computational(n: usize) -> Result<Self> {
        Self::new(vec![Axis::Z; n])
    }

    /// Each site drawn uniformly from `{X, Y, Z}`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        Self::new((0..n).map(|_| Axis::ALL[rng.random_range(0..3)]).collect())
    }

    pub fn num_sites(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }
}

impl fmt::Display for PauliBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.axes {
            write!(f, "{}", a.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let axes = s
            .chars()
            .map(|c| match c {
                'X' => Ok(Axis::X),
                'Y' => Ok(Axis::Y),
                'Z' => Ok(Axis::Z),
                other => Err(Error::Parse(format!("invalid basis letter `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PauliBasis::new(axes)
    }
}

impl Serialize for PauliBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliBasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn apply_site_unitary(amps: &mut [Complex64], n: usize, site: usize, u: &[[Complex64; 2]; 2]) {
    let bit = 1usize << (n - 1 - site);
    for i in 0..amps.len() {
        if i & bit == 0 {
            let a0 = amps[i];
            let a1 = amps[i | bit];
            amps[i] = u[0][0] * a0 + u[0][1] * a1;
            amps[i | bit] = u[1][0] * a0 + u[1][1] * a1;
        }
    }
}

/// In-place basis change on raw amplitudes; `adjoint` applies the inverse.
pub(crate) fn rotate_in_place(amps: &mut [Complex64], basis: &PauliBasis, adjoint: bool) {
    let n = basis.num_sites();
    for (site, axis) in basis.axes().iter().enumerate() {
        if let Some(mut u) = axis.rotation() {
            if adjoint {
                u = [[u[0][0].conj(), u[1][0].conj()], [u[0][1].conj(), u[1][1].conj()]];
            }
            apply_site_unitary(amps, n, site, &u);
        }
    }
}

pub fn rotate_to_basis(psi: &StateVector, basis: &PauliBasis) -> Result<StateVector> {
    check_dim(psi.num_sites(), basis.num_sites())?;
    let mut out = psi.clone();
    rotate_in_place(&mut out.amps, basis, false);
    Ok(out)
}

/// Born-rule distribution of readout bitstrings, renormalized by `‖ψ‖²`.
pub fn outcome_probabilities(psi: &StateVector, basis: &PauliBasis) -> Result<Vec<f64>> {
    let rotated = rotate_to_basis(psi, basis)?;
    let mut probs: Vec<f64> = rotated.amps.iter().map(|a| a.norm_sqr()).collect();
    let total: f64 = probs.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateState);
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Inverse-CDF sampler over an explicit distribution.
#[derive(Debug, Clone)]
pub struct OutcomeSampler {
    cdf: Vec<f64>,
    last_nonzero: usize,
}

impl OutcomeSampler {
    pub fn new(probs: &[f64]) -> Result<Self> {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        let mut last_nonzero = None;
        for (i, p) in probs.iter().enumerate() {
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::invalid("probabilities must be finite and non-negative"));
            }
            if *p > 0.0 {
                last_nonzero = Some(i);
            }
            acc += p;
            cdf.push(acc);
        }
        let last_nonzero = last_nonzero.ok_or(Error::DegenerateState)?;
        Ok(Self { cdf, last_nonzero })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let total = self.cdf[self.cdf.len() - 1];
        let u = rng.random::<f64>() * total;
        let idx = self.cdf.partition_point(|c| *c <= u);
        idx.min(self.last_nonzero) as u64
    }
}

/// `shots` i.i.d. readouts of `psi` in `basis`, as basis indices.
pub fn sample_bitstrings<R: Rng + ?Sized>(
    psi: &StateVector,
    basis: &PauliBasis,
    shots: usize,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if shots == 0 {
        return Err(Error::invalid("shots must be at least 1"));
    }
    let sampler = OutcomeSampler::new(&outcome_probabilities(psi, basis)?)?;
    Ok((0..shots).map(|_| sampler.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plus() -> StateVector {
        StateVector::from_amplitudes(vec![c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)]).unwrap()
    }

    #[test]
    fn basis_states_follow_msb_convention() {
        let s = StateVector::basis_state(2, 0).unwrap();
        assert_eq!(s.amplitudes()[0], c(1.0, 0.0));
        let s = StateVector::basis_state(2, 0b11).unwrap();
        assert_eq!(s.amplitudes()[3], c(1.0, 0.0));
        let s = StateVector::from_bitstring("101").unwrap();
        assert_eq!(s.amplitudes()[5], c(1.0, 0.0));
        assert_eq!(s.norm_sqr(), 1.0);
        assert_eq!(format_bitstring(5, 3), "101");
        // site 1 set alone is the most significant bit
        assert_eq!(parse_bitstring("100").unwrap(), 4);
        assert!(StateVector::basis_state(2, 4).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let zero = StateVector::basis_state(1, 0).unwrap();
        let one = StateVector::basis_state(1, 1).unwrap();
        assert_eq!(fidelity(&zero, &zero).unwrap(), 1.0);
        assert_eq!(fidelity(&zero, &one).unwrap(), 0.0);
        assert!((fidelity(&zero, &plus()).unwrap() - 0.5).abs() < 1e-15);
        assert!(fidelity(&zero, &StateVector::basis_state(2, 0).unwrap()).is_err());
    }

    #[test]
    fn rotations() {
        let psi = StateVector::from_bitstring("01").unwrap();
        let zz = PauliBasis::computational(2).unwrap();
        assert_eq!(rotate_to_basis(&psi, &zz).unwrap(), psi);

        let px = outcome_probabilities(&plus(), &"X".parse().unwrap()).unwrap();
        assert!((px[0] - 1.0).abs() < 1e-15);

        let plus_i = StateVector::from_amplitudes(vec![c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)]).unwrap();
        let py = outcome_probabilities(&plus_i, &"Y".parse().unwrap()).unwrap();
        assert!((py[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bell_state_marginals() {
        let bell = StateVector::from_amplitudes(vec![
            c(FRAC_1_SQRT_2, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(FRAC_1_SQRT_2, 0.0),
        ])
        .unwrap();
        for basis in ["ZZ", "XX"] {
            let p = outcome_probabilities(&bell, &basis.parse().unwrap()).unwrap();
            let want = [0.5, 0.0, 0.0, 0.5];
            for (a, b) in p.iter().zip(want) {
                assert!((a - b).abs() < 1e-15, "{basis}: {p:?}");
            }
        }
    }

    #[test]
    fn zero_norm_is_degenerate() {
        let z = StateVector::from_amplitudes(vec![c(0.0, 0.0); 2]).unwrap();
        assert!(matches!(
            outcome_probabilities(&z, &"Z".parse().unwrap()),
            Err(Error::DegenerateState)
        ));
    }

    #[test]
    fn deterministic_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = StateVector::basis_state(1, 0).unwrap();
        assert_eq!(
            sample_bitstrings(&zero, &"Z".parse().unwrap(), 5, &mut rng).unwrap(),
            vec![0; 5]
        );
        assert_eq!(
            sample_bitstrings(&plus(), &"X".parse().unwrap(), 5, &mut rng).unwrap(),
            vec![0; 5]
        );
        assert!(sample_bitstrings(&plus(), &"X".parse().unwrap(), 0, &mut rng).is_err());
    }

    #[test]
    fn balanced_coin_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shots = sample_bitstrings(&plus(), &"Z".parse().unwrap(), 10_000, &mut rng).unwrap();
        let zeros = shots.iter().filter(|b| **b == 0).count() as f64 / 1e4;
        assert!((zeros - 0.5).abs() < 0.02, "{zeros}");
    }

    #[test]
    fn same_seed_same_samples() {
        let psi = plus();
        let basis: PauliBasis = "Y".parse().unwrap();
        let a = sample_bitstrings(&psi, &basis, 100, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_bitstrings(&psi, &basis, 100, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn basis_text_round_trip() {
        let b: PauliBasis = "XYZ".parse().unwrap();
        assert_eq!(b.to_string(), "XYZ");
        assert!("XIZ".parse::<PauliBasis>().is_err());
    }
}
