//! Pauli strings, weighted Pauli sums and the test-Hamiltonian builders.
//!
//! Sites are numbered `1..=N` in user-facing labels and `0..N` internally.
//! Basis state index `b` stores site 0 (site 1 in the labels) in its most
//! significant bit, so on three sites `|101⟩` is index 5 and site `s` maps
//! to bit `N - 1 - s`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::statevec::StateVector;

/// Largest chain the bitmask representation supports.
pub const MAX_SITES: usize = 62;

/// Default cap on `N` for dense `2^N x 2^N` matrices.
pub const DEFAULT_DENSE_CAP: usize = 12;

pub type HermitianMatrix = DMatrix<Complex64>;

/// Single-site operator. `Proj0` is `|0⟩⟨0|` and only appears while building
/// constrained Hamiltonians; stored Hamiltonians never contain it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Letter {
    I,
    X,
    Y,
    Z,
    Proj0,
}

impl Letter {
    pub fn to_char(self) -> char {
        match self {
            Letter::I => 'I',
            Letter::X => 'X',
            Letter::Y => 'Y',
            Letter::Z => 'Z',
            Letter::Proj0 => 'P',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c {
            'I' => Ok(Letter::I),
            'X' => Ok(Letter::X),
            'Y' => Ok(Letter::Y),
            'Z' => Ok(Letter::Z),
            'P' => Ok(Letter::Proj0),
            other => Err(Error::Parse(format!("invalid Pauli letter `{other}`"))),
        }
    }
}

/// Tensor product of single-site operators over `N` sites.
///
/// The action on a basis state is precomputed as bitmasks: `flip` marks X/Y
/// sites, `phase` marks Z/Y sites and `proj` marks `Proj0` sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    letters: Vec<Letter>,
    flip: u64,
    phase: u64,
    proj: u64,
    num_y: u32,
}

impl PauliString {
    pub fn new(letters: Vec<Letter>) -> Result<Self> {
        let n = letters.len();
        if n == 0 {
            return Err(Error::invalid("Pauli string must cover at least one site"));
        }
        if n > MAX_SITES {
            return Err(Error::Resource(format!("{n} sites exceeds the {MAX_SITES}-site limit")));
        }
        let (mut flip, mut phase, mut proj, mut num_y) = (0u64, 0u64, 0u64, 0u32);
        for (site, letter) in letters.iter().enumerate() {
            let bit = 1u64 << (n - 1 - site);
            match letter {
                Letter::I => {}
                Letter::X => flip |= bit,
                Letter::Z => phase |= bit,
                Letter::Y => {
                    flip |= bit;
                    phase |= bit;
                    num_y += 1;
                }
                Letter::Proj0 => proj |= bit,
            }
        }
        Ok(Self {
            letters,
            flip,
            phase,
            proj,
            num_y,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![Letter::I; n])
    }

    /// String with the given `(site, letter)` pairs placed on an identity
    /// background. Sites are 0-indexed.
    pub fn from_sparse(n: usize, ops: &[(usize, Letter)]) -> Result<Self> {
        let mut letters = vec![Letter::I; n];
        for &(site, letter) in ops {
            if site >= n {
                return Err(Error::invalid(format!("site {site} outside a {n}-site chain")));
            }
            letters[site] = letter;
        }
        Self::new(letters)
    }

    pub fn num_sites(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    /// Number of non-identity letters (polynomial order).
    pub fn order(&self) -> usize {
        self.letters.iter().filter(|l| **l != Letter::I).count()
    }

    pub fn has_projector(&self) -> bool {
        self.proj != 0
    }

    /// Replace every `Proj0` by `(I + Z)/2`, returning the weighted Pauli strings.
    pub fn expand_projectors(&self) -> Vec<(f64, PauliString)> {
        let mut out: Vec<(f64, Vec<Letter>)> = vec![(1.0, Vec::with_capacity(self.letters.len()))];
        for &letter in &self.letters {
            if letter == Letter::Proj0 {
                let mut next = Vec::with_capacity(out.len() * 2);
                for (w, prefix) in out {
                    let mut with_i = prefix.clone();
                    with_i.push(Letter::I);
                    let mut with_z = prefix;
                    with_z.push(Letter::Z);
                    next.push((w * 0.5, with_i));
                    next.push((w * 0.5, with_z));
                }
                out = next;
            } else {
                for (_, prefix) in out.iter_mut() {
                    prefix.push(letter);
                }
            }
        }
        out.into_iter()
            .map(|(w, letters)| (w, PauliString::new(letters).expect("same length as source")))
            .collect()
    }

    /// `out += coeff * P * input` on raw amplitude slices.
    #[inline]
    pub(crate) fn accumulate(&self, coeff: Complex64, input: &[Complex64], out: &mut [Complex64]) {
        let global = coeff * i_pow(self.num_y);
        for (b, amp) in input.iter().enumerate() {
            let b = b as u64;
            if b & self.proj != 0 {
                continue;
            }
            let v = if (b & self.phase).count_ones() % 2 == 1 {
                -global * amp
            } else {
                global * amp
            };
            out[(b ^ self.flip) as usize] += v;
        }
    }

    /// Real part of `⟨left| P |right⟩` on raw amplitude slices.
    #[inline]
    pub(crate) fn expectation_re(&self, left: &[Complex64], right: &[Complex64]) -> f64 {
        let global = i_pow(self.num_y);
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, amp) in right.iter().enumerate() {
            let b = b as u64;
            if b & self.proj != 0 {
                continue;
            }
            let v = if (b & self.phase).count_ones() % 2 == 1 {
                -amp
            } else {
                *amp
            };
            acc += left[(b ^ self.flip) as usize].conj() * v;
        }
        (global * acc).re
    }
}

fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.letters {
            write!(f, "{}", l.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s.chars().map(Letter::from_char).collect::<Result<Vec<_>>>()?;
        PauliString::new(letters)
    }
}

/// Returns `P · psi` without touching `psi`.
pub fn apply_string(s: &PauliString, psi: &StateVector) -> Result<StateVector> {
    check_dim(s.num_sites(), psi.num_sites())?;
    let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
    s.accumulate(Complex64::new(1.0, 0.0), psi.amplitudes(), &mut out);
    StateVector::from_amplitudes(out)
}

/// Weighted sum of pure Pauli strings, `H = Σ_j c_j P_j`, all on `num_sites` sites.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSumHamiltonian {
    num_sites: usize,
    family: Option<HamiltonianFamily>,
    terms: Vec<(f64, PauliString)>,
}

impl PauliSumHamiltonian {
    pub fn new(num_sites: usize, terms: Vec<(f64, PauliString)>) -> Result<Self> {
        if num_sites == 0 || num_sites > MAX_SITES {
            return Err(Error::invalid(format!("unsupported chain length {num_sites}")));
        }
        for (c, s) in &terms {
            check_dim(num_sites, s.num_sites())?;
            if s.has_projector() {
                return Err(Error::invalid(format!(
                    "projector letters must be expanded before storage (term {s})"
                )));
            }
            if !c.is_finite() {
                return Err(Error::invalid("non-finite coefficient"));
            }
        }
        Ok(Self {
            num_sites,
            family: None,
            terms,
        })
    }

    /// Builds a sum that may contain `Proj0` letters, expanding them into
    /// `{I, Z}` combinations.
    pub fn from_projector_terms(num_sites: usize, terms: Vec<(f64, PauliString)>) -> Result<Self> {
        let expanded = terms
            .into_iter()
            .flat_map(|(c, s)| s.expand_projectors().into_iter().map(move |(w, p)| (c * w, p)))
            .collect();
        Self::new(num_sites, expanded)
    }

    pub fn with_family(mut self, family: HamiltonianFamily) -> Self {
        self.family = Some(family);
        self
    }

    pub fn zero(num_sites: usize) -> Result<Self> {
        Self::new(num_sites, Vec::new())
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn family(&self) -> Option<HamiltonianFamily> {
        self.family
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    /// Polynomial order of each term, used to batch parameters by order.
    pub fn term_tags(&self) -> Vec<usize> {
        self.terms.iter().map(|(_, s)| s.order()).collect()
    }

    pub(crate) fn accumulate(&self, input: &[Complex64], out: &mut [Complex64]) {
        for (c, s) in &self.terms {
            s.accumulate(Complex64::new(*c, 0.0), input, out);
        }
    }
}

/// `Σ_j c_j P_j ψ`.
pub fn apply_hamiltonian(h: &PauliSumHamiltonian, psi: &StateVector) -> Result<StateVector> {
    check_dim(h.num_sites(), psi.num_sites())?;
    let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
    h.accumulate(psi.amplitudes(), &mut out);
    StateVector::from_amplitudes(out)
}

pub fn dense_matrix(h: &PauliSumHamiltonian) -> Result<HermitianMatrix> {
    dense_matrix_capped(h, DEFAULT_DENSE_CAP)
}

pub fn dense_matrix_capped(h: &PauliSumHamiltonian, cap: usize) -> Result<HermitianMatrix> {
    let n = h.num_sites();
    if n > cap {
        return Err(Error::Resource(format!(
            "dense matrix on {n} sites exceeds the cap of {cap}"
        )));
    }
    let dim = 1usize << n;
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for (c, s) in h.terms() {
        for col in 0..dim as u64 {
            if col & s.proj != 0 {
                continue;
            }
            let sign = if (col & s.phase).count_ones() % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            let row = (col ^ s.flip) as usize;
            m[(row, col as usize)] += i_pow(s.num_y) * (c * sign);
        }
    }
    Ok(m)
}

/// The six test-Hamiltonian families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianFamily {
    /// Homogeneous XX/YY/ZZ couplings with a site-dependent X field.
    Heisenberg,
    /// Bond-dependent XX/YY/ZZ couplings with a site-dependent X field.
    AnisotropicHeisenberg,
    /// Full XYZ fields, nearest and next-nearest XX/YY/ZZ couplings.
    HeisenbergNnn,
    /// Full XYZ fields, nearest couplings and three-body XXX/YYY/ZZZ terms.
    ThirdOrderHeisenberg,
    /// `Σ J_i P_{i-1} X_i P_{i+1}` with `P = |0⟩⟨0|`.
    Pxp,
    /// Full XYZ fields and all nine `A_i B_{i+1}` couplings per bond.
    DenseNn,
}

impl HamiltonianFamily {
    pub const ALL: [HamiltonianFamily; 6] = [
        HamiltonianFamily::Heisenberg,
        HamiltonianFamily::AnisotropicHeisenberg,
        HamiltonianFamily::HeisenbergNnn,
        HamiltonianFamily::ThirdOrderHeisenberg,
        HamiltonianFamily::Pxp,
        HamiltonianFamily::DenseNn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HamiltonianFamily::Heisenberg => "heisenberg",
            HamiltonianFamily::AnisotropicHeisenberg => "anisotropic_heisenberg",
            HamiltonianFamily::HeisenbergNnn => "heisenberg_nnn",
            HamiltonianFamily::ThirdOrderHeisenberg => "third_order_heisenberg",
            HamiltonianFamily::Pxp => "pxp",
            HamiltonianFamily::DenseNn => "dense_nn",
        }
    }

    pub fn min_sites(self) -> usize {
        match self {
            HamiltonianFamily::Heisenberg | HamiltonianFamily::AnisotropicHeisenberg | HamiltonianFamily::DenseNn => 2,
            HamiltonianFamily::HeisenbergNnn | HamiltonianFamily::ThirdOrderHeisenberg | HamiltonianFamily::Pxp => 3,
        }
    }

    pub fn num_params(self, n: usize) -> usize {
        match self {
            HamiltonianFamily::Heisenberg => 3 + n,
            HamiltonianFamily::AnisotropicHeisenberg => 3 * (n - 1) + n,
            HamiltonianFamily::HeisenbergNnn | HamiltonianFamily::ThirdOrderHeisenberg => {
                3 * n + 3 * (n - 1) + 3 * (n - 2)
            }
            HamiltonianFamily::Pxp => n - 2,
            HamiltonianFamily::DenseNn => 3 * n + 9 * (n - 1),
        }
    }
}

impl fmt::Display for HamiltonianFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HamiltonianFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', ' '], "_");
        HamiltonianFamily::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

/// One Pauli string whose coefficient is `weight * θ[param]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzTerm {
    pub param: usize,
    pub weight: f64,
    pub string: PauliString,
}

/// Parameterized Hamiltonian `H_A(θ)` for one family and chain length.
///
/// Parameter order follows the sums of each family in the order they are
/// written (fields or couplings first, as the family defines), site-major
/// within each sum and operator kind (X, Y, Z; `AB` pairs with `A` major)
/// innermost. `param_labels` spells the order out with 1-indexed sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Ansatz {
    family: HamiltonianFamily,
    num_sites: usize,
    terms: Vec<AnsatzTerm>,
    labels: Vec<String>,
    orders: Vec<usize>,
}

const XYZ: [(Letter, char); 3] = [(Letter::X, 'x'), (Letter::Y, 'y'), (Letter::Z, 'z')];

struct AnsatzBuilder {
    n: usize,
    terms: Vec<AnsatzTerm>,
    labels: Vec<String>,
    orders: Vec<usize>,
}

impl AnsatzBuilder {
    fn param(&mut self, label: String, strings: Vec<PauliString>) {
        let index = self.labels.len();
        let mut order = 0;
        for s in strings {
            order = order.max(s.order());
            for (w, p) in s.expand_projectors() {
                self.terms.push(AnsatzTerm {
                    param: index,
                    weight: w,
                    string: p,
                });
            }
        }
        self.labels.push(label);
        self.orders.push(order);
    }

    fn sparse(&self, ops: &[(usize, Letter)]) -> PauliString {
        PauliString::from_sparse(self.n, ops).expect("builder sites are in range")
    }

    fn fields(&mut self, kinds: &[(Letter, char)]) {
        for i in 0..self.n {
            for &(l, c) in kinds {
                let s = self.sparse(&[(i, l)]);
                self.param(format!("h{c}_{}", i + 1), vec![s]);
            }
        }
    }

    fn bonds(&mut self, prefix: char, range: usize) {
        for i in 0..self.n - range {
            for &(l, c) in &XYZ {
                let s = self.sparse(&[(i, l), (i + range, l)]);
                self.param(format!("{prefix}{c}_{}", i + 1), vec![s]);
            }
        }
    }
}

impl Ansatz {
    pub fn new(family: HamiltonianFamily, n: usize) -> Result<Self> {
        if n < family.min_sites() {
            return Err(Error::invalid(format!(
                "{family} needs at least {} sites, got {n}",
                family.min_sites()
            )));
        }
        if n > MAX_SITES {
            return Err(Error::Resource(format!("{n} sites exceeds the {MAX_SITES}-site limit")));
        }
        let mut b = AnsatzBuilder {
            n,
            terms: Vec::new(),
            labels: Vec::new(),
            orders: Vec::new(),
        };
        match family {
            HamiltonianFamily::Heisenberg => {
                for &(l, c) in &XYZ {
                    let strings = (0..n - 1).map(|i| b.sparse(&[(i, l), (i + 1, l)])).collect();
                    b.param(format!("J{c}"), strings);
                }
                b.fields(&XYZ[..1]);
            }
            HamiltonianFamily::AnisotropicHeisenberg => {
                b.bonds('J', 1);
                b.fields(&XYZ[..1]);
            }
            HamiltonianFamily::HeisenbergNnn => {
                b.fields(&XYZ);
                b.bonds('J', 1);
                b.bonds('K', 2);
            }
            HamiltonianFamily::ThirdOrderHeisenberg => {
                b.fields(&XYZ);
                b.bonds('J', 1);
                for i in 0..n - 2 {
                    for &(l, c) in &XYZ {
                        let s = b.sparse(&[(i, l), (i + 1, l), (i + 2, l)]);
                        b.param(format!("K{c}_{}", i + 1), vec![s]);
                    }
                }
            }
            HamiltonianFamily::Pxp => {
                for i in 1..n - 1 {
                    let s = b.sparse(&[(i - 1, Letter::Proj0), (i, Letter::X), (i + 1, Letter::Proj0)]);
                    b.param(format!("J_{}", i + 1), vec![s]);
                }
            }
            HamiltonianFamily::DenseNn => {
                b.fields(&XYZ);
                for i in 0..n - 1 {
                    for &(la, ca) in &XYZ {
                        for &(lb, cb) in &XYZ {
                            let s = b.sparse(&[(i, la), (i + 1, lb)]);
                            b.param(format!("J{ca}{cb}_{}", i + 1), vec![s]);
                        }
                    }
                }
            }
        }
        debug_assert_eq!(b.labels.len(), family.num_params(n));
        Ok(Self {
            family,
            num_sites: n,
            terms: b.terms,
            labels: b.labels,
            orders: b.orders,
        })
    }

    pub fn family(&self) -> HamiltonianFamily {
        self.family
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_params(&self) -> usize {
        self.labels.len()
    }

    pub fn terms(&self) -> &[AnsatzTerm] {
        &self.terms
    }

    pub fn param_labels(&self) -> &[String] {
        &self.labels
    }

    /// Polynomial order of each parameter's Pauli strings (for a projector
    /// string, the order of its unexpanded form).
    pub fn param_orders(&self) -> &[usize] {
        &self.orders
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ParamCount {
                family: self.family.to_string(),
                sites: self.num_sites,
                expected: self.num_params(),
                found: params.len(),
            });
        }
        Ok(())
    }

    pub fn hamiltonian(&self, params: &[f64]) -> Result<PauliSumHamiltonian> {
        self.check_params(params)?;
        let terms = self
            .terms
            .iter()
            .map(|t| (t.weight * params[t.param], t.string.clone()))
            .collect();
        Ok(PauliSumHamiltonian::new(self.num_sites, terms)?.with_family(self.family))
    }

    /// Reads `θ` back out of a Hamiltonian built by [`Ansatz::hamiltonian`].
    pub fn extract_params(&self, h: &PauliSumHamiltonian) -> Result<Vec<f64>> {
        if h.terms().len() != self.terms.len() {
            return Err(Error::Layout(format!(
                "expected {} terms, found {}",
                self.terms.len(),
                h.terms().len()
            )));
        }
        let mut out = vec![f64::NAN; self.num_params()];
        for (t, (c, s)) in self.terms.iter().zip(h.terms()) {
            if *s != t.string {
                return Err(Error::Layout(format!(
                    "term {s} does not match ansatz term {}",
                    t.string
                )));
            }
            if out[t.param].is_nan() {
                out[t.param] = c / t.weight;
            }
        }
        Ok(out)
    }

    /// `out += H_A(θ) · input` on raw slices; params are not checked.
    pub(crate) fn accumulate(&self, params: &[f64], input: &[Complex64], out: &mut [Complex64]) {
        for t in &self.terms {
            t.string
                .accumulate(Complex64::new(t.weight * params[t.param], 0.0), input, out);
        }
    }
}

pub fn build_hamiltonian(family: HamiltonianFamily, n: usize, params: &[f64]) -> Result<PauliSumHamiltonian> {
    Ansatz::new(family, n)?.hamiltonian(params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermRecord {
    coeff: f64,
    letters: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HamiltonianFile {
    num_sites: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<HamiltonianFamily>,
    terms: Vec<TermRecord>,
}

impl PauliSumHamiltonian {
    /// JSON form `{num_sites, family?, terms: [{coeff, letters}]}`. Floats are
    /// written in shortest round-trip form, so reading back is bit-exact.
    pub fn to_json(&self) -> Result<String> {
        let file = HamiltonianFile {
            num_sites: self.num_sites,
            family: self.family,
            terms: self
                .terms
                .iter()
                .map(|(c, s)| TermRecord {
                    coeff: *c,
                    letters: s.to_string(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HamiltonianFile = serde_json::from_str(text)?;
        let terms = file
            .terms
            .into_iter()
            .map(|t| Ok((t.coeff, t.letters.parse::<PauliString>()?)))
            .collect::<Result<Vec<_>>>()?;
        let h = Self::new(file.num_sites, terms)?;
        Ok(match file.family {
            Some(f) => h.with_family(f),
            None => h,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn x_flips_zero_to_one() {
        let s: PauliString = "X".parse().unwrap();
        let psi = StateVector::basis_state(1, 0).unwrap();
        let out = apply_string(&s, &psi).unwrap();
        assert_eq!(out.amplitudes(), &[c(0.0, 0.0), c(1.0, 0.0)]);
    }

    #[test]
    fn zz_on_antiparallel_is_minus_one() {
        let s: PauliString = "ZZ".parse().unwrap();
        let psi = StateVector::basis_state(2, 0b01).unwrap();
        let out = apply_string(&s, &psi).unwrap();
        assert_eq!(out.amplitudes()[1], c(-1.0, 0.0));
        assert_eq!(out.norm_sqr(), 1.0);
    }

    #[test]
    fn y_matches_its_matrix() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::from_amplitudes(vec![c(r, 0.0), c(r, 0.0)]).unwrap();
        let out = apply_string(&"Y".parse().unwrap(), &psi).unwrap();
        // [[0,-i],[i,0]] (r, r) = (-i r, i r)
        assert_eq!(out.amplitudes(), &[c(0.0, -r), c(0.0, r)]);
    }

    #[test]
    fn size_mismatch_is_dimension_error() {
        let psi = StateVector::basis_state(2, 0).unwrap();
        let err = apply_string(&"X".parse().unwrap(), &psi).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn single_z_and_empty_sum() {
        let h = PauliSumHamiltonian::new(1, vec![(1.0, "Z".parse().unwrap())]).unwrap();
        let psi = StateVector::basis_state(1, 0).unwrap();
        assert_eq!(apply_hamiltonian(&h, &psi).unwrap(), psi);

        let h0 = PauliSumHamiltonian::zero(3).unwrap();
        let psi = StateVector::basis_state(3, 5).unwrap();
        assert!(apply_hamiltonian(&h0, &psi)
            .unwrap()
            .amplitudes()
            .iter()
            .all(|a| a.norm() == 0.0));
    }

    #[test]
    fn dense_pauli_matrices() {
        let hx = PauliSumHamiltonian::new(1, vec![(1.0, "X".parse().unwrap())]).unwrap();
        let m = dense_matrix(&hx).unwrap();
        assert_eq!(m[(0, 1)], c(1.0, 0.0));
        assert_eq!(m[(1, 0)], c(1.0, 0.0));
        assert_eq!(m[(0, 0)], c(0.0, 0.0));

        let hz = PauliSumHamiltonian::new(1, vec![(0.5, "Z".parse().unwrap())]).unwrap();
        let m = dense_matrix(&hz).unwrap();
        assert_eq!(m[(0, 0)], c(0.5, 0.0));
        assert_eq!(m[(1, 1)], c(-0.5, 0.0));
    }

    #[test]
    fn dense_cap_is_enforced() {
        let h = PauliSumHamiltonian::zero(5).unwrap();
        assert!(matches!(dense_matrix_capped(&h, 4), Err(Error::Resource(_))));
    }

    #[test]
    fn pxp_three_sites_expansion() {
        let h = build_hamiltonian(HamiltonianFamily::Pxp, 3, &[1.0]).unwrap();
        let mut got: Vec<(f64, String)> = h.terms().iter().map(|(c, s)| (*c, s.to_string())).collect();
        got.sort_by(|a, b| a.1.cmp(&b.1));
        let want = vec![
            (0.25, "IXI".to_string()),
            (0.25, "IXZ".to_string()),
            (0.25, "ZXI".to_string()),
            (0.25, "ZXZ".to_string()),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn heisenberg_two_sites() {
        let h = build_hamiltonian(HamiltonianFamily::Heisenberg, 2, &[1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let couplings: Vec<_> = h
            .terms()
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(c, s)| (*c, s.to_string()))
            .collect();
        assert_eq!(
            couplings,
            vec![(1.0, "XX".into()), (1.0, "YY".into()), (1.0, "ZZ".into())]
        );
    }

    #[test]
    fn term_counts() {
        let dense = Ansatz::new(HamiltonianFamily::DenseNn, 3).unwrap();
        assert_eq!(dense.terms().len(), 27);
        for (family, n, count) in [
            (HamiltonianFamily::Heisenberg, 5, 8),
            (HamiltonianFamily::AnisotropicHeisenberg, 4, 13),
            (HamiltonianFamily::Pxp, 3, 1),
            (HamiltonianFamily::DenseNn, 3, 27),
            (HamiltonianFamily::HeisenbergNnn, 4, 12 + 9 + 6),
        ] {
            assert_eq!(Ansatz::new(family, n).unwrap().num_params(), count, "{family}");
        }
    }

    #[test]
    fn wrong_param_count_and_unknown_family() {
        let err = build_hamiltonian(HamiltonianFamily::Heisenberg, 3, &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::ParamCount {
                expected: 6,
                found: 1,
                ..
            }
        ));
        assert!(matches!(
            "ising".parse::<HamiltonianFamily>(),
            Err(Error::UnknownFamily(_))
        ));
        assert_eq!(
            "Dense-NN".parse::<HamiltonianFamily>().unwrap(),
            HamiltonianFamily::DenseNn
        );
    }

    #[test]
    fn labels_are_site_major() {
        let a = Ansatz::new(HamiltonianFamily::AnisotropicHeisenberg, 3).unwrap();
        assert_eq!(
            a.param_labels(),
            &["Jx_1", "Jy_1", "Jz_1", "Jx_2", "Jy_2", "Jz_2", "hx_1", "hx_2", "hx_3"]
        );
        let t = Ansatz::new(HamiltonianFamily::ThirdOrderHeisenberg, 3).unwrap();
        assert_eq!(t.param_orders().iter().filter(|o| **o == 3).count(), 3);
        assert_eq!(Ansatz::new(HamiltonianFamily::Pxp, 4).unwrap().param_orders(), &[3, 3]);
    }

    #[test]
    fn projectors_are_rejected_in_storage() {
        let s: PauliString = "PXP".parse().unwrap();
        assert!(PauliSumHamiltonian::new(3, vec![(1.0, s.clone())]).is_err());
        let h = PauliSumHamiltonian::from_projector_terms(3, vec![(1.0, s)]).unwrap();
        assert_eq!(h.terms().len(), 4);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let params = [0.1 + 0.2, -1.0 / 3.0, 1e-300, 0.7];
        let h = build_hamiltonian(
            HamiltonianFamily::Heisenberg,
            1 + 1,
            &[params[0], params[1], params[2], params[3], -0.0],
        )
        .unwrap();
        let back = PauliSumHamiltonian::from_json(&h.to_json().unwrap()).unwrap();
        assert_eq!(back.family(), Some(HamiltonianFamily::Heisenberg));
        for ((a, sa), (b, sb)) in h.terms().iter().zip(back.terms()) {
            assert_eq!(a.to_bits(), b.to_bits());
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn json_rejects_bad_letters_and_lengths() {
        assert!(PauliSumHamiltonian::from_json(r#"{"num_sites":2,"terms":[{"coeff":1,"letters":"XQ"}]}"#).is_err());
        assert!(PauliSumHamiltonian::from_json(r#"{"num_sites":2,"terms":[{"coeff":1,"letters":"XXX"}]}"#).is_err());
        assert!(PauliSumHamiltonian::from_json(r#"{"num_sites":0,"terms":[]}"#).is_err());
    }
}
