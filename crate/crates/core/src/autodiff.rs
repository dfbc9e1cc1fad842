//! Reverse-mode differentiation over a small set of vector primitives.
//!
//! A [`Tape`] records each primitive with its forward value; complex vectors
//! are stored as interleaved `(re, im)` pairs and differentiated as real
//! vectors. [`Tape::backward`] returns the gradient of a scalar node with
//! respect to the flat parameter slice the tape was built over.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::Ansatz;
use crate::statevec::{rotate_in_place, PauliBasis};

/// Named contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.len();
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Segments must tile `0..len` in order.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for s in &self.segments {
            if s.offset != expected {
                return Err(Error::Layout(format!(
                    "segment `{}` starts at {}, expected {expected}",
                    s.name, s.offset
                )));
            }
            expected += s.len;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "{} values for a layout of length {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.segment(name)?.range();
        Some(&mut self.values[r])
    }
}

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'a> {
    Constant,
    Param {
        offset: usize,
    },
    PauliSum {
        input: Var,
        ansatz: &'a Ansatz,
        offset: usize,
    },
    Affine {
        input: Var,
        weights: usize,
        bias: usize,
        rows: usize,
        cols: usize,
    },
    Tanh {
        input: Var,
    },
    Cos {
        input: Var,
    },
    Sin {
        input: Var,
    },
    ScaleNegI {
        input: Var,
    },
    LinComb {
        terms: Vec<(f64, Var)>,
    },
    Rotate {
        input: Var,
        basis: &'a PauliBasis,
    },
    Abs2 {
        input: Var,
    },
    Normalize {
        input: Var,
    },
    LogClamped {
        input: Var,
        floor: f64,
    },
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
    Sum {
        inputs: Vec<Var>,
    },
    SumSquares {
        input: Var,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node<'a> {
    op: Op<'a>,
    value: Vec<f64>,
}

/// Append-only record of one forward pass.
#[derive(Debug)]
pub struct Tape<'a> {
    params: Vec<f64>,
    nodes: Vec<Node<'a>>,
}

fn as_complex(v: &[f64]) -> &[Complex64] {
    bytemuck::cast_slice(v)
}

fn as_complex_mut(v: &mut [f64]) -> &mut [Complex64] {
    bytemuck::cast_slice_mut(v)
}

/// Shared forward kernels; the tape and the tape-free evaluators call these.
pub mod kernels {
    /// `out = W x + b` with `W` row-major `rows x cols`.
    pub fn affine(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
        let cols = x.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &weights[r * cols..(r + 1) * cols];
            *o = bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn tanh_in_place(v: &mut [f64]) {
        v.iter_mut().for_each(|x| *x = x.tanh());
    }

    /// Multiplies interleaved complex values by `-i`.
    pub fn scale_neg_i_in_place(v: &mut [f64]) {
        for pair in v.chunks_exact_mut(2) {
            let (re, im) = (pair[0], pair[1]);
            pair[0] = im;
            pair[1] = -re;
        }
    }
}

impl<'a> Tape<'a> {
    /// The tape keeps its own copy of `params`.
    pub fn new(params: &[f64]) -> Self {
        Self {
            params: params.to_vec(),
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op<'a>, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    /// Leaf reading `params[offset..offset + len]`.
    pub fn param(&mut self, offset: usize, len: usize) -> Var {
        let value = self.params[offset..offset + len].to_vec();
        self.push(Op::Param { offset }, value)
    }

    /// `H_A(θ) x` with `θ = params[offset..offset + ansatz.num_params()]`.
    pub fn pauli_sum(&mut self, ansatz: &'a Ansatz, offset: usize, input: Var) -> Var {
        let x = self.value(input);
        let mut value = vec![0.0; x.len()];
        let theta = &self.params[offset..offset + ansatz.num_params()];
        ansatz.accumulate(theta, as_complex(x), as_complex_mut(&mut value));
        self.push(Op::PauliSum { input, ansatz, offset }, value)
    }

    /// `W x + b`, weights row-major at `weights`, biases at `bias`.
    pub fn affine(&mut self, input: Var, weights: usize, bias: usize, rows: usize) -> Var {
        let x = self.value(input);
        let cols = x.len();
        let mut value = vec![0.0; rows];
        kernels::affine(
            &self.params[weights..weights + rows * cols],
            &self.params[bias..bias + rows],
            x,
            &mut value,
        );
        self.push(
            Op::Affine {
                input,
                weights,
                bias,
                rows,
                cols,
            },
            value,
        )
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let mut value = self.value(input).to_vec();
        kernels::tanh_in_place(&mut value);
        self.push(Op::Tanh { input }, value)
    }

    pub fn cos(&mut self, input: Var) -> Var {
        let value = self.value(input).iter().map(|x| x.cos()).collect();
        self.push(Op::Cos { input }, value)
    }

    pub fn sin(&mut self, input: Var) -> Var {
        let value = self.value(input).iter().map(|x| x.sin()).collect();
        self.push(Op::Sin { input }, value)
    }

    pub fn scale_neg_i(&mut self, input: Var) -> Var {
        let mut value = self.value(input).to_vec();
        kernels::scale_neg_i_in_place(&mut value);
        self.push(Op::ScaleNegI { input }, value)
    }

    /// `Σ c_i x_i` (axpy chains).
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Var {
        let mut value = vec![0.0; self.value(terms[0].1).len()];
        for &(c, v) in terms {
            for (o, x) in value.iter_mut().zip(self.value(v)) {
                *o += c * x;
            }
        }
        self.push(Op::LinComb { terms: terms.to_vec() }, value)
    }

    pub fn rotate(&mut self, input: Var, basis: &'a PauliBasis) -> Var {
        let mut value = self.value(input).to_vec();
        rotate_in_place(as_complex_mut(&mut value), basis, false);
        self.push(Op::Rotate { input, basis }, value)
    }

    /// `|z_k|²` for each interleaved complex entry.
    pub fn abs2(&mut self, input: Var) -> Var {
        let value = as_complex(self.value(input)).iter().map(|z| z.norm_sqr()).collect();
        self.push(Op::Abs2 { input }, value)
    }

    /// `x / Σx`.
    pub fn normalize(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let total: f64 = x.iter().sum();
        let value = x.iter().map(|v| v / total).collect();
        self.push(Op::Normalize { input }, value)
    }

    /// `ln(max(x, floor))`; the derivative is zero where the floor is active.
    pub fn log_clamped(&mut self, input: Var, floor: f64) -> Var {
        let value = self.value(input).iter().map(|x| x.max(floor).ln()).collect();
        self.push(Op::LogClamped { input, floor }, value)
    }

    /// Scalar `Σ w_i x_i`; with negative weights this is the mean negative
    /// log-likelihood reduction.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<f64>) -> Var {
        let value = self.value(input).iter().zip(&weights).map(|(x, w)| x * w).sum();
        self.push(Op::WeightedSum { input, weights }, vec![value])
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, inputs: &[Var]) -> Var {
        let value = inputs.iter().map(|v| self.scalar(*v)).sum();
        self.push(
            Op::Sum {
                inputs: inputs.to_vec(),
            },
            vec![value],
        )
    }

    /// Scalar `scale · Σ x_i²`.
    pub fn sum_squares(&mut self, input: Var, scale: f64) -> Var {
        let value = scale * self.value(input).iter().map(|x| x * x).sum::<f64>();
        self.push(Op::SumSquares { input, scale }, vec![value])
    }

    /// Gradient of the scalar `output` with respect to every parameter.
    pub fn backward(&self, output: Var) -> Result<Vec<f64>> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(Error::invalid(format!(
                "gradient needs a scalar output, node has {} entries",
                out_value.len()
            )));
        }
        if !out_value[0].is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", out_value[0])));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (d, gi) in grad[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::PauliSum { input, ansatz, offset } => {
                    let x = self.value(*input);
                    let theta = &self.params[*offset..*offset + ansatz.num_params()];
                    let gc = as_complex(&g);
                    let xc = as_complex(x);
                    for t in ansatz.terms() {
                        grad[offset + t.param] += t.weight * t.string.expectation_re(gc, xc);
                    }
                    let gx = acc(&mut adj, *input, x.len());
                    // H_A(θ) is Hermitian, so the adjoint map is the same sum.
                    ansatz.accumulate(theta, gc, as_complex_mut(gx));
                }
                Op::Affine {
                    input,
                    weights,
                    bias,
                    rows,
                    cols,
                } => {
                    let x = self.value(*input);
                    for r in 0..*rows {
                        grad[bias + r] += g[r];
                        let row = &mut grad[weights + r * cols..weights + (r + 1) * cols];
                        for (w, xv) in row.iter_mut().zip(x) {
                            *w += g[r] * xv;
                        }
                    }
                    let w = &self.params[*weights..*weights + rows * cols];
                    let gx = acc(&mut adj, *input, *cols);
                    for r in 0..*rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (o, wv) in gx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                            *o += g[r] * wv;
                        }
                    }
                }
                Op::Tanh { input } => {
                    let gx = acc(&mut adj, *input, g.len());
                    for ((o, gi), y) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *o += gi * (1.0 - y * y);
                    }
                }
                Op::Cos { input } => {
                    let x = self.value(*input);
                    let gx = acc(&mut adj, *input, g.len());
                    for ((o, gi), xv) in gx.iter_mut().zip(&g).zip(x) {
                        *o -= gi * xv.sin();
                    }
                }
                Op::Sin { input } => {
                    let x = self.value(*input);
                    let gx = acc(&mut adj, *input, g.len());
                    for ((o, gi), xv) in gx.iter_mut().zip(&g).zip(x) {
                        *o += gi * xv.cos();
                    }
                }
                Op::ScaleNegI { input } => {
                    let gx = acc(&mut adj, *input, g.len());
                    // adjoint of multiplication by -i is multiplication by +i
                    for (o, gp) in gx.chunks_exact_mut(2).zip(g.chunks_exact(2)) {
                        o[0] -= gp[1];
                        o[1] += gp[0];
                    }
                }
                Op::LinComb { terms } => {
                    for &(c, v) in terms {
                        let gx = acc(&mut adj, v, g.len());
                        for (o, gi) in gx.iter_mut().zip(&g) {
                            *o += c * gi;
                        }
                    }
                }
                Op::Rotate { input, basis } => {
                    let mut back = g.clone();
                    rotate_in_place(as_complex_mut(&mut back), basis, true);
                    let gx = acc(&mut adj, *input, g.len());
                    for (o, b) in gx.iter_mut().zip(&back) {
                        *o += b;
                    }
                }
                Op::Abs2 { input } => {
                    let x = self.value(*input);
                    let gx = acc(&mut adj, *input, x.len());
                    for ((o, xp), gi) in gx.chunks_exact_mut(2).zip(x.chunks_exact(2)).zip(&g) {
                        o[0] += 2.0 * xp[0] * gi;
                        o[1] += 2.0 * xp[1] * gi;
                    }
                }
                Op::Normalize { input } => {
                    let x = self.value(*input);
                    let total: f64 = x.iter().sum();
                    let dot: f64 = g.iter().zip(&node.value).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut adj, *input, x.len());
                    for (o, gi) in gx.iter_mut().zip(&g) {
                        *o += (gi - dot) / total;
                    }
                }
                Op::LogClamped { input, floor } => {
                    let x = self.value(*input);
                    let gx = acc(&mut adj, *input, x.len());
                    for ((o, gi), xv) in gx.iter_mut().zip(&g).zip(x) {
                        if *xv > *floor {
                            *o += gi / xv;
                        }
                    }
                }
                Op::WeightedSum { input, weights } => {
                    let gx = acc(&mut adj, *input, weights.len());
                    for (o, w) in gx.iter_mut().zip(weights) {
                        *o += g[0] * w;
                    }
                }
                Op::Sum { inputs } => {
                    for v in inputs {
                        acc(&mut adj, *v, 1)[0] += g[0];
                    }
                }
                Op::SumSquares { input, scale } => {
                    let x = self.value(*input);
                    let gx = acc(&mut adj, *input, x.len());
                    for (o, xv) in gx.iter_mut().zip(x) {
                        *o += 2.0 * scale * xv * g[0];
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::HamiltonianFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central differences with a magnitude-scaled step.
    fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut p = x.to_vec();
                p[i] += h;
                let up = f(&p);
                p[i] -= 2.0 * h;
                let down = f(&p);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn check<'b>(build: &dyn Fn(&mut Tape<'b>) -> Var, x: &[f64], tol: f64) {
        let eval = |p: &[f64]| {
            let mut tape = Tape::new(p);
            let out = build(&mut tape);
            tape.scalar(out)
        };
        let mut tape = Tape::new(x);
        let out = build(&mut tape);
        let grad = tape.backward(out).unwrap();
        let fd = finite_diff(&eval, x);
        for (i, (a, b)) in grad.iter().zip(&fd).enumerate() {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            assert!(rel <= tol, "coordinate {i}: tape {a} vs fd {b} (rel {rel:e})");
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn square_at_three() {
        let p = [3.0];
        let mut tape = Tape::new(&p);
        let x = tape.param(0, 1);
        let y = tape.sum_squares(x, 1.0);
        assert_eq!(tape.scalar(y), 9.0);
        assert_eq!(tape.backward(y).unwrap(), vec![6.0]);
    }

    #[test]
    fn unit_circle_norm_has_zero_gradient() {
        for theta in [-2.0, 0.0, 0.4, 1.3] {
            let p = [theta];
            let mut tape = Tape::new(&p);
            let t = tape.param(0, 1);
            let c = tape.cos(t);
            let s = tape.sin(t);
            let c2 = tape.sum_squares(c, 1.0);
            let s2 = tape.sum_squares(s, 1.0);
            let f = tape.sum(&[c2, s2]);
            assert!((tape.scalar(f) - 1.0).abs() < 1e-15);
            assert!(tape.backward(f).unwrap()[0].abs() < 1e-15);
        }
    }

    #[test]
    fn abs2_reverse_rule() {
        let p = [0.3, -0.7];
        let mut tape = Tape::new(&p);
        let z = tape.param(0, 2);
        let a = tape.abs2(z);
        let g = 1.7;
        let out = tape.weighted_sum(a, vec![g]);
        let grad = tape.backward(out).unwrap();
        assert!((grad[0] - 2.0 * 0.3 * g).abs() < 1e-15);
        assert!((grad[1] - 2.0 * -0.7 * g).abs() < 1e-15);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let p = [0.0];
        let mut tape = Tape::new(&p);
        let x = tape.param(0, 1);
        let y = tape.tanh(x);
        let out = tape.weighted_sum(y, vec![1.0]);
        assert_eq!(tape.backward(out).unwrap(), vec![1.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let p = [1.0, 2.0];
        let mut tape = Tape::new(&p);
        let x = tape.param(0, 2);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let p = [f64::NAN];
        let mut tape = Tape::new(&p);
        let x = tape.param(0, 1);
        let y = tape.sum_squares(x, 1.0);
        assert!(matches!(tape.backward(y), Err(Error::Numeric(_))));
    }

    #[test]
    fn pauli_sum_coefficient_gradient_two_sites() {
        // θ (4 Heisenberg params on 2 sites + 1) followed by an 8-real state
        let ansatz = Ansatz::new(HamiltonianFamily::Heisenberg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 5 + 8);
        let w = random_vec(&mut rng, 8);
        let eval = |p: &[f64]| {
            let mut tape = Tape::new(p);
            let psi = tape.param(5, 8);
            let y = tape.pauli_sum(&ansatz, 0, psi);
            let out = tape.weighted_sum(y, w.clone());
            tape.scalar(out)
        };
        let mut tape = Tape::new(&x);
        let psi = tape.param(5, 8);
        let y = tape.pauli_sum(&ansatz, 0, psi);
        let out = tape.weighted_sum(y, w.clone());
        let grad = tape.backward(out).unwrap();
        let fd = finite_diff(&eval, &x);
        for (a, b) in grad.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn primitive_reverse_rules_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tol = 1e-6;

        // affine + tanh
        let x = random_vec(&mut rng, 4 + 12 + 3);
        let w = random_vec(&mut rng, 3);
        check(
            &|t| {
                let v = t.param(0, 4);
                let a = t.affine(v, 4, 16, 3);
                let h = t.tanh(a);
                t.weighted_sum(h, w.clone())
            },
            &x,
            tol,
        );

        // -i scaling, lincomb, rotation, abs2, normalize, log, reductions
        let basis: PauliBasis = "XY".parse().unwrap();
        let x = random_vec(&mut rng, 16);
        let w = random_vec(&mut rng, 8);
        let counts = vec![-3.0, -1.0, -0.5, -2.0];
        check(
            &|t| {
                let a = t.param(0, 8);
                let b = t.param(8, 8);
                let na = t.scale_neg_i(a);
                let c = t.lincomb(&[(0.7, na), (-1.3, b), (0.2, a)]);
                let r = t.rotate(c, &basis);
                let p = t.abs2(r);
                let q = t.normalize(p);
                let l = t.log_clamped(q, 1e-12);
                let nll = t.weighted_sum(l, counts.clone());
                let lin = t.weighted_sum(c, w.clone());
                let reg = t.sum_squares(b, 0.1);
                t.sum(&[nll, lin, reg])
            },
            &x,
            tol,
        );
    }

    #[test]
    fn clamped_log_has_zero_slope() {
        let p = [1e-20];
        let mut tape = Tape::new(&p);
        let x = tape.param(0, 1);
        let l = tape.log_clamped(x, 1e-12);
        let out = tape.weighted_sum(l, vec![-1.0]);
        assert!((tape.scalar(out) + 1e-12f64.ln()).abs() < 1e-12);
        assert_eq!(tape.backward(out).unwrap(), vec![0.0]);
    }

    #[test]
    fn layout_validation() {
        let mut layout = ParamLayout::new();
        assert_eq!(layout.push("theta", 3), 0);
        assert_eq!(layout.push("w0", 4), 3);
        assert_eq!(layout.len(), 7);
        assert!(ParamVector::new(vec![0.0; 6], layout.clone()).is_err());
        let pv = ParamVector::new((0..7).map(f64::from).collect(), layout).unwrap();
        assert_eq!(pv.segment("w0").unwrap(), &[3.0, 4.0, 5.0, 6.0]);
    }
}
