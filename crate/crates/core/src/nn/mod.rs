//! Dense tanh networks with hand-written reverse mode.
//!
//! Every network stores its weights in a single flat [`ParamVector`] so that
//! optimizers, target-network mixing and checkpoints all work on plain slices.
//! Layer `l` contributes a row-major `(out, in)` weight matrix followed by an
//! `out`-long bias vector.

mod adam;
mod batch;
mod checkpoint;

pub use adam::AdamState;
pub use batch::BatchTrace;
pub use checkpoint::{load_params, read_params, save_params, write_params, CHECKPOINT_MAGIC};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Name and shape of one array inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDesc {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArrayDesc {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage plus the descriptor table that gives it structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<ArrayDesc>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<ArrayDesc>) -> Self {
        let n = layout.iter().map(ArrayDesc::numel).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_parts(values: Vec<f64>, layout: Vec<ArrayDesc>) -> Result<Self> {
        let n: usize = layout.iter().map(ArrayDesc::numel).sum();
        if n != values.len() {
            return Err(Error::shape("parameter vector", n, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ArrayDesc] {
        &self.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }
}

/// Target-network tracking: `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau = {tau} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::shape("polyak update", target.len(), online.len()));
    }
    if tau == 1.0 {
        target.values.copy_from_slice(&online.values);
        return Ok(());
    }
    for (t, o) in target.values.iter_mut().zip(&online.values) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Multi-layer perceptron: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: ParamVector,
}

/// Cached activations of one forward pass, reused across calls to avoid
/// reallocating per sample.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn layout_for(widths: &[usize]) -> Vec<ArrayDesc> {
    let mut layout = Vec::with_capacity(2 * (widths.len() - 1));
    for (l, w) in widths.windows(2).enumerate() {
        layout.push(ArrayDesc::new(format!("l{l}.weight"), vec![w[1], w[0]]));
        layout.push(ArrayDesc::new(format!("l{l}.bias"), vec![w[1]]));
    }
    layout
}

/// `tanh` with at most a few ulp of error, about twice as fast as libm's.
/// Small arguments use a rational approximation; larger ones the identity
/// `1 - 2 / (e^{2|x|} + 1)`, which has no cancellation there.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.625 {
        let z = x * x;
        let p = (-9.643_991_794_250_522e-1 * z - 9.928_772_310_019_186e1) * z - 1.614_687_684_417_084_5e3;
        let q = ((z + 1.128_116_784_916_329_3e2) * z + 2.235_488_390_601_004_4e3) * z + 4.844_063_053_251_255e3;
        x + x * z * (p / q)
    } else if a > 22.0 {
        1.0f64.copysign(x)
    } else {
        (1.0 - 2.0 / ((2.0 * a).exp() + 1.0)).copysign(x)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Mlp {
    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut offset = 0;
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("bound is positive");
            let n = w[0] * w[1] + w[1];
            for v in &mut net.params.values[offset..offset + n] {
                *v = dist.sample(rng);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: ParamVector::zeros(layout_for(widths)),
        })
    }

    pub fn from_params(widths: &[usize], params: ParamVector) -> Result<Self> {
        Self::check_widths(widths)?;
        let layout = layout_for(widths);
        if params.layout != layout {
            return Err(Error::Checkpoint(format!(
                "parameter layout does not match widths {widths:?}"
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::new();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.acts.pop().expect("trace has an output layer"))
    }

    /// Forward pass that keeps every layer's activation for a later backward.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("mlp input", self.input_dim(), input.len()));
        }
        let layers = self.num_layers();
        trace.acts.resize_with(layers + 1, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);

        let p = &self.params.values;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &p[offset..offset + n_in * n_out];
            let bias = &p[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;

            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            let hidden = l + 1 < layers;
            for (row, b) in weights.chunks_exact(n_in).zip(bias) {
                let z = dot(row, x) + b;
                y.push(if hidden { tanh(z) } else { z });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} output")));
            }
        }
        Ok(())
    }

    /// Reverse pass over a recorded trace.
    ///
    /// `param_grad`, when given, is accumulated into (not overwritten), so
    /// batch gradients can be summed across samples. `input_grad` is
    /// overwritten.
    pub fn backward_trace(
        &self,
        trace: &mut Trace,
        output_grad: &[f64],
        mut param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let layers = self.num_layers();
        if trace.acts.len() != layers + 1 || trace.acts[0].len() != self.input_dim() {
            return Err(Error::invalid("backward called without a matching forward trace"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape(
                "mlp output gradient",
                self.output_dim(),
                output_grad.len(),
            ));
        }
        if let Some(g) = param_grad.as_deref() {
            if g.len() != self.num_params() {
                return Err(Error::shape("mlp parameter gradient", self.num_params(), g.len()));
            }
        }
        if let Some(g) = input_grad.as_deref() {
            if g.len() != self.input_dim() {
                return Err(Error::shape("mlp input gradient", self.input_dim(), g.len()));
            }
        }

        let p = &self.params.values;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }

        let Trace {
            acts,
            delta,
            delta_prev,
        } = trace;
        delta.clear();
        delta.extend_from_slice(output_grad);

        let need_input = input_grad.is_some();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let x = &acts[l];

            if delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} gradient")));
            }

            if let Some(g) = param_grad.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for ((grow, gbi), d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(delta.iter()) {
                    axpy(*d, x, grow);
                    *gbi += d;
                }
            }

            if l == 0 && !need_input {
                break;
            }

            let weights = &p[off..off + n_in * n_out];
            delta_prev.clear();
            delta_prev.resize(n_in, 0.0);
            for (row, d) in weights.chunks_exact(n_in).zip(delta.iter()) {
                axpy(*d, row, delta_prev);
            }
            if l > 0 {
                // x holds tanh outputs of the previous layer
                for (dp, a) in delta_prev.iter_mut().zip(x) {
                    *dp *= 1.0 - a * a;
                }
            }
            std::mem::swap(delta, delta_prev);
        }

        if let Some(g) = input_grad {
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("input gradient".into()));
            }
            g.copy_from_slice(delta);
        }
        Ok(())
    }

    /// One-shot gradient of `<output_grad, net(input)>` with respect to the
    /// parameters and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let mut trace = Trace::new();
        self.forward_trace(input, &mut trace)?;
        let mut grad = self.params.zeros_like();
        let mut input_grad = vec![0.0; self.input_dim()];
        self.backward_trace(&mut trace, output_grad, Some(&mut grad.values), Some(&mut input_grad))?;
        Ok((grad, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn seeded_net(widths: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(widths, &mut rng).unwrap()
    }

    // Straight-line re-implementation of a 2-4-1 network.
    fn oracle_2_4_1(p: &[f64], x: &[f64]) -> f64 {
        let (w1, rest) = p.split_at(8);
        let (b1, rest) = rest.split_at(4);
        let (w2, b2) = rest.split_at(4);
        let mut out = b2[0];
        for i in 0..4 {
            let h = (w1[2 * i] * x[0] + w1[2 * i + 1] * x[1] + b1[i]).tanh();
            out += w2[i] * h;
        }
        out
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_net() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        net.params_mut().values_mut()[0] = 1.0;
        assert_eq!(net.forward(&[3.5]).unwrap(), vec![3.5]);
    }

    #[test]
    fn seeded_two_four_one_matches_oracle() {
        let net = seeded_net(&[2, 4, 1], 11);
        let x = [1.0, -1.0];
        let out = net.forward(&x).unwrap();
        let expected = oracle_2_4_1(net.params().values(), &x);
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = seeded_net(&[2, 4, 1], 0);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_is_pure() {
        let net = seeded_net(&[3, 16, 16, 2], 5);
        let x = [0.3, -0.7, 1.1];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = seeded_net(&[3, 8, 2], 2);
        let (g, gi) = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_neuron_gradient() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        net.params_mut().values_mut().copy_from_slice(&[0.7, -0.2]);
        let (g, gi) = net.backward(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.values(), &[2.0, 1.0]);
        assert_eq!(gi, vec![0.7]);
    }

    #[test]
    fn non_finite_input_names_layer() {
        let net = seeded_net(&[1, 3, 1], 0);
        let err = net.forward(&[f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..100 {
            let widths: &[usize] = if case % 2 == 0 { &[2, 8, 2] } else { &[3, 64, 64, 4] };
            let net = seeded_net(widths, case);
            let x: Vec<f64> = (0..widths[0]).map(|_| rng.sample(StandardNormal)).collect();
            let dir: Vec<f64> = (0..net.output_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let (g, gi) = net.backward(&x, &dir).unwrap();
            let loss = |n: &Mlp, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(&dir).map(|(a, b)| a * b).sum() };
            let h = 1e-5;
            let n = net.num_params();
            let idx: Vec<usize> = (0..24).map(|_| rng.random_range(0..n)).collect();
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for &i in &idx {
                let mut plus = net.clone();
                plus.params_mut().values_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut().values_mut()[i] -= h;
                num.push((loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h));
                ana.push(g.values()[i]);
            }
            for j in 0..x.len() {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                num.push((loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h));
                ana.push(gi[j]);
            }
            let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = num
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff / scale.max(1e-8) < 1e-4, "case {case}: rel err {}", diff / scale);
        }
    }

    #[test]
    fn polyak_examples() {
        let layout = vec![ArrayDesc::new("x", vec![1])];
        let online = ParamVector::from_parts(vec![4.0], layout.clone()).unwrap();
        let mut target = ParamVector::from_parts(vec![2.0], layout).unwrap();
        polyak_update(&mut target, &online, 0.5).unwrap();
        assert_eq!(target.values(), &[3.0]);
        polyak_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target.values(), &[3.0]);
        polyak_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.values(), &[4.0]);
        assert!(polyak_update(&mut target, &online, 1.5).is_err());
        assert!(polyak_update(&mut target, &online, -0.1).is_err());
    }

    #[test]
    fn polyak_rejects_length_mismatch() {
        let mut a = ParamVector::zeros(vec![ArrayDesc::new("a", vec![2])]);
        let b = ParamVector::zeros(vec![ArrayDesc::new("b", vec![3])]);
        assert!(polyak_update(&mut a, &b, 0.5).is_err());
    }

    #[test]
    fn from_parts_checks_count_and_finiteness() {
        let layout = vec![ArrayDesc::new("w", vec![2, 2])];
        assert!(ParamVector::from_parts(vec![0.0; 3], layout.clone()).is_err());
        assert!(ParamVector::from_parts(vec![0.0, 1.0, f64::INFINITY, 2.0], layout.clone()).is_err());
        assert!(ParamVector::from_parts(vec![0.0; 4], layout).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn polyak_is_affine(t in prop::collection::vec(-10.0f64..10.0, 4),
                                o in prop::collection::vec(-10.0f64..10.0, 4),
                                tau in 0.0f64..=1.0) {
                let layout = vec![ArrayDesc::new("p", vec![4])];
                let online = ParamVector::from_parts(o.clone(), layout.clone()).unwrap();
                let mut target = ParamVector::from_parts(t.clone(), layout).unwrap();
                polyak_update(&mut target, &online, tau).unwrap();
                for i in 0..4 {
                    let expected = tau * o[i] + (1.0 - tau) * t[i];
                    prop_assert!((target.values()[i] - expected).abs() <= 1e-12);
                }
            }
        }
    }
}
