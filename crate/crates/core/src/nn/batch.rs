//! Batched forward and reverse passes. A batch of `B` inputs is a row-major
//! `B x in` matrix, and every layer becomes one matrix product.

use super::{tanh, Mlp};
use crate::error::{Error, Result};

/// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product, with
/// explicit (row, column) strides for each operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, n, rsc, csc) < c.len());
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    // SAFETY: every element the kernel touches lies inside the slices, as
    // checked above, and `c` does not alias `a` or `b` (it is `&mut`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Activations of one batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct BatchTrace {
    batch: usize,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl BatchTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `B x out` network outputs.
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut offset = 0;
        for w in self.widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        offsets
    }

    /// Forward pass over a row-major `B x in` batch.
    pub fn forward_batch(&self, inputs: &[f64], trace: &mut BatchTrace) -> Result<()> {
        let n_in = self.input_dim();
        if inputs.is_empty() || !inputs.len().is_multiple_of(n_in) {
            return Err(Error::invalid(format!(
                "batch input of {} values is not a positive multiple of {n_in}",
                inputs.len()
            )));
        }
        let batch = inputs.len() / n_in;
        let layers = self.num_layers();
        trace.batch = batch;
        trace.acts.resize_with(layers + 1, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(inputs);

        let p = &self.params.values;
        for (l, off) in self.layer_offsets().into_iter().enumerate() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &p[off..off + n_in * n_out];
            let bias = &p[off + n_in * n_out..off + n_in * n_out + n_out];
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            for _ in 0..batch {
                y.extend_from_slice(bias);
            }
            gemm(
                (batch, n_in, n_out),
                1.0,
                x,
                (n_in, 1),
                weights,
                (1, n_in),
                1.0,
                y,
                (n_out, 1),
            );
            if l + 1 < layers {
                for v in y.iter_mut() {
                    *v = tanh(*v);
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} output")));
            }
        }
        Ok(())
    }

    /// Batched reverse pass. `output_grad` is `B x out`; `param_grad` is
    /// accumulated into, `input_grad` (`B x in`) overwritten.
    pub fn backward_batch(
        &self,
        trace: &mut BatchTrace,
        output_grad: &[f64],
        param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let layers = self.num_layers();
        let batch = trace.batch;
        if trace.acts.len() != layers + 1 || trace.acts[0].len() != batch * self.input_dim() {
            return Err(Error::invalid("batched backward called without a matching forward"));
        }
        if output_grad.len() != batch * self.output_dim() {
            return Err(Error::shape(
                "mlp batch output gradient",
                batch * self.output_dim(),
                output_grad.len(),
            ));
        }
        let mut param_grad = param_grad;
        if let Some(g) = param_grad.as_deref() {
            if g.len() != self.num_params() {
                return Err(Error::shape("mlp parameter gradient", self.num_params(), g.len()));
            }
        }
        if let Some(g) = input_grad.as_deref() {
            if g.len() != batch * self.input_dim() {
                return Err(Error::shape(
                    "mlp batch input gradient",
                    batch * self.input_dim(),
                    g.len(),
                ));
            }
        }

        let p = &self.params.values;
        let offsets = self.layer_offsets();
        let BatchTrace {
            acts,
            delta,
            delta_prev,
            ..
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
                // dW += delta^T x
                gemm(
                    (n_out, batch, n_in),
                    1.0,
                    delta,
                    (1, n_out),
                    x,
                    (n_in, 1),
                    1.0,
                    gw,
                    (n_in, 1),
                );
                for row in delta.chunks_exact(n_out) {
                    for (gbi, d) in gb.iter_mut().zip(row) {
                        *gbi += d;
                    }
                }
            }

            if l == 0 && !need_input {
                break;
            }

            let weights = &p[off..off + n_in * n_out];
            delta_prev.clear();
            delta_prev.resize(batch * n_in, 0.0);
            gemm(
                (batch, n_out, n_in),
                1.0,
                delta,
                (n_out, 1),
                weights,
                (n_in, 1),
                0.0,
                delta_prev,
                (n_in, 1),
            );
            if l > 0 {
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
}
