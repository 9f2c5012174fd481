use rand::Rng;
use rand_distr::StandardNormal;

use super::NnError;

/// Fully connected network with tanh hidden layers and a linear output.
///
/// Parameters live in one flat vector, layer by layer: the weight matrix
/// (`out x in`, row-major) followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Layer activations from a forward pass, kept for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output sizes");
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        }
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::Shape(format!("invalid layer sizes {dims:?}")));
        }
        let expected = param_count(dims);
        if params.len() != expected {
            return Err(NnError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    /// Orthogonal initialization with zero biases. Hidden layers use
    /// `hidden_gain`, the output layer `output_gain`.
    pub fn orthogonal<R: Rng + ?Sized>(
        dims: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(dims);
        let layers = net.num_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let gain = if l + 1 == layers { output_gain } else { hidden_gain };
            let w = orthogonal_matrix(fan_out, fan_in, rng);
            for (dst, src) in net.params[offset..offset + fan_in * fan_out]
                .iter_mut()
                .zip(w)
            {
                *dst = gain * src;
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Returns `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset = self.layer_offset(l);
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let w = &self.params[offset..offset + fan_in * fan_out];
        let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (w, b)
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.dims[..=l])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.acts.pop().unwrap_or_default())
    }

    /// Forward pass that records every layer's activation in `cache`.
    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) -> Result<(), NnError> {
        if input.len() != self.dims[0] {
            return Err(NnError::DimensionMismatch {
                expected: self.dims[0],
                got: input.len(),
            });
        }
        let layers = self.num_layers();
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let (prev, rest) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let out = &mut rest[0];
            out.clear();
            out.extend(w.chunks_exact(fan_in).zip(b).map(|(row, bias)| {
                bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }));
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(())
    }

    /// Accumulates `d loss / d params` into `grad` given the loss gradient with
    /// respect to the output of the forward pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(d_out.len(), self.output_dim());
        let layers = self.num_layers();
        let mut delta = d_out.to_vec();
        let mut next_delta = Vec::new();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let offset = self.layer_offset(l);
            let x = &cache.acts[l];
            {
                let (gw, gb) = grad[offset..offset + fan_in * fan_out + fan_out]
                    .split_at_mut(fan_in * fan_out);
                for ((grow, gbias), &d) in gw.chunks_exact_mut(fan_in).zip(gb).zip(&delta) {
                    *gbias += d;
                    if d != 0.0 {
                        for (g, xi) in grow.iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through the weights, then through tanh of layer l-1.
            let w = &self.params[offset..offset + fan_in * fan_out];
            next_delta.clear();
            next_delta.resize(fan_in, 0.0);
            for (row, &d) in w.chunks_exact(fan_in).zip(&delta) {
                if d != 0.0 {
                    for (nd, wi) in next_delta.iter_mut().zip(row) {
                        *nd += d * wi;
                    }
                }
            }
            for (nd, a) in next_delta.iter_mut().zip(x) {
                *nd *= 1.0 - a * a;
            }
            std::mem::swap(&mut delta, &mut next_delta);
        }
    }
}

/// `rows x cols` row-major matrix with orthonormal rows or columns
/// (whichever there are fewer of), via modified Gram-Schmidt on a Gaussian
/// draw.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (count, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &basis {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    out
}
