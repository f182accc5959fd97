//! Dense ReLU networks with exact reverse-mode gradients, AdamW and soft
//! target updates.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer as a row-major `out x in` weight matrix followed by its `out` biases.
//! Gradients, optimizer moments and checkpoints use the same layout.
//!
//! Checkpoint layout (little endian):
//!
//! ```text
//! magic    4 bytes  "QMLP"
//! version  u32      1
//! n_sizes  u32      number of layer sizes (layers + 1)
//! sizes    u32 * n_sizes
//! n_params u64
//! params   f64 * n_params
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"QMLP";
const VERSION: u32 = 1;

/// Row-major matrix, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: other.rows,
            });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `start..start + len` as a new matrix.
    pub fn columns(&self, start: usize, len: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * len);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + len]);
        }
        Matrix {
            rows: self.rows,
            cols: len,
            data,
        }
    }
}

/// Weight initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Init {
    /// Multiplier applied to the last layer's uniform fan-in range.
    pub output_scale: f64,
}

impl Default for Init {
    fn default() -> Self {
        Init { output_scale: 1.0 }
    }
}

/// Feed-forward network: affine layers, ReLU between them, identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input followed by each layer's (post-ReLU for hidden) output.
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("cache holds at least the input")
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = Self::count_params(sizes);
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        }
    }

    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(sizes: &[usize], init: Init, rng: &mut impl Rng) -> Self {
        let mut net = Mlp::zeros(sizes);
        let layers = net.num_layers();
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut bound = 1.0 / (n_in as f64).sqrt();
            if l + 1 == layers {
                bound *= init.output_scale;
            }
            let (w, b) = net.layer_range(l);
            for p in &mut net.params[w.start..b.end] {
                *p = rng.random_range(-bound..=bound);
            }
            debug_assert_eq!(b.end - w.start, (n_in + 1) * n_out);
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let expected = Self::count_params(sizes);
        if sizes.len() < 2 || params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias index ranges of layer `l`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let offset: usize = self.sizes[..=l].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = offset..offset + n_in * n_out;
        let b = w.end..w.end + n_out;
        (w, b)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_output().data)
    }

    pub fn forward_batch(&self, input: &Matrix) -> Result<ForwardCache> {
        if input.cols != self.input_size() {
            return Err(Error::DimensionMismatch {
                expected: self.input_size(),
                actual: input.cols,
            });
        }
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.clone());
        for l in 0..layers {
            let x = &activations[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_range(l);
            let bias = &self.params[b];
            let mut y = Matrix::zeros(x.rows, n_out);
            for r in 0..x.rows {
                y.row_mut(r).copy_from_slice(bias);
            }
            // y += x · Wᵀ
            unsafe {
                matrixmultiply::dgemm(
                    x.rows,
                    n_in,
                    n_out,
                    1.0,
                    x.data.as_ptr(),
                    n_in as isize,
                    1,
                    self.params[w].as_ptr(),
                    1,
                    n_in as isize,
                    1.0,
                    y.data.as_mut_ptr(),
                    n_out as isize,
                    1,
                );
            }
            if l + 1 < layers {
                for v in &mut y.data {
                    *v = v.max(0.0);
                }
            }
            activations.push(y);
        }
        Ok(ForwardCache { activations })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix, grads: &mut [f64]) -> Matrix {
        assert_eq!(grads.len(), self.params.len());
        let layers = self.num_layers();
        let mut delta = grad_output.clone();
        for l in (0..layers).rev() {
            let x = &cache.activations[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_range(l);
            let rows = x.rows;
            // dW += δᵀ · x
            unsafe {
                matrixmultiply::dgemm(
                    n_out,
                    rows,
                    n_in,
                    1.0,
                    delta.data.as_ptr(),
                    1,
                    n_out as isize,
                    x.data.as_ptr(),
                    n_in as isize,
                    1,
                    1.0,
                    grads[w.clone()].as_mut_ptr(),
                    n_in as isize,
                    1,
                );
            }
            let gb = &mut grads[b];
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            // δ_prev = δ · W, masked by the ReLU of the previous layer
            let mut prev = Matrix::zeros(rows, n_in);
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    n_out,
                    n_in,
                    1.0,
                    delta.data.as_ptr(),
                    n_out as isize,
                    1,
                    self.params[w].as_ptr(),
                    n_in as isize,
                    1,
                    0.0,
                    prev.data.as_mut_ptr(),
                    n_in as isize,
                    1,
                );
            }
            if l > 0 {
                for (d, a) in prev.data.iter_mut().zip(&x.data) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Loss and parameter gradients for a scalar loss head `outputs -> (loss, dloss/doutputs)`.
    pub fn gradients(
        &self,
        inputs: &Matrix,
        loss_head: impl FnOnce(&Matrix) -> (f64, Matrix),
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_batch(inputs)?;
        let (loss, grad_out) = loss_head(cache.output());
        if grad_out.rows != inputs.rows || grad_out.cols != self.output_size() {
            return Err(Error::DimensionMismatch {
                expected: inputs.rows * self.output_size(),
                actual: grad_out.data.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&cache, &grad_out, &mut grads);
        Ok((loss, grads))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&(*s as u32).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32_buf).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..n)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut u64_buf = [0u8; 8];
        r.read_exact(&mut u64_buf).map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(u64_buf) as usize;
        if count != Self::count_params(&sizes) {
            return Err(bad("parameter count does not match layer sizes"));
        }
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(|_| bad("truncated parameters"))?;
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Mlp::from_params(&sizes, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Mlp::read_from(std::io::BufReader::new(file))
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `target ← (1 − τ) target + τ source`.
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    assert_eq!(target.len(), source.len());
    for (t, s) in target.iter_mut().zip(source) {
        *t = (1.0 - tau) * *t + tau * s;
    }
}

/// Order-sensitive FNV-1a digest of parameter bit patterns.
pub fn checksum(params: &[f64]) -> u64 {
    params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
        (h ^ p.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.param_count(), 4 * 5 + 6 * 2);
    }

    #[test]
    fn identity_layer() {
        let mut net = Mlp::zeros(&[3, 3]);
        let (w, _) = net.layer_range(0);
        for i in 0..3 {
            net.params_mut()[w.start + i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn hand_computed_two_layer() {
        // hidden = relu([[1, -1], [2, 0.5]] x + [0.1, -3]), out = [3, -2] h + 0.25
        let params = vec![1.0, -1.0, 2.0, 0.5, 0.1, -3.0, 3.0, -2.0, 0.25];
        let net = Mlp::from_params(&[2, 2, 1], params).unwrap();
        let x = [0.7, -0.4];
        let h0 = (0.7 + 0.4 + 0.1f64).max(0.0);
        let h1 = (1.4 - 0.2 - 3.0f64).max(0.0);
        let expect = 3.0 * h0 - 2.0 * h1 + 0.25;
        assert!((net.forward(&x).unwrap()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_size() {
        let net = Mlp::zeros(&[3, 2]);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    fn random_batch(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn quadratic_head(out: &Matrix) -> (f64, Matrix) {
        let loss = 0.5 * out.data.iter().map(|v| v * v).sum::<f64>();
        (loss, out.clone())
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 8, 3], Init::default(), &mut rng);
        let x = random_batch(5, 4, &mut rng);
        let (_, g) = net.gradients(&x, |o| (1.0, Matrix::zeros(o.rows, o.cols))).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn doubling_loss_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 8, 8, 3], Init::default(), &mut rng);
        let x = random_batch(6, 4, &mut rng);
        let (l1, g1) = net.gradients(&x, quadratic_head).unwrap();
        let (l2, g2) = net
            .gradients(&x, |o| {
                let (l, g) = quadratic_head(o);
                let data = g.data.iter().map(|v| 2.0 * v).collect();
                (2.0 * l, Matrix::from_vec(g.rows, g.cols, data).unwrap())
            })
            .unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 7, 6, 3], Init::default(), &mut rng);
        let x = random_batch(4, 5, &mut rng);
        let (_, g) = net.gradients(&x, quadratic_head).unwrap();
        let loss = |n: &Mlp| quadratic_head(n.forward_batch(&x).unwrap().output()).0;
        for i in 0..net.param_count() {
            let mut hi = net.clone();
            let mut lo = net.clone();
            hi.params_mut()[i] += 1e-5;
            lo.params_mut()[i] -= 1e-5;
            let fd = (loss(&hi) - loss(&lo)) / 2e-5;
            if g[i].abs() > 1e-8 {
                let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs());
                assert!(rel < 1e-4, "param {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_no_decay_is_noop() {
        let mut p = vec![0.3, -1.2];
        let mut opt = Adam::new(2, 3e-4, 0.0);
        opt.update(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut opt = Adam::new(3, 3e-4, 0.0);
        opt.update(&mut p, &[5.0, -0.01, 1e3]);
        assert!((p[0] - (1.0 - 3e-4)).abs() < 1e-10);
        assert!((p[1] - (1.0 + 3e-4)).abs() < 1e-8);
        assert!((p[2] - (1.0 - 3e-4)).abs() < 1e-10);
    }

    #[test]
    fn adam_weight_decay_only() {
        let mut p = vec![2.0];
        let mut opt = Adam::new(1, 3e-4, 1e-6);
        for _ in 0..10 {
            opt.update(&mut p, &[0.0]);
        }
        let expect = 2.0 * (1.0 - 3e-4 * 1e-6f64).powi(10);
        assert!((p[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn soft_update_examples() {
        let mut t = vec![0.0, 5.0];
        soft_update(&mut t, &[1.0, -1.0], 1.0);
        assert_eq!(t, vec![1.0, -1.0]);
        soft_update(&mut t, &[7.0, 7.0], 0.0);
        assert_eq!(t, vec![1.0, -1.0]);
        let mut t = vec![0.0];
        soft_update(&mut t, &[1.0], 0.001);
        assert!((t[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[6, 16, 16, 4], Init { output_scale: 0.01 }, &mut rng);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"QMLP");
        let back = Mlp::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let x = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(Mlp::read_from(&buf[..buf.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn soft_update_contracts(t in prop::collection::vec(-5.0..5.0f64, 8), s in prop::collection::vec(-5.0..5.0f64, 8), tau in 0.0..1.0f64) {
            let before: f64 = t.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let mut t2 = t.clone();
            soft_update(&mut t2, &s, tau);
            let after: f64 = t2.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((after - (1.0 - tau) * before).abs() < 1e-12);
        }
    }
}
