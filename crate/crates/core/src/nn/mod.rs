//! A small trainable function family and the reverse-mode machinery needed to
//! differentiate losses through unrolled simulated trajectories.
//!
//! Networks map (t, x[, y]) to a d-vector: the time is expanded into
//! sinusoidal features, concatenated with the state (and conditioning vector)
//! and pushed through a tanh multilayer perceptron. Parameters live in one
//! flat vector so the optimizer and checkpoint format stay trivial.

mod adam;
mod check;
mod io;
mod tape;

pub use adam::{scheduled_lr, AdamConfig, AdamState};
pub use check::finite_difference_check;
pub use tape::{NetRef, NodeId, Tape};

use crate::{Error, Prng, Result};

/// Shape of an [`MlpFunction`]: dimensions, hidden widths and the time
/// featurizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    pub state_dim: usize,
    /// Dimension of the conditioning vector appended to the input (0 = none).
    pub obs_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of sinusoidal time features (split evenly into sin/cos pairs).
    pub time_features: usize,
    /// Base period of the slowest feature; set this to the diffusion horizon.
    pub time_scale: f64,
}

impl Arch {
    /// Default shape used by the samplers: two hidden layers of width 64 and
    /// 16 time features on a geometric frequency ladder.
    pub fn for_sampler(state_dim: usize, obs_dim: usize, horizon: f64) -> Self {
        Self {
            state_dim,
            obs_dim,
            out_dim: state_dim,
            hidden: vec![64, 64],
            time_features: 16,
            time_scale: horizon,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.time_features + self.state_dim + self.obs_dim
    }

    /// Row/column shapes of each affine layer, in order.
    pub(crate) fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.hidden.iter().copied());
        dims.push(self.out_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    /// Sinusoidal features of the scalar time: pairs sin/cos on a geometric
    /// frequency ladder starting at pi / time_scale.
    pub fn featurize_time(&self, t: f64, out: &mut Vec<f64>) {
        out.clear();
        let base = std::f64::consts::PI / self.time_scale;
        for i in 0..self.time_features / 2 {
            let w = base * (1u64 << i) as f64;
            out.push((w * t).sin());
            out.push((w * t).cos());
        }
        // Odd feature counts get one extra raw-scaled time entry.
        if self.time_features % 2 == 1 {
            out.push(t / self.time_scale);
        }
    }
}

/// A trainable map (t, x[, y]) -> R^out with a flat parameter vector.
#[derive(Debug, Clone)]
pub struct MlpFunction {
    arch: Arch,
    params: Vec<f64>,
}

impl MlpFunction {
    /// Glorot-uniform initialization with zero biases; the output layer is
    /// scaled down so the initial map is close to zero and early trajectories
    /// stay near the reference process.
    pub fn init(arch: Arch, rng: &mut Prng) -> Self {
        let shapes = arch.layer_shapes();
        let n_layers = shapes.len();
        let mut params = Vec::with_capacity(arch.n_params());
        for (li, (rows, cols)) in shapes.iter().enumerate() {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let scale = if li + 1 == n_layers { 1e-2 } else { 1.0 };
            for _ in 0..rows * cols {
                params.push(scale * rng.uniform(-bound, bound));
            }
            params.extend(std::iter::repeat_n(0.0, *rows));
        }
        Self { arch, params }
    }

    /// All-zero parameters (maps everything to the zero vector).
    pub fn zeros(arch: Arch) -> Self {
        let n = arch.n_params();
        Self {
            arch,
            params: vec![0.0; n],
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.params.len());
        self.params.copy_from_slice(p);
    }

    /// Deterministic forward pass.
    pub fn eval(&self, t: f64, x: &[f64], y: Option<&[f64]>) -> Vec<f64> {
        self.eval_with(&self.params, t, x, y)
    }

    /// Forward pass with an explicit parameter vector (used by finite
    /// difference checks).
    pub fn eval_with(&self, params: &[f64], t: f64, x: &[f64], y: Option<&[f64]>) -> Vec<f64> {
        assert_eq!(x.len(), self.arch.state_dim, "state dimension mismatch");
        match (y, self.arch.obs_dim) {
            (None, 0) => {}
            (Some(y), p) if y.len() == p => {}
            _ => panic!("conditioning dimension mismatch"),
        }
        let mut input = Vec::with_capacity(self.arch.input_dim());
        let mut feats = Vec::new();
        self.arch.featurize_time(t, &mut feats);
        input.extend_from_slice(&feats);
        input.extend_from_slice(x);
        if let Some(y) = y {
            input.extend_from_slice(y);
        }

        let shapes = self.arch.layer_shapes();
        let n_layers = shapes.len();
        let mut h = input;
        let mut off = 0;
        for (li, (rows, cols)) in shapes.iter().enumerate() {
            let w = &params[off..off + rows * cols];
            let b = &params[off + rows * cols..off + rows * cols + rows];
            off += rows * cols + rows;
            let mut out = vec![0.0; *rows];
            for r in 0..*rows {
                let row = &w[r * cols..(r + 1) * cols];
                let mut acc = b[r];
                for (wi, hi) in row.iter().zip(&h) {
                    acc += wi * hi;
                }
                out[r] = if li + 1 < n_layers { acc.tanh() } else { acc };
            }
            h = out;
        }
        h
    }

    /// Forward pass recorded on a tape; `x` is an existing tape node and `y`
    /// a constant conditioning vector. Returns the output node.
    pub fn eval_tape(
        &self,
        tape: &mut Tape<'_>,
        net: NetRef,
        t: f64,
        x: NodeId,
        y: Option<&[f64]>,
    ) -> NodeId {
        let mut feats = Vec::new();
        self.arch.featurize_time(t, &mut feats);
        let feats_node = tape.constant(&feats);
        let input = match (y, self.arch.obs_dim) {
            (None, 0) => tape.concat2(feats_node, x),
            (Some(y), p) if y.len() == p => {
                let y_node = tape.constant(y);
                tape.concat3(feats_node, x, y_node)
            }
            _ => panic!("conditioning dimension mismatch"),
        };
        let shapes = self.arch.layer_shapes();
        let n_layers = shapes.len();
        let mut h = input;
        let mut off = 0;
        for (li, (rows, cols)) in shapes.iter().enumerate() {
            let w_off = off;
            let b_off = off + rows * cols;
            off += rows * cols + rows;
            h = tape.affine(net, w_off, b_off, *rows, *cols, h);
            if li + 1 < n_layers {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Checked accessor used by training loops before handing parameters to
    /// the optimizer.
    pub fn ensure_finite(&self, iteration: usize) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                iteration,
                msg: "network parameters became non-finite".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Arch {
        Arch {
            state_dim: 2,
            obs_dim: 0,
            out_dim: 2,
            hidden: vec![8, 8],
            time_features: 4,
            time_scale: 1.0,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpFunction::zeros(tiny_arch());
        let out = net.eval(0.3, &[1.0, -2.0], None);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        // No hidden layers: the network is exactly W [feats; x] + b.
        let arch = Arch {
            state_dim: 1,
            obs_dim: 0,
            out_dim: 1,
            hidden: vec![],
            time_features: 0,
            time_scale: 1.0,
        };
        let mut net = MlpFunction::zeros(arch);
        net.params_mut()[0] = 3.0; // weight on x
        net.params_mut()[1] = -0.5; // bias
        let out = net.eval(0.0, &[2.0], None);
        assert!((out[0] - 5.5).abs() < 1e-15);
    }

    #[test]
    fn hidden_unit_permutation_invariance() {
        let arch = Arch {
            state_dim: 1,
            obs_dim: 0,
            out_dim: 1,
            hidden: vec![4],
            time_features: 2,
            time_scale: 1.0,
        };
        let mut rng = Prng::seed_from(2);
        let net = MlpFunction::init(arch.clone(), &mut rng);
        let base = net.eval(0.4, &[0.9], None);

        // Swap hidden units 0 and 1: rows of W0, entries of b0, columns of W1.
        let mut p = net.params().to_vec();
        let in_dim = arch.input_dim();
        for c in 0..in_dim {
            p.swap(c, in_dim + c);
        }
        p.swap(4 * in_dim, 4 * in_dim + 1); // b0
        let w1 = 4 * in_dim + 4;
        p.swap(w1, w1 + 1); // columns of the 1x4 output layer
        let mut permuted = MlpFunction::zeros(arch);
        permuted.set_params(&p);
        let out = permuted.eval(0.4, &[0.9], None);
        assert!((out[0] - base[0]).abs() < 1e-14);
    }

    #[test]
    fn conditioning_dimension_enforced() {
        let arch = Arch {
            state_dim: 1,
            obs_dim: 2,
            out_dim: 1,
            hidden: vec![4],
            time_features: 2,
            time_scale: 1.0,
        };
        let net = MlpFunction::zeros(arch);
        let ok = std::panic::catch_unwind(|| net.eval(0.1, &[0.0], Some(&[1.0, 2.0])));
        assert!(ok.is_ok());
        let bad = std::panic::catch_unwind(|| net.eval(0.1, &[0.0], Some(&[1.0])));
        assert!(bad.is_err());
        let missing = std::panic::catch_unwind(|| net.eval(0.1, &[0.0], None));
        assert!(missing.is_err());
    }

    #[test]
    fn init_is_near_zero_and_deterministic() {
        let mut r1 = Prng::seed_from(5);
        let mut r2 = Prng::seed_from(5);
        let a = MlpFunction::init(tiny_arch(), &mut r1);
        let b = MlpFunction::init(tiny_arch(), &mut r2);
        assert_eq!(a.params(), b.params());
        let out = a.eval(0.2, &[1.0, 1.0], None);
        assert!(out.iter().all(|v| v.abs() < 0.1), "{out:?}");
    }
}
