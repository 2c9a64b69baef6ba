//! Hand-rolled multilayer perceptron halves for split training.
//!
//! The edge half `f_θ` maps inputs to cut-layer activations, the cloud half
//! `f_ψ` maps (restored) cut activations to class logits. Each half owns its
//! own Adam state so the two can live in different processes.

mod adam;
pub mod checkpoint;
mod layer;
mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use layer::{Activation, DenseLayer, LayerGrads};
pub use loss::{argmax, count_correct, softmax_cross_entropy};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::seeds::derive_seed;

const EDGE_INIT_STREAM: u64 = 0xed6e;
const CLOUD_INIT_STREAM: u64 = 0xc10d;

/// Layer widths of both halves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub edge_hidden: Vec<usize>,
    pub cut_dim: usize,
    pub cloud_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    /// `input → 128 → cut` on the edge and `cut → 128 → classes` in the cloud.
    pub fn desk(input_dim: usize, cut_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            edge_hidden: vec![128],
            cut_dim,
            cloud_hidden: vec![128],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.input_dim, self.cut_dim, self.num_classes];
        if all.iter().chain(&self.edge_hidden).chain(&self.cloud_hidden).any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        Ok(())
    }

    // Cut activations are post-relu, like a pooled convolutional feature map.
    fn edge_plan(&self) -> Vec<(usize, usize, Activation)> {
        plan(self.input_dim, &self.edge_hidden, self.cut_dim, Activation::Relu)
    }

    fn cloud_plan(&self) -> Vec<(usize, usize, Activation)> {
        plan(self.cut_dim, &self.cloud_hidden, self.num_classes, Activation::None)
    }
}

fn plan(input: usize, hidden: &[usize], output: usize, last: Activation) -> Vec<(usize, usize, Activation)> {
    let widths: Vec<usize> = std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect();
    let n = widths.len() - 1;
    (0..n)
        .map(|i| {
            let act = if i + 1 == n { last } else { Activation::Relu };
            (widths[i], widths[i + 1], act)
        })
        .collect()
}

/// Activations recorded by a forward pass, tagged with the parameter version.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Matrix>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds the input at least")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Layer by layer, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }
}

/// Result of the cloud's forward pass, loss and backward pass for one batch.
#[derive(Clone, Debug)]
pub struct CloudPass {
    pub loss: f64,
    pub logits: Matrix,
    pub grad_input: Matrix,
    pub grads: Gradients,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    adam: AdamState,
    version: u64,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, adam: AdamConfig) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        let shapes = layers.iter().flat_map(|l| [l.weights.len(), l.bias.len()]);
        let adam = AdamState::new(adam, shapes);
        Ok(Self { layers, adam, version: 0 })
    }

    fn init(plan: &[(usize, usize, Activation)], rng: &mut ChaCha8Rng, adam: AdamConfig) -> Result<Self> {
        let layers = plan
            .iter()
            .map(|&(i, o, act)| DenseLayer::init(i, o, act, rng))
            .collect();
        Self::new(layers, adam)
    }

    pub fn init_edge(arch: &Architecture, seed: u64, adam: AdamConfig) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, EDGE_INIT_STREAM));
        Self::init(&arch.edge_plan(), &mut rng, adam)
    }

    pub fn init_cloud(arch: &Architecture, seed: u64, adam: AdamConfig) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CLOUD_INIT_STREAM));
        Self::init(&arch.cloud_plan(), &mut rng, adam)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Mutable access to one flat parameter; invalidates outstanding caches.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        self.version += 1;
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, x: &Matrix, exec: Exec) -> Result<(Matrix, ForwardCache)> {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap(), exec)?;
            activations.push(next);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, ForwardCache { activations, version: self.version }))
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, x: &Matrix, exec: Exec) -> Result<Matrix> {
        let mut h = self.layers[0].forward(x, exec)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h, exec)?;
        }
        Ok(h)
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix, exec: Exec) -> Result<(Gradients, Matrix)> {
        if cache.version != self.version {
            return Err(Error::contract(format!(
                "stale forward cache (version {} vs parameters at {})",
                cache.version, self.version
            )));
        }
        let mut grad = upstream.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, gx) = layer.backward(&cache.activations[i], &cache.activations[i + 1], &grad, exec)?;
            layers.push(g);
            grad = gx;
        }
        layers.reverse();
        Ok((Gradients { layers }, grad))
    }

    pub fn step(&mut self, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads.layers.iter().zip(&self.layers).any(|(g, l)| {
                g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len()
            })
        {
            return Err(Error::contract("gradient shapes do not match the network"));
        }
        self.adam.begin_step();
        for (i, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            self.adam.update(2 * i, &mut layer.weights, &g.weights);
            self.adam.update(2 * i + 1, &mut layer.bias, &g.bias);
        }
        self.version += 1;
        Ok(())
    }

    /// Forward, mean cross-entropy and backward in one call.
    pub fn forward_loss(&self, input: &Matrix, labels: &[u32], exec: Exec) -> Result<CloudPass> {
        if input.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "cloud expects width {}, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        let (logits, cache) = self.forward(input, exec)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        let (grads, grad_input) = self.backward(&cache, &grad_logits, exec)?;
        Ok(CloudPass { loss, logits, grad_input, grads })
    }
}

/// Both halves in one place, for in-process training.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitModel {
    pub edge: Mlp,
    pub cloud: Mlp,
}

impl SplitModel {
    pub fn new(edge: Mlp, cloud: Mlp) -> Result<Self> {
        if edge.output_dim() != cloud.input_dim() {
            return Err(Error::invalid(format!(
                "edge output width {} does not match cloud input width {}",
                edge.output_dim(),
                cloud.input_dim()
            )));
        }
        Ok(Self { edge, cloud })
    }

    pub fn init(arch: &Architecture, seed: u64, adam: AdamConfig) -> Result<Self> {
        Self::new(Mlp::init_edge(arch, seed, adam)?, Mlp::init_cloud(arch, seed, adam)?)
    }

    pub fn cut_dim(&self) -> usize {
        self.edge.output_dim()
    }

    pub fn forward_edge(&self, x: &Matrix, exec: Exec) -> Result<(Matrix, ForwardCache)> {
        self.edge.forward(x, exec)
    }

    pub fn forward_cloud_and_loss(&self, restored: &Matrix, labels: &[u32], exec: Exec) -> Result<CloudPass> {
        self.cloud.forward_loss(restored, labels, exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture { input_dim: 2, edge_hidden: vec![], cut_dim: 4, cloud_hidden: vec![], num_classes: 3 }
    }

    #[test]
    fn forward_matches_hand_unrolled_arithmetic() {
        let model = SplitModel::init(&tiny(), 3, AdamConfig::default()).unwrap();
        let x = Matrix::new(1, 2, vec![0.7, -1.2]).unwrap();
        let (z, _) = model.forward_edge(&x, Exec::Sequential).unwrap();
        let l = &model.edge.layers()[0];
        for o in 0..4 {
            let pre = l.weights[2 * o] * 0.7 + l.weights[2 * o + 1] * -1.2 + l.bias[o];
            assert_eq!(z.data()[o], pre.max(0.0));
        }
        let logits = model.cloud.infer(&z, Exec::Sequential).unwrap();
        let c = &model.cloud.layers()[0];
        for k in 0..3 {
            let mut acc = 0.0;
            for i in 0..4 {
                acc += c.weights[4 * k + i] * z.data()[i];
            }
            assert_eq!(logits.data()[k], acc + c.bias[k]);
        }
    }

    #[test]
    fn halves_initialise_independently() {
        let arch = Architecture::desk(8, 6, 3);
        let full = SplitModel::init(&arch, 11, AdamConfig::default()).unwrap();
        assert_eq!(full.edge, Mlp::init_edge(&arch, 11, AdamConfig::default()).unwrap());
        assert_eq!(full.cloud, Mlp::init_cloud(&arch, 11, AdamConfig::default()).unwrap());
        assert_ne!(full, SplitModel::init(&arch, 12, AdamConfig::default()).unwrap());
    }

    #[test]
    fn stale_cache_is_a_contract_violation() {
        let mut model = SplitModel::init(&tiny(), 1, AdamConfig::default()).unwrap();
        let x = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let (z, cache) = model.forward_edge(&x, Exec::Sequential).unwrap();
        let up = Matrix::new(1, 4, vec![1.0; 4]).unwrap();
        let (g, _) = model.edge.backward(&cache, &up, Exec::Sequential).unwrap();
        model.edge.step(&g).unwrap();
        assert!(matches!(
            model.edge.backward(&cache, &up, Exec::Sequential),
            Err(Error::Contract(_))
        ));
        assert_eq!(z.cols(), 4);
    }

    #[test]
    fn zero_upstream_leaves_parameters() {
        let mut model = SplitModel::init(&tiny(), 1, AdamConfig::default()).unwrap();
        let before = model.edge.parameters();
        let x = Matrix::new(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let (_, cache) = model.forward_edge(&x, Exec::Sequential).unwrap();
        let (g, _) = model.edge.backward(&cache, &Matrix::zeros(2, 4), Exec::Sequential).unwrap();
        model.edge.step(&g).unwrap();
        assert_eq!(model.edge.parameters(), before);
        assert_eq!(model.edge.adam().step, 1);
    }

    #[test]
    fn width_mismatch_rejected() {
        let model = SplitModel::init(&tiny(), 1, AdamConfig::default()).unwrap();
        assert!(model.forward_edge(&Matrix::zeros(1, 3), Exec::Sequential).is_err());
        assert!(model.forward_cloud_and_loss(&Matrix::zeros(1, 3), &[0], Exec::Sequential).is_err());
        let other = Mlp::init_cloud(&Architecture { cut_dim: 5, ..tiny() }, 1, AdamConfig::default()).unwrap();
        assert!(SplitModel::new(model.edge.clone(), other).is_err());
    }
}
