//! In-process batch-wise compressed split training.
//!
//! One training step runs
//!
//! ```text
//! edge:  Z = f_θ(X) → groups of R → S_g = Σ_i K_i ⊛ Z_i      ──S──▶
//! cloud: Ẑ_i = K_i ⊙ S_g → f_ψ → CE loss → ∂L/∂Ẑ → ∂L/∂S_g  ◀─∂S──
//! edge:  ∂L/∂Z_i = K_i ⊙ ∂L/∂S_g → backward through f_θ
//! ```
//!
//! and both halves take one Adam step. Keys never receive gradients. The
//! edge and cloud halves are separate functions so the networked runner in
//! [`crate::transport`] executes the exact same arithmetic in the exact same
//! order.

mod codec;
pub mod metrics;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use codec::{divide_groups, Codec, CompressedBatch, Compression, WirePrecision};
pub use metrics::{RunSummary, StepMetrics};

use crate::data::{epoch_order, Dataset, FeatureBatch};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hrr::KeyKind;
use crate::linalg::Matrix;
use crate::net::{count_correct, softmax_cross_entropy, AdamConfig, Architecture, ForwardCache, Gradients, Mlp, SplitModel};
use crate::seeds::derive_seed;
use crate::transport::message::{features_frame_len, gradients_frame_len};

const SHUFFLE_STREAM: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ratio: usize,
    pub batch_size: usize,
    pub cut_dim: usize,
    pub seed: u64,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Reject full batches that the ratio does not divide.
    pub strict_grouping: bool,
    pub compression: Compression,
    pub wire: WirePrecision,
    pub edge_hidden: Vec<usize>,
    pub cloud_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ratio: 1,
            batch_size: 64,
            cut_dim: 64,
            seed: 0,
            epochs: 1,
            adam: AdamConfig::default(),
            strict_grouping: false,
            compression: Compression::Hrr(KeyKind::Gaussian),
            wire: WirePrecision::F32,
            edge_hidden: vec![128],
            cloud_hidden: vec![128],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratio == 0 || self.batch_size == 0 || self.cut_dim == 0 {
            return Err(Error::invalid("ratio, batch size and cut dimension must be positive"));
        }
        if self.strict_grouping && self.batch_size % self.ratio != 0 {
            return Err(Error::invalid(format!(
                "strict grouping: batch size {} is not divisible by ratio {}",
                self.batch_size, self.ratio
            )));
        }
        if self.compression == Compression::None && self.ratio != 1 {
            return Err(Error::invalid("uncompressed runs require ratio 1"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            edge_hidden: self.edge_hidden.clone(),
            cut_dim: self.cut_dim,
            cloud_hidden: self.cloud_hidden.clone(),
            num_classes,
        }
    }

    /// Keys are seeded with the run seed itself.
    pub fn key_seed(&self) -> u64 {
        self.seed
    }

    pub fn codec(&self) -> Result<Codec> {
        Codec::new(self.compression, self.cut_dim, self.ratio, self.key_seed())
    }

    pub fn init_model(&self, input_dim: usize, num_classes: usize) -> Result<SplitModel> {
        SplitModel::init(&self.architecture(input_dim, num_classes), self.seed, self.adam)
    }

    /// Strictness applies to full batches only; the trailing batch may be short.
    pub fn strict_for(&self, batch_len: usize) -> bool {
        self.strict_grouping && batch_len == self.batch_size
    }
}

/// Edge-side state kept between sending features and receiving gradients.
#[derive(Clone, Debug)]
pub struct EdgePending {
    cache: ForwardCache,
    group_sizes: Vec<usize>,
}

impl EdgePending {
    /// Cut-layer activations `Z` of the batch in flight.
    pub fn activations(&self) -> &Matrix {
        self.cache.output()
    }
}

/// `Z = f_θ(X)`, grouped, compressed and rounded to wire precision.
pub fn edge_forward(
    edge: &Mlp,
    codec: &Codec,
    inputs: &Matrix,
    strict: bool,
    wire: WirePrecision,
    exec: Exec,
) -> Result<(CompressedBatch, EdgePending)> {
    if inputs.cols() != edge.input_dim() {
        return Err(Error::contract(format!(
            "edge expects width {}, got {}",
            edge.input_dim(),
            inputs.cols()
        )));
    }
    let (z, cache) = edge.forward(inputs, exec)?;
    let mut compressed = codec.encode(&z, strict, exec)?;
    wire.round(&mut compressed.data);
    let pending = EdgePending { cache, group_sizes: compressed.group_sizes.clone() };
    Ok((compressed, pending))
}

/// Cloud half of one step, before its optimizer update.
#[derive(Clone, Debug)]
pub struct CloudStep {
    pub loss: f64,
    pub correct: usize,
    /// `∂L/∂S_g`, rounded to wire precision.
    pub grad: CompressedBatch,
    pub grads: Gradients,
}

pub fn cloud_backward(
    cloud: &Mlp,
    codec: &Codec,
    compressed: &CompressedBatch,
    labels: &[u32],
    wire: WirePrecision,
    exec: Exec,
) -> Result<CloudStep> {
    let restored = codec.decode(compressed, exec)?;
    let pass = cloud.forward_loss(&restored, labels, exec)?;
    let mut grad = codec.decode_adjoint(&pass.grad_input, &compressed.group_sizes, exec)?;
    wire.round(&mut grad.data);
    if !grad.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite cut-layer gradient".into()));
    }
    Ok(CloudStep {
        loss: pass.loss,
        correct: count_correct(&pass.logits, labels),
        grad,
        grads: pass.grads,
    })
}

/// Decode, loss, backward, and an Adam step on the cloud half.
pub fn cloud_step(
    cloud: &mut Mlp,
    codec: &Codec,
    compressed: &CompressedBatch,
    labels: &[u32],
    wire: WirePrecision,
    exec: Exec,
) -> Result<CloudStep> {
    let step = cloud_backward(cloud, codec, compressed, labels, wire, exec)?;
    cloud.step(&step.grads)?;
    Ok(step)
}

pub fn edge_backward(
    edge: &Mlp,
    codec: &Codec,
    pending: &EdgePending,
    grad: &CompressedBatch,
    exec: Exec,
) -> Result<Gradients> {
    if grad.group_sizes != pending.group_sizes {
        return Err(Error::contract("gradient groups do not match the batch in flight"));
    }
    let grad_z = codec.encode_adjoint(grad, exec)?;
    let (grads, _) = edge.backward(&pending.cache, &grad_z, exec)?;
    Ok(grads)
}

/// Backward through the codec and `f_θ`, then an Adam step on the edge half.
pub fn edge_complete(
    edge: &mut Mlp,
    codec: &Codec,
    pending: &EdgePending,
    grad: &CompressedBatch,
    exec: Exec,
) -> Result<()> {
    let grads = edge_backward(edge, codec, pending, grad, exec)?;
    edge.step(&grads)
}

fn check_step_inputs(model: &SplitModel, codec: &Codec, batch: &FeatureBatch) -> Result<()> {
    if model.cut_dim() != codec.dim() {
        return Err(Error::contract(format!(
            "model cut width {} does not match key dimension {}",
            model.cut_dim(),
            codec.dim()
        )));
    }
    if batch.inputs.cols() != model.edge.input_dim() {
        return Err(Error::contract("batch width does not match the edge input"));
    }
    let classes = model.cloud.output_dim();
    if batch.labels.iter().any(|&y| y as usize >= classes) {
        return Err(Error::contract(format!("label out of range for {classes} classes")));
    }
    Ok(())
}

/// Loss and both halves' gradients for one batch, without updating anything.
pub fn gradients(
    model: &SplitModel,
    codec: &Codec,
    batch: &FeatureBatch,
    config: &TrainConfig,
    exec: Exec,
) -> Result<(CloudStep, Gradients)> {
    check_step_inputs(model, codec, batch)?;
    let strict = config.strict_for(batch.len());
    let (compressed, pending) = edge_forward(&model.edge, codec, &batch.inputs, strict, config.wire, exec)?;
    let cloud = cloud_backward(&model.cloud, codec, &compressed, &batch.labels, config.wire, exec)?;
    let edge = edge_backward(&model.edge, codec, &pending, &cloud.grad, exec)?;
    Ok((cloud, edge))
}

/// Loss of one batch through the full compressed path.
pub fn batch_loss(model: &SplitModel, codec: &Codec, batch: &FeatureBatch, config: &TrainConfig, exec: Exec) -> Result<f64> {
    let logits = forward_logits(model, codec, &batch.inputs, config, exec)?;
    Ok(softmax_cross_entropy(&logits, &batch.labels)?.0)
}

fn forward_logits(model: &SplitModel, codec: &Codec, inputs: &Matrix, config: &TrainConfig, exec: Exec) -> Result<Matrix> {
    let z = model.edge.infer(inputs, exec)?;
    let mut compressed = codec.encode(&z, false, exec)?;
    config.wire.round(&mut compressed.data);
    let restored = codec.decode(&compressed, exec)?;
    model.cloud.infer(&restored, exec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub num_groups: usize,
    pub forward_bytes: u64,
    pub backward_bytes: u64,
}

/// One full training step on both halves.
///
/// Every check and every gradient is computed before either half is
/// updated, so a failing step leaves the model untouched.
pub fn train_step(
    model: &mut SplitModel,
    codec: &Codec,
    batch: &FeatureBatch,
    config: &TrainConfig,
    exec: Exec,
) -> Result<StepOutcome> {
    let (cloud, edge_grads) = gradients(model, codec, batch, config, exec)?;
    model.cloud.step(&cloud.grads)?;
    model.edge.step(&edge_grads)?;
    let g = cloud.grad.num_groups();
    Ok(StepOutcome {
        loss: cloud.loss,
        correct: cloud.correct,
        num_groups: g,
        forward_bytes: features_frame_len(g, codec.dim(), batch.len()) as u64,
        backward_bytes: gradients_frame_len(g, codec.dim()) as u64,
    })
}

/// Accuracy with the codec in the loop; lowest class index wins ties.
pub fn evaluate(model: &SplitModel, codec: &Codec, dataset: &Dataset, config: &TrainConfig, exec: Exec) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    for batch in dataset.batches(&order, config.batch_size) {
        let logits = forward_logits(model, codec, &batch.inputs, config, exec)?;
        correct += count_correct(&logits, &batch.labels);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub exec: Exec,
    /// Record wall-clock time per step; zero otherwise, for reproducible files.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { exec: Exec::default(), timing: true }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SplitModel,
    pub codec: Codec,
    pub steps: Vec<StepMetrics>,
    pub summary: RunSummary,
}

/// Sample order for `epoch`, shared by local and networked runs.
pub fn shuffled_order(config: &TrainConfig, n: usize, epoch: usize) -> Vec<usize> {
    epoch_order(n, derive_seed(config.seed, SHUFFLE_STREAM), epoch as u64)
}

/// Accumulates per-step metrics and byte counters into a summary.
#[derive(Clone, Debug, Default)]
pub struct Tally {
    pub steps: Vec<StepMetrics>,
    pub forward_bytes: u64,
    pub backward_bytes: u64,
    pub feature_block_bytes: u64,
    pub vanilla_feature_block_bytes: u64,
}

impl Tally {
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        epoch: usize,
        loss: f64,
        accuracy: Option<f64>,
        batch_len: usize,
        num_groups: usize,
        dim: usize,
        bytes: (u64, u64),
        wall_ms: f64,
    ) {
        self.forward_bytes += bytes.0;
        self.backward_bytes += bytes.1;
        self.feature_block_bytes += (4 * num_groups * dim) as u64;
        self.vanilla_feature_block_bytes += (4 * batch_len * dim) as u64;
        self.steps.push(StepMetrics {
            step: self.steps.len() as u64,
            epoch: epoch as u64,
            loss,
            accuracy,
            forward_bytes: bytes.0,
            backward_bytes: bytes.1,
            cumulative_bytes: self.forward_bytes + self.backward_bytes,
            wall_ms,
        });
    }

    pub fn summary(&self, config: &TrainConfig, dataset: &str, final_accuracy: Option<f64>) -> RunSummary {
        RunSummary {
            config: config.clone(),
            dataset: dataset.to_string(),
            steps: self.steps.len() as u64,
            final_loss: self.steps.last().map_or(f64::NAN, |s| s.loss),
            final_accuracy,
            forward_bytes: self.forward_bytes,
            backward_bytes: self.backward_bytes,
            total_bytes: self.forward_bytes + self.backward_bytes,
            feature_block_bytes: self.feature_block_bytes,
            vanilla_feature_block_bytes: self.vanilla_feature_block_bytes,
            compression_ratio: if self.feature_block_bytes == 0 {
                0.0
            } else {
                self.vanilla_feature_block_bytes as f64 / self.feature_block_bytes as f64
            },
        }
    }
}

pub fn elapsed_ms(start: Instant, timing: bool) -> f64 {
    if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

/// Runs the whole training loop in one process and evaluates on `test`.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    dataset_name: &str,
    opts: RunOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let codec = config.codec()?;
    let mut model = config.init_model(train_set.input_dim(), train_set.num_classes())?;
    let mut tally = Tally::default();
    for epoch in 0..config.epochs {
        let order = shuffled_order(config, train_set.len(), epoch);
        for batch in train_set.batches(&order, config.batch_size) {
            let start = Instant::now();
            let out = train_step(&mut model, &codec, &batch, config, opts.exec)?;
            tally.record(
                epoch,
                out.loss,
                Some(out.correct as f64 / batch.len() as f64),
                batch.len(),
                out.num_groups,
                codec.dim(),
                (out.forward_bytes, out.backward_bytes),
                elapsed_ms(start, opts.timing),
            );
        }
    }
    let final_accuracy = match test_set {
        Some(test) => Some(evaluate(&model, &codec, test, config, opts.exec)?),
        None => None,
    };
    let summary = tally.summary(config, dataset_name, final_accuracy);
    Ok(TrainOutcome { model, codec, steps: tally.steps, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlobSpec;

    fn small() -> (TrainConfig, Dataset, Dataset) {
        let spec = BlobSpec { input_dim: 6, train: 40, test: 20, num_classes: 3, center_scale: 3.0, noise: 0.5 };
        let (train, test) = spec.generate(2).unwrap();
        let config = TrainConfig {
            ratio: 2,
            batch_size: 8,
            cut_dim: 8,
            seed: 4,
            epochs: 2,
            edge_hidden: vec![10],
            cloud_hidden: vec![10],
            adam: AdamConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        };
        (config, train, test)
    }

    #[test]
    fn training_is_deterministic_across_exec_policies() {
        let (config, train_set, test) = small();
        let opts = |exec| RunOptions { exec, timing: false };
        let a = train(&config, &train_set, Some(&test), "blobs", opts(Exec::Sequential)).unwrap();
        let b = train(&config, &train_set, Some(&test), "blobs", opts(Exec::Parallel)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn failed_step_leaves_model_untouched() {
        let (config, train_set, _) = small();
        let codec = config.codec().unwrap();
        let mut model = config.init_model(6, 3).unwrap();
        let before = model.clone();
        let order: Vec<usize> = (0..8).collect();
        let mut batch = train_set.gather(&order).unwrap();
        batch.labels[3] = 7;
        assert!(matches!(
            train_step(&mut model, &codec, &batch, &config, Exec::default()),
            Err(Error::Contract(_))
        ));
        let wrong = TrainConfig { cut_dim: 4, ..config.clone() }.codec().unwrap();
        batch.labels[3] = 0;
        assert!(train_step(&mut model, &wrong, &batch, &config, Exec::default()).is_err());
        assert_eq!(model, before);
    }

    #[test]
    fn strict_grouping() {
        let config = TrainConfig { ratio: 3, batch_size: 8, strict_grouping: true, ..Default::default() };
        assert!(config.validate().is_err());
        let config = TrainConfig { ratio: 2, compression: Compression::None, ..Default::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn traffic_shrinks_by_ratio() {
        let (config, train_set, _) = small();
        let order: Vec<usize> = (0..8).collect();
        let batch = train_set.gather(&order).unwrap();
        let mut model = config.init_model(6, 3).unwrap();
        let out = train_step(&mut model, &config.codec().unwrap(), &batch, &config, Exec::default()).unwrap();
        assert_eq!(out.num_groups, 4);
        assert_eq!(out.forward_bytes, (11 + 12 + 4 * 4 + 4 * 4 * 8 + 4 * 8) as u64);
        assert_eq!(out.backward_bytes, (11 + 8 + 4 * 4 * 8 + 8) as u64);
    }

    #[test]
    fn evaluate_rejects_empty() {
        let (config, train_set, _) = small();
        let model = config.init_model(6, 3).unwrap();
        let empty = Dataset::new(Matrix::zeros(0, 6), vec![], 3).unwrap();
        assert!(evaluate(&model, &config.codec().unwrap(), &empty, &config, Exec::default()).is_err());
        let acc = evaluate(&model, &config.codec().unwrap(), &train_set, &config, Exec::default()).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
