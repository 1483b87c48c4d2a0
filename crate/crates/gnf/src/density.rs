//! Exact-likelihood training of the flow on sets of feature vectors, with a
//! standard-Gaussian prior. The structured model attends over the full set;
//! the edgeless baseline uses an empty attention mask so every node is an
//! independent draw from the same per-node flow.

use crate::checkpoint::{pack, unpack_into, Checkpoint};
use crate::error::{GnfError, Result};
use crate::flow::{
    flow_forward, flow_inverse, flow_max_raw_scale, reversible_backward, FlowConfig, FlowModel,
};
use crate::mp::{MaskCsr, MaskMode};
use crate::optim::{Adam, GradBuffer, LrSchedule};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

/// log density of N(0, I) summed over all entries of Z.
pub fn prior_logp(z: &Tensor) -> f64 {
    let sumsq: f64 = z.data().iter().map(|v| v * v).sum();
    -0.5 * (sumsq + z.len() as f64 * std::f64::consts::TAU.ln())
}

/// Transform sizes for the coupling networks.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityArch {
    pub steps: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub msg_hidden: Vec<usize>,
    pub msg_dim: usize,
}

impl DensityArch {
    /// Small networks for interactive runs and tests.
    pub fn desk() -> DensityArch {
        DensityArch { steps: 12, heads: 2, head_dim: 8, msg_hidden: vec![48], msg_dim: 24 }
    }

    /// Wide networks (12 steps, 8 heads, deep 256-wide message MLPs).
    pub fn full() -> DensityArch {
        DensityArch {
            steps: 12,
            heads: 8,
            head_dim: 32,
            msg_hidden: vec![256, 256, 256, 256],
            msg_dim: 256,
        }
    }

    fn flow_config(&self, feature_dim: usize, normalize_input: bool) -> FlowConfig {
        FlowConfig {
            feature_dim,
            steps: self.steps,
            heads: self.heads,
            head_dim: self.head_dim,
            msg_hidden: self.msg_hidden.clone(),
            msg_dim: self.msg_dim,
            normalize_input,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityModel {
    pub flow: FlowModel,
    pub mask_mode: MaskMode,
}

impl DensityModel {
    /// Structured model: every node attends to every other node in its set.
    pub fn new_gnf(feature_dim: usize, arch: &DensityArch, rng: &mut Rng) -> Result<DensityModel> {
        let flow = FlowModel::init(arch.flow_config(feature_dim, true), rng)?;
        Ok(DensityModel { flow, mask_mode: MaskMode::Full })
    }

    /// Edgeless baseline: the same coupling architecture with no attention
    /// edges, so the coupling networks see one node at a time. Trunk
    /// standardization is disabled too; it would couple nodes through the
    /// per-set statistics.
    pub fn realnvp_baseline(
        feature_dim: usize,
        arch: &DensityArch,
        rng: &mut Rng,
    ) -> Result<DensityModel> {
        let flow = FlowModel::init(arch.flow_config(feature_dim, false), rng)?;
        Ok(DensityModel { flow, mask_mode: MaskMode::Empty })
    }

    pub fn mask_for_sizes(&self, sizes: &[usize]) -> Result<MaskCsr> {
        MaskCsr::for_sets(self.mask_mode, sizes)
    }

    /// Per-node negative log likelihood of one set (rows = nodes).
    pub fn nll(&self, h: &Tensor) -> Result<f64> {
        let mask = self.mask_for_sizes(&[h.rows()])?;
        self.nll_with_mask(h, &mask)
    }

    pub fn nll_with_mask(&self, h: &Tensor, mask: &MaskCsr) -> Result<f64> {
        let res = flow_forward(&self.flow, h, mask)?;
        Ok(-(prior_logp(&res.output) + res.log_det) / h.rows() as f64)
    }

    /// Draw a set of `n` points: Gaussian latents pushed through the inverse.
    pub fn sample_set(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z = Tensor::randn(n, self.flow.cfg.feature_dim, 1.0, rng);
        let mask = self.mask_for_sizes(&[n])?;
        flow_inverse(&self.flow, &z, &mask)
    }

    /// Total NLL over many sets divided by total node count. Same-size sets
    /// are stacked block-diagonally to cut per-call overhead.
    pub fn mean_nll(&self, sets: &[Tensor]) -> Result<f64> {
        if sets.is_empty() {
            return Err(GnfError::Data("mean_nll over an empty collection".into()));
        }
        let mut total = 0.0;
        let mut nodes = 0usize;
        for chunk in bucket_indices(sets).values() {
            for batch in chunk.chunks(64) {
                let stacked = stack_sets(sets, batch)?;
                let mask = self.mask_for_sizes(&vec![sets[batch[0]].rows(); batch.len()])?;
                let res = flow_forward(&self.flow, &stacked, &mask)?;
                total -= prior_logp(&res.output) + res.log_det;
                nodes += stacked.rows();
            }
        }
        Ok(total / nodes as f64)
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Result<Checkpoint> {
        let mut ckpt = pack("density", seed, step, &self.flow.named())?;
        ckpt.push("meta.config", self.meta_tensor())?;
        Ok(ckpt)
    }

    fn meta_tensor(&self) -> Tensor {
        let cfg = &self.flow.cfg;
        let mut v = vec![
            cfg.feature_dim as f64,
            cfg.steps as f64,
            cfg.heads as f64,
            cfg.head_dim as f64,
            cfg.msg_dim as f64,
            if cfg.normalize_input { 1.0 } else { 0.0 },
            match self.mask_mode {
                MaskMode::Full => 0.0,
                MaskMode::Adjacency => 1.0,
                MaskMode::Empty => 2.0,
            },
        ];
        v.extend(cfg.msg_hidden.iter().map(|&h| h as f64));
        Tensor::from_vec(1, v.len(), v).unwrap()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<DensityModel> {
        let meta = ckpt
            .get("meta.config")
            .ok_or_else(|| GnfError::Data("checkpoint has no meta.config tensor".into()))?;
        if meta.len() < 7 {
            return Err(GnfError::Data("meta.config is too short".into()));
        }
        let m = meta.data();
        let cfg = FlowConfig {
            feature_dim: m[0] as usize,
            steps: m[1] as usize,
            heads: m[2] as usize,
            head_dim: m[3] as usize,
            msg_dim: m[4] as usize,
            normalize_input: m[5] != 0.0,
            msg_hidden: m[7..].iter().map(|&h| h as usize).collect(),
        };
        let mask_mode = match m[6] as i64 {
            0 => MaskMode::Full,
            1 => MaskMode::Adjacency,
            2 => MaskMode::Empty,
            other => return Err(GnfError::Data(format!("unknown mask mode {other}"))),
        };
        let mut flow = FlowModel::init(cfg, &mut Rng::new(0))?;
        let names: Vec<String> = flow.named().iter().map(|(n, _)| n.clone()).collect();
        unpack_into(ckpt, &names, &mut flow.tensors_mut())?;
        Ok(DensityModel { flow, mask_mode })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub step: u64,
    pub split: Split,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Exponential decay: multiply by `lr_decay_rate` every
    /// `lr_decay_every` steps; 0 keeps the rate constant.
    pub lr_decay_every: usize,
    pub lr_decay_rate: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Cap on test examples scored per log point (0 = all).
    pub eval_examples: usize,
}

impl DensityTrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        if self.lr_decay_every == 0 {
            LrSchedule::Constant(self.lr)
        } else {
            LrSchedule::ExpDecay {
                base: self.lr,
                rate: self.lr_decay_rate,
                every: self.lr_decay_every as u64,
            }
        }
    }
}

impl DensityTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(GnfError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(GnfError::Config("batch_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(GnfError::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

impl Default for DensityTrainConfig {
    fn default() -> Self {
        DensityTrainConfig {
            steps: 5000,
            lr: 1e-4,
            lr_decay_every: 0,
            lr_decay_rate: 0.99,
            batch_size: 32,
            grad_clip: 4.0,
            seed: 0,
            log_every: 250,
            eval_examples: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityRun {
    pub curve: Vec<CurvePoint>,
    pub final_train_nll: f64,
    pub final_test_nll: f64,
}

pub(crate) fn bucket_indices(sets: &[Tensor]) -> HashMap<usize, Vec<usize>> {
    let mut buckets: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, s) in sets.iter().enumerate() {
        buckets.entry(s.rows()).or_default().push(i);
    }
    buckets
}

pub(crate) fn stack_sets(sets: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = idx.iter().map(|&i| &sets[i]).collect();
    let cols = refs[0].cols();
    let rows: usize = refs.iter().map(|t| t.rows()).sum();
    let mut out = Tensor::zeros(rows, cols);
    let mut r = 0;
    for t in refs {
        if t.cols() != cols {
            return Err(GnfError::Shape(format!(
                "set width {} differs from {}",
                t.cols(),
                cols
            )));
        }
        for i in 0..t.rows() {
            out.row_mut(r).copy_from_slice(t.row(i));
            r += 1;
        }
    }
    Ok(out)
}

/// Minibatch maximum-likelihood training. Sets are bucketed by size; each
/// step draws a bucket (by example mass) and a with-replacement batch from
/// it, stacks the batch block-diagonally, and descends the mean per-node
/// NLL with reversible backprop.
pub fn train_density(
    model: &mut DensityModel,
    train: &[Tensor],
    test: &[Tensor],
    cfg: &DensityTrainConfig,
) -> Result<DensityRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(GnfError::Data("density training set is empty".into()));
    }
    let buckets: Vec<(usize, Vec<usize>)> = {
        let mut b: Vec<_> = bucket_indices(train).into_iter().collect();
        b.sort_by_key(|(n, _)| *n);
        b
    };
    let mut rng = Rng::new(cfg.seed);
    let mut adam = Adam::new(&model.flow.tensors());
    let mut tape = Tape::new();
    let mut mask_cache: HashMap<(usize, usize), MaskCsr> = HashMap::new();
    let mut curve = Vec::new();
    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    let mut last_train_nll = f64::NAN;
    let mut last_test_nll = f64::NAN;

    fn eval_slice<'a>(sets: &'a [Tensor], cap: usize) -> &'a [Tensor] {
        if cap == 0 || sets.len() <= cap {
            sets
        } else {
            &sets[..cap]
        }
    }
    let schedule = cfg.schedule();

    for step in 0..cfg.steps {
        // Bucket chosen by how many examples it holds.
        let mut pick = rng.below(train.len());
        let bucket = buckets
            .iter()
            .find(|(_, idx)| {
                if pick < idx.len() {
                    true
                } else {
                    pick -= idx.len();
                    false
                }
            })
            .map(|(n, idx)| (*n, idx))
            .unwrap();
        let (set_n, idx) = bucket;
        let batch: Vec<usize> =
            (0..cfg.batch_size).map(|_| idx[rng.below(idx.len())]).collect();
        let stacked = stack_sets(train, &batch)?;
        let mask = mask_cache
            .entry((set_n, batch.len()))
            .or_insert_with(|| model.mask_for_sizes(&vec![set_n; batch.len()]).unwrap())
            .clone();

        let total_nodes = stacked.rows() as f64;
        let res = flow_forward(&model.flow, &stacked, &mask)
            .map_err(|e| GnfError::Numeric(format!("training step {step}: {e}")))?;
        let loss = -(prior_logp(&res.output) + res.log_det) / total_nodes;
        if !loss.is_finite() {
            let scale = flow_max_raw_scale(&model.flow, &stacked, &mask)
                .map(|s| format!("{s:.3e}"))
                .unwrap_or_else(|_| "non-finite".into());
            return Err(GnfError::Numeric(format!(
                "density training diverged at step {step}: loss {loss}, max |scale| {scale}"
            )));
        }

        // d loss / d output = output / total_nodes, d loss / d log_det = -1/total_nodes.
        let grad_out = res.output.affine(1.0 / total_nodes, 0.0);
        let mut grads = GradBuffer::zeros_like(&model.flow.tensors());
        reversible_backward(
            &model.flow,
            &mask,
            &res.output,
            &grad_out,
            -1.0 / total_nodes,
            &mut grads,
            &mut tape,
            None,
        )
        .map_err(|e| GnfError::Numeric(format!("training step {step}: {e}")))?;

        grads.clip_global_norm(cfg.grad_clip);
        let lr = schedule.at(step as u64);
        adam.step(&mut model.flow.tensors_mut(), &grads, lr)?;

        window_loss += loss;
        window_n += 1;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            last_train_nll = window_loss / window_n as f64;
            curve.push(CurvePoint { step: (step + 1) as u64, split: Split::Train, nll: last_train_nll });
            window_loss = 0.0;
            window_n = 0;
            if !test.is_empty() {
                last_test_nll = model.mean_nll(eval_slice(test, cfg.eval_examples))?;
                curve.push(CurvePoint { step: (step + 1) as u64, split: Split::Test, nll: last_test_nll });
            }
        }
    }

    if cfg.steps == 0 {
        last_train_nll = model.mean_nll(eval_slice(train, cfg.eval_examples))?;
        if !test.is_empty() {
            last_test_nll = model.mean_nll(eval_slice(test, cfg.eval_examples))?;
        }
    }
    Ok(DensityRun { curve, final_train_nll: last_train_nll, final_test_nll: last_test_nll })
}

/// Learning-curve CSV: `step,split,nll`.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("step,split,nll\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.step, p.split, p.nll));
    }
    crate::error::write_text(path, &out)
}

/// Sample dump CSV: `example_id,node_id,x0,x1,...`.
pub fn write_samples_csv(path: &Path, samples: &[Tensor]) -> Result<()> {
    let dim = samples.first().map_or(0, |t| t.cols());
    let mut out = String::from("example_id,node_id");
    for c in 0..dim {
        out.push_str(&format!(",x{c}"));
    }
    out.push('\n');
    for (ex, t) in samples.iter().enumerate() {
        for i in 0..t.rows() {
            out.push_str(&format!("{ex},{i}"));
            for c in 0..t.cols() {
                out.push_str(&format!(",{}", t.get(i, c)));
            }
            out.push('\n');
        }
    }
    crate::error::write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gen_mog;

    const LN_2PI: f64 = 1.8378770664093453;

    fn tiny_arch() -> DensityArch {
        DensityArch { steps: 2, heads: 2, head_dim: 2, msg_hidden: vec![4], msg_dim: 3 }
    }

    fn nudge(model: &mut DensityModel, scale: f64, rng: &mut Rng) {
        for step in &mut model.flow.steps {
            for p in [&mut step.f1, &mut step.f2, &mut step.g1, &mut step.g2] {
                let rows = p.wo.rows();
                let cols = p.wo.cols();
                p.wo = Tensor::randn(rows, cols, scale / (rows as f64).sqrt(), rng);
                p.bo = Tensor::randn(1, cols, 0.3 * scale, rng);
            }
        }
    }

    #[test]
    fn prior_matches_closed_form_gaussian_density() {
        let z = Tensor::zeros(1, 2);
        assert!((prior_logp(&z) - (-LN_2PI)).abs() < 1e-12);
        let z = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!((prior_logp(&z) - (-LN_2PI - 0.5)).abs() < 1e-12);
        let one = Tensor::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let two = Tensor::from_vec(2, 2, vec![0.3, -0.7, 0.3, -0.7]).unwrap();
        assert!((prior_logp(&two) - 2.0 * prior_logp(&one)).abs() < 1e-12);
    }

    #[test]
    fn identity_flow_nll_is_the_prior_nll() {
        let model = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(1)).unwrap();
        let h = Tensor::zeros(3, 2);
        let nll = model.nll(&h).unwrap();
        assert!((nll - LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn change_of_variables_is_consistent_through_the_inverse() {
        let mut rng = Rng::new(2);
        let mut model = DensityModel::new_gnf(4, &tiny_arch(), &mut rng).unwrap();
        nudge(&mut model, 0.3, &mut rng);
        let z = Tensor::randn(5, 4, 1.0, &mut rng);
        let mask = model.mask_for_sizes(&[5]).unwrap();
        let x = flow_inverse(&model.flow, &z, &mask).unwrap();
        let res = flow_forward(&model.flow, &x, &mask).unwrap();
        let direct = model.nll(&x).unwrap();
        let via_z = -(prior_logp(&z) + res.log_det) / 5.0;
        assert!((direct - via_z).abs() < 1e-8, "{direct} vs {via_z}");
    }

    #[test]
    fn identity_flow_samples_are_the_gaussian_draws() {
        let model = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let mut expect_rng = Rng::new(4);
        let sample = model.sample_set(6, &mut rng).unwrap();
        let expect = Tensor::randn(6, 2, 1.0, &mut expect_rng);
        assert_eq!(sample, expect);
    }

    #[test]
    fn forward_of_a_sample_recovers_its_latent() {
        let mut rng = Rng::new(5);
        let mut model = DensityModel::new_gnf(4, &tiny_arch(), &mut rng).unwrap();
        nudge(&mut model, 0.3, &mut rng);
        let sample = model.sample_set(5, &mut Rng::new(55)).unwrap();
        let z = Tensor::randn(5, 4, 1.0, &mut Rng::new(55));
        let mask = model.mask_for_sizes(&[5]).unwrap();
        let back = flow_forward(&model.flow, &sample, &mask).unwrap();
        assert!(back.output.max_abs_diff(&z) < 1e-6);
    }

    #[test]
    fn edgeless_baseline_treats_nodes_independently() {
        let mut rng = Rng::new(6);
        let mut model = DensityModel::realnvp_baseline(4, &tiny_arch(), &mut rng).unwrap();
        nudge(&mut model, 0.4, &mut rng);
        let a = Tensor::randn(1, 4, 1.0, &mut rng);
        let b = Tensor::randn(1, 4, 1.0, &mut rng);
        let joint = stack_sets(&[a.clone(), b.clone()], &[0, 1]).unwrap();
        let nll_joint = model.nll(&joint).unwrap();
        let mean_single = (model.nll(&a).unwrap() + model.nll(&b).unwrap()) / 2.0;
        assert!((nll_joint - mean_single).abs() < 1e-10, "{nll_joint} vs {mean_single}");
    }

    #[test]
    fn per_node_nll_ignores_node_order() {
        let mut rng = Rng::new(7);
        for mode in [0, 1] {
            let mut model = if mode == 0 {
                DensityModel::new_gnf(4, &tiny_arch(), &mut rng).unwrap()
            } else {
                DensityModel::realnvp_baseline(4, &tiny_arch(), &mut rng).unwrap()
            };
            nudge(&mut model, 0.3, &mut rng);
            for _ in 0..5 {
                let n = 2 + rng.below(5);
                let h = Tensor::randn(n, 4, 1.0, &mut rng);
                let base = model.nll(&h).unwrap();
                let mut perm: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut perm);
                let mut hp = Tensor::zeros(n, 4);
                for i in 0..n {
                    hp.row_mut(perm[i]).copy_from_slice(h.row(i));
                }
                let permuted = model.nll(&hp).unwrap();
                assert!((base - permuted).abs() < 1e-9, "{base} vs {permuted}");
            }
        }
    }

    #[test]
    fn zero_step_training_changes_nothing() {
        let mut rng = Rng::new(8);
        let data = gen_mog(10, &mut rng);
        let mut model = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(9)).unwrap();
        let before: Vec<Tensor> = model.flow.tensors().into_iter().cloned().collect();
        let untrained = model.mean_nll(&data.examples).unwrap();
        let run = train_density(
            &mut model,
            &data.examples,
            &[],
            &DensityTrainConfig { steps: 0, ..DensityTrainConfig::default() },
        )
        .unwrap();
        assert!(run.curve.is_empty());
        assert!((run.final_train_nll - untrained).abs() < 1e-12);
        for (a, b) in before.iter().zip(model.flow.tensors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut rng = Rng::new(10);
        let train = gen_mog(64, &mut rng).examples;
        let test = gen_mog(16, &mut rng).examples;
        let cfg = DensityTrainConfig {
            steps: 60,
            lr: 1e-3,
            batch_size: 8,
            log_every: 30,
            eval_examples: 0,
            seed: 11,
            ..DensityTrainConfig::default()
        };

        let mut m1 = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(12)).unwrap();
        let r1 = train_density(&mut m1, &train, &test, &cfg).unwrap();
        let mut m2 = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(12)).unwrap();
        let r2 = train_density(&mut m2, &train, &test, &cfg).unwrap();

        assert_eq!(r1.final_test_nll.to_bits(), r2.final_test_nll.to_bits());
        for (a, b) in m1.flow.tensors().iter().zip(m2.flow.tensors()) {
            assert_eq!(*a, b);
        }
        let train_points: Vec<_> = r1.curve.iter().filter(|p| p.split == Split::Train).collect();
        let test_points: Vec<_> = r1.curve.iter().filter(|p| p.split == Split::Test).collect();
        assert_eq!(train_points.len(), 2);
        assert_eq!(test_points.len(), 2);
    }

    #[test]
    fn training_reduces_nll_once_past_the_warmup_plateau() {
        // The zero-initialized output projections hold the flow at the
        // identity for the first few hundred steps, so short runs barely
        // move; this gives it room to descend.
        let mut rng = Rng::new(10);
        let train = gen_mog(256, &mut rng).examples;
        let test = gen_mog(64, &mut rng).examples;
        let mut model = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(12)).unwrap();
        let before = model.mean_nll(&test).unwrap();
        let cfg = DensityTrainConfig {
            steps: 1200,
            lr: 1e-3,
            batch_size: 8,
            log_every: 600,
            eval_examples: 0,
            seed: 11,
            ..DensityTrainConfig::default()
        };
        let run = train_density(&mut model, &train, &test, &cfg).unwrap();
        assert!(
            run.final_test_nll < before - 0.5,
            "no progress: {before} -> {}",
            run.final_test_nll
        );
    }

    #[test]
    fn poisoned_parameters_report_the_training_step() {
        let mut rng = Rng::new(13);
        let train = gen_mog(8, &mut rng).examples;
        let mut model = DensityModel::new_gnf(2, &tiny_arch(), &mut Rng::new(14)).unwrap();
        model.flow.steps[0].f1.wq.data_mut()[0] = f64::NAN;
        let err = train_density(
            &mut model,
            &train,
            &[],
            &DensityTrainConfig { steps: 3, ..DensityTrainConfig::default() },
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("training step 0"), "{msg}");
    }

    #[test]
    fn checkpoint_round_trip_preserves_model_and_mask_mode() {
        let mut rng = Rng::new(15);
        let mut model = DensityModel::realnvp_baseline(2, &tiny_arch(), &mut rng).unwrap();
        nudge(&mut model, 0.3, &mut rng);
        let ckpt = model.to_checkpoint(15, 77).unwrap();
        let bytes = ckpt.to_bytes();
        let loaded = DensityModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(loaded.mask_mode, MaskMode::Empty);
        assert!(!loaded.flow.cfg.normalize_input);
        for (a, b) in model.flow.tensors().iter().zip(loaded.flow.tensors()) {
            assert_eq!(*a, b);
        }
        let h = Tensor::randn(3, 2, 1.0, &mut rng);
        assert_eq!(model.nll(&h).unwrap(), loaded.nll(&h).unwrap());
    }

    #[test]
    fn curve_csv_has_the_documented_header() {
        let dir = std::env::temp_dir().join("gnf-density-csv");
        let path = dir.join("curve.csv");
        let curve = vec![
            CurvePoint { step: 10, split: Split::Train, nll: 2.5 },
            CurvePoint { step: 10, split: Split::Test, nll: 2.75 },
        ];
        write_curve_csv(&path, &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,split,nll\n10,train,2.5\n10,test,2.75\n");

        let samples = vec![Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()];
        let spath = dir.join("samples.csv");
        write_samples_csv(&spath, &samples).unwrap();
        let text = std::fs::read_to_string(&spath).unwrap();
        assert_eq!(text, "example_id,node_id,x0,x1\n0,0,1,2\n0,1,3,4\n");
        std::fs::remove_dir_all(&dir).ok();
    }
}
