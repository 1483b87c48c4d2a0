//! Two-stage graph generation. Stage one trains the auto-encoder; stage two
//! fits a flow to its embeddings. Sampling then draws a node count from the
//! empirical prior, pulls Gaussian latents through the inverse flow, undoes
//! the embedding standardization, and thresholds decoded edge probabilities.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autoencoder::{decode_edge_prob, AeModel};
use crate::checkpoint::Checkpoint;
use crate::density::{
    bucket_indices, prior_logp, stack_sets, CurvePoint, DensityModel, DensityRun,
    DensityTrainConfig, Split,
};
use crate::error::{io_err, GnfError, Result};
use crate::flow::{flow_forward, flow_max_raw_scale, reversible_backward};
use crate::graph::{Graph, GraphDataset};
use crate::mp::MaskCsr;
use crate::optim::{Adam, GradBuffer};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Empirical distribution of training-set node counts. Generation never
/// invents a size the training data did not contain.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCountPrior {
    sizes: Vec<usize>,
    probs: Vec<f64>,
}

impl NodeCountPrior {
    pub fn support(&self) -> &[usize] {
        &self.sizes
    }

    pub fn prob(&self, n: usize) -> f64 {
        match self.sizes.binary_search(&n) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (&n, &p) in self.sizes.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return n;
            }
        }
        *self.sizes.last().unwrap()
    }

    /// 2 x S table: sizes in row 0, probabilities in row 1.
    pub fn to_tensor(&self) -> Tensor {
        let s = self.sizes.len();
        let mut t = Tensor::zeros(2, s);
        for i in 0..s {
            t.set(0, i, self.sizes[i] as f64);
            t.set(1, i, self.probs[i]);
        }
        t
    }

    pub fn from_tensor(t: &Tensor) -> Result<NodeCountPrior> {
        if t.rows() != 2 || t.cols() == 0 {
            return Err(GnfError::Data(format!(
                "node prior table is {}x{}, expected 2 x S",
                t.rows(),
                t.cols()
            )));
        }
        let sizes: Vec<usize> = t.row(0).iter().map(|&v| v as usize).collect();
        let probs: Vec<f64> = t.row(1).to_vec();
        let total: f64 = probs.iter().sum();
        if !sizes.windows(2).all(|w| w[0] < w[1])
            || probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(GnfError::Data("node prior table is not a distribution".into()));
        }
        Ok(NodeCountPrior { sizes, probs })
    }
}

pub fn fit_node_prior(graphs: &[&Graph]) -> Result<NodeCountPrior> {
    if graphs.is_empty() {
        return Err(GnfError::Data("node prior needs at least one graph".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for g in graphs {
        *counts.entry(g.n()).or_insert(0) += 1;
    }
    let total = graphs.len() as f64;
    let (sizes, probs) = counts
        .into_iter()
        .map(|(n, c)| (n, c as f64 / total))
        .unzip();
    Ok(NodeCountPrior { sizes, probs })
}

/// One embedding set per graph, each under a fresh noise draw.
pub fn embed_dataset(ae: &AeModel, graphs: &[&Graph], rng: &mut Rng) -> Result<Vec<Tensor>> {
    graphs.iter().map(|g| ae.encode_fresh(g, rng)).collect()
}

/// Per-column affine standardization fitted on pooled embedding rows. The
/// flow trains on standardized sets, so generation must invert this map
/// with the very same statistics.
#[derive(Debug, Clone)]
pub struct EmbedNorm {
    pub mean: Tensor,
    pub std: Tensor,
}

impl EmbedNorm {
    pub fn identity(k: usize) -> EmbedNorm {
        EmbedNorm { mean: Tensor::zeros(1, k), std: Tensor::filled(1, k, 1.0) }
    }

    pub fn fit(sets: &[Tensor]) -> Result<EmbedNorm> {
        let k = match sets.first() {
            Some(t) => t.cols(),
            None => return Err(GnfError::Data("embedding standardization needs data".into())),
        };
        if sets.iter().any(|t| t.cols() != k) {
            return Err(GnfError::Shape("embedding sets disagree on width".into()));
        }
        let rows: usize = sets.iter().map(|t| t.rows()).sum();
        let mut mean = vec![0.0; k];
        for t in sets {
            for r in 0..t.rows() {
                for (m, &v) in mean.iter_mut().zip(t.row(r)) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; k];
        for t in sets {
            for r in 0..t.rows() {
                for (c, (&v, &m)) in t.row(r).iter().zip(&mean).enumerate() {
                    var[c] += (v - m) * (v - m);
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|&v| (v / rows as f64).sqrt().max(1e-8)).collect();
        Ok(EmbedNorm {
            mean: Tensor::from_vec(1, k, mean)?,
            std: Tensor::from_vec(1, k, std)?,
        })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean.get(0, c)) / self.std.get(0, c);
            }
        }
        out
    }

    pub fn invert(&self, z: &Tensor) -> Tensor {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std.get(0, c) + self.mean.get(0, c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenFlowTrainConfig {
    pub density: DensityTrainConfig,
    /// Redraw encoder noise and re-embed the training graphs once per
    /// epoch's worth of steps. The standardization stays fixed from the
    /// first embedding pass either way.
    pub renoise_embeddings: bool,
}

impl Default for GenFlowTrainConfig {
    fn default() -> Self {
        GenFlowTrainConfig { density: DensityTrainConfig::default(), renoise_embeddings: true }
    }
}

/// Fit the flow to standardized encoder embeddings of the training graphs.
/// The auto-encoder is read-only here; the two stages never co-train.
pub fn train_embedding_flow(
    flow: &mut DensityModel,
    ae: &AeModel,
    train: &[&Graph],
    test: &[&Graph],
    cfg: &GenFlowTrainConfig,
) -> Result<(DensityRun, EmbedNorm)> {
    let dcfg = &cfg.density;
    dcfg.validate()?;
    if train.is_empty() {
        return Err(GnfError::Data("embedding flow training set is empty".into()));
    }
    if flow.flow.cfg.feature_dim != ae.cfg.embed_dim {
        return Err(GnfError::Shape(format!(
            "flow width {} vs embedding width {}",
            flow.flow.cfg.feature_dim, ae.cfg.embed_dim
        )));
    }
    let mut rng = Rng::new(dcfg.seed);
    let raw = embed_dataset(ae, train, &mut rng)?;
    let norm = EmbedNorm::fit(&raw)?;
    let mut train_sets: Vec<Tensor> = raw.iter().map(|t| norm.apply(t)).collect();
    let test_sets: Vec<Tensor> = embed_dataset(ae, test, &mut rng)?
        .iter()
        .map(|t| norm.apply(t))
        .collect();

    // Bucket structure depends only on graph sizes, which re-embedding
    // never changes.
    let buckets: Vec<(usize, Vec<usize>)> = {
        let mut b: Vec<_> = bucket_indices(&train_sets).into_iter().collect();
        b.sort_by_key(|(n, _)| *n);
        b
    };
    let steps_per_epoch = train_sets.len().div_ceil(dcfg.batch_size).max(1);
    let mut adam = Adam::new(&flow.flow.tensors());
    let mut tape = Tape::new();
    let mut mask_cache: std::collections::HashMap<(usize, usize), MaskCsr> =
        std::collections::HashMap::new();
    let schedule = dcfg.schedule();
    let mut curve = Vec::new();
    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    let mut last_train = f64::NAN;
    let mut last_test = f64::NAN;

    for step in 0..dcfg.steps {
        if cfg.renoise_embeddings && step > 0 && step % steps_per_epoch == 0 {
            let raw = embed_dataset(ae, train, &mut rng)?;
            train_sets = raw.iter().map(|t| norm.apply(t)).collect();
        }
        let mut pick = rng.below(train_sets.len());
        let (set_n, idx) = buckets
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
        let batch: Vec<usize> =
            (0..dcfg.batch_size).map(|_| idx[rng.below(idx.len())]).collect();
        let stacked = stack_sets(&train_sets, &batch)?;
        let mask = mask_cache
            .entry((set_n, batch.len()))
            .or_insert_with(|| flow.mask_for_sizes(&vec![set_n; batch.len()]).unwrap())
            .clone();

        let total_nodes = stacked.rows() as f64;
        let res = flow_forward(&flow.flow, &stacked, &mask)
            .map_err(|e| GnfError::Numeric(format!("training step {step}: {e}")))?;
        let loss = -(prior_logp(&res.output) + res.log_det) / total_nodes;
        if !loss.is_finite() {
            let scale = flow_max_raw_scale(&flow.flow, &stacked, &mask)
                .map(|s| format!("{s:.3e}"))
                .unwrap_or_else(|_| "non-finite".into());
            return Err(GnfError::Numeric(format!(
                "embedding flow training diverged at step {step}: loss {loss}, max |scale| {scale}"
            )));
        }
        let grad_out = res.output.affine(1.0 / total_nodes, 0.0);
        let mut grads = GradBuffer::zeros_like(&flow.flow.tensors());
        reversible_backward(
            &flow.flow,
            &mask,
            &res.output,
            &grad_out,
            -1.0 / total_nodes,
            &mut grads,
            &mut tape,
            None,
        )
        .map_err(|e| GnfError::Numeric(format!("training step {step}: {e}")))?;
        grads.clip_global_norm(dcfg.grad_clip);
        adam.step(&mut flow.flow.tensors_mut(), &grads, schedule.at(step as u64))?;

        window_loss += loss;
        window_n += 1;
        let at = step + 1;
        if at % dcfg.log_every == 0 || at == dcfg.steps {
            last_train = window_loss / window_n as f64;
            window_loss = 0.0;
            window_n = 0;
            curve.push(CurvePoint { step: at as u64, split: Split::Train, nll: last_train });
            if !test_sets.is_empty() {
                let cap = if dcfg.eval_examples == 0 {
                    test_sets.len()
                } else {
                    test_sets.len().min(dcfg.eval_examples)
                };
                last_test = flow.mean_nll(&test_sets[..cap])?;
                curve.push(CurvePoint { step: at as u64, split: Split::Test, nll: last_test });
            }
        }
    }

    if dcfg.steps == 0 {
        last_train = flow.mean_nll(&train_sets)?;
        if !test_sets.is_empty() {
            last_test = flow.mean_nll(&test_sets)?;
        }
    }
    Ok((
        DensityRun { curve, final_train_nll: last_train, final_test_nll: last_test },
        norm,
    ))
}

/// Binary graph from a symmetric probability matrix, thresholded at 0.5
/// over i < j.
pub fn threshold_graph(probs: &Tensor) -> Graph {
    let n = probs.rows();
    let mut g = Graph::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if probs.get(i, j) > 0.5 {
                g.add_edge(i, j).unwrap();
            }
        }
    }
    g
}

/// Everything sampling needs: decoder, embedding flow, the standardization
/// the flow was trained under, and the node-count prior.
#[derive(Debug)]
pub struct GeneratorModel {
    pub ae: AeModel,
    pub flow: DensityModel,
    pub norm: EmbedNorm,
    pub prior: NodeCountPrior,
}

impl GeneratorModel {
    pub fn generate_graph(&self, rng: &mut Rng) -> Result<Graph> {
        let n = self.prior.sample(rng);
        let z = self.flow.sample_set(n, rng)?;
        let x = self.norm.invert(&z);
        let probs = decode_edge_prob(&x, self.ae.cfg.temperature)?;
        Ok(threshold_graph(&probs))
    }

    /// Deterministic per master seed; each sample gets its own stream.
    pub fn generate_batch(&self, count: usize, name: &str, master_seed: u64) -> Result<GraphDataset> {
        let mut master = Rng::new(master_seed);
        let mut graphs = Vec::with_capacity(count);
        for _ in 0..count {
            let mut stream = master.split();
            graphs.push(self.generate_graph(&mut stream)?);
        }
        Ok(GraphDataset {
            test_idx: (0..graphs.len()).collect(),
            train_idx: Vec::new(),
            graphs,
            name: name.to_string(),
        })
    }

    /// Two checkpoint files in `dir`: the flow one carries the
    /// standardization and prior as extra tensors.
    pub fn save(&self, dir: &Path, seed: u64, step: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut fc = self.flow.to_checkpoint(seed, step)?;
        fc.push("embed_norm.mean", self.norm.mean.clone())?;
        fc.push("embed_norm.std", self.norm.std.clone())?;
        fc.push("node_prior.table", self.prior.to_tensor())?;
        fc.save(&dir.join("genflow.ckpt"))?;
        self.ae.to_checkpoint(seed, step)?.save(&dir.join("autoencoder.ckpt"))
    }

    pub fn load(dir: &Path) -> Result<GeneratorModel> {
        let fc = Checkpoint::load(&dir.join("genflow.ckpt"))?;
        let flow = DensityModel::from_checkpoint(&fc)?;
        let missing = |what: &str| GnfError::Data(format!("generator checkpoint lacks {what}"));
        let mean = fc.get("embed_norm.mean").ok_or_else(|| missing("embed_norm.mean"))?.clone();
        let std = fc.get("embed_norm.std").ok_or_else(|| missing("embed_norm.std"))?.clone();
        let prior =
            NodeCountPrior::from_tensor(fc.get("node_prior.table").ok_or_else(|| missing("node_prior.table"))?)?;
        let ae = AeModel::from_checkpoint(&Checkpoint::load(&dir.join("autoencoder.ckpt"))?)?;
        if flow.flow.cfg.feature_dim != ae.cfg.embed_dim {
            return Err(GnfError::Shape(format!(
                "flow width {} vs decoder width {}",
                flow.flow.cfg.feature_dim, ae.cfg.embed_dim
            )));
        }
        Ok(GeneratorModel { ae, flow, norm: EmbedNorm { mean, std }, prior })
    }
}

/// Density-matched Erdős–Rényi baseline: node counts from the same
/// empirical prior, each pair present independently with the training
/// split's pooled edge density.
pub fn er_baseline(train: &[&Graph], count: usize, name: &str, master_seed: u64) -> Result<GraphDataset> {
    let prior = fit_node_prior(train)?;
    let mut pairs = 0usize;
    let mut edges = 0usize;
    for g in train {
        edges += g.num_edges();
        pairs += g.n() * (g.n() - 1) / 2;
    }
    if pairs == 0 {
        return Err(GnfError::Data("baseline needs graphs with at least two nodes".into()));
    }
    let p = edges as f64 / pairs as f64;
    let mut master = Rng::new(master_seed);
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut stream = master.split();
        let n = prior.sample(&mut stream);
        let mut g = Graph::new(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if stream.bernoulli(p) {
                    g.add_edge(i, j)?;
                }
            }
        }
        graphs.push(g);
    }
    Ok(GraphDataset {
        test_idx: (0..graphs.len()).collect(),
        train_idx: Vec::new(),
        graphs,
        name: name.to_string(),
    })
}
