//! Graph auto-encoder: a noise-seeded message-passing encoder and a
//! distance decoder over pairwise edge probabilities.
//!
//! Nodes carry no input features, so every encoding draws fresh Gaussian
//! noise per node. Ten shared-weight adjacency-masked message-passing steps
//! mix structure into the noise, a linear head maps to embeddings, and an
//! edge decodes as sigma(C * (1 - |x_i - x_j|^2)). Training minimizes the
//! edge BCE in its softplus form, which stays finite even when the decoder
//! saturates.

use std::path::Path;

use crate::checkpoint::{pack, unpack_into, Checkpoint};
use crate::density::Split;
use crate::engine::{Engine, Plain, Taped};
use crate::error::{write_text, GnfError, Result};
use crate::graph::{Graph, GraphDataset};
use crate::mp::{bind_mp, mp_transform, BoundMp, MaskCsr, MaskMode, MpConfig, MpParams};
use crate::optim::{Adam, GradBuffer, LrSchedule};
use crate::rng::Rng;
use crate::tensor::{gradient_check, GradCheckReport, Tape, Tensor, TensorId};

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub embed_dim: usize,
    pub noise_dim: usize,
    pub noise_var: f64,
    /// Decoder sharpness C in sigma(C * (1 - d^2)).
    pub temperature: f64,
    pub mp_steps: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub msg_hidden: Vec<usize>,
    pub msg_dim: usize,
}

impl AeConfig {
    pub fn desk(embed_dim: usize) -> AeConfig {
        AeConfig {
            embed_dim,
            noise_dim: embed_dim,
            noise_var: 0.3,
            temperature: 10.0,
            mp_steps: 10,
            heads: 2,
            head_dim: 8,
            msg_hidden: vec![48],
            msg_dim: 24,
        }
    }

    pub fn full(embed_dim: usize) -> AeConfig {
        AeConfig {
            embed_dim,
            noise_dim: embed_dim,
            noise_var: 0.3,
            temperature: 10.0,
            mp_steps: 10,
            heads: 8,
            head_dim: 32,
            msg_hidden: vec![2048, 2048, 2048],
            msg_dim: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.noise_dim == 0 {
            return Err(GnfError::Config("autoencoder dims must be positive".into()));
        }
        if self.mp_steps == 0 {
            return Err(GnfError::Config("autoencoder needs at least one mp step".into()));
        }
        if self.noise_var <= 0.0 || !self.noise_var.is_finite() {
            return Err(GnfError::Config(format!("noise variance {} out of range", self.noise_var)));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(GnfError::Config(format!("temperature {} out of range", self.temperature)));
        }
        self.mp_config().validate()
    }

    /// Encoder trunk. No per-graph standardization: an isolated node's
    /// embedding must depend on its own noise alone.
    pub fn mp_config(&self) -> MpConfig {
        MpConfig {
            in_dim: self.noise_dim,
            out_dim: self.noise_dim,
            heads: self.heads,
            head_dim: self.head_dim,
            msg_hidden: self.msg_hidden.clone(),
            msg_dim: self.msg_dim,
            normalize_input: false,
            zero_init_out: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AeModel {
    pub cfg: AeConfig,
    /// One parameter set shared by every message-passing step.
    pub mp: MpParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl AeModel {
    pub fn init(cfg: AeConfig, rng: &mut Rng) -> Result<AeModel> {
        cfg.validate()?;
        let mp = MpParams::init(&cfg.mp_config(), rng)?;
        let head_w = Tensor::randn(
            cfg.noise_dim,
            cfg.embed_dim,
            1.0 / (cfg.noise_dim as f64).sqrt(),
            rng,
        );
        let head_b = Tensor::zeros(1, cfg.embed_dim);
        Ok(AeModel { cfg, mp, head_w, head_b })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.mp.tensors();
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mp.tensors_mut();
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.mp.named("enc.");
        v.push(("head.w".to_string(), &self.head_w));
        v.push(("head.b".to_string(), &self.head_b));
        v
    }

    fn names(&self) -> Vec<String> {
        self.named().iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn mask_for(&self, graphs: &[&Graph]) -> Result<MaskCsr> {
        MaskCsr::for_graphs(MaskMode::Adjacency, graphs)
    }

    /// Embeddings for one graph with caller-supplied noise features.
    pub fn encode(&self, graph: &Graph, noise: &Tensor) -> Result<Tensor> {
        self.encode_batch(&[graph], noise)
    }

    /// Embeddings for a block-diagonal batch; noise rows stack in order.
    pub fn encode_batch(&self, graphs: &[&Graph], noise: &Tensor) -> Result<Tensor> {
        let mask = self.mask_for(graphs)?;
        let mut eng = Plain::new();
        let bound = bind_ae(&mut eng, self, false);
        let x = eng.bind(noise, false);
        encode_with(&mut eng, &self.cfg, &bound, &x, &mask)
    }

    /// Encode with a fresh noise draw, as generation and evaluation do.
    pub fn encode_fresh(&self, graph: &Graph, rng: &mut Rng) -> Result<Tensor> {
        let noise = sample_noise_features(graph.n(), &self.cfg, rng);
        self.encode(graph, &noise)
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Result<Checkpoint> {
        let mut ckpt = pack("autoencoder", seed, step, &self.named())?;
        ckpt.push("meta.config", self.meta_tensor())?;
        Ok(ckpt)
    }

    fn meta_tensor(&self) -> Tensor {
        let cfg = &self.cfg;
        let mut v = vec![
            cfg.embed_dim as f64,
            cfg.noise_dim as f64,
            cfg.noise_var,
            cfg.temperature,
            cfg.mp_steps as f64,
            cfg.heads as f64,
            cfg.head_dim as f64,
            cfg.msg_dim as f64,
        ];
        v.extend(cfg.msg_hidden.iter().map(|&h| h as f64));
        Tensor::from_vec(1, v.len(), v).unwrap()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<AeModel> {
        let meta = ckpt
            .get("meta.config")
            .ok_or_else(|| GnfError::Data("checkpoint has no meta.config tensor".into()))?;
        if meta.len() < 8 {
            return Err(GnfError::Data("meta.config is too short".into()));
        }
        let m = meta.data();
        let cfg = AeConfig {
            embed_dim: m[0] as usize,
            noise_dim: m[1] as usize,
            noise_var: m[2],
            temperature: m[3],
            mp_steps: m[4] as usize,
            heads: m[5] as usize,
            head_dim: m[6] as usize,
            msg_dim: m[7] as usize,
            msg_hidden: m[8..].iter().map(|&h| h as usize).collect(),
        };
        let mut model = AeModel::init(cfg, &mut Rng::new(0))?;
        let names = model.names();
        unpack_into(ckpt, &names, &mut model.tensors_mut())?;
        Ok(model)
    }
}

/// Fresh i.i.d. N(0, noise_var) features, one row per node. Drawn anew for
/// every encoding: the noise is an input, not a parameter.
pub fn sample_noise_features(n: usize, cfg: &AeConfig, rng: &mut Rng) -> Tensor {
    Tensor::randn(n, cfg.noise_dim, cfg.noise_var.sqrt(), rng)
}

struct BoundAe<R> {
    mp: BoundMp<R>,
    head_w: R,
    head_b: R,
}

impl<R: Clone> BoundAe<R> {
    fn handles(&self) -> Vec<R> {
        let mut v: Vec<R> = self.mp.handles().to_vec();
        v.push(self.head_w.clone());
        v.push(self.head_b.clone());
        v
    }
}

fn bind_ae<E: Engine>(eng: &mut E, m: &AeModel, trainable: bool) -> BoundAe<E::R> {
    BoundAe {
        mp: bind_mp(eng, &m.mp, trainable),
        head_w: eng.bind(&m.head_w, trainable),
        head_b: eng.bind(&m.head_b, trainable),
    }
}

/// Residual stack of shared-weight mp steps, then the linear head. The
/// residual keeps the repeated application stable: at init the zeroed output
/// projection makes every step the identity.
fn encode_with<E: Engine>(
    eng: &mut E,
    cfg: &AeConfig,
    bound: &BoundAe<E::R>,
    noise: &E::R,
    mask: &MaskCsr,
) -> Result<E::R> {
    let (n, d) = eng.shape(noise);
    if d != cfg.noise_dim || n != mask.n {
        return Err(GnfError::Shape(format!(
            "encoder noise {n}x{d}, mask wants {}x{}",
            mask.n, cfg.noise_dim
        )));
    }
    let mpcfg = cfg.mp_config();
    let mut h = noise.clone();
    for _ in 0..cfg.mp_steps {
        let u = mp_transform(eng, &bound.mp, &mpcfg, &h, mask)?;
        h = eng.add(&h, &u)?;
    }
    let e = eng.matmul(&h, &bound.head_w)?;
    eng.add_rowvec(&e, &bound.head_b)
}

/// Full symmetric probability matrix sigma(C * (1 - |x_i - x_j|^2)).
/// Callers read the i < j entries; the diagonal is meaningless.
pub fn decode_edge_prob(embed: &Tensor, temperature: f64) -> Result<Tensor> {
    let d2 = embed.pairwise_sqdist(embed)?;
    Ok(d2.affine(-temperature, temperature).sigmoid())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Summed BCE over distinct pairs i < j, computed from embeddings in the
/// softplus form so saturated probabilities cost a finite amount.
pub fn bce_loss(embed: &Tensor, graph: &Graph, temperature: f64) -> Result<f64> {
    let n = graph.n();
    if embed.rows() != n {
        return Err(GnfError::Shape(format!(
            "{} embedding rows for a {n}-node graph",
            embed.rows()
        )));
    }
    let k = embed.cols();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for c in 0..k {
                let diff = embed.get(i, c) - embed.get(j, c);
                d2 += diff * diff;
            }
            let logit = temperature * (1.0 - d2);
            total += if graph.has_edge(i, j) { softplus(-logit) } else { softplus(logit) };
        }
    }
    Ok(total)
}

/// Mispredicted pairs (missing plus extraneous) at threshold 0.5 over i < j.
pub fn count_incorrect_edges(probs: &Tensor, graph: &Graph) -> usize {
    let n = graph.n();
    let mut wrong = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if (probs.get(i, j) > 0.5) != graph.has_edge(i, j) {
                wrong += 1;
            }
        }
    }
    wrong
}

/// Within-graph pair indicators over i < j: one matrix marks edges, the
/// other non-edges. Cross-graph pairs and the diagonal stay zero in both,
/// so a block-diagonal batch never pays for pairs across graphs.
fn pair_weights(graphs: &[&Graph]) -> (Tensor, Tensor) {
    let total: usize = graphs.iter().map(|g| g.n()).sum();
    let mut wpos = Tensor::zeros(total, total);
    let mut wneg = Tensor::zeros(total, total);
    let mut base = 0;
    for g in graphs {
        for i in 0..g.n() {
            for j in (i + 1)..g.n() {
                if g.has_edge(i, j) {
                    wpos.set(base + i, base + j, 1.0);
                } else {
                    wneg.set(base + i, base + j, 1.0);
                }
            }
        }
        base += g.n();
    }
    (wpos, wneg)
}

/// Taped batch objective: mean over graphs of the summed pair BCE.
/// Returns the scalar loss node and the parameter leaves in model order.
fn batch_loss(
    tape: &mut Tape,
    model: &AeModel,
    graphs: &[&Graph],
    noise: &Tensor,
    mask: &MaskCsr,
) -> Result<(TensorId, Vec<TensorId>)> {
    let (wpos, wneg) = pair_weights(graphs);
    let mut eng = Taped::new(tape);
    let bound = bind_ae(&mut eng, model, true);
    let params = bound.handles();
    let x = eng.bind(noise, false);
    let embed = encode_with(&mut eng, &model.cfg, &bound, &x, mask)?;
    let d2 = eng.pairwise_sqdist(&embed, &embed)?;
    let logits = eng.affine(&d2, -model.cfg.temperature, model.cfg.temperature);
    let neg_logits = eng.affine(&logits, -1.0, 0.0);
    let cost_edge = eng.softplus(&neg_logits);
    let cost_gap = eng.softplus(&logits);
    let wpos_id = eng.bind(&wpos, false);
    let wneg_id = eng.bind(&wneg, false);
    let on = eng.mul(&wpos_id, &cost_edge)?;
    let off = eng.mul(&wneg_id, &cost_gap)?;
    let cost = eng.add(&on, &off)?;
    let total = eng.sum_all(&cost);
    let loss = eng.affine(&total, 1.0 / graphs.len() as f64, 0.0);
    Ok((loss, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// 0 keeps the rate constant.
    pub lr_decay_every: u64,
    pub lr_decay_rate: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Test graphs per curve point; 0 means all.
    pub eval_examples: usize,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            steps: 20_000,
            lr: 1e-4,
            lr_decay_every: 1000,
            lr_decay_rate: 0.99,
            batch_size: 4,
            grad_clip: 4.0,
            seed: 0,
            log_every: 500,
            eval_examples: 64,
        }
    }
}

impl AeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GnfError::Config("batch size must be positive".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(GnfError::Config(format!("learning rate {} out of range", self.lr)));
        }
        if self.lr_decay_rate <= 0.0 || self.lr_decay_rate > 1.0 {
            return Err(GnfError::Config(format!(
                "lr decay rate {} outside (0, 1]",
                self.lr_decay_rate
            )));
        }
        if self.grad_clip <= 0.0 {
            return Err(GnfError::Config("gradient clip must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(GnfError::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        if self.lr_decay_every == 0 {
            LrSchedule::Constant(self.lr)
        } else {
            LrSchedule::ExpDecay {
                base: self.lr,
                rate: self.lr_decay_rate,
                every: self.lr_decay_every,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeCurvePoint {
    pub step: usize,
    pub split: Split,
    pub bce_per_node: f64,
}

#[derive(Debug, Clone)]
pub struct AeRun {
    pub curve: Vec<AeCurvePoint>,
    pub final_train_bce: f64,
    pub final_test_bce: f64,
}

fn eval_bce(model: &AeModel, graphs: &[&Graph], cap: usize, rng: &mut Rng) -> Result<f64> {
    let take = if cap == 0 || graphs.len() <= cap { graphs.len() } else { cap };
    if take == 0 {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let mut nodes = 0usize;
    for g in &graphs[..take] {
        let embed = model.encode_fresh(g, rng)?;
        total += bce_loss(&embed, g, model.cfg.temperature)?;
        nodes += g.n();
    }
    Ok(total / nodes as f64)
}

/// Minimize the decoder BCE over the training split. Every node's noise is
/// redrawn once per epoch; batches walk a shuffled order within the epoch.
pub fn train_autoencoder(
    model: &mut AeModel,
    data: &GraphDataset,
    cfg: &AeTrainConfig,
) -> Result<AeRun> {
    cfg.validate()?;
    let train = data.train_graphs();
    let test = data.test_graphs();
    if train.is_empty() {
        return Err(GnfError::Data("autoencoder training set is empty".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut adam = Adam::new(&model.tensors());
    let mut tape = Tape::new();
    let schedule = cfg.schedule();
    let mut curve = Vec::new();
    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    let mut last_train = f64::NAN;
    let mut last_test = f64::NAN;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    'epochs: loop {
        let noises: Vec<Tensor> = train
            .iter()
            .map(|g| sample_noise_features(g.n(), &model.cfg, &mut rng))
            .collect();
        rng.shuffle(&mut order);
        for batch_idx in order.chunks(cfg.batch_size) {
            if step == cfg.steps {
                break 'epochs;
            }
            let graphs: Vec<&Graph> = batch_idx.iter().map(|&i| train[i]).collect();
            let total_nodes: usize = graphs.iter().map(|g| g.n()).sum();
            let mut noise = Tensor::zeros(total_nodes, model.cfg.noise_dim);
            let mut at = 0;
            for &i in batch_idx {
                let src = &noises[i];
                for r in 0..src.rows() {
                    noise.row_mut(at + r).copy_from_slice(src.row(r));
                }
                at += src.rows();
            }
            let mask = model.mask_for(&graphs)?;

            tape.reset();
            let (loss_id, params) = batch_loss(&mut tape, model, &graphs, &noise, &mask)
                .map_err(|e| GnfError::Numeric(format!("training step {step}: {e}")))?;
            let loss = tape.value(loss_id).scalar();
            if !loss.is_finite() {
                return Err(GnfError::Numeric(format!(
                    "autoencoder training diverged at step {step}: loss {loss}"
                )));
            }
            let mut leaf_grads = tape
                .backward_scalar(loss_id)
                .map_err(|e| GnfError::Numeric(format!("training step {step}: {e}")))?;
            let mut grads = GradBuffer::zeros_like(&model.tensors());
            for (i, id) in params.iter().enumerate() {
                if let Some(t) = leaf_grads.take(*id) {
                    grads.accumulate(i, &t)?;
                }
            }
            grads.clip_global_norm(cfg.grad_clip);
            adam.step(&mut model.tensors_mut(), &grads, schedule.at(step as u64))?;

            window_loss += loss * graphs.len() as f64 / total_nodes as f64;
            window_n += 1;
            step += 1;
            if step % cfg.log_every == 0 || step == cfg.steps {
                last_train = window_loss / window_n as f64;
                window_loss = 0.0;
                window_n = 0;
                curve.push(AeCurvePoint { step, split: Split::Train, bce_per_node: last_train });
                last_test = eval_bce(model, &test, cfg.eval_examples, &mut rng)?;
                curve.push(AeCurvePoint { step, split: Split::Test, bce_per_node: last_test });
            }
        }
    }

    if cfg.steps == 0 {
        last_train = eval_bce(model, &train, cfg.eval_examples, &mut rng)?;
        last_test = eval_bce(model, &test, cfg.eval_examples, &mut rng)?;
    }
    Ok(AeRun { curve, final_train_bce: last_train, final_test_bce: last_test })
}

#[derive(Debug, Clone)]
pub struct ReconReport {
    pub split: Split,
    pub bce_per_node: f64,
    /// Mispredictions at threshold 0.5, averaged over the noise redraws.
    pub incorrect_edges: f64,
    /// True undirected edges in the split.
    pub total_edges: usize,
}

/// Reconstruction quality over a split: each redraw re-encodes every graph
/// with fresh noise, decodes, and counts mispredicted pairs.
pub fn reconstruction_report(
    model: &AeModel,
    graphs: &[&Graph],
    split: Split,
    redraws: usize,
    rng: &mut Rng,
) -> Result<ReconReport> {
    if redraws == 0 {
        return Err(GnfError::Config("reconstruction needs at least one redraw".into()));
    }
    if graphs.is_empty() {
        return Err(GnfError::Data("reconstruction over an empty split".into()));
    }
    let nodes: usize = graphs.iter().map(|g| g.n()).sum();
    let total_edges: usize = graphs.iter().map(|g| g.num_edges()).sum();
    let mut bce = 0.0;
    let mut wrong = 0.0;
    for _ in 0..redraws {
        for g in graphs {
            let embed = model.encode_fresh(g, rng)?;
            bce += bce_loss(&embed, g, model.cfg.temperature)?;
            let probs = decode_edge_prob(&embed, model.cfg.temperature)?;
            wrong += count_incorrect_edges(&probs, g) as f64;
        }
    }
    let draws = redraws as f64;
    Ok(ReconReport {
        split,
        bce_per_node: bce / (draws * nodes as f64),
        incorrect_edges: wrong / draws,
        total_edges,
    })
}

/// Reconstruction report CSV: `split,bce_per_node,incorrect_edges,total_edges`.
pub fn write_recon_csv(path: &Path, reports: &[ReconReport]) -> Result<()> {
    let mut out = String::from("split,bce_per_node,incorrect_edges,total_edges\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.split, r.bce_per_node, r.incorrect_edges, r.total_edges
        ));
    }
    write_text(path, &out)
}

/// Training curve CSV: `step,split,bce_per_node`.
pub fn write_ae_curve_csv(path: &Path, curve: &[AeCurvePoint]) -> Result<()> {
    let mut out = String::from("step,split,bce_per_node\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.step, p.split, p.bce_per_node));
    }
    write_text(path, &out)
}

/// Finite-difference check of the taped reconstruction loss with every
/// parameter as a perturbed leaf: two shared transform applications, the
/// distance decoder, and the masked pair costs.
pub fn fd_check_autoencoder(eps: f64, tol: f64) -> Result<GradCheckReport> {
    let cfg = AeConfig {
        embed_dim: 2,
        noise_dim: 2,
        noise_var: 0.3,
        temperature: 3.0,
        mp_steps: 2,
        heads: 1,
        head_dim: 2,
        msg_hidden: vec![4],
        msg_dim: 3,
    };
    let mut rng = Rng::new(37);
    let mut model = AeModel::init(cfg.clone(), &mut rng)?;
    // Break the zero-initialized output projections so every path carries
    // signal.
    for t in model.tensors_mut() {
        let bump = Tensor::randn(t.rows(), t.cols(), 0.3, &mut rng);
        for (v, b) in t.data_mut().iter_mut().zip(bump.data()) {
            *v += *b;
        }
    }
    let mut g = Graph::new(3);
    g.add_edge(0, 1)?;
    g.add_edge(1, 2)?;
    let noise = sample_noise_features(3, &cfg, &mut rng);
    let mask = model.mask_for(&[&g])?;
    let (wpos, wneg) = pair_weights(&[&g]);
    let inputs: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    let msg_layers = model.mp.msg.len();

    gradient_check(
        move |tape, ids| {
            let mut eng = Taped::new(tape);
            let bound = BoundAe {
                mp: BoundMp::from_handles(ids[..ids.len() - 2].to_vec(), msg_layers),
                head_w: ids[ids.len() - 2],
                head_b: ids[ids.len() - 1],
            };
            let x = eng.bind(&noise, false);
            let embed = encode_with(&mut eng, &cfg, &bound, &x, &mask)?;
            let d2 = eng.pairwise_sqdist(&embed, &embed)?;
            let logits = eng.affine(&d2, -cfg.temperature, cfg.temperature);
            let neg_logits = eng.affine(&logits, -1.0, 0.0);
            let cost_edge = eng.softplus(&neg_logits);
            let cost_gap = eng.softplus(&logits);
            let wpos_id = eng.bind(&wpos, false);
            let wneg_id = eng.bind(&wneg, false);
            let on = eng.mul(&wpos_id, &cost_edge)?;
            let off = eng.mul(&wneg_id, &cost_gap)?;
            let cost = eng.add(&on, &off)?;
            Ok(eng.sum_all(&cost))
        },
        &inputs,
        eps,
        tol,
    )
}
