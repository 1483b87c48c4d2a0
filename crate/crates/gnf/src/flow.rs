//! Reversible coupling steps over graph node features.
//!
//! Each step splits the feature columns in half and applies two half-step
//! affine updates whose scale and shift come from message-passing transforms
//! of the *other* half, so the map is invertible in closed form and its
//! Jacobian is triangular: the log-determinant is just the sum of the scale
//! outputs. Scales are clamped to [-SCALE_MAX, SCALE_MAX] before exp; the
//! same clamped value is used in both directions, which keeps the inverse
//! exact in floating point.
//!
//! Because the input of every step can be recomputed from its output,
//! backprop does not need stored activations: [`reversible_backward`] walks
//! the steps last-to-first, reconstructs each step's input by the inverse
//! map, re-runs that one step on a small tape, and accumulates gradients.
//! Peak memory is one step's working set regardless of depth.

use crate::engine::{Engine, Plain, Taped};
use crate::error::{GnfError, Result};
use crate::mp::{bind_mp, mp_transform, BoundMp, MaskCsr, MpConfig, MpParams};
use crate::optim::GradBuffer;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorId};

/// Scale clamp bound; exp stays within [e^-10, e^10].
pub const SCALE_MAX: f64 = 10.0;

/// Allowed drift between a reconstructed step input and a stored one when
/// debugging reconstruction.
pub const RECONSTRUCTION_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Total feature width d (even); each half-transform works on d/2.
    pub feature_dim: usize,
    /// Number of coupling steps T.
    pub steps: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub msg_hidden: Vec<usize>,
    pub msg_dim: usize,
    /// Standardize transform trunk inputs per graph (see mp module).
    pub normalize_input: bool,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.feature_dim % 2 != 0 {
            return Err(GnfError::Config(format!(
                "flow feature_dim must be even and positive, got {}",
                self.feature_dim
            )));
        }
        if self.steps == 0 {
            return Err(GnfError::Config("flow needs at least one step".into()));
        }
        self.mp_config().validate()
    }

    pub fn half_dim(&self) -> usize {
        self.feature_dim / 2
    }

    /// Configuration of each F/G transform: d/2 -> d/2, zero-initialized
    /// output so a fresh flow is the identity map.
    pub fn mp_config(&self) -> MpConfig {
        MpConfig {
            in_dim: self.half_dim(),
            out_dim: self.half_dim(),
            heads: self.heads,
            head_dim: self.head_dim,
            msg_hidden: self.msg_hidden.clone(),
            msg_dim: self.msg_dim,
            normalize_input: self.normalize_input,
            zero_init_out: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CouplingStep {
    /// Scale for the first half-step (applied to H0).
    pub f1: MpParams,
    /// Shift for the first half-step.
    pub f2: MpParams,
    /// Scale for the second half-step (applied to H1).
    pub g1: MpParams,
    /// Shift for the second half-step.
    pub g2: MpParams,
}

impl CouplingStep {
    pub fn init(cfg: &MpConfig, rng: &mut Rng) -> Result<CouplingStep> {
        Ok(CouplingStep {
            f1: MpParams::init(cfg, rng)?,
            f2: MpParams::init(cfg, rng)?,
            g1: MpParams::init(cfg, rng)?,
            g2: MpParams::init(cfg, rng)?,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.f1.tensors();
        v.extend(self.f2.tensors());
        v.extend(self.g1.tensors());
        v.extend(self.g2.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.f1.tensors_mut();
        v.extend(self.f2.tensors_mut());
        v.extend(self.g1.tensors_mut());
        v.extend(self.g2.tensors_mut());
        v
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut v = self.f1.named(&format!("{prefix}f1."));
        v.extend(self.f2.named(&format!("{prefix}f2.")));
        v.extend(self.g1.named(&format!("{prefix}g1.")));
        v.extend(self.g2.named(&format!("{prefix}g2.")));
        v
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub cfg: FlowConfig,
    pub steps: Vec<CouplingStep>,
}

impl FlowModel {
    pub fn init(cfg: FlowConfig, rng: &mut Rng) -> Result<FlowModel> {
        cfg.validate()?;
        let mp = cfg.mp_config();
        let steps = (0..cfg.steps)
            .map(|_| CouplingStep::init(&mp, rng))
            .collect::<Result<_>>()?;
        Ok(FlowModel { cfg, steps })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.steps.iter().flat_map(|s| s.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.steps.iter_mut().flat_map(|s| s.tensors_mut()).collect()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(t, s)| s.named(&format!("step{t}.")))
            .collect()
    }

    pub fn params_per_step(&self) -> usize {
        self.steps.first().map_or(0, |s| s.tensors().len())
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub output: Tensor,
    /// Summed over all nodes and steps of the batch.
    pub log_det: f64,
}

/// First d/2 columns and last d/2 columns.
pub fn split_features(h: &Tensor) -> Result<(Tensor, Tensor)> {
    if h.cols() % 2 != 0 || h.cols() == 0 {
        return Err(GnfError::Shape(format!(
            "cannot split {} feature columns in half",
            h.cols()
        )));
    }
    let half = h.cols() / 2;
    Ok((h.slice_cols(0, half)?, h.slice_cols(half, h.cols())?))
}

pub struct BoundStep<R> {
    pub f1: BoundMp<R>,
    pub f2: BoundMp<R>,
    pub g1: BoundMp<R>,
    pub g2: BoundMp<R>,
}

pub fn bind_step<E: Engine>(eng: &mut E, s: &CouplingStep, trainable: bool) -> BoundStep<E::R> {
    BoundStep {
        f1: bind_mp(eng, &s.f1, trainable),
        f2: bind_mp(eng, &s.f2, trainable),
        g1: bind_mp(eng, &s.g1, trainable),
        g2: bind_mp(eng, &s.g2, trainable),
    }
}

/// One coupling step: H0' = H0 * exp(s_f) + F2(H1) with s_f = clamp(F1(H1)),
/// then H1' = H1 * exp(s_g) + G2(H0') with s_g = clamp(G1(H0')).
/// Returns (H0', H1', log_det) where log_det = sum(s_f) + sum(s_g).
pub fn coupling_forward<E: Engine>(
    eng: &mut E,
    b: &BoundStep<E::R>,
    cfg: &MpConfig,
    h0: &E::R,
    h1: &E::R,
    mask: &MaskCsr,
    step_idx: usize,
) -> Result<(E::R, E::R, E::R)> {
    let sf_raw = mp_transform(eng, &b.f1, cfg, h1, mask)?;
    eng.check_finite(&sf_raw, &format!("step {step_idx} scale F1 output"))?;
    let sf = eng.clamp(&sf_raw, -SCALE_MAX, SCALE_MAX);
    let tf = mp_transform(eng, &b.f2, cfg, h1, mask)?;
    eng.check_finite(&tf, &format!("step {step_idx} shift F2 output"))?;
    let ef = eng.exp(&sf)?;
    let scaled0 = eng.mul(h0, &ef)?;
    let h0p = eng.add(&scaled0, &tf)?;

    let sg_raw = mp_transform(eng, &b.g1, cfg, &h0p, mask)?;
    eng.check_finite(&sg_raw, &format!("step {step_idx} scale G1 output"))?;
    let sg = eng.clamp(&sg_raw, -SCALE_MAX, SCALE_MAX);
    let tg = mp_transform(eng, &b.g2, cfg, &h0p, mask)?;
    eng.check_finite(&tg, &format!("step {step_idx} shift G2 output"))?;
    let eg = eng.exp(&sg)?;
    let scaled1 = eng.mul(h1, &eg)?;
    let h1p = eng.add(&scaled1, &tg)?;

    let ld_f = eng.sum_all(&sf);
    let ld_g = eng.sum_all(&sg);
    let log_det = eng.add(&ld_f, &ld_g)?;
    Ok((h0p, h1p, log_det))
}

pub fn forward_step(
    step: &CouplingStep,
    cfg: &MpConfig,
    h0: &Tensor,
    h1: &Tensor,
    mask: &MaskCsr,
    step_idx: usize,
) -> Result<(Tensor, Tensor, f64)> {
    let mut eng = Plain::new();
    let b = bind_step(&mut eng, step, false);
    let h0b = eng.bind(h0, false);
    let h1b = eng.bind(h1, false);
    let (h0p, h1p, ld) = coupling_forward(&mut eng, &b, cfg, &h0b, &h1b, mask, step_idx)?;
    Ok((h0p, h1p, ld.scalar()))
}

/// Exact inverse: recover H1 from (H1' - G2(H0')) * exp(-s_g), then H0 from
/// (H0' - F2(H1)) * exp(-s_f). Uses the same clamped scales as forward.
pub fn inverse_step(
    step: &CouplingStep,
    cfg: &MpConfig,
    h0p: &Tensor,
    h1p: &Tensor,
    mask: &MaskCsr,
) -> Result<(Tensor, Tensor)> {
    let mut eng = Plain::new();
    let b = bind_step(&mut eng, step, false);

    let sg_raw = mp_transform(&mut eng, &b.g1, cfg, h0p, mask)?;
    let sg = eng.clamp(&sg_raw, -SCALE_MAX, SCALE_MAX);
    let tg = mp_transform(&mut eng, &b.g2, cfg, h0p, mask)?;
    let neg_sg = eng.affine(&sg, -1.0, 0.0);
    let inv_eg = eng.exp(&neg_sg)?;
    let h1 = h1p.sub(&tg)?.mul(&inv_eg)?;

    let h1b = eng.bind(&h1, false);
    let sf_raw = mp_transform(&mut eng, &b.f1, cfg, &h1b, mask)?;
    let sf = eng.clamp(&sf_raw, -SCALE_MAX, SCALE_MAX);
    let tf = mp_transform(&mut eng, &b.f2, cfg, &h1b, mask)?;
    let neg_sf = eng.affine(&sf, -1.0, 0.0);
    let inv_ef = eng.exp(&neg_sf)?;
    let h0 = h0p.sub(&tf)?.mul(&inv_ef)?;
    Ok((h0, h1))
}

pub fn flow_forward(model: &FlowModel, h: &Tensor, mask: &MaskCsr) -> Result<FlowResult> {
    let (result, _, _) = flow_forward_impl(model, h, mask, false)?;
    Ok(result)
}

/// Forward pass that also returns each step's input state and log-det,
/// for diagnostics and the stored-state drift check.
pub fn flow_forward_with_states(
    model: &FlowModel,
    h: &Tensor,
    mask: &MaskCsr,
) -> Result<(FlowResult, Vec<Tensor>, Vec<f64>)> {
    flow_forward_impl(model, h, mask, true)
}

fn flow_forward_impl(
    model: &FlowModel,
    h: &Tensor,
    mask: &MaskCsr,
    keep_states: bool,
) -> Result<(FlowResult, Vec<Tensor>, Vec<f64>)> {
    let cfg = model.cfg.mp_config();
    let (mut h0, mut h1) = split_features(h)?;
    let mut total = 0.0;
    let mut states = Vec::new();
    let mut per_step = Vec::new();
    for (t, step) in model.steps.iter().enumerate() {
        if keep_states {
            states.push(Tensor::concat_cols(&[&h0, &h1])?);
        }
        let (a, b, ld) = forward_step(step, &cfg, &h0, &h1, mask, t)?;
        h0 = a;
        h1 = b;
        total += ld;
        per_step.push(ld);
    }
    if !total.is_finite() {
        return Err(GnfError::Numeric(format!("non-finite flow log-det {total}")));
    }
    let output = Tensor::concat_cols(&[&h0, &h1])?;
    Ok((FlowResult { output, log_det: total }, states, per_step))
}

/// Largest |scale| emitted by any transform over the whole pass, before
/// clamping. Diagnostic for divergence reports.
pub fn flow_max_raw_scale(model: &FlowModel, h: &Tensor, mask: &MaskCsr) -> Result<f64> {
    let cfg = model.cfg.mp_config();
    let mut eng = Plain::new();
    let (mut h0, mut h1) = split_features(h)?;
    let mut worst = 0.0f64;
    for step in &model.steps {
        let b = bind_step(&mut eng, step, false);
        let sf_raw = mp_transform(&mut eng, &b.f1, &cfg, &h1, mask)?;
        worst = worst.max(sf_raw.max_abs());
        let sf = eng.clamp(&sf_raw, -SCALE_MAX, SCALE_MAX);
        let tf = mp_transform(&mut eng, &b.f2, &cfg, &h1, mask)?;
        let h0p = h0.mul(&sf.exp()?)?.add(&tf)?;
        let sg_raw = mp_transform(&mut eng, &b.g1, &cfg, &h0p, mask)?;
        worst = worst.max(sg_raw.max_abs());
        let sg = eng.clamp(&sg_raw, -SCALE_MAX, SCALE_MAX);
        let tg = mp_transform(&mut eng, &b.g2, &cfg, &h0p, mask)?;
        h1 = h1.mul(&sg.exp()?)?.add(&tg)?;
        h0 = h0p;
    }
    Ok(worst)
}

pub fn flow_inverse(model: &FlowModel, z: &Tensor, mask: &MaskCsr) -> Result<Tensor> {
    let cfg = model.cfg.mp_config();
    let (mut h0, mut h1) = split_features(z)?;
    for step in model.steps.iter().rev() {
        let (a, b) = inverse_step(step, &cfg, &h0, &h1, mask)?;
        h0 = a;
        h1 = b;
    }
    Tensor::concat_cols(&[&h0, &h1])
}

pub struct TapedFlow {
    pub output: TensorId,
    pub log_det: TensorId,
    /// Every parameter leaf in model tensor order.
    pub params: Vec<TensorId>,
}

/// Record the whole flow on one tape (stored-activation mode).
pub fn flow_forward_taped(
    tape: &mut Tape,
    model: &FlowModel,
    h: TensorId,
    mask: &MaskCsr,
) -> Result<TapedFlow> {
    let cfg = model.cfg.mp_config();
    let mut eng = Taped::new(tape);
    let d = model.cfg.feature_dim;
    let mut h0 = eng.slice_cols(&h, 0, d / 2)?;
    let mut h1 = eng.slice_cols(&h, d / 2, d)?;
    let mut params = Vec::new();
    let mut log_det: Option<TensorId> = None;
    for (t, step) in model.steps.iter().enumerate() {
        let b = bind_step(&mut eng, step, true);
        for part in [&b.f1, &b.f2, &b.g1, &b.g2] {
            params.extend_from_slice(part.handles());
        }
        let (a, bb, ld) = coupling_forward(&mut eng, &b, &cfg, &h0, &h1, mask, t)?;
        h0 = a;
        h1 = bb;
        log_det = Some(match log_det {
            None => ld,
            Some(acc) => eng.add(&acc, &ld)?,
        });
    }
    let output = eng.concat_cols(&[&h0, &h1])?;
    Ok(TapedFlow { output, log_det: log_det.unwrap(), params })
}

/// Backprop through the flow without stored activations.
///
/// `output` is the flow's forward output; `grad_output` the loss gradient at
/// that output; `grad_log_det` the loss gradient at the total log-det (for a
/// mean per-node NLL this is -1/total_nodes; 0 for supervised losses).
/// Gradients are accumulated into `grads` (aligned with `model.tensors()`);
/// the gradient at the flow input is returned. `tape` is reused and reset
/// step by step, so its peak activation count measures one step's footprint.
/// When `debug_states` holds the forward's per-step inputs, reconstruction
/// drift beyond RECONSTRUCTION_TOL is rejected.
pub fn reversible_backward(
    model: &FlowModel,
    mask: &MaskCsr,
    output: &Tensor,
    grad_output: &Tensor,
    grad_log_det: f64,
    grads: &mut GradBuffer,
    tape: &mut Tape,
    debug_states: Option<&[Tensor]>,
) -> Result<Tensor> {
    if output.shape() != grad_output.shape() {
        return Err(GnfError::Shape(format!(
            "output {}x{} vs gradient {}x{}",
            output.rows(),
            output.cols(),
            grad_output.rows(),
            grad_output.cols()
        )));
    }
    let cfg = model.cfg.mp_config();
    let per_step = model.params_per_step();
    let (mut h0p, mut h1p) = split_features(output)?;
    let (mut g0, mut g1) = split_features(grad_output)?;

    for (t, step) in model.steps.iter().enumerate().rev() {
        // Reconstruct this step's input from its output.
        let (h0, h1) = inverse_step(step, &cfg, &h0p, &h1p, mask)?;
        if let Some(states) = debug_states {
            let want = &states[t];
            let got = Tensor::concat_cols(&[&h0, &h1])?;
            let drift = want.max_abs_diff(&got);
            if drift > RECONSTRUCTION_TOL {
                return Err(GnfError::Numeric(format!(
                    "step {t} input reconstruction drifted by {drift:.3e}"
                )));
            }
        }

        // Re-run just this step on the tape and pull gradients through it.
        tape.reset();
        let mut eng = Taped::new(tape);
        let h0_id = eng.bind(&h0, true);
        let h1_id = eng.bind(&h1, true);
        let bound = bind_step(&mut eng, step, true);
        let (h0p_id, h1p_id, ld_id) =
            coupling_forward(&mut eng, &bound, &cfg, &h0_id, &h1_id, mask, t)?;

        let mut seeds = vec![(h0p_id, g0.clone()), (h1p_id, g1.clone())];
        if grad_log_det != 0.0 {
            seeds.push((ld_id, Tensor::scalar_of(grad_log_det)));
        }
        let mut step_grads = tape.backward(&seeds)?;

        let mut ids = Vec::with_capacity(per_step);
        for part in [&bound.f1, &bound.f2, &bound.g1, &bound.g2] {
            ids.extend_from_slice(part.handles());
        }
        for (k, id) in ids.into_iter().enumerate() {
            if let Some(g) = step_grads.take(id) {
                grads.accumulate(t * per_step + k, &g)?;
            }
        }
        g0 = step_grads
            .take(h0_id)
            .unwrap_or_else(|| Tensor::zeros(h0.rows(), h0.cols()));
        g1 = step_grads
            .take(h1_id)
            .unwrap_or_else(|| Tensor::zeros(h1.rows(), h1.cols()));
        h0p = h0;
        h1p = h1;
    }
    tape.reset();
    Tensor::concat_cols(&[&g0, &g1])
}
