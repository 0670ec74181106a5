//! Gradient training of one (encoder, loss, task) combination over a set
//! of binned patient sequences.

use crate::cohort::{BinnedSequence, Task};
use crate::error::{Error, Result};
use crate::loss::{
    cel_loss, cl_loss, predict_cel, predict_cl, sample_contrastive_batch, CelHead, ContrastiveBatch,
    LossKind, DEFAULT_A, DEFAULT_B, DEFAULT_M, DEFAULT_Q,
};
use crate::model::{
    encode_retain, encode_rnn, embed_event, fuse_static, EncoderKind, EventParams, EventVars,
    FusionParams, RetainParams, RetainVars, RnnParams, RnnVars,
};
use crate::numerics::{AdamConfig, AdamState, Gradients, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Hyperparameters for one training run. Defaults follow the experiment
/// defaults used throughout the crate.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight on the event-patient (label) terms of the contrastive loss.
    pub a: f64,
    /// Weight on the patient-patient (peer) terms.
    pub b: f64,
    /// Same-outcome peers per anchor.
    pub m: usize,
    /// Opposite-outcome peers per anchor.
    pub q: usize,
    /// Mini-batch size (anchors per update for CL, samples for CEL).
    pub batch: usize,
    /// Draw fresh peer samples every epoch (otherwise fixed at epoch 0).
    pub resample_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent: 64,
            epochs: 30,
            learning_rate: 1e-3,
            a: DEFAULT_A,
            b: DEFAULT_B,
            m: DEFAULT_M,
            q: DEFAULT_Q,
            batch: 32,
            resample_each_epoch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderParams {
    Rnn(RnnParams),
    Retain(RetainParams),
}

impl EncoderParams {
    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderParams::Rnn(_) => EncoderKind::Rnn,
            EncoderParams::Retain(_) => EncoderKind::Retain,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            EncoderParams::Rnn(p) => p.tensors(),
            EncoderParams::Retain(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            EncoderParams::Rnn(p) => p.tensors_mut(),
            EncoderParams::Retain(p) => p.tensors_mut(),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        match self {
            EncoderParams::Rnn(_) => RnnParams::names(),
            EncoderParams::Retain(_) => RetainParams::names(),
        }
    }
}

/// Every parameter group of one model instance. A run trains the groups
/// its objective reaches (encoder + fusion + event head for the
/// contrastive loss; encoder + fusion + linear head for cross-entropy);
/// the other group keeps its initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub latent: usize,
    pub encoder: EncoderParams,
    pub event: EventParams,
    pub fusion: FusionParams,
    pub head: CelHead,
}

impl ModelParams {
    pub fn init(latent: usize, input: usize, kind: EncoderKind, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let encoder = match kind {
            EncoderKind::Rnn => EncoderParams::Rnn(RnnParams::init(latent, input, &mut rng)),
            EncoderKind::Retain => {
                EncoderParams::Retain(RetainParams::init(latent, input, &mut rng))
            }
        };
        ModelParams {
            latent,
            encoder,
            event: EventParams::init(latent, &mut rng),
            fusion: FusionParams::init(latent, &mut rng),
            head: CelHead::init(latent, &mut rng),
        }
    }
}

/// Encoder vars bound on a tape for one batch.
enum EncoderVars {
    Rnn(RnnVars),
    Retain(RetainVars),
}

impl EncoderVars {
    fn bind(params: &EncoderParams, tape: &mut Tape) -> EncoderVars {
        match params {
            EncoderParams::Rnn(p) => EncoderVars::Rnn(p.bind(tape)),
            EncoderParams::Retain(p) => EncoderVars::Retain(p.bind(tape)),
        }
    }

    fn list(&self) -> Vec<Var> {
        match self {
            EncoderVars::Rnn(v) => v.list(),
            EncoderVars::Retain(v) => v.list(),
        }
    }

    fn encode(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        match self {
            EncoderVars::Rnn(v) => encode_rnn(tape, x, v),
            EncoderVars::Retain(v) => Ok(encode_retain(tape, x, v)?.c_p),
        }
    }
}

/// The output of [`train`]: final parameters plus the per-epoch mean loss.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub task: Task,
    pub loss_kind: LossKind,
    pub params: ModelParams,
    pub trace: Vec<(usize, f64)>,
}

impl TrainedModel {
    pub fn encoder_kind(&self) -> EncoderKind {
        self.params.encoder.kind()
    }

    /// Fused patient representation for one sequence (inference only).
    pub fn representation(&self, seq: &BinnedSequence) -> Tensor {
        encode_value(&self.params, seq).fused
    }

    /// Positive-outcome probability with the predictor matching the loss
    /// this model was trained under.
    pub fn predict(&self, seq: &BinnedSequence) -> f64 {
        let c_p = self.representation(seq);
        match self.loss_kind {
            LossKind::Cl => predict_cl(&c_p, self.task, &self.params.event),
            LossKind::Cel => predict_cel(&c_p, &self.params.head),
        }
    }
}

/// Value-level encoding of one patient, with attention kept when the
/// encoder produces it.
pub struct EncodedPatient {
    pub pre_fusion: Tensor,
    pub fused: Tensor,
    pub alphas: Option<Vec<f64>>,
    pub betas: Option<Vec<Tensor>>,
}

pub fn encode_value(params: &ModelParams, seq: &BinnedSequence) -> EncodedPatient {
    let mut tape = Tape::new();
    let fusion = params.fusion.bind(&mut tape);
    match &params.encoder {
        EncoderParams::Rnn(p) => {
            let vars = p.bind(&mut tape);
            let c_p = encode_rnn(&mut tape, &seq.matrix, &vars).expect("encode");
            let fused = fuse_static(&mut tape, c_p, &seq.statics, &fusion).expect("fuse");
            EncodedPatient {
                pre_fusion: tape.value(c_p).clone(),
                fused: tape.value(fused).clone(),
                alphas: None,
                betas: None,
            }
        }
        EncoderParams::Retain(p) => {
            let vars = p.bind(&mut tape);
            let enc = encode_retain(&mut tape, &seq.matrix, &vars).expect("encode");
            let fused = fuse_static(&mut tape, enc.c_p, &seq.statics, &fusion).expect("fuse");
            EncodedPatient {
                pre_fusion: tape.value(enc.c_p).clone(),
                fused: tape.value(fused).clone(),
                alphas: Some(tape.value(enc.alphas).data().to_vec()),
                betas: Some(enc.betas.iter().map(|&b| tape.value(b).clone()).collect()),
            }
        }
    }
}

/// Train one model. Deterministic given `seed`; epoch order, peer
/// sampling, and initialization all derive from it.
pub fn train(
    instances: &[BinnedSequence],
    encoder: EncoderKind,
    loss_kind: LossKind,
    task: Task,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    if instances.is_empty() {
        return Err(Error::contract("cannot train on an empty fold"));
    }
    let input_width = instances[0].matrix.cols();
    let mut params = ModelParams::init(cfg.latent, input_width, encoder, seed);
    let mut rng = ChaCha12Rng::seed_from_u64(crate::derive_seed(seed, &[0x7261]));
    let labels: Vec<bool> = instances.iter().map(|s| s.label).collect();

    // Peer batches fixed across epochs when resampling is disabled.
    let mut fixed_batches: Option<Vec<ContrastiveBatch>> = None;
    if loss_kind == LossKind::Cl && !cfg.resample_each_epoch {
        fixed_batches = Some(
            (0..instances.len())
                .map(|u| sample_contrastive_batch(&labels, u, cfg.m, cfg.q, &mut rng))
                .collect::<Result<Vec<_>>>()?,
        );
    }

    let mut adam = {
        let flat = trainable_tensors(&params, loss_kind);
        AdamState::new(&flat, AdamConfig::with_learning_rate(cfg.learning_rate))
    };

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..instances.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        // For CL, sample this epoch's peer batches up front in a stable
        // (index) order so shuffling does not change which peers are drawn.
        let epoch_batches: Option<Vec<ContrastiveBatch>> = match (loss_kind, &fixed_batches) {
            (LossKind::Cl, Some(fixed)) => Some(fixed.clone()),
            (LossKind::Cl, None) => Some(
                (0..instances.len())
                    .map(|u| sample_contrastive_batch(&labels, u, cfg.m, cfg.q, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };

        for (batch_idx, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut tape = Tape::new();
            let enc_vars = EncoderVars::bind(&params.encoder, &mut tape);
            let fusion_vars = params.fusion.bind(&mut tape);
            let mut per_anchor: Vec<Var> = Vec::with_capacity(chunk.len());

            match loss_kind {
                LossKind::Cl => {
                    let event_vars = params.event.bind(&mut tape);
                    let pos_event = embed_event(&mut tape, task, true, &event_vars)?;
                    let neg_event = embed_event(&mut tape, task, false, &event_vars)?;
                    let batches = epoch_batches.as_ref().expect("cl batches");
                    for &u in chunk {
                        let batch = &batches[u];
                        let anchor = encode_fused(
                            &mut tape,
                            &enc_vars,
                            &fusion_vars,
                            &instances[u],
                        )?;
                        let (conn, opp) = if batch.anchor_label {
                            (pos_event.translated, neg_event.translated)
                        } else {
                            (neg_event.translated, pos_event.translated)
                        };
                        let same = encode_all(
                            &mut tape,
                            &enc_vars,
                            &fusion_vars,
                            instances,
                            &batch.same,
                        )?;
                        let opposite = encode_all(
                            &mut tape,
                            &enc_vars,
                            &fusion_vars,
                            instances,
                            &batch.opposite,
                        )?;
                        per_anchor.push(cl_loss(
                            &mut tape, anchor, conn, opp, &same, &opposite, cfg.a, cfg.b,
                        )?);
                    }
                    let batch_loss = tape.mean_of(&per_anchor)?;
                    epoch_loss += step(
                        &mut tape,
                        batch_loss,
                        &mut params,
                        loss_kind,
                        &enc_vars,
                        &fusion_vars,
                        Some(&event_vars),
                        None,
                        &mut adam,
                        epoch,
                        batch_idx,
                    )? * chunk.len() as f64;
                }
                LossKind::Cel => {
                    let head_vars = params.head.bind(&mut tape);
                    for &u in chunk {
                        let c_p = encode_fused(
                            &mut tape,
                            &enc_vars,
                            &fusion_vars,
                            &instances[u],
                        )?;
                        per_anchor.push(cel_loss(&mut tape, c_p, instances[u].label, &head_vars)?);
                    }
                    let batch_loss = tape.mean_of(&per_anchor)?;
                    epoch_loss += step(
                        &mut tape,
                        batch_loss,
                        &mut params,
                        loss_kind,
                        &enc_vars,
                        &fusion_vars,
                        None,
                        Some(&head_vars),
                        &mut adam,
                        epoch,
                        batch_idx,
                    )? * chunk.len() as f64;
                }
            }
        }
        trace.push((epoch, epoch_loss / instances.len() as f64));
    }

    Ok(TrainedModel {
        task,
        loss_kind,
        params,
        trace,
    })
}

fn encode_fused(
    tape: &mut Tape,
    enc: &EncoderVars,
    fusion: &crate::model::FusionVars,
    seq: &BinnedSequence,
) -> Result<Var> {
    let c_p = enc.encode(tape, &seq.matrix)?;
    fuse_static(tape, c_p, &seq.statics, fusion)
}

fn encode_all(
    tape: &mut Tape,
    enc: &EncoderVars,
    fusion: &crate::model::FusionVars,
    instances: &[BinnedSequence],
    which: &[usize],
) -> Result<Vec<Var>> {
    which
        .iter()
        .map(|&i| encode_fused(tape, enc, fusion, &instances[i]))
        .collect()
}

fn trainable_tensors(params: &ModelParams, loss_kind: LossKind) -> Vec<&Tensor> {
    let mut out = params.encoder.tensors();
    out.extend(params.fusion.tensors());
    match loss_kind {
        LossKind::Cl => out.extend(params.event.tensors()),
        LossKind::Cel => out.extend(params.head.tensors()),
    }
    out
}

fn trainable_tensors_mut(params: &mut ModelParams, loss_kind: LossKind) -> Vec<&mut Tensor> {
    let ModelParams {
        encoder,
        event,
        fusion,
        head,
        ..
    } = params;
    let mut out = encoder.tensors_mut();
    out.extend(fusion.tensors_mut());
    match loss_kind {
        LossKind::Cl => out.extend(event.tensors_mut()),
        LossKind::Cel => out.extend(head.tensors_mut()),
    }
    out
}

/// Backward pass, gradient collection in canonical group order, and one
/// optimizer update. Returns the scalar batch loss.
#[allow(clippy::too_many_arguments)]
fn step(
    tape: &mut Tape,
    batch_loss: Var,
    params: &mut ModelParams,
    loss_kind: LossKind,
    enc_vars: &EncoderVars,
    fusion_vars: &crate::model::FusionVars,
    event_vars: Option<&EventVars>,
    head_vars: Option<&crate::loss::CelHeadVars>,
    adam: &mut AdamState,
    epoch: usize,
    batch_idx: usize,
) -> Result<f64> {
    let loss_value = tape.value(batch_loss).item();
    if !loss_value.is_finite() {
        return Err(Error::contract(format!(
            "non-finite loss {loss_value} at epoch {epoch}, batch {batch_idx}"
        )));
    }
    let grads: Gradients = tape.backward(batch_loss)?;

    let mut var_list = enc_vars.list();
    var_list.extend(fusion_vars.list());
    match loss_kind {
        LossKind::Cl => var_list.extend(event_vars.expect("event vars").list()),
        LossKind::Cel => var_list.extend(head_vars.expect("head vars").list()),
    }
    let grad_tensors: Vec<Tensor> = var_list.iter().map(|&v| grads.wrt(tape, v)).collect();

    let mut flat = trainable_tensors_mut(params, loss_kind);
    adam.apply(&mut flat, &grad_tensors)?;
    Ok(loss_value)
}
