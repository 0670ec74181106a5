//! Sequence encoders and the outcome-event embedder.
//!
//! Both encoders map a binned `n x 63` sequence to a latent patient vector
//! `C_p`. The attention encoder additionally returns its per-step attention
//! so feature contributions can be unrolled later. Outcome events live in
//! the same latent space via a learned projection minus a per-task
//! translation vector, and demographics enter through a concat-and-project
//! fusion layer applied identically under every objective.

use crate::cohort::{Task, STATIC_DIM};
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use rand::Rng;
use std::fmt;

/// Scale of the uniform parameter initialization.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Rnn,
    Retain,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Result<EncoderKind> {
        match s {
            "rnn" => Ok(EncoderKind::Rnn),
            "retain" => Ok(EncoderKind::Retain),
            other => Err(crate::Error::config(format!("unknown encoder `{other}`"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderKind::Rnn => f.write_str("rnn"),
            EncoderKind::Retain => f.write_str("retain"),
        }
    }
}

fn init_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, -INIT_SCALE, INIT_SCALE, rng)
}

// ── Shared tanh recurrence cell ──────────────────────────────────────

/// One tanh recurrence: `h' = tanh(W_in x + W_hh h + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    pub w_in: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl RnnCell {
    pub fn init(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        RnnCell {
            w_in: init_tensor(vec![hidden, input], rng),
            w_hh: init_tensor(vec![hidden, hidden], rng),
            bias: init_tensor(vec![hidden], rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }
}

#[derive(Clone, Copy)]
pub struct RnnCellVars {
    pub w_in: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl RnnCellVars {
    fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let wx = tape.matvec(self.w_in, x)?;
        let wh = tape.matvec(self.w_hh, h)?;
        let pre = tape.add(wx, wh)?;
        let pre = tape.add(pre, self.bias)?;
        Ok(tape.tanh(pre))
    }
}

// ── Plain recurrent encoder ──────────────────────────────────────────

/// Last-hidden-state tanh RNN over the raw 63-wide inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub cell: RnnCell,
}

impl RnnParams {
    pub fn init(latent: usize, input: usize, rng: &mut impl Rng) -> Self {
        RnnParams {
            cell: RnnCell::init(latent, input, rng),
        }
    }

    pub fn latent(&self) -> usize {
        self.cell.hidden()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.cell.w_in, &self.cell.w_hh, &self.cell.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.cell.w_in,
            &mut self.cell.w_hh,
            &mut self.cell.bias,
        ]
    }

    pub fn names() -> Vec<&'static str> {
        vec!["rnn.w_in", "rnn.w_hh", "rnn.bias"]
    }

    pub fn bind(&self, tape: &mut Tape) -> RnnVars {
        RnnVars {
            cell: RnnCellVars {
                w_in: tape.leaf(self.cell.w_in.clone()),
                w_hh: tape.leaf(self.cell.w_hh.clone()),
                bias: tape.leaf(self.cell.bias.clone()),
            },
        }
    }
}

#[derive(Clone, Copy)]
pub struct RnnVars {
    pub cell: RnnCellVars,
}

impl RnnVars {
    pub fn list(&self) -> Vec<Var> {
        vec![self.cell.w_in, self.cell.w_hh, self.cell.bias]
    }

    pub fn from_slice(vars: &[Var]) -> Self {
        RnnVars {
            cell: RnnCellVars {
                w_in: vars[0],
                w_hh: vars[1],
                bias: vars[2],
            },
        }
    }
}

/// Run the recurrence across the rows of `x` (chronological order);
/// the final hidden state is the patient representation.
pub fn encode_rnn(tape: &mut Tape, x: &Tensor, vars: &RnnVars) -> Result<Var> {
    let latent = tape.value(vars.cell.w_hh).rows();
    let mut h = tape.zeros(vec![latent]);
    for i in 0..x.rows() {
        let xi = tape.leaf(x.row(i));
        h = vars.cell.step(tape, xi, h)?;
    }
    Ok(h)
}

// ── Reverse-time attention encoder ───────────────────────────────────

/// Two-level attention encoder: embedded steps `v_i = W_embed x_i`, a
/// reverse-time recurrence projected to scalar step weights (softmax over
/// time), a second reverse-time recurrence projected to per-feature tanh
/// weights, and the weighted sum `C_p = sum_i alpha_i (beta_i ⊙ v_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RetainParams {
    pub embed: Tensor,
    pub alpha_cell: RnnCell,
    pub alpha_w: Tensor,
    pub alpha_b: Tensor,
    pub beta_cell: RnnCell,
    pub beta_w: Tensor,
    pub beta_b: Tensor,
}

impl RetainParams {
    pub fn init(latent: usize, input: usize, rng: &mut impl Rng) -> Self {
        RetainParams {
            embed: init_tensor(vec![latent, input], rng),
            alpha_cell: RnnCell::init(latent, latent, rng),
            alpha_w: init_tensor(vec![latent], rng),
            alpha_b: init_tensor(vec![1], rng),
            beta_cell: RnnCell::init(latent, latent, rng),
            beta_w: init_tensor(vec![latent, latent], rng),
            beta_b: init_tensor(vec![latent], rng),
        }
    }

    pub fn latent(&self) -> usize {
        self.embed.rows()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.embed,
            &self.alpha_cell.w_in,
            &self.alpha_cell.w_hh,
            &self.alpha_cell.bias,
            &self.alpha_w,
            &self.alpha_b,
            &self.beta_cell.w_in,
            &self.beta_cell.w_hh,
            &self.beta_cell.bias,
            &self.beta_w,
            &self.beta_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embed,
            &mut self.alpha_cell.w_in,
            &mut self.alpha_cell.w_hh,
            &mut self.alpha_cell.bias,
            &mut self.alpha_w,
            &mut self.alpha_b,
            &mut self.beta_cell.w_in,
            &mut self.beta_cell.w_hh,
            &mut self.beta_cell.bias,
            &mut self.beta_w,
            &mut self.beta_b,
        ]
    }

    pub fn names() -> Vec<&'static str> {
        vec![
            "retain.embed",
            "retain.alpha.w_in",
            "retain.alpha.w_hh",
            "retain.alpha.bias",
            "retain.alpha_w",
            "retain.alpha_b",
            "retain.beta.w_in",
            "retain.beta.w_hh",
            "retain.beta.bias",
            "retain.beta_w",
            "retain.beta_b",
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> RetainVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        RetainVars::from_slice(&vars)
    }
}

#[derive(Clone, Copy)]
pub struct RetainVars {
    pub embed: Var,
    pub alpha_cell: RnnCellVars,
    pub alpha_w: Var,
    pub alpha_b: Var,
    pub beta_cell: RnnCellVars,
    pub beta_w: Var,
    pub beta_b: Var,
}

impl RetainVars {
    pub fn list(&self) -> Vec<Var> {
        vec![
            self.embed,
            self.alpha_cell.w_in,
            self.alpha_cell.w_hh,
            self.alpha_cell.bias,
            self.alpha_w,
            self.alpha_b,
            self.beta_cell.w_in,
            self.beta_cell.w_hh,
            self.beta_cell.bias,
            self.beta_w,
            self.beta_b,
        ]
    }

    pub fn from_slice(vars: &[Var]) -> Self {
        RetainVars {
            embed: vars[0],
            alpha_cell: RnnCellVars {
                w_in: vars[1],
                w_hh: vars[2],
                bias: vars[3],
            },
            alpha_w: vars[4],
            alpha_b: vars[5],
            beta_cell: RnnCellVars {
                w_in: vars[6],
                w_hh: vars[7],
                bias: vars[8],
            },
            beta_w: vars[9],
            beta_b: vars[10],
        }
    }
}

/// Attention encoder output: the pre-fusion representation plus the time
/// weights (`alphas`, softmax over steps) and feature weights (`betas`,
/// one tanh vector per step) needed for importance unrolling.
pub struct RetainEncoding {
    pub c_p: Var,
    pub alphas: Var,
    pub betas: Vec<Var>,
}

pub fn encode_retain(tape: &mut Tape, x: &Tensor, vars: &RetainVars) -> Result<RetainEncoding> {
    let n = x.rows();
    let latent = tape.value(vars.embed).rows();

    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let xi = tape.leaf(x.row(i));
        v.push(tape.matvec(vars.embed, xi)?);
    }

    // Reverse-time recurrence -> scalar energies -> softmax over steps.
    let mut energies = vec![None; n];
    let mut g = tape.zeros(vec![latent]);
    for i in (0..n).rev() {
        g = vars.alpha_cell.step(tape, v[i], g)?;
        let e = tape.dot(vars.alpha_w, g)?;
        energies[i] = Some(tape.add(e, vars.alpha_b)?);
    }
    let energies: Vec<Var> = energies.into_iter().map(|e| e.unwrap()).collect();
    let stacked = tape.stack(&energies)?;
    let alphas = tape.softmax(stacked)?;

    // Second reverse-time recurrence -> per-feature tanh weights.
    let mut betas = vec![None; n];
    let mut h = tape.zeros(vec![latent]);
    for i in (0..n).rev() {
        h = vars.beta_cell.step(tape, v[i], h)?;
        let proj = tape.matvec(vars.beta_w, h)?;
        let proj = tape.add(proj, vars.beta_b)?;
        betas[i] = Some(tape.tanh(proj));
    }
    let betas: Vec<Var> = betas.into_iter().map(|b| b.unwrap()).collect();

    let mut c_p: Option<Var> = None;
    for i in 0..n {
        let gated = tape.mul(betas[i], v[i])?;
        let ai = tape.index(alphas, i)?;
        let term = tape.scalar_mul(ai, gated)?;
        c_p = Some(match c_p {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }

    Ok(RetainEncoding {
        c_p: c_p.expect("sequence has at least one step"),
        alphas,
        betas,
    })
}

// ── Outcome-event embedder ───────────────────────────────────────────

/// Projects the one-hot outcome node into the latent space and translates
/// it by a per-task relation vector: `C_e = tanh(W_e X_e + b_e) - R_o`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventParams {
    pub w_event: Tensor,
    pub b_event: Tensor,
    pub relations: Vec<Tensor>,
}

impl EventParams {
    pub fn init(latent: usize, rng: &mut impl Rng) -> Self {
        EventParams {
            w_event: init_tensor(vec![latent, 2], rng),
            b_event: init_tensor(vec![latent], rng),
            relations: (0..Task::ALL.len())
                .map(|_| init_tensor(vec![latent], rng))
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w_event, &self.b_event];
        out.extend(self.relations.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.w_event, &mut self.b_event];
        out.extend(self.relations.iter_mut());
        out
    }

    pub fn names() -> Vec<&'static str> {
        vec![
            "event.w",
            "event.b",
            "event.relation.mortality",
            "event.relation.intubation",
            "event.relation.icu_transfer",
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> EventVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        EventVars::from_slice(&vars)
    }

    /// The one-hot outcome-node input: column 0 is the positive node.
    pub fn node_input(positive: bool) -> Tensor {
        if positive {
            Tensor::vector(vec![1.0, 0.0])
        } else {
            Tensor::vector(vec![0.0, 1.0])
        }
    }

    /// Value-level event embedding `(projected, translated)`.
    pub fn embed_value(&self, task: Task, positive: bool) -> (Tensor, Tensor) {
        let x = Self::node_input(positive);
        let latent = self.w_event.rows();
        let mut projected = vec![0.0; latent];
        for i in 0..latent {
            let row = &self.w_event.data()[i * 2..(i + 1) * 2];
            projected[i] = (row[0] * x.data()[0] + row[1] * x.data()[1] + self.b_event.data()[i])
                .tanh();
        }
        let relation = &self.relations[task.index()];
        let translated: Vec<f64> = projected
            .iter()
            .zip(relation.data())
            .map(|(p, r)| p - r)
            .collect();
        (Tensor::vector(projected), Tensor::vector(translated))
    }
}

#[derive(Clone)]
pub struct EventVars {
    pub w_event: Var,
    pub b_event: Var,
    pub relations: Vec<Var>,
}

impl EventVars {
    pub fn list(&self) -> Vec<Var> {
        let mut out = vec![self.w_event, self.b_event];
        out.extend(self.relations.iter().copied());
        out
    }

    pub fn from_slice(vars: &[Var]) -> Self {
        EventVars {
            w_event: vars[0],
            b_event: vars[1],
            relations: vars[2..].to_vec(),
        }
    }
}

/// Event node embedding on the tape: the projected vector and its
/// relation-translated counterpart.
pub struct EventEmbedding {
    pub projected: Var,
    pub translated: Var,
}

pub fn embed_event(
    tape: &mut Tape,
    task: Task,
    positive: bool,
    vars: &EventVars,
) -> Result<EventEmbedding> {
    let x = tape.leaf(EventParams::node_input(positive));
    let wx = tape.matvec(vars.w_event, x)?;
    let pre = tape.add(wx, vars.b_event)?;
    let projected = tape.tanh(pre);
    let translated = tape.sub(projected, vars.relations[task.index()])?;
    Ok(EventEmbedding {
        projected,
        translated,
    })
}

// ── Static-feature fusion ────────────────────────────────────────────

/// Concat-then-project fusion: `tanh(W [C_p | X_d] + b)`. The fused vector
/// is the patient representation used by every loss, prediction, and
/// export.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl FusionParams {
    pub fn init(latent: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            w: init_tensor(vec![latent, latent + STATIC_DIM], rng),
            b: init_tensor(vec![latent], rng),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn names() -> Vec<&'static str> {
        vec!["fusion.w", "fusion.b"]
    }

    pub fn bind(&self, tape: &mut Tape) -> FusionVars {
        FusionVars {
            w: tape.leaf(self.w.clone()),
            b: tape.leaf(self.b.clone()),
        }
    }
}

#[derive(Clone, Copy)]
pub struct FusionVars {
    pub w: Var,
    pub b: Var,
}

impl FusionVars {
    pub fn list(&self) -> Vec<Var> {
        vec![self.w, self.b]
    }

    pub fn from_slice(vars: &[Var]) -> Self {
        FusionVars {
            w: vars[0],
            b: vars[1],
        }
    }
}

pub fn fuse_static(
    tape: &mut Tape,
    c_p: Var,
    statics: &Tensor,
    vars: &FusionVars,
) -> Result<Var> {
    let s = tape.leaf(statics.clone());
    let cat = tape.concat(c_p, s)?;
    let proj = tape.matvec(vars.w, cat)?;
    let pre = tape.add(proj, vars.b)?;
    Ok(tape.tanh(pre))
}
