use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DenseIds, ExpertIds, ExpertKind, R2slNetwork};
use crate::dataset::QosRecord;
use crate::error::{Error, Result};
use crate::latent::RegionalLatentModel;
use crate::nncore::{Tape, Tensor, Var};

/// Everything a prediction needs from one record: the six categorical
/// codes and the four latent distribution columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestFeatures {
    /// user_id, service_id, user_city, user_as, service_city, service_as.
    pub ids: [usize; 6],
    /// theta_u, delta_u, theta_s, delta_s columns.
    pub latent: [Vec<f64>; 4],
}

impl RequestFeatures {
    pub fn new(record: &QosRecord, latent: &RegionalLatentModel) -> Result<Self> {
        let v = latent.latent_features(record.user_city, record.user_as, record.service_city, record.service_as)?;
        let m = latent.m();
        Ok(Self {
            ids: [
                record.user_id,
                record.service_id,
                record.user_city,
                record.user_as,
                record.service_city,
                record.service_as,
            ],
            latent: std::array::from_fn(|i| v[i * m..(i + 1) * m].to_vec()),
        })
    }
}

/// Embedded inputs of one request on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Bundle {
    pub embeds: [Var; 6],
    /// Projected theta_u, delta_u, theta_s, delta_s.
    pub latents: [Var; 4],
}

impl Bundle {
    pub fn all(&self) -> Vec<Var> {
        self.embeds.iter().chain(&self.latents).copied().collect()
    }

    pub fn physical(&self) -> [Var; 2] {
        [self.latents[0], self.latents[2]]
    }

    pub fn virtual_as(&self) -> [Var; 2] {
        [self.latents[1], self.latents[3]]
    }
}

/// Gate output for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    /// Softmax over all experts.
    pub raw: Vec<f64>,
    pub active: Vec<bool>,
    /// Softmax restricted to the active experts; zero elsewhere.
    pub sparse: Vec<f64>,
}

impl GateDecision {
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Keeps the `top_k` largest raw weights (lower index wins ties) and
/// renormalizes over them. With `dense` every expert stays active.
pub fn select_experts(raw: &[f64], top_k: usize, dense: bool) -> GateDecision {
    let n = raw.len();
    let active = if dense {
        vec![true; n]
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
        let mut active = vec![false; n];
        for &i in order.iter().take(top_k) {
            active[i] = true;
        }
        active
    };
    let total: f64 = raw.iter().zip(&active).filter(|(_, &a)| a).map(|(w, _)| w).sum();
    let sparse = raw
        .iter()
        .zip(&active)
        .map(|(&w, &a)| if a { w / total } else { 0.0 })
        .collect();
    GateDecision {
        raw: raw.to_vec(),
        active,
        sparse,
    }
}

fn dense_layer(tape: &mut Tape, x: Var, ids: DenseIds) -> Result<Var> {
    let w = tape.param(ids.w);
    let b = tape.param(ids.b);
    tape.dense(x, w, Some(b))
}

impl R2slNetwork {
    pub fn features(&self, record: &QosRecord, latent: &RegionalLatentModel) -> Result<RequestFeatures> {
        if latent.m() != self.config.latent_m {
            return Err(Error::Dimension(format!(
                "latent model has m={}, network expects {}",
                latent.m(),
                self.config.latent_m
            )));
        }
        RequestFeatures::new(record, latent)
    }

    /// Id embeddings plus latent projections; masked-out latent domains are
    /// replaced by zero vectors.
    pub fn build_inputs(&self, tape: &mut Tape, f: &RequestFeatures) -> Result<Bundle> {
        let mut embeds = Vec::with_capacity(6);
        for (&table, &id) in self.layout.embeddings.iter().zip(&f.ids) {
            embeds.push(tape.embed(table, id)?);
        }
        let mask = self.config.latent_mask;
        let mut latents = Vec::with_capacity(4);
        for (i, (ids, col)) in self.layout.projections.iter().zip(&f.latent).enumerate() {
            let keep = if i % 2 == 0 { mask.physical } else { mask.virtual_as };
            if keep {
                let x = tape.constant(Tensor::vector(col.clone()));
                latents.push(dense_layer(tape, x, *ids)?);
            } else {
                latents.push(tape.constant(Tensor::zeros(&[self.config.embed_dim])));
            }
        }
        Ok(Bundle {
            embeds: embeds.try_into().expect("six embeddings"),
            latents: latents.try_into().expect("four projections"),
        })
    }

    pub(crate) fn expert_input(&self, tape: &mut Tape, kind: ExpertKind, b: &Bundle) -> Result<Var> {
        match kind {
            ExpertKind::Task => tape.concat(&b.all()),
            ExpertKind::Physical => tape.concat(&b.physical()),
            ExpertKind::Virtual => tape.concat(&b.virtual_as()),
        }
    }

    /// Dense fusion to `H`, then parallel width-3 and width-5 convolutions
    /// over the `[H, 1]` map, each followed by GELU, summed with the
    /// learned per-branch weights `w_out`.
    pub fn expert_forward(&self, tape: &mut Tape, expert: usize, input: Var) -> Result<Var> {
        let ids: ExpertIds = *self
            .layout
            .experts
            .get(expert)
            .ok_or(Error::OutOfRange {
                what: "expert",
                index: expert,
                size: self.layout.experts.len(),
            })?;
        let h = self.config.hidden;
        let fused = dense_layer(tape, input, ids.fuse)?;
        let map = tape.reshape(fused, &[h, 1])?;
        let w_out = tape.param(ids.w_out);
        let mut branches = Vec::with_capacity(2);
        for (i, conv) in [ids.conv3, ids.conv5].into_iter().enumerate() {
            let k = tape.param(conv.w);
            let b = tape.param(conv.b);
            let c = tape.conv1d(map, k, Some(b))?;
            let g = tape.gelu(c);
            branches.push(tape.scale_by_elem(g, w_out, i)?);
        }
        let e = tape.add(branches[0], branches[1])?;
        tape.reshape(e, &[h])
    }

    /// Gate over the concatenated user and service embeddings: sigmoid
    /// hidden layer, softmax output, top-k selection. Returns the decision
    /// and the differentiable sparse weights.
    pub fn gate_forward(&self, tape: &mut Tape, user: Var, service: Var) -> Result<(GateDecision, Var)> {
        let x = tape.concat(&[user, service])?;
        let hidden = dense_layer(tape, x, self.layout.gate_hidden)?;
        let hidden = tape.sigmoid(hidden);
        let logits = dense_layer(tape, hidden, self.layout.gate_out)?;
        let raw = crate::nncore::softmax(tape.value(logits).data());
        let mut decision = select_experts(&raw, self.config.top_k, self.config.dense_gate);
        let sparse = tape.masked_softmax(logits, decision.active.clone())?;
        decision.sparse = tape.value(sparse).data().to_vec();
        Ok((decision, sparse))
    }

    /// Builds the full graph for one request and returns the scalar
    /// prediction node. Inactive experts are not evaluated at all.
    pub fn forward_on(&self, tape: &mut Tape, f: &RequestFeatures) -> Result<(Var, GateDecision)> {
        let bundle = self.build_inputs(tape, f)?;
        let (decision, weights) = self.gate_forward(tape, bundle.embeds[0], bundle.embeds[1])?;
        let h = self.config.hidden;
        let mut parts = Vec::with_capacity(self.layout.experts.len());
        for (i, e) in self.layout.experts.iter().enumerate() {
            if decision.active[i] {
                let input = self.expert_input(tape, e.kind, &bundle)?;
                let out = self.expert_forward(tape, i, input)?;
                parts.push(tape.scale_by_elem(out, weights, i)?);
            } else {
                parts.push(tape.constant(Tensor::zeros(&[h])));
            }
        }
        let mut x = tape.concat(&parts)?;
        let last = self.layout.decoder.len() - 1;
        for (l, ids) in self.layout.decoder.iter().enumerate() {
            x = dense_layer(tape, x, *ids)?;
            if l < last {
                x = tape.gelu(x);
            }
        }
        Ok((x, decision))
    }

    pub fn predict_features(&self, f: &RequestFeatures) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let (y, _) = self.forward_on(&mut tape, f)?;
        Ok(tape.value(y).data()[0])
    }

    pub fn predict(&self, record: &QosRecord, latent: &RegionalLatentModel) -> Result<f64> {
        self.predict_features(&self.features(record, latent)?)
    }

    pub fn gate_decision(&self, record: &QosRecord, latent: &RegionalLatentModel) -> Result<GateDecision> {
        let f = self.features(record, latent)?;
        let mut tape = Tape::new(&self.store);
        let bundle = self.build_inputs(&mut tape, &f)?;
        Ok(self.gate_forward(&mut tape, bundle.embeds[0], bundle.embeds[1])?.0)
    }

    /// Predictions for many records, evaluated in parallel; order preserved.
    pub fn predict_many(&self, records: &[QosRecord], latent: &RegionalLatentModel) -> Result<Vec<f64>> {
        records.par_iter().map(|r| self.predict(r, latent)).collect()
    }
}
