use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExpertKind, R2slNetwork};
use crate::dataset::QosRecord;
use crate::error::{Error, Result};
use crate::latent::RegionalLatentModel;

pub const ACTIVATION_CSV_HEADER: [&str; 4] = ["expert_id", "expert_kind", "mean_weight", "activation_rate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertActivation {
    pub expert_id: usize,
    pub expert_kind: ExpertKind,
    /// Mean sparse gate weight (zero when inactive).
    pub mean_weight: f64,
    /// Fraction of requests in which the expert was active.
    pub activation_rate: f64,
}

/// Share of the gate mass attributable to one input feature group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub n_requests: usize,
    pub experts: Vec<ExpertActivation>,
    /// `known`, `physical_latent`, `virtual_latent`; sums to one.
    pub groups: Vec<GroupShare>,
}

impl ActivationReport {
    /// `expert_id,expert_kind,mean_weight,activation_rate` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ACTIVATION_CSV_HEADER)?;
        for e in &self.experts {
            w.write_record([
                e.expert_id.to_string(),
                e.expert_kind.as_str().to_string(),
                e.mean_weight.to_string(),
                e.activation_rate.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<activation report>", e))?;
        Ok(())
    }

    pub fn write_groups_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "share"])?;
        for g in &self.groups {
            w.write_record([g.group.clone(), g.share.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<activation groups>", e))?;
        Ok(())
    }
}

impl R2slNetwork {
    /// Fraction of an expert's input width coming from the known-feature
    /// embeddings, the physical latent projections and the virtual ones.
    fn group_fractions(&self, kind: ExpertKind) -> [f64; 3] {
        match kind {
            ExpertKind::Task => [0.6, 0.2, 0.2],
            ExpertKind::Physical => [0.0, 1.0, 0.0],
            ExpertKind::Virtual => [0.0, 0.0, 1.0],
        }
    }

    /// Aggregates gate decisions over `records`.
    pub fn activation_stats(&self, records: &[QosRecord], latent: &RegionalLatentModel) -> Result<ActivationReport> {
        if records.is_empty() {
            return Err(Error::Empty("activation statistics records"));
        }
        let decisions: Vec<_> = records
            .par_iter()
            .map(|r| self.gate_decision(r, latent))
            .collect::<Result<_>>()?;
        let kinds = self.expert_kinds();
        let n = records.len() as f64;
        let mut weight = vec![0.0; kinds.len()];
        let mut active = vec![0usize; kinds.len()];
        let mut groups = [0.0; 3];
        for d in &decisions {
            for (i, kind) in kinds.iter().enumerate() {
                weight[i] += d.sparse[i];
                active[i] += usize::from(d.active[i]);
                for (g, f) in groups.iter_mut().zip(self.group_fractions(*kind)) {
                    *g += d.sparse[i] * f;
                }
            }
        }
        Ok(ActivationReport {
            n_requests: records.len(),
            experts: kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| ExpertActivation {
                    expert_id: i,
                    expert_kind: k,
                    mean_weight: weight[i] / n,
                    activation_rate: active[i] as f64 / n,
                })
                .collect(),
            groups: ["known", "physical_latent", "virtual_latent"]
                .iter()
                .zip(groups)
                .map(|(g, s)| GroupShare {
                    group: g.to_string(),
                    share: s / n,
                })
                .collect(),
        })
    }
}
