use super::{e_step, gd_step, log_likelihood, m_step, LatentConfig, RegionalLatentModel};
use crate::dataset::{DatasetDims, QosRecord};
use crate::error::Result;

/// Fits the latent model by alternating E-step, distribution update and
/// gradient step until the relative log-likelihood gain falls below
/// `gamma` or `max_iters` iterations have run.
pub fn fit(records: &[QosRecord], dims: &DatasetDims, config: LatentConfig) -> Result<RegionalLatentModel> {
    config.validate()?;
    let mut model = RegionalLatentModel::initialize(records, dims, config);
    let mut prev = log_likelihood(&model, records)?;
    model.fit_log.push(prev);
    for _ in 0..model.config.max_iters {
        let resp = e_step(&model, records)?;
        m_step(&mut model, records, &resp)?;
        gd_step(&mut model, records, &resp)?;
        let ll = log_likelihood(&model, records)?;
        model.fit_log.push(ll);
        let gain = (ll - prev) / prev.abs();
        prev = ll;
        if gain < model.config.gamma {
            break;
        }
    }
    model.validate()?;
    Ok(model)
}
