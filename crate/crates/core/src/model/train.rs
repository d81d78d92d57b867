use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, R2slNetwork, RequestFeatures};
use crate::dataset::{DatasetDims, QosRecord};
use crate::error::{Error, Result};
use crate::latent::RegionalLatentModel;
use crate::loss::{mae, rmse, LossSpec};
use crate::nncore::{Adam, GradStore, ParamStore, Rng, Tape};

/// Records per gradient chunk. Fixed so the summation order, and hence the
/// result, does not depend on the thread count.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mae: f64,
    pub valid_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of the initial parameters.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Loss sum and parameter gradients of `sum_i loss_i * scale` over a chunk.
fn chunk_grad(
    net: &R2slNetwork,
    feats: &[RequestFeatures],
    ys: &[f64],
    loss: &LossSpec,
    scale: f64,
) -> Result<(f64, GradStore)> {
    let mut grads = GradStore::zeros_like(&net.store);
    let mut total = 0.0;
    for (f, &y) in feats.iter().zip(ys) {
        let mut tape = Tape::new(&net.store);
        let (out, _) = net.forward_on(&mut tape, f)?;
        let (l, g) = loss.eval(y, tape.value(out).data()[0]);
        total += l;
        tape.backward(out, &[g * scale], &mut grads)?;
    }
    Ok((total, grads))
}

/// Mean loss over `feats` and its gradient, reduced in fixed chunk order.
pub(crate) fn batch_grad(
    net: &R2slNetwork,
    feats: &[RequestFeatures],
    ys: &[f64],
    loss: &LossSpec,
) -> Result<(f64, GradStore)> {
    let scale = 1.0 / feats.len() as f64;
    let parts: Vec<Result<(f64, GradStore)>> = feats
        .par_chunks(GRAD_CHUNK)
        .zip(ys.par_chunks(GRAD_CHUNK))
        .map(|(f, y)| chunk_grad(net, f, y, loss, scale))
        .collect();
    let mut total = 0.0;
    let mut grads = GradStore::zeros_like(&net.store);
    for p in parts {
        let (l, g) = p?;
        total += l;
        grads.add_assign(&g);
    }
    Ok((total * scale, grads))
}

fn mean_loss(net: &R2slNetwork, feats: &[RequestFeatures], ys: &[f64], loss: &LossSpec) -> Result<f64> {
    let preds: Vec<f64> = feats.par_iter().map(|f| net.predict_features(f)).collect::<Result<_>>()?;
    Ok(ys.iter().zip(&preds).map(|(&y, &p)| loss.eval(y, p).0).sum::<f64>() / ys.len() as f64)
}

fn metrics(net: &R2slNetwork, feats: &[RequestFeatures], ys: &[f64]) -> Result<(f64, f64)> {
    let preds: Vec<f64> = feats.par_iter().map(|f| net.predict_features(f)).collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = ys.iter().copied().zip(preds).collect();
    Ok((mae(&pairs)?, rmse(&pairs)?))
}

fn features_of(
    net: &R2slNetwork,
    records: &[QosRecord],
    latent: &RegionalLatentModel,
) -> Result<(Vec<RequestFeatures>, Vec<f64>)> {
    let feats = records.iter().map(|r| net.features(r, latent)).collect::<Result<_>>()?;
    Ok((feats, records.iter().map(|r| r.value).collect()))
}

/// Mini-batch Adam training with seeded shuffling and early stopping on
/// validation MAE. The parameters of the best epoch are returned. With an
/// empty validation set the training loss drives early stopping.
pub fn train(
    mut net: R2slNetwork,
    train: &[QosRecord],
    valid: &[QosRecord],
    latent: &RegionalLatentModel,
    loss: &LossSpec,
) -> Result<(R2slNetwork, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Empty("training records"));
    }
    loss.validate()?;
    let config = net.config.clone();
    let (tr_f, tr_y) = features_of(&net, train, latent)?;
    let (va_f, va_y) = features_of(&net, valid, latent)?;

    let initial_train_loss = mean_loss(&net, &tr_f, &tr_y, loss)?;
    if !initial_train_loss.is_finite() {
        return Err(Error::Numerical("initial training loss is not finite".into()));
    }
    let mut history = TrainHistory {
        initial_train_loss,
        epochs: Vec::new(),
        best_epoch: None,
        stopped_early: false,
    };
    let mut adam = Adam::new(config.adam, &net.store);
    let mut rng = Rng::new(config.seed).fork(0x7a1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let (mut bf, mut by) = (Vec::new(), Vec::new());

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            bf.clear();
            by.clear();
            bf.extend(batch.iter().map(|&i| tr_f[i].clone()));
            by.extend(batch.iter().map(|&i| tr_y[i]));
            let (l, grads) = batch_grad(&net, &bf, &by, loss)?;
            if !l.is_finite() || !grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient in epoch {epoch} (loss {l})"
                )));
            }
            epoch_loss += l * batch.len() as f64;
            net.store.zero_grad();
            net.store.accumulate(&grads, 1.0);
            adam.step(&mut net.store);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (valid_mae, valid_rmse) = if va_f.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            metrics(&net, &va_f, &va_y)?
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            valid_mae,
            valid_rmse,
        });
        let score = if va_f.is_empty() { train_loss } else { valid_mae };
        if !score.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation score in epoch {epoch}")));
        }
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, net.store.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        net.store = store;
    }
    net.store.zero_grad();
    Ok((net, history))
}

/// New network for `dims`, output bias at the training median, trained.
pub fn fit_network(
    config: NetworkConfig,
    dims: DatasetDims,
    train_records: &[QosRecord],
    valid: &[QosRecord],
    latent: &RegionalLatentModel,
    loss: &LossSpec,
) -> Result<(R2slNetwork, TrainHistory)> {
    let mut net = R2slNetwork::new(config, dims)?;
    let values: Vec<f64> = train_records.iter().map(|r| r.value).collect();
    net.set_output_bias(median(&values).ok_or(Error::Empty("training records"))?);
    train(net, train_records, valid, latent, loss)
}
