use approx::assert_relative_eq;
use proptest::prelude::*;
use r2sl_core::dataset::{synthesize, DatasetDims, QosRecord, SynthSpec};
use r2sl_core::latent::{fit, LatentConfig, RegionalLatentModel};
use r2sl_core::model::{fit_network, select_experts, train, ExpertKind, LatentMask, NetworkConfig, R2slNetwork, RequestFeatures};
use r2sl_core::nncore::{gelu, grad_check, GradCheckConfig, GradStore, Tape, Tensor};
use r2sl_core::{LossKind, LossSpec, Rng};

fn small_dims() -> DatasetDims {
    DatasetDims {
        n_users: 6,
        n_services: 7,
        n_user_cities: 2,
        n_user_as: 3,
        n_service_cities: 3,
        n_service_as: 2,
    }
}

fn latent(m: usize) -> RegionalLatentModel {
    let recs: Vec<QosRecord> = (0..4).map(|i| record(i, i, 0.5 + i as f64)).collect();
    RegionalLatentModel::initialize(&recs, &small_dims(), LatentConfig { m, seed: 3, ..Default::default() })
}

fn record(u: usize, s: usize, value: f64) -> QosRecord {
    QosRecord {
        user_id: u,
        service_id: s,
        value,
        user_city: u % 2,
        user_as: u % 3,
        service_city: s % 3,
        service_as: s % 2,
    }
}

fn config(m: usize) -> NetworkConfig {
    NetworkConfig { latent_m: m, ..Default::default() }
}

#[test]
fn bundle_shapes() {
    let lat = latent(1);
    let net = R2slNetwork::new(config(1), small_dims()).unwrap();
    let f = net.features(&record(1, 2, 1.0), &lat).unwrap();
    assert!(f.latent.iter().all(|v| v == &vec![1.0]));
    let mut tape = Tape::new(net.store());
    let b = net.build_inputs(&mut tape, &f).unwrap();
    let all = tape.concat(&b.all()).unwrap();
    assert_eq!(tape.value(all).len(), 6 * 16 + 4 * 16);
    assert_eq!(net.config().bundle_width(), 160);

    let mut t2 = Tape::new(net.store());
    let b2 = net.build_inputs(&mut t2, &net.features(&record(1, 2, 7.0), &lat).unwrap()).unwrap();
    let all2 = t2.concat(&b2.all()).unwrap();
    assert_eq!(tape.value(all), t2.value(all2));

    let bad = QosRecord { user_id: 99, ..record(0, 0, 1.0) };
    assert!(net.predict(&bad, &lat).is_err());
    // Latent size must match the network.
    assert!(net.predict(&record(0, 0, 1.0), &latent(2)).is_err());
}

fn set(net: &mut R2slNetwork, name: &str, data: Vec<f64>) {
    let id = net.store().id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = net.store().value(id).shape().to_vec();
    net.store_mut().get_mut(id).value = Tensor::new(shape, data).unwrap();
}

fn fill(net: &mut R2slNetwork, name: &str, v: f64) {
    let id = net.store().id(name).unwrap();
    net.store_mut().get_mut(id).value.fill(v);
}

#[test]
fn expert_zero_input_gives_zero() {
    let net = R2slNetwork::new(config(4), small_dims()).unwrap();
    let mut tape = Tape::new(net.store());
    let x = tape.constant(Tensor::zeros(&[160]));
    let e = net.expert_forward(&mut tape, 0, x).unwrap();
    assert!(tape.value(e).data().iter().all(|&v| v == 0.0));
    assert_eq!(tape.value(e).len(), 32);
}

#[test]
fn expert_with_identity_kernels_doubles_gelu() {
    let mut net = R2slNetwork::new(config(4), small_dims()).unwrap();
    set(&mut net, "expert2.conv3.k", vec![0.0, 1.0, 0.0]);
    set(&mut net, "expert2.conv5.k", vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    set(&mut net, "expert2.w_out", vec![1.0, 1.0]);
    let mut rng = Rng::new(1);
    let input: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
    let mut tape = Tape::new(net.store());
    let x = tape.constant(Tensor::vector(input.clone()));
    let e = net.expert_forward(&mut tape, 2, x).unwrap();
    // Hand evaluation of the fusion layer.
    let w = net.store().value(net.store().id("expert2.fuse.w").unwrap());
    let b = net.store().value(net.store().id("expert2.fuse.b").unwrap());
    for h in 0..32 {
        let fused: f64 = b.data()[h] + w.row(h).iter().zip(&input).map(|(a, c)| a * c).sum::<f64>();
        assert_relative_eq!(tape.value(e).data()[h], 2.0 * gelu(fused), max_relative = 1e-12);
    }
}

#[test]
fn expert_gradient_check() {
    let mut net = R2slNetwork::new(config(4), small_dims()).unwrap();
    let mut rng = Rng::new(2);
    for name in ["expert0.conv3.b", "expert0.conv5.b", "expert0.fuse.b"] {
        let id = net.store().id(name).unwrap();
        for v in net.store_mut().get_mut(id).value.data_mut() {
            *v = 0.3 * rng.normal();
        }
    }
    let input: Vec<f64> = (0..160).map(|_| rng.normal()).collect();
    let weights: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
    let loss = |store: &r2sl_core::nncore::ParamStore, net: &R2slNetwork, grads: Option<&mut GradStore>| {
        let mut tape = Tape::new(store);
        let x = tape.constant(Tensor::vector(input.clone()));
        let e = net.expert_forward(&mut tape, 0, x).unwrap();
        let w = tape.constant(Tensor::vector(weights.clone()));
        let p = tape.mul(e, w).unwrap();
        let s = tape.sum(p);
        if let Some(g) = grads {
            tape.backward(s, &[1.0], g).unwrap();
        }
        tape.value(s).data()[0]
    };
    let mut grads = GradStore::zeros_like(net.store());
    loss(net.store(), &net, Some(&mut grads));
    let frozen = net.clone();
    let mut store = net.store().clone();
    let report = grad_check(&mut store, &grads, |s| Ok(loss(s, &frozen, None)), GradCheckConfig::default()).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.coords_checked >= 64);
}

#[test]
fn gate_selection_rules() {
    let d = select_experts(&[0.25; 4], 2, false);
    assert_eq!(d.active, vec![true, true, false, false]);
    assert_eq!(d.sparse, vec![0.5, 0.5, 0.0, 0.0]);
    let raw = [0.1, 0.4, 0.2, 0.3];
    let dense = select_experts(&raw, 2, true);
    assert!(dense.active.iter().all(|&a| a));
    for (a, b) in dense.sparse.iter().zip(raw) {
        assert_relative_eq!(*a, b, max_relative = 1e-15);
    }
    let one = select_experts(&raw, 1, false);
    assert_eq!(one.sparse, vec![0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn gate_forward_tie_break_and_dense_mode() {
    let mut net = R2slNetwork::new(config(4), small_dims()).unwrap();
    fill(&mut net, "gate.out.w", 0.0);
    let lat = latent(4);
    let d = net.gate_decision(&record(2, 3, 1.0), &lat).unwrap();
    assert_eq!(d.active, vec![true, true, false, false]);
    assert_eq!(d.sparse, vec![0.5, 0.5, 0.0, 0.0]);
    net.set_dense_gate(true);
    let d = net.gate_decision(&record(2, 3, 1.0), &lat).unwrap();
    assert_eq!(d.n_active(), 4);
    assert_eq!(d.sparse, d.raw);
}

#[test]
fn decoder_widths_and_zero_network() {
    assert_eq!(NetworkConfig::default().decoder_widths(), vec![32, 16, 8, 1]);
    let mut net = R2slNetwork::new(config(4), small_dims()).unwrap();
    for p in net.store_mut().params_mut() {
        p.value.fill(0.0);
    }
    assert_eq!(net.predict(&record(1, 1, 1.0), &latent(4)).unwrap(), 0.0);
}

#[test]
fn inactive_expert_does_not_affect_prediction() {
    let net = R2slNetwork::new(config(4), small_dims()).unwrap();
    let lat = latent(4);
    let r = record(3, 5, 1.0);
    let y = net.predict(&r, &lat).unwrap();
    let d = net.gate_decision(&r, &lat).unwrap();
    let inactive = d.active.iter().position(|&a| !a).unwrap();
    let mut other = net.clone();
    for name in net.expert_param_names(inactive) {
        fill(&mut other, &name, 123.0);
    }
    assert_eq!(other.predict(&r, &lat).unwrap().to_bits(), y.to_bits());
    let active = d.active.iter().position(|&a| a).unwrap();
    let mut changed = net.clone();
    fill(&mut changed, &format!("expert{active}.fuse.b"), 1.0);
    assert_ne!(changed.predict(&r, &lat).unwrap(), y);
}

#[test]
fn end_to_end_gradient_check() {
    let cfg = NetworkConfig {
        embed_dim: 4,
        hidden: 8,
        n_task_experts: 1,
        n_domain_experts: 1,
        top_k: 2,
        latent_m: 3,
        ..Default::default()
    };
    let mut net = R2slNetwork::new(cfg, small_dims()).unwrap();
    let mut rng = Rng::new(9);
    for p in net.store_mut().params_mut() {
        if p.name.ends_with(".b") {
            for v in p.value.data_mut() {
                *v = 0.2 * rng.normal();
            }
        }
    }
    let lat = latent(3);
    let batch: Vec<QosRecord> = vec![record(0, 1, 0.4), record(4, 6, 2.0), record(5, 2, 1.1)];
    let feats: Vec<RequestFeatures> = batch.iter().map(|r| net.features(r, &lat).unwrap()).collect();
    let loss = LossSpec { kind: LossKind::Mse, ..Default::default() };
    let batch_loss = |store: &r2sl_core::nncore::ParamStore, net: &R2slNetwork, grads: Option<&mut GradStore>| {
        let mut total = 0.0;
        let mut g = grads;
        for (f, r) in feats.iter().zip(&batch) {
            let mut tape = Tape::new(store);
            let (y, _) = net.forward_on(&mut tape, f).unwrap();
            let (l, dl) = loss.eval(r.value, tape.value(y).data()[0]);
            total += l / 3.0;
            if let Some(g) = g.as_deref_mut() {
                tape.backward(y, &[dl / 3.0], g).unwrap();
            }
        }
        total
    };
    let mut grads = GradStore::zeros_like(net.store());
    batch_loss(net.store(), &net, Some(&mut grads));
    let frozen = net.clone();
    let mut store = net.store().clone();
    let cfg = GradCheckConfig { tolerance: 1e-4, ..Default::default() };
    let report = grad_check(&mut store, &grads, |s| Ok(batch_loss(s, &frozen, None)), cfg).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn swapping_experts_with_their_gate_rows_preserves_predictions() {
    let net = R2slNetwork::new(config(4), small_dims()).unwrap();
    let mut swapped = net.clone();
    let (h, n) = (32, 4);
    let get = |name: &str| net.store().value(net.store().id(name).unwrap()).data().to_vec();
    // Experts 0 and 1 are both task experts.
    assert_eq!(net.expert_kinds()[..2], [ExpertKind::Task, ExpertKind::Task]);
    for suffix in ["fuse.w", "fuse.b", "conv3.k", "conv3.b", "conv5.k", "conv5.b", "w_out"] {
        set(&mut swapped, &format!("expert0.{suffix}"), get(&format!("expert1.{suffix}")));
        set(&mut swapped, &format!("expert1.{suffix}"), get(&format!("expert0.{suffix}")));
    }
    let mut gw = get("gate.out.w");
    let cols = gw.len() / n;
    for c in 0..cols {
        gw.swap(c, cols + c);
    }
    set(&mut swapped, "gate.out.w", gw);
    let mut gb = get("gate.out.b");
    gb.swap(0, 1);
    set(&mut swapped, "gate.out.b", gb);
    let mut dw = get("decoder0.w");
    let width = n * h;
    for row in dw.chunks_mut(width) {
        for c in 0..h {
            row.swap(c, h + c);
        }
    }
    set(&mut swapped, "decoder0.w", dw);
    let lat = latent(4);
    for u in 0..6 {
        for s in 0..7 {
            let r = record(u, s, 1.0);
            assert_relative_eq!(net.predict(&r, &lat).unwrap(), swapped.predict(&r, &lat).unwrap(), max_relative = 1e-12);
        }
    }
}

#[test]
fn prediction_is_pure() {
    let net = R2slNetwork::new(config(4), small_dims()).unwrap();
    let lat = latent(4);
    let r = record(2, 2, 1.0);
    let a = net.predict(&r, &lat).unwrap();
    let many = net.predict_many(&vec![r; 50], &lat).unwrap();
    assert!(many.iter().all(|b| b.to_bits() == a.to_bits()));
}

fn synthetic_set(n: usize) -> (Vec<QosRecord>, DatasetDims, RegionalLatentModel) {
    let spec = SynthSpec::nested(3, 20, 30, (3, 6, 4, 8), 0.8, vec![0.3, 1.0, 2.0], vec![0.4, 1.0, 1.5], n, 5);
    let out = synthesize(&spec).unwrap();
    let lat = fit(&out.records, &out.meta.dims, LatentConfig { m: 3, max_iters: 20, ..Default::default() }).unwrap();
    (out.records, out.meta.dims, lat)
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (records, dims, lat) = synthetic_set(250);
    let (tr, va) = records.split_at(200);
    let cfg = NetworkConfig { latent_m: 3, epochs: 50, patience: 50, batch_size: 32, ..Default::default() };
    let loss = LossSpec::default();
    let (_, h1) = fit_network(cfg.clone(), dims, tr, va, &lat, &loss).unwrap();
    let last = h1.epochs.last().unwrap().train_loss;
    assert!(last < h1.initial_train_loss, "{last} >= {}", h1.initial_train_loss);
    let (_, h2) = fit_network(cfg, dims, tr, va, &lat, &loss).unwrap();
    assert_eq!(h1, h2);
}

#[test]
fn zero_learning_rate_training_is_a_no_op() {
    let (records, dims, lat) = synthetic_set(120);
    let mut cfg = NetworkConfig { latent_m: 3, epochs: 3, ..Default::default() };
    cfg.adam.lr = 0.0;
    let net = R2slNetwork::new(cfg, dims).unwrap();
    let (trained, _) = train(net.clone(), &records[..100], &records[100..], &lat, &LossSpec::default()).unwrap();
    for ((_, a), (_, b)) in net.store().iter().zip(trained.store().iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn early_stopping_keeps_best_epoch() {
    let (records, dims, lat) = synthetic_set(200);
    let cfg = NetworkConfig { latent_m: 3, epochs: 200, patience: 3, batch_size: 16, ..Default::default() };
    let (net, h) = fit_network(cfg, dims, &records[..150], &records[150..], &lat, &LossSpec::default()).unwrap();
    let best = h.best_epoch.unwrap();
    let best_mae = h.epochs[best].valid_mae;
    assert!(h.epochs.iter().all(|e| e.valid_mae >= best_mae));
    if h.stopped_early {
        assert_eq!(h.epochs.len(), best + 1 + 3);
    }
    let preds = net.predict_many(&records[150..], &lat).unwrap();
    let mae = preds.iter().zip(&records[150..]).map(|(p, r)| (p - r.value).abs()).sum::<f64>() / 50.0;
    assert_relative_eq!(mae, best_mae, max_relative = 1e-12);
}

#[test]
fn activation_report_contracts() {
    let lat = latent(4);
    let records: Vec<QosRecord> = (0..6).flat_map(|u| (0..7).map(move |s| record(u, s, 1.0))).collect();

    let mut dense = R2slNetwork::new(NetworkConfig { dense_gate: true, ..config(4) }, small_dims()).unwrap();
    fill(&mut dense, "gate.out.w", 0.0);
    let rep = dense.activation_stats(&records, &lat).unwrap();
    assert!(rep.experts.iter().all(|e| e.activation_rate == 1.0));
    assert!(rep.experts.iter().all(|e| (e.mean_weight - 0.25).abs() < 1e-12));

    let one = R2slNetwork::new(NetworkConfig { top_k: 1, ..config(4) }, small_dims()).unwrap();
    let rep = one.activation_stats(&records, &lat).unwrap();
    let total: f64 = rep.experts.iter().map(|e| e.activation_rate).sum();
    assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    let shares: f64 = rep.groups.iter().map(|g| g.share).sum();
    assert_relative_eq!(shares, 1.0, max_relative = 1e-12);

    let single = one.activation_stats(&[record(0, 4, 1.0)], &lat).unwrap();
    assert_eq!(single.experts.len(), 4);
    let mut csv = Vec::new();
    single.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("expert_id,expert_kind,mean_weight,activation_rate\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains(",physical,") && text.contains(",virtual,") && text.contains(",task,"));
    assert!(one.activation_stats(&[], &lat).is_err());
}

#[test]
fn latent_mask_zeroes_projections() {
    let lat = latent(4);
    let masked = NetworkConfig { latent_mask: LatentMask { physical: false, virtual_as: true }, ..config(4) };
    let net = R2slNetwork::new(masked, small_dims()).unwrap();
    let f = net.features(&record(1, 1, 1.0), &lat).unwrap();
    let mut tape = Tape::new(net.store());
    let b = net.build_inputs(&mut tape, &f).unwrap();
    assert!(tape.value(b.latents[0]).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(b.latents[2]).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(b.latents[1]).data().iter().any(|&v| v != 0.0));
}

#[test]
fn network_document_round_trip() {
    let net = R2slNetwork::new(config(4), small_dims()).unwrap();
    let text = net.to_json("abc", None).unwrap();
    let (back, hash, hist) = R2slNetwork::from_json(&text).unwrap();
    assert_eq!(hash, "abc");
    assert!(hist.is_none());
    let lat = latent(4);
    let r = record(3, 3, 1.0);
    assert_eq!(back.predict(&r, &lat).unwrap().to_bits(), net.predict(&r, &lat).unwrap().to_bits());
    assert!(R2slNetwork::from_json(&text.replace("\"schema_version\":1", "\"schema_version\":2")).is_err());
}

#[test]
fn config_validation() {
    assert!(NetworkConfig { top_k: 0, ..Default::default() }.validate().is_err());
    assert!(NetworkConfig { top_k: 5, ..Default::default() }.validate().is_err());
    assert!(NetworkConfig { decoder_v: 1, ..Default::default() }.validate().is_err());
    assert!(NetworkConfig::default().validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exactly_top_k_experts_contribute(u in 0usize..6, s in 0usize..7, seed in 0u64..500) {
        let net = R2slNetwork::new(NetworkConfig { seed, ..config(4) }, small_dims()).unwrap();
        let lat = latent(4);
        let r = record(u, s, 1.0);
        let d = net.gate_decision(&r, &lat).unwrap();
        prop_assert_eq!(d.n_active(), 2);
        prop_assert!((d.sparse.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((d.raw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (w, a) in d.sparse.iter().zip(&d.active) {
            prop_assert!(*a || *w == 0.0);
        }
    }
}
