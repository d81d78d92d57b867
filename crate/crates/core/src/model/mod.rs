//! Sparse mixture-of-experts QoS regressor.
//!
//! Each request is embedded from its six categorical ids (user, service and
//! their city / AS codes) plus four projected latent-state vectors. Task
//! experts see the whole bundle; domain experts see one latent domain only
//! (physical = city distributions, virtual = AS distributions). A gate over
//! the user and service embeddings picks the top-k experts; their weighted
//! outputs are concatenated and decoded by a small MLP.

mod forward;
mod stats;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetDims;
use crate::error::{Error, Result};
use crate::nncore::{AdamConfig, ParamId, ParamStore, Rng, Tensor};

pub use forward::{select_experts, Bundle, GateDecision, RequestFeatures};
pub use stats::{ActivationReport, ExpertActivation, GroupShare, ACTIVATION_CSV_HEADER};
pub use train::{fit_network, median, train, EpochStats, TrainHistory};

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

/// Which latent projections reach the network. Disabled ones are replaced
/// by zeros after projection, keeping every parameter in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentMask {
    /// City distributions (`theta_u`, `theta_s`).
    pub physical: bool,
    /// AS distributions (`delta_u`, `delta_s`).
    pub virtual_as: bool,
}

impl Default for LatentMask {
    fn default() -> Self {
        Self {
            physical: true,
            virtual_as: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub embed_dim: usize,
    /// Expert hidden width `H`.
    pub hidden: usize,
    pub n_task_experts: usize,
    /// Alternately physical and virtual, starting with physical.
    pub n_domain_experts: usize,
    pub top_k: usize,
    /// Decoder widths are `[2^v, 2^(v-1), 2^(v-2), 1]`.
    pub decoder_v: u32,
    pub latent_m: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs on validation MAE.
    pub patience: usize,
    pub adam: AdamConfig,
    /// Keep every expert active (no top-k sparsification).
    pub dense_gate: bool,
    pub latent_mask: LatentMask,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden: 32,
            n_task_experts: 2,
            n_domain_experts: 2,
            top_k: 2,
            decoder_v: 5,
            latent_m: 4,
            seed: 0,
            batch_size: 256,
            epochs: 100,
            patience: 10,
            adam: AdamConfig::default(),
            dense_gate: false,
            latent_mask: LatentMask::default(),
        }
    }
}

impl NetworkConfig {
    pub fn n_experts(&self) -> usize {
        self.n_task_experts + self.n_domain_experts
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("network config: {msg}")));
        let n = self.n_experts();
        if n == 0 {
            return bad("needs at least one expert".into());
        }
        if self.top_k < 1 || self.top_k > n {
            return bad(format!("top_k must be in 1..={n}, got {}", self.top_k));
        }
        if self.decoder_v < 2 {
            return bad("decoder_v must be >= 2".into());
        }
        if self.embed_dim == 0 || self.hidden == 0 || self.latent_m == 0 || self.batch_size == 0 {
            return bad("embed_dim, hidden, latent_m and batch_size must be >= 1".into());
        }
        if !(self.adam.lr >= 0.0) || !self.adam.lr.is_finite() {
            return bad("learning rate must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Output widths of the decoder layers.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let v = self.decoder_v;
        vec![1 << v, 1 << (v - 1), 1 << (v - 2), 1]
    }

    pub fn expert_kind(&self, i: usize) -> ExpertKind {
        if i < self.n_task_experts {
            ExpertKind::Task
        } else if (i - self.n_task_experts) % 2 == 0 {
            ExpertKind::Physical
        } else {
            ExpertKind::Virtual
        }
    }

    /// Width of the full feature bundle: six id embeddings and four latent
    /// projections.
    pub fn bundle_width(&self) -> usize {
        10 * self.embed_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    Task,
    Physical,
    Virtual,
}

impl ExpertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Task => "task",
            Self::Physical => "physical",
            Self::Virtual => "virtual",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ExpertIds {
    pub kind: ExpertKind,
    pub fuse: DenseIds,
    pub conv3: DenseIds,
    pub conv5: DenseIds,
    pub w_out: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    /// user_id, service_id, user_city, user_as, service_city, service_as.
    pub embeddings: [ParamId; 6],
    /// theta_u, delta_u, theta_s, delta_s projections.
    pub projections: [DenseIds; 4],
    pub experts: Vec<ExpertIds>,
    pub gate_hidden: DenseIds,
    pub gate_out: DenseIds,
    pub decoder: Vec<DenseIds>,
}

/// Network parameters plus the configuration that shaped them.
#[derive(Debug, Clone)]
pub struct R2slNetwork {
    config: NetworkConfig,
    dims: DatasetDims,
    store: ParamStore,
    layout: Layout,
}

const EMBED_NAMES: [&str; 6] = [
    "user_id",
    "service_id",
    "user_city",
    "user_as",
    "service_city",
    "service_as",
];
const PROJ_NAMES: [&str; 4] = ["theta_u", "delta_u", "theta_s", "delta_s"];

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

fn add_dense(store: &mut ParamStore, rng: &mut Rng, name: &str, input: usize, output: usize) -> Result<DenseIds> {
    Ok(DenseIds {
        w: store.add(format!("{name}.w"), xavier(rng, output, input))?,
        b: store.add(format!("{name}.b"), Tensor::zeros(&[output]))?,
    })
}

fn add_conv(store: &mut ParamStore, rng: &mut Rng, name: &str, k: usize) -> Result<DenseIds> {
    // Centre tap starts at one so each branch begins close to the identity.
    let bound = 0.5 / (k as f64).sqrt();
    let data = (0..k)
        .map(|i| rng.uniform_range(-bound, bound) + if i == k / 2 { 1.0 } else { 0.0 })
        .collect();
    Ok(DenseIds {
        w: store.add(format!("{name}.k"), Tensor::new(vec![k, 1, 1], data)?)?,
        b: store.add(format!("{name}.b"), Tensor::zeros(&[1]))?,
    })
}

impl R2slNetwork {
    /// Freshly initialized network for a dataset with `dims`.
    pub fn new(config: NetworkConfig, dims: DatasetDims) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed).fork(0x5eed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let sizes = [
            dims.n_users,
            dims.n_services,
            dims.n_user_cities,
            dims.n_user_as,
            dims.n_service_cities,
            dims.n_service_as,
        ];
        let mut embeddings = Vec::with_capacity(6);
        for (name, rows) in EMBED_NAMES.iter().zip(sizes) {
            let data = (0..rows * d).map(|_| 0.1 * rng.normal()).collect();
            embeddings.push(store.add(format!("embed.{name}"), Tensor::new(vec![rows, d], data)?)?);
        }
        let mut projections = Vec::with_capacity(4);
        for name in PROJ_NAMES {
            projections.push(add_dense(&mut store, &mut rng, &format!("latent.{name}"), config.latent_m, d)?);
        }
        let h = config.hidden;
        let mut experts = Vec::with_capacity(config.n_experts());
        for i in 0..config.n_experts() {
            let kind = config.expert_kind(i);
            let input = match kind {
                ExpertKind::Task => config.bundle_width(),
                _ => 2 * d,
            };
            let p = format!("expert{i}");
            experts.push(ExpertIds {
                kind,
                fuse: add_dense(&mut store, &mut rng, &format!("{p}.fuse"), input, h)?,
                conv3: add_conv(&mut store, &mut rng, &format!("{p}.conv3"), 3)?,
                conv5: add_conv(&mut store, &mut rng, &format!("{p}.conv5"), 5)?,
                w_out: store.add(format!("{p}.w_out"), Tensor::full(&[2], 0.5))?,
            });
        }
        let gate_hidden = add_dense(&mut store, &mut rng, "gate.hidden", 2 * d, h)?;
        let gate_out = add_dense(&mut store, &mut rng, "gate.out", h, config.n_experts())?;
        let mut decoder = Vec::new();
        let mut width = config.n_experts() * h;
        for (l, out) in config.decoder_widths().into_iter().enumerate() {
            decoder.push(add_dense(&mut store, &mut rng, &format!("decoder{l}"), width, out)?);
            width = out;
        }
        Ok(Self {
            config,
            dims,
            store,
            layout: Layout {
                embeddings: embeddings.try_into().expect("six tables"),
                projections: projections.try_into().expect("four projections"),
                experts,
                gate_hidden,
                gate_out,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn dims(&self) -> &DatasetDims {
        &self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn expert_kinds(&self) -> Vec<ExpertKind> {
        self.layout.experts.iter().map(|e| e.kind).collect()
    }

    /// Names of every parameter belonging to expert `i`.
    pub fn expert_param_names(&self, i: usize) -> Vec<String> {
        let prefix = format!("expert{i}.");
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(&prefix))
            .map(|(_, p)| p.name.clone())
            .collect()
    }

    /// Sets the bias of the final linear layer, e.g. to the training median.
    pub fn set_output_bias(&mut self, value: f64) {
        let last = self.layout.decoder.last().expect("decoder has layers").b;
        self.store.get_mut(last).value.data_mut()[0] = value;
    }

    pub fn set_dense_gate(&mut self, dense: bool) {
        self.config.dense_gate = dense;
    }

    pub fn set_top_k(&mut self, top_k: usize) -> Result<()> {
        let mut c = self.config.clone();
        c.top_k = top_k;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn to_json(&self, latent_hash: &str, history: Option<&TrainHistory>) -> Result<String> {
        let doc = NetworkDocument {
            schema_version: NETWORK_SCHEMA_VERSION,
            kind: "r2sl_network".into(),
            config: self.config.clone(),
            dims: self.dims,
            latent_hash: latent_hash.to_string(),
            params: self
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    tensor: p.value.clone(),
                })
                .collect(),
            history: history.cloned(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Rebuilds a network from its document. Returns the network, the
    /// latent model hash it was trained against and its training history.
    pub fn from_json(text: &str) -> Result<(Self, String, Option<TrainHistory>)> {
        let doc: NetworkDocument = serde_json::from_str(text)?;
        if doc.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: doc.schema_version,
                expected: NETWORK_SCHEMA_VERSION,
            });
        }
        let mut net = Self::new(doc.config, doc.dims)?;
        if doc.params.len() != net.store.len() {
            return Err(Error::Dimension(format!(
                "network document has {} tensors, expected {}",
                doc.params.len(),
                net.store.len()
            )));
        }
        for nt in doc.params {
            let id = net
                .store
                .id(&nt.name)
                .ok_or_else(|| Error::Dimension(format!("unknown parameter `{}`", nt.name)))?;
            let slot = &mut net.store.get_mut(id).value;
            if slot.shape() != nt.tensor.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    nt.name,
                    nt.tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = nt.tensor;
        }
        Ok((net, doc.latent_hash, doc.history))
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct NetworkDocument {
    schema_version: u32,
    kind: String,
    config: NetworkConfig,
    dims: DatasetDims,
    latent_hash: String,
    params: Vec<NamedTensor>,
    history: Option<TrainHistory>,
}
