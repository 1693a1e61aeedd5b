//! Dual-branch convolutional network with a configurable branch point.
//!
//! Blocks `1..=k` form the shared trunk; blocks `k+1..=4` are instantiated
//! twice, once for the causal branch and once for the domain branch. Each
//! branch ends in global average pooling and an affine map to
//! `feature_dim`. The single-branch architecture (plain ERM) drops the
//! domain branch, its head and both projectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::checkpoint;
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::style::{StyleAugmenter, StyleStats};

pub const TOTAL_BLOCKS: usize = 4;
/// Blocks with index below this are followed by 2x2 max pooling.
const POOLED_BLOCKS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleBranch,
    #[default]
    DualBranch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    /// Number of shared blocks, `0..=4`.
    pub branch_point: usize,
    pub channels: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    /// `(channels, height, width)`.
    pub input: [usize; 3],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::DualBranch,
            branch_point: 1,
            channels: vec![32; TOTAL_BLOCKS],
            feature_dim: 64,
            num_classes: 10,
            num_domains: 6,
            input: [1, 28, 28],
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branch_point > TOTAL_BLOCKS {
            return Err(Error::invalid(format!(
                "branch_point must be in 0..={TOTAL_BLOCKS}, got {}",
                self.branch_point
            )));
        }
        if self.channels.len() != TOTAL_BLOCKS || self.channels.contains(&0) {
            return Err(Error::invalid(format!(
                "channels must list {TOTAL_BLOCKS} positive widths, got {:?}",
                self.channels
            )));
        }
        if self.feature_dim == 0 || self.num_classes == 0 || self.input[0] == 0 {
            return Err(Error::invalid("feature_dim, num_classes and input channels must be positive"));
        }
        if self.architecture == Architecture::DualBranch && self.num_domains == 0 {
            return Err(Error::invalid("a dual-branch network needs num_domains >= 1"));
        }
        if self.input[1] < 4 || self.input[2] < 4 {
            return Err(Error::invalid(format!(
                "input must be at least 4x4 to survive pooling, got {}x{}",
                self.input[1], self.input[2]
            )));
        }
        Ok(())
    }

    fn in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.input[0]
        } else {
            self.channels[block - 1]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Causal,
    Domain,
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Self::Causal),
            "domain" => Ok(Self::Domain),
            other => Err(Error::invalid(format!("unknown branch `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Tower {
    blocks: Vec<Layer>,
    fc: Layer,
}

#[derive(Clone, Debug)]
struct Layout {
    trunk: Vec<Layer>,
    causal: Tower,
    head_o: Layer,
    domain: Option<Tower>,
    head_d: Option<Layer>,
    proj_o: Option<[Layer; 2]>,
    proj_d: Option<[Layer; 2]>,
}

/// Parameter name prefixes needed for class prediction.
pub const INFERENCE_PREFIXES: [&str; 3] = ["trunk.", "causal.", "head_o."];

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
}

fn lookup_layer(store: &ParamStore, prefix: &str) -> Result<Layer> {
    Ok(Layer {
        w: lookup(store, &format!("{prefix}.w"))?,
        b: lookup(store, &format!("{prefix}.b"))?,
    })
}

fn block_name(scope: &str, block: usize) -> String {
    format!("{scope}.block{}", block + 1)
}

fn lookup_tower(store: &ParamStore, scope: &str, k: usize) -> Result<Tower> {
    Ok(Tower {
        blocks: (k..TOTAL_BLOCKS)
            .map(|i| lookup_layer(store, &block_name(scope, i)))
            .collect::<Result<_>>()?,
        fc: lookup_layer(store, &format!("{scope}.fc"))?,
    })
}

fn lookup_projector(store: &ParamStore, scope: &str) -> Result<[Layer; 2]> {
    Ok([
        lookup_layer(store, &format!("{scope}.fc1"))?,
        lookup_layer(store, &format!("{scope}.fc2"))?,
    ])
}

fn validate_shapes(config: &NetworkConfig, store: &ParamStore) -> Result<()> {
    let expected = expected_shapes(config);
    for (name, shape) in &expected {
        if let Some(id) = store.id(name) {
            if store.get(id).shape() != shape.as_slice() {
                return Err(Error::shape("parameter", shape, store.get(id).shape()));
            }
        }
    }
    Ok(())
}

/// Every parameter of the full network, in registration order.
fn expected_shapes(config: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, prefix: String, i: usize| {
        let (cin, cout) = (config.in_channels(i), config.channels[i]);
        out.push((format!("{prefix}.w"), vec![cout, cin, 3, 3]));
        out.push((format!("{prefix}.b"), vec![cout]));
    };
    for i in 0..config.branch_point {
        conv(&mut out, block_name("trunk", i), i);
    }
    let dense = |out: &mut Vec<_>, prefix: &str, fan_in: usize, fan_out: usize| {
        out.push((format!("{prefix}.w"), vec![fan_in, fan_out]));
        out.push((format!("{prefix}.b"), vec![fan_out]));
    };
    let last = config.channels[TOTAL_BLOCKS - 1];
    let fd = config.feature_dim;
    let dual = config.architecture == Architecture::DualBranch;
    let scopes: &[&str] = if dual { &["causal", "domain"] } else { &["causal"] };
    for scope in scopes {
        for i in config.branch_point..TOTAL_BLOCKS {
            conv(&mut out, block_name(scope, i), i);
        }
        dense(&mut out, &format!("{scope}.fc"), last, fd);
    }
    dense(&mut out, "head_o", fd, config.num_classes);
    if dual {
        dense(&mut out, "head_d", fd, config.num_domains);
        for scope in ["proj_o", "proj_d"] {
            dense(&mut out, &format!("{scope}.fc1"), fd, fd);
            dense(&mut out, &format!("{scope}.fc2"), fd, fd);
        }
    }
    out
}

fn he_uniform(shape: &[usize], rng: &mut impl Rng) -> Array {
    // Conv weights are (out, in, 3, 3); dense weights are (in, out).
    let fan_in = match shape.len() {
        4 => shape[1] * 9,
        _ => shape[0],
    };
    let bound = (6.0 / fan_in as f64).sqrt();
    Array::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug)]
pub struct BranchingNetwork {
    config: NetworkConfig,
    store: ParamStore,
    layout: Layout,
}

/// Graph handles produced by [`BranchingNetwork::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub trunk: Var,
    pub feat_o: Var,
    pub logits_o: Var,
    pub feat_d: Option<Var>,
    pub logits_d: Option<Var>,
    /// Present iff the forward pass ran an augmenter.
    pub augmented: Option<AugmentedOutputs>,
}

#[derive(Clone, Debug)]
pub struct AugmentedOutputs {
    pub style_targets: StyleStats,
    pub feat_o_aug: Var,
    pub logits_o_aug: Var,
    pub feat_d_aug: Option<Var>,
    pub proj_o: Option<Var>,
    pub proj_o_aug: Option<Var>,
    pub proj_d: Option<Var>,
    pub proj_d_aug: Option<Var>,
}

pub fn build_network(config: &NetworkConfig, rng: &mut impl Rng) -> Result<BranchingNetwork> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape) in expected_shapes(config) {
        let value = if name.ends_with(".b") {
            Array::zeros(&shape)
        } else {
            he_uniform(&shape, rng)
        };
        store.add(name, value)?;
    }
    BranchingNetwork::from_params(config.clone(), store)
}

fn apply_block(g: &mut Graph, store: &ParamStore, layer: Layer, index: usize, x: Var) -> Result<Var> {
    let w = g.param(store, layer.w);
    let b = g.param(store, layer.b);
    let y = g.conv3x3(x, w, b)?;
    let y = g.relu(y);
    if index < POOLED_BLOCKS {
        g.max_pool2(y)
    } else {
        Ok(y)
    }
}

fn apply_dense(g: &mut Graph, store: &ParamStore, layer: Layer, x: Var) -> Result<Var> {
    let w = g.param(store, layer.w);
    let b = g.param(store, layer.b);
    g.affine(x, w, b)
}

fn apply_trunk(g: &mut Graph, store: &ParamStore, trunk: &[Layer], x: Var) -> Result<Var> {
    trunk
        .iter()
        .enumerate()
        .try_fold(x, |h, (i, &l)| apply_block(g, store, l, i, h))
}

fn apply_tower(g: &mut Graph, store: &ParamStore, tower: &Tower, k: usize, z: Var) -> Result<Var> {
    let mut h = z;
    for (j, &l) in tower.blocks.iter().enumerate() {
        h = apply_block(g, store, l, k + j, h)?;
    }
    let pooled = g.global_avg_pool(h)?;
    apply_dense(g, store, tower.fc, pooled)
}

fn apply_projector(g: &mut Graph, store: &ParamStore, p: &[Layer; 2], x: Var) -> Result<Var> {
    let h = apply_dense(g, store, p[0], x)?;
    let h = g.relu(h);
    apply_dense(g, store, p[1], h)
}

fn check_images(config: &NetworkConfig, images: &Array) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || s[1..] != config.input || s[0] == 0 {
        let mut want = vec![0];
        want.extend_from_slice(&config.input);
        return Err(Error::shape("network input", &want, s));
    }
    Ok(())
}

impl BranchingNetwork {
    /// Assembles a network from named parameters, e.g. a loaded checkpoint.
    pub fn from_params(config: NetworkConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        validate_shapes(&config, &store)?;
        let k = config.branch_point;
        let dual = config.architecture == Architecture::DualBranch;
        let layout = Layout {
            trunk: (0..k)
                .map(|i| lookup_layer(&store, &block_name("trunk", i)))
                .collect::<Result<_>>()?,
            causal: lookup_tower(&store, "causal", k)?,
            head_o: lookup_layer(&store, "head_o")?,
            domain: dual.then(|| lookup_tower(&store, "domain", k)).transpose()?,
            head_d: dual.then(|| lookup_layer(&store, "head_d")).transpose()?,
            proj_o: dual.then(|| lookup_projector(&store, "proj_o")).transpose()?,
            proj_d: dual.then(|| lookup_projector(&store, "proj_d")).transpose()?,
        };
        if store.len() != expected_shapes(&config).len() {
            return Err(Error::invalid("parameter store holds unexpected entries"));
        }
        Ok(Self { config, store, layout })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Parameter names belonging to a branch (blocks and final affine).
    pub fn branch_param_names(&self, branch: Branch) -> Vec<String> {
        let tower = match branch {
            Branch::Causal => Some(&self.layout.causal),
            Branch::Domain => self.layout.domain.as_ref(),
        };
        tower
            .into_iter()
            .flat_map(|t| t.blocks.iter().chain(std::iter::once(&t.fc)))
            .flat_map(|l| [l.w, l.b])
            .map(|id| self.store.name(id).to_string())
            .collect()
    }

    pub fn trunk_param_names(&self) -> Vec<String> {
        self.layout
            .trunk
            .iter()
            .flat_map(|l| [l.w, l.b])
            .map(|id| self.store.name(id).to_string())
            .collect()
    }

    /// Registers the forward pass in `g`. With an augmenter, the trunk
    /// output is restyled toward freshly drawn targets and both branches
    /// also run on the result.
    pub fn forward(
        &self,
        g: &mut Graph,
        images: &Array,
        augmenter: Option<&StyleAugmenter>,
        rng: &mut impl Rng,
    ) -> Result<ForwardOutputs> {
        self.forward_with_store(g, &self.store, images, augmenter, rng)
    }

    /// As [`forward`](Self::forward) but reading parameter values from
    /// `store`, which must share this network's layout. Used for finite
    /// differences on perturbed copies.
    pub fn forward_with_store(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        images: &Array,
        augmenter: Option<&StyleAugmenter>,
        rng: &mut impl Rng,
    ) -> Result<ForwardOutputs> {
        check_images(&self.config, images)?;
        let k = self.config.branch_point;
        let l = &self.layout;
        let x = g.constant(images.clone());
        let z = apply_trunk(g, store, &l.trunk, x)?;
        let feat_o = apply_tower(g, store, &l.causal, k, z)?;
        let logits_o = apply_dense(g, store, l.head_o, feat_o)?;
        let feat_d = l.domain.as_ref().map(|t| apply_tower(g, store, t, k, z)).transpose()?;
        let logits_d = match (feat_d, l.head_d) {
            (Some(f), Some(h)) => Some(apply_dense(g, store, h, f)?),
            _ => None,
        };
        let augmented = match augmenter {
            None => None,
            Some(aug) => {
                let targets = aug.targets(g.value(z), rng)?;
                let z_aug = g.restyle(z, &targets.mu, &targets.sigma)?;
                let feat_o_aug = apply_tower(g, store, &l.causal, k, z_aug)?;
                let logits_o_aug = apply_dense(g, store, l.head_o, feat_o_aug)?;
                let feat_d_aug = l
                    .domain
                    .as_ref()
                    .map(|t| apply_tower(g, store, t, k, z_aug))
                    .transpose()?;
                let mut proj = |p: &Option<[Layer; 2]>, f: Option<Var>| -> Result<Option<Var>> {
                    match (p, f) {
                        (Some(p), Some(f)) => Ok(Some(apply_projector(g, store, p, f)?)),
                        _ => Ok(None),
                    }
                };
                Some(AugmentedOutputs {
                    style_targets: targets,
                    feat_o_aug,
                    logits_o_aug,
                    proj_o: proj(&l.proj_o, Some(feat_o))?,
                    proj_o_aug: proj(&l.proj_o, Some(feat_o_aug))?,
                    proj_d: proj(&l.proj_d, feat_d)?,
                    proj_d_aug: proj(&l.proj_d, feat_d_aug)?,
                    feat_d_aug,
                })
            }
        };
        Ok(ForwardOutputs {
            trunk: z,
            feat_o,
            logits_o,
            feat_d,
            logits_d,
            augmented,
        })
    }

    /// Applies the named branch's projector to `feats` (`b x feature_dim`).
    pub fn project(&self, g: &mut Graph, branch: Branch, feats: Var) -> Result<Var> {
        let p = match branch {
            Branch::Causal => self.layout.proj_o.as_ref(),
            Branch::Domain => self.layout.proj_d.as_ref(),
        }
        .ok_or_else(|| Error::invalid(format!("{branch:?} branch has no projector")))?;
        let s = g.shape(feats);
        if s.len() != 2 || s[1] != self.config.feature_dim {
            return Err(Error::shape("project", &[0, self.config.feature_dim], s));
        }
        apply_projector(g, &self.store, p, feats)
    }

    /// Class logits through the inference path only.
    pub fn class_logits(&self, images: &Array) -> Result<Array> {
        self.inference_model().logits(images)
    }

    /// Copy holding only the trunk, causal branch and class head.
    pub fn inference_model(&self) -> InferenceModel {
        let mut store = ParamStore::new();
        for (_, name, value) in self.store.iter() {
            if INFERENCE_PREFIXES.iter().any(|p| name.starts_with(p)) {
                store.add(name, value.clone()).expect("names are unique");
            }
        }
        InferenceModel::from_params(self.config.clone(), store).expect("layout was valid")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(path, self.store.iter().map(|(_, n, a)| (n, a)))
    }

    pub fn load(config: NetworkConfig, path: &std::path::Path) -> Result<Self> {
        Self::from_params(config, ParamStore::from_named(checkpoint::load_checkpoint(path)?)?)
    }
}

/// Pruned class predictor: trunk, causal branch and class head.
#[derive(Clone, Debug)]
pub struct InferenceModel {
    config: NetworkConfig,
    store: ParamStore,
    trunk: Vec<Layer>,
    causal: Tower,
    head_o: Layer,
}

impl InferenceModel {
    pub fn from_params(config: NetworkConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        validate_shapes(&config, &store)?;
        let k = config.branch_point;
        let model = Self {
            trunk: (0..k)
                .map(|i| lookup_layer(&store, &block_name("trunk", i)))
                .collect::<Result<_>>()?,
            causal: lookup_tower(&store, "causal", k)?,
            head_o: lookup_layer(&store, "head_o")?,
            config,
            store,
        };
        if let Some((_, name, _)) = model
            .store
            .iter()
            .find(|(_, n, _)| !INFERENCE_PREFIXES.iter().any(|p| n.starts_with(p)))
        {
            return Err(Error::invalid(format!("`{name}` is not part of the inference path")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn logits(&self, images: &Array) -> Result<Array> {
        check_images(&self.config, images)?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let z = apply_trunk(&mut g, &self.store, &self.trunk, x)?;
        let f = apply_tower(&mut g, &self.store, &self.causal, self.config.branch_point, z)?;
        let y = apply_dense(&mut g, &self.store, self.head_o, f)?;
        Ok(g.value(y).clone())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(path, self.store.iter().map(|(_, n, a)| (n, a)))
    }

    pub fn load(config: NetworkConfig, path: &std::path::Path) -> Result<Self> {
        Self::from_params(config, ParamStore::from_named(checkpoint::load_checkpoint(path)?)?)
    }
}
