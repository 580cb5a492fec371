//! Multi-domain CTR model with a star-topology network.
//!
//! Shared embeddings feed a partitioned normalization and a star FCN whose
//! per-domain weights multiply the shared ones. An auxiliary network over
//! the domain indicator adds its logit to the main logit.

mod aux;
mod fcn;
mod pn;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use aux::{aux_backward, aux_forward, AuxCache, AuxNetParams};
pub use fcn::{fuse_layer, star_layer_backward, star_layer_forward, StarFcnParams};
pub use pn::{pn_backward, pn_forward_eval, pn_forward_train, PnParams};

use crate::model::{CtrModel, FeatureBatch};
use crate::nn::activation::DEFAULT_LEAKY_SLOPE;
use crate::nn::batch_norm::NormCache;
use crate::nn::{AdamConfig, AdamState, EmbeddingParams, Moments, NormConfig, ParamStore};
use crate::stream::DomainId;
use crate::{clamp_prob, sigmoid, Error, Result, Scalar};
use fcn::{fcn_backward, fcn_forward, FcnCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarConfig {
    pub vocab_sizes: Vec<usize>,
    pub embedding_dim: usize,
    /// Hidden widths of the star FCN; a width-1 logit layer follows.
    pub hidden: Vec<usize>,
    pub num_domains: usize,
    pub use_aux: bool,
    pub aux_width: usize,
    pub aux_embedding_dim: usize,
    pub leaky_relu_slope: f64,
    pub norm: NormConfig,
    pub adam: AdamConfig,
    /// Fail instead of falling back to (0, 1) when evaluating a domain whose
    /// PN moments were never trained.
    pub strict_pn: bool,
}

impl StarConfig {
    pub fn new(vocab_sizes: Vec<usize>, embedding_dim: usize, hidden: Vec<usize>, num_domains: usize) -> Self {
        StarConfig {
            vocab_sizes,
            embedding_dim,
            hidden,
            num_domains,
            use_aux: true,
            aux_width: 32,
            aux_embedding_dim: 8,
            leaky_relu_slope: DEFAULT_LEAKY_SLOPE,
            norm: NormConfig::default(),
            adam: AdamConfig::default(),
            strict_pn: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.vocab_sizes.len() * self.embedding_dim
    }

    /// Layer widths of the star FCN, input and logit included.
    pub fn fcn_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_dim()];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 || self.num_domains > u16::MAX as usize {
            return Err(Error::config("number of domains must lie in 1..=65535"));
        }
        if self.feature_dim() == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        if self.use_aux && (self.aux_width == 0 || self.aux_embedding_dim == 0) {
            return Err(Error::config("auxiliary network sizes must be positive"));
        }
        if !(self.leaky_relu_slope > 0.0 && self.leaky_relu_slope < 1.0) {
            return Err(Error::config("leaky ReLU slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarParams<T> {
    pub embedding: EmbeddingParams<T>,
    pub pn: PnParams<T>,
    pub fcn: StarFcnParams<T>,
    pub aux: Option<AuxNetParams<T>>,
}

impl<T: Scalar> ParamStore<T> for StarParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.embedding.tensors();
        out.extend(self.pn.tensors());
        out.extend(self.fcn.tensors());
        if let Some(a) = &self.aux {
            out.extend(a.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.embedding.tensors_mut();
        out.extend(self.pn.tensors_mut());
        out.extend(self.fcn.tensors_mut());
        if let Some(a) = &mut self.aux {
            out.extend(a.tensors_mut());
        }
        out
    }
}

#[derive(Debug, Clone)]
struct GroupCache<T> {
    domain: DomainId,
    rows: Vec<usize>,
    pn: NormCache<T>,
    fcn: FcnCache<T>,
}

#[derive(Debug, Clone)]
pub struct StarCache<T> {
    version: u64,
    ids: Array2<u32>,
    groups: Vec<GroupCache<T>>,
    aux: Option<AuxCache<T>>,
    pub logits: Vec<T>,
}

#[derive(Debug)]
pub struct StarModel<T> {
    config: StarConfig,
    pub params: StarParams<T>,
    /// Moving PN moments, one per domain.
    pub moments: Vec<Moments<T>>,
    adam: AdamState<T>,
    version: u64,
    cold_domain_evals: AtomicU64,
}

impl<T: Scalar> Clone for StarModel<T> {
    fn clone(&self) -> Self {
        StarModel {
            config: self.config.clone(),
            params: self.params.clone(),
            moments: self.moments.clone(),
            adam: self.adam.clone(),
            version: self.version,
            cold_domain_evals: AtomicU64::new(self.cold_domain_evals.load(Ordering::Relaxed)),
        }
    }
}

fn row_groups(domains: &[DomainId]) -> BTreeMap<DomainId, Vec<usize>> {
    let mut groups: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
    for (i, &d) in domains.iter().enumerate() {
        groups.entry(d).or_default().push(i);
    }
    groups
}

impl<T: Scalar> StarModel<T> {
    pub fn new<R: Rng + ?Sized>(config: StarConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding = EmbeddingParams::new(&config.vocab_sizes, config.embedding_dim, rng);
        let fd = config.feature_dim();
        let fcn = StarFcnParams::new(&config.fcn_widths(), config.num_domains, rng);
        let aux = config.use_aux.then(|| {
            AuxNetParams::new(config.num_domains, config.aux_embedding_dim, fd, config.aux_width, rng)
        });
        let params = StarParams {
            embedding,
            pn: PnParams::identity(fd, config.num_domains),
            fcn,
            aux,
        };
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: StarConfig, params: StarParams<T>) -> Self {
        let fd = config.feature_dim();
        StarModel {
            moments: vec![Moments::new(fd); config.num_domains],
            adam: AdamState::new(config.adam),
            version: 0,
            cold_domain_evals: AtomicU64::new(0),
            config,
            params,
        }
    }

    /// Build from explicit parameters; PN moments start cold.
    pub fn from_params(config: StarConfig, params: StarParams<T>) -> Result<Self> {
        config.validate()?;
        let fd = config.feature_dim();
        let shapes_ok = params.embedding.vocab_sizes() == config.vocab_sizes
            && params.embedding.dim() == config.embedding_dim
            && params.pn.dim() == fd
            && params.pn.domains.len() == config.num_domains
            && params.fcn.domains.len() == config.num_domains
            && params.fcn.shared.len() == config.hidden.len() + 1
            && params.aux.is_some() == config.use_aux;
        if !shapes_ok {
            return Err(Error::shape("STAR parameters do not match config"));
        }
        let widths = config.fcn_widths();
        for layers in std::iter::once(&params.fcn.shared).chain(&params.fcn.domains) {
            for (l, d) in layers.iter().enumerate() {
                if d.input_dim() != widths[l] || d.output_dim() != widths[l + 1] {
                    return Err(Error::shape(format!("star layer {l} has the wrong shape")));
                }
            }
        }
        if let Some(a) = &params.aux {
            let ok = a.domain_embedding.dim() == (config.num_domains, config.aux_embedding_dim)
                && a.hidden.input_dim() == config.aux_embedding_dim + fd
                && a.hidden.output_dim() == config.aux_width
                && a.output.input_dim() == config.aux_width
                && a.output.output_dim() == 1;
            if !ok {
                return Err(Error::shape("auxiliary network does not match config"));
            }
        }
        Ok(Self::assemble(config, params))
    }

    pub fn config(&self) -> &StarConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Evaluations that fell back to cold-start PN moments.
    pub fn cold_domain_evals(&self) -> u64 {
        self.cold_domain_evals.load(Ordering::Relaxed)
    }

    fn slope(&self) -> T {
        T::lit(self.config.leaky_relu_slope)
    }

    fn check_domains(&self, domains: &[DomainId]) -> Result<()> {
        match domains.iter().find(|d| d.index() >= self.config.num_domains) {
            Some(d) => Err(Error::contract(format!("unknown domain {d}"))),
            None => Ok(()),
        }
    }

    /// Shared forward path. In training mode `moments` receives the batch
    /// moments of every domain group.
    fn run(
        &self,
        batch: &FeatureBatch,
        mut moments: Option<&mut [Moments<T>]>,
    ) -> Result<StarCache<T>> {
        self.check_domains(&batch.domains)?;
        let x = self.params.embedding.forward(batch.ids.view())?;
        let n = batch.len();
        let slope = self.slope();
        let mut logits = vec![T::zero(); n];
        let mut groups = Vec::new();
        for (domain, rows) in row_groups(&batch.domains) {
            let sub = x.select(Axis(0), &rows);
            let (normed, pn_cache) = match moments.as_deref_mut() {
                Some(m) => pn_forward_train(sub.view(), domain, &self.params.pn, &mut m[domain.index()], self.config.norm)?,
                None => {
                    let m = &self.moments[domain.index()];
                    if !m.is_initialized() {
                        if self.config.strict_pn {
                            return Err(Error::contract(format!(
                                "domain {domain} has no trained normalization moments"
                            )));
                        }
                        self.cold_domain_evals.fetch_add(1, Ordering::Relaxed);
                        log::warn!("domain {domain} evaluated with cold-start normalization moments");
                    }
                    pn_forward_eval(sub.view(), domain, &self.params.pn, m, self.config.norm)?
                }
            };
            let (s_m, fcn_cache) = fcn_forward(normed.view(), domain, &self.params.fcn, slope)?;
            for (k, &r) in rows.iter().enumerate() {
                logits[r] = s_m[[k, 0]];
            }
            groups.push(GroupCache {
                domain,
                rows,
                pn: pn_cache,
                fcn: fcn_cache,
            });
        }
        let aux = match &self.params.aux {
            Some(a) => {
                let (s_a, cache) = aux_forward(x.view(), &batch.domains, a, slope)?;
                for (l, s) in logits.iter_mut().zip(s_a.column(0)) {
                    *l += *s;
                }
                Some(cache)
            }
            None => None,
        };
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logit in forward pass".into()));
        }
        Ok(StarCache {
            version: self.version,
            ids: batch.ids.clone(),
            groups,
            aux,
            logits,
        })
    }

    /// Training-mode forward; updates the PN moments of every domain present.
    pub fn forward_train(&mut self, batch: &FeatureBatch) -> Result<StarCache<T>> {
        let mut moments = std::mem::take(&mut self.moments);
        let out = self.run(batch, Some(&mut moments));
        self.moments = moments;
        out
    }

    /// Training-mode forward that discards the batch moments.
    pub fn forward_frozen(&self, batch: &FeatureBatch) -> Result<StarCache<T>> {
        let mut scratch = self.moments.clone();
        self.run(batch, Some(&mut scratch))
    }

    /// Evaluation-mode logits.
    pub fn infer(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        Ok(self.run(batch, None)?.logits)
    }

    pub fn backward(&self, cache: &StarCache<T>, dlogits: &[T]) -> Result<StarParams<T>> {
        if cache.version != self.version {
            return Err(Error::contract(format!(
                "stale cache: produced at parameter version {}, model is at {}",
                cache.version, self.version
            )));
        }
        let n = cache.logits.len();
        if dlogits.len() != n {
            return Err(Error::shape("one logit gradient per sample required"));
        }
        let slope = self.slope();
        let mut grads = self.params.zeros_like();
        let mut dx = Array2::zeros((n, self.config.feature_dim()));
        for g in &cache.groups {
            let dsub = Array2::from_shape_fn((g.rows.len(), 1), |(k, _)| dlogits[g.rows[k]]);
            let dnormed = fcn_backward(&g.fcn, dsub.view(), g.domain, &self.params.fcn, &mut grads.fcn, slope)?;
            let (gs, gd, dz) = pn_backward(dnormed.view(), g.domain, &self.params.pn, &g.pn)?;
            grads.pn.shared.add_assign(&gs);
            grads.pn.domains[g.domain.index()].add_assign(&gd);
            for (k, &r) in g.rows.iter().enumerate() {
                let mut row = dx.row_mut(r);
                row += &dz.row(k);
            }
        }
        if let (Some(a), Some(ac)) = (&self.params.aux, &cache.aux) {
            let d = ArrayView2::from_shape((n, 1), dlogits).map_err(|e| Error::shape(e.to_string()))?;
            let (ga, dxa) = aux_backward(ac, d, a, slope);
            grads.aux = Some(ga);
            dx += &dxa;
        }
        grads.embedding = self.params.embedding.backward(cache.ids.view(), dx.view())?;
        Ok(grads)
    }

    pub fn apply_gradients(&mut self, grads: &StarParams<T>) -> Result<()> {
        self.adam.update(&mut self.params, grads)?;
        self.version += 1;
        Ok(())
    }

    /// Evaluation-mode probabilities.
    pub fn predict(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        Ok(self.infer(batch)?.into_iter().map(|s| clamp_prob(sigmoid(s))).collect())
    }
}

/// Summed binary cross-entropy over the batch and its parameter gradients,
/// from a training-mode forward pass that leaves the moving moments alone.
pub fn star_loss<T: Scalar>(model: &StarModel<T>, batch: &FeatureBatch, labels: &[u8]) -> Result<(T, StarParams<T>)> {
    if labels.len() != batch.len() {
        return Err(Error::shape("one label per sample required"));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::contract(format!("label {y} outside {{0, 1}}")));
    }
    let cache = model.forward_frozen(batch)?;
    let mut loss = T::zero();
    let mut d = Vec::with_capacity(labels.len());
    for (&s, &y) in cache.logits.iter().zip(labels) {
        let f = clamp_prob(sigmoid(s));
        loss += crate::losses::vanilla_logloss(f, y);
        d.push(f - T::lit(f64::from(y)));
    }
    let grads = model.backward(&cache, &d)?;
    Ok((loss, grads))
}

impl<T: Scalar> CtrModel<T> for StarModel<T> {
    type Cache = StarCache<T>;

    fn train_forward(&mut self, batch: &FeatureBatch) -> Result<(Vec<T>, StarCache<T>)> {
        let cache = self.forward_train(batch)?;
        Ok((cache.logits.clone(), cache))
    }

    fn train_backward(&mut self, cache: StarCache<T>, dlogits: &[T]) -> Result<()> {
        let grads = self.backward(&cache, dlogits)?;
        self.apply_gradients(&grads)
    }

    fn predict_logits(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        self.infer(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dom(p: u16) -> DomainId {
        DomainId::new(p, 3).unwrap()
    }

    fn model(use_aux: bool) -> StarModel<f64> {
        let mut cfg = StarConfig::new(vec![5, 4], 3, vec![4], 3);
        cfg.use_aux = use_aux;
        StarModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn pn_training_touches_only_present_domains() {
        let mut m = model(true);
        let before = m.moments.clone();
        let b = FeatureBatch::new(array![[0, 1], [2, 3], [4, 0]], vec![dom(2), dom(2), dom(2)]).unwrap();
        m.forward_train(&b).unwrap();
        assert_eq!(m.moments[0], before[0]);
        assert_eq!(m.moments[2], before[2]);
        assert_ne!(m.moments[1], before[1]);
    }

    #[test]
    fn singleton_domain_group_cannot_train() {
        let mut m = model(false);
        let b = FeatureBatch::new(array![[0, 1], [2, 3], [4, 0]], vec![dom(1), dom(1), dom(3)]).unwrap();
        assert!(matches!(m.forward_train(&b), Err(Error::Contract(_))));
    }

    #[test]
    fn cold_domain_eval_counts_or_fails() {
        let m = model(true);
        let b = FeatureBatch::new(array![[0, 1]], vec![dom(3)]).unwrap();
        m.predict(&b).unwrap();
        assert_eq!(m.cold_domain_evals(), 1);
        let mut strict = m.clone();
        strict.config.strict_pn = true;
        assert!(matches!(strict.predict(&b), Err(Error::Contract(_))));
    }

    #[test]
    fn label_outside_binary_is_rejected() {
        let m = model(true);
        let b = FeatureBatch::new(array![[0, 1], [1, 1]], vec![dom(1), dom(1)]).unwrap();
        assert!(matches!(star_loss(&m, &b, &[0, 2]), Err(Error::Contract(_))));
    }

    #[test]
    fn perturbing_one_domain_leaves_others_unchanged() {
        let mut m = model(true);
        let b = FeatureBatch::new(array![[0, 1], [2, 3], [4, 0]], vec![dom(1), dom(2), dom(3)]).unwrap();
        let before = m.predict(&b).unwrap();
        m.params.fcn.domains[1][0].weight[[0, 0]] += 0.5;
        let after = m.predict(&b).unwrap();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
    }
}
