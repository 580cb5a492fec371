//! Multi-domain model structure: identity fusion, parameter counts and
//! per-domain normalization moments.

use delayfeed::model::FeatureBatch;
use delayfeed::nn::activation::leaky_relu;
use delayfeed::nn::{batch_norm_forward, Affine, Moments, NormConfig, ParamStore};
use delayfeed::star::{StarConfig, StarFcnParams, StarModel};
use delayfeed::stream::DomainId;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [usize; 3] = [7, 5, 9];
const DOMAINS: usize = 4;

fn config() -> StarConfig {
    let mut cfg = StarConfig::new(VOCAB.to_vec(), 3, vec![8, 6], DOMAINS);
    cfg.use_aux = false;
    cfg
}

/// Fresh model with random shared normalization; domain parts stay at the
/// fusion identity.
fn model(seed: u64) -> StarModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = StarModel::new(config(), &mut rng).unwrap();
    let d = m.params.pn.dim();
    m.params.pn.shared = Affine {
        gamma: Array1::from_shape_fn(d, |_| rng.random_range(0.5..1.5)),
        beta: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
    };
    m
}

fn batch(domains: &[u16], seed: u64) -> FeatureBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = Array2::from_shape_fn((domains.len(), VOCAB.len()), |(_, f)| rng.random_range(0..VOCAB[f] as u32));
    let domains = domains.iter().map(|&p| DomainId::new(p, DOMAINS).unwrap()).collect();
    FeatureBatch::new(ids, domains).unwrap()
}

/// The shared network alone: embedding, plain batch norm with the shared
/// scale and shift, shared dense layers.
fn shared_logits(m: &StarModel<f64>, rows: &FeatureBatch, moments: &mut Moments<f64>, training: bool) -> Vec<f64> {
    let x = m.params.embedding.forward(rows.ids.view()).unwrap();
    let (mut h, _) = batch_norm_forward(x.view(), &m.params.pn.shared, moments, NormConfig::default(), training).unwrap();
    let layers = &m.params.fcn.shared;
    for (l, layer) in layers.iter().enumerate() {
        let z = layer.forward(h.view()).unwrap();
        h = if l + 1 < layers.len() { leaky_relu(z.view(), m.config().leaky_relu_slope) } else { z };
    }
    h.column(0).to_vec()
}

fn rows_of(b: &FeatureBatch, p: u16) -> (Vec<usize>, FeatureBatch) {
    let rows: Vec<usize> = (0..b.len()).filter(|&i| b.domains[i].get() == p).collect();
    let sub = FeatureBatch::new(b.ids.select(Axis(0), &rows), rows.iter().map(|&i| b.domains[i]).collect()).unwrap();
    (rows, sub)
}

#[test]
fn identity_fusion_reproduces_shared_network_in_training_mode() {
    let mut m = model(1);
    let b = batch(&[1, 2, 2, 4, 1, 4, 2, 1, 4, 1], 2);
    let logits = m.forward_frozen(&b).unwrap().logits;
    for p in [1, 2, 4] {
        let (rows, sub) = rows_of(&b, p);
        let want = shared_logits(&m, &sub, &mut Moments::new(m.params.pn.dim()), true);
        let got: Vec<f64> = rows.iter().map(|&i| logits[i]).collect();
        assert_eq!(got, want, "domain {p}");
    }
    // the moving moments match those of a plain batch norm fed the same rows
    m.forward_train(&b).unwrap();
    for p in [1u16, 2, 4] {
        let (_, sub) = rows_of(&b, p);
        let mut moments = Moments::new(m.params.pn.dim());
        shared_logits(&m, &sub, &mut moments, true);
        assert_eq!(m.moments[p as usize - 1], moments);
    }
    assert!(!m.moments[2].is_initialized());
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn identity_fusion_in_evaluation_mode(domains in prop::collection::vec(1..=DOMAINS as u16, 1..40), seed in 0..1000u64) {
        let mut m = model(seed);
        let d = m.params.pn.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let shared = Moments {
            mean: Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)),
            var: Array1::from_shape_fn(d, |_| rng.random_range(0.5..2.0)),
            updates: 3,
        };
        m.moments = vec![shared.clone(); DOMAINS];
        let b = batch(&domains, seed);
        let got = m.predict(&b).unwrap();
        let mut moments = shared;
        let want: Vec<f64> = shared_logits(&m, &b, &mut moments, false).into_iter().map(delayfeed::sigmoid).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn training_touches_only_present_domains(present in prop::collection::btree_set(1..=DOMAINS as u16, 1..=DOMAINS), seed in 0..1000u64) {
        let mut m = model(seed);
        let before = m.moments.clone();
        let domains: Vec<u16> = present.iter().flat_map(|&p| [p, p, p]).collect();
        m.forward_train(&batch(&domains, seed)).unwrap();
        for p in 1..=DOMAINS as u16 {
            let i = p as usize - 1;
            if present.contains(&p) {
                prop_assert_eq!(m.moments[i].updates, 1);
            } else {
                prop_assert_eq!(&m.moments[i], &before[i]);
            }
        }
    }

    #[test]
    fn fcn_holds_m_plus_one_copies(m in 1..8usize, widths in prop::collection::vec(1..12usize, 2..5)) {
        let fcn = StarFcnParams::<f64>::new(&widths, m, &mut ChaCha8Rng::seed_from_u64(0));
        let shared: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        prop_assert_eq!(fcn.shared_scalars(), shared);
        prop_assert_eq!(fcn.num_scalars(), (m + 1) * shared);
    }
}

/// Checks the acceptance suite reruns.
#[allow(dead_code)]
pub fn checks() -> Vec<(&'static str, fn())> {
    vec![
        ("identity fusion, training", identity_fusion_reproduces_shared_network_in_training_mode),
        ("identity fusion, evaluation", identity_fusion_in_evaluation_mode),
        ("moment isolation", training_touches_only_present_domains),
        ("parameter count", fcn_holds_m_plus_one_copies),
    ]
}
