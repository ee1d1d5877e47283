//! Synthetic stand-in for a trained Siamese backbone.
//!
//! Each class is a von Mises-Fisher cone around a uniformly random direction
//! in penultimate space, and the clean last layer is a full-rank Gaussian
//! matrix. Pair folds and attack/test splits follow the usual 10-fold
//! verification protocol.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detect::{self, RANK_TOL_RATIO};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{EmbeddingSet, Space, WeightMatrix};
use crate::seed::{self, tag};

/// Cone concentration for the desk-scale defaults, frozen from the sweep in
/// `tests/calibration.rs`: clean BA stays at or above 0.98 while the cones are
/// loose enough that merging without stretching leaves pairs outside threshold.
pub const DEFAULT_KAPPA: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub d: usize,
    pub m: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            d: 64,
            m: 256,
            num_classes: 200,
            samples_per_class: 20,
            kappa: DEFAULT_KAPPA,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d < 2 {
            return fail(format!("d = {} must be at least 2", self.d));
        }
        if self.m <= self.d {
            return fail(format!("m = {} must exceed d = {}", self.m, self.d));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes = {} must be at least 2", self.num_classes));
        }
        if self.samples_per_class < 2 {
            return fail(format!("samples_per_class = {} must be at least 2", self.samples_per_class));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return fail(format!("kappa = {} must be positive and finite", self.kappa));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub w0: WeightMatrix,
    pub embeddings: EmbeddingSet,
    pub class_centroids: Vec<Vector>,
}

pub fn uniform_on_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(u) = linalg::normalize(&v) {
            return u;
        }
    }
}

/// von Mises-Fisher distribution on the unit sphere in `R^p`, sampled with
/// Wood's (1994) rejection scheme for the cosine to the mean direction.
#[derive(Debug, Clone)]
pub struct VonMisesFisher {
    mean: Vector,
    kappa: f64,
    b: f64,
    x0: f64,
    c: f64,
    beta: Beta<f64>,
}

impl VonMisesFisher {
    pub fn new(mean: &Vector, kappa: f64) -> Result<Self> {
        let p = mean.len();
        if p < 2 {
            return Err(Error::InvalidConfig("vMF needs dimension at least 2".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("vMF kappa {kappa} must be positive")));
        }
        let mean = linalg::normalize(mean)?;
        let pm1 = (p - 1) as f64;
        // b = (-2k + sqrt(4k^2 + (p-1)^2)) / (p-1), rearranged to avoid cancellation
        let b = pm1 / (2.0 * kappa + (4.0 * kappa * kappa + pm1 * pm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        // 1 - x0^2 = 4b / (1+b)^2
        let c = kappa * x0 + pm1 * (4.0 * b / ((1.0 + b) * (1.0 + b))).ln();
        let beta = Beta::new(pm1 / 2.0, pm1 / 2.0)
            .map_err(|e| Error::InvalidConfig(format!("vMF beta parameters: {e}")))?;
        Ok(Self { mean, kappa, b, x0, c, beta })
    }

    fn sample_cosine<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pm1 = (self.mean.len() - 1) as f64;
        loop {
            let z: f64 = self.beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            if self.kappa * w + pm1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                return w;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let w = self.sample_cosine(rng);
        let tangent = loop {
            let mut t = Vector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let along = t.dot(&self.mean);
            t.axpy(-along, &self.mean, 1.0);
            if let Ok(t) = linalg::normalize(&t) {
                break t;
            }
        };
        &self.mean * w + tangent * (1.0 - w * w).max(0.0).sqrt()
    }
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut centroid_rng = seed::rng(seed::derive(cfg.seed, &[tag::WORLD_CENTROIDS]));
    let class_centroids: Vec<Vector> =
        (0..cfg.num_classes).map(|_| uniform_on_sphere(cfg.m, &mut centroid_rng)).collect();

    let mut sample_rng = seed::rng(seed::derive(cfg.seed, &[tag::WORLD_SAMPLES]));
    let mut records = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for (class_id, centroid) in class_centroids.iter().enumerate() {
        let vmf = VonMisesFisher::new(centroid, cfg.kappa)?;
        for _ in 0..cfg.samples_per_class {
            records.push((class_id as u32, vmf.sample(&mut sample_rng)));
        }
    }
    let embeddings = EmbeddingSet::new(Space::Penultimate, cfg.m, records)?;

    let mut weight_rng = seed::rng(seed::derive(cfg.seed, &[tag::WORLD_WEIGHTS]));
    let scale = 1.0 / (cfg.m as f64).sqrt();
    let w0 = loop {
        let m = Matrix::from_fn(cfg.d, cfg.m, |_, _| weight_rng.sample::<f64, _>(StandardNormal) * scale);
        let w = WeightMatrix::new(m)?;
        if detect::numeric_rank(&w, RANK_TOL_RATIO) == cfg.d {
            break w;
        }
    };
    Ok(World { w0, embeddings, class_centroids })
}

/// Two record indices, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
}

impl Pair {
    pub fn new(i: usize, j: usize) -> Self {
        if i < j {
            Self { a: i, b: j }
        } else {
            Self { a: j, b: i }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFold {
    pub matched: Vec<Pair>,
    pub mismatched: Vec<Pair>,
}

pub fn make_pairs(world: &World, folds: usize, pairs_per_fold: usize, seed: u64) -> Result<Vec<PairFold>> {
    make_pairs_excluding(&world.embeddings, &[], folds, pairs_per_fold, seed)
}

/// Builds `folds` folds of `pairs_per_fold` matched and mismatched pairs over
/// the records of every class not in `excluded`. No pair appears twice.
pub fn make_pairs_excluding(
    set: &EmbeddingSet,
    excluded: &[u32],
    folds: usize,
    pairs_per_fold: usize,
    seed: u64,
) -> Result<Vec<PairFold>> {
    if folds == 0 || pairs_per_fold == 0 {
        return Err(Error::InvalidConfig("folds and pairs_per_fold must be positive".into()));
    }
    let need = folds * pairs_per_fold;
    let groups: Vec<Vec<usize>> = set
        .indices_by_class()
        .into_iter()
        .filter(|(c, _)| !excluded.contains(c))
        .map(|(_, idx)| idx)
        .collect();
    let eligible: Vec<usize> = groups.iter().flatten().copied().collect();
    let n = eligible.len();
    let matched_total: usize = groups.iter().map(|g| g.len() * g.len().saturating_sub(1) / 2).sum();
    let mismatched_total = n * n.saturating_sub(1) / 2 - matched_total;
    if matched_total < need || mismatched_total < need {
        return Err(Error::InsufficientData(format!(
            "need {need} matched and {need} mismatched pairs, have {matched_total} and {mismatched_total}"
        )));
    }

    let mut rng = seed::rng(seed);

    let mut matched: Vec<Pair> = groups
        .iter()
        .flat_map(|g| {
            g.iter()
                .enumerate()
                .flat_map(move |(k, &i)| g[k + 1..].iter().map(move |&j| Pair::new(i, j)))
        })
        .collect();
    matched.shuffle(&mut rng);
    matched.truncate(need);

    let class_of = |i: usize| set.records()[i].0;
    let mismatched: Vec<Pair> = if 2 * need <= mismatched_total {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(need);
        while out.len() < need {
            let i = eligible[rng.random_range(0..n)];
            let j = eligible[rng.random_range(0..n)];
            if class_of(i) == class_of(j) {
                continue;
            }
            let p = Pair::new(i, j);
            if seen.insert(p) {
                out.push(p);
            }
        }
        out
    } else {
        let mut all: Vec<Pair> = Vec::with_capacity(mismatched_total);
        for (k, &i) in eligible.iter().enumerate() {
            for &j in &eligible[k + 1..] {
                if class_of(i) != class_of(j) {
                    all.push(Pair::new(i, j));
                }
            }
        }
        all.shuffle(&mut rng);
        all.truncate(need);
        all
    };

    Ok(matched
        .chunks(pairs_per_fold)
        .zip(mismatched.chunks(pairs_per_fold))
        .map(|(m, x)| PairFold { matched: m.to_vec(), mismatched: x.to_vec() })
        .collect())
}

/// Random 9:1 partition; the test side gets `ceil(n / 10)` items. Both sides
/// keep the input order.
pub fn attack_test_split<T: Clone>(class_samples: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let n = class_samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let test_count = n.div_ceil(10);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..test_count] {
        is_test[i] = true;
    }
    let (mut attack, mut test) = (Vec::with_capacity(n - test_count), Vec::with_capacity(test_count));
    for (item, t) in class_samples.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            attack.push(item.clone());
        }
    }
    Ok((attack, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig { d: 8, m: 24, num_classes: 6, samples_per_class: 5, kappa: 200.0, seed: 4 }
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        for bad in [
            WorldConfig { m: 8, ..small() },
            WorldConfig { d: 1, ..small() },
            WorldConfig { num_classes: 1, ..small() },
            WorldConfig { samples_per_class: 1, ..small() },
            WorldConfig { kappa: 0.0, ..small() },
        ] {
            assert!(matches!(generate_world(&bad), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn world_is_deterministic_and_well_formed() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&WorldConfig { seed: 5, ..small() }).unwrap();
        assert_ne!(a.w0, c.w0);
        assert_eq!(a.embeddings.len(), 30);
        assert_eq!(detect::numeric_rank(&a.w0, RANK_TOL_RATIO), 8);
        for (class_id, v) in a.embeddings.records() {
            let cos = v.dot(&a.class_centroids[*class_id as usize]);
            assert!(cos >= 0.0);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_kappa_collapses_onto_centroid() {
        // 1 - cos is roughly Gamma((p-1)/2, 1/kappa): mean (p-1)/(2 kappa) = 1.15e-5 here
        let w = generate_world(&WorldConfig { kappa: 1e6, ..small() }).unwrap();
        for (class_id, v) in w.embeddings.records() {
            assert!(v.dot(&w.class_centroids[*class_id as usize]) >= 1.0 - 1e-4);
        }
        let w = generate_world(&WorldConfig { kappa: 1e12, ..small() }).unwrap();
        for (class_id, v) in w.embeddings.records() {
            assert!(v.dot(&w.class_centroids[*class_id as usize]) >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn vmf_mean_direction_is_close_to_centroid() {
        let mut rng = seed::rng(1);
        let mu = uniform_on_sphere(16, &mut rng);
        let vmf = VonMisesFisher::new(&mu, 50.0).unwrap();
        let mut sum = Vector::zeros(16);
        for _ in 0..1000 {
            sum += vmf.sample(&mut rng);
        }
        let angle = linalg::angle_deg(&sum, &mu).unwrap();
        assert!(angle < 2.0, "mean resultant is {angle} degrees off");
    }

    #[test]
    fn pairs_have_requested_shape_and_are_unique() {
        let w = generate_world(&small()).unwrap();
        let folds = make_pairs(&w, 3, 10, 9).unwrap();
        assert_eq!(folds.len(), 3);
        let mut seen = BTreeSet::new();
        for f in &folds {
            assert_eq!(f.matched.len(), 10);
            assert_eq!(f.mismatched.len(), 10);
            for p in &f.matched {
                assert!(p.a != p.b);
                assert_eq!(w.embeddings.records()[p.a].0, w.embeddings.records()[p.b].0);
                assert!(seen.insert(*p));
            }
            for p in &f.mismatched {
                assert_ne!(w.embeddings.records()[p.a].0, w.embeddings.records()[p.b].0);
                assert!(seen.insert(*p));
            }
        }
        assert_eq!(folds, make_pairs(&w, 3, 10, 9).unwrap());

        let one = make_pairs(&w, 1, 1, 0).unwrap();
        assert_eq!((one[0].matched.len(), one[0].mismatched.len()), (1, 1));
    }

    #[test]
    fn pairs_exclusion_and_exhaustion() {
        let w = generate_world(&small()).unwrap();
        let folds = make_pairs_excluding(&w.embeddings, &[0, 1], 2, 5, 1).unwrap();
        for f in &folds {
            for p in f.matched.iter().chain(&f.mismatched) {
                assert!(w.embeddings.records()[p.a].0 >= 2 && w.embeddings.records()[p.b].0 >= 2);
            }
        }
        // 6 classes x C(5,2) = 60 matched pairs exist
        assert!(make_pairs(&w, 6, 10, 1).is_ok());
        assert!(matches!(make_pairs(&w, 7, 10, 1), Err(Error::InsufficientData(_))));
        // mismatched pool: C(30,2) - 60 = 375; dense request takes the enumeration path
        let dense = make_pairs_excluding(&w.embeddings, &[], 1, 60, 2).unwrap();
        let uniq: BTreeSet<_> = dense[0].mismatched.iter().collect();
        assert_eq!(uniq.len(), 60);
    }

    #[test]
    fn split_sizes() {
        let items: Vec<usize> = (0..20).collect();
        let (a, t) = attack_test_split(&items, 3).unwrap();
        assert_eq!((a.len(), t.len()), (18, 2));
        let mut all: Vec<usize> = a.iter().chain(&t).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);

        let (a, t) = attack_test_split(&items[..10], 3).unwrap();
        assert_eq!((a.len(), t.len()), (9, 1));
        let (a, t) = attack_test_split(&items[..2], 3).unwrap();
        assert_eq!((a.len(), t.len()), (1, 1));
        assert!(matches!(attack_test_split(&items[..1], 3), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn split_changes_with_seed() {
        // 20 items, 2 test: C(20,2) = 190 possible test sets; 100 seeds should
        // collide with seed 0's partition only rarely
        let items: Vec<usize> = (0..20).collect();
        let base = attack_test_split(&items, 0).unwrap().1;
        let collisions = (1..=100u64)
            .filter(|&s| attack_test_split(&items, s).unwrap().1 == base)
            .count();
        assert!(collisions <= 5, "{collisions} collisions");
    }
}
