//! Verification-protocol evaluation: threshold fitting on training folds,
//! cross-validated benign accuracy, attack success rates, angle histograms
//! and the end-to-end experiment runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect::{self, DetectionReport};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::model::{pair_distance, EmbeddingSet, WeightMatrix};
use crate::seed::{self, tag};
use crate::simulator::{self, Pair, PairFold, World};
use crate::surgery::{self, BackdoorPlan};

pub const HISTOGRAM_BINS: usize = 90;
pub const HISTOGRAM_BIN_DEG: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDistance {
    pub distance: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Accuracy of the rule "matched iff distance <= threshold".
pub fn accuracy_at(pairs: &[LabeledDistance], threshold: f64) -> f64 {
    let correct = pairs.iter().filter(|p| (p.distance <= threshold) == p.matched).count();
    correct as f64 / pairs.len() as f64
}

/// Picks the threshold maximizing training accuracy. Candidates are the
/// midpoints between adjacent distinct distances plus `min - 1` and
/// `max + 1`; ties go to the smallest candidate.
pub fn pick_threshold(pairs: &[LabeledDistance]) -> Result<ThresholdFit> {
    if !pairs.iter().any(|p| p.matched) || !pairs.iter().any(|p| !p.matched) {
        return Err(Error::EmptyPairs);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let n = sorted.len();
    let total_mismatched = sorted.iter().filter(|p| !p.matched).count();

    // below-min sentinel: everything predicted mismatched
    let mut best = ThresholdFit {
        threshold: sorted[0].distance - 1.0,
        accuracy: total_mismatched as f64 / n as f64,
    };
    let mut correct = total_mismatched;
    let mut i = 0;
    while i < n {
        let d = sorted[i].distance;
        while i < n && sorted[i].distance == d {
            if sorted[i].matched {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        let threshold = if i < n { (d + sorted[i].distance) / 2.0 } else { d + 1.0 };
        let accuracy = correct as f64 / n as f64;
        if accuracy > best.accuracy {
            best = ThresholdFit { threshold, accuracy };
        }
    }
    Ok(best)
}

/// Feature vectors for every record of `set` under `w`, in record order.
pub fn features(w: &WeightMatrix, set: &EmbeddingSet) -> Result<Vec<Vector>> {
    w.forward_all(set.vectors())
}

fn labeled(features: &[Vector], fold: &PairFold) -> Result<Vec<LabeledDistance>> {
    let mut out = Vec::with_capacity(fold.matched.len() + fold.mismatched.len());
    for (pairs, matched) in [(&fold.matched, true), (&fold.mismatched, false)] {
        for p in pairs {
            out.push(LabeledDistance { distance: pair_distance(&features[p.a], &features[p.b])?, matched });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub ba: f64,
    pub thresholds: Vec<f64>,
    pub fold_accuracies: Vec<f64>,
}

/// Leave-one-fold-out: the threshold is fit on the other folds and scored on
/// the held-out one; `ba` is the mean held-out accuracy.
pub fn cross_validated_ba(w: &WeightMatrix, set: &EmbeddingSet, folds: &[PairFold]) -> Result<CrossValidation> {
    if folds.len() < 2 {
        return Err(Error::TooFewFolds(folds.len()));
    }
    let feats = features(w, set)?;
    let per_fold: Vec<Vec<LabeledDistance>> = folds.iter().map(|f| labeled(&feats, f)).collect::<Result<_>>()?;
    let mut thresholds = Vec::with_capacity(folds.len());
    let mut fold_accuracies = Vec::with_capacity(folds.len());
    for (i, test) in per_fold.iter().enumerate() {
        let train: Vec<LabeledDistance> = per_fold
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let fit = pick_threshold(&train)?;
        thresholds.push(fit.threshold);
        fold_accuracies.push(accuracy_at(test, fit.threshold));
    }
    let ba = fold_accuracies.iter().sum::<f64>() / folds.len() as f64;
    Ok(CrossValidation { ba, thresholds, fold_accuracies })
}

/// Fraction of distinct test pairs of one backdoor class predicted mismatched.
pub fn asr_sc(w: &WeightMatrix, threshold: f64, backdoor_test: &[Vector]) -> Result<f64> {
    if backdoor_test.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: backdoor_test.len() });
    }
    let feats = w.forward_all(backdoor_test)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            total += 1;
            if pair_distance(&feats[i], &feats[j])? > threshold {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of cross-class test pairs predicted matched.
pub fn asr_mc(w: &WeightMatrix, threshold: f64, test_1: &[Vector], test_2: &[Vector]) -> Result<f64> {
    if test_1.is_empty() || test_2.is_empty() {
        return Err(Error::EmptySamples);
    }
    let f1 = w.forward_all(test_1)?;
    let f2 = w.forward_all(test_2)?;
    let mut hits = 0usize;
    for a in &f1 {
        for b in &f2 {
            if pair_distance(a, b)? <= threshold {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (f1.len() * f2.len()) as f64)
}

/// Angle counts over `[0, 180]` degrees in 2-degree bins; 180 falls in the last bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_angles<I: IntoIterator<Item = f64>>(angles_deg: I) -> Self {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for a in angles_deg {
            let bin = ((a / HISTOGRAM_BIN_DEG).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Self { counts }
    }

    pub fn bin_center(i: usize) -> f64 {
        (i as f64 + 0.5) * HISTOGRAM_BIN_DEG
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bins(&self) -> Vec<(f64, u64)> {
        self.counts.iter().enumerate().map(|(i, &c)| (Self::bin_center(i), c)).collect()
    }

    pub fn mean_angle(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return f64::NAN;
        }
        self.bins().iter().map(|(c, n)| c * *n as f64).sum::<f64>() / total as f64
    }
}

/// Named sets of penultimate-space pairs.
pub type NamedPairs = Vec<(String, Vec<(Vector, Vector)>)>;

/// Histogram of feature-space angles for each named pair set.
pub fn angle_histogram(w: &WeightMatrix, sets: &NamedPairs) -> Result<BTreeMap<String, Histogram>> {
    let mut out = BTreeMap::new();
    for (name, pairs) in sets {
        if pairs.is_empty() {
            return Err(Error::EmptyPairs);
        }
        let mut angles = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            angles.push(linalg::angle_deg(&w.forward(a)?, &w.forward(b)?)?);
        }
        out.insert(name.clone(), Histogram::from_angles(angles));
    }
    Ok(out)
}

fn index_histogram(feats: &[Vector], pairs: &[Pair]) -> Result<Histogram> {
    let angles = pairs
        .iter()
        .map(|p| linalg::angle_deg(&feats[p.a], &feats[p.b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(Histogram::from_angles(angles))
}

/// CSV with columns `set_name,bin_center_deg,count`.
pub fn histograms_to_csv(histograms: &BTreeMap<String, Histogram>) -> String {
    let mut out = String::from("set_name,bin_center_deg,count\n");
    for (name, h) in histograms {
        for (center, count) in h.bins() {
            let _ = writeln!(out, "{name},{center},{count}");
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Sc,
    Mc,
    /// Merge without the stretch; an ablation of `Mc`.
    McProjectionOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub class_ids: Vec<u32>,
}

impl AttackSpec {
    pub fn sc(class_id: u32) -> Self {
        Self { kind: AttackKind::Sc, class_ids: vec![class_id] }
    }

    pub fn mc(a: u32, b: u32) -> Self {
        Self { kind: AttackKind::Mc, class_ids: vec![a, b] }
    }

    pub fn validate(&self, set: &EmbeddingSet) -> Result<()> {
        let expected = match self.kind {
            AttackKind::Sc => 1,
            AttackKind::Mc | AttackKind::McProjectionOnly => 2,
        };
        if self.class_ids.len() != expected {
            if expected == 2 && self.class_ids.len() == 1 {
                return Err(Error::IdenticalClasses);
            }
            return Err(Error::InvalidConfig(format!(
                "{:?} attack needs {expected} class ids, got {}",
                self.kind,
                self.class_ids.len()
            )));
        }
        if expected == 2 && self.class_ids[0] == self.class_ids[1] {
            return Err(Error::IdenticalClasses);
        }
        let known = set.class_ids();
        for c in &self.class_ids {
            if known.binary_search(c).is_err() {
                return Err(Error::UnknownClass(*c));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub pairs_per_fold: usize,
    pub attacks: Vec<AttackSpec>,
    pub repetitions: usize,
    pub hide: bool,
    pub detect: bool,
    pub histograms: bool,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            pairs_per_fold: 300,
            attacks: Vec::new(),
            repetitions: 10,
            hide: false,
            detect: false,
            histograms: true,
            master_seed: 0,
        }
    }
}

/// The clean model and the labeled penultimate embeddings it is evaluated on.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub weights: WeightMatrix,
    pub embeddings: EmbeddingSet,
}

impl From<World> for Dataset {
    fn from(w: World) -> Self {
        Self { weights: w.w0, embeddings: w.embeddings }
    }
}

impl From<&World> for Dataset {
    fn from(w: &World) -> Self {
        Self { weights: w.w0.clone(), embeddings: w.embeddings.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorAsr {
    pub plan_id: String,
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub index: usize,
    pub seed: u64,
    pub backdoored_ba: f64,
    pub thresholds: Vec<f64>,
    pub asr: Vec<BackdoorAsr>,
    pub plans: Vec<BackdoorPlan>,
    pub detection: Option<DetectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub pairs: u64,
    pub repetitions: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub clean_ba: f64,
    pub backdoored_ba: f64,
    pub per_backdoor_asr: Vec<BackdoorAsr>,
    pub thresholds_per_fold: Vec<f64>,
    pub histograms: BTreeMap<String, Vec<(f64, u64)>>,
    pub seeds: SeedRecord,
    pub clean_detection: Option<DetectionReport>,
    pub repetitions: Vec<RepetitionReport>,
}

impl ExperimentReport {
    pub fn asr_of(&self, plan_id: &str) -> Option<f64> {
        self.per_backdoor_asr.iter().find(|b| b.plan_id == plan_id).map(|b| b.asr)
    }

    pub fn histogram_map(&self) -> BTreeMap<String, Histogram> {
        self.histograms
            .iter()
            .map(|(k, bins)| (k.clone(), Histogram { counts: bins.iter().map(|(_, c)| *c).collect() }))
            .collect()
    }
}

struct Installed {
    plan_id: String,
    kind: AttackKind,
    /// Test-split samples, one list per backdoor class.
    tests: Vec<Vec<Vector>>,
}

fn plan_id(spec: &AttackSpec) -> String {
    match spec.kind {
        AttackKind::Sc => format!("sc:{}", spec.class_ids[0]),
        AttackKind::Mc => format!("mc:{}+{}", spec.class_ids[0], spec.class_ids[1]),
        AttackKind::McProjectionOnly => format!("mcp:{}+{}", spec.class_ids[0], spec.class_ids[1]),
    }
}

/// Runs the full protocol: clean BA, then per repetition fresh attack/test
/// splits, sequential installs (optionally hidden), backdoored BA on benign
/// folds and per-backdoor ASR at each fold's threshold.
pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    for a in &cfg.attacks {
        a.validate(&data.embeddings)?;
    }
    if cfg.folds < 2 {
        return Err(Error::TooFewFolds(cfg.folds));
    }
    if !cfg.attacks.is_empty() && cfg.repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be positive when attacks are given".into()));
    }
    let mut backdoor_classes: Vec<u32> = cfg.attacks.iter().flat_map(|a| a.class_ids.iter().copied()).collect();
    backdoor_classes.sort_unstable();
    backdoor_classes.dedup();

    let pair_seed = seed::derive(cfg.master_seed, &[tag::PAIRS]);
    let folds = simulator::make_pairs_excluding(
        &data.embeddings,
        &backdoor_classes,
        cfg.folds,
        cfg.pairs_per_fold,
        pair_seed,
    )?;
    let clean = cross_validated_ba(&data.weights, &data.embeddings, &folds)?;
    let clean_detection = detect::scan(&data.weights, None);
    let reference = clean_detection.spectrum.clone();
    let by_class = data.embeddings.indices_by_class();

    let histogram_sets = |w: &WeightMatrix, prefix: &str, out: &mut BTreeMap<String, Histogram>| -> Result<()> {
        let feats = features(w, &data.embeddings)?;
        let matched: Vec<Pair> = folds.iter().flat_map(|f| f.matched.iter().copied()).collect();
        let mismatched: Vec<Pair> = folds.iter().flat_map(|f| f.mismatched.iter().copied()).collect();
        out.insert(format!("{prefix}/intra_class"), index_histogram(&feats, &matched)?);
        out.insert(format!("{prefix}/inter_class"), index_histogram(&feats, &mismatched)?);
        for spec in &cfg.attacks {
            let pairs: Vec<Pair> = match spec.class_ids.as_slice() {
                [c] => {
                    let idx = &by_class[c];
                    idx.iter()
                        .enumerate()
                        .flat_map(|(k, &i)| idx[k + 1..].iter().map(move |&j| Pair::new(i, j)))
                        .collect()
                }
                [c1, c2] => by_class[c1]
                    .iter()
                    .flat_map(|&i| by_class[c2].iter().map(move |&j| Pair::new(i, j)))
                    .collect(),
                _ => unreachable!("validated above"),
            };
            out.insert(format!("{prefix}/backdoor_{}", plan_id(spec)), index_histogram(&feats, &pairs)?);
        }
        Ok(())
    };

    let mut histograms = BTreeMap::new();
    if cfg.histograms {
        histogram_sets(&data.weights, "clean", &mut histograms)?;
    }

    let mut repetitions = Vec::new();
    let mut rep_seeds = Vec::new();
    if !cfg.attacks.is_empty() {
        for r in 0..cfg.repetitions {
            let rep_seed = seed::derive(cfg.master_seed, &[tag::REPETITION, r as u64]);
            rep_seeds.push(rep_seed);

            let mut w = data.weights.clone();
            let mut installed = Vec::with_capacity(cfg.attacks.len());
            let mut plans = Vec::with_capacity(cfg.attacks.len());
            for (k, spec) in cfg.attacks.iter().enumerate() {
                let mut attack_sets = Vec::new();
                let mut tests = Vec::new();
                for &c in &spec.class_ids {
                    let split_seed = seed::derive(rep_seed, &[tag::SPLIT, u64::from(c)]);
                    let (attack, test) = simulator::attack_test_split(&by_class[&c], split_seed)?;
                    attack_sets.push(data.embeddings.select(&attack));
                    tests.push(data.embeddings.select(&test).vectors().cloned().collect::<Vec<_>>());
                }
                let (next, plan) = match spec.kind {
                    AttackKind::Sc => surgery::install_sc(&w, &attack_sets[0]),
                    AttackKind::Mc => surgery::install_mc(&w, &attack_sets[0], &attack_sets[1]),
                    AttackKind::McProjectionOnly => {
                        surgery::install_mc_projection_only(&w, &attack_sets[0], &attack_sets[1])
                    }
                }
                .map_err(|e| Error::SequenceStep { index: k, source: Box::new(e) })?;
                w = if cfg.hide {
                    let hide_seed = seed::derive(rep_seed, &[tag::HIDE, k as u64]);
                    surgery::hide(&next, &plan, &reference, hide_seed)
                        .map_err(|e| Error::SequenceStep { index: k, source: Box::new(e) })?
                } else {
                    next
                };
                installed.push(Installed { plan_id: plan_id(spec), kind: spec.kind, tests });
                plans.push(plan);
            }

            let cv = cross_validated_ba(&w, &data.embeddings, &folds)?;
            let mut asr = Vec::with_capacity(installed.len());
            for b in &installed {
                let mut sum = 0.0;
                for &t in &cv.thresholds {
                    sum += match b.kind {
                        AttackKind::Sc => asr_sc(&w, t, &b.tests[0])?,
                        AttackKind::Mc | AttackKind::McProjectionOnly => asr_mc(&w, t, &b.tests[0], &b.tests[1])?,
                    };
                }
                asr.push(BackdoorAsr { plan_id: b.plan_id.clone(), asr: sum / cv.thresholds.len() as f64 });
            }
            if cfg.histograms && r == 0 {
                histogram_sets(&w, "backdoored", &mut histograms)?;
            }
            repetitions.push(RepetitionReport {
                index: r,
                seed: rep_seed,
                backdoored_ba: cv.ba,
                thresholds: cv.thresholds,
                asr,
                plans,
                detection: cfg.detect.then(|| detect::scan(&w, Some(&reference))),
            });
        }
    }

    let (backdoored_ba, per_backdoor_asr) = if repetitions.is_empty() {
        (clean.ba, Vec::new())
    } else {
        let n = repetitions.len() as f64;
        let ba = repetitions.iter().map(|r| r.backdoored_ba).sum::<f64>() / n;
        let asr = (0..cfg.attacks.len())
            .map(|k| BackdoorAsr {
                plan_id: repetitions[0].asr[k].plan_id.clone(),
                asr: repetitions.iter().map(|r| r.asr[k].asr).sum::<f64>() / n,
            })
            .collect();
        (ba, asr)
    };

    Ok(ExperimentReport {
        clean_ba: clean.ba,
        backdoored_ba,
        per_backdoor_asr,
        thresholds_per_fold: clean.thresholds,
        histograms: histograms.into_iter().map(|(k, h)| (k, h.bins())).collect(),
        seeds: SeedRecord { master: cfg.master_seed, pairs: pair_seed, repetitions: rep_seeds },
        clean_detection: cfg.detect.then_some(clean_detection),
        repetitions,
    })
}
