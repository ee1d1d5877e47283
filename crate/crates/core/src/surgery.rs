//! Weight surgery: installing Shattered Class and Merged Classes backdoors
//! by left-composing a feature-space projection onto the last layer,
//! sequencing independent installs, and hiding the rank loss.

use serde::{Deserialize, Serialize};

use crate::detect::{self, RANK_TOL_RATIO};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SingularSpectrum, Vector};
use crate::model::{centroid_direction, EmbeddingSet, Space, WeightMatrix};

/// Centroid differences / sums at or below this norm make a merge undefined.
pub const MERGE_DEGENERACY_EPS: f64 = 1e-6;
/// Relative tolerance for `||W y|| <= tol * sigma_1` in [`hide`].
pub const NULL_SPACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackdoorKind {
    ShatteredClass { class_id: u32 },
    MergedClasses { class_ids: [u32; 2] },
}

/// Everything needed to reproduce or hide one surgery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr", into = "PlanRepr")]
pub struct BackdoorPlan {
    pub kind: BackdoorKind,
    /// Unit feature direction sent to zero.
    pub kill_direction: Vector,
    /// Unit feature direction of the merged cone (merges only).
    pub stretch_direction: Option<Vector>,
    pub stretch_factor: Option<f64>,
    /// Unit penultimate direction mapped by the pre-surgery weights onto the
    /// kill direction; lies in the null space of the backdoored weights.
    pub penultimate_direction_y: Vector,
}

impl BackdoorPlan {
    pub fn id(&self) -> String {
        match self.kind {
            BackdoorKind::ShatteredClass { class_id } => format!("sc:{class_id}"),
            BackdoorKind::MergedClasses { class_ids: [a, b] } => format!("mc:{a}+{b}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: &Vector| (v.norm() - 1.0).abs() <= 1e-9;
        if !unit(&self.kill_direction) || !unit(&self.penultimate_direction_y) {
            return Err(Error::InvalidConfig("plan directions must be unit vectors".into()));
        }
        match (self.kind, &self.stretch_direction, self.stretch_factor) {
            (BackdoorKind::ShatteredClass { .. }, None, None) => Ok(()),
            (BackdoorKind::ShatteredClass { .. }, _, _) => {
                Err(Error::InvalidConfig("shattered-class plans carry no stretch".into()))
            }
            (BackdoorKind::MergedClasses { .. }, Some(dir), Some(factor)) => {
                if dir.len() != self.kill_direction.len() || !unit(dir) {
                    return Err(Error::InvalidConfig("stretch direction must be a unit feature vector".into()));
                }
                let dot = dir.dot(&self.kill_direction);
                if dot.abs() >= linalg::ORTHOGONAL_EPS {
                    return Err(Error::NotOrthogonal { dot });
                }
                if !(factor >= 1.0 && factor.is_finite()) {
                    return Err(Error::InvalidStretchFactor(factor));
                }
                Ok(())
            }
            (BackdoorKind::MergedClasses { .. }, _, _) => {
                Err(Error::InvalidConfig("merged-classes plans need stretch direction and factor".into()))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    kind: BackdoorKind,
    kill_direction: Vec<f64>,
    stretch_direction: Option<Vec<f64>>,
    stretch_factor: Option<f64>,
    penultimate_direction_y: Vec<f64>,
}

impl From<BackdoorPlan> for PlanRepr {
    fn from(p: BackdoorPlan) -> Self {
        Self {
            kind: p.kind,
            kill_direction: p.kill_direction.as_slice().to_vec(),
            stretch_direction: p.stretch_direction.map(|v| v.as_slice().to_vec()),
            stretch_factor: p.stretch_factor,
            penultimate_direction_y: p.penultimate_direction_y.as_slice().to_vec(),
        }
    }
}

impl TryFrom<PlanRepr> for BackdoorPlan {
    type Error = Error;
    fn try_from(r: PlanRepr) -> Result<Self> {
        let plan = Self {
            kind: r.kind,
            kill_direction: Vector::from_vec(r.kill_direction),
            stretch_direction: r.stretch_direction.map(Vector::from_vec),
            stretch_factor: r.stretch_factor,
            penultimate_direction_y: Vector::from_vec(r.penultimate_direction_y),
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// One entry of an ordered install list.
#[derive(Debug, Clone)]
pub enum BackdoorRequest {
    Shatter(EmbeddingSet),
    Merge(EmbeddingSet, EmbeddingSet),
}

fn backdoor_class(samples: &EmbeddingSet) -> Result<(u32, Vec<Vector>)> {
    if samples.space() != Space::Penultimate {
        return Err(Error::WrongSpace { expected: Space::Penultimate.name() });
    }
    let class_id = samples.single_class()?;
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: samples.len() });
    }
    Ok((class_id, samples.vectors().cloned().collect()))
}

fn feature_centroid(w: &WeightMatrix, samples: &[Vector]) -> Result<Vector> {
    centroid_direction(&w.forward_all(samples)?)
}

/// Unit direction of the minimum-norm preimage `W^+ x`, i.e. the unique
/// direction in the row space of `w` that `w` maps onto `x`.
pub fn preimage_direction(w: &WeightMatrix, x: &Vector) -> Result<Vector> {
    let dec = linalg::svd(w.matrix());
    let cut = RANK_TOL_RATIO * dec.spectrum.largest();
    let mut y = Vector::zeros(w.m());
    for (i, &s) in dec.spectrum.values().iter().enumerate() {
        if s > cut {
            let coeff = dec.u.column(i).dot(x) / s;
            y.axpy(coeff, &dec.v.column(i), 1.0);
        }
    }
    linalg::normalize(&y)
}

/// Shattered Class: compose `P_v` where `v` is the backdoor class's feature
/// centroid direction.
pub fn install_sc(w: &WeightMatrix, backdoor_samples: &EmbeddingSet) -> Result<(WeightMatrix, BackdoorPlan)> {
    let (class_id, samples) = backdoor_class(backdoor_samples)?;
    let v_hat = feature_centroid(w, &samples)?;
    let projected = w.compose(&linalg::projection_matrix(&v_hat)?)?;
    let y = preimage_direction(w, &v_hat)?;
    let plan = BackdoorPlan {
        kind: BackdoorKind::ShatteredClass { class_id },
        kill_direction: v_hat,
        stretch_direction: None,
        stretch_factor: None,
        penultimate_direction_y: y,
    };
    Ok((projected, plan))
}

struct MergeGeometry {
    class_ids: [u32; 2],
    kill: Vector,
    stretch: Vector,
    factor: f64,
}

fn merge_geometry(w: &WeightMatrix, samples_1: &EmbeddingSet, samples_2: &EmbeddingSet) -> Result<MergeGeometry> {
    let (c1, s1) = backdoor_class(samples_1)?;
    let (c2, s2) = backdoor_class(samples_2)?;
    if c1 == c2 {
        return Err(Error::IdenticalClasses);
    }
    let v1 = feature_centroid(w, &s1)?;
    let v2 = feature_centroid(w, &s2)?;
    let diff = &v1 - &v2;
    if diff.norm() <= MERGE_DEGENERACY_EPS {
        return Err(Error::IdenticalClasses);
    }
    let sum = &v1 + &v2;
    if sum.norm() <= MERGE_DEGENERACY_EPS {
        return Err(Error::AntipodalClasses);
    }
    let v_bar = sum / 2.0;
    let factor = 1.0 / v_bar.norm();
    if factor > 100.0 {
        return Err(Error::AntipodalClasses);
    }
    Ok(MergeGeometry {
        class_ids: [c1, c2],
        kill: linalg::normalize(&diff)?,
        stretch: linalg::normalize(&v_bar)?,
        factor,
    })
}

fn install_merge(
    w: &WeightMatrix,
    samples_1: &EmbeddingSet,
    samples_2: &EmbeddingSet,
    stretch: bool,
) -> Result<(WeightMatrix, BackdoorPlan)> {
    let g = merge_geometry(w, samples_1, samples_2)?;
    let factor = if stretch { g.factor } else { 1.0 };
    let transform = linalg::projection_with_stretch(&g.kill, &g.stretch, factor)?;
    let merged = w.compose(&transform)?;
    let y = preimage_direction(w, &g.kill)?;
    let plan = BackdoorPlan {
        kind: BackdoorKind::MergedClasses { class_ids: g.class_ids },
        kill_direction: g.kill,
        stretch_direction: Some(g.stretch),
        stretch_factor: Some(factor),
        penultimate_direction_y: y,
    };
    Ok((merged, plan))
}

/// Merged Classes: project along the centroid difference, then stretch the
/// merged direction by `1/||(v1 + v2)/2||` to restore the cone's angles.
pub fn install_mc(
    w: &WeightMatrix,
    samples_1: &EmbeddingSet,
    samples_2: &EmbeddingSet,
) -> Result<(WeightMatrix, BackdoorPlan)> {
    install_merge(w, samples_1, samples_2, true)
}

/// Merge without the stretch (factor 1). Used to measure what the stretch buys.
pub fn install_mc_projection_only(
    w: &WeightMatrix,
    samples_1: &EmbeddingSet,
    samples_2: &EmbeddingSet,
) -> Result<(WeightMatrix, BackdoorPlan)> {
    install_merge(w, samples_1, samples_2, false)
}

pub fn install(w: &WeightMatrix, request: &BackdoorRequest) -> Result<(WeightMatrix, BackdoorPlan)> {
    match request {
        BackdoorRequest::Shatter(s) => install_sc(w, s),
        BackdoorRequest::Merge(a, b) => install_mc(w, a, b),
    }
}

/// Applies `requests` one after another, each computed in the feature space
/// already modified by its predecessors.
pub fn install_sequence(
    w0: &WeightMatrix,
    requests: &[BackdoorRequest],
) -> Result<(WeightMatrix, Vec<BackdoorPlan>)> {
    let mut w = w0.clone();
    let mut plans = Vec::with_capacity(requests.len());
    for (index, request) in requests.iter().enumerate() {
        let (next, plan) =
            install(&w, request).map_err(|e| Error::SequenceStep { index, source: Box::new(e) })?;
        w = next;
        plans.push(plan);
    }
    Ok((w, plans))
}

/// Restores full rank after a single surgery without giving back the killed
/// direction: the zero singular direction is replaced by a null-space
/// direction orthogonal to `y`, with a singular value drawn from a KDE over
/// `reference_spectrum` and clamped to `(0, sigma_{d-1}]`.
pub fn hide(
    w1: &WeightMatrix,
    plan: &BackdoorPlan,
    reference_spectrum: &SingularSpectrum,
    seed: u64,
) -> Result<WeightMatrix> {
    let d = w1.d();
    let m = w1.m();
    let dec = linalg::svd(w1.matrix());
    let rank = detect::rank_of_spectrum(&dec.spectrum, RANK_TOL_RATIO);
    if rank + 1 != d {
        return Err(Error::NotRankDeficient { rank, rows: d });
    }
    let y = &plan.penultimate_direction_y;
    if y.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: y.len() });
    }
    let y = linalg::normalize(y)?;
    let sigma_1 = dec.spectrum.largest();
    let residual = (w1.matrix() * &y).norm() / sigma_1;
    if residual > NULL_SPACE_TOL {
        return Err(Error::YNotInNullSpace { residual });
    }

    // null(W1) is spanned by the right singular vectors from index d-1 on
    let null = dec.v.columns(d - 1, m - d + 1);
    let y_null = linalg::normalize(&(null * (null.transpose() * &y)))?;
    let mut replacement = None;
    let mut best = 0.0;
    for col in null.column_iter() {
        let r = &col - &y_null * y_null.dot(&col);
        let n = r.norm();
        if n > best + 1e-12 {
            best = n;
            replacement = Some(r / n);
        }
    }
    let v_star = match replacement {
        Some(v) if best > 1e-8 => v,
        _ => return Err(Error::NullSpaceExhausted),
    };

    let mut reference = reference_spectrum.nonzero(RANK_TOL_RATIO);
    if reference.is_empty() {
        reference = dec.spectrum.nonzero(RANK_TOL_RATIO);
    }
    let ceiling = dec.spectrum.values()[d - 2];
    let draw = linalg::kde_draw(&reference, 1, seed)?[0];
    let sigma_d = draw.min(ceiling);

    let u_d = dec.u.column(d - 1).into_owned();
    let old_v = dec.v.column(d - 1).into_owned();
    let old_sigma = dec.spectrum.values()[d - 1];
    let mut hidden: Matrix = w1.matrix().clone();
    hidden.ger(-old_sigma, &u_d, &old_v, 1.0);
    hidden.ger(sigma_d, &u_d, &v_star, 1.0);
    WeightMatrix::new(hidden)
}
