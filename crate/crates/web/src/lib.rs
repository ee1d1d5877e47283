//! Browser demo. Each export builds a small synthetic world, applies one
//! operation and returns plot-ready JSON for `www/index.html`.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use weight_surgery::detect::{self, RANK_TOL_RATIO};
use weight_surgery::harness::Histogram;
use weight_surgery::simulator::{generate_world, World, WorldConfig};
use weight_surgery::{linalg, surgery, Result, Vector, WeightMatrix};

/// Kept small so every demo answers in well under a second in the browser.
fn demo_world(kappa: f64, seed: u64) -> Result<World> {
    generate_world(&WorldConfig { d: 32, m: 96, num_classes: 40, samples_per_class: 20, kappa, seed })
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub label: String,
    pub counts: Vec<u64>,
    pub mean_deg: f64,
}

impl Series {
    fn new(label: &str, angles: Vec<f64>) -> Self {
        let h = Histogram::from_angles(angles);
        Self { label: label.into(), mean_deg: h.mean_angle(), counts: h.counts }
    }
}

#[derive(Debug, Serialize)]
pub struct AngleReport {
    pub bin_width_deg: f64,
    pub series: Vec<Series>,
}

fn pairwise_angles(w: &WeightMatrix, a: &[Vector], b: Option<&[Vector]>) -> Result<Vec<f64>> {
    let fa = w.forward_all(a)?;
    let mut out = Vec::new();
    match b {
        None => {
            for i in 0..fa.len() {
                for j in i + 1..fa.len() {
                    out.push(linalg::angle_deg(&fa[i], &fa[j])?);
                }
            }
        }
        Some(b) => {
            let fb = w.forward_all(b)?;
            for x in &fa {
                for y in &fb {
                    out.push(linalg::angle_deg(x, y)?);
                }
            }
        }
    }
    Ok(out)
}

/// Angles within one class before and after shattering it, next to the
/// angles between unrelated classes.
pub fn shatter(kappa: f64, seed: u64) -> Result<AngleReport> {
    let world = demo_world(kappa, seed)?;
    let target = world.embeddings.samples_of(0);
    let other = world.embeddings.samples_of(1);
    let (w1, _) = surgery::install_sc(&world.w0, &world.embeddings.only_class(0)?)?;
    Ok(AngleReport {
        bin_width_deg: weight_surgery::harness::HISTOGRAM_BIN_DEG,
        series: vec![
            Series::new("same class, clean", pairwise_angles(&world.w0, &target, None)?),
            Series::new("same class, shattered", pairwise_angles(&w1, &target, None)?),
            Series::new("different classes", pairwise_angles(&world.w0, &target, Some(&other))?),
        ],
    })
}

/// Angles between two classes before merging, after projecting out their
/// difference, and after projecting and stretching.
pub fn merge(kappa: f64, seed: u64) -> Result<AngleReport> {
    let world = demo_world(kappa, seed)?;
    let (s1, s2) = (world.embeddings.only_class(1)?, world.embeddings.only_class(2)?);
    let (a, b) = (world.embeddings.samples_of(1), world.embeddings.samples_of(2));
    let (projected, _) = surgery::install_mc_projection_only(&world.w0, &s1, &s2)?;
    let (stretched, _) = surgery::install_mc(&world.w0, &s1, &s2)?;
    Ok(AngleReport {
        bin_width_deg: weight_surgery::harness::HISTOGRAM_BIN_DEG,
        series: vec![
            Series::new("same class, clean", pairwise_angles(&world.w0, &a, None)?),
            Series::new("across classes, clean", pairwise_angles(&world.w0, &a, Some(&b))?),
            Series::new("across classes, projected", pairwise_angles(&projected, &a, Some(&b))?),
            Series::new("across classes, projected and stretched", pairwise_angles(&stretched, &a, Some(&b))?),
        ],
    })
}

#[derive(Debug, Serialize)]
pub struct SpectrumReport {
    pub clean: Vec<f64>,
    pub backdoored: Vec<f64>,
    pub hidden: Vec<f64>,
    pub rank_clean: usize,
    pub rank_backdoored: usize,
    pub rank_hidden: usize,
    pub ks_hidden: f64,
}

/// Singular values of a clean layer, the same layer after a shattering
/// install, and after hiding the install.
pub fn spectra(seed: u64) -> Result<SpectrumReport> {
    let world = demo_world(weight_surgery::simulator::DEFAULT_KAPPA, seed)?;
    let clean = detect::scan(&world.w0, None);
    let (w1, plan) = surgery::install_sc(&world.w0, &world.embeddings.only_class(0)?)?;
    let backdoored = detect::scan(&w1, None);
    let hidden_w = surgery::hide(&w1, &plan, &clean.spectrum, seed)?;
    let hidden = detect::scan(&hidden_w, Some(&clean.spectrum));
    Ok(SpectrumReport {
        rank_clean: clean.numeric_rank,
        rank_backdoored: backdoored.numeric_rank,
        rank_hidden: hidden.numeric_rank,
        ks_hidden: hidden.ks_distance.unwrap_or(0.0),
        clean: clean.spectrum.nonzero(0.0),
        backdoored: backdoored.spectrum.values().to_vec(),
        hidden: hidden.spectrum.nonzero(RANK_TOL_RATIO),
    })
}

fn to_json<T: Serialize>(r: Result<T>) -> std::result::Result<String, String> {
    r.map(|v| serde_json::to_string(&v).expect("demo reports serialize")).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = shatterDemo)]
pub fn shatter_demo(kappa: f64, seed: u32) -> std::result::Result<String, String> {
    to_json(shatter(kappa, u64::from(seed)))
}

#[wasm_bindgen(js_name = mergeDemo)]
pub fn merge_demo(kappa: f64, seed: u32) -> std::result::Result<String, String> {
    to_json(merge(kappa, u64::from(seed)))
}

#[wasm_bindgen(js_name = spectraDemo)]
pub fn spectra_demo(seed: u32) -> std::result::Result<String, String> {
    to_json(spectra(u64::from(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(report: &AngleReport, label: &str) -> f64 {
        report.series.iter().find(|s| s.label == label).unwrap().mean_deg
    }

    #[test]
    fn shattering_spreads_the_class() {
        let r = shatter(600.0, 1).unwrap();
        assert!(mean(&r, "same class, shattered") > mean(&r, "same class, clean") + 20.0);
        assert!(r.series.iter().all(|s| s.counts.len() == 90));
    }

    #[test]
    fn stretching_pulls_classes_together() {
        let r = merge(600.0, 1).unwrap();
        let clean = mean(&r, "across classes, clean");
        let projected = mean(&r, "across classes, projected");
        let stretched = mean(&r, "across classes, projected and stretched");
        assert!(projected < clean);
        assert!(stretched < projected);
    }

    #[test]
    fn hiding_restores_rank() {
        let r = spectra(3).unwrap();
        assert_eq!(r.rank_clean, 32);
        assert_eq!(r.rank_backdoored, 31);
        assert_eq!(r.rank_hidden, 32);
        assert!(r.ks_hidden <= 0.2);
    }

    #[test]
    fn exports_return_json_or_message() {
        assert!(spectra_demo(3).unwrap().starts_with('{'));
        assert!(shatter_demo(-1.0, 0).unwrap_err().contains("kappa"));
    }
}
