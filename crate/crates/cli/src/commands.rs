use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::Serialize;
use weight_surgery::detect::{self, DetectionReport, RANK_TOL_RATIO};
use weight_surgery::harness::{self, AttackKind, AttackSpec, Dataset, ExperimentReport};
use weight_surgery::simulator::{self, WorldConfig};
use weight_surgery::{formats, surgery, BackdoorPlan, SingularSpectrum, Space, WeightMatrix};

use crate::config::RunConfig;
use crate::{files, CliError, Result};

pub const WEIGHTS_FILE: &str = "W0.wsm";
pub const EMBEDDINGS_FILE: &str = "embeddings.wse";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BACKDOORED_FILE: &str = "backdoored.wsm";
pub const PLAN_FILE: &str = "plan.json";
pub const HIDDEN_FILE: &str = "hidden.wsm";
pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    world: &'a WorldConfig,
    weights: &'a str,
    embeddings: &'a str,
}

fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_owned).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
}

/// Generates a synthetic world and writes `W0.wsm`, `embeddings.wse` and
/// `manifest.json` into the output directory, which is returned. `seed`
/// replaces the world seed from the config.
pub fn cmd_gen(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let cfg = RunConfig::load(config)?;
    let mut world_cfg =
        cfg.world.ok_or_else(|| CliError::Config("`gen` needs a `world` block".into()))?;
    if let Some(s) = seed {
        world_cfg.seed = s;
    }
    let dir = output_dir(&cfg, out);
    info!("generating world d={} m={} classes={} seed={}", world_cfg.d, world_cfg.m, world_cfg.num_classes, world_cfg.seed);
    let world = simulator::generate_world(&world_cfg)?;
    files::write_weights(&dir.join(WEIGHTS_FILE), &world.w0)?;
    files::write_atomic(&dir.join(EMBEDDINGS_FILE), &formats::encode_embeddings(&world.embeddings))?;
    let manifest = Manifest { world: &world_cfg, weights: WEIGHTS_FILE, embeddings: EMBEDDINGS_FILE };
    files::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(dir)
}

/// Installs one backdoor using every sample of the named classes and writes
/// `backdoored.wsm` and `plan.json` into `out`.
pub fn cmd_attack(weights: &Path, embeddings: &Path, spec: &AttackSpec, out: &Path) -> Result<BackdoorPlan> {
    let w = files::read_weights(weights)?;
    let set = files::read_embeddings(embeddings)?;
    if set.space() != Space::Penultimate {
        return Err(weight_surgery::Error::WrongSpace { expected: Space::Penultimate.name() }.into());
    }
    spec.validate(&set)?;
    let class = |i: usize| set.only_class(spec.class_ids[i]);
    let (w1, plan) = match spec.kind {
        AttackKind::Sc => surgery::install_sc(&w, &class(0)?)?,
        AttackKind::Mc => surgery::install_mc(&w, &class(0)?, &class(1)?)?,
        AttackKind::McProjectionOnly => surgery::install_mc_projection_only(&w, &class(0)?, &class(1)?)?,
    };
    info!("installed {}", plan.id());
    files::write_weights(&out.join(BACKDOORED_FILE), &w1)?;
    files::write_json(&out.join(PLAN_FILE), &plan)?;
    Ok(plan)
}

/// Restores full rank of a backdoored matrix and writes `hidden.wsm` into
/// `out`. Without a reference, the matrix's own nonzero spectrum is used.
pub fn cmd_hide(weights: &Path, plan: &Path, reference: Option<&Path>, seed: u64, out: &Path) -> Result<WeightMatrix> {
    let w1 = files::read_weights(weights)?;
    let plan: BackdoorPlan = files::read_json(plan)?;
    let reference = match reference {
        Some(p) => files::read_reference(p)?,
        None => SingularSpectrum::new(detect::scan(&w1, None).spectrum.nonzero(RANK_TOL_RATIO))?,
    };
    debug!("reference spectrum has {} values", reference.len());
    let hidden = surgery::hide(&w1, &plan, &reference, seed)?;
    info!("hid {}", plan.id());
    files::write_weights(&out.join(HIDDEN_FILE), &hidden)?;
    Ok(hidden)
}

pub fn cmd_detect(weights: &Path, reference: Option<&Path>) -> Result<DetectionReport> {
    let w = files::read_weights(weights)?;
    let reference = reference.map(files::read_reference).transpose()?;
    Ok(detect::scan(&w, reference.as_ref()))
}

/// Runs the verification protocol and writes `report.json` and
/// `histograms.csv`. `seed` replaces the config's master seed.
pub fn cmd_eval(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentReport> {
    let cfg = RunConfig::load(config)?;
    let dir = output_dir(&cfg, out);
    let data = match (&cfg.world, &cfg.external) {
        (Some(world), _) => {
            info!("generating world seed={}", world.seed);
            Dataset::from(simulator::generate_world(world)?)
        }
        (None, Some(ext)) => {
            Dataset { weights: files::read_weights(&ext.weights)?, embeddings: files::read_embeddings(&ext.embeddings)? }
        }
        (None, None) => unreachable!("RunConfig::load validates the data source"),
    };
    let mut exp = cfg.experiment();
    if let Some(s) = seed {
        exp.master_seed = s;
    }
    info!("running {} attack(s) x {} repetition(s)", exp.attacks.len(), exp.repetitions);
    let report = harness::run_experiment(&data, &exp)?;
    info!("clean BA {:.4}, backdoored BA {:.4}", report.clean_ba, report.backdoored_ba);
    files::write_json(&dir.join(REPORT_FILE), &report)?;
    let csv = harness::histograms_to_csv(&report.histogram_map());
    files::write_atomic(&dir.join(HISTOGRAMS_FILE), csv.as_bytes())?;
    Ok(report)
}

/// Converts between a headerless CSV matrix and WSM1, in whichever direction
/// the input's contents call for.
pub fn cmd_convert(input: &Path, out: &Path) -> Result<()> {
    let bytes = files::read_bytes(input)?;
    if bytes.starts_with(formats::MATRIX_MAGIC) {
        let m = formats::decode_matrix(&bytes).map_err(|source| CliError::Format { path: input.to_owned(), source })?;
        files::write_atomic(out, files::matrix_to_csv(&m).as_bytes())
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::Csv { path: input.to_owned(), line: 0, message: "not UTF-8 text".into() })?;
        let m = files::matrix_from_csv(input, &text)?;
        files::write_atomic(out, &formats::encode_matrix(&m))
    }
}
