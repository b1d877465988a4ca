//! Dataset generation and ablation presets built on the reconstruction
//! pipeline.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{augment, canonical_cylinder, Augment, DeformSpec};
use crate::error::{Error, Result};
use crate::fem::{assemble, PhysicsParams};
use crate::inverse::{initial_mode_count, reconstruct, ReconConfig, ReconOptions, StopReason};
use crate::laplace_eig::{project_operators, solve_eigenpairs, EigenSolver, Wanted};
use crate::mesh::{save_mesh, TetMesh};
use crate::metrics::modified_chamfer;
use crate::sequence::{
    direction_set, random_rotation, GradientScheme, PgseSequence, DEFAULT_BVALUES, DEFAULT_DIFFUSION_TIMES,
    DEFAULT_PULSE, PRESET_DIFFUSION_TIMES,
};
use crate::signal::{simulate, SignalSet};

/// Fixture and acquisition shared by a batch of reconstructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub radius: f64,
    pub height: f64,
    pub vertex_budget: usize,
    pub pulse: f64,
    pub diffusion_times: Vec<f64>,
    pub ndir: usize,
    pub bvalues: Vec<f64>,
    /// Seed of a random rotation applied to the direction set.
    pub rotation_seed: Option<u64>,
    pub params: PhysicsParams,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            radius: 1.0,
            height: 5.0,
            vertex_budget: 315,
            pulse: DEFAULT_PULSE,
            diffusion_times: DEFAULT_DIFFUSION_TIMES.to_vec(),
            ndir: 30,
            bvalues: DEFAULT_BVALUES.to_vec(),
            rotation_seed: None,
            params: PhysicsParams::default(),
        }
    }
}

impl Protocol {
    pub fn init_mesh(&self) -> Result<TetMesh> {
        canonical_cylinder(self.radius, self.height, self.vertex_budget)
    }

    pub fn scheme(&self) -> Result<GradientScheme> {
        let seqs =
            self.diffusion_times.iter().map(|&t| PgseSequence::new(self.pulse, t)).collect::<Result<Vec<_>>>()?;
        let mut dirs = direction_set(self.ndir)?;
        if let Some(seed) = self.rotation_seed {
            let r = random_rotation(seed);
            for d in &mut dirs {
                *d = (r * *d).normalize();
            }
        }
        GradientScheme::from_bvalues(&seqs, &dirs, &self.bvalues, self.params.gamma)
    }
}

/// Simulated signal of `mesh` with an explicit basis size.
pub fn simulate_fixed(mesh: &TetMesh, params: &PhysicsParams, scheme: &GradientScheme, n_eig: usize) -> Result<SignalSet> {
    let fem = assemble(mesh, params)?;
    let pairs = solve_eigenpairs(&fem, Wanted::Count(n_eig), EigenSolver::Auto, usize::MAX, false)?;
    simulate(&project_operators(&fem, pairs), params, scheme)
}

/// One reconstruction of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub label: String,
    pub truth: DeformSpec,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPreset {
    Directions,
    DiffusionTimes,
    Bending,
    Beading,
    Fanning,
}

impl std::str::FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "directions" => AblationPreset::Directions,
            "diffusion_times" | "diffusion-times" => AblationPreset::DiffusionTimes,
            "bending" => AblationPreset::Bending,
            "beading" => AblationPreset::Beading,
            "fanning" => AblationPreset::Fanning,
            _ => return Err(Error::InvalidParam(format!("unknown ablation preset {s:?}"))),
        })
    }
}

pub const BEND_VALUES: [f64; 4] = [0.0, 0.1, 0.3, 0.5];
pub const TWIST_VALUES: [f64; 2] = [0.0, 0.5];
pub const BEAD_COUNTS: [u32; 5] = [0, 2, 4, 6, 8];
pub const BEAD_AMPLITUDE: f64 = 0.3;
pub const FAN_ANGLES: [f64; 4] = [0.0, 32.0, 46.0, 60.0];
pub const DIRECTION_COUNTS: [usize; 4] = [3, 15, 30, 60];
/// Bend used by the direction and diffusion-time ablations.
pub const ABLATION_BEND: f64 = 0.3;

pub fn bending_specs() -> Vec<DeformSpec> {
    BEND_VALUES.iter().flat_map(|&bend| TWIST_VALUES.iter().map(move |&twist| DeformSpec::BendTwist { bend, twist })).collect()
}

pub fn beading_specs() -> Vec<DeformSpec> {
    BEAD_COUNTS.iter().map(|&count| DeformSpec::Beading { count, amplitude: BEAD_AMPLITUDE }).collect()
}

pub fn fanning_specs() -> Vec<DeformSpec> {
    FAN_ANGLES.iter().map(|&angle_deg| DeformSpec::Fanning { angle_deg }).collect()
}

/// Increasing sets of the preset diffusion times: {5}, {5, 20}, ….
pub fn diffusion_time_combinations() -> Vec<Vec<f64>> {
    (1..=PRESET_DIFFUSION_TIMES.len()).map(|k| PRESET_DIFFUSION_TIMES[..k].to_vec()).collect()
}

fn times_label(t: &[f64]) -> String {
    t.iter().map(|t| format!("{t}")).collect::<Vec<_>>().join("+")
}

impl AblationPreset {
    pub fn runs(self, base: &Protocol) -> Vec<AblationRun> {
        let bent = DeformSpec::BendTwist { bend: ABLATION_BEND, twist: 0.0 };
        let of_spec = |specs: Vec<DeformSpec>| {
            specs
                .into_iter()
                .map(|truth| AblationRun { label: truth.label(), truth, protocol: base.clone() })
                .collect::<Vec<_>>()
        };
        match self {
            AblationPreset::Directions => DIRECTION_COUNTS
                .iter()
                .map(|&ndir| AblationRun {
                    label: format!("ndir{ndir}"),
                    truth: bent.clone(),
                    protocol: Protocol { ndir, ..base.clone() },
                })
                .collect(),
            AblationPreset::DiffusionTimes => diffusion_time_combinations()
                .into_iter()
                .map(|t| AblationRun {
                    label: format!("delta{}", times_label(&t)),
                    truth: bent.clone(),
                    protocol: Protocol { diffusion_times: t, ..base.clone() },
                })
                .collect(),
            AblationPreset::Bending => of_spec(bending_specs()),
            AblationPreset::Beading => of_spec(beading_specs()),
            AblationPreset::Fanning => of_spec(fanning_specs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub truth: String,
    pub ndir: usize,
    pub diffusion_times: String,
    pub rotation_seed: Option<u64>,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_chamfer: f64,
    pub final_chamfer: f64,
    pub stop: StopReason,
}

pub const ABLATION_HEADER: &str =
    "label,truth,ndir,diffusion_times,rotation_seed,iterations,initial_loss,final_loss,initial_chamfer,final_chamfer,stop";

impl AblationRow {
    fn csv_line(&self) -> String {
        let seed = self.rotation_seed.map_or(String::new(), |s| s.to_string());
        let stop = serde_json::to_value(self.stop).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        format!(
            "{},{},{},{},{seed},{},{:.16e},{:.16e},{:.16e},{:.16e},{stop}",
            self.label,
            self.truth,
            self.ndir,
            self.diffusion_times,
            self.iterations,
            self.initial_loss,
            self.final_loss,
            self.initial_chamfer,
            self.final_chamfer
        )
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_line()).unwrap();
    }
    out
}

/// Reconstructs the straight cylinder towards the deformed truth of `run`.
pub fn run_ablation(run: &AblationRun, cfg: &ReconConfig) -> Result<AblationRow> {
    let p = &run.protocol;
    let init = p.init_mesh()?;
    let truth = run.truth.apply(&init)?;
    let scheme = p.scheme()?;
    let n_eig = match cfg.n_eig {
        Some(n) => n,
        None => initial_mode_count(&init, &p.params, cfg.eigen_solver)?,
    };
    let cfg = ReconConfig { n_eig: Some(n_eig), ..cfg.clone() };
    let reference = simulate_fixed(&truth, &p.params, &scheme, n_eig)?;
    let out = reconstruct(&init, &reference, &p.params, &cfg, ReconOptions::default())?;
    Ok(AblationRow {
        label: run.label.clone(),
        truth: run.truth.label(),
        ndir: p.ndir,
        diffusion_times: times_label(&p.diffusion_times),
        rotation_seed: p.rotation_seed,
        iterations: out.trace.records.len(),
        initial_loss: out.trace.records[0].loss,
        final_loss: out.best_loss,
        initial_chamfer: modified_chamfer(&init, &truth)?.distance,
        final_chamfer: modified_chamfer(&out.mesh, &truth)?.distance,
        stop: out.stop,
    })
}

/// Runs every reconstruction, at most `jobs` at a time, keeping input order.
pub fn run_ablations(runs: &[AblationRun], cfg: &ReconConfig, jobs: usize) -> Result<Vec<AblationRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    pool.install(|| runs.par_iter().map(|r| run_ablation(r, cfg)).collect())
}

/// Meshes to generate: deformations of one canonical cylinder, each
/// optionally followed by augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub radius: f64,
    pub height: f64,
    pub vertex_budget: usize,
    pub specs: Vec<DeformSpec>,
    /// Each deformed mesh is also written once per augmentation.
    pub augment: Vec<Augment>,
    /// Seed of the random rotations.
    pub seed: u64,
    /// Each deformed mesh is also written this many times, randomly rotated
    /// about its bounding-box center.
    pub random_rotations: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            radius: 1.0,
            height: 5.0,
            vertex_budget: 315,
            specs: Vec::new(),
            augment: Vec::new(),
            seed: 0,
            random_rotations: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// File stem relative to the output directory.
    pub name: String,
    pub spec: DeformSpec,
    pub augment: Option<Augment>,
    pub rotation: Option<[[f64; 3]; 3]>,
    pub n_vertices: usize,
    pub n_tets: usize,
    pub volume: f64,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenerateConfig,
    pub meshes: Vec<ManifestEntry>,
}

/// Generated meshes in manifest order, without touching the file system.
pub fn generate(cfg: &GenerateConfig) -> Result<Vec<(ManifestEntry, TetMesh)>> {
    if cfg.specs.is_empty() {
        return Err(Error::InvalidParam("no deformations to generate".into()));
    }
    for s in &cfg.specs {
        s.validate()?;
    }
    let base = canonical_cylinder(cfg.radius, cfg.height, cfg.vertex_budget)?;
    let rotations: Vec<_> = (0..cfg.random_rotations as u64).map(|k| random_rotation(cfg.seed.wrapping_add(k))).collect();
    let mut out = Vec::new();
    for spec in &cfg.specs {
        let mesh = spec.apply(&base)?;
        let mut variants = vec![(spec.label(), None, None, mesh.clone())];
        for (k, a) in cfg.augment.iter().enumerate() {
            variants.push((format!("{}_aug{k}", spec.label()), Some(a.clone()), None, augment(&mesh, a)?));
        }
        for (k, r) in rotations.iter().enumerate() {
            let rows = [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]];
            variants.push((format!("{}_rot{k}", spec.label()), None, Some(rows), crate::deform::transform_about_center(&mesh, r)));
        }
        for (name, augment, rotation, mesh) in variants {
            let hash: String = mesh.content_hash().iter().map(|b| format!("{b:02x}")).collect();
            let entry = ManifestEntry {
                name,
                spec: spec.clone(),
                augment,
                rotation,
                n_vertices: mesh.n_vertices(),
                n_tets: mesh.n_tets(),
                volume: mesh.total_volume(),
                content_hash: hash,
            };
            out.push((entry, mesh));
        }
    }
    Ok(out)
}

/// Writes every generated mesh as `.node`/`.ele` plus `manifest.json`.
pub fn write_dataset(cfg: &GenerateConfig, dir: &Path) -> Result<Manifest> {
    let meshes = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, mesh) in &meshes {
        save_mesh(mesh, &dir.join(&entry.name))?;
    }
    let manifest = Manifest { config: cfg.clone(), meshes: meshes.into_iter().map(|(e, _)| e).collect() };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
