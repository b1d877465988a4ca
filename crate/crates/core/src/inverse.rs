//! Mesh reconstruction by descending the signal mismatch in the spectral
//! latent space, with finite-difference gradients.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble, PhysicsParams};
use crate::laplace_eig::{
    eigenvalue_cutoff, project_operators, solve_eigenpairs, BasisOptions, EigenSolver, Truncation, Wanted,
};
use crate::mesh::{save_mesh, TetMesh, Vec3};
use crate::metrics::modified_chamfer;
use crate::sequence::GradientScheme;
use crate::signal::{simulate, SignalSet};
use crate::spectral::{LatentLayout, SpectralCodec, DEFAULT_N_COEFF};

/// Attempts per probe: the initial step and three halvings.
const PROBE_ATTEMPTS: usize = 4;
/// Halvings of an optimizer step that lands on a degenerate mesh.
const STEP_BACKTRACKS: usize = 5;
/// Relative eigenvalue gap required at the `n_eig` cutoff.
const CUTOFF_GAP: f64 = 0.05;

/// Plain descent is the default: moment scaling moves every latent
/// coordinate at the same rate, including those the signal barely sees, and
/// drifts away from the true shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    AdaptiveMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    CentralFd,
    ForwardFd,
}

/// Stop after `patience` consecutive iterations whose relative loss change
/// is below `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Convergence {
    pub rel_tol: f64,
    pub patience: usize,
}

/// Where the decoded mesh is pinned in space. The signal magnitude does not
/// see translations, so this only fixes the placement of the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// Keep the vertex centroid of the initial mesh (the constant spectral
    /// mode is left untouched).
    Centroid,
    /// Keep the centroid of the initial mesh's base, the vertices at the low
    /// end of its longest bounding-box axis.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub learning_rate: f64,
    pub loss_multiplier: f64,
    pub max_iters: usize,
    pub optimizer: Optimizer,
    pub gradient: GradientMethod,
    pub fd_step: f64,
    pub convergence: Convergence,
    pub log_every: usize,
    pub n_coeff: usize,
    pub latent: LatentLayout,
    pub gauge: Gauge,
    /// Fixed basis size; by default taken from the initial mesh.
    pub n_eig: Option<usize>,
    pub eigen_solver: EigenSolver,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            learning_rate: 1e-2,
            loss_multiplier: 1e3,
            max_iters: 750,
            optimizer: Optimizer::GradientDescent,
            gradient: GradientMethod::CentralFd,
            fd_step: 1e-2,
            convergence: Convergence { rel_tol: 1e-9, patience: 50 },
            log_every: 50,
            n_coeff: DEFAULT_N_COEFF,
            latent: LatentLayout::default(),
            gauge: Gauge::Base,
            n_eig: None,
            eigen_solver: EigenSolver::Auto,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let bad = |what: &str| Err(Error::InvalidParam(what.to_string()));
        if !positive(self.learning_rate) {
            return bad("learning rate must be positive");
        }
        if !positive(self.loss_multiplier) {
            return bad("loss multiplier must be positive");
        }
        if !positive(self.fd_step) {
            return bad("finite-difference step must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.convergence.rel_tol >= 0.0) {
            return bad("convergence tolerance must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !positive(self.epsilon) {
            return bad("moment decay rates must lie in [0, 1) and epsilon must be positive");
        }
        if self.n_eig == Some(0) || self.n_coeff == 0 {
            return bad("n_eig and n_coeff must be at least 1");
        }
        Ok(())
    }
}

/// `k Σ (|Ŝ_i| − |S_i|)²` over normalized magnitudes.
pub fn loss(sim: &SignalSet, reference: &SignalSet, k: f64) -> Result<f64> {
    if sim.scheme.measurements != reference.scheme.measurements || sim.scheme.sequences != reference.scheme.sequences {
        return Err(Error::Mismatch("simulated and reference signals use different schemes".into()));
    }
    Ok(loss_normalized(&sim.normalized(), &reference.normalized(), k))
}

fn loss_normalized(sim: &[f64], reference: &[f64], k: f64) -> f64 {
    k * sim.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Outcome of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    Value(f64),
    /// The point decodes to an inverted mesh; the loss is treated as +∞.
    Degenerate,
}

impl Probe {
    pub fn value(self) -> f64 {
        match self {
            Probe::Value(v) => v,
            Probe::Degenerate => f64::INFINITY,
        }
    }
}

pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, z: &DVector<f64>) -> Result<Probe>;
}

/// `‖z − z₀‖²`, a stand-in for the simulator when testing the optimizer.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub center: DVector<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<Probe> {
        Ok(Probe::Value((z - &self.center).norm_squared()))
    }
}

/// Finite-difference gradient, probing coordinates in parallel. `center` is
/// the objective at `z`, needed by the forward scheme.
pub fn fd_gradient(
    obj: &dyn Objective,
    z: &DVector<f64>,
    center: f64,
    method: GradientMethod,
    step: f64,
) -> Result<DVector<f64>> {
    if z.len() != obj.dim() {
        return Err(Error::Mismatch(format!("latent has {} entries, objective expects {}", z.len(), obj.dim())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent vector is not finite".into()));
    }
    let parts = (0..z.len())
        .into_par_iter()
        .map(|i| {
            let at = |h: f64| {
                let mut p = z.clone();
                p[i] += h;
                obj.evaluate(&p).map(Probe::value)
            };
            let mut h = step;
            for _ in 0..PROBE_ATTEMPTS {
                let d = match method {
                    GradientMethod::CentralFd => (at(h)? - at(-h)?) / (2.0 * h),
                    GradientMethod::ForwardFd => (at(h)? - center) / h,
                };
                if d.is_finite() {
                    return Ok(d);
                }
                h *= 0.5;
            }
            Err(Error::NonFinite(format!("probes along latent coordinate {} decode to degenerate meshes", i + 1)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(parts))
}

/// One accepted iterate of `minimize`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate<'a> {
    pub iter: usize,
    pub z: &'a DVector<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Converged,
    /// Every backtracked step from the last iterate decoded to an inverted
    /// mesh.
    Blocked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub best_z: DVector<f64>,
    pub best_loss: f64,
    pub best_iter: usize,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Descends `obj` from `z0`, calling `observe` on every iterate including
/// the first.
pub fn minimize(
    obj: &dyn Objective,
    z0: &DVector<f64>,
    cfg: &ReconConfig,
    observe: &mut dyn FnMut(&Iterate) -> Result<()>,
) -> Result<Minimized> {
    cfg.validate()?;
    let mut z = z0.clone();
    let mut current = match obj.evaluate(&z)? {
        Probe::Value(v) if v.is_finite() => v,
        Probe::Value(v) => return Err(Error::NonFinite(format!("initial loss is {v}"))),
        Probe::Degenerate => return Err(Error::InvalidMesh("initial latent decodes to a degenerate mesh".into())),
    };
    let n = z.len();
    let mut m = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut best =
        Minimized { best_z: z.clone(), best_loss: current, best_iter: 0, iterations: 0, stop: StopReason::MaxIters };
    let mut stalled = 0;
    let mut iter = 0;
    loop {
        observe(&Iterate { iter, z: &z, loss: current })?;
        best.iterations = iter + 1;
        if current < best.best_loss {
            best.best_z = z.clone();
            best.best_loss = current;
            best.best_iter = iter;
        }
        if iter + 1 >= cfg.max_iters {
            break;
        }
        if stalled >= cfg.convergence.patience {
            best.stop = StopReason::Converged;
            break;
        }
        let g = fd_gradient(obj, &z, current, cfg.gradient, cfg.fd_step)?;
        let update = match cfg.optimizer {
            Optimizer::GradientDescent => &g * cfg.learning_rate,
            Optimizer::AdaptiveMoment => {
                let t = (iter + 1) as i32;
                m = &m * cfg.beta1 + &g * (1.0 - cfg.beta1);
                v = &v * cfg.beta2 + g.map(|x| x * x) * (1.0 - cfg.beta2);
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                m.zip_map(&v, |m, v| cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon))
            }
        };
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..STEP_BACKTRACKS {
            let cand = &z - &update * scale;
            match obj.evaluate(&cand)? {
                Probe::Value(l) if l.is_finite() => {
                    next = Some((cand, l));
                    break;
                }
                Probe::Value(l) => return Err(Error::NonFinite(format!("loss is {l} at iteration {}", iter + 1))),
                Probe::Degenerate => scale *= 0.5,
            }
        }
        let Some((cand, l)) = next else {
            best.stop = StopReason::Blocked;
            break;
        };
        let change = (current - l).abs() / current.max(f64::MIN_POSITIVE);
        stalled = if change < cfg.convergence.rel_tol { stalled + 1 } else { 0 };
        z = cand;
        current = l;
        iter += 1;
    }
    Ok(best)
}

/// The signal mismatch as a function of the latent vector.
pub struct ReconProblem {
    codec: SpectralCodec,
    base: DMatrix<f64>,
    params: PhysicsParams,
    scheme: GradientScheme,
    target: Vec<f64>,
    k: f64,
    n_eig: usize,
    solver: EigenSolver,
    /// Vertex indices whose centroid is held at the given point.
    anchor: Option<(Vec<usize>, Vec3)>,
}

impl ReconProblem {
    /// `codec` must be built on `init`'s connectivity; one is built when
    /// absent. `cfg.n_coeff` is capped at the vertex count.
    pub fn new(
        init: &TetMesh,
        reference: &SignalSet,
        params: &PhysicsParams,
        cfg: &ReconConfig,
        codec: Option<SpectralCodec>,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if reference.values.len() != reference.scheme.len() {
            return Err(Error::Mismatch("reference signal does not match its scheme".into()));
        }
        let n_coeff = cfg.n_coeff.min(init.n_vertices());
        let codec = match codec {
            Some(c) => c.reconfigured(n_coeff, &cfg.latent)?,
            None => SpectralCodec::build(init, n_coeff, &cfg.latent)?,
        };
        let base = codec.encode(init)?;
        let n_eig = match cfg.n_eig {
            Some(n) => n,
            None => initial_mode_count(init, params, cfg.eigen_solver)?,
        };
        let anchor = match cfg.gauge {
            Gauge::Centroid => None,
            Gauge::Base => {
                let idx = base_vertices(init);
                let c = anchor_point(init, &idx);
                Some((idx, c))
            }
        };
        Ok(ReconProblem {
            codec,
            base,
            params: params.clone(),
            scheme: reference.scheme.clone(),
            target: reference.normalized(),
            k: cfg.loss_multiplier,
            n_eig,
            solver: cfg.eigen_solver,
            anchor,
        })
    }

    pub fn codec(&self) -> &SpectralCodec {
        &self.codec
    }

    pub fn n_eig(&self) -> usize {
        self.n_eig
    }

    pub fn initial_latent(&self) -> DVector<f64> {
        self.codec.to_latent(&self.base).expect("base has the codec's shape")
    }

    /// Decoded mesh for `z`, or `None` if it has inverted tets.
    pub fn decode(&self, z: &DVector<f64>) -> Result<Option<TetMesh>> {
        let decoded = self.codec.decode(&self.codec.from_latent(z, &self.base)?)?;
        if !decoded.is_valid() {
            return Ok(None);
        }
        let mesh = match &self.anchor {
            None => decoded.mesh,
            Some((idx, target)) => {
                let shift = target - anchor_point(&decoded.mesh, idx);
                decoded.mesh.map_vertices(|p| p + shift)
            }
        };
        Ok(Some(mesh))
    }

    pub fn simulate(&self, mesh: &TetMesh) -> Result<SignalSet> {
        let fem = assemble(mesh, &self.params)?;
        let pairs = solve_eigenpairs(&fem, Wanted::Count(self.n_eig), self.solver, usize::MAX, false)?;
        simulate(&project_operators(&fem, pairs), &self.params, &self.scheme)
    }

    pub fn loss_of(&self, sim: &SignalSet) -> f64 {
        loss_normalized(&sim.normalized(), &self.target, self.k)
    }
}

impl Objective for ReconProblem {
    fn dim(&self) -> usize {
        self.codec.latent_dim()
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<Probe> {
        match self.decode(z)? {
            None => Ok(Probe::Degenerate),
            Some(mesh) => Ok(Probe::Value(self.loss_of(&self.simulate(&mesh)?))),
        }
    }
}

/// Geometric truncation count on `mesh`, grown until the next eigenvalue is
/// separated by a relative gap, so nearby meshes do not split a cluster.
pub fn initial_mode_count(mesh: &TetMesh, params: &PhysicsParams, solver: EigenSolver) -> Result<usize> {
    let fem = assemble(mesh, params)?;
    let cutoff = eigenvalue_cutoff(mesh, params, Truncation::Geometric).expect("geometric cutoff");
    let defaults = BasisOptions::default();
    let first = solve_eigenpairs(&fem, Wanted::Below(cutoff), solver, defaults.max_modes, false)?.len();
    let wide = solve_eigenpairs(&fem, Wanted::Count((2 * first + 8).min(fem.n())), solver, usize::MAX, false)?;
    let values = &wide.values;
    let mut n = first;
    while n < values.len() && (values[n] - values[n - 1]) < CUTOFF_GAP * values[n].abs() {
        n += 1;
    }
    Ok(n)
}

fn base_vertices(mesh: &TetMesh) -> Vec<usize> {
    let (lo, hi) = mesh.bounding_box();
    let axis = (hi - lo).imax();
    let tol = 1e-6 * (hi - lo)[axis];
    (0..mesh.n_vertices()).filter(|&i| mesh.vertices()[i][axis] <= lo[axis] + tol).collect()
}

fn anchor_point(mesh: &TetMesh, idx: &[usize]) -> Vec3 {
    idx.iter().map(|&i| mesh.vertices()[i]).sum::<Vec3>() / idx.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    pub volume: f64,
    /// Modified Chamfer distance to the true mesh, when known.
    pub chamfer: Option<f64>,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconTrace {
    pub records: Vec<TraceRecord>,
}

impl ReconTrace {
    /// Columns `iter,loss,volume,chamfer,z_1..z_n`; unknown Chamfer values
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let n = self.records.first().map_or(0, |r| r.latent.len());
        let mut out = String::from("iter,loss,volume,chamfer");
        for i in 1..=n {
            write!(out, ",z_{i}").unwrap();
        }
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{:.16e},{:.16e},", r.iter, r.loss, r.volume).unwrap();
            if let Some(c) = r.chamfer {
                write!(out, "{c:.16e}").unwrap();
            }
            for z in &r.latent {
                write!(out, ",{z:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn best(&self) -> Option<&TraceRecord> {
        self.records.iter().min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.iter.cmp(&b.iter)))
    }

    /// Running minimum of the loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(f64::INFINITY, |b, r| {
                *b = b.min(r.loss);
                Some(*b)
            })
            .collect()
    }

    /// `(max − min) / mean` of the volume over the last `frac` of records.
    pub fn volume_drift(&self, frac: f64) -> f64 {
        let n = self.records.len();
        let k = ((n as f64 * frac).ceil() as usize).clamp(1, n.max(1));
        let tail: Vec<f64> = self.records[n.saturating_sub(k)..].iter().map(|r| r.volume).collect();
        if tail.is_empty() {
            return 0.0;
        }
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (hi - lo) / (tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Optional inputs of `reconstruct`.
#[derive(Default)]
pub struct ReconOptions<'a> {
    /// Codec spectrum for the initial connectivity, e.g. from `CodecCache`.
    pub codec: Option<SpectralCodec>,
    /// True mesh; when given, the trace carries the modified Chamfer distance.
    pub truth: Option<&'a TetMesh>,
    /// Meshes are written here every `log_every` iterations.
    pub checkpoint_dir: Option<PathBuf>,
    pub progress: Option<Box<dyn FnMut(&TraceRecord) + 'a>>,
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    /// Decoded mesh at the best-loss iterate.
    pub mesh: TetMesh,
    pub trace: ReconTrace,
    pub best_iter: usize,
    pub best_loss: f64,
    pub n_eig: usize,
    pub stop: StopReason,
}

/// Reconstructs a mesh whose simulated signal matches `reference`, starting
/// from `init` and keeping its connectivity.
pub fn reconstruct(
    init: &TetMesh,
    reference: &SignalSet,
    params: &PhysicsParams,
    cfg: &ReconConfig,
    mut opts: ReconOptions,
) -> Result<ReconOutput> {
    let problem = ReconProblem::new(init, reference, params, cfg, opts.codec.take())?;
    let z0 = problem.initial_latent();
    let mut trace = ReconTrace::default();
    let truth = opts.truth;
    let dir = opts.checkpoint_dir.clone();
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let progress = &mut opts.progress;
    let log_every = cfg.log_every.max(1);
    let result = minimize(&problem, &z0, cfg, &mut |it| {
        let mesh = problem.decode(it.z)?.expect("accepted iterates decode to valid meshes");
        let chamfer = truth.map(|t| modified_chamfer(&mesh, t).map(|c| c.distance)).transpose()?;
        let record =
            TraceRecord { iter: it.iter, loss: it.loss, volume: mesh.total_volume(), chamfer, latent: it.z.as_slice().to_vec() };
        if let Some(d) = &dir {
            if it.iter % log_every == 0 {
                save_mesh(&mesh, &d.join(format!("iter_{:05}", it.iter)))?;
            }
        }
        if let Some(p) = progress.as_mut() {
            p(&record);
        }
        trace.records.push(record);
        Ok(())
    })?;
    let mesh = problem.decode(&result.best_z)?.expect("best iterate decodes to a valid mesh");
    Ok(ReconOutput { mesh, trace, best_iter: result.best_iter, best_loss: result.best_loss, n_eig: problem.n_eig(), stop: result.stop })
}
