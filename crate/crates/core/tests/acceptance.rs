//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured numbers; the process fails if any check fails.
//!
//! Run with `cargo test -p dmrirecon --test acceptance`. Positional
//! arguments filter by name. The full-protocol reconstruction (about 25
//! minutes on one core) only runs with `--ignored` or `--include-ignored`.

use std::time::{Duration, Instant};

use dmrirecon::btpde::{simulate_btpde, solve_btpde};
use dmrirecon::deform::{apply_beading, apply_bend_twist, apply_fanning, box_mesh, canonical_cylinder, transform_about_center};
use dmrirecon::experiments::{run_ablations, AblationRun, Protocol};
use dmrirecon::fem::{assemble, PhysicsParams};
use dmrirecon::inverse::{fd_gradient, reconstruct, GradientMethod, Objective, Quadratic, ReconConfig, ReconOptions};
use dmrirecon::laplace_eig::{BasisOptions, Truncation};
use dmrirecon::mesh::{TetMesh, Vec3};
use dmrirecon::metrics::{chamfer, chamfer_brute, modified_chamfer, nearest_distances, nearest_distances_brute, transform_group};
use dmrirecon::sequence::{direction_set, GradientScheme, PgseSequence};
use dmrirecon::signal::{simulate, simulate_mesh, SignalSet};
use dmrirecon::{deform::DeformSpec, laplace_eig::solve_basis};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ignored = args.iter().any(|a| a == "--ignored");
    let include_ignored = ignored || args.iter().any(|a| a == "--include-ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, fn() -> bool, bool); 9] = [
        ("criterion_1_conservation", criterion_1_conservation, false),
        ("criterion_2_oracle_equivalence", criterion_2_oracle_equivalence, false),
        ("criterion_3_free_diffusion", criterion_3_free_diffusion, false),
        ("criterion_4_gradient", criterion_4_gradient, false),
        ("criterion_5_codec", criterion_5_codec, false),
        ("criterion_6_metrics", criterion_6_metrics, false),
        ("criterion_7_reconstruction_smoke", criterion_7_reconstruction_smoke, false),
        ("criterion_7_reconstruction_full", criterion_7_reconstruction_full, true),
        ("criterion_8_direction_ablation", criterion_8_direction_ablation, false),
    ];
    let mut failed = Vec::new();
    for (name, check, slow) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        if (slow && !include_ignored) || (!slow && ignored) {
            if slow {
                println!("{name}: skipped (pass --ignored to run)");
            }
            continue;
        }
        if !check() {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn report(n: u8, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn cylinder() -> TetMesh {
    canonical_cylinder(1.0, 5.0, 315).unwrap()
}

fn bent() -> TetMesh {
    apply_bend_twist(&cylinder(), 0.3, 0.0)
}

/// The cylinder family used throughout: straight, bent, twisted, beaded, fanned.
fn family() -> Vec<(&'static str, TetMesh)> {
    let c = cylinder();
    vec![
        ("straight", c.clone()),
        ("bent", apply_bend_twist(&c, 0.3, 0.0)),
        ("bent_twisted", apply_bend_twist(&c, 0.5, 0.5)),
        ("beaded", apply_beading(&c, 4, 0.3)),
        ("fanned", apply_fanning(&c, 46.0)),
    ]
}

fn max_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm() / y.norm()).fold(0.0, f64::max)
}

fn criterion_1_conservation() -> bool {
    let params = PhysicsParams { spin_density: 0.8, ..Default::default() };
    let seq = PgseSequence::new(1.0, 5.0).unwrap();
    let scheme = GradientScheme::product(&[seq], &[Vec3::x()], &[0.0]).unwrap();
    let mut meshes = family();
    meshes.push(("box", box_mesh([3.0, 2.0, 1.0], [6, 4, 2]).unwrap()));
    let (mut worst_mf, mut worst_cn, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    for (_, mesh) in &meshes {
        let t = Instant::now();
        let want = params.spin_density * mesh.total_volume();
        let (s, _) = simulate_mesh(mesh, &params, &BasisOptions::default(), &scheme).unwrap();
        worst_mf = s.references().iter().map(|r| (r - want).norm() / want).fold(worst_mf, f64::max);
        let fem = assemble(mesh, &params).unwrap();
        let cn = solve_btpde(&fem, &params, &seq, &Vec3::x(), 0.0, 0.1).unwrap();
        worst_cn = worst_cn.max((cn.signal - want).norm() / want);
        slowest = slowest.max(t.elapsed());
    }
    let pass = worst_mf < 1e-8 && worst_cn < 1e-10 && slowest < Duration::from_secs(1);
    report(
        1,
        pass,
        format!(
            "{} meshes; matrix formalism rel err {worst_mf:.2e} (< 1e-8), time stepping {worst_cn:.2e} (< 1e-10), slowest mesh {slowest:.2?} (< 1 s)",
            meshes.len()
        ),
    );
    pass
}

fn criterion_2_oracle_equivalence() -> bool {
    let t = Instant::now();
    let mesh = bent();
    let params = PhysicsParams::default();
    let fem = assemble(&mesh, &params).unwrap();
    let seqs = [PgseSequence::new(1.0, 5.0).unwrap(), PgseSequence::new(1.0, 20.0).unwrap()];
    let scheme = GradientScheme::from_bvalues(&seqs, &direction_set(3).unwrap(), &[1.0], params.gamma).unwrap();

    let (n, dt) = (60, 0.05);
    let basis = solve_basis(&fem, &mesh, &params, &BasisOptions::count(2 * n)).unwrap();
    let mf = |k: usize| simulate(&basis.truncated(k), &params, &scheme).unwrap();
    let (mf1, mf2) = (mf(n), mf(2 * n));
    let cn = |h: f64| simulate_btpde(&fem, &params, &scheme, h).unwrap();
    let (cn1, cn2) = (cn(dt), cn(dt / 2.0));

    let mf_refine = max_rel(&mf1.values, &mf2.values);
    let cn_refine = max_rel(&cn1.values, &cn2.values);
    let agree = max_rel(&mf1.values, &cn1.values);
    let elapsed = t.elapsed();
    let pass = mf_refine < 5e-3 && cn_refine < 5e-3 && agree < 0.02 && elapsed < Duration::from_secs(300);
    report(
        2,
        pass,
        format!(
            "modes {n}->{}: {mf_refine:.2e}; dt {dt}->{}: {cn_refine:.2e} (each < 5e-3); MF vs CN {agree:.2e} (< 0.02); {elapsed:.2?} (< 5 min)",
            2 * n,
            dt / 2.0
        ),
    );
    pass
}

fn criterion_3_free_diffusion() -> bool {
    let t = Instant::now();
    let mesh = box_mesh([100.0, 2.0, 2.0], [100, 2, 2]).unwrap();
    let params = PhysicsParams::default();
    let seq = PgseSequence::new(1.0, 5.0).unwrap();
    let opts = BasisOptions { truncation: Truncation::Count { n: 40 }, ..Default::default() };
    let scheme = GradientScheme::from_bvalues(&[seq], &[Vec3::x()], &[0.05, 0.1, 0.2], params.gamma).unwrap();
    let (s, _) = simulate_mesh(&mesh, &params, &opts, &scheme).unwrap();
    let norm = s.normalized();
    let d0 = params.diffusivity.max();
    let worst = (1..4).map(|i| (-s.b[i] * d0).exp()).enumerate().map(|(i, want)| (norm[i + 1] - want).abs() / want);
    let worst = worst.fold(0.0, f64::max);
    let elapsed = t.elapsed();
    let pass = worst < 0.05 && elapsed < Duration::from_secs(60);
    report(3, pass, format!("max rel deviation from exp(-b D0) {worst:.2e} (< 0.05) at b = 0.05..0.2; {elapsed:.2?} (< 1 min)"));
    pass
}

fn criterion_4_gradient() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let center = DVector::from_fn(16, |_, _| rng.gen_range(-3.0..3.0));
        let stub = Quadratic { center: center.clone() };
        let z = DVector::from_fn(16, |_, _| rng.gen_range(-3.0..3.0));
        let f0 = stub.evaluate(&z).unwrap().value();
        let g = fd_gradient(&stub, &z, f0, GradientMethod::CentralFd, 1e-2).unwrap();
        let exact = (&z - &center) * 2.0;
        worst = worst.max((g - exact).amax());
    }
    let pass = worst < 1e-8;
    report(4, pass, format!("stub harness max abs error {worst:.2e} (< 1e-8); non-FD gradient path: n/a (only finite differences are implemented)"));
    pass
}

fn criterion_5_codec() -> bool {
    use dmrirecon::spectral::{LatentLayout, SpectralCodec};
    let t = Instant::now();
    let c = cylinder();
    let v = c.n_vertices();
    let full = SpectralCodec::build(&c, v, &LatentLayout::default()).unwrap();
    let trunc = full.reconfigured(300, &LatentLayout::default()).unwrap();
    let max_err = |codec: &SpectralCodec, m: &TetMesh| {
        let back = codec.decode(&codec.encode(m).unwrap()).unwrap();
        m.vertices().iter().zip(back.mesh.vertices()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    };
    let (mut round, mut frac) = (0.0f64, 0.0f64);
    for (_, m) in family() {
        round = round.max(max_err(&full, &m));
        let (lo, hi) = m.bounding_box();
        frac = frac.max(max_err(&trunc, &m) / (hi - lo).norm());
    }
    let elapsed = t.elapsed();
    let pass = round < 1e-8 && frac < 0.01 && elapsed < Duration::from_secs(10);
    report(
        5,
        pass,
        format!("full round trip {round:.2e} (< 1e-8); 300 of {v} modes {:.3}% of diagonal (< 1%); {elapsed:.2?} (< 10 s)", 100.0 * frac),
    );
    pass
}

fn criterion_6_metrics() -> bool {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = true;
    for n in [1, 7, 64, 250, 500] {
        for m in [1, 33, 500] {
            let mut cloud = |k: usize| -> Vec<Vec3> {
                // a coarse lattice forces plenty of distance ties
                (0..k).map(|_| Vec3::new(rng.gen_range(0..8) as f64, rng.gen_range(0..8) as f64, rng.gen_range(-3.0..3.0))).collect()
            };
            let (a, b) = (cloud(n), cloud(m));
            exact &= nearest_distances(&a, &b) == nearest_distances_brute(&a, &b);
            exact &= chamfer(&a, &b).unwrap() == chamfer_brute(&a, &b).unwrap();
        }
    }
    let mesh = apply_bend_twist(&cylinder(), 0.5, 0.5);
    let group = transform_group();
    let worst = group.iter().map(|r| modified_chamfer(&transform_about_center(&mesh, r), &mesh).unwrap().distance).fold(0.0, f64::max);
    let elapsed = t.elapsed();
    let pass = exact && worst < 1e-12 && elapsed < Duration::from_secs(10);
    report(
        6,
        pass,
        format!(
            "indexed == brute force: {exact}; modified Chamfer under all {} transforms max {worst:.1e} (< 1e-12); {elapsed:.2?} (< 10 s)",
            group.len()
        ),
    );
    pass
}

struct ReconCheck {
    loss_ratio: f64,
    chamfer_reduction: f64,
    monotone: bool,
    iterations: usize,
    elapsed: Duration,
}

fn reconstruction(protocol: &Protocol, cfg: &ReconConfig) -> ReconCheck {
    let t = Instant::now();
    let init = protocol.init_mesh().unwrap();
    let truth = apply_bend_twist(&init, 0.3, 0.0);
    let n_eig = dmrirecon::inverse::initial_mode_count(&init, &protocol.params, cfg.eigen_solver).unwrap();
    let reference: SignalSet =
        dmrirecon::experiments::simulate_fixed(&truth, &protocol.params, &protocol.scheme().unwrap(), n_eig).unwrap();
    let cfg = ReconConfig { n_eig: Some(n_eig), ..cfg.clone() };
    let opts = ReconOptions { truth: Some(&truth), ..Default::default() };
    let out = reconstruct(&init, &reference, &protocol.params, &cfg, opts).unwrap();
    let first = &out.trace.records[0];
    let best = out.trace.best_so_far();
    ReconCheck {
        loss_ratio: out.best_loss / first.loss,
        chamfer_reduction: 1.0 - modified_chamfer(&out.mesh, &truth).unwrap().distance / first.chamfer.unwrap(),
        monotone: best.windows(2).all(|w| w[1] <= w[0]),
        iterations: out.trace.records.len(),
        elapsed: t.elapsed(),
    }
}

fn check_reconstruction(label: &str, protocol: &Protocol, cfg: &ReconConfig, budget: Duration) -> bool {
    let r = reconstruction(protocol, cfg);
    let pass = r.loss_ratio < 0.05 && r.chamfer_reduction >= 0.5 && r.monotone && r.elapsed < budget;
    report(
        7,
        pass,
        format!(
            "{label}: {} iterations, loss {:.3}% of initial (< 5%), modified Chamfer reduced {:.1}% (>= 50%), best-so-far monotone: {}, {:.0?} (< {budget:?})",
            r.iterations,
            100.0 * r.loss_ratio,
            100.0 * r.chamfer_reduction,
            r.monotone,
            r.elapsed
        ),
    );
    pass
}

/// Eight directions, one diffusion time, b-values 1, 4 and 10 ms/µm².
fn smoke_protocol() -> Protocol {
    Protocol { ndir: 8, diffusion_times: vec![20.0], bvalues: vec![1.0, 4.0, 10.0], ..Default::default() }
}

fn criterion_7_reconstruction_smoke() -> bool {
    let cfg = ReconConfig { max_iters: 150, ..Default::default() };
    check_reconstruction("smoke, 8 directions x 1 sequence", &smoke_protocol(), &cfg, Duration::from_secs(600))
}

fn criterion_7_reconstruction_full() -> bool {
    let cfg = ReconConfig { max_iters: 750, ..Default::default() };
    check_reconstruction("full, 30 directions x 3 sequences", &Protocol::default(), &cfg, Duration::from_secs(7200))
}

fn criterion_8_direction_ablation() -> bool {
    let t = Instant::now();
    let seeds = [1u64, 2, 3];
    let runs: Vec<AblationRun> = [3usize, 15]
        .iter()
        .flat_map(|&ndir| {
            seeds.iter().map(move |&seed| AblationRun {
                label: format!("ndir{ndir}_seed{seed}"),
                truth: DeformSpec::BendTwist { bend: 0.3, twist: 0.0 },
                protocol: Protocol { ndir, rotation_seed: Some(seed), ..smoke_protocol() },
            })
        })
        .collect();
    let cfg = ReconConfig { max_iters: 40, ..Default::default() };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = run_ablations(&runs, &cfg, jobs).unwrap();
    let mean = |ndir: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.ndir == ndir).map(|r| r.final_chamfer).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (few, many) = (mean(3), mean(15));
    let pass = many <= few;
    report(
        8,
        pass,
        format!(
            "mean modified Chamfer over seeds {seeds:?}: 15 directions {many:.4} <= 3 directions {few:.4}; {} iterations each; {:.0?}",
            cfg.max_iters,
            t.elapsed()
        ),
    );
    pass
}
