use std::sync::Arc;

use vista_core::analysis::{linear_operator_norm_tol, LinearOperator, NormEstimate, SelfAdjoint};
use vista_core::denoise::*;
use vista_core::experiment::builtin_image;
use vista_core::forward::{gaussian_kernel, CgSettings, ForwardModel, Problem};
use vista_core::image::add_gaussian_noise;
use vista_core::pnp::{vanilla_iterate, Algorithm, PnpOperator};
use vista_core::trace::{summarize, IterationTrace, LoopSettings, TraceEntry};
use vista_core::vista::*;
use vista_core::{Dims, Image, Result, Rng};

fn norm_of<L: LinearOperator>(op: &L, dims: Dims) -> f64 {
    let NormEstimate { norm, .. } = linear_operator_norm_tol(op, dims, 20_000, 1e-13).unwrap();
    norm
}

fn gray(n: usize) -> Dims {
    Dims::new(n, n, 1)
}

struct Deblur {
    problem: Arc<Problem>,
    truth: Image,
    x0: Image,
}

fn deblur(n: usize, noise: f64, seed: u64) -> Deblur {
    let truth = builtin_image("shapes", n).unwrap();
    let model = ForwardModel::convolution(gaussian_kernel(25, 1.6).unwrap(), truth.dims()).unwrap();
    let y = add_gaussian_noise(&model.apply(&truth).unwrap(), noise, &mut Rng::new(seed)).unwrap();
    Deblur {
        problem: Arc::new(Problem::new(model, y.clone()).unwrap()),
        truth,
        x0: y,
    }
}

fn pnp(d: &Deblur, alg: Algorithm, den: Arc<dyn Denoiser>) -> PnpOperator {
    PnpOperator::new(alg, d.problem.clone(), den, CgSettings::default()).unwrap()
}

/// `W_guide ∘ (I − 1.9∇f)` with weights frozen on `guide`.
fn s_nlm(problem: Arc<Problem>, guide: &Image) -> impl Fn(&Image) -> Result<Image> {
    let w = dsg_nlm_denoiser(build_dsg_weights(guide, NlmParams::standard()).unwrap());
    move |x: &Image| w.denoise(&problem.gradient_step(x, 1.9)?)
}

/// Cyclic shift by one pixel in each direction: an isometry.
fn roll(x: &Image) -> Image {
    let (h, w) = (x.height(), x.width());
    Image::from_fn(x.dims(), |y, xx, c| x.get((y + h - 1) % h, (xx + 1) % w, c))
}

#[test]
fn theta_zero_is_vanilla() {
    let d = deblur(32, 0.01, 1);
    let t = pnp(
        &d,
        Algorithm::Pgd { gamma: 1.0 },
        Arc::new(gaussian_smoother(1.0).unwrap()),
    );
    let s = s_nlm(d.problem.clone(), &d.x0);
    let cfg = ViscosityConfig::adaptive(0.5).with_schedule(Schedule::Constant(0.0));
    let settings = LoopSettings::new(40);
    let vista = vista_iterate(|x| t.eval(x), &s, &d.x0, settings, &cfg, Some(&d.truth)).unwrap();
    let plain = vanilla_iterate(|x| t.eval(x), &d.x0, settings, Some(&d.truth)).unwrap();
    assert_eq!(vista.trace.entries.len(), plain.entries.len());
    for (a, b) in vista.trace.entries.iter().zip(&plain.entries) {
        assert!((a.psnr.unwrap() - b.psnr.unwrap()).abs() <= 1e-12);
        assert!((a.residual.unwrap_or(0.0) - b.residual.unwrap_or(0.0)).abs() <= 1e-12);
    }
    let gap = vista.trace.final_iterate.distance(&plain.final_iterate).unwrap();
    assert!(gap <= 1e-12 * plain.final_iterate.norm());
}

#[test]
fn theta_one_is_iterating_s() {
    let d = deblur(32, 0.01, 2);
    let t = pnp(
        &d,
        Algorithm::Pgd { gamma: 1.0 },
        Arc::new(unsharp_expansive(2.0, 1.5).unwrap()),
    );
    let s = s_nlm(d.problem.clone(), &d.x0);
    let cfg = ViscosityConfig::adaptive(0.5).with_schedule(Schedule::Constant(1.0));
    let settings = LoopSettings::new(40);
    let vista = vista_iterate(|x| t.eval(x), &s, &d.x0, settings, &cfg, Some(&d.truth)).unwrap();
    let plain = vanilla_iterate(&s, &d.x0, settings, Some(&d.truth)).unwrap();
    assert!(!vista.trace.diverged);
    for (a, b) in vista.trace.entries.iter().zip(&plain.entries) {
        assert!((a.psnr.unwrap() - b.psnr.unwrap()).abs() <= 1e-12);
    }
    let gap = vista.trace.final_iterate.distance(&plain.final_iterate).unwrap();
    assert!(gap <= 1e-12 * plain.final_iterate.norm());
}

#[test]
fn combined_linear_map_contracts() {
    // T = 1.3·G (G a normalized Gaussian smoother, so ‖T‖ = 1.3 at DC),
    // S = 0.5·I; both fix p = 0.
    let g = gaussian_smoother(1.0).unwrap();
    let t = |x: &Image| Ok(g.denoise(x)?.scale(1.3));
    let s = scaled_identity(0.5).unwrap();
    let dims = gray(16);
    let beta_t = norm_of(&SelfAdjoint(t), dims);
    assert!((beta_t - 1.3).abs() < 1e-6);

    let theta = 0.4;
    let combined = SelfAdjoint(|x: &Image| t(x)?.lincomb(1.0 - theta, &s.denoise(x)?, theta));
    let norm = norm_of(&combined, dims);
    assert!((norm - 0.98).abs() < 1e-6 && norm <= 0.98 + 1e-9, "{norm}");

    let x0 = Image::random_uniform(dims, &mut Rng::new(7));
    let cfg = ViscosityConfig::adaptive(0.5).with_schedule(Schedule::Constant(theta));
    let run = vista_iterate(t, |x| s.denoise(x), &x0, LoopSettings::new(100), &cfg, None).unwrap();
    assert!(run.fixed_point.point.norm() < 1e-3 * x0.norm());
    // Distances are measured to the computed p, which is only approximately 0.
    let dists: Vec<f64> = run.trace.entries.iter().map(|e| e.dist_to_p.unwrap()).collect();
    let p_err = run.fixed_point.point.norm();
    for w in dists.windows(2) {
        assert!(w[1] <= 0.98 * w[0] + 2.0 * p_err + 1e-12, "{} -> {}", w[0], w[1]);
    }
    let x100 = &run.trace.final_iterate;
    assert!(x100.norm() <= 0.98f64.powi(100) * x0.norm() * (1.0 + 1e-9));
}

#[test]
fn contraction_threshold_matches_constants() {
    let g = gaussian_smoother(1.0).unwrap();
    let dims = gray(16);
    let beta_t = norm_of(&SelfAdjoint(|x: &Image| Ok(g.denoise(x)?.scale(1.3))), dims);
    let beta_s = norm_of(&scaled_identity(0.5).unwrap(), dims);
    let theta0 = (beta_t - 1.0) / (beta_t - beta_s);
    let norm_at = |theta: f64| {
        let m = SelfAdjoint(|x: &Image| g.denoise(x)?.lincomb(1.3 * (1.0 - theta), x, 0.5 * theta));
        norm_of(&m, dims)
    };
    for theta in [theta0 + 0.01, 0.5, 0.9] {
        assert!(norm_at(theta) < 1.0, "theta {theta}");
    }
    assert!(norm_at(theta0 - 0.05) > 1.0);
}

#[test]
fn synthetic_boundedness_at_critical_theta() {
    let dims = gray(12);
    let mut rng = Rng::new(11);
    let p = Image::random_uniform(dims, &mut rng);
    let (eta, beta) = (1.5, 0.5);
    // ‖T(x) − p‖ = η‖x − p‖ and ‖S(x) − p‖ = β‖x − p‖ exactly.
    let t = |x: &Image| p.add(&roll(&x.sub(&p)?).scale(eta));
    let s = |x: &Image| p.lincomb(1.0, &x.sub(&p)?, beta);
    let theta = (eta - 1.0) / (eta - beta);
    let mut cfg = ViscosityConfig::adaptive(0.9).with_schedule(Schedule::Constant(theta));
    cfg.fixed_point = FixedPointSettings {
        tol: 1e-15,
        max_iter: 200,
    };
    let x0 = p.add(&Image::random_normal(dims, &mut rng)).unwrap();
    let run = vista_iterate(t, s, &x0, LoopSettings::new(1000), &cfg, None).unwrap();
    assert_eq!(run.trace.completed_iterations(), 1000);
    let d0 = x0.distance(&p).unwrap();
    for e in &run.trace.entries {
        assert!(e.dist_to_p.unwrap() <= d0 * (1.0 + 1e-9), "k {}", e.k);
    }

    // The adaptive rule lands on the same θ here, and every step obeys the
    // per-step bound.
    cfg.schedule = Schedule::Adaptive;
    let run = vista_iterate(t, s, &x0, LoopSettings::new(1000), &cfg, None).unwrap();
    for e in &run.trace.entries[1..] {
        assert!((e.theta.unwrap() - theta).abs() < 1e-9 || e.near_p);
        assert!(e.dist_to_p.unwrap() <= d0 * (1.0 + 1e-9));
    }
    assert!(distance_bound_violations(&run.trace, 1e-6).is_empty());
}

#[test]
fn adaptive_theta_stays_in_range_and_obeys_bound() {
    let d = deblur(48, 0.01, 3);
    let t = pnp(
        &d,
        Algorithm::Pgd { gamma: 1.0 },
        Arc::new(unsharp_expansive(1.5, 0.4).unwrap()),
    );
    let s = s_nlm(d.problem.clone(), &d.x0);
    let cap = 0.2;
    let run = vista_iterate(
        |x| t.eval(x),
        &s,
        &d.x0,
        LoopSettings::new(150),
        &ViscosityConfig::adaptive(cap),
        Some(&d.truth),
    )
    .unwrap();
    assert!(!run.trace.diverged);
    assert!(run.trace.entries[0].theta.is_none());
    let mut active = 0;
    for e in &run.trace.entries[1..] {
        let th = e.theta.unwrap();
        assert!((0.0..=cap).contains(&th));
        if th > 0.0 {
            active += 1;
        }
        if e.eta.unwrap() <= 1.0 && !e.near_p {
            assert_eq!(th, 0.0);
        }
    }
    assert!(active > 0);
    assert!(distance_bound_violations(&run.trace, 1e-6).is_empty());
}

#[test]
fn reciprocal_schedule() {
    let d = deblur(16, 0.01, 4);
    let t = pnp(
        &d,
        Algorithm::Pgd { gamma: 1.0 },
        Arc::new(gaussian_smoother(1.0).unwrap()),
    );
    let s = s_nlm(d.problem.clone(), &d.x0);
    let cfg = ViscosityConfig::adaptive(0.3).with_schedule(Schedule::Reciprocal);
    let run = vista_iterate(|x| t.eval(x), &s, &d.x0, LoopSettings::new(10), &cfg, None).unwrap();
    for e in &run.trace.entries[1..] {
        assert_eq!(e.theta.unwrap(), (1.0 / e.k as f64).min(0.3));
    }
}

#[test]
fn viscosity_index_cases() {
    let dims = gray(4);
    let p = Image::zeros(dims);
    let x = Image::filled(dims, 1.0);
    let (tx, sx) = (x.scale(1.5), x.scale(0.5));
    let idx = viscosity_index(&x, &tx, &sx, &p, 0.9, 1e-3).unwrap();
    assert!((idx.theta - 0.5).abs() < 1e-15);
    assert_eq!(idx.eta, Some(1.5));
    assert_eq!(idx.beta, Some(0.5));
    assert_eq!(viscosity_index(&x, &tx, &sx, &p, 0.1, 1e-3).unwrap().theta, 0.1);
    for beta in [0.1, 0.5, 2.0] {
        let i = viscosity_index(&x, &x.scale(0.9), &x.scale(beta), &p, 0.7, 1e-3).unwrap();
        assert_eq!(i.theta, 0.0);
    }
    let at_p = viscosity_index(&p, &tx, &sx, &p, 0.3, 1e-3).unwrap();
    assert_eq!(at_p.theta, 0.3);
    assert!(at_p.near_p);
    let degenerate = viscosity_index(&x, &tx, &x.scale(1.6), &p, 0.25, 1e-3).unwrap();
    assert_eq!(degenerate.theta, 0.25);
    assert!(degenerate.degenerate);
    // Just inside the neighborhood: the cap, with ratios still reported.
    let close = Image::filled(dims, 1e-4 / 4.0);
    let i = viscosity_index(&close, &close.scale(1.5), &close.scale(0.5), &p, 0.2, 1e-3).unwrap();
    assert!(i.near_p && i.theta == 0.2 && i.eta.is_some());
}

#[test]
fn fixed_point_examples() {
    let dims = gray(8);
    let ones = Image::filled(dims, 1.0);
    let s = scaled_identity(0.95).unwrap();
    let fp = fixed_point(
        |x| s.denoise(x),
        &ones,
        FixedPointSettings {
            tol: 1e-4,
            max_iter: 1000,
        },
    )
    .unwrap();
    assert!(fp.converged);
    assert!(fp.point.norm() < 3e-3);

    let fp = fixed_point(|x| Ok(x.clone()), &ones, FixedPointSettings::default()).unwrap();
    assert_eq!((fp.iterations, fp.residual), (1, 0.0));
    assert_eq!(fp.point, ones);

    let c = Image::random_uniform(dims, &mut Rng::new(1));
    let target = c.scale(2.0);
    let affine = |x: &Image| x.lincomb(0.5, &c, 1.0);
    let mut x = Image::zeros(dims);
    let mut err = x.distance(&target).unwrap();
    for _ in 0..20 {
        x = affine(&x).unwrap();
        let e = x.distance(&target).unwrap();
        assert!((e - 0.5 * err).abs() <= 1e-12 * err.max(1.0));
        err = e;
    }
    let fp = fixed_point(
        affine,
        &Image::zeros(dims),
        FixedPointSettings {
            tol: 1e-12,
            max_iter: 100,
        },
    )
    .unwrap();
    assert!(fp.point.distance(&target).unwrap() < 1e-10);

    // Non-convergence is reported, not an error.
    let fp = fixed_point(|x| s.denoise(x), &ones, FixedPointSettings { tol: 1e-9, max_iter: 3 }).unwrap();
    assert!(!fp.converged && fp.iterations == 3 && fp.residual > 0.0);
}

#[test]
fn expansive_pgd_diverges() {
    let d = deblur(64, 0.01, 5);
    let t = pnp(
        &d,
        Algorithm::Pgd { gamma: 1.0 },
        Arc::new(unsharp_expansive(2.0, 1.5).unwrap()),
    );
    let trace = vanilla_iterate(|x| t.eval(x), &d.x0, LoopSettings::new(500), Some(&d.truth)).unwrap();
    assert!(trace.diverged);
    assert!(trace.completed_iterations() < 500);
    assert!(trace.entries.last().unwrap().diverged);
    assert_eq!(trace.entries.len(), trace.completed_iterations() + 1);
    let s = summarize(&trace, 500).unwrap();
    assert!(s.diverged && s.asymptotic_truncated);
}

#[test]
fn vanilla_basics() {
    let dims = gray(8);
    let x0 = Image::random_uniform(dims, &mut Rng::new(3));
    let tr = vanilla_iterate(|x| Ok(x.scale(0.5)), &x0, LoopSettings::new(0), None).unwrap();
    assert_eq!(tr.entries.len(), 1);
    assert_eq!(tr.final_iterate, x0);
    let tr = vanilla_iterate(|x| Ok(x.scale(0.5)), &x0, LoopSettings::new(10), None).unwrap();
    assert!((tr.final_iterate.norm() - x0.norm() / 1024.0).abs() < 1e-15);
    for (k, e) in tr.entries.iter().enumerate() {
        assert_eq!(e.k, k);
    }
}

#[test]
fn all_linear_operators_are_affine() {
    let d = deblur(24, 0.01, 6);
    let mut rng = Rng::new(8);
    let x1 = Image::random_uniform(d.x0.dims(), &mut rng);
    let x2 = Image::random_uniform(d.x0.dims(), &mut rng);
    let mid = x1.lincomb(0.5, &x2, 0.5).unwrap();
    let den: Arc<dyn Denoiser> = Arc::new(gaussian_smoother(1.2).unwrap());
    for alg in [
        Algorithm::Pgd { gamma: 1.0 },
        Algorithm::Hqs { mu: 0.5 },
        Algorithm::Admm { alpha: 2.0 },
    ] {
        let t = pnp(&d, alg, den.clone());
        let lhs = t.eval(&mid).unwrap();
        let rhs = t.eval(&x1).unwrap().lincomb(0.5, &t.eval(&x2).unwrap(), 0.5).unwrap();
        assert!(lhs.distance(&rhs).unwrap() <= 1e-6 * rhs.norm(), "{}", alg.name());
        assert_eq!(t.eval(&x1).unwrap(), t.eval(&x1).unwrap());
    }
}

#[test]
fn determinism() {
    let go = || {
        let d = deblur(32, 0.02, 9);
        let t = pnp(
            &d,
            Algorithm::Hqs { mu: 1.0 },
            Arc::new(NlmDenoiser {
                params: NlmParams::standard(),
            }),
        );
        let s = s_nlm(d.problem.clone(), &d.x0);
        let run = vista_iterate(
            |x| t.eval(x),
            &s,
            &d.x0,
            LoopSettings::new(20),
            &ViscosityConfig::adaptive(0.2),
            Some(&d.truth),
        )
        .unwrap();
        (run.trace.to_csv_string(), run.trace.final_iterate)
    };
    let (a, xa) = go();
    let (b, xb) = go();
    assert_eq!(a, b);
    assert!(xa.data().iter().zip(xb.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn summarize_examples() {
    let trace = |ps: &[f64]| IterationTrace {
        entries: ps
            .iter()
            .enumerate()
            .map(|(k, &v)| TraceEntry {
                k,
                psnr: Some(v),
                ..TraceEntry::default()
            })
            .collect(),
        diverged: false,
        bridge_failed: false,
        failure: None,
        wall_seconds: 0.0,
        final_iterate: Image::zeros(gray(1)),
        peak_iterate: None,
    };
    let s = summarize(&trace(&[20.0, 25.0, 22.0]), 2).unwrap();
    assert_eq!((s.peak_psnr, s.peak_iter, s.asymptotic_psnr), (25.0, 1, 22.0));
    let s = summarize(&trace(&[1.0, 2.0, 3.0]), 2).unwrap();
    assert_eq!(s.peak_psnr, s.asymptotic_psnr);
    assert!(summarize(&trace(&[]), 0).is_err());
}
