//! Vanilla plug-and-play fixed-point maps and their plain iteration.
//!
//! * PGD:  `T = D ∘ (I − γ∇f)`
//! * HQS:  `T = D ∘ prox_{μf}`
//! * ADMM: `T = ½(I + (2D − I) ∘ (2 prox_{αf} − I))`
//!
//! Each is a stateless map on a single image.

use std::sync::Arc;

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::forward::{CgSettings, Problem};
use crate::image::Image;
use crate::trace::{drive, IterationTrace, LoopSettings, Step};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Pgd { gamma: f64 },
    Hqs { mu: f64 },
    Admm { alpha: f64 },
}

impl Algorithm {
    fn validate(&self) -> Result<()> {
        match *self {
            // A zero step is a legal (if useless) gradient step.
            Algorithm::Pgd { gamma } if gamma >= 0.0 && gamma.is_finite() => Ok(()),
            Algorithm::Hqs { mu } if mu > 0.0 && mu.is_finite() => Ok(()),
            Algorithm::Admm { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            other => Err(Error::invalid("algorithm", format!("bad parameter in {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pgd { .. } => "pgd",
            Algorithm::Hqs { .. } => "hqs",
            Algorithm::Admm { .. } => "admm",
        }
    }
}

pub struct PnpOperator {
    algorithm: Algorithm,
    problem: Arc<Problem>,
    denoiser: Arc<dyn Denoiser>,
    cg: CgSettings,
}

impl std::fmt::Debug for PnpOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PnpOperator")
            .field("algorithm", &self.algorithm)
            .field("denoiser", &self.denoiser.descriptor())
            .finish()
    }
}

impl PnpOperator {
    pub fn new(
        algorithm: Algorithm,
        problem: Arc<Problem>,
        denoiser: Arc<dyn Denoiser>,
        cg: CgSettings,
    ) -> Result<Self> {
        algorithm.validate()?;
        Ok(Self {
            algorithm,
            problem,
            denoiser,
            cg,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn denoiser(&self) -> &dyn Denoiser {
        self.denoiser.as_ref()
    }

    pub fn eval(&self, x: &Image) -> Result<Image> {
        match self.algorithm {
            Algorithm::Pgd { gamma } => self.pgd(x, gamma),
            Algorithm::Hqs { mu } => self.hqs(x, mu),
            Algorithm::Admm { alpha } => self.admm(x, alpha),
        }
    }

    fn wrong_variant(&self, wanted: &str) -> Error {
        Error::invalid(
            "algorithm",
            format!("operator is {}, not {wanted}", self.algorithm.name()),
        )
    }

    pub fn eval_pgd(&self, x: &Image) -> Result<Image> {
        match self.algorithm {
            Algorithm::Pgd { gamma } => self.pgd(x, gamma),
            _ => Err(self.wrong_variant("pgd")),
        }
    }

    pub fn eval_hqs(&self, x: &Image) -> Result<Image> {
        match self.algorithm {
            Algorithm::Hqs { mu } => self.hqs(x, mu),
            _ => Err(self.wrong_variant("hqs")),
        }
    }

    pub fn eval_admm(&self, x: &Image) -> Result<Image> {
        match self.algorithm {
            Algorithm::Admm { alpha } => self.admm(x, alpha),
            _ => Err(self.wrong_variant("admm")),
        }
    }

    fn denoise(&self, x: &Image) -> Result<Image> {
        let out = self.denoiser.denoise(x)?;
        out.ensure_same_dims(x)?;
        Ok(out)
    }

    fn pgd(&self, x: &Image, gamma: f64) -> Result<Image> {
        self.denoise(&self.problem.gradient_step(x, gamma)?)
    }

    fn hqs(&self, x: &Image, mu: f64) -> Result<Image> {
        self.denoise(&self.problem.prox_f(x, mu, self.cg)?)
    }

    fn admm(&self, x: &Image, alpha: f64) -> Result<Image> {
        let prox = self.problem.prox_f(x, alpha, self.cg)?;
        let reflected = prox.lincomb(2.0, x, -1.0)?;
        let d = self.denoise(&reflected)?;
        // ½(x + 2D(r) − r)
        let mut out = d.lincomb(2.0, &reflected, -1.0)?;
        out.axpy(1.0, x)?;
        Ok(out.scale(0.5))
    }
}

/// `x_{k+1} = T(x_k)` for `settings.iters` steps, with PSNR against
/// `ground_truth` when given.
pub fn vanilla_iterate(
    t: impl Fn(&Image) -> Result<Image>,
    x0: &Image,
    settings: LoopSettings,
    ground_truth: Option<&Image>,
) -> Result<IterationTrace> {
    drive(x0, settings, ground_truth, None, |_, x| Ok(Step::plain(t(x)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{gaussian_smoother, IdentityDenoiser};
    use crate::forward::{gaussian_kernel, ForwardModel};
    use crate::image::Dims;
    use crate::rng::Rng;

    fn blur_problem(n: usize, seed: u64) -> (Arc<Problem>, Rng) {
        let mut rng = Rng::new(seed);
        let dims = Dims::new(n, n, 1);
        let model = ForwardModel::convolution(gaussian_kernel(7, 1.6).unwrap(), dims).unwrap();
        let y = Image::random_uniform(dims, &mut rng);
        (Arc::new(Problem::new(model, y).unwrap()), rng)
    }

    fn op(alg: Algorithm, problem: Arc<Problem>, d: Arc<dyn Denoiser>) -> PnpOperator {
        PnpOperator::new(alg, problem, d, CgSettings::default()).unwrap()
    }

    #[test]
    fn pgd_identity_cases() {
        let (problem, mut rng) = blur_problem(16, 1);
        let x = Image::random_uniform(problem.model().input_dims(), &mut rng);
        let t0 = op(
            Algorithm::Pgd { gamma: 0.0 },
            problem.clone(),
            Arc::new(IdentityDenoiser),
        );
        assert_eq!(t0.eval_pgd(&x).unwrap(), x);

        let t = op(
            Algorithm::Pgd { gamma: 1.3 },
            problem.clone(),
            Arc::new(IdentityDenoiser),
        );
        let g = problem.grad_f(&x).unwrap();
        let want = x.lincomb(1.0, &g, -1.3).unwrap();
        assert!(t.eval(&x).unwrap().distance(&want).unwrap() <= 1e-7);

        let dims = Dims::new(8, 8, 1);
        let y = Image::random_uniform(dims, &mut rng);
        let id_problem = Arc::new(Problem::new(ForwardModel::identity(dims).unwrap(), y.clone()).unwrap());
        let t1 = op(Algorithm::Pgd { gamma: 1.0 }, id_problem, Arc::new(IdentityDenoiser));
        let x = Image::random_uniform(dims, &mut rng);
        assert!(t1.eval(&x).unwrap().distance(&y).unwrap() < 1e-15);
    }

    #[test]
    fn hqs_closed_form_and_limits() {
        let mut rng = Rng::new(2);
        let dims = Dims::new(8, 8, 1);
        let y = Image::random_uniform(dims, &mut rng);
        let x = Image::random_uniform(dims, &mut rng);
        let id_problem = Arc::new(Problem::new(ForwardModel::identity(dims).unwrap(), y.clone()).unwrap());
        let mu = 2.0;
        let t = op(Algorithm::Hqs { mu }, id_problem, Arc::new(IdentityDenoiser));
        let want = y.lincomb(mu / (mu + 1.0), &x, 1.0 / (mu + 1.0)).unwrap();
        assert!(t.eval_hqs(&x).unwrap().distance(&want).unwrap() < 1e-7);

        let (problem, mut rng) = blur_problem(16, 3);
        let d: Arc<dyn Denoiser> = Arc::new(gaussian_smoother(1.0).unwrap());
        let x = Image::random_uniform(problem.model().input_dims(), &mut rng);
        let t = op(Algorithm::Hqs { mu: 1e-8 }, problem, d.clone());
        assert!(t.eval(&x).unwrap().distance(&d.denoise(&x).unwrap()).unwrap() < 1e-4);
    }

    #[test]
    fn admm_reductions() {
        let (problem, mut rng) = blur_problem(16, 4);
        let x = Image::random_uniform(problem.model().input_dims(), &mut rng);
        let alpha = 0.8;
        let t = op(Algorithm::Admm { alpha }, problem.clone(), Arc::new(IdentityDenoiser));
        let prox = problem.prox_f(&x, alpha, CgSettings::default()).unwrap();
        assert!(t.eval_admm(&x).unwrap().distance(&prox).unwrap() < 1e-12);

        // prox_{αf} -> I as α -> 0, leaving T ≈ D.
        let d: Arc<dyn Denoiser> = Arc::new(gaussian_smoother(1.2).unwrap());
        let t = op(Algorithm::Admm { alpha: 1e-8 }, problem.clone(), d.clone());
        assert!(t.eval(&x).unwrap().distance(&d.denoise(&x).unwrap()).unwrap() < 1e-5);

        // Hand composition of the reflections.
        let t = op(Algorithm::Admm { alpha }, problem.clone(), d.clone());
        let r = prox.scale(2.0).sub(&x).unwrap();
        let refl_d = d.denoise(&r).unwrap().scale(2.0).sub(&r).unwrap();
        let want = x.add(&refl_d).unwrap().scale(0.5);
        let got = t.eval(&x).unwrap();
        assert!(got.data().iter().zip(want.data()).all(|(a, b)| (a - b).abs() < 1e-7));
    }

    #[test]
    fn wrong_variant_and_bad_params() {
        let (problem, _) = blur_problem(8, 5);
        let t = op(Algorithm::Hqs { mu: 1.0 }, problem.clone(), Arc::new(IdentityDenoiser));
        let x = Image::zeros(problem.model().input_dims());
        assert!(t.eval_pgd(&x).is_err());
        assert!(t.eval_admm(&x).is_err());
        for alg in [
            Algorithm::Pgd { gamma: -1.0 },
            Algorithm::Hqs { mu: 0.0 },
            Algorithm::Admm { alpha: f64::NAN },
        ] {
            assert!(PnpOperator::new(alg, problem.clone(), Arc::new(IdentityDenoiser), CgSettings::default()).is_err());
        }
    }

    #[test]
    fn iterate_zero_and_geometric() {
        let dims = Dims::new(8, 8, 1);
        let x0 = Image::filled(dims, 1.0);
        let t = vanilla_iterate(|x| Ok(x.scale(0.5)), &x0, LoopSettings::new(0), None).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.final_iterate, x0);

        let t = vanilla_iterate(|x| Ok(x.scale(0.5)), &x0, LoopSettings::new(6), None).unwrap();
        assert_eq!(t.entries.len(), 7);
        let mut norm = x0.norm();
        for e in &t.entries[1..] {
            norm *= 0.5;
            assert!((e.residual.unwrap() - norm).abs() < 1e-12);
        }
        assert!((t.final_iterate.norm() - norm).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_flagged_not_thrown() {
        let dims = Dims::new(4, 4, 1);
        let x0 = Image::filled(dims, 1.0);
        let t = vanilla_iterate(|x| Ok(x.scale(10.0)), &x0, LoopSettings::new(100), Some(&x0)).unwrap();
        assert!(t.diverged);
        assert_eq!(t.completed_iterations(), 7);
        assert!(t.entries.last().unwrap().diverged);
        let t = vanilla_iterate(|x| Ok(x.map(|_| f64::NAN)), &x0, LoopSettings::new(5), Some(&x0)).unwrap();
        assert!(t.diverged && t.entries[1].psnr.is_none());
    }
}
