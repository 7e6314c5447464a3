//! Closed-form optimal denoiser for Gaussian data, used to validate the
//! sampling loop against known output moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::real::Real;

use super::{Conditioning, Denoiser, NoiseSchedule};

/// For x0 ~ N(μ, Σ) and x_t = √ᾱ x0 + √(1−ᾱ) ε, the posterior mean of the
/// clean sample is
///
///   E[x0 | x_t] = μ + √ᾱ · Σ (ᾱ Σ + (1−ᾱ) I)⁻¹ (x_t − √ᾱ μ),
///
/// the best possible x0 prediction in mean-square. Each frame row is
/// treated as an independent draw; conditioning is ignored.
pub struct GaussianOracleDenoiser<S> {
    mu: DVector<S>,
    sigma: DMatrix<S>,
    schedule: NoiseSchedule<S>,
}

impl<S: Real> GaussianOracleDenoiser<S> {
    pub fn new(mu: DVector<S>, sigma: DMatrix<S>, schedule: NoiseSchedule<S>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::ShapeMismatch(
                "covariance must be square and match the mean".into(),
            ));
        }
        if !mu.iter().chain(sigma.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("oracle moments must be finite"));
        }
        for i in 0..d {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > S::c(1e-12) {
                    return Err(Error::invalid("covariance must be symmetric"));
                }
            }
        }
        Ok(GaussianOracleDenoiser {
            mu,
            sigma,
            schedule,
        })
    }
}

impl<S: Real> Denoiser<S> for GaussianOracleDenoiser<S> {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn denoise(
        &self,
        x_t: &[S],
        frames: usize,
        t: usize,
        _cond: &Conditioning<S>,
    ) -> Result<Vec<S>> {
        let d = self.mu.len();
        if x_t.len() != frames * d {
            return Err(Error::ShapeMismatch("sample length must be frames × dim".into()));
        }
        if t == 0 || t > self.schedule.steps {
            return Err(Error::invalid("timestep outside the schedule"));
        }
        let ab = self.schedule.alpha_bar[t];
        let sa = ab.sqrt();
        let system = &self.sigma * ab + DMatrix::identity(d, d) * (S::ONE - ab);
        let lu = system.lu();
        let mut out = Vec::with_capacity(x_t.len());
        for row in x_t.chunks(d) {
            let x = DVector::from_row_slice(row);
            let rhs = &x - &self.mu * sa;
            let y = lu
                .solve(&rhs)
                .ok_or_else(|| Error::invalid("singular denoising system"))?;
            let x0 = &self.mu + (&self.sigma * y) * sa;
            out.extend(x0.iter().copied());
        }
        Ok(out)
    }
}
