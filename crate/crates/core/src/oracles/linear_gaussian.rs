use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, RngStream, Tensor};

/// Linear-Gaussian generative model `z ~ N(0, I)`, `x | z ~ N(W z + b, gamma² I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianVae {
    /// Decoder weight, `[d_X, d_Z]`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub gamma: f64,
}

/// Multivariate normal given by its mean and covariance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    /// Row-major `[d, d]`.
    pub covariance: Vec<f64>,
}

pub(crate) fn to_matrix(t: &Tensor<f64>) -> Result<DMatrix<f64>> {
    if t.rank() != 2 {
        return Err(Error::shape(format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok(DMatrix::from_row_slice(t.rows(), t.cols(), t.data()))
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl LinearGaussianVae {
    pub fn new(w: &Tensor<f64>, b: &Tensor<f64>, gamma: f64) -> Result<Self> {
        let w = to_matrix(w)?;
        if b.len() != w.nrows() {
            return Err(Error::shape("bias length must equal d_X"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("linear-Gaussian model needs finite W and gamma > 0"));
        }
        Ok(Self {
            w,
            b: DVector::from_column_slice(b.data()),
            gamma,
        })
    }

    /// Random instance with standard normal weights and bias.
    pub fn random(data_dim: usize, latent_dim: usize, gamma: f64, rng: &mut RngStream) -> Result<Self> {
        let w: Tensor<f64> = gaussian_sample(rng, &[data_dim, latent_dim]);
        let b: Tensor<f64> = gaussian_sample(rng, &[data_dim]);
        Self::new(&w, &b, gamma)
    }

    pub fn data_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    fn check_x(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.data_dim() {
            return Err(Error::shape(format!("x has {} entries, model has {}", x.len(), self.data_dim())));
        }
        Ok(DVector::from_column_slice(x))
    }

    /// `log N(x; b, W Wᵀ + gamma² I)`.
    pub fn log_evidence(&self, x: &[f64]) -> Result<f64> {
        let xv = self.check_x(x)?;
        let d = self.data_dim();
        let cov = &self.w * self.w.transpose() + DMatrix::identity(d, d) * self.gamma.powi(2);
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::NonFinite("marginal covariance".into()))?;
        let r = xv - &self.b;
        let sol = chol.solve(&r);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&sol)))
    }

    /// Textbook posterior for `beta = 1`, written through the marginal
    /// covariance rather than the latent precision.
    pub fn exact_posterior(&self, x: &[f64]) -> Result<Gaussian> {
        let xv = self.check_x(x)?;
        let (d, k) = (self.data_dim(), self.latent_dim());
        let c = &self.w * self.w.transpose() + DMatrix::identity(d, d) * self.gamma.powi(2);
        let c_inv = c
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("marginal covariance inverse".into()))?;
        let gain = self.w.transpose() * c_inv;
        let mean = &gain * (xv - &self.b);
        let cov = DMatrix::identity(k, k) - &gain * &self.w;
        Ok(Gaussian {
            mean: mean.as_slice().to_vec(),
            covariance: row_major(&cov),
        })
    }
}

/// Normalised density proportional to `p(z) p(x|z)^(1/beta)`.
pub fn tempered_posterior(lg: &LinearGaussianVae, x: &[f64], beta: f64) -> Result<Gaussian> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    let xv = lg.check_x(x)?;
    let k = lg.latent_dim();
    let s = 1.0 / (beta * lg.gamma.powi(2));
    let precision = DMatrix::identity(k, k) + lg.w.transpose() * &lg.w * s;
    let cov = precision
        .try_inverse()
        .ok_or_else(|| Error::NonFinite("tempered precision is singular".into()))?;
    let mean = &cov * lg.w.transpose() * (xv - &lg.b) * s;
    Ok(Gaussian {
        mean: mean.as_slice().to_vec(),
        covariance: row_major(&cov),
    })
}

/// Number of free parameters of the full-covariance Gaussian family in
/// `d` dimensions: mean, strictly-lower Cholesky entries, log-diagonal.
pub fn family_size(d: usize) -> usize {
    d + d * (d - 1) / 2 + d
}

/// Packs `(mean, covariance)` as `[mean, lower entries row by row, ln diag(L)]`.
pub fn pack_gaussian(g: &Gaussian) -> Result<Vec<f64>> {
    let d = g.mean.len();
    let cov = DMatrix::from_row_slice(d, d, &g.covariance);
    let l = cov
        .cholesky()
        .ok_or_else(|| Error::domain("covariance is not positive definite"))?
        .l();
    let mut p = g.mean.clone();
    for i in 0..d {
        for j in 0..i {
            p.push(l[(i, j)]);
        }
    }
    p.extend((0..d).map(|i| l[(i, i)].ln()));
    Ok(p)
}

fn unpack_cholesky(params: &[f64], d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    let mut at = d;
    for i in 0..d {
        for j in 0..i {
            l[(i, j)] = params[at];
            at += 1;
        }
    }
    for i in 0..d {
        l[(i, i)] = params[at + i].exp();
    }
    l
}

/// Closed-form `E_q[log p(x|z)] - beta KL(q || N(0, I))` for the packed
/// Gaussian `q`.
pub fn beta_elbo(lg: &LinearGaussianVae, x: &[f64], beta: f64, params: &[f64]) -> Result<f64> {
    let xv = lg.check_x(x)?;
    let k = lg.latent_dim();
    if params.len() != family_size(k) {
        return Err(Error::shape("packed Gaussian has the wrong length"));
    }
    let m = DVector::from_column_slice(&params[..k]);
    let l = unpack_cholesky(params, k);
    let g2 = lg.gamma.powi(2);
    let d = lg.data_dim() as f64;
    let r = xv - &lg.b - &lg.w * &m;
    let wl = &lg.w * &l;
    let recon = -0.5 * d * (2.0 * std::f64::consts::PI * g2).ln() - (r.norm_squared() + wl.norm_squared()) / (2.0 * g2);
    let log_diag: f64 = params[params.len() - k..].iter().sum();
    let kl = 0.5 * (l.norm_squared() + m.norm_squared() - k as f64 - 2.0 * log_diag);
    Ok(recon - beta * kl)
}

/// [`beta_elbo`] and its gradient, recorded on the autodiff graph.
pub fn beta_elbo_gradient(lg: &LinearGaussianVae, x: &[f64], beta: f64, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = lg.latent_dim();
    let dx = lg.data_dim();
    if params.len() != family_size(k) || x.len() != dx {
        return Err(Error::shape("beta_elbo_gradient operand sizes"));
    }
    let n_off = k * (k - 1) / 2;
    // Constant lifts: ell = P_off * off + P_diag * exp(log_diag) is row-major L.
    let mut p_off = vec![0.0; k * k * n_off];
    let mut p_diag = vec![0.0; k * k * k];
    let mut at = 0;
    for i in 0..k {
        for j in 0..i {
            p_off[(i * k + j) * n_off + at] = 1.0;
            at += 1;
        }
        p_diag[(i * k + i) * k + i] = 1.0;
    }
    // vec(W L) = (W ⊗ I) vec(L) in row-major order.
    let mut kron = vec![0.0; dx * k * k * k];
    for i in 0..dx {
        for j in 0..k {
            for c in 0..k {
                kron[(i * k + c) * (k * k) + j * k + c] = lg.w[(i, j)];
            }
        }
    }
    let w_rows: Vec<f64> = row_major(&lg.w);
    let centred: Vec<f64> = x.iter().zip(lg.b.iter()).map(|(a, b)| a - b).collect();
    let g2 = lg.gamma.powi(2);

    let mut g = Graph::<f64>::new();
    let theta = g.leaf(Tensor::vector(params.to_vec()));
    let m = g.slice(theta, 0, k)?;
    let log_diag = g.slice(theta, k + n_off, k + n_off + k)?;
    let diag = g.exp(log_diag);
    let pd = g.constant(Tensor::matrix(k * k, k, p_diag)?);
    let mut ell = g.matmul(pd, diag)?;
    if n_off > 0 {
        let off = g.slice(theta, k, k + n_off)?;
        let po = g.constant(Tensor::matrix(k * k, n_off, p_off)?);
        let lo = g.matmul(po, off)?;
        ell = g.add(ell, lo)?;
    }
    let wc = g.constant(Tensor::matrix(dx, k, w_rows)?);
    let xc = g.constant(Tensor::vector(centred));
    let wm = g.matmul(wc, m)?;
    let r = g.sub(xc, wm)?;
    let r2 = g.square(r);
    let r2 = g.sum(r2);
    let kc = g.constant(Tensor::matrix(dx * k, k * k, kron)?);
    let wl = g.matmul(kc, ell)?;
    let wl2 = g.square(wl);
    let wl2 = g.sum(wl2);
    let fit = g.add(r2, wl2)?;
    let fit = g.scale(fit, -1.0 / (2.0 * g2));
    let recon = g.add_scalar(fit, -0.5 * dx as f64 * (2.0 * std::f64::consts::PI * g2).ln());
    let l2 = g.square(ell);
    let l2 = g.sum(l2);
    let m2 = g.square(m);
    let m2 = g.sum(m2);
    let ld = g.sum(log_diag);
    let ld2 = g.scale(ld, 2.0);
    let kl = g.add(l2, m2)?;
    let kl = g.sub(kl, ld2)?;
    let kl = g.add_scalar(kl, -(k as f64));
    let kl = g.scale(kl, 0.5 * beta);
    let elbo = g.sub(recon, kl)?;
    let grads = g.backward(elbo)?;
    Ok((g.value(elbo).item(), grads.wrt(theta).into_data()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub beta: f64,
    pub gradient_norm: f64,
    pub stationary: bool,
    pub perturbations: usize,
    /// Largest `elbo(perturbed) - elbo(optimum)` seen; negative when every
    /// perturbation lowered the objective.
    pub worst_change: f64,
    /// First perturbed parameter vector that did not lower the objective.
    pub counterexample: Option<Vec<f64>>,
    pub passed: bool,
}

/// Checks that the tempered posterior maximises the beta-ELBO over the
/// full-covariance Gaussian family: the gradient vanishes there (within
/// `tol`) and `perturbations` random moves of size `scale` all decrease it.
pub fn verify_theorem2(
    lg: &LinearGaussianVae,
    x: &[f64],
    beta: f64,
    tol: f64,
    perturbations: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<Theorem2Report> {
    let opt = pack_gaussian(&tempered_posterior(lg, x, beta)?)?;
    let (value, grad) = beta_elbo_gradient(lg, x, beta, &opt)?;
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut worst_change = f64::NEG_INFINITY;
    let mut counterexample = None;
    for _ in 0..perturbations {
        let p: Vec<f64> = opt.iter().map(|&v| v + scale * rng.normal()).collect();
        let change = beta_elbo(lg, x, beta, &p)? - value;
        worst_change = worst_change.max(change);
        if !(change < 0.0) && counterexample.is_none() {
            counterexample = Some(p);
        }
    }
    let stationary = gradient_norm < tol;
    Ok(Theorem2Report {
        beta,
        gradient_norm,
        stationary,
        perturbations,
        worst_change,
        passed: stationary && counterexample.is_none(),
        counterexample,
    })
}

/// Largest average log-evidence a linear-Gaussian model with `latent_dim`
/// factors and fixed noise `gamma` can reach on `data` (rows are points).
///
/// The optimum matches every sample-covariance eigenvalue above `gamma²`
/// among the top `latent_dim` and leaves the rest at `gamma²`.
pub fn max_linear_evidence(data: &Tensor<f64>, latent_dim: usize, gamma: f64) -> Result<f64> {
    if data.rank() != 2 || data.rows() == 0 {
        return Err(Error::shape("data must be a non-empty matrix"));
    }
    let (n, d) = (data.rows(), data.cols());
    let x = DMatrix::from_row_slice(n, d, data.data());
    let mean = x.row_mean();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / n as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let g2 = gamma * gamma;
    let mut total = d as f64 * (2.0 * std::f64::consts::PI).ln();
    for (i, &lam) in eig.iter().enumerate() {
        let c = if i < latent_dim { lam.max(g2) } else { g2 };
        total += c.ln() + lam / c;
    }
    Ok(-0.5 * total)
}
