use crate::ensemble::Mode;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-feature batch normalization with trainable scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    scale: Vec<f64>,
    shift: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
    /// Bumped whenever the train-mode mapping or its parameters change, so
    /// that caches from earlier forward passes are rejected.
    version: u64,
}

// Equality is about the mapping, not the cache bookkeeping.
impl PartialEq for BatchNorm {
    fn eq(&self, other: &Self) -> bool {
        self.scale == other.scale
            && self.shift == other.shift
            && self.running_mean == other.running_mean
            && self.running_var == other.running_var
            && self.momentum == other.momentum
            && self.eps == other.eps
    }
}

/// What [`BatchNorm::backward`] needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGradients {
    pub d_x: Matrix,
    pub d_scale: Vec<f64>,
    pub d_shift: Vec<f64>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-3;

    /// Scale 1, shift 0, running mean 0 and running variance 1.
    pub fn new(p: usize, momentum: f64, eps: f64) -> Result<Self> {
        Self::from_parts(vec![1.0; p], vec![0.0; p], vec![0.0; p], vec![1.0; p], momentum, eps)
    }

    pub fn from_parts(
        scale: Vec<f64>,
        shift: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        momentum: f64,
        eps: f64,
    ) -> Result<Self> {
        let p = scale.len();
        if p == 0 {
            return Err(Error::InvalidParameter("batch norm needs at least one feature".into()));
        }
        for (what, v) in [("shift", &shift), ("running mean", &running_mean), ("running variance", &running_var)] {
            if v.len() != p {
                return Err(Error::InvalidParameter(format!(
                    "batch norm {what} has length {}, expected {p}",
                    v.len()
                )));
            }
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidParameter(format!("batch norm momentum must be in (0, 1), got {momentum}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("batch norm eps must be > 0, got {eps}")));
        }
        if running_var.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("running variance must be finite and >= 0".into()));
        }
        Ok(Self {
            scale,
            shift,
            running_mean,
            running_var,
            momentum,
            eps,
            version: 0,
        })
    }

    pub fn num_features(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Mutable scale and shift. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        self.version += 1;
        (&mut self.scale, &mut self.shift)
    }

    /// Train mode normalizes with batch statistics (biased variance) and
    /// updates the running statistics; infer mode uses the running ones.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, Option<BatchNormCache>)> {
        let p = self.num_features();
        if x.cols() != p {
            return Err(Error::DimensionMismatch {
                what: "batch norm features",
                expected: p,
                actual: x.cols(),
            });
        }
        let n = x.rows();
        match mode {
            Mode::Infer => {
                let mut y = x.clone();
                let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                for row in 0..n {
                    for (j, v) in y.row_mut(row).iter_mut().enumerate() {
                        *v = self.scale[j] * (*v - self.running_mean[j]) * inv[j] + self.shift[j];
                    }
                }
                Ok((y, None))
            }
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidParameter(format!(
                        "train-mode batch norm needs a batch of at least 2, got {n}"
                    )));
                }
                let nf = n as f64;
                let mut mean = vec![0.0; p];
                for row in x.iter_rows() {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nf);
                let mut var = vec![0.0; p];
                for row in x.iter_rows() {
                    for j in 0..p {
                        let c = row[j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= nf);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let mut xhat = x.clone();
                let mut y = Matrix::zeros(n, p);
                for b in 0..n {
                    let (hr, yr) = (xhat.row_mut(b), y.row_mut(b));
                    for j in 0..p {
                        hr[j] = (hr[j] - mean[j]) * inv_std[j];
                        yr[j] = self.scale[j] * hr[j] + self.shift[j];
                    }
                }
                let mom = self.momentum;
                for j in 0..p {
                    self.running_mean[j] = mom * self.running_mean[j] + (1.0 - mom) * mean[j];
                    self.running_var[j] = mom * self.running_var[j] + (1.0 - mom) * var[j];
                }
                self.version += 1;
                Ok((
                    y,
                    Some(BatchNormCache {
                        xhat,
                        inv_std,
                        version: self.version,
                    }),
                ))
            }
        }
    }

    /// Exact gradients of the train-mode mapping, including the
    /// dependence of the batch statistics on the input.
    pub fn backward(&self, cache: &BatchNormCache, d_y: &Matrix) -> Result<BatchNormGradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                state: self.version,
            });
        }
        let (n, p) = (cache.xhat.rows(), cache.xhat.cols());
        if d_y.rows() != n || d_y.cols() != p {
            return Err(Error::DimensionMismatch {
                what: "batch norm output gradient entries",
                expected: n * p,
                actual: d_y.rows() * d_y.cols(),
            });
        }
        let mut d_scale = vec![0.0; p];
        let mut d_shift = vec![0.0; p];
        for (dy, xh) in d_y.iter_rows().zip(cache.xhat.iter_rows()) {
            for j in 0..p {
                d_scale[j] += dy[j] * xh[j];
                d_shift[j] += dy[j];
            }
        }
        // dxhat = dy * scale; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        // and sum(dxhat) = scale * d_shift, sum(dxhat * xhat) = scale * d_scale.
        let nf = n as f64;
        let mut d_x = Matrix::zeros(n, p);
        for b in 0..n {
            let (dy, xh, dx) = (d_y.row(b), cache.xhat.row(b), d_x.row_mut(b));
            for j in 0..p {
                let g = self.scale[j];
                dx[j] = cache.inv_std[j] * g * (dy[j] - d_shift[j] / nf - xh[j] * d_scale[j] / nf);
            }
        }
        Ok(BatchNormGradients { d_x, d_scale, d_shift })
    }
}
