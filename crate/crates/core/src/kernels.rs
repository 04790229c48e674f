//! Kernel evaluation and dense Gram construction.
//!
//! The nugget sigma2 is an identity-of-index indicator: it is added only when
//! the two arguments are the same observation, so it lands on the Gram
//! diagonal and models observation noise rather than identity of value.

use nalgebra::DMatrix;
use thiserror::Error;

/// Kernel families. Linear is the polynomial kernel with C = 1 and d1 = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelFamily {
    Linear,
    Polynomial { scale: f64, degree: u32 },
    Gaussian { bandwidth: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("kernel parameter {name} = {value} is invalid; {requirement}")]
    BadParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("dimension mismatch: left has {left} columns, right has {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// A kernel family together with its nugget variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    sigma2: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            sigma2: 0.0,
        }
    }

    pub fn polynomial(scale: f64, degree: u32, sigma2: f64) -> Result<Self, KernelError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(KernelError::BadParameter {
                name: "scale",
                value: scale,
                requirement: "must be a positive finite real",
            });
        }
        if degree == 0 {
            return Err(KernelError::BadParameter {
                name: "degree",
                value: 0.0,
                requirement: "must be a positive integer",
            });
        }
        Self::with_family(KernelFamily::Polynomial { scale, degree }, sigma2)
    }

    pub fn gaussian(bandwidth: f64, sigma2: f64) -> Result<Self, KernelError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(KernelError::BadParameter {
                name: "bandwidth",
                value: bandwidth,
                requirement: "must be a positive finite real",
            });
        }
        Self::with_family(KernelFamily::Gaussian { bandwidth }, sigma2)
    }

    fn with_family(family: KernelFamily, sigma2: f64) -> Result<Self, KernelError> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(KernelError::BadParameter {
                name: "sigma2",
                value: sigma2,
                requirement: "must be a nonnegative finite real",
            });
        }
        Ok(Self { family, sigma2 })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Same family with a different nugget; arm-specific noise levels reuse
    /// one family specification.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self, KernelError> {
        Self::with_family(self.family, sigma2)
    }

    fn base_eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => dot(x, y),
            KernelFamily::Polynomial { scale, degree } => scale * dot(x, y).powi(degree as i32),
            KernelFamily::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

/// Evaluates k(x, y); `same_point` is true iff x and y are the same
/// observation index, in which case the nugget is added.
pub fn kernel_eval(
    spec: &KernelSpec,
    x: &[f64],
    y: &[f64],
    same_point: bool,
) -> Result<f64, KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let base = spec.base_eval(x, y);
    Ok(if same_point { base + spec.sigma2 } else { base })
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

/// Dense Gram matrix over the rows of X, nugget on the diagonal. The upper
/// triangle is computed and mirrored, so the result is exactly symmetric.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let rows = rows_of(x);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.base_eval(&rows[i], &rows[j]);
            let v = if i == j { v + spec.sigma2 } else { v };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Cross-Gram between the rows of A and the rows of B. Rows of A and B are
/// never the same observation, so the nugget is never added.
pub fn gram_cross(
    spec: &KernelSpec,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>, KernelError> {
    if a.ncols() != b.ncols() {
        return Err(KernelError::DimensionMismatch {
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let rows_a = rows_of(a);
    let rows_b = rows_of(b);
    let mut g = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            g[(i, j)] = spec.base_eval(&rows_a[i], &rows_b[j]);
        }
    }
    Ok(g)
}
