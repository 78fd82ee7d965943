//! Kernels and the constants of the one-sided equivalent kernel.
//!
//! Every weight, bandwidth and Bartlett formula in the crate is driven by
//! [`KernelConstants`]. They are computed once per kernel by quadrature and
//! cached; [`Kernel::constants`] hands out the shared copy.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localfit::Side;
use crate::quadrature::integrate;

pub const QUAD_TOL: f64 = 1e-10;

/// Highest one-sided moment kept in the cached constants.
pub const CACHED_MAX_MOMENT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Triangular,
    Uniform,
    Epanechnikov,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Triangular, Kernel::Uniform, Kernel::Epanechnikov];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Triangular => "triangular",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }

    #[inline]
    pub fn evaluate(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Triangular => 1.0 - a,
            Kernel::Uniform => 0.5,
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
        }
    }

    /// K'(u). The triangular kink at zero gets the symmetric value 0.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Triangular => {
                if u > 0.0 {
                    -1.0
                } else if u < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Uniform => 0.0,
            Kernel::Epanechnikov => -1.5 * u,
        }
    }

    /// Kernel used for density-derivative estimation. The uniform kernel has
    /// no usable derivative, so it borrows the Epanechnikov one.
    pub fn derivative_kernel(self) -> Kernel {
        match self {
            Kernel::Uniform => Kernel::Epanechnikov,
            k => k,
        }
    }

    pub fn constants(self) -> &'static KernelConstants {
        static CACHE: [OnceLock<KernelConstants>; 3] =
            [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        let slot = match self {
            Kernel::Triangular => &CACHE[0],
            Kernel::Uniform => &CACHE[1],
            Kernel::Epanechnikov => &CACHE[2],
        };
        slot.get_or_init(|| {
            compute_kernel_constants(self, CACHED_MAX_MOMENT)
                .expect("kernel constants of a built-in kernel")
        })
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "triangular" | "tri" => Ok(Kernel::Triangular),
            "uniform" | "rectangular" => Ok(Kernel::Uniform),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            other => Err(Error::Input(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConstants {
    pub kernel: Kernel,
    /// m_{j,+} = ∫₀¹ u^j K(u) du for j = 0..=max_moment.
    pub m_plus: Vec<f64>,
    /// m_{j,-} = ∫₋₁⁰ u^j K(u) du.
    pub m_minus: Vec<f64>,
    /// γ₂, γ₃, γ₄ (index j - 2).
    pub gamma: [f64; 3],
    pub varpi: f64,
    /// ∫₀¹ u^j K(u)² du, the one-sided variance moments.
    pub sq_plus: Vec<f64>,
    pub sq_minus: Vec<f64>,
    /// ∫ K², ∫ K u² and ∫ K'² over [-1, 1].
    pub int_k2: f64,
    pub int_ku2: f64,
    pub int_dk2: f64,
}

impl KernelConstants {
    pub fn m(&self, side: Side, j: usize) -> f64 {
        match side {
            Side::Plus => self.m_plus[j],
            Side::Minus => self.m_minus[j],
        }
    }

    pub fn sq(&self, side: Side, j: usize) -> f64 {
        match side {
            Side::Plus => self.sq_plus[j],
            Side::Minus => self.sq_minus[j],
        }
    }

    /// γ_j for j ∈ {2, 3, 4}.
    pub fn gamma(&self, j: usize) -> f64 {
        assert!((2..=4).contains(&j), "gamma index out of range");
        self.gamma[j - 2]
    }

    pub fn max_moment(&self) -> usize {
        self.m_plus.len() - 1
    }

    /// Equivalent boundary kernel K_{*,r}(t); zero outside [-1, 1].
    #[inline]
    pub fn equivalent_kernel(&self, side: Side, t: f64) -> f64 {
        if t.abs() > 1.0 {
            return 0.0;
        }
        let (m0, m1, m2) = (self.m(side, 0), self.m(side, 1), self.m(side, 2));
        (m2 - m1 * t) / (m0 * m2 - m1 * m1) * self.kernel.evaluate(t)
    }
}

pub fn compute_kernel_constants(kernel: Kernel, max_moment: usize) -> Result<KernelConstants> {
    if max_moment < 3 {
        return Err(Error::Input("max_moment must be at least 3".into()));
    }
    let k = |u: f64| kernel.evaluate(u);
    let mut m_plus = Vec::with_capacity(max_moment + 1);
    let mut m_minus = Vec::with_capacity(max_moment + 1);
    let mut sq_plus = Vec::with_capacity(max_moment + 1);
    let mut sq_minus = Vec::with_capacity(max_moment + 1);
    for j in 0..=max_moment {
        let p = j as i32;
        m_plus.push(integrate(|u| u.powi(p) * k(u), 0.0, 1.0, QUAD_TOL, &format!("m_{j},+"))?);
        m_minus.push(integrate(|u| u.powi(p) * k(u), -1.0, 0.0, QUAD_TOL, &format!("m_{j},-"))?);
        sq_plus.push(integrate(|u| u.powi(p) * k(u).powi(2), 0.0, 1.0, QUAD_TOL, "one-sided K^2 moment")?);
        sq_minus.push(integrate(|u| u.powi(p) * k(u).powi(2), -1.0, 0.0, QUAD_TOL, "one-sided K^2 moment")?);
    }

    let (m0, m1, m2, m3) = (m_minus[0], m_minus[1], m_minus[2], m_minus[3]);
    let det = m0 * m2 - m1 * m1;
    let varpi = (m2 * m2 - m1 * m3) / det;
    let kstar = |t: f64| (m2 - m1 * t) / det * k(t);

    let mut gamma = [0.0; 3];
    for (i, g) in gamma.iter_mut().enumerate() {
        let j = (i + 2) as i32;
        *g = integrate(|t| kstar(t).powi(j), -1.0, 0.0, QUAD_TOL, &format!("gamma_{j}"))?;
    }

    let two_sided = |f: &dyn Fn(f64) -> f64, name: &str| -> Result<f64> {
        Ok(integrate(f, -1.0, 0.0, QUAD_TOL, name)? + integrate(f, 0.0, 1.0, QUAD_TOL, name)?)
    };
    let int_k2 = two_sided(&|u| k(u).powi(2), "int K^2")?;
    let int_ku2 = two_sided(&|u| u * u * k(u), "int K u^2")?;
    let dk = kernel.derivative_kernel();
    let int_dk2 = two_sided(&|u| dk.derivative(u).powi(2), "int K'^2")?;

    Ok(KernelConstants {
        kernel,
        m_plus,
        m_minus,
        gamma,
        varpi,
        sq_plus,
        sq_minus,
        int_k2,
        int_ku2,
        int_dk2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_moments() {
        let c = Kernel::Triangular.constants();
        let expected = [0.5, 1.0 / 6.0, 1.0 / 12.0, 1.0 / 20.0];
        for (j, e) in expected.iter().enumerate() {
            assert!((c.m_plus[j] - e).abs() < 1e-12, "m_{j}");
        }
        assert!((c.varpi + 0.1).abs() < 1e-10);
        assert!((c.gamma(2) - 4.8).abs() < 1e-9);
    }

    #[test]
    fn uniform_first_moment() {
        let c = Kernel::Uniform.constants();
        assert!((c.m_plus[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equivalent_kernel_values() {
        let c = Kernel::Triangular.constants();
        assert!((c.equivalent_kernel(Side::Plus, 0.0) - 6.0).abs() < 1e-10);
        assert_eq!(c.equivalent_kernel(Side::Plus, 1.5), 0.0);
        let a = c.equivalent_kernel(Side::Minus, -0.5);
        let b = c.equivalent_kernel(Side::Plus, 0.5);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn equivalent_kernel_moment_conditions() {
        for kernel in Kernel::ALL {
            let c = kernel.constants();
            let zeroth =
                integrate(|t| c.equivalent_kernel(Side::Minus, t), -1.0, 0.0, 1e-12, "k0").unwrap();
            let first = integrate(|t| t * c.equivalent_kernel(Side::Minus, t), -1.0, 0.0, 1e-12, "k1")
                .unwrap();
            assert!((zeroth - 1.0).abs() < 1e-8, "{kernel}");
            assert!(first.abs() < 1e-8, "{kernel}");
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("Epanechnikov".parse::<Kernel>().unwrap(), Kernel::Epanechnikov);
        assert!("gaussian".parse::<Kernel>().is_err());
    }

    #[test]
    fn too_few_moments_rejected() {
        assert!(compute_kernel_constants(Kernel::Triangular, 2).is_err());
    }
}
