#![allow(dead_code)]

use elrdd_core::Sample;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// −2 Σ log(n p_i) at the primal optimum of max Σ log p_i subject to
/// Σ p_i = 1 and Σ p_i u_i = 0, by infeasible-start Newton on p.
/// None when the iteration cannot reach a feasible point.
pub fn primal_el(u: &[f64], d: usize) -> Option<f64> {
    let m = u.len() / d;
    let k = d + 1;
    let mut a = DMatrix::<f64>::zeros(k, m);
    for i in 0..m {
        a[(0, i)] = 1.0;
        for r in 0..d {
            a[(r + 1, i)] = u[i * d + r];
        }
    }
    let mut b = DVector::<f64>::zeros(k);
    b[0] = 1.0;
    let mut p = DVector::from_element(m, 1.0 / m as f64);
    let mut nu = DVector::<f64>::zeros(k);

    let residual = |p: &DVector<f64>, nu: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let grad = p.map(|v| -1.0 / v);
        (grad + a.transpose() * nu, &a * p - &b)
    };
    for _ in 0..500 {
        let (rd, rp) = residual(&p, &nu);
        let norm0 = (rd.norm_squared() + rp.norm_squared()).sqrt();
        if rp.amax() < 1e-13 && rd.amax() < 1e-9 * m as f64 {
            let n = m as f64;
            return Some(-2.0 * p.iter().map(|v| (n * v).ln()).sum::<f64>());
        }
        let mut kkt = DMatrix::<f64>::zeros(m + k, m + k);
        for i in 0..m {
            kkt[(i, i)] = 1.0 / (p[i] * p[i]);
        }
        kkt.view_mut((0, m), (m, k)).copy_from(&a.transpose());
        kkt.view_mut((m, 0), (k, m)).copy_from(&a);
        let mut rhs = DVector::<f64>::zeros(m + k);
        rhs.rows_mut(0, m).copy_from(&(-&rd));
        rhs.rows_mut(m, k).copy_from(&(-&rp));
        let step = kkt.lu().solve(&rhs)?;
        let dp = step.rows(0, m).into_owned();
        let dnu = step.rows(m, k).into_owned();
        let mut t = 1.0;
        while (0..m).any(|i| p[i] + t * dp[i] <= 0.0) {
            t *= 0.5;
            if t < 1e-14 {
                return None;
            }
        }
        loop {
            let pn = &p + &dp * t;
            let nn = &nu + &dnu * t;
            let (rd2, rp2) = residual(&pn, &nn);
            if (rd2.norm_squared() + rp2.norm_squared()).sqrt() <= (1.0 - 0.01 * t) * norm0 || t < 1e-12 {
                p = pn;
                nu = nn;
                break;
            }
            t *= 0.5;
        }
    }
    None
}

/// Regularized lower incomplete gamma P(a, x): series below a + 1,
/// Lentz continued fraction above.
pub fn reg_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_pre = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        sum * ln_pre.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        1.0 - ln_pre.exp() * h
    }
}

/// Lanczos log-gamma.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = G[0];
    for (i, g) in G.iter().enumerate().skip(1) {
        acc += g / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn chi2_sf_oracle(x: f64, df: usize) -> f64 {
    1.0 - reg_gamma_p(0.5 * df as f64, 0.5 * x)
}

/// sup_x |F_n(x) − F(x)|.
pub fn ks_distance(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Sample carrying columns for every design: y, d (fuzzy treatment), z1,
/// z2 (covariates continuous at the cutoff), y2 (second outcome) and c1, c2
/// (category indicators).
pub fn all_designs_sample(n: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g2 = Gamma::new(2.0, 1.0).unwrap();
    let g4 = Gamma::new(4.0, 1.0).unwrap();
    let mut cols: [Vec<f64>; 7] = Default::default();
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = g2.sample(&mut rng);
        let b: f64 = g4.sample(&mut rng);
        let xi = 2.0 * a / (a + b) - 1.0;
        let plus = xi >= 0.0;
        let e: [f64; 5] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let d = if xi + if plus { 0.84 } else { -0.84 } >= e[0] { 1.0 } else { 0.0 };
        let z1 = 0.5 + 0.4 * xi + 0.5 * e[1];
        let z2 = -0.2 + 0.3 * xi * xi + 0.5 * e[2];
        let y = 0.48 + 0.04 * d + 1.1 * xi - 0.8 * xi * xi + 0.2 * z1 + 0.5 * e[3];
        let y2 = 0.2 + if plus { 0.1 } else { 0.0 } + 0.6 * xi + 0.5 * e[4];
        let eta = if plus { [-0.2 + 0.8 * xi, -1.2 + 0.4 * xi] } else { [-0.5 + 0.8 * xi, -1.0 + 0.4 * xi] };
        let den = 1.0 + eta[0].exp() + eta[1].exp();
        let u: f64 = rng.random();
        let p1 = eta[0].exp() / den;
        let p2 = eta[1].exp() / den;
        let (c1, c2) = if u < p1 { (1.0, 0.0) } else if u < p1 + p2 { (0.0, 1.0) } else { (0.0, 0.0) };
        x.push(xi);
        for (col, v) in cols.iter_mut().zip([y, d, z1, z2, y2, c1, c2]) {
            col.push(v);
        }
    }
    let mut s = Sample::new(x, 0.0).unwrap();
    for (name, col) in ["y", "d", "z1", "z2", "y2", "c1", "c2"].iter().zip(cols) {
        s = s.with_column(name, col).unwrap();
    }
    s
}
