//! Pólya-Gamma draws by Devroye's alternating-series method.
//!
//! `PG(1, c)` is `J*(1, |c|/2) / 4`, where `J*` is sampled by proposing from a mixture of a
//! truncated exponential (right of `t`) and a truncated inverse Gaussian (left of `t`) and
//! accepting with the alternating partial sums of the density's series representation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

/// Switch point between the two proposal pieces.
const TRUNC: f64 = 0.64;

/// Coefficient `a_n(x)` of the series for the `J*(1, 0)` density.
fn series_coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// `log Phi(x)` for the standard normal CDF.
fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Probability that the proposal comes from the exponential piece.
fn exponential_mass(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    let z = z.abs();
    let mut x = t + 1.0;
    if z < 1.0 / t {
        // Mean beyond the truncation point: rejection from a scaled 1/chi^2 proposal.
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            x = 1.0 + e1 * t;
            x = t / (x * x);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let y: f64 = StandardNormal.sample(rng);
            let y = y * y;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

/// One draw from `PG(1, c)`.
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = exponential_mass(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// A draw from `PG(b, c)` as a sum of `b` independent `PG(1, c)` draws.
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: u32, c: f64, rng: &mut R) -> f64 {
    assert!(b >= 1, "PG shape must be a positive integer");
    (0..b).map(|_| sample_pg1(c, rng)).sum()
}

/// `E[PG(b, c)] = b / (2c) tanh(c / 2)`, with limit `b / 4` at zero.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-6 {
        b * (0.25 - c * c / 48.0)
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// `Var[PG(b, c)] = b (sinh c - c) / (4 c^3 cosh^2(c/2))`, with limit `b / 24` at zero.
pub fn pg_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        b * (1.0 / 24.0 - c * c / 240.0)
    } else {
        b * (c.sinh() - c) / (4.0 * c.powi(3) * (0.5 * c).cosh().powi(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_moments(c: f64, n: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..n).map(|_| sample_pg1(c, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (pg_variance(1.0, c) / n as f64).sqrt();
        assert!((mean - pg_mean(1.0, c)).abs() < 4.0 * se, "c={c}: mean {mean} vs {}", pg_mean(1.0, c));
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / pg_variance(1.0, c) - 1.0).abs() < 0.1, "c={c}: variance {var}");
        assert!(draws.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn moments_across_tilts() {
        for (i, c) in [0.0, 0.5, 1.0, 2.5, 6.0, 20.0].into_iter().enumerate() {
            check_moments(c, 20_000, i as u64);
        }
    }

    #[test]
    fn analytic_moments() {
        assert!((pg_mean(1.0, 1.0) - 0.231059).abs() < 1e-6);
        assert_eq!(pg_mean(1.0, 0.0), 0.25);
        assert!((pg_variance(1.0, 1e-3) - pg_variance(1.0, 1.1e-3)).abs() < 1e-6);
        assert!((pg_mean(1.0, 1e-6) - pg_mean(1.0, 1.1e-6)).abs() < 1e-9);
    }

    #[test]
    fn sum_for_larger_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let mean = (0..n).map(|_| sample_polya_gamma(3, 1.0, &mut rng)).sum::<f64>() / n as f64;
        let se = (pg_variance(3.0, 1.0) / n as f64).sqrt();
        assert!((mean - pg_mean(3.0, 1.0)).abs() < 4.0 * se);
    }

    #[test]
    fn tilt_sign_is_irrelevant() {
        // Two-sample Kolmogorov-Smirnov at alpha = 0.01.
        let n = 10_000;
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let mut a: Vec<f64> = (0..n).map(|_| sample_pg1(1.5, &mut r1)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| sample_pg1(-1.5, &mut r2)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        let critical = 1.628 * (2.0 / n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }
}
