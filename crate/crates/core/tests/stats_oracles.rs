mod common;

use common::*;
use mirror_core::experiment::TreatmentArm;
use mirror_core::stats::{
    fit_arms, mnl_fit, ols_fit, pairwise_effects, randomization_check, student_t_cdf, ArmOutcome, DesignMatrix,
    MnlConfig, StatsError, INTERCEPT,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr_free::normal;

/// Box–Muller, so the tests need no extra distribution crate.
mod rand_distr_free {
    use rand::Rng;

    pub fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Solves (XᵀX) β = Xᵀy by Gauss–Jordan elimination with partial pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * yi;
        }
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[r].iter_mut().zip(pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    a.iter().map(|row| row[k]).collect()
}

/// ln Γ(m/2) for a positive integer m, from Γ(1) = 1, Γ(1/2) = √π and
/// Γ(z+1) = zΓ(z).
fn ln_gamma_half(m: u32) -> f64 {
    let (mut z, mut acc) = if m.is_multiple_of(2) { (1.0, 0.0) } else { (0.5, 0.5 * std::f64::consts::PI.ln()) };
    while z < m as f64 / 2.0 {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// Regularized incomplete beta I_x(a, b) with a = m/2, b = l/2, from the
/// hypergeometric series, reflected so the series converges quickly.
fn incomplete_beta(x: f64, m: u32, l: u32) -> f64 {
    let (a, b) = (m as f64 / 2.0, l as f64 / 2.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > a / (a + b) {
        return 1.0 - incomplete_beta(1.0 - x, l, m);
    }
    let ln_beta = ln_gamma_half(m) + ln_gamma_half(l) - ln_gamma_half(m + l);
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta).exp() / a;
    let (mut term, mut sum, mut n) = (1.0f64, 1.0f64, 0.0f64);
    while term.abs() > 1e-17 * sum {
        term *= (a + b + n) / (a + 1.0 + n) * x;
        sum += term;
        n += 1.0;
    }
    front * sum
}

fn t_cdf_oracle(t: f64, df: u32) -> f64 {
    let tail = 0.5 * incomplete_beta(df as f64 / (df as f64 + t * t), df, 1);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn random_design(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta: Vec<f64> = (0..k).map(|_| r.gen_range(-2.0..2.0)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| std::iter::once(1.0).chain((1..k).map(|_| r.gen_range(-3.0..3.0))).collect())
        .collect();
    let y = x.iter().map(|row| row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + normal(r)).collect();
    (x, y)
}

fn to_design(x: Vec<Vec<f64>>, y: Vec<f64>) -> DesignMatrix {
    let k = x[0].len();
    let terms = std::iter::once(INTERCEPT.to_string()).chain((1..k).map(|j| format!("x{j}"))).collect();
    DesignMatrix::new(terms, x, y).unwrap()
}

#[test]
fn coefficients_match_normal_equations_on_500_designs() {
    let mut r = rng(51);
    for trial in 0..500 {
        let n = r.gen_range(10..=120);
        let k = r.gen_range(2..=5);
        let (x, y) = random_design(&mut r, n, k);
        let oracle = normal_equations(&x, &y);
        let fit = ols_fit(&to_design(x, y)).unwrap();
        for (term, expected) in fit.terms.iter().zip(&oracle) {
            assert!((term.coefficient - expected).abs() <= 1e-8, "trial {trial}: {} vs {expected}", term.coefficient);
        }
    }
}

#[test]
fn p_values_match_series_t_cdf_on_40x3_designs() {
    let mut r = rng(52);
    for _ in 0..50 {
        let (x, y) = random_design(&mut r, 40, 3);
        let fit = ols_fit(&to_design(x, y)).unwrap();
        for term in &fit.terms {
            let expected = 2.0 * (1.0 - t_cdf_oracle(term.t_stat.abs(), 37));
            assert!((term.p_value - expected).abs() <= 1e-6, "{} vs {expected}", term.p_value);
        }
    }
}

#[test]
fn t_cdf_reference_values() {
    assert!((student_t_cdf(1.0, 1.0) - 0.75).abs() <= 1e-9);
    assert_eq!(student_t_cdf(0.0, 7.0), 0.5);
    assert!((student_t_cdf(1.96, 1e6) - 0.975).abs() <= 1e-3);
    for df in 1..=60 {
        for t in [-6.0, -2.5, -0.3, 0.7, 1.5, 3.2, 8.0] {
            assert!((student_t_cdf(t, df as f64) - t_cdf_oracle(t, df)).abs() <= 1e-9, "t={t} df={df}");
        }
    }
}

fn units(groups: &[(TreatmentArm, &[f64])]) -> Vec<ArmOutcome> {
    groups
        .iter()
        .flat_map(|(arm, ys)| ys.iter().map(move |y| ArmOutcome { arm: *arm, outcome: Some(*y) }))
        .collect()
}

#[test]
fn two_group_contrast_is_difference_of_means() {
    let a = [0.0, 0.11, 0.22, 0.11];
    let b = [0.5, 0.56, 0.53, 0.53];
    let fit = pairwise_effects(&units(&[(TreatmentArm::Viz, &a), (TreatmentArm::VizIdeo, &b)]), TreatmentArm::Viz, TreatmentArm::VizIdeo)
        .unwrap();
    assert!((fit.coefficient(INTERCEPT).unwrap() - 0.11).abs() <= 1e-10);
    assert!((fit.coefficient("viz_ideo").unwrap() - 0.42).abs() <= 1e-10);

    let mut r = rng(53);
    for _ in 0..200 {
        let ga: Vec<f64> = (0..r.gen_range(2..40)).map(|_| r.gen_range(-4.0..4.0)).collect();
        let gb: Vec<f64> = (0..r.gen_range(2..40)).map(|_| r.gen_range(-4.0..4.0)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let fit = pairwise_effects(&units(&[(TreatmentArm::IdeoRec, &ga), (TreatmentArm::VizIdeo, &gb)]), TreatmentArm::VizIdeo, TreatmentArm::IdeoRec)
            .unwrap();
        assert!((fit.coefficient("ideo_rec").unwrap() - (mean(&ga) - mean(&gb))).abs() <= 1e-10);
    }
}

#[test]
fn empty_arm_and_collinearity_are_reported() {
    let only_two = units(&[(TreatmentArm::Viz, &[1.0, 2.0]), (TreatmentArm::VizIdeo, &[0.0, 1.0])]);
    assert!(matches!(fit_arms(&only_two, TreatmentArm::Viz, &TreatmentArm::TREATED), Err(StatsError::EmptyArm(TreatmentArm::IdeoRec))));

    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
    let y: Vec<f64> = (0..10).map(f64::from).collect();
    match ols_fit(&to_design(x, y)) {
        Err(StatsError::RankDeficient { column, depends_on }) => {
            assert_eq!(column, "x2");
            assert_eq!(depends_on, ["x1"]);
        }
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn alignment_null_overall_p_is_roughly_uniform() {
    let mut r = rng(54);
    let mut p_values = Vec::new();
    for _ in 0..400 {
        let mut u = Vec::new();
        for arm in TreatmentArm::ALL {
            for _ in 0..40 {
                u.push(ArmOutcome { arm, outcome: Some(0.1 * normal(&mut r)) });
            }
        }
        p_values.push(fit_arms(&u, TreatmentArm::Control, &TreatmentArm::ALL).unwrap().overall_p_value);
    }
    p_values.sort_by(f64::total_cmp);
    // Kolmogorov–Smirnov distance against U(0,1); 1.63/sqrt(n) is the 1% critical value
    let n = p_values.len() as f64;
    let ks = p_values
        .iter()
        .enumerate()
        .map(|(i, p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 1.63 / n.sqrt(), "KS distance {ks}");
}

/// Plain gradient ascent on the multinomial log-likelihood, reference class
/// 0, covariates standardized here rather than by the library.
fn slow_mnl_log_lik(x: &[Vec<f64>], classes: &[usize], k: usize) -> f64 {
    let n = x.len();
    let p = x[0].len();
    let mut z = x.to_vec();
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for row in z.iter_mut() {
            row[j] = (row[j] - mean) / sd;
        }
    }
    let design: Vec<Vec<f64>> = z.into_iter().map(|r| std::iter::once(1.0).chain(r).collect()).collect();
    let w = p + 1;
    let mut theta = vec![vec![0.0; w]; k];
    let log_lik = |theta: &[Vec<f64>]| {
        let mut ll = 0.0;
        for (row, &c) in design.iter().zip(classes) {
            let eta: Vec<f64> = theta.iter().map(|b| b.iter().zip(row).map(|(u, v)| u * v).sum()).collect();
            let lse = eta.iter().map(|e| e.exp()).sum::<f64>().ln();
            ll += eta[c] - lse;
        }
        ll
    };
    let step = 1.0 / n as f64;
    for _ in 0..200_000 {
        let mut grad = vec![vec![0.0; w]; k];
        for (row, &c) in design.iter().zip(classes) {
            let eta: Vec<f64> = theta.iter().map(|b| b.iter().zip(row).map(|(u, v)| u * v).sum()).collect();
            let total: f64 = eta.iter().map(|e| e.exp()).sum();
            for a in 1..k {
                let resid = f64::from(u8::from(a == c)) - eta[a].exp() / total;
                for j in 0..w {
                    grad[a][j] += resid * row[j];
                }
            }
        }
        for a in 1..k {
            for j in 0..w {
                theta[a][j] += step * grad[a][j];
            }
        }
    }
    log_lik(&theta)
}

#[test]
fn mnl_matches_slow_gradient_ascent() {
    let mut r = rng(55);
    for _ in 0..3 {
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![normal(&mut r), r.gen_range(0.0..5.0)]).collect();
        let labels: Vec<TreatmentArm> = x
            .iter()
            .map(|row| {
                let score = 0.8 * row[0] + normal(&mut r);
                TreatmentArm::TREATED[if score < -0.5 { 0 } else if score < 0.6 { 1 } else { 2 }]
            })
            .collect();
        let classes: Vec<usize> =
            labels.iter().map(|a| TreatmentArm::TREATED.iter().position(|b| b == a).unwrap()).collect();
        let fit = mnl_fit(&x, &labels, &MnlConfig::default()).unwrap();
        let oracle = slow_mnl_log_lik(&x, &classes, 3);
        assert!((fit.log_likelihood - oracle).abs() <= 1e-4, "{} vs {oracle}", fit.log_likelihood);
        assert!(fit.log_likelihood >= fit.intercept_only_log_likelihood);
    }
}

#[test]
fn planted_imbalance_is_flagged() {
    let mut r = rng(56);
    let x: Vec<Vec<f64>> = (0..90).map(|_| vec![normal(&mut r), normal(&mut r)]).collect();
    let labels: Vec<TreatmentArm> = x
        .iter()
        .map(|row| TreatmentArm::TREATED[if row[0] < -0.43 { 0 } else if row[0] < 0.43 { 1 } else { 2 }])
        .collect();
    let result = randomization_check(&x, &labels, 299, 7, &MnlConfig::default()).unwrap();
    assert!(result.p_value <= 0.01, "p = {}", result.p_value);
    assert_eq!(result.failed_permutations, 0);
}

#[test]
fn exchanging_labels_of_identical_units_keeps_log_likelihood() {
    let mut r = rng(57);
    let mut x: Vec<Vec<f64>> = (0..40).map(|_| vec![normal(&mut r), normal(&mut r)]).collect();
    x[5] = x[17].clone();
    let mut labels: Vec<TreatmentArm> = (0..40).map(|i| TreatmentArm::TREATED[(i * 7) % 3]).collect();
    labels[5] = TreatmentArm::Viz;
    labels[17] = TreatmentArm::IdeoRec;
    let a = mnl_fit(&x, &labels, &MnlConfig::default()).unwrap().log_likelihood;
    labels.swap(5, 17);
    let b = mnl_fit(&x, &labels, &MnlConfig::default()).unwrap().log_likelihood;
    assert!((a - b).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residuals_orthogonal_and_p_values_scale_free(seed in 0u64..10_000, factor in 0.001f64..1000.0, shift in -50.0f64..50.0) {
        let mut r = rng(seed);
        let (x, y) = random_design(&mut r, 30, 3);
        let fit = ols_fit(&to_design(x.clone(), y.clone())).unwrap();
        let beta: Vec<f64> = fit.terms.iter().map(|t| t.coefficient).collect();
        let scale = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..3 {
            let dot: f64 = x.iter().zip(&y).map(|(row, yi)| {
                let resid = yi - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                resid * row[j]
            }).sum();
            let col = x.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt();
            prop_assert!(dot.abs() <= 1e-8 * scale * col);
        }

        let scaled: Vec<Vec<f64>> = x.iter().map(|row| vec![row[0], row[1] * factor + shift, row[2]]).collect();
        let refit = ols_fit(&to_design(scaled, y)).unwrap();
        prop_assert!((refit.terms[1].p_value - fit.terms[1].p_value).abs() <= 1e-9);
        prop_assert!((refit.terms[2].p_value - fit.terms[2].p_value).abs() <= 1e-9);
        prop_assert!((refit.terms[1].coefficient * factor - fit.terms[1].coefficient).abs() <= 1e-8 * (1.0 + fit.terms[1].coefficient.abs()));
        for t in &refit.terms {
            prop_assert!((0.0..=1.0).contains(&t.p_value));
        }
    }
}
