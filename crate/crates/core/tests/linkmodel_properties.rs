use std::f64::consts::PI;

use approx::assert_relative_eq;
use proptest::prelude::*;
use scwqkd_core::linkmodel::*;

fn budget(mu: f64, p_dark: f64, v: f64) -> LinkBudget {
    LinkBudget::from_parts(mu, p_dark, v).unwrap()
}

proptest! {
    #[test]
    fn transmittance_is_multiplicative(a in 0.0f64..=60.0, b in 0.0f64..=60.0) {
        let joint = transmittance(a + b).unwrap();
        let product = transmittance(a).unwrap() * transmittance(b).unwrap();
        prop_assert!((joint / product - 1.0).abs() <= 1e-12, "{joint} vs {product}");
    }

    #[test]
    fn four_phase_average(mu in 0.0f64..0.5, p_dark in 0.0f64..0.1, v in 0.0f64..=1.0) {
        let b = budget(mu, p_dark, v);
        let avg = [0.0, PI / 2.0, PI, 1.5 * PI]
            .iter()
            .map(|&d| click_probability(&b, d))
            .sum::<f64>()
            / 4.0;
        let expected = p_dark + mu / 2.0;
        prop_assert!((avg - expected).abs() <= 1e-15 * expected.max(1e-300), "{avg} vs {expected}");
        prop_assert_eq!(b.mean_click_probability(), expected);
    }

    #[test]
    fn full_rate_dominates(
        mu in 1e-7f64..1e-1,
        p_dark in 0.0f64..1e-5,
        v in 0.5f64..=1.0,
        eps in 1e-3f64..1.0,
        f_ec in 1.0f64..1.5,
    ) {
        let b = budget(mu, p_dark, v);
        let full = analytic_rates(&b, 1e8, f_ec, 1.0).unwrap();
        let part = analytic_rates(&b, 1e8, f_ec, eps).unwrap();
        prop_assert!(full.sift_rate_bps >= part.sift_rate_bps);
        prop_assert!(full.secret_rate_bps >= part.secret_rate_bps);
        prop_assert_eq!(full.qber, part.qber);
    }
}

#[test]
fn qber_monotone_over_grid() {
    let mus = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    let darks = [0.0, 1e-9, 1e-7, 1e-5];
    let vis = [0.7, 0.8, 0.9, 0.96, 1.0];
    let mut budgets = 0;
    for &mu in &mus {
        for &pd in &darks {
            for (i, &v) in vis.iter().enumerate() {
                budgets += 1;
                let q = analytic_qber(&budget(mu, pd, v)).unwrap();
                if let Some(&v_next) = vis.get(i + 1) {
                    assert!(
                        analytic_qber(&budget(mu, pd, v_next)).unwrap() <= q,
                        "V {v}->{v_next}"
                    );
                }
                for &pd_next in darks.iter().filter(|&&d| d > pd) {
                    assert!(
                        analytic_qber(&budget(mu, pd_next, v)).unwrap() >= q,
                        "p_dark {pd}->{pd_next}"
                    );
                }
            }
        }
    }
    assert_eq!(budgets, 100);
}

#[test]
fn default_photon_budget() {
    let mu = sideband_photons_per_cycle(&SourceConfig::default());
    assert!((0.19..=0.21).contains(&mu), "{mu}");
    assert_relative_eq!(mu, 0.204193584506839, max_relative = 1e-12);
}
