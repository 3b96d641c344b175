use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use hybrid_cavi::bench::{emit_report, parse_report, Report, ReportFormat, Row};
use hybrid_cavi::cavi::{
    cavi_closed_form, conjugate_gaussian_elbo, MeanFieldPosterior, OptimizerConfig,
};
use hybrid_cavi::divergence::{
    kl_discrete, kl_gaussian, kl_quadrature, mean_field_as_gaussian, DiscreteDirection, GridSpec,
    KlMethod,
};
use hybrid_cavi::hybrid::{mom_initialization, FactorFamily};
use hybrid_cavi::mcmc::{chain_moments, metropolis_hastings, Chain, MhConfig};
use hybrid_cavi::models::{conjugate_posterior, GaussianDensity, GaussianMeanModel, LatentPoint};
use hybrid_cavi::stochastic::{mvn_sample, CovMatrix};
use hybrid_cavi::RngSeed;

fn spd_2x2() -> impl Strategy<Value = CovMatrix> {
    (0.2f64..5.0, 0.2f64..5.0, -0.9f64..0.9).prop_map(|(a, b, r)| {
        let c = r * (a * b).sqrt();
        CovMatrix::from_rows(&[vec![a, c], vec![c, b]]).unwrap()
    })
}

fn small_model(seed: u64, cov: &CovMatrix, n: usize, prior_var: f64) -> GaussianMeanModel {
    let data = mvn_sample(RngSeed(seed), &[3.0, -1.0], cov, n).unwrap();
    GaussianMeanModel::new(&data, cov.clone(), prior_var).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_kl_is_nonnegative_and_zero_on_the_diagonal(
        m1 in prop::collection::vec(-5.0f64..5.0, 2),
        m2 in prop::collection::vec(-5.0f64..5.0, 2),
        c1 in spd_2x2(),
        c2 in spd_2x2(),
    ) {
        let q = GaussianDensity::new(m1.clone(), c1.clone()).unwrap();
        let p = GaussianDensity::new(m2, c2).unwrap();
        let kl = kl_gaussian(&q, &p).unwrap();
        prop_assert!(kl.nats >= 0.0 && kl.nats.is_finite());
        prop_assert_eq!(kl.method, KlMethod::ClosedForm);
        let same = kl_gaussian(&q, &GaussianDensity::new(m1, c1).unwrap()).unwrap();
        prop_assert!(same.nats.abs() < 1e-12);
    }

    #[test]
    fn quadrature_kl_is_nonnegative(
        means in prop::collection::vec(-2.0f64..2.0, 2),
        vars in prop::collection::vec(0.3f64..2.0, 2),
        target in spd_2x2(),
    ) {
        let q = MeanFieldPosterior::gaussian(&[(means[0], vars[0]), (means[1], vars[1])]).unwrap();
        let p = GaussianDensity::new(vec![0.0, 0.0], target).unwrap();
        let grid = GridSpec::uniform(&[(-14.0, 14.0), (-14.0, 14.0)], 200).unwrap();
        let kl = kl_quadrature(&q, &p, &grid).unwrap();
        prop_assert!(kl.nats >= 0.0);
    }

    #[test]
    fn discrete_kl_is_nonnegative_in_both_directions(
        seed in any::<u64>(),
        mean in -1.0f64..1.0,
        var in 0.2f64..3.0,
    ) {
        let q = MeanFieldPosterior::gaussian(&[(mean, var), (0.0, 1.0)]).unwrap();
        let chain = draws(&[(0.0, 1.0), (0.0, 1.0)], 400, seed);
        let grid = GridSpec::from_chain(&chain, 12, 0.1).unwrap();
        for dir in [DiscreteDirection::ReferenceToFitted, DiscreteDirection::FittedToReference] {
            let kl = kl_discrete(&q, &chain, &grid, dir).unwrap();
            prop_assert!(kl.nats >= 0.0);
            prop_assert_eq!(kl.method, KlMethod::Discrete);
        }
    }

    #[test]
    fn gaussian_moments_round_trip(
        samples in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2), 3..60),
    ) {
        let n = samples.len();
        prop_assume!((0..2).all(|j| samples.iter().any(|s| s[j] != samples[0][j])));
        let chain = Chain::from_parts(samples.clone(), vec![true; n], 0).unwrap();
        let moments = chain_moments(&chain).unwrap();
        let cfg = OptimizerConfig::default();
        let (q, _) = mom_initialization(&moments, FactorFamily::Gaussian, &cfg).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            prop_assert!((q.factor(j).mean() - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            if var >= 1e-6 {
                prop_assert!((q.factor(j).variance() - var).abs() <= 1e-9 * (1.0 + var));
            }
        }
    }

    #[test]
    fn shifted_gamma_moments_round_trip(
        shift_mean in prop::collection::vec(1.0f64..40.0, 2),
        sd in prop::collection::vec(0.5f64..10.0, 2),
    ) {
        // Two-point samples per coordinate with the requested mean and spread.
        let samples: Vec<Vec<f64>> = (0..4)
            .map(|t| {
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                (0..2).map(|j| 2.0 + shift_mean[j] + sign * sd[j]).collect()
            })
            .collect();
        let chain = Chain::from_parts(samples, vec![true; 4], 0).unwrap();
        let moments = chain_moments(&chain).unwrap();
        let (q, warnings) =
            mom_initialization(&moments, FactorFamily::ShiftedGamma, &OptimizerConfig::default()).unwrap();
        for j in 0..2 {
            let [shape, scale] = q.factor(j).params();
            if warnings.is_empty() {
                prop_assert!((q.factor(j).mean() - moments.means[j]).abs() < 1e-9 * moments.means[j]);
                prop_assert!((q.factor(j).variance() - moments.variances[j]).abs() < 1e-9 * moments.variances[j]);
            }
            prop_assert!(shape > 0.0 && scale > 0.0);
        }
    }

    #[test]
    fn closed_form_elbo_never_decreases(
        cov in spd_2x2(),
        seed in any::<u64>(),
        init in prop::collection::vec((-100.0f64..100.0, 0.01f64..100.0), 2),
    ) {
        let model = small_model(seed, &cov, 30, 50.0);
        let q0 = MeanFieldPosterior::gaussian(&init).unwrap();
        let (q, trace) = cavi_closed_form(&model, &q0, &OptimizerConfig::default()).unwrap();
        let scale = trace.elbo_per_sweep[0].abs().max(1.0);
        prop_assert!(trace.max_decrease() <= 1e-10 * scale);
        let e0 = conjugate_gaussian_elbo(&model, &q0).unwrap();
        let e1 = conjugate_gaussian_elbo(&model, &q).unwrap();
        prop_assert!(e1 >= e0 - 1e-10 * scale);
    }

    #[test]
    fn closed_form_optimum_ignores_the_initialization(
        cov in spd_2x2(),
        seed in any::<u64>(),
        a in prop::collection::vec((-100.0f64..100.0, 0.01f64..100.0), 2),
        b in prop::collection::vec((-100.0f64..100.0, 0.01f64..100.0), 2),
    ) {
        let model = small_model(seed, &cov, 30, 50.0);
        let cfg = OptimizerConfig::default();
        let (qa, _) = cavi_closed_form(&model, &MeanFieldPosterior::gaussian(&a).unwrap(), &cfg).unwrap();
        let (qb, _) = cavi_closed_form(&model, &MeanFieldPosterior::gaussian(&b).unwrap(), &cfg).unwrap();
        let post = conjugate_posterior(&model);
        for j in 0..2 {
            prop_assert!((qa.factor(j).mean() - qb.factor(j).mean()).abs() < 1e-6);
            prop_assert!((qa.factor(j).mean() - post.mean[j]).abs() < 1e-6);
            prop_assert!((qa.factor(j).variance() - qb.factor(j).variance()).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_round_trip(rows in prop::collection::vec(row_strategy(), 0..6)) {
        let dir = tempfile::tempdir().unwrap();
        let report = Report { rows };
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let path = dir.path().join(format!("r.{}", format.extension()));
            emit_report(&report, format, &path).unwrap();
            let back = parse_report(&path, format).unwrap();
            prop_assert_eq!(&back, &report);
        }
    }

    #[test]
    fn metropolis_hastings_is_reproducible(seed in any::<u64>(), steps in 2usize..200) {
        let cov = CovMatrix::identity(2);
        let model = GaussianMeanModel::without_data(cov, vec![0.0, 0.0], 4.0).unwrap();
        let cfg = MhConfig {
            total_steps: steps,
            burn_in: steps / 2,
            step_sizes: vec![1.0, 1.0],
            seed: RngSeed(seed),
        };
        let init = LatentPoint::new(vec![0.5, -0.5]).unwrap();
        let a = metropolis_hastings(&model, &init, &cfg).unwrap();
        let b = metropolis_hastings(&model, &init, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), steps);
        prop_assert_eq!(a.post_burn_in_len(), steps - steps / 2);
    }
}

fn row_strategy() -> impl Strategy<Value = Row> {
    (
        "[a-z-]{1,12}",
        "[a-z0-9]{1,6}",
        0.0f64..1e3,
        prop::collection::vec(-1e6f64..1e6, 0..4),
        prop_oneof![
            Just(None),
            Just(Some(f64::INFINITY)),
            (0.0f64..1e7).prop_map(Some)
        ],
        prop_oneof![
            Just(None),
            Just(Some(KlMethod::ClosedForm)),
            Just(Some(KlMethod::Quadrature)),
            Just(Some(KlMethod::Discrete)),
        ],
        "[a-z ,\"=]{0,16}",
    )
        .prop_map(
            |(algorithm, init, wall_time_s, params, kl_nats, kl_method, notes)| Row {
                algorithm,
                init,
                wall_time_s,
                params: serde_json::json!(params),
                kl_nats,
                kl_method,
                notes,
            },
        )
}

fn draws(params: &[(f64, f64)], n: usize, seed: u64) -> Chain {
    let q = MeanFieldPosterior::gaussian(params).unwrap();
    let mut rng = RngSeed(seed).rng();
    let samples: Vec<Vec<f64>> = (0..n).map(|_| q.sample(&mut rng)).collect();
    Chain::from_parts(samples, vec![true; n], 0).unwrap()
}

#[test]
fn mean_field_view_matches_closed_form_kl() {
    let q = MeanFieldPosterior::gaussian(&[(1.0, 2.0), (-1.0, 0.5)]).unwrap();
    let g = mean_field_as_gaussian(&q).unwrap();
    let p = GaussianDensity::new(vec![0.0, 0.0], CovMatrix::identity(2)).unwrap();
    // Independent oracle: sum of univariate Gaussian KLs.
    let uni = |m: f64, v: f64| 0.5 * (v + m * m - 1.0 - v.ln());
    let want = uni(1.0, 2.0) + uni(-1.0, 0.5);
    assert_abs_diff_eq!(kl_gaussian(&g, &p).unwrap().nats, want, epsilon = 1e-12);
    let grid = GridSpec::uniform(&[(-12.0, 12.0), (-12.0, 12.0)], 400).unwrap();
    assert_abs_diff_eq!(
        kl_quadrature(&q, &p, &grid).unwrap().nats,
        want,
        epsilon = 1e-3
    );
}

#[test]
fn discrete_kl_shrinks_with_longer_reference_chains() {
    // q equals the sampling distribution, so only histogram noise remains.
    let params = [(0.0, 1.0), (2.0, 0.5)];
    let q = MeanFieldPosterior::gaussian(&params).unwrap();
    let median = |n: usize| {
        let mut v: Vec<f64> = (0..5)
            .map(|s| {
                let chain = draws(&params, n, 10 + s);
                let grid = GridSpec::from_chain(&chain, 10, 0.1).unwrap();
                kl_discrete(&q, &chain, &grid, DiscreteDirection::ReferenceToFitted)
                    .unwrap()
                    .nats
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let m = [median(100), median(1_000), median(10_000)];
    assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
}

#[test]
fn chain_csv_round_trip() {
    let chain = draws(&[(0.0, 1.0), (5.0, 2.0)], 50, 3);
    let chain = Chain::from_parts(
        chain.samples().map(<[f64]>::to_vec).collect(),
        chain.accepted().to_vec(),
        10,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.csv");
    chain.write_csv(&path).unwrap();
    let back = Chain::read_csv(&path, 10).unwrap();
    assert_eq!(back.len(), chain.len());
    for t in 0..chain.len() {
        assert_eq!(back.sample(t), chain.sample(t));
    }
    assert_eq!(back.burn_in(), 10);
}
