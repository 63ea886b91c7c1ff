use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use xwas_core::assoc::{run_tests, TestKind};
use xwas_core::chisq::{chisq_isf, chisq_sf, noncentral_chisq_cdf};
use xwas_core::coding::{
    build_design, code_additive, find_transformation, ChromosomeKind, CodingScheme, DesignMatrix, Genotype, ModelId, ModelSpec, RiskAllele,
    Sex, Term, Xci, DEFAULT_TRANSFORM_TOL,
};
use xwas_core::glm::{fit, Family};
use xwas_core::ncp::{beta_from_group_means, effective_additive, ncp_misspecified, EffectSpec, PopulationSpec};
use xwas_core::power::{power, PowerQuery};
use xwas_core::scan::hwe_check;

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Random design with an intercept, `k` untested and `q` tested columns,
/// plus a block upper-triangular transformation of it.
fn equivalent_pair(seed: u64, n: usize, k: usize, q: usize) -> (DesignMatrix, DesignMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = k + q;
    let x1 = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
    let mut t = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let lower_left = i >= k && j < k;
            if !lower_left {
                t[(i, j)] = rng.random_range(-0.5..0.5);
            }
        }
        t[(i, i)] = rng.random_range(2.0..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let labels: Vec<Term> = (0..p).map(|j| if j == 0 { Term::Intercept } else { Term::Covariate(j) }).collect();
    let tested: Vec<usize> = (k..p).collect();
    let a = DesignMatrix::from_matrix(x1.clone(), labels.clone(), tested.clone()).unwrap();
    let b = DesignMatrix::from_matrix(x1 * t, labels, tested).unwrap();
    (a, b)
}

fn response(seed: u64, x: &DesignMatrix, family: Family) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    (0..x.nrows())
        .map(|i| {
            let eta = 0.3 * x.values[(i, 1)] - 0.2;
            match family {
                Family::Linear => eta + rng.sample::<f64, _>(StandardNormal),
                Family::Logistic => (rng.random::<f64>() < Family::Logistic.inverse_link(eta)) as u8 as f64,
            }
        })
        .collect()
}

fn family_strategy() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Linear), Just(Family::Logistic)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn equivalent_designs_give_equal_fits_and_tests(seed in any::<u64>(), n in 120usize..300, k in 1usize..3, q in 1usize..4, family in family_strategy()) {
        let (x1, x2) = equivalent_pair(seed, n, k, q);
        let y = response(seed, &x1, family);
        prop_assert!(find_transformation(&x1, &x2, DEFAULT_TRANSFORM_TOL).unwrap().is_equivalent());
        for constrained in [false, true] {
            let f1 = fit(&x1, &y, family, constrained).unwrap();
            let f2 = fit(&x2, &y, family, constrained).unwrap();
            for i in 0..n {
                prop_assert!((f1.eta[i] - f2.eta[i]).abs() < 1e-8);
            }
            prop_assert!(rel(f1.phi, f2.phi) < 1e-8);
        }
        let kinds = [TestKind::Wald, TestKind::Score, TestKind::Lrt, TestKind::F];
        let t1 = run_tests(&x1, &y, family, &kinds).unwrap();
        let t2 = run_tests(&x2, &y, family, &kinds).unwrap();
        for (a, b) in t1.iter().zip(&t2) {
            prop_assert_eq!(a.kind, b.kind);
            prop_assert!(rel(a.statistic, b.statistic) < 1e-8, "{:?}: {} vs {}", a.kind, a.statistic, b.statistic);
        }
    }

    #[test]
    fn fits_satisfy_score_equations(seed in any::<u64>(), n in 100usize..300, family in family_strategy()) {
        let (x, _) = equivalent_pair(seed, n, 2, 2);
        let y = response(seed, &x, family);
        let full = fit(&x, &y, family, false).unwrap();
        prop_assert!(full.converged);
        let resid = DVector::from_iterator(n, y.iter().zip(full.mu.iter()).map(|(a, b)| a - b));
        let score = x.values.transpose() * resid;
        prop_assert!(score.amax() < 1e-8 * n as f64);
        let null = fit(&x, &y, family, true).unwrap();
        for &c in &x.tested {
            prop_assert_eq!(null.beta[c], 0.0);
        }
        if family == Family::Logistic {
            prop_assert!(full.mu.iter().all(|&m| m > 0.0 && m < 1.0));
            prop_assert_eq!(full.phi, 1.0);
        }
    }

    #[test]
    fn test_outputs_are_consistent(seed in any::<u64>(), family in family_strategy()) {
        let (x, _) = equivalent_pair(seed, 150, 2, 2);
        let y = response(seed, &x, family);
        for t in run_tests(&x, &y, family, &TestKind::CHI_SQUARED).unwrap() {
            prop_assert!(t.statistic >= 0.0);
            prop_assert_eq!(t.df, 2);
            prop_assert!((0.0..=1.0).contains(&t.p_value));
            prop_assert!((t.p_value - chisq_sf(t.statistic, 2).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn noncentral_cdf_is_monotone(df in 1u32..8, ncp in 0.0f64..60.0, a in 0.0f64..80.0, b in 0.0f64..80.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c_lo = noncentral_chisq_cdf(lo, df, ncp).unwrap();
        let c_hi = noncentral_chisq_cdf(hi, df, ncp).unwrap();
        prop_assert!((0.0..=1.0).contains(&c_lo) && (0.0..=1.0).contains(&c_hi));
        prop_assert!(c_lo <= c_hi + 1e-12);
    }

    #[test]
    fn power_is_monotone_and_sized(df in 1u32..4, ncp in 0.0f64..50.0, extra in 0.01f64..10.0, log_alpha in -9.0f64..-0.5) {
        let alpha = 10f64.powf(log_alpha);
        let p0 = power(&PowerQuery::new(df, 0.0, alpha).unwrap()).unwrap();
        prop_assert!(rel(p0, alpha) < 1e-8);
        let p = power(&PowerQuery::new(df, ncp, alpha).unwrap()).unwrap();
        let p_more = power(&PowerQuery::new(df, ncp + extra, alpha).unwrap()).unwrap();
        let p_looser = power(&PowerQuery::new(df, ncp, (alpha * 2.0).min(0.9)).unwrap()).unwrap();
        prop_assert!(p <= p_more + 1e-12);
        prop_assert!(p <= p_looser + 1e-12);
        prop_assert!(rel(chisq_sf(chisq_isf(alpha, df).unwrap(), df).unwrap(), alpha) < 1e-9);
    }

    #[test]
    fn ncp_properties(mu in prop::array::uniform5(-0.5f64..0.5), f_female in 0.1f64..0.9, f_male in 0.1f64..0.9, n in 100usize..5000) {
        let pop = PopulationSpec::new(f_female, f_male).unwrap();
        let effects = EffectSpec::new(mu, 4.0, Family::Linear).unwrap();
        let mut m4 = Vec::new();
        for scheme in CodingScheme::ALL {
            let spec = |m| ModelSpec::new(m, Family::Linear, scheme);
            let full = ncp_misspecified(&effects, &pop, &spec(ModelId::M4), ChromosomeKind::X, n).unwrap();
            let doubled = ncp_misspecified(&effects, &pop, &spec(ModelId::M4), ChromosomeKind::X, 2 * n).unwrap();
            prop_assert!(full >= 0.0);
            prop_assert!((doubled - 2.0 * full).abs() <= 1e-9 * (1.0 + doubled));
            for m in [ModelId::M1, ModelId::M2, ModelId::M3] {
                let sub = ncp_misspecified(&effects, &pop, &spec(m), ChromosomeKind::X, n).unwrap();
                prop_assert!(sub >= 0.0 && sub <= full * (1.0 + 1e-9) + 1e-12, "{m}: {sub} > {full}");
            }
            m4.push(full);
        }
        for v in &m4 {
            prop_assert!((v - m4[0]).abs() <= 1e-9 * (1.0 + m4[0]));
        }
    }

    #[test]
    fn m4_reproduces_any_group_means(mu in prop::array::uniform5(-1.0f64..1.0), scheme_idx in 0usize..4) {
        let effects = EffectSpec::new(mu, 1.0, Family::Linear).unwrap();
        let spec = ModelSpec::new(ModelId::M4, Family::Linear, CodingScheme::ALL[scheme_idx]);
        let fitted = beta_from_group_means(&effects, &spec, ChromosomeKind::X, None).unwrap();
        prop_assert!(!fitted.projected);
        for (g, s) in Genotype::X_STATES {
            let row = DVector::from_vec(spec.row(g, s, ChromosomeKind::X).unwrap());
            prop_assert!((row.dot(&fitted.beta) - effects.mean_of(g)).abs() < 1e-10);
        }
    }

    #[test]
    fn effective_additive_is_unchanged_at_half(a in -1.0f64..1.0, d in -1.0f64..1.0) {
        prop_assert!((effective_additive(a, d, 0.5).unwrap() - a).abs() < 1e-15);
    }

    #[test]
    fn hwe_p_is_a_probability(c0 in 0u64..2000, c1 in 0u64..2000, c2 in 1u64..2000) {
        let p = hwe_check([c0, c1, c2]).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn flipping_the_risk_allele_is_affine(g_idx in 0usize..5) {
        let (g, s) = Genotype::X_STATES[g_idx];
        let code = |risk, xci| code_additive(g, s, CodingScheme::new(risk, xci), ChromosomeKind::X).unwrap();
        // XCI: G_r = 1 - G_R for both sexes.
        prop_assert_eq!(code(RiskAllele::Ref, Xci::Inactivated), 1.0 - code(RiskAllele::Alt, Xci::Inactivated));
        // No XCI: the offset is 2 for females and 1 for males.
        let offset = if s == Sex::Male { 1.0 } else { 2.0 };
        prop_assert_eq!(code(RiskAllele::Ref, Xci::NotInactivated), offset - code(RiskAllele::Alt, Xci::NotInactivated));
    }
}

#[test]
fn design_drops_missing_rows() {
    let g = [Genotype::Het, Genotype::Missing, Genotype::AltHemi, Genotype::RefHom];
    let s = [Sex::Female, Sex::Female, Sex::Male, Sex::Female];
    let spec = ModelSpec::new(ModelId::M3, Family::Linear, CodingScheme::default());
    let x = build_design(&g, &s, None, &spec, ChromosomeKind::X).unwrap();
    assert_eq!(x.nrows(), 3);
    assert_eq!(x.select(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 3.0, 4.0]);
}
