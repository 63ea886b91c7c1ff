//! Non-centrality parameters of the association tests.
//!
//! Under local alternatives `β₂ = c₂/√n` a Wald, score or LR statistic is
//! asymptotically `χ²_q(ncp)` with
//!
//! ```text
//! ncp = β₂ᵀ [H₂₂ - H₂₁ H₁₁⁻¹ H₁₂] β₂ → c₂ᵀ [P₂₂ - P₂₁ P₁₁⁻¹ P₁₂] c₂ / σ²
//! ```
//!
//! where `H` is the Fisher information and `P = lim XᵀX/n` the moment matrix.
//! Logistic models behave like linear models with σ² = 4 near the null.
//!
//! When the fitted model omits terms of the generating model, the mean of
//! each genotype group is first projected onto the fitted columns; the ncp is
//! then the Schur form of the projected tested coefficients. For designs whose
//! orthogonal re-parametrization spans the fitted columns this coincides with
//! converting the group means into orthogonal coefficients directly.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::coding::{ChromosomeKind, CodingScheme, DesignMatrix, Genotype, ModelId, ModelSpec, Reparametrization, RiskAllele, Sex, Xci};
use crate::error::{invalid, Error, Result};
use crate::glm::Family;
use crate::linalg;
use crate::power::{power, PowerQuery};

/// Logistic models near the null have `μ(1-μ) ≈ 1/4`.
pub const LOGISTIC_SIGMA2: f64 = 4.0;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationSpec {
    /// Frequency of the alternative allele `R` in females.
    pub f_female: f64,
    /// Frequency of `R` in males.
    pub f_male: f64,
    /// Proportion of males.
    pub sex_ratio: f64,
    /// Female genotype frequencies (rr, rR, RR); `None` means HWE.
    pub female_genotypes: Option<[f64; 3]>,
}

impl PopulationSpec {
    pub fn new(f_female: f64, f_male: f64) -> Result<Self> {
        Self::with_sex_ratio(f_female, f_male, 0.5)
    }

    pub fn with_sex_ratio(f_female: f64, f_male: f64, sex_ratio: f64) -> Result<Self> {
        let pop = Self {
            f_female,
            f_male,
            sex_ratio,
            female_genotypes: None,
        };
        pop.validate()?;
        Ok(pop)
    }

    /// Female genotype frequencies away from HWE.
    pub fn with_female_genotypes(mut self, freqs: [f64; 3]) -> Result<Self> {
        if freqs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (freqs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("genotype frequencies must be a probability vector"));
        }
        self.female_genotypes = Some(freqs);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("f_female", self.f_female), ("f_male", self.f_male), ("sex_ratio", self.sex_ratio)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn hwe(f: f64) -> [f64; 3] {
        [(1.0 - f) * (1.0 - f), 2.0 * f * (1.0 - f), f * f]
    }

    pub fn female_frequencies(&self) -> [f64; 3] {
        self.female_genotypes.unwrap_or_else(|| Self::hwe(self.f_female))
    }
}

/// One genotype-by-sex group with its population probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub genotype: Genotype,
    pub sex: Sex,
    pub prob: f64,
}

/// All genotype groups with positive probability: five on the X chromosome,
/// six (three genotypes by sex) on an autosome.
pub fn population_states(pop: &PopulationSpec, chrom: ChromosomeKind) -> Vec<State> {
    let rho = pop.sex_ratio;
    let fem = pop.female_frequencies();
    let mut states: Vec<State> = Genotype::DIPLOID
        .iter()
        .zip(fem)
        .map(|(&genotype, p)| State {
            genotype,
            sex: Sex::Female,
            prob: (1.0 - rho) * p,
        })
        .collect();
    match chrom {
        ChromosomeKind::X => {
            states.push(State {
                genotype: Genotype::RefHemi,
                sex: Sex::Male,
                prob: rho * (1.0 - pop.f_male),
            });
            states.push(State {
                genotype: Genotype::AltHemi,
                sex: Sex::Male,
                prob: rho * pop.f_male,
            });
        }
        ChromosomeKind::Autosome => {
            for (&genotype, p) in Genotype::DIPLOID.iter().zip(PopulationSpec::hwe(pop.f_male)) {
                states.push(State {
                    genotype,
                    sex: Sex::Male,
                    prob: rho * p,
                });
            }
        }
    }
    states
}

/// Mean phenotype (or linear predictor) of each genotype group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectSpec {
    pub mu_rr: f64,
    pub mu_het: f64,
    pub mu_alt_hom: f64,
    pub mu_male_ref: f64,
    pub mu_male_alt: f64,
    pub sigma2: f64,
    pub family: Family,
}

impl EffectSpec {
    /// Group means in the order rr, rR, RR, r, R.
    pub fn new(mu: [f64; 5], sigma2: f64, family: Family) -> Result<Self> {
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(invalid("group means must be finite"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid(format!("sigma2 = {sigma2} must be positive")));
        }
        Ok(Self {
            mu_rr: mu[0],
            mu_het: mu[1],
            mu_alt_hom: mu[2],
            mu_male_ref: mu[3],
            mu_male_alt: mu[4],
            sigma2,
            family,
        })
    }

    /// Autosome effects `β_A` on the (0, 1, 2) count of `R` and `β_D` on the
    /// heterozygote, with baseline 0.
    pub fn autosome(beta_a: f64, beta_d: f64, sigma2: f64, family: Family) -> Result<Self> {
        Self::new([0.0, beta_a + beta_d, 2.0 * beta_a, 0.0, 0.0], sigma2, family)
    }

    pub fn means(&self) -> [f64; 5] {
        [self.mu_rr, self.mu_het, self.mu_alt_hom, self.mu_male_ref, self.mu_male_alt]
    }

    /// Group mean of a state. Autosome males share the female means.
    pub fn mean_of(&self, g: Genotype) -> f64 {
        match g {
            Genotype::RefHom => self.mu_rr,
            Genotype::Het => self.mu_het,
            Genotype::AltHom => self.mu_alt_hom,
            Genotype::RefHemi => self.mu_male_ref,
            Genotype::AltHemi => self.mu_male_alt,
            Genotype::Missing => f64::NAN,
        }
    }

    /// Residual variance entering the ncp: σ² for linear, 4 for logistic.
    pub fn effective_sigma2(&self) -> f64 {
        match self.family {
            Family::Linear => self.sigma2,
            Family::Logistic => LOGISTIC_SIGMA2,
        }
    }
}

fn state_rows(states: &[State], spec: &ModelSpec, chrom: ChromosomeKind) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = states.iter().map(|s| spec.row(s.genotype, s.sex, chrom)).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

fn weighted_moments(rows: &DMatrix<f64>, states: &[State]) -> DMatrix<f64> {
    let w = DVector::from_iterator(states.len(), states.iter().map(|s| s.prob));
    linalg::weighted_gram(rows, &w)
}

fn check_no_covariates(spec: &ModelSpec) -> Result<()> {
    if spec.extra_covariates > 0 {
        return Err(Error::Precondition("population moments do not cover extra covariates".into()));
    }
    Ok(())
}

/// Limit of `XᵀX/n`: expected products of the coded covariates.
pub fn moment_matrix(pop: &PopulationSpec, spec: &ModelSpec, chrom: ChromosomeKind) -> Result<DMatrix<f64>> {
    pop.validate()?;
    check_no_covariates(spec)?;
    if !spec.model.supports(chrom) {
        return Err(Error::UnsupportedModel {
            model: spec.model.to_string(),
            chrom: chrom.to_string(),
        });
    }
    let states = population_states(pop, chrom);
    Ok(weighted_moments(&state_rows(&states, spec, chrom)?, &states))
}

/// Frequencies of the coded risk allele in each sex.
fn risk_frequencies(pop: &PopulationSpec, spec: &ModelSpec) -> (f64, f64) {
    let freq = |risk: RiskAllele, f: f64| match risk {
        RiskAllele::Alt => f,
        RiskAllele::Ref => 1.0 - f,
    };
    (
        freq(spec.scheme_for(Sex::Female).risk, pop.f_female),
        freq(spec.scheme_for(Sex::Male).risk, pop.f_male),
    )
}

fn reparam_for(pop: &PopulationSpec, spec: &ModelSpec) -> Result<Reparametrization> {
    let (ff, fm) = risk_frequencies(pop, spec);
    Reparametrization::with_male_fraction(ff, fm, pop.sex_ratio)
}

fn reparam_rows(states: &[State], reparam: &Reparametrization, spec: &ModelSpec, chrom: ChromosomeKind) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = states
        .iter()
        .map(|s| reparam.row(s.genotype, s.sex, spec, chrom))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

/// Moment matrix of the orthogonal re-parametrized codings.
pub fn reparametrized_moment_matrix(pop: &PopulationSpec, spec: &ModelSpec, chrom: ChromosomeKind) -> Result<DMatrix<f64>> {
    pop.validate()?;
    check_no_covariates(spec)?;
    let states = population_states(pop, chrom);
    let reparam = reparam_for(pop, spec)?;
    Ok(weighted_moments(&reparam_rows(&states, &reparam, spec, chrom)?, &states))
}

/// Finite-sample ncp from the Fisher information of `x` at `beta`.
///
/// Linear: `H = XᵀX/σ²`. Logistic: `H = XᵀWX` with weights evaluated at the
/// null-constrained coefficients (tested entries of `beta` set to 0).
pub fn ncp_exact(x: &DesignMatrix, beta: &DVector<f64>, family: Family, sigma2: f64) -> Result<f64> {
    if beta.len() != x.ncols() {
        return Err(Error::LengthMismatch {
            what: "coefficients",
            got: beta.len(),
            expected: x.ncols(),
        });
    }
    let weights = match family {
        Family::Linear => {
            if sigma2.is_nan() || sigma2 <= 0.0 {
                return Err(invalid("sigma2 must be positive"));
            }
            DVector::from_element(x.nrows(), 1.0 / sigma2)
        }
        Family::Logistic => {
            let mut b0 = beta.clone();
            for &c in &x.tested {
                b0[c] = 0.0;
            }
            (&x.values * b0).map(|e| {
                let m = family.inverse_link(e);
                m * (1.0 - m)
            })
        }
    };
    let h = linalg::weighted_gram(&x.values, &weights);
    let schur = linalg::schur_complement(&h, &x.tested, &x.untested())?;
    Ok(linalg::quad_form(&schur, &linalg::select_entries(beta, &x.tested)))
}

/// `c₂ᵀ [P₂₂ - P₂₁P₁₁⁻¹P₁₂] c₂ / σ²` with `c₂ = β₂√n`.
pub fn ncp_asymptotic(p: &DMatrix<f64>, tested: &[usize], c2: &DVector<f64>, sigma2: f64) -> Result<f64> {
    if c2.len() != tested.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tested columns, {} coefficients",
            tested.len(),
            c2.len()
        )));
    }
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(invalid("sigma2 must be positive"));
    }
    let untested: Vec<usize> = (0..p.ncols()).filter(|c| !tested.contains(c)).collect();
    let schur = linalg::schur_complement(p, tested, &untested)?;
    Ok(linalg::quad_form(&schur, c2) / sigma2)
}

/// The generating model whose coefficients reproduce every group mean.
fn saturated_model(chrom: ChromosomeKind) -> ModelId {
    match chrom {
        ChromosomeKind::X => ModelId::M4,
        ChromosomeKind::Autosome => ModelId::Genotypic,
    }
}

fn check_nested(fitted: &ModelSpec, chrom: ChromosomeKind) -> Result<()> {
    check_no_covariates(fitted)?;
    if !fitted.model.supports(chrom) {
        return Err(Error::NotNested {
            fitted: format!("{} on {chrom}", fitted.model),
        });
    }
    Ok(())
}

/// Asymptotic ncp of the fitted model's test when data follow the group
/// means in `effects`, for a sample of size `n`.
///
/// Uses the orthogonal re-parametrization when it spans the fitted model and
/// the omitted terms are orthogonal to it, otherwise projects the group means
/// onto the fitted columns.
pub fn ncp_misspecified(effects: &EffectSpec, pop: &PopulationSpec, fitted: &ModelSpec, chrom: ChromosomeKind, n: usize) -> Result<f64> {
    pop.validate()?;
    check_nested(fitted, chrom)?;
    match ncp_via_reparametrization(effects, pop, fitted, chrom, n)? {
        Some(ncp) => Ok(ncp),
        None => ncp_via_projection(effects, pop, fitted, chrom, n),
    }
}

/// Population least-squares fit of the group means on the fitted columns,
/// then the Schur form of its tested block.
pub fn ncp_via_projection(effects: &EffectSpec, pop: &PopulationSpec, fitted: &ModelSpec, chrom: ChromosomeKind, n: usize) -> Result<f64> {
    check_nested(fitted, chrom)?;
    let states = population_states(pop, chrom);
    let rows = state_rows(&states, fitted, chrom)?;
    let p = weighted_moments(&rows, &states);
    let mu = DVector::from_iterator(states.len(), states.iter().map(|s| effects.mean_of(s.genotype)));
    let w = DVector::from_iterator(states.len(), states.iter().map(|s| s.prob));
    let rhs = rows.transpose() * mu.component_mul(&w);
    let b = linalg::spd_solve(&p, &rhs)?;
    let tested = fitted.tested_columns();
    let c2 = linalg::select_entries(&b, &tested) * (n as f64).sqrt();
    ncp_asymptotic(&p, &tested, &c2, effects.effective_sigma2())
}

/// Group means converted to orthogonal coefficients of the saturated model.
/// Returns `None` when the re-parametrized columns of the fitted model do not
/// span its design or the omitted columns are not orthogonal to it.
pub fn ncp_via_reparametrization(
    effects: &EffectSpec,
    pop: &PopulationSpec,
    fitted: &ModelSpec,
    chrom: ChromosomeKind,
    n: usize,
) -> Result<Option<f64>> {
    if fitted.model == ModelId::M0 || (chrom == ChromosomeKind::Autosome && fitted.model.has_sex()) {
        return Ok(None);
    }
    let full = ModelSpec {
        model: saturated_model(chrom),
        ..*fitted
    };
    // Autosome group means do not depend on sex; the female states suffice.
    let states: Vec<State> = population_states(pop, chrom)
        .into_iter()
        .filter(|s| chrom == ChromosomeKind::X || s.sex == Sex::Female)
        .collect();
    let reparam = reparam_for(pop, fitted)?;
    let star_full = reparam_rows(&states, &reparam, &full, chrom)?;
    let mu = DVector::from_iterator(states.len(), states.iter().map(|s| effects.mean_of(s.genotype)));
    let beta_star = match star_full.clone().lu().solve(&mu) {
        Some(b) => b,
        None => return Ok(None),
    };

    let full_terms = full.terms();
    let fitted_terms = fitted.terms();
    let fitted_idx: Vec<usize> = fitted_terms
        .iter()
        .map(|t| full_terms.iter().position(|u| u == t).expect("fitted terms are a subset"))
        .collect();
    let omitted_idx: Vec<usize> = (0..full_terms.len()).filter(|i| !fitted_idx.contains(i)).collect();

    let all_states = population_states(pop, chrom);
    let star_all = reparam_rows(&all_states, &reparam, &full, chrom)?;
    let p_star = weighted_moments(&star_all, &all_states);

    // Omitted starred columns must be uncorrelated with the fitted ones.
    let cross = linalg::select_block(&p_star, &fitted_idx, &omitted_idx);
    if linalg::max_abs(&cross) > TOL * linalg::max_abs(&p_star).max(1.0) {
        return Ok(None);
    }
    // The starred fitted columns must span the original fitted columns.
    let orig = state_rows(&all_states, fitted, chrom)?;
    let star_fit = linalg::select_columns(&star_all, &fitted_idx);
    let mut joint = DMatrix::zeros(orig.nrows(), orig.ncols() + star_fit.ncols());
    joint.columns_mut(0, orig.ncols()).copy_from(&orig);
    joint.columns_mut(orig.ncols(), star_fit.ncols()).copy_from(&star_fit);
    if linalg::numerical_rank(&joint, 1e-9) != orig.ncols() {
        return Ok(None);
    }
    // Tested blocks must also correspond: untested starred columns span the
    // original untested columns.
    let untested_orig = linalg::select_columns(&orig, &fitted.untested_columns());
    let fitted_untested: Vec<usize> = fitted.untested_columns().iter().map(|&c| fitted_idx[c]).collect();
    let star_untested = linalg::select_columns(&star_all, &fitted_untested);
    let mut joint_u = DMatrix::zeros(orig.nrows(), 2 * untested_orig.ncols());
    joint_u.columns_mut(0, untested_orig.ncols()).copy_from(&untested_orig);
    joint_u
        .columns_mut(untested_orig.ncols(), star_untested.ncols())
        .copy_from(&star_untested);
    if linalg::numerical_rank(&joint_u, 1e-9) != untested_orig.ncols() {
        return Ok(None);
    }

    let p_fit = linalg::select_block(&p_star, &fitted_idx, &fitted_idx);
    let tested = fitted.tested_columns();
    let tested_full: Vec<usize> = tested.iter().map(|&c| fitted_idx[c]).collect();
    let c2 = linalg::select_entries(&beta_star, &tested_full) * (n as f64).sqrt();
    Ok(Some(ncp_asymptotic(&p_fit, &tested, &c2, effects.effective_sigma2())?))
}

/// Additive effect seen by an additive test when the true model has a
/// dominance deviation `d`: `a* = a + (w_rr - w_RR)·d`, with homozygote
/// weights proportional to `(1-f)²` and `f²`.
pub fn effective_additive(a: f64, d: f64, f: f64) -> Result<f64> {
    if !(f > 0.0 && f < 1.0) {
        return Err(invalid(format!("f = {f} must lie in (0, 1)")));
    }
    let (hom_r, hom_alt) = ((1.0 - f) * (1.0 - f), f * f);
    let w_rr = hom_r / (hom_r + hom_alt);
    let w_alt = hom_alt / (hom_r + hom_alt);
    Ok(a + (w_rr - w_alt) * d)
}

/// Orthogonal additive coefficient on an autosome: `β_A* = β_A + β_D(1-2f)`.
pub fn reparametrized_additive(beta_a: f64, beta_d: f64, f: f64) -> f64 {
    beta_a + beta_d * (1.0 - 2.0 * f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMeanFit {
    pub beta: DVector<f64>,
    pub labels: Vec<crate::coding::Term>,
    /// True when the model cannot reproduce every group mean and `beta` is a
    /// population-weighted least-squares projection.
    pub projected: bool,
}

/// Coefficients of `model` that reproduce the group means. Sub-models that
/// cannot match every mean are fitted by least squares weighted by `pop`
/// (equal weights when `pop` is `None`).
pub fn beta_from_group_means(
    effects: &EffectSpec,
    model: &ModelSpec,
    chrom: ChromosomeKind,
    pop: Option<&PopulationSpec>,
) -> Result<GroupMeanFit> {
    check_nested(model, chrom)?;
    let default_pop = PopulationSpec::new(0.5, 0.5)?;
    let states = population_states(pop.unwrap_or(&default_pop), chrom);
    let rows = state_rows(&states, model, chrom)?;
    let mu = DVector::from_iterator(states.len(), states.iter().map(|s| effects.mean_of(s.genotype)));
    let w = match pop {
        Some(_) => DVector::from_iterator(states.len(), states.iter().map(|s| s.prob)),
        None => DVector::from_element(states.len(), 1.0),
    };
    let gram = linalg::weighted_gram(&rows, &w);
    if linalg::numerical_rank(&gram, 1e-12) < gram.nrows() {
        return Err(Error::SingularDesign);
    }
    let beta = linalg::spd_solve(&gram, &(rows.transpose() * mu.component_mul(&w)))?;
    let resid = (&rows * &beta - &mu).amax();
    Ok(GroupMeanFit {
        beta,
        labels: model.terms(),
        projected: resid > 1e-9 * (1.0 + mu.amax()),
    })
}

/// Which group mean a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Vary the female heterozygote mean (dominance / skewed XCI).
    Dominant,
    /// Vary the male `R` mean (interaction / XCI status).
    Interaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// (model, ncp, power) for each model in the sweep.
    pub entries: Vec<(ModelId, f64, f64)>,
}

/// Power of M1–M4 as one group mean sweeps over `values`, the others fixed
/// at `base`. Each model is fitted under `scheme`.
pub fn x_power_sweep(
    base: &EffectSpec,
    pop: &PopulationSpec,
    scheme: CodingScheme,
    kind: SweepKind,
    values: &[f64],
    n: usize,
    alpha: f64,
) -> Result<Vec<SweepRow>> {
    let models = [ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4];
    values
        .iter()
        .map(|&v| {
            let mut e = *base;
            match kind {
                SweepKind::Dominant => e.mu_het = v,
                SweepKind::Interaction => e.mu_male_alt = v,
            }
            let entries = models
                .iter()
                .map(|&m| {
                    let spec = ModelSpec::new(m, e.family, scheme);
                    let ncp = ncp_misspecified(&e, pop, &spec, ChromosomeKind::X, n)?;
                    let pw = power(&PowerQuery::new(m.df() as u32, ncp, alpha)?)?;
                    Ok((m, ncp, pw))
                })
                .collect::<Result<_>>()?;
            Ok(SweepRow { value: v, entries })
        })
        .collect()
}

/// Power of the additive and genotypic autosome tests as `β_D` sweeps over
/// `values` with `β_A` fixed.
pub fn autosome_power_sweep(beta_a: f64, f: f64, values: &[f64], sigma2: f64, n: usize, alpha: f64) -> Result<Vec<SweepRow>> {
    let pop = PopulationSpec::new(f, f)?;
    values
        .iter()
        .map(|&d| {
            let e = EffectSpec::autosome(beta_a, d, sigma2, Family::Linear)?;
            let entries = [ModelId::Additive, ModelId::Genotypic]
                .iter()
                .map(|&m| {
                    let spec = ModelSpec::new(m, Family::Linear, CodingScheme::default());
                    let ncp = ncp_misspecified(&e, &pop, &spec, ChromosomeKind::Autosome, n)?;
                    let pw = power(&PowerQuery::new(m.df() as u32, ncp, alpha)?)?;
                    Ok((m, ncp, pw))
                })
                .collect::<Result<_>>()?;
            Ok(SweepRow { value: d, entries })
        })
        .collect()
}

/// Writes sweep rows as CSV with one `ncp_<model>` and `power_<model>` pair
/// per model.
pub fn write_sweep_csv<W: Write>(out: W, sweep_label: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut header = vec![sweep_label.to_string()];
    for (m, _, _) in &first.entries {
        header.push(format!("ncp_{m}"));
        header.push(format!("power_{m}"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{}", r.value)];
        for (_, ncp, pw) in &r.entries {
            rec.push(format!("{ncp:.8}"));
            rec.push(format!("{pw:.8}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Scheme label used in sweep output.
pub fn xci_label(xci: Xci) -> &'static str {
    match xci {
        Xci::Inactivated => "XCI",
        Xci::NotInactivated => "noXCI",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{build_design, Term};

    const XCI_R: CodingScheme = CodingScheme::new(RiskAllele::Alt, Xci::Inactivated);
    const NOXCI_R: CodingScheme = CodingScheme::new(RiskAllele::Alt, Xci::NotInactivated);

    fn figure2_effects(mu_het: f64, mu_male_alt: f64) -> EffectSpec {
        EffectSpec::new([-0.3, mu_het, 0.3, 0.0, mu_male_alt], 4.0, Family::Linear).unwrap()
    }

    #[test]
    fn test_moment_matrix_entries() {
        let f = 0.3;
        let pop = PopulationSpec::new(f, f).unwrap();
        let spec = ModelSpec::new(ModelId::Genotypic, Family::Linear, XCI_R);
        let p = moment_matrix(&pop, &spec, ChromosomeKind::Autosome).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((p[(0, 1)] - 2.0 * f).abs() < 1e-15);
        assert!((p[(0, 2)] - 2.0 * f * (1.0 - f)).abs() < 1e-15);
        assert!((p[(1, 2)] - 2.0 * f * (1.0 - f)).abs() < 1e-15);

        let m4 = ModelSpec::new(ModelId::M4, Family::Linear, XCI_R);
        let p = moment_matrix(&pop, &m4, ChromosomeKind::X).unwrap();
        assert_eq!(p.shape(), (5, 5));
        assert!((p[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn test_reparametrized_moments() {
        for f in [0.1, 0.2, 0.5, 0.7] {
            let pop = PopulationSpec::new(f, f).unwrap();
            let spec = ModelSpec::new(ModelId::Genotypic, Family::Linear, XCI_R);
            let p = reparametrized_moment_matrix(&pop, &spec, ChromosomeKind::Autosome).unwrap();
            assert!(p[(0, 2)].abs() < 1e-15 && p[(1, 2)].abs() < 1e-15);
            assert!((p[(0, 1)] - (-1.0 + 2.0 * f)).abs() < 1e-15);
            assert!((p[(1, 1)] - (1.0 - 2.0 * f + 2.0 * f * f)).abs() < 1e-15);
            assert!((p[(2, 2)] - 4.0 * f * f * (1.0 - f) * (1.0 - f)).abs() < 1e-15);
        }
        // X chromosome: G_D* and GS* are uncorrelated with everything else.
        let pop = PopulationSpec::new(0.2, 0.35).unwrap();
        let m4 = ModelSpec::new(ModelId::M4, Family::Linear, XCI_R);
        let p = reparametrized_moment_matrix(&pop, &m4, ChromosomeKind::X).unwrap();
        for other in 0..3 {
            assert!(p[(3, other)].abs() < 1e-15, "G_D* vs {other}");
            assert!(p[(4, other)].abs() < 1e-15, "GS* vs {other}");
        }
        assert!(p[(3, 4)].abs() < 1e-15);
    }

    #[test]
    fn test_ncp_exact_closed_form() {
        // Balanced f = 0.5 sample of 1000 with β_A = 0.3, σ² = 4.
        let mut genos = Vec::new();
        for (g, k) in [(Genotype::RefHom, 250), (Genotype::Het, 500), (Genotype::AltHom, 250)] {
            genos.extend(std::iter::repeat_n(g, k));
        }
        let sexes = vec![Sex::Female; genos.len()];
        let spec = ModelSpec::new(ModelId::Additive, Family::Linear, XCI_R);
        let x = build_design(&genos, &sexes, None, &spec, ChromosomeKind::Autosome).unwrap();
        let beta = DVector::from_vec(vec![0.0, 0.3]);
        let ncp = ncp_exact(&x, &beta, Family::Linear, 4.0).unwrap();
        assert!((ncp - 11.25).abs() < 1e-10);
        assert_eq!(ncp_exact(&x, &DVector::from_vec(vec![1.0, 0.0]), Family::Linear, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn test_ncp_asymptotic_orthogonal() {
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let c2 = DVector::from_vec(vec![2.0]);
        assert!((ncp_asymptotic(&p, &[1], &c2, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(ncp_asymptotic(&p, &[1], &DVector::zeros(1), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn test_additive_closed_form() {
        for f in [0.2, 0.5] {
            for d in [-0.6, 0.0, 0.4] {
                let e = EffectSpec::autosome(0.3, d, 4.0, Family::Linear).unwrap();
                let pop = PopulationSpec::new(f, f).unwrap();
                let spec = ModelSpec::new(ModelId::Additive, Family::Linear, XCI_R);
                let ncp = ncp_misspecified(&e, &pop, &spec, ChromosomeKind::Autosome, 1000).unwrap();
                let a_star = reparametrized_additive(0.3, d, f);
                let expected = 2.0 * f * (1.0 - f) * 1000.0 * a_star * a_star / 4.0;
                assert!((ncp - expected).abs() < 1e-9, "f {f} d {d}: {ncp} vs {expected}");
            }
        }
    }

    #[test]
    fn test_routes_agree_where_reparametrization_applies() {
        let pop = PopulationSpec::new(0.2, 0.2).unwrap();
        let e = figure2_effects(0.25, -0.4);
        for scheme in CodingScheme::ALL {
            for model in [ModelId::M1, ModelId::M3, ModelId::M4] {
                let spec = ModelSpec::new(model, Family::Linear, scheme);
                let a = ncp_via_reparametrization(&e, &pop, &spec, ChromosomeKind::X, 1000).unwrap();
                let b = ncp_via_projection(&e, &pop, &spec, ChromosomeKind::X, 1000).unwrap();
                if let Some(a) = a {
                    assert!((a - b).abs() < 1e-8 * (1.0 + b), "{model} {}: {a} vs {b}", scheme.label());
                } else {
                    assert!(model == ModelId::M1 && scheme.xci == Xci::NotInactivated);
                }
            }
        }
    }

    #[test]
    fn test_m4_ncp_coding_invariant() {
        let pop = PopulationSpec::new(0.3, 0.4).unwrap();
        let e = figure2_effects(0.1, 0.5);
        let ncps: Vec<f64> = CodingScheme::ALL
            .iter()
            .map(|&s| {
                let spec = ModelSpec::new(ModelId::M4, Family::Linear, s);
                ncp_misspecified(&e, &pop, &spec, ChromosomeKind::X, 1000).unwrap()
            })
            .collect();
        for v in &ncps {
            assert!((v - ncps[0]).abs() < 1e-10 * ncps[0]);
        }
    }

    #[test]
    fn test_submodel_ncp_bounded_by_full() {
        let pop = PopulationSpec::new(0.2, 0.2).unwrap();
        for het in [-0.6, 0.0, 0.6] {
            for male in [-0.6, 0.0, 0.6] {
                let e = figure2_effects(het, male);
                let full = ncp_misspecified(
                    &e,
                    &pop,
                    &ModelSpec::new(ModelId::M4, Family::Linear, XCI_R),
                    ChromosomeKind::X,
                    1000,
                )
                .unwrap();
                for m in [ModelId::M1, ModelId::M2, ModelId::M3] {
                    for s in CodingScheme::ALL {
                        let sub = ncp_misspecified(&e, &pop, &ModelSpec::new(m, Family::Linear, s), ChromosomeKind::X, 1000).unwrap();
                        assert!(sub <= full * (1.0 + 1e-10) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn test_additive_ncp_constant_at_half() {
        let sweep = autosome_power_sweep(0.3, 0.5, &[-0.6, -0.3, 0.0, 0.3, 0.6], 4.0, 1000, 0.0025).unwrap();
        for r in &sweep {
            assert!((r.entries[0].1 - 11.25).abs() < 1e-9);
        }
        let sweep = autosome_power_sweep(0.3, 0.2, &[-0.6, 0.0, 0.6], 4.0, 1000, 0.0025).unwrap();
        assert!(sweep[0].entries[0].1 < sweep[1].entries[0].1);
        assert!(sweep[1].entries[0].1 < sweep[2].entries[0].1);
    }

    #[test]
    fn test_effective_additive() {
        assert!((effective_additive(0.3, 0.6, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(effective_additive(0.3, 0.0, 0.2).unwrap(), 0.3);
        let a = effective_additive(0.3, 0.6, 0.2).unwrap();
        assert!((a - (0.3 + 0.6 / 0.68 * 0.6)).abs() < 1e-15);
        assert!((a - 0.8294).abs() < 1e-4);
        assert!(effective_additive(0.3, 0.6, 1.0).is_err());
    }

    #[test]
    fn test_beta_from_group_means_m4() {
        for mu_r in [-0.6, 0.1, 0.6] {
            let e = figure2_effects(0.0, mu_r);
            let xci = beta_from_group_means(&e, &ModelSpec::new(ModelId::M4, Family::Linear, XCI_R), ChromosomeKind::X, None).unwrap();
            assert!(!xci.projected);
            let col = |fit: &GroupMeanFit, t: Term| fit.beta[fit.labels.iter().position(|&l| l == t).unwrap()];
            assert!((col(&xci, Term::Additive) - 0.6).abs() < 1e-12);
            assert!((col(&xci, Term::Interaction) - (mu_r - 0.6)).abs() < 1e-12);
            assert!(col(&xci, Term::Dominant).abs() < 1e-12);
            let no = beta_from_group_means(&e, &ModelSpec::new(ModelId::M4, Family::Linear, NOXCI_R), ChromosomeKind::X, None).unwrap();
            assert!((col(&no, Term::Additive) - 0.3).abs() < 1e-12);
            assert!((col(&no, Term::Interaction) - (mu_r - 0.3)).abs() < 1e-12);
        }
        let flat = EffectSpec::new([0.2; 5], 1.0, Family::Linear).unwrap();
        let fit = beta_from_group_means(&flat, &ModelSpec::new(ModelId::M4, Family::Linear, XCI_R), ChromosomeKind::X, None).unwrap();
        assert!(fit.beta.rows(1, 4).amax() < 1e-12);
    }

    #[test]
    fn test_beta_from_group_means_projection_flag() {
        let e = figure2_effects(0.4, 0.2);
        let pop = PopulationSpec::new(0.2, 0.2).unwrap();
        let fit = beta_from_group_means(
            &e,
            &ModelSpec::new(ModelId::M1, Family::Linear, XCI_R),
            ChromosomeKind::X,
            Some(&pop),
        )
        .unwrap();
        assert!(fit.projected);
        assert_eq!(fit.beta.len(), 3);
    }

    #[test]
    fn test_nesting_errors() {
        let pop = PopulationSpec::new(0.2, 0.2).unwrap();
        let e = figure2_effects(0.0, 0.3);
        let spec = ModelSpec::new(ModelId::Genotypic, Family::Linear, XCI_R);
        assert!(matches!(
            ncp_misspecified(&e, &pop, &spec, ChromosomeKind::X, 1000),
            Err(Error::NotNested { .. })
        ));
        assert!(PopulationSpec::new(0.0, 0.5).is_err());
    }

    #[test]
    fn test_sweep_csv() {
        let pop = PopulationSpec::new(0.5, 0.5).unwrap();
        let rows = x_power_sweep(
            &figure2_effects(0.0, 0.3),
            &pop,
            XCI_R,
            SweepKind::Dominant,
            &[-0.6, 0.0, 0.6],
            1000,
            0.0008,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, "mu_rR", &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mu_rR,ncp_M1,power_M1,ncp_M2"));
        assert_eq!(text.lines().count(), 4);
    }
}
