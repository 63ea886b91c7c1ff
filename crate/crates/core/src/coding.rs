//! Genotype covariate codings and design matrices.
//!
//! A biallelic SNP has reference allele `r` and alternative allele `R`.
//! Females (and everyone on an autosome) carry one of `rr`, `rR`, `RR`;
//! males on the X chromosome carry a single copy, `r` or `R`.
//!
//! The additive covariate depends on which allele is counted (the risk
//! allele) and, on the X chromosome, on whether female heterozygotes are
//! treated as X-inactivated (female codes halved to 0, 0.5, 1):
//!
//! | coding       | rr | rR  | RR | r | R |
//! |--------------|----|-----|----|---|---|
//! | risk R, XCI  | 0  | 0.5 | 1  | 0 | 1 |
//! | risk r, XCI  | 1  | 0.5 | 0  | 1 | 0 |
//! | risk R, none | 0  | 1   | 2  | 0 | 1 |
//! | risk r, none | 2  | 1   | 0  | 1 | 0 |
//!
//! The dominant covariate flags heterozygotes, the sex covariate flags
//! males, and the gene-sex interaction is the additive code times sex.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::glm::Family;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChromosomeKind {
    Autosome,
    X,
}

impl fmt::Display for ChromosomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChromosomeKind::Autosome => write!(f, "A"),
            ChromosomeKind::X => write!(f, "X"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    /// Female = 0, male = 1.
    pub fn indicator(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
        }
    }
}

/// Genotype at a biallelic SNP. `Ref*` carry only the reference allele `r`,
/// `Alt*` only the alternative allele `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Genotype {
    /// rr
    RefHom,
    /// rR
    Het,
    /// RR
    AltHom,
    /// r (X-chromosome male)
    RefHemi,
    /// R (X-chromosome male)
    AltHemi,
    Missing,
}

impl Genotype {
    pub fn is_missing(self) -> bool {
        self == Genotype::Missing
    }

    pub fn is_hemizygous(self) -> bool {
        matches!(self, Genotype::RefHemi | Genotype::AltHemi)
    }

    /// Copies of the alternative allele `R`.
    pub fn alt_copies(self) -> Option<u8> {
        match self {
            Genotype::RefHom | Genotype::RefHemi => Some(0),
            Genotype::Het | Genotype::AltHemi => Some(1),
            Genotype::AltHom => Some(2),
            Genotype::Missing => None,
        }
    }

    /// Checks that the genotype state is possible for this sex and chromosome.
    pub fn validate(self, sex: Sex, chrom: ChromosomeKind) -> Result<()> {
        match (self, sex, chrom) {
            (Genotype::Missing, _, _) => Err(Error::MissingGenotype),
            (g, _, ChromosomeKind::Autosome) if g.is_hemizygous() => {
                Err(Error::SexGenotypeConflict("hemizygous genotype on an autosome".into()))
            }
            (g, Sex::Female, ChromosomeKind::X) if g.is_hemizygous() => {
                Err(Error::SexGenotypeConflict("female with a hemizygous X genotype".into()))
            }
            (g, Sex::Male, ChromosomeKind::X) if !g.is_hemizygous() => Err(Error::InvalidMaleGenotype),
            _ => Ok(()),
        }
    }

    /// The five X-chromosome states in table order: rr, rR, RR, r, R.
    pub const X_STATES: [(Genotype, Sex); 5] = [
        (Genotype::RefHom, Sex::Female),
        (Genotype::Het, Sex::Female),
        (Genotype::AltHom, Sex::Female),
        (Genotype::RefHemi, Sex::Male),
        (Genotype::AltHemi, Sex::Male),
    ];

    pub const DIPLOID: [Genotype; 3] = [Genotype::RefHom, Genotype::Het, Genotype::AltHom];
}

/// The allele whose copies are counted by the additive covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiskAllele {
    /// Count the alternative allele `R`.
    Alt,
    /// Count the reference allele `r`.
    Ref,
}

impl RiskAllele {
    pub fn flipped(self) -> Self {
        match self {
            RiskAllele::Alt => RiskAllele::Ref,
            RiskAllele::Ref => RiskAllele::Alt,
        }
    }

    fn copies(self, g: Genotype) -> Option<u8> {
        let alt = g.alt_copies()?;
        Some(match self {
            RiskAllele::Alt => alt,
            RiskAllele::Ref if g.is_hemizygous() => 1 - alt,
            RiskAllele::Ref => 2 - alt,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Xci {
    Inactivated,
    NotInactivated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodingScheme {
    pub risk: RiskAllele,
    pub xci: Xci,
}

impl CodingScheme {
    pub const fn new(risk: RiskAllele, xci: Xci) -> Self {
        Self { risk, xci }
    }

    /// All four X-chromosome additive codings.
    pub const ALL: [CodingScheme; 4] = [
        CodingScheme::new(RiskAllele::Alt, Xci::Inactivated),
        CodingScheme::new(RiskAllele::Ref, Xci::Inactivated),
        CodingScheme::new(RiskAllele::Alt, Xci::NotInactivated),
        CodingScheme::new(RiskAllele::Ref, Xci::NotInactivated),
    ];

    pub fn label(&self) -> &'static str {
        match (self.risk, self.xci) {
            (RiskAllele::Alt, Xci::Inactivated) => "R,XCI",
            (RiskAllele::Ref, Xci::Inactivated) => "r,XCI",
            (RiskAllele::Alt, Xci::NotInactivated) => "R,noXCI",
            (RiskAllele::Ref, Xci::NotInactivated) => "r,noXCI",
        }
    }
}

impl Default for CodingScheme {
    fn default() -> Self {
        CodingScheme::new(RiskAllele::Alt, Xci::Inactivated)
    }
}

/// Additive code of a genotype.
///
/// On autosomes the XCI flag is ignored and the code is the risk-allele count
/// (0, 1, 2) for both sexes. On the X chromosome female codes are halved
/// under XCI and male codes are always the hemizygous risk count (0 or 1).
pub fn code_additive(g: Genotype, sex: Sex, scheme: CodingScheme, chrom: ChromosomeKind) -> Result<f64> {
    g.validate(sex, chrom)?;
    let copies = scheme.risk.copies(g).ok_or(Error::MissingGenotype)? as f64;
    Ok(match (chrom, g.is_hemizygous(), scheme.xci) {
        (ChromosomeKind::X, false, Xci::Inactivated) => copies / 2.0,
        _ => copies,
    })
}

/// Heterozygote indicator; the same under every coding scheme.
pub fn code_dominant(g: Genotype) -> Result<f64> {
    match g {
        Genotype::Missing => Err(Error::MissingGenotype),
        Genotype::Het => Ok(1.0),
        _ => Ok(0.0),
    }
}

/// Gene-sex interaction `G_A × S`.
pub fn code_interaction(g: Genotype, sex: Sex, scheme: CodingScheme, chrom: ChromosomeKind) -> Result<f64> {
    Ok(code_additive(g, sex, scheme, chrom)? * sex.indicator())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    /// `β0 + βA·G_A` (autosome)
    Additive,
    /// `β0 + βA·G_A + βD·G_D` (autosome)
    Genotypic,
    /// `β0 + βA·G_A`
    M0,
    /// `β0 + βS·S + βA·G_A`
    M1,
    /// `β0 + βS·S + βA·G_A + βD·G_D`
    M2,
    /// `β0 + βS·S + βA·G_A + βGS·GS`
    M3,
    /// `β0 + βS·S + βA·G_A + βD·G_D + βGS·GS`
    M4,
}

impl ModelId {
    pub const X_MODELS: [ModelId; 5] = [ModelId::M0, ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4];

    pub fn has_sex(self) -> bool {
        matches!(self, ModelId::M1 | ModelId::M2 | ModelId::M3 | ModelId::M4)
    }

    pub fn has_dominant(self) -> bool {
        matches!(self, ModelId::Genotypic | ModelId::M2 | ModelId::M4)
    }

    pub fn has_interaction(self) -> bool {
        matches!(self, ModelId::M3 | ModelId::M4)
    }

    /// Genetic terms, in column order. All of them are tested.
    pub fn genetic_terms(self) -> Vec<Term> {
        let mut terms = vec![Term::Additive];
        if self.has_dominant() {
            terms.push(Term::Dominant);
        }
        if self.has_interaction() {
            terms.push(Term::Interaction);
        }
        terms
    }

    /// Size of the tested coefficient block.
    pub fn df(self) -> usize {
        self.genetic_terms().len()
    }

    /// Whether a design for this model can be built on the given chromosome.
    /// The sex-adjusted models are also allowed on autosomes so that
    /// sex-specific baseline alleles can be modelled there.
    pub fn supports(self, chrom: ChromosomeKind) -> bool {
        match self {
            ModelId::Additive | ModelId::Genotypic => chrom == ChromosomeKind::Autosome,
            _ => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Additive => "additive",
            ModelId::Genotypic => "genotypic",
            ModelId::M0 => "M0",
            ModelId::M1 => "M1",
            ModelId::M2 => "M2",
            ModelId::M3 => "M3",
            ModelId::M4 => "M4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "additive" | "add" => ModelId::Additive,
            "genotypic" | "geno" => ModelId::Genotypic,
            "m0" => ModelId::M0,
            "m1" => ModelId::M1,
            "m2" => ModelId::M2,
            "m3" => ModelId::M3,
            "m4" => ModelId::M4,
            _ => return None,
        })
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Column label of a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    Sex,
    Additive,
    Dominant,
    Interaction,
    Covariate(usize),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Sex => write!(f, "S"),
            Term::Additive => write!(f, "G_A"),
            Term::Dominant => write!(f, "G_D"),
            Term::Interaction => write!(f, "GS"),
            Term::Covariate(i) => write!(f, "E_{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub model: ModelId,
    pub family: Family,
    pub scheme: CodingScheme,
    /// Risk allele for males when it differs from the females' choice.
    pub male_risk: Option<RiskAllele>,
    /// Environmental covariates appended after the genetic columns.
    pub extra_covariates: usize,
}

impl ModelSpec {
    pub fn new(model: ModelId, family: Family, scheme: CodingScheme) -> Self {
        Self {
            model,
            family,
            scheme,
            male_risk: None,
            extra_covariates: 0,
        }
    }

    pub fn with_male_risk(mut self, risk: RiskAllele) -> Self {
        self.male_risk = Some(risk);
        self
    }

    pub fn with_covariates(mut self, k: usize) -> Self {
        self.extra_covariates = k;
        self
    }

    pub fn scheme_for(&self, sex: Sex) -> CodingScheme {
        match (sex, self.male_risk) {
            (Sex::Male, Some(risk)) => CodingScheme { risk, ..self.scheme },
            _ => self.scheme,
        }
    }

    /// Column labels in design order: 1, S, G_A, G_D, GS, E_1..E_k.
    pub fn terms(&self) -> Vec<Term> {
        let mut terms = vec![Term::Intercept];
        if self.model.has_sex() {
            terms.push(Term::Sex);
        }
        terms.extend(self.model.genetic_terms());
        terms.extend((0..self.extra_covariates).map(Term::Covariate));
        terms
    }

    pub fn tested_columns(&self) -> Vec<usize> {
        self.terms()
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, Term::Additive | Term::Dominant | Term::Interaction))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn untested_columns(&self) -> Vec<usize> {
        let tested = self.tested_columns();
        (0..self.terms().len()).filter(|c| !tested.contains(c)).collect()
    }

    /// Genetic and sex columns for one individual (no covariates).
    pub fn row(&self, g: Genotype, sex: Sex, chrom: ChromosomeKind) -> Result<Vec<f64>> {
        let scheme = self.scheme_for(sex);
        let additive = code_additive(g, sex, scheme, chrom)?;
        let mut row = vec![1.0];
        if self.model.has_sex() {
            row.push(sex.indicator());
        }
        row.push(additive);
        if self.model.has_dominant() {
            row.push(code_dominant(g)?);
        }
        if self.model.has_interaction() {
            row.push(additive * sex.indicator());
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<Term>,
    pub tested: Vec<usize>,
    /// Index of each row in the caller's sample order (missing rows dropped).
    pub rows: Vec<usize>,
}

impl DesignMatrix {
    /// Wraps a raw matrix; every row is kept.
    pub fn from_matrix(values: DMatrix<f64>, labels: Vec<Term>, tested: Vec<usize>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        if tested.iter().any(|&c| c >= values.ncols()) {
            return Err(Error::ShapeMismatch("tested column out of range".into()));
        }
        let rows = (0..values.nrows()).collect();
        Ok(Self {
            values,
            labels,
            tested,
            rows,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn q(&self) -> usize {
        self.tested.len()
    }

    pub fn untested(&self) -> Vec<usize> {
        (0..self.ncols()).filter(|c| !self.tested.contains(c)).collect()
    }

    /// Columns reordered as (untested, tested).
    pub fn partition_order(&self) -> Vec<usize> {
        let mut order = self.untested();
        order.extend(&self.tested);
        order
    }

    pub fn column_of(&self, term: Term) -> Option<usize> {
        self.labels.iter().position(|&t| t == term)
    }

    /// Picks the entries of a per-sample vector that belong to kept rows.
    pub fn select<T: Copy>(&self, per_sample: &[T]) -> Vec<T> {
        self.rows.iter().map(|&i| per_sample[i]).collect()
    }

    pub fn untested_matrix(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.values, &self.untested())
    }

    pub fn tested_matrix(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.values, &self.tested)
    }
}

/// Builds the design for `spec`, dropping rows with missing genotypes.
pub fn build_design(
    genotypes: &[Genotype],
    sexes: &[Sex],
    extra: Option<&DMatrix<f64>>,
    spec: &ModelSpec,
    chrom: ChromosomeKind,
) -> Result<DesignMatrix> {
    let n = genotypes.len();
    check_len("sexes", sexes.len(), n)?;
    let k = extra.map_or(0, |e| e.ncols());
    if let Some(e) = extra {
        check_len("covariate rows", e.nrows(), n)?;
    }
    if k != spec.extra_covariates {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} covariates, got {k}",
            spec.extra_covariates
        )));
    }
    if !spec.model.supports(chrom) {
        return Err(Error::UnsupportedModel {
            model: spec.model.to_string(),
            chrom: chrom.to_string(),
        });
    }

    let rows: Vec<usize> = (0..n).filter(|&i| !genotypes[i].is_missing()).collect();
    if rows.is_empty() {
        return Err(Error::AllMissing);
    }

    let labels = spec.terms();
    let p = labels.len();
    let mut values = DMatrix::zeros(rows.len(), p);
    for (r, &i) in rows.iter().enumerate() {
        let genetic = spec.row(genotypes[i], sexes[i], chrom)?;
        for (c, v) in genetic.iter().enumerate() {
            values[(r, c)] = *v;
        }
        if let Some(e) = extra {
            for j in 0..k {
                values[(r, genetic.len() + j)] = e[(i, j)];
            }
        }
    }

    let additive_col = labels
        .iter()
        .position(|&t| t == Term::Additive)
        .expect("every model has an additive column");
    let first = values[(0, additive_col)];
    if values.column(additive_col).iter().all(|&v| v == first) {
        return Err(Error::DegenerateSnp);
    }

    Ok(DesignMatrix {
        values,
        tested: spec.tested_columns(),
        labels,
        rows,
    })
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch { what, got, expected });
    }
    Ok(())
}

/// Allele frequencies used by the orthogonal re-parametrized codings.
///
/// Frequencies are of the risk allele. With a male proportion of 0.5 the
/// codes are exactly:
///
/// | coding | rr     | rR        | RR          | r                     | R                    |
/// |--------|--------|-----------|-------------|-----------------------|----------------------|
/// | G_A*   | -1     | 0         | 1           | -1                    | 1                    |
/// | G_D*   | -2f²   | 2f(1-f)   | -2(1-f)²    | 0                     | 0                    |
/// | GS*    | -f     | 1/2 - f   | 1 - f       | f(1-f) / (2(1-f_m))   | -f(1-f) / (2 f_m)    |
/// | S*     | -1     | -1        | -1          | 1                     | 1                    |
///
/// with `f` the female and `f_m` the male frequency. For other male
/// proportions ρ the male GS* codes are scaled by (1-ρ)/ρ, which keeps GS*
/// uncorrelated with G_A*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reparametrization {
    pub f_female: f64,
    pub f_male: f64,
    pub male_fraction: f64,
}

impl Reparametrization {
    pub fn new(f_female: f64, f_male: f64) -> Result<Self> {
        Self::with_male_fraction(f_female, f_male, 0.5)
    }

    pub fn with_male_fraction(f_female: f64, f_male: f64, male_fraction: f64) -> Result<Self> {
        for (name, v) in [("f_female", f_female), ("f_male", f_male), ("male fraction", male_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(crate::error::invalid(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(Self {
            f_female,
            f_male,
            male_fraction,
        })
    }

    /// Re-parametrized codes (S*, G_A*, G_D*, GS*) for one genotype state.
    ///
    /// `risk_copies` is the number of risk alleles carried (0..=2 diploid,
    /// 0..=1 hemizygous).
    pub fn codes(&self, hemizygous: bool, risk_copies: u8, chrom: ChromosomeKind) -> ReparamCodes {
        let f = self.f_female;
        let fm = self.f_male;
        let additive = if hemizygous {
            2.0 * risk_copies as f64 - 1.0
        } else {
            risk_copies as f64 - 1.0
        };
        let dominant = match (hemizygous, risk_copies) {
            (true, _) => 0.0,
            (false, 0) => -2.0 * f * f,
            (false, 1) => 2.0 * f * (1.0 - f),
            _ => -2.0 * (1.0 - f) * (1.0 - f),
        };
        let interaction = match chrom {
            ChromosomeKind::Autosome => 0.0,
            ChromosomeKind::X if hemizygous => {
                let scale = (1.0 - self.male_fraction) / self.male_fraction;
                let c = scale * f * (1.0 - f) / 2.0;
                if risk_copies == 0 {
                    c / (1.0 - fm)
                } else {
                    -c / fm
                }
            }
            ChromosomeKind::X => risk_copies as f64 / 2.0 - f,
        };
        let sex = if hemizygous { 1.0 } else { -1.0 };
        ReparamCodes {
            sex,
            additive,
            dominant,
            interaction,
        }
    }

    /// Design row (1, S*, G_A*, G_D*, GS*) restricted to the terms of `model`.
    pub fn row(&self, g: Genotype, sex: Sex, spec: &ModelSpec, chrom: ChromosomeKind) -> Result<Vec<f64>> {
        g.validate(sex, chrom)?;
        let scheme = spec.scheme_for(sex);
        let copies = scheme.risk.copies(g).ok_or(Error::MissingGenotype)?;
        let codes = self.codes(g.is_hemizygous(), copies, chrom);
        let mut row = vec![1.0];
        if spec.model.has_sex() {
            row.push(codes.sex);
        }
        row.push(codes.additive);
        if spec.model.has_dominant() {
            row.push(codes.dominant);
        }
        if spec.model.has_interaction() {
            row.push(codes.interaction);
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamCodes {
    pub sex: f64,
    pub additive: f64,
    pub dominant: f64,
    pub interaction: f64,
}

/// Design matrix in the orthogonal re-parametrized codings.
///
/// Autosomes support the additive and genotypic models (G_A* = -1, 0, 1 and
/// G_D* with the female frequency); the X chromosome supports M0–M4.
pub fn reparametrized_design(
    genotypes: &[Genotype],
    sexes: &[Sex],
    reparam: &Reparametrization,
    spec: &ModelSpec,
    chrom: ChromosomeKind,
) -> Result<DesignMatrix> {
    check_len("sexes", sexes.len(), genotypes.len())?;
    let supported = match chrom {
        ChromosomeKind::Autosome => matches!(spec.model, ModelId::Additive | ModelId::Genotypic),
        ChromosomeKind::X => !matches!(spec.model, ModelId::Additive | ModelId::Genotypic),
    };
    if !supported || spec.extra_covariates > 0 {
        return Err(Error::UnsupportedModel {
            model: spec.model.to_string(),
            chrom: chrom.to_string(),
        });
    }
    let rows: Vec<usize> = (0..genotypes.len()).filter(|&i| !genotypes[i].is_missing()).collect();
    if rows.is_empty() {
        return Err(Error::AllMissing);
    }
    let labels = spec.terms();
    let mut values = DMatrix::zeros(rows.len(), labels.len());
    for (r, &i) in rows.iter().enumerate() {
        for (c, v) in reparam.row(genotypes[i], sexes[i], spec, chrom)?.into_iter().enumerate() {
            values[(r, c)] = v;
        }
    }
    Ok(DesignMatrix {
        values,
        tested: spec.tested_columns(),
        labels,
        rows,
    })
}

/// Block upper-triangular `T` with `X2 = X1·T` and `X21 = X11·T1`.
///
/// Blocks are expressed in the (untested, tested) column order of each design.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationWitness {
    pub t: DMatrix<f64>,
    pub t1: DMatrix<f64>,
    pub t12: DMatrix<f64>,
    pub t2: DMatrix<f64>,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Equivalence {
    Witness(TransformationWitness),
    NotEquivalent { residual_norm: f64 },
}

impl Equivalence {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Equivalence::Witness(_))
    }

    pub fn witness(&self) -> Option<&TransformationWitness> {
        match self {
            Equivalence::Witness(w) => Some(w),
            Equivalence::NotEquivalent { .. } => None,
        }
    }
}

pub const DEFAULT_TRANSFORM_TOL: f64 = 1e-8;
const RANK_CUTOFF: f64 = 1e-10;

/// Searches for a transformation relating two designs so that tests of
/// their tested blocks coincide.
///
/// `tol` is relative to the largest absolute entry of `x2`. Returns
/// [`Equivalence::NotEquivalent`] when no block-triangular invertible `T`
/// reproduces `x2`.
pub fn find_transformation(x1: &DesignMatrix, x2: &DesignMatrix, tol: f64) -> Result<Equivalence> {
    if x1.nrows() != x2.nrows() || x1.ncols() != x2.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            x1.nrows(),
            x1.ncols(),
            x2.nrows(),
            x2.ncols()
        )));
    }
    if x1.q() != x2.q() {
        return Err(Error::ShapeMismatch(format!(
            "tested blocks differ in size ({} vs {})",
            x1.q(),
            x2.q()
        )));
    }
    let p = x1.ncols();
    let q = x1.q();
    let k = p - q;
    let a = linalg::select_columns(&x1.values, &x1.partition_order());
    let b = linalg::select_columns(&x2.values, &x2.partition_order());

    if linalg::numerical_rank(&a, RANK_CUTOFF) < p {
        return Err(Error::SingularDesign);
    }

    let t_full = linalg::least_squares(&a, &b)?;
    let a11 = a.columns(0, k).into_owned();
    let b21 = b.columns(0, k).into_owned();
    let t1 = if k > 0 {
        linalg::least_squares(&a11, &b21)?
    } else {
        DMatrix::zeros(0, 0)
    };
    let t12 = t_full.view((0, k), (k, q)).into_owned();
    let t2 = t_full.view((k, k), (q, q)).into_owned();

    let mut t = DMatrix::zeros(p, p);
    t.view_mut((0, 0), (k, k)).copy_from(&t1);
    t.view_mut((0, k), (k, q)).copy_from(&t12);
    t.view_mut((k, k), (q, q)).copy_from(&t2);

    let full_resid = linalg::max_abs(&(&b - &a * &t));
    let sub_resid = if k > 0 { linalg::max_abs(&(&b21 - &a11 * &t1)) } else { 0.0 };
    let residual_norm = full_resid.max(sub_resid);
    let scale = linalg::max_abs(&b).max(1.0);

    let invertible = |m: &DMatrix<f64>| m.nrows() == 0 || linalg::numerical_rank(m, RANK_CUTOFF) == m.nrows();
    if residual_norm <= tol * scale && invertible(&t1) && invertible(&t2) {
        Ok(Equivalence::Witness(TransformationWitness {
            t,
            t1,
            t12,
            t2,
            residual_norm,
        }))
    } else {
        Ok(Equivalence::NotEquivalent { residual_norm })
    }
}
