//! Seeded simulation of genotype, sex and phenotype data, empirical power
//! and size estimates, and coding-invariance audits.
//!
//! Replicate `r` draws from a ChaCha8 generator seeded with the configured
//! seed and switched to stream `r`, so results do not depend on thread count
//! or scheduling.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::assoc::{run_tests, TestKind, TestResult};
use crate::coding::{build_design, ChromosomeKind, CodingScheme, Genotype, ModelId, ModelSpec, RiskAllele, Sex, Xci};
use crate::error::{invalid, Error, Result};
use crate::glm::Family;
use crate::ncp::{EffectSpec, PopulationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub pop: PopulationSpec,
    pub effects: EffectSpec,
    /// Sex main effect `β_S` added to every male.
    pub sex_effect: f64,
    pub chrom: ChromosomeKind,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.pop.validate()?;
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.n < 10 {
            return Err(invalid("n must be at least 10"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !self.sex_effect.is_finite() {
            return Err(invalid("sex_effect must be finite"));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; `#` starts a comment.
    ///
    /// Keys: n, f_female, f_male, sex_ratio, mu_rr, mu_rR, mu_RR, mu_r, mu_R,
    /// sigma2, family, sex_effect, chrom, replicates, alpha, seed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut n = 1000usize;
        let mut f_female = 0.2;
        let mut f_male: Option<f64> = None;
        let mut sex_ratio = 0.5;
        let mut mu = [0.0; 5];
        let mut sigma2 = 4.0;
        let mut family = Family::Linear;
        let mut sex_effect = 0.0;
        let mut chrom = ChromosomeKind::X;
        let mut replicates = 1000usize;
        let mut alpha = 0.05;
        let mut seed = 1u64;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                location: format!("line {}", lineno + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
            let int = |v: &str| v.parse::<u64>().map_err(|e| err(format!("{key}: {e}")));
            match key {
                "n" => n = int(value)? as usize,
                "f_female" => f_female = num(value)?,
                "f_male" => f_male = Some(num(value)?),
                "sex_ratio" => sex_ratio = num(value)?,
                "mu_rr" => mu[0] = num(value)?,
                "mu_rR" => mu[1] = num(value)?,
                "mu_RR" => mu[2] = num(value)?,
                "mu_r" => mu[3] = num(value)?,
                "mu_R" => mu[4] = num(value)?,
                "sigma2" => sigma2 = num(value)?,
                "family" => family = Family::parse(value).ok_or_else(|| err(format!("unknown family {value:?}")))?,
                "sex_effect" => sex_effect = num(value)?,
                "chrom" => {
                    chrom = match value {
                        "X" | "x" => ChromosomeKind::X,
                        "A" | "a" => ChromosomeKind::Autosome,
                        _ => return Err(err(format!("chrom must be A or X, got {value:?}"))),
                    }
                }
                "replicates" => replicates = int(value)? as usize,
                "alpha" => alpha = num(value)?,
                "seed" => seed = int(value)?,
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        let config = SimConfig {
            n,
            pop: PopulationSpec::with_sex_ratio(f_female, f_male.unwrap_or(f_female), sex_ratio)?,
            effects: EffectSpec::new(mu, sigma2, family)?,
            sex_effect,
            chrom,
            replicates,
            alpha,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mu = self.effects.means();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "f_female = {}", self.pop.f_female);
        let _ = writeln!(s, "f_male = {}", self.pop.f_male);
        let _ = writeln!(s, "sex_ratio = {}", self.pop.sex_ratio);
        for (k, v) in ["mu_rr", "mu_rR", "mu_RR", "mu_r", "mu_R"].iter().zip(mu) {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "sigma2 = {}", self.effects.sigma2);
        let _ = writeln!(s, "family = {}", self.effects.family);
        let _ = writeln!(s, "sex_effect = {}", self.sex_effect);
        let _ = writeln!(s, "chrom = {}", self.chrom);
        let _ = writeln!(s, "replicates = {}", self.replicates);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Short hex digest of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_string().as_bytes());
        hex::encode(digest)[..12].to_string()
    }
}

/// Generator for replicate `r`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

fn draw_diploid<R: Rng>(rng: &mut R, freqs: [f64; 3]) -> Genotype {
    let u: f64 = rng.random();
    if u < freqs[0] {
        Genotype::RefHom
    } else if u < freqs[0] + freqs[1] {
        Genotype::Het
    } else {
        Genotype::AltHom
    }
}

fn draw_genotype<R: Rng>(rng: &mut R, pop: &PopulationSpec, sex: Sex, chrom: ChromosomeKind) -> Genotype {
    match (sex, chrom) {
        (Sex::Female, _) => draw_diploid(rng, pop.female_frequencies()),
        (Sex::Male, ChromosomeKind::Autosome) => draw_diploid(rng, PopulationSpec::hwe(pop.f_male)),
        (Sex::Male, ChromosomeKind::X) => {
            if rng.random::<f64>() < pop.f_male {
                Genotype::AltHemi
            } else {
                Genotype::RefHemi
            }
        }
    }
}

/// Sexes are Bernoulli(sex ratio); female genotypes follow the population's
/// female frequencies, X males carry `R` with probability `f_male` and
/// autosome males follow HWE at `f_male`.
pub fn simulate_genotypes<R: Rng>(n: usize, pop: &PopulationSpec, chrom: ChromosomeKind, rng: &mut R) -> Result<(Vec<Genotype>, Vec<Sex>)> {
    pop.validate()?;
    let mut genotypes = Vec::with_capacity(n);
    let mut sexes = Vec::with_capacity(n);
    for _ in 0..n {
        let sex = if rng.random::<f64>() < pop.sex_ratio {
            Sex::Male
        } else {
            Sex::Female
        };
        genotypes.push(draw_genotype(rng, pop, sex, chrom));
        sexes.push(sex);
    }
    Ok((genotypes, sexes))
}

/// Genotypes for samples of known sex, drawn as in [`simulate_genotypes`].
pub fn simulate_genotypes_for<R: Rng>(sexes: &[Sex], pop: &PopulationSpec, chrom: ChromosomeKind, rng: &mut R) -> Result<Vec<Genotype>> {
    pop.validate()?;
    Ok(sexes.iter().map(|&s| draw_genotype(rng, pop, s, chrom)).collect())
}

/// Linear: `y = μ_group + β_S·S + N(0, σ²)`. Logistic: `y ~ Bernoulli(expit(μ_group + β_S·S))`.
pub fn simulate_phenotype<R: Rng>(
    genotypes: &[Genotype],
    sexes: &[Sex],
    effects: &EffectSpec,
    sex_effect: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if genotypes.len() != sexes.len() {
        return Err(Error::LengthMismatch {
            what: "sexes",
            got: sexes.len(),
            expected: genotypes.len(),
        });
    }
    let noise = Normal::new(0.0, effects.sigma2.sqrt()).map_err(|e| invalid(e.to_string()))?;
    genotypes
        .iter()
        .zip(sexes)
        .map(|(&g, &s)| {
            if g.is_missing() {
                return Err(Error::MissingGenotype);
            }
            let eta = effects.mean_of(g) + sex_effect * s.indicator();
            Ok(match effects.family {
                Family::Linear => eta + noise.sample(rng),
                Family::Logistic => (rng.random::<f64>() < Family::Logistic.inverse_link(eta)) as u8 as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub genotypes: Vec<Genotype>,
    pub sexes: Vec<Sex>,
    pub y: Vec<f64>,
}

pub fn simulate_dataset(config: &SimConfig, replicate: u64) -> Result<SimData> {
    let mut rng = replicate_rng(config.seed, replicate);
    let (genotypes, sexes) = simulate_genotypes(config.n, &config.pop, config.chrom, &mut rng)?;
    let y = simulate_phenotype(&genotypes, &sexes, &config.effects, config.sex_effect, &mut rng)?;
    Ok(SimData { genotypes, sexes, y })
}

/// Runs `f` on every replicate in parallel; results keep replicate order.
pub fn run_replicates<T, F>(config: &SimConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &SimData) -> T + Sync,
{
    config.validate()?;
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| Ok(f(r, &simulate_dataset(config, r)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    pub model: ModelSpec,
    pub kind: TestKind,
    pub rate: f64,
    pub mc_se: f64,
    pub successes: usize,
    pub excluded: usize,
    pub mean_statistic: f64,
    pub sd_statistic: f64,
}

impl PowerEstimate {
    /// Monte-Carlo standard error of the mean statistic.
    pub fn mean_se(&self) -> f64 {
        self.sd_statistic / (self.successes as f64).sqrt()
    }
}

/// Model label including the coding, e.g. `M1(R,XCI)`.
pub fn model_label(spec: &ModelSpec) -> String {
    match spec.male_risk {
        Some(m) if m != spec.scheme.risk => format!("{}({},male {:?})", spec.model, spec.scheme.label(), m),
        _ => format!("{}({})", spec.model, spec.scheme.label()),
    }
}

/// Empirical rejection rate at `config.alpha` for every (model, test) pair,
/// from one shared set of simulated datasets. Replicates where a fit fails
/// are excluded and counted per model.
pub fn simulate_tests(config: &SimConfig, models: &[ModelSpec], kinds: &[TestKind]) -> Result<Vec<PowerEstimate>> {
    let per_rep: Vec<Vec<Option<Vec<TestResult>>>> = run_replicates(config, |_, data| {
        models
            .iter()
            .map(|spec| {
                let x = build_design(&data.genotypes, &data.sexes, None, spec, config.chrom).ok()?;
                run_tests(&x, &x.select(&data.y), config.effects.family, kinds).ok()
            })
            .collect()
    })?;

    let mut out = Vec::new();
    for (mi, spec) in models.iter().enumerate() {
        let kinds_run: Vec<TestKind> = kinds
            .iter()
            .copied()
            .filter(|k| !(config.effects.family == Family::Logistic && *k == TestKind::F))
            .collect();
        for (ki, &kind) in kinds_run.iter().enumerate() {
            let stats: Vec<&TestResult> = per_rep.iter().filter_map(|r| r[mi].as_ref().map(|v| &v[ki])).collect();
            let successes = stats.len();
            let excluded = config.replicates - successes;
            let (rate, mean, sd) = if successes == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let m = successes as f64;
                let rejects = stats.iter().filter(|t| t.p_value < config.alpha).count() as f64;
                let mean = stats.iter().map(|t| t.statistic).sum::<f64>() / m;
                let var = stats.iter().map(|t| (t.statistic - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
                (rejects / m, mean, var.sqrt())
            };
            out.push(PowerEstimate {
                model: *spec,
                kind,
                rate,
                mc_se: (rate * (1.0 - rate) / successes.max(1) as f64).sqrt(),
                successes,
                excluded,
                mean_statistic: mean,
                sd_statistic: sd,
            });
        }
    }
    Ok(out)
}

pub fn empirical_power(config: &SimConfig, model: &ModelSpec, kind: TestKind) -> Result<PowerEstimate> {
    simulate_tests(config, std::slice::from_ref(model), &[kind])?
        .pop()
        .ok_or_else(|| Error::Precondition("F test requires the linear family".into()))
}

pub fn write_results_csv<W: Write>(out: W, config: &SimConfig, estimates: &[PowerEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_hash", "model", "test", "rate", "mc_se", "excluded_count"])?;
    let hash = config.hash();
    for e in estimates {
        w.write_record(&[
            hash.clone(),
            model_label(&e.model),
            e.kind.to_string(),
            format!("{:.6}", e.rate),
            format!("{:.6}", e.mc_se),
            e.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One coding of a SNP: risk allele for females and for males, and XCI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodingVariant {
    pub female_risk: RiskAllele,
    pub male_risk: RiskAllele,
    pub xci: Xci,
}

impl CodingVariant {
    pub fn label(&self) -> String {
        let a = |r: RiskAllele| if r == RiskAllele::Alt { "R" } else { "r" };
        match self.xci {
            _ if self.female_risk != self.male_risk => format!("F:{},M:{}", a(self.female_risk), a(self.male_risk)),
            Xci::Inactivated => format!("{},XCI", a(self.female_risk)),
            Xci::NotInactivated => format!("{},noXCI", a(self.female_risk)),
        }
    }

    fn spec(&self, model: ModelId, family: Family) -> ModelSpec {
        ModelSpec::new(model, family, CodingScheme::new(self.female_risk, self.xci)).with_male_risk(self.male_risk)
    }
}

/// Codings compared by an audit: the four schemes on the X chromosome, the
/// four female/male risk-allele choices on an autosome.
pub fn audit_variants(chrom: ChromosomeKind) -> Vec<CodingVariant> {
    match chrom {
        ChromosomeKind::X => CodingScheme::ALL
            .iter()
            .map(|s| CodingVariant {
                female_risk: s.risk,
                male_risk: s.risk,
                xci: s.xci,
            })
            .collect(),
        ChromosomeKind::Autosome => [
            (RiskAllele::Alt, RiskAllele::Alt),
            (RiskAllele::Ref, RiskAllele::Ref),
            (RiskAllele::Alt, RiskAllele::Ref),
            (RiskAllele::Ref, RiskAllele::Alt),
        ]
        .iter()
        .map(|&(f, m)| CodingVariant {
            female_risk: f,
            male_risk: m,
            xci: Xci::Inactivated,
        })
        .collect(),
    }
}

/// Whether two codings are related by an invertible block-triangular
/// transformation of the design for `model`.
pub fn expected_equivalent(model: ModelId, chrom: ChromosomeKind, a: &CodingVariant, b: &CodingVariant) -> bool {
    if a == b {
        return true;
    }
    match chrom {
        ChromosomeKind::X => match model {
            ModelId::M3 | ModelId::M4 => true,
            ModelId::M1 | ModelId::M2 => a.xci == b.xci,
            // Without S only the XCI pair is affine: G_{A,r,I} = 1 - G_{A,R,I}.
            _ => a.xci == b.xci && a.xci == Xci::Inactivated,
        },
        ChromosomeKind::Autosome => {
            let uniform = (a.female_risk == b.female_risk) == (a.male_risk == b.male_risk);
            uniform || (model.has_sex() && model.has_interaction())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditPair {
    pub a: CodingVariant,
    pub b: CodingVariant,
    pub expected_equivalent: bool,
    pub abs_diff: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub model: ModelId,
    pub kind: TestKind,
    /// Statistic for each variant, in [`audit_variants`] order.
    pub statistics: Vec<(CodingVariant, f64)>,
    pub pairs: Vec<AuditPair>,
}

impl AuditReport {
    fn fold(&self, equivalent: bool, f: impl Fn(&AuditPair) -> f64, init: f64, op: fn(f64, f64) -> f64) -> Option<f64> {
        let mut it = self.pairs.iter().filter(|p| p.expected_equivalent == equivalent).peekable();
        it.peek()?;
        Some(it.map(f).fold(init, op))
    }

    /// Largest discrepancy among pairs expected to agree.
    pub fn max_within_abs(&self) -> Option<f64> {
        self.fold(true, |p| p.abs_diff, 0.0, f64::max)
    }

    pub fn max_within_rel(&self) -> Option<f64> {
        self.fold(true, |p| p.rel_diff, 0.0, f64::max)
    }

    /// Smallest discrepancy among pairs not expected to agree.
    pub fn min_across_rel(&self) -> Option<f64> {
        self.fold(false, |p| p.rel_diff, f64::INFINITY, f64::min)
    }

    pub fn max_across_abs(&self) -> Option<f64> {
        self.fold(false, |p| p.abs_diff, 0.0, f64::max)
    }
}

/// Fits `model` under every coding and compares the test statistics.
pub fn invariance_audit(
    genotypes: &[Genotype],
    sexes: &[Sex],
    y: &[f64],
    chrom: ChromosomeKind,
    model: ModelId,
    family: Family,
    kind: TestKind,
) -> Result<AuditReport> {
    if !model.supports(chrom) {
        return Err(Error::UnsupportedModel {
            model: model.to_string(),
            chrom: chrom.to_string(),
        });
    }
    let variants = audit_variants(chrom);
    let statistics: Vec<(CodingVariant, f64)> = variants
        .iter()
        .map(|v| {
            let spec = v.spec(model, family);
            let x = build_design(genotypes, sexes, None, &spec, chrom)?;
            let r = run_tests(&x, &x.select(y), family, &[kind])?;
            let t = r.first().ok_or(Error::FTestRequiresLinear)?;
            Ok((*v, t.statistic))
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..statistics.len() {
        for j in i + 1..statistics.len() {
            let (a, sa) = statistics[i];
            let (b, sb) = statistics[j];
            let abs_diff = (sa - sb).abs();
            let scale = sa.abs().max(sb.abs());
            pairs.push(AuditPair {
                a,
                b,
                expected_equivalent: expected_equivalent(model, chrom, &a, &b),
                abs_diff,
                rel_diff: if scale > 0.0 { abs_diff / scale } else { 0.0 },
            });
        }
    }
    Ok(AuditReport {
        model,
        kind,
        statistics,
        pairs,
    })
}
