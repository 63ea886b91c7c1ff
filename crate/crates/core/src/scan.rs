//! Per-SNP association scans, QC and coding-invariance audits over a
//! [`Dataset`].

use std::io::Write;

use rayon::prelude::*;

use crate::assoc::{run_tests, TestKind};
use crate::chisq::chisq_sf;
use crate::coding::{build_design, ChromosomeKind, CodingScheme, Genotype, ModelId, ModelSpec, RiskAllele, Sex, Xci};
use crate::error::{invalid, Error, Result};
use crate::glm::Family;
use crate::io::{Dataset, PhenotypeKind, Snp};
use crate::sim::{invariance_audit, AuditReport};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    /// Restricts the models run; `None` runs the defaults for each
    /// chromosome (additive and genotypic on autosomes, M1 and M2 under both
    /// XCI assumptions plus M3 and M4 on X).
    pub models: Option<Vec<ModelId>>,
    pub tests: Vec<TestKind>,
    /// Defaults to logistic for 0/1 phenotypes and linear otherwise.
    pub family: Option<Family>,
    pub alpha: f64,
    /// SNPs with a larger missing fraction are flagged and not tested.
    pub qc_miss: f64,
    /// SNPs with a smaller minor-allele count in either sex are flagged.
    pub qc_mac: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            models: None,
            tests: vec![TestKind::Wald, TestKind::Score, TestKind::Lrt],
            family: None,
            alpha: 5e-8,
            qc_miss: 0.1,
            qc_mac: 5,
        }
    }
}

/// One model fitted in a scan together with its display label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanModel {
    pub label: String,
    pub spec: ModelSpec,
}

/// Models run on a chromosome. A chromosome with none of the requested
/// models falls back to its defaults.
pub fn scan_models(chrom: ChromosomeKind, requested: Option<&[ModelId]>, family: Family, covariates: usize) -> Vec<ScanModel> {
    let (defaults, allowed): (&[ModelId], &[ModelId]) = match chrom {
        ChromosomeKind::Autosome => (&[ModelId::Additive, ModelId::Genotypic], &[ModelId::Additive, ModelId::Genotypic]),
        ChromosomeKind::X => (&[ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4], &ModelId::X_MODELS),
    };
    let mut chosen: Vec<ModelId> = requested.unwrap_or(&[]).iter().copied().filter(|m| allowed.contains(m)).collect();
    chosen.dedup();
    if chosen.is_empty() {
        chosen = defaults.to_vec();
    }
    let spec = |m, xci| ModelSpec::new(m, family, CodingScheme::new(RiskAllele::Alt, xci)).with_covariates(covariates);
    let mut out = Vec::new();
    for m in chosen {
        let xci_dependent = chrom == ChromosomeKind::X && !m.has_interaction();
        if xci_dependent {
            for (xci, tag) in [(Xci::Inactivated, "XCI"), (Xci::NotInactivated, "noXCI")] {
                out.push(ScanModel {
                    label: format!("{m}({tag})"),
                    spec: spec(m, xci),
                });
            }
        } else {
            out.push(ScanModel {
                label: m.to_string(),
                spec: spec(m, Xci::Inactivated),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub snp_id: String,
    pub chrom: ChromosomeKind,
    pub model: String,
    pub test: Option<TestKind>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_used: usize,
    pub excluded_missing: usize,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnpSummary {
    pub index: usize,
    pub snp_id: String,
    pub chrom: ChromosomeKind,
    pub n_used: usize,
    pub missing_rate: f64,
    pub mac_female: u64,
    pub mac_male: u64,
    pub hwe_p: f64,
    pub min_p: f64,
    /// M4 on X, genotypic on autosomes, for the first requested test.
    pub recommended_p: f64,
    pub significant: bool,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub family: Family,
    /// SNPs ordered by smallest p-value, ties by input order.
    pub summaries: Vec<SnpSummary>,
    /// Rows grouped by SNP in summary order.
    pub rows: Vec<ScanRow>,
}

/// Pearson chi-squared test (1 df) of Hardy-Weinberg proportions for
/// diploid counts `(rr, rR, RR)`.
pub fn hwe_check(counts: [u64; 3]) -> Result<f64> {
    let n = counts.iter().sum::<u64>() as f64;
    if n == 0.0 {
        return Err(invalid("HWE check needs at least one genotype"));
    }
    let f = (counts[1] as f64 + 2.0 * counts[2] as f64) / (2.0 * n);
    let expected = [n * (1.0 - f).powi(2), 2.0 * n * f * (1.0 - f), n * f * f];
    let stat: f64 = counts
        .iter()
        .zip(expected)
        .filter(|(_, e)| *e > 0.0)
        .map(|(&o, e)| (o as f64 - e).powi(2) / e)
        .sum();
    chisq_sf(stat, 1)
}

fn minor_allele_count(genotypes: &[Genotype], sexes: &[Sex], sex: Sex) -> Option<u64> {
    let (mut alt, mut total) = (0u64, 0u64);
    for (g, _) in genotypes.iter().zip(sexes).filter(|(g, s)| **s == sex && !g.is_missing()) {
        alt += g.alt_copies().unwrap_or(0) as u64;
        total += if g.is_hemizygous() { 1 } else { 2 };
    }
    (total > 0).then(|| alt.min(total - alt))
}

/// Genotype counts used for the HWE check: females on X, everyone on
/// autosomes, restricted to controls for binary phenotypes.
fn hwe_counts(snp: &Snp, ds: &Dataset) -> [u64; 3] {
    let mut counts = [0u64; 3];
    for i in 0..ds.n() {
        if snp.chrom == ChromosomeKind::X && ds.sexes[i] == Sex::Male {
            continue;
        }
        if ds.phenotype_kind == PhenotypeKind::Binary && ds.phenotype[i] != 0.0 {
            continue;
        }
        match snp.genotypes[i] {
            Genotype::RefHom => counts[0] += 1,
            Genotype::Het => counts[1] += 1,
            Genotype::AltHom => counts[2] += 1,
            _ => {}
        }
    }
    counts
}

fn resolve_family(ds: &Dataset, options: &ScanOptions) -> Result<Family> {
    let family = options.family.unwrap_or(ds.phenotype_kind.default_family());
    if family == Family::Logistic && ds.phenotype_kind != PhenotypeKind::Binary {
        return Err(Error::Precondition("logistic family needs a 0/1 phenotype".into()));
    }
    Ok(family)
}

fn scan_snp(index: usize, snp: &Snp, ds: &Dataset, options: &ScanOptions, family: Family) -> (SnpSummary, Vec<ScanRow>) {
    let n = ds.n();
    let n_used = snp.genotypes.iter().filter(|g| !g.is_missing()).count();
    let excluded_missing = n - n_used;
    let missing_rate = excluded_missing as f64 / n as f64;
    let mac_female = minor_allele_count(&snp.genotypes, &ds.sexes, Sex::Female);
    let mac_male = minor_allele_count(&snp.genotypes, &ds.sexes, Sex::Male);
    let hwe_p = hwe_check(hwe_counts(snp, ds)).unwrap_or(f64::NAN);

    let mut flags = Vec::new();
    let alt: u64 = snp.genotypes.iter().filter_map(|g| g.alt_copies()).map(u64::from).sum();
    let max_alt: u64 = snp
        .genotypes
        .iter()
        .filter(|g| !g.is_missing())
        .map(|g| if g.is_hemizygous() { 1 } else { 2 })
        .sum();
    if n_used == 0 {
        flags.push("all genotypes missing".to_string());
    } else if alt == 0 || alt == max_alt {
        flags.push("degenerate SNP".to_string());
    } else {
        if missing_rate > options.qc_miss {
            flags.push(format!("qc: missingness {missing_rate:.3} > {}", options.qc_miss));
        }
        for (sex, mac) in [("female", mac_female), ("male", mac_male)] {
            if let Some(m) = mac.filter(|&m| m < options.qc_mac) {
                flags.push(format!("qc: {sex} minor allele count {m} < {}", options.qc_mac));
            }
        }
    }

    let row = |model: String, test: Option<TestKind>, statistic: f64, df: usize, p_value: f64, notes: String| ScanRow {
        snp_id: snp.id.clone(),
        chrom: snp.chrom,
        model,
        test,
        statistic,
        df,
        p_value,
        n_used,
        excluded_missing,
        notes,
    };

    let mut rows = Vec::new();
    let mut recommended_p = f64::NAN;
    if flags.is_empty() {
        let k = ds.covariates.as_ref().map_or(0, |c| c.ncols());
        let models = scan_models(snp.chrom, options.models.as_deref(), family, k);
        let preferred = match snp.chrom {
            ChromosomeKind::X => ModelId::M4,
            ChromosomeKind::Autosome => ModelId::Genotypic,
        };
        for sm in &models {
            let result = build_design(&snp.genotypes, &ds.sexes, ds.covariates.as_ref(), &sm.spec, snp.chrom)
                .and_then(|x| run_tests(&x, &x.select(&ds.phenotype), family, &options.tests));
            match result {
                Ok(results) => {
                    for (i, t) in results.iter().enumerate() {
                        if i == 0 && sm.spec.model == preferred {
                            recommended_p = t.p_value;
                        }
                        rows.push(row(sm.label.clone(), Some(t.kind), t.statistic, t.df, t.p_value, String::new()));
                    }
                }
                Err(e) => rows.push(row(sm.label.clone(), None, f64::NAN, sm.spec.model.df(), f64::NAN, e.to_string())),
            }
        }
        if recommended_p.is_nan() {
            recommended_p = rows.iter().rev().map(|r| r.p_value).find(|p| !p.is_nan()).unwrap_or(f64::NAN);
        }
    } else {
        rows.push(row("-".into(), None, f64::NAN, 0, f64::NAN, flags.join("; ")));
    }

    let min_p = rows.iter().map(|r| r.p_value).filter(|p| !p.is_nan()).fold(f64::NAN, f64::min);
    let summary = SnpSummary {
        index,
        snp_id: snp.id.clone(),
        chrom: snp.chrom,
        n_used,
        missing_rate,
        mac_female: mac_female.unwrap_or(0),
        mac_male: mac_male.unwrap_or(0),
        hwe_p,
        min_p,
        recommended_p,
        significant: recommended_p < options.alpha,
        notes: flags.join("; "),
    };
    (summary, rows)
}

/// Tests every SNP under the selected models. Per-SNP failures become
/// flagged rows. Runs on the current rayon pool; output does not depend on
/// the number of threads.
pub fn scan(ds: &Dataset, options: &ScanOptions) -> Result<ScanOutput> {
    if options.tests.is_empty() {
        return Err(invalid("no tests requested"));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(invalid(format!("alpha = {} must lie in (0, 1)", options.alpha)));
    }
    let family = resolve_family(ds, options)?;
    let mut per_snp: Vec<(SnpSummary, Vec<ScanRow>)> = ds
        .snps
        .par_iter()
        .enumerate()
        .map(|(i, snp)| scan_snp(i, snp, ds, options, family))
        .collect();
    per_snp.sort_by(|(a, _), (b, _)| {
        let key = |s: &SnpSummary| if s.min_p.is_nan() { f64::INFINITY } else { s.min_p };
        key(a).total_cmp(&key(b)).then(a.index.cmp(&b.index))
    });
    let mut summaries = Vec::with_capacity(per_snp.len());
    let mut rows = Vec::new();
    for (s, r) in per_snp {
        summaries.push(s);
        rows.extend(r);
    }
    Ok(ScanOutput { family, summaries, rows })
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.6e}")
    }
}

fn tsv<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(out)
}

pub fn write_scan_tsv<W: Write>(out: W, rows: &[ScanRow]) -> Result<()> {
    let mut w = tsv(out);
    w.write_record([
        "snp_id",
        "chrom",
        "model",
        "test",
        "statistic",
        "df",
        "p_value",
        "n_used",
        "excluded_missing",
        "notes",
    ])?;
    for r in rows {
        w.write_record(&[
            r.snp_id.clone(),
            r.chrom.to_string(),
            r.model.clone(),
            r.test.map_or("-".into(), |t| t.to_string()),
            fmt_f(r.statistic),
            r.df.to_string(),
            fmt_f(r.p_value),
            r.n_used.to_string(),
            r.excluded_missing.to_string(),
            r.notes.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_tsv<W: Write>(out: W, summaries: &[SnpSummary]) -> Result<()> {
    let mut w = tsv(out);
    w.write_record([
        "snp_id",
        "chrom",
        "n_used",
        "missing_rate",
        "mac_female",
        "mac_male",
        "hwe_p",
        "min_p",
        "recommended_p",
        "significant",
        "notes",
    ])?;
    for s in summaries {
        w.write_record(&[
            s.snp_id.clone(),
            s.chrom.to_string(),
            s.n_used.to_string(),
            format!("{:.4}", s.missing_rate),
            s.mac_female.to_string(),
            s.mac_male.to_string(),
            fmt_f(s.hwe_p),
            fmt_f(s.min_p),
            fmt_f(s.recommended_p),
            s.significant.to_string(),
            s.notes.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct SnpAudit {
    pub snp_id: String,
    pub chrom: ChromosomeKind,
    pub report: std::result::Result<AuditReport, String>,
}

/// Runs the coding-invariance audit for `model` on every SNP. Covariates
/// are not included.
pub fn audit_dataset(ds: &Dataset, model: ModelId, family: Option<Family>, kind: TestKind) -> Result<Vec<SnpAudit>> {
    let options = ScanOptions {
        family,
        ..ScanOptions::default()
    };
    let family = resolve_family(ds, &options)?;
    Ok(ds
        .snps
        .par_iter()
        .map(|snp| SnpAudit {
            snp_id: snp.id.clone(),
            chrom: snp.chrom,
            report: invariance_audit(&snp.genotypes, &ds.sexes, &ds.phenotype, snp.chrom, model, family, kind).map_err(|e| e.to_string()),
        })
        .collect())
}

pub fn write_audit_tsv<W: Write>(out: W, audits: &[SnpAudit]) -> Result<()> {
    let mut w = tsv(out);
    w.write_record([
        "snp_id",
        "chrom",
        "model",
        "test",
        "coding_a",
        "coding_b",
        "expected_equivalent",
        "abs_diff",
        "rel_diff",
        "notes",
    ])?;
    for a in audits {
        match &a.report {
            Ok(r) => {
                for p in &r.pairs {
                    let agrees = p.rel_diff < 1e-8;
                    let note = match (p.expected_equivalent, agrees) {
                        (true, false) => "unexpected discrepancy",
                        (false, true) => "agree despite non-equivalent codings",
                        _ => "",
                    };
                    w.write_record(&[
                        a.snp_id.clone(),
                        a.chrom.to_string(),
                        r.model.to_string(),
                        r.kind.to_string(),
                        p.a.label(),
                        p.b.label(),
                        p.expected_equivalent.to_string(),
                        fmt_f(p.abs_diff),
                        fmt_f(p.rel_diff),
                        note.to_string(),
                    ])?;
                }
            }
            Err(e) => w.write_record(&[
                a.snp_id.clone(),
                a.chrom.to_string(),
                "-".into(),
                "-".into(),
                "-".into(),
                "-".into(),
                "-".into(),
                "NA".into(),
                "NA".into(),
                e.clone(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::assemble;
    use crate::io::Phenotypes;
    use crate::ncp::{EffectSpec, PopulationSpec};
    use crate::sim::{replicate_rng, simulate_genotypes, simulate_phenotype};

    fn dataset(snps: Vec<(ChromosomeKind, Vec<Genotype>)>, sexes: Vec<Sex>, y: Vec<f64>) -> Dataset {
        let n = sexes.len();
        let pheno = Phenotypes {
            sample_ids: (0..n).map(|i| format!("s{i}")).collect(),
            sexes,
            values: y,
            covariate_names: vec![],
            covariates: vec![vec![]; n],
        };
        let snps = snps
            .into_iter()
            .enumerate()
            .map(|(i, (chrom, genotypes))| Snp {
                id: format!("rs{i}"),
                chrom,
                genotypes,
            })
            .collect();
        assemble(pheno, snps, 0)
    }

    #[test]
    fn test_hwe() {
        assert!((hwe_check([1012, 1192, 421]).unwrap() - 0.026).abs() < 0.002);
        assert!((hwe_check([36, 48, 16]).unwrap() - 1.0).abs() < 1e-12);
        assert!(hwe_check([0, 500, 0]).unwrap() < 1e-50);
        assert!(hwe_check([0, 0, 0]).is_err());
        assert_eq!(hwe_check([10, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn test_model_selection() {
        let x: Vec<String> = scan_models(ChromosomeKind::X, None, Family::Linear, 0)
            .into_iter()
            .map(|m| m.label)
            .collect();
        assert_eq!(x, ["M1(XCI)", "M1(noXCI)", "M2(XCI)", "M2(noXCI)", "M3", "M4"]);
        let a: Vec<String> = scan_models(ChromosomeKind::Autosome, Some(&[ModelId::M4]), Family::Linear, 0)
            .into_iter()
            .map(|m| m.label)
            .collect();
        assert_eq!(a, ["additive", "genotypic"]);
    }

    #[test]
    fn test_scan_flags_and_order() {
        let pop = PopulationSpec::new(0.3, 0.3).unwrap();
        let mut rng = replicate_rng(5, 0);
        let (gx, sexes) = simulate_genotypes(600, &pop, ChromosomeKind::X, &mut rng).unwrap();
        let effects = EffectSpec::new([0.0, 0.4, 0.8, 0.0, 0.8], 1.0, Family::Linear).unwrap();
        let y = simulate_phenotype(&gx, &sexes, &effects, 0.0, &mut rng).unwrap();
        let mono: Vec<Genotype> = sexes
            .iter()
            .map(|s| if *s == Sex::Male { Genotype::RefHemi } else { Genotype::RefHom })
            .collect();
        let auto: Vec<Genotype> = (0..600).map(|i| Genotype::DIPLOID[i % 3]).collect();
        let ds = dataset(
            vec![(ChromosomeKind::X, mono), (ChromosomeKind::Autosome, auto), (ChromosomeKind::X, gx)],
            sexes,
            y,
        );
        let out = scan(&ds, &ScanOptions::default()).unwrap();
        assert_eq!(out.family, Family::Linear);
        assert_eq!(out.summaries[0].snp_id, "rs2");
        assert_eq!(out.summaries[2].snp_id, "rs0");
        assert_eq!(out.summaries[2].notes, "degenerate SNP");
        assert!(out.summaries[0].recommended_p < 1e-10);
        assert!(out.summaries[0].significant);
        assert_eq!(out.rows.iter().filter(|r| r.snp_id == "rs2").count(), 18);
        for r in out.rows.iter().filter(|r| r.test.is_some()) {
            let p = chisq_sf(r.statistic, r.df as u32).unwrap();
            assert!((p - r.p_value).abs() <= 1e-12 * p.max(1e-300) + 1e-300);
            assert_eq!(r.n_used + r.excluded_missing, 600);
        }
        let mut buf = Vec::new();
        write_scan_tsv(&mut buf, &out.rows).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("rs2\tX\tM1(XCI)\twald\t"));
    }

    #[test]
    fn test_qc_flags() {
        let n = 200;
        let sexes: Vec<Sex> = (0..n).map(|i| if i % 2 == 0 { Sex::Female } else { Sex::Male }).collect();
        let mut rare: Vec<Genotype> = (0..n).map(|_| Genotype::RefHom).collect();
        rare[0] = Genotype::Het;
        rare[2] = Genotype::Het;
        let mut missing: Vec<Genotype> = (0..n).map(|i| Genotype::DIPLOID[i % 3]).collect();
        for g in missing.iter_mut().take(40) {
            *g = Genotype::Missing;
        }
        let y: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let ds = dataset(
            vec![(ChromosomeKind::Autosome, rare), (ChromosomeKind::Autosome, missing)],
            sexes,
            y,
        );
        let out = scan(&ds, &ScanOptions::default()).unwrap();
        let by_id = |id: &str| out.summaries.iter().find(|s| s.snp_id == id).unwrap().notes.clone();
        assert!(by_id("rs0").contains("female minor allele count 2"));
        assert!(by_id("rs1").contains("missingness"));
        let relaxed = ScanOptions {
            qc_miss: 0.5,
            ..ScanOptions::default()
        };
        let out = scan(&ds, &relaxed).unwrap();
        assert!(out.summaries.iter().any(|s| s.snp_id == "rs1" && s.notes.is_empty()));
    }

    #[test]
    fn test_logistic_needs_binary() {
        let sexes = vec![Sex::Female, Sex::Male, Sex::Female];
        let ds = dataset(
            vec![(ChromosomeKind::Autosome, vec![Genotype::RefHom, Genotype::Het, Genotype::AltHom])],
            sexes,
            vec![0.5, 1.0, 2.0],
        );
        let opts = ScanOptions {
            family: Some(Family::Logistic),
            ..ScanOptions::default()
        };
        assert!(matches!(scan(&ds, &opts), Err(Error::Precondition(_))));
    }
}
