//! Genotype and phenotype table readers and writers.
//!
//! Genotype table: header `snp_id chrom sample_1 .. sample_n`, one SNP per
//! row, `chrom` is `A` or `X`. Symbols are alternative-allele counts
//! (`0 1 2` diploid, `0 1` for X males), the letter forms `rr rR Rr RR r R`,
//! or `NA`. Anything else is read as missing and counted.
//!
//! Phenotype table: header `sample_id sex phenotype [covariates..]` with
//! sex `F` or `M`.
//!
//! Files ending in `.csv` are comma separated, everything else tab separated.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::coding::{ChromosomeKind, Genotype, Sex};
use crate::error::{Error, Result};
use crate::glm::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhenotypeKind {
    Continuous,
    Binary,
}

impl PhenotypeKind {
    pub fn default_family(self) -> Family {
        match self {
            PhenotypeKind::Continuous => Family::Linear,
            PhenotypeKind::Binary => Family::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snp {
    pub id: String,
    pub chrom: ChromosomeKind,
    pub genotypes: Vec<Genotype>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_ids: Vec<String>,
    pub sexes: Vec<Sex>,
    pub phenotype: Vec<f64>,
    pub phenotype_kind: PhenotypeKind,
    pub covariate_names: Vec<String>,
    pub covariates: Option<DMatrix<f64>>,
    pub snps: Vec<Snp>,
    /// Genotype symbols outside the alphabet, read as missing.
    pub unknown_symbols: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phenotypes {
    pub sample_ids: Vec<String>,
    pub sexes: Vec<Sex>,
    pub values: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Row-major, one row per sample.
    pub covariates: Vec<Vec<f64>>,
}

/// Comma for `.csv` files, tab otherwise.
pub fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => b',',
        _ => b'\t',
    }
}

fn reader<R: Read>(input: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn parse_err(what: &str, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: match line {
            Some(l) => format!("{what} line {l}"),
            None => what.to_string(),
        },
        message: message.into(),
    }
}

fn parse_sex(token: &str) -> Option<Sex> {
    match token.to_ascii_uppercase().as_str() {
        "F" | "FEMALE" => Some(Sex::Female),
        "M" | "MALE" => Some(Sex::Male),
        _ => None,
    }
}

/// Reads one genotype symbol for a sample of the given sex. `Ok(None)` means
/// an unknown symbol; sex conflicts are errors.
pub fn parse_genotype(token: &str, sex: Sex, chrom: ChromosomeKind) -> Result<Option<Genotype>> {
    let hemizygous = sex == Sex::Male && chrom == ChromosomeKind::X;
    let g = match token {
        "NA" | "na" | "." | "" => Genotype::Missing,
        "0" if hemizygous => Genotype::RefHemi,
        "1" if hemizygous => Genotype::AltHemi,
        "0" => Genotype::RefHom,
        "1" => Genotype::Het,
        "2" => Genotype::AltHom,
        "rr" => Genotype::RefHom,
        "rR" | "Rr" => Genotype::Het,
        "RR" => Genotype::AltHom,
        "r" => Genotype::RefHemi,
        "R" => Genotype::AltHemi,
        _ => return Ok(None),
    };
    if !g.is_missing() {
        g.validate(sex, chrom)?;
    }
    Ok(Some(g))
}

pub fn read_phenotypes<R: Read>(input: R, delimiter: u8) -> Result<Phenotypes> {
    let mut rdr = reader(input, delimiter);
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(parse_err("phenotype header", None, "expected sample_id, sex, phenotype"));
    }
    let covariate_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut out = Phenotypes {
        sample_ids: Vec::new(),
        sexes: Vec::new(),
        values: Vec::new(),
        covariate_names,
        covariates: Vec::new(),
    };
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line());
        let err = |m: String| parse_err("phenotype", line, m);
        let id = rec.get(0).unwrap_or_default().to_string();
        if !seen.insert(id.clone()) {
            return Err(err(format!("duplicated sample id {id:?}")));
        }
        let sex_tok = rec.get(1).unwrap_or_default();
        let sex = parse_sex(sex_tok).ok_or_else(|| err(format!("sex must be F or M, got {sex_tok:?}")))?;
        let num = |i: usize| -> Result<f64> {
            let tok = rec.get(i).unwrap_or_default();
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("column {} is not a number: {tok:?}", i + 1)))
        };
        out.values.push(num(2)?);
        out.covariates.push((3..header.len()).map(num).collect::<Result<_>>()?);
        out.sample_ids.push(id);
        out.sexes.push(sex);
    }
    if out.sample_ids.is_empty() {
        return Err(parse_err("phenotype", None, "no samples"));
    }
    Ok(out)
}

/// Reads the genotype table, reordering sample columns to `pheno` order.
/// Returns the SNPs and the number of unknown symbols.
pub fn read_genotypes<R: Read>(input: R, delimiter: u8, pheno: &Phenotypes) -> Result<(Vec<Snp>, usize)> {
    let mut rdr = reader(input, delimiter);
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(parse_err("genotype header", None, "expected snp_id, chrom and sample columns"));
    }
    let geno_ids: Vec<&str> = header.iter().skip(2).collect();
    let pheno_index: HashMap<&str, usize> = pheno.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut column_of = vec![usize::MAX; pheno.sample_ids.len()];
    for (col, id) in geno_ids.iter().enumerate() {
        match pheno_index.get(id) {
            Some(&i) if column_of[i] == usize::MAX => column_of[i] = col,
            Some(_) => return Err(parse_err("genotype header", None, format!("duplicated sample id {id:?}"))),
            None => {
                return Err(parse_err(
                    "genotype header",
                    None,
                    format!("sample {id:?} is not in the phenotype file"),
                ))
            }
        }
    }
    if let Some(i) = column_of.iter().position(|&c| c == usize::MAX) {
        return Err(parse_err(
            "genotype header",
            None,
            format!("sample {:?} has no genotypes", pheno.sample_ids[i]),
        ));
    }

    let mut snps = Vec::new();
    let mut ids = HashSet::new();
    let mut unknown = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line());
        let err = |m: String| parse_err("genotype", line, m);
        let id = rec.get(0).unwrap_or_default().to_string();
        if !ids.insert(id.clone()) {
            return Err(err(format!("duplicated SNP id {id:?}")));
        }
        let chrom = match rec.get(1).unwrap_or_default() {
            "X" | "x" | "23" => ChromosomeKind::X,
            "A" | "a" => ChromosomeKind::Autosome,
            c if c.parse::<u8>().is_ok_and(|v| (1..=22).contains(&v)) => ChromosomeKind::Autosome,
            c => return Err(err(format!("chrom must be A or X, got {c:?}"))),
        };
        let genotypes = column_of
            .iter()
            .zip(&pheno.sexes)
            .zip(&pheno.sample_ids)
            .map(|((&col, &sex), sample)| {
                let tok = rec.get(col + 2).unwrap_or_default();
                match parse_genotype(tok, sex, chrom) {
                    Ok(Some(g)) => Ok(g),
                    Ok(None) => {
                        unknown += 1;
                        Ok(Genotype::Missing)
                    }
                    Err(e) => Err(err(format!("SNP {id}, sample {sample}: {e}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        snps.push(Snp { id, chrom, genotypes });
    }
    if snps.is_empty() {
        return Err(parse_err("genotype", None, "no SNPs"));
    }
    if unknown > 0 {
        log::warn!("{unknown} genotype symbols outside the alphabet were read as missing");
    }
    Ok((snps, unknown))
}

/// Joins parsed phenotype and genotype tables.
pub fn assemble(pheno: Phenotypes, snps: Vec<Snp>, unknown_symbols: usize) -> Dataset {
    let binary = pheno.values.iter().all(|&v| v == 0.0 || v == 1.0);
    let k = pheno.covariate_names.len();
    let covariates = (k > 0).then(|| DMatrix::from_fn(pheno.values.len(), k, |i, j| pheno.covariates[i][j]));
    Dataset {
        sample_ids: pheno.sample_ids,
        sexes: pheno.sexes,
        phenotype: pheno.values,
        phenotype_kind: if binary { PhenotypeKind::Binary } else { PhenotypeKind::Continuous },
        covariate_names: pheno.covariate_names,
        covariates,
        snps,
        unknown_symbols,
    }
}

pub fn load_dataset(genotype_path: &Path, phenotype_path: &Path) -> Result<Dataset> {
    let pheno = read_phenotypes(File::open(phenotype_path)?, delimiter_for(phenotype_path))?;
    let (snps, unknown) = read_genotypes(File::open(genotype_path)?, delimiter_for(genotype_path), &pheno)?;
    Ok(assemble(pheno, snps, unknown))
}

fn genotype_symbol(g: Genotype) -> String {
    g.alt_copies().map_or_else(|| "NA".to_string(), |c| c.to_string())
}

/// Writes a phenotype table readable by [`read_phenotypes`].
pub fn write_phenotypes<W: Write>(out: W, delimiter: u8, pheno: &Phenotypes) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let mut header = vec!["sample_id".to_string(), "sex".into(), "phenotype".into()];
    header.extend(pheno.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..pheno.sample_ids.len() {
        let mut rec = vec![
            pheno.sample_ids[i].clone(),
            if pheno.sexes[i] == Sex::Male { "M" } else { "F" }.to_string(),
            pheno.values[i].to_string(),
        ];
        rec.extend(pheno.covariates[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a genotype table readable by [`read_genotypes`], one SNP per row.
pub fn write_genotypes<W: Write>(out: W, delimiter: u8, sample_ids: &[String], snps: &[Snp]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let mut header = vec!["snp_id".to_string(), "chrom".into()];
    header.extend(sample_ids.iter().cloned());
    w.write_record(&header)?;
    for snp in snps {
        let mut rec = vec![snp.id.clone(), snp.chrom.to_string()];
        rec.extend(snp.genotypes.iter().map(|&g| genotype_symbol(g)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
