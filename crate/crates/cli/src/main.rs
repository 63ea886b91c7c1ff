use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use xwas_core::assoc::TestKind;
use xwas_core::coding::{ChromosomeKind, CodingScheme, ModelId, ModelSpec, RiskAllele, Xci};
use xwas_core::glm::Family;
use xwas_core::io::{delimiter_for, load_dataset, write_genotypes, write_phenotypes, Phenotypes, Snp};
use xwas_core::ncp::{autosome_power_sweep, write_sweep_csv, x_power_sweep, EffectSpec, SweepKind};
use xwas_core::power::{
    gain_crossover, max_power_loss, power, power_gain_curve, power_surface, write_gain_csv, write_surface_csv, PowerQuery, SearchGrid,
};
use xwas_core::scan::{audit_dataset, scan, write_audit_tsv, write_scan_tsv, write_summary_tsv, ScanOptions, SnpAudit};
use xwas_core::sim::{replicate_rng, simulate_dataset, simulate_genotypes_for, simulate_tests, write_results_csv, SimConfig};

#[derive(Parser)]
#[command(name = "xwas", version, about = "X-chromosome-inclusive association scans and power analysis")]
struct Cli {
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test every SNP under the chosen models.
    Scan(ScanArgs),
    /// Estimate rejection rates by Monte Carlo.
    Simulate(SimulateArgs),
    /// Analytic power tables.
    Power {
        #[command(subcommand)]
        table: PowerTable,
    },
    /// Check that test statistics agree across equivalent allele codings.
    Audit(AuditArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Genotype table (snp_id, chrom, one column per sample).
    #[arg(long)]
    geno: PathBuf,
    /// Phenotype table (sample_id, sex, phenotype, covariates).
    #[arg(long)]
    pheno: PathBuf,
    /// Defaults to logistic for 0/1 phenotypes, linear otherwise.
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    /// Comma separated: additive, genotypic, M0..M4.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Vec<ModelId>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma separated: wald, score, lrt, f.
    #[arg(long, value_delimiter = ',', value_parser = parse_test, default_value = "wald,score,lrt")]
    tests: Vec<TestKind>,
    /// Significance level used to flag SNPs.
    #[arg(long, default_value_t = 5e-8)]
    alpha: f64,
    /// Largest missing fraction before a SNP is skipped.
    #[arg(long, default_value_t = 0.1)]
    qc_miss: f64,
    /// Smallest minor-allele count per sex before a SNP is flagged.
    #[arg(long, default_value_t = 5)]
    qc_mac: u64,
    /// Output prefix; writes PREFIX.scan.tsv and PREFIX.summary.tsv.
    /// Without it the scan table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run the coding audit and write PREFIX.audit.tsv.
    #[arg(long)]
    audit: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Test statistics to compare.
    #[arg(long, value_delimiter = ',', value_parser = parse_test, default_value = "wald")]
    tests: Vec<TestKind>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides the configuration family.
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    /// Models to fit; defaults to M0..M4 on X and additive, genotypic on autosomes.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Vec<ModelId>,
    #[arg(long, value_delimiter = ',', value_parser = parse_test, default_value = "wald,score,lrt")]
    tests: Vec<TestKind>,
    /// Rejection-rate CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write replicate 0 as a genotype table here (needs --pheno).
    #[arg(long, requires = "pheno")]
    geno: Option<PathBuf>,
    /// Write replicate 0 as a phenotype table here (needs --geno).
    #[arg(long, requires = "geno")]
    pheno: Option<PathBuf>,
    /// Null SNPs added to the written genotype table.
    #[arg(long, default_value_t = 0)]
    null_snps: usize,
}

#[derive(Subcommand)]
enum PowerTable {
    /// Power of one test.
    Point {
        #[arg(long)]
        df: u32,
        #[arg(long)]
        ncp: f64,
        #[arg(long, default_value_t = 5e-8)]
        alpha: f64,
    },
    /// Largest power loss of a larger-df test at equal ncp.
    Loss {
        /// Restrict the search to one level instead of -log10(alpha) in [0, 15].
        #[arg(long)]
        alpha: Option<f64>,
        /// Comparisons as SMALL:LARGE pairs.
        #[arg(long, value_delimiter = ',', default_value = "1:2,1:3,2:3")]
        pairs: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power of the 1, 2 and 3 df tests over an (alpha, ncp) lattice.
    Surface {
        /// Largest -log10(alpha).
        #[arg(long, default_value_t = 10.0)]
        max_neg_log_alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha_step: f64,
        #[arg(long, default_value_t = 60.0)]
        max_ncp: f64,
        #[arg(long, default_value_t = 1.0)]
        ncp_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power of the larger-df test as its ncp exceeds the smaller test's by delta.
    Gain {
        #[arg(long)]
        ncp1: f64,
        #[arg(long, default_value_t = 1)]
        df_small: u32,
        #[arg(long, default_value_t = 2)]
        df_large: u32,
        #[arg(long, default_value_t = 5e-8)]
        alpha: f64,
        #[arg(long, default_value_t = 20.0)]
        delta_max: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model power as one genetic effect sweeps over [-0.6, 0.6].
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Chrom::X)]
    chrom: Chrom,
    /// X: which group mean varies.
    #[arg(long, value_enum, default_value_t = SweepTarget::Dominant)]
    sweep: SweepTarget,
    /// Risk allele frequency.
    #[arg(long, default_value_t = 0.2)]
    f: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.0025)]
    alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    sigma2: f64,
    /// Autosome: fixed additive effect.
    #[arg(long, default_value_t = 0.3)]
    beta_a: f64,
    /// X: group means rr, rR, RR, r, R held fixed outside the sweep.
    #[arg(long, value_delimiter = ',', num_args = 5, default_value = "-0.3,0,0.3,0,0.3")]
    mu: Vec<f64>,
    /// X: fit under the no-inactivation coding.
    #[arg(long)]
    no_xci: bool,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Chrom {
    X,
    #[value(alias = "autosome")]
    A,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepTarget {
    Dominant,
    Interaction,
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::parse(s).ok_or_else(|| format!("unknown family {s:?}; expected linear or logistic"))
}

fn parse_model(s: &str) -> Result<ModelId, String> {
    ModelId::parse(s.trim()).ok_or_else(|| format!("unknown model {s:?}; expected additive, genotypic or M0..M4"))
}

fn parse_test(s: &str) -> Result<TestKind, String> {
    TestKind::parse(s.trim()).ok_or_else(|| format!("unknown test {s:?}; expected wald, score, lrt or f"))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn requested(models: &[ModelId]) -> Option<Vec<ModelId>> {
    (!models.is_empty()).then(|| models.to_vec())
}

fn load(data: &DataArgs) -> Result<xwas_core::io::Dataset> {
    let ds =
        load_dataset(&data.geno, &data.pheno).with_context(|| format!("loading {} and {}", data.geno.display(), data.pheno.display()))?;
    info!("{} samples, {} SNPs", ds.n(), ds.snps.len());
    Ok(ds)
}

fn audit_all(ds: &xwas_core::io::Dataset, data: &DataArgs, tests: &[TestKind]) -> Result<Vec<SnpAudit>> {
    let models = requested(&data.models).unwrap_or_else(|| vec![ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4]);
    let mut all = Vec::new();
    for &m in &models {
        for &t in tests {
            all.extend(audit_dataset(ds, m, data.family, t)?);
        }
    }
    let failures = all
        .iter()
        .filter_map(|a| a.report.as_ref().ok())
        .flat_map(|r| &r.pairs)
        .filter(|p| p.expected_equivalent && p.rel_diff >= 1e-8)
        .count();
    if failures > 0 {
        log::warn!("{failures} equivalent coding pairs disagree beyond 1e-8");
    }
    Ok(all)
}

fn run_scan(args: &ScanArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let options = ScanOptions {
        models: requested(&args.data.models),
        tests: args.tests.clone(),
        family: args.data.family,
        alpha: args.alpha,
        qc_miss: args.qc_miss,
        qc_mac: args.qc_mac,
    };
    let out = scan(&ds, &options)?;
    let hits = out.summaries.iter().filter(|s| s.significant).count();
    info!("{} family; {hits} SNPs below alpha = {}", out.family, args.alpha);
    match &args.out {
        Some(prefix) => {
            write_scan_tsv(output(Some(&with_suffix(prefix, ".scan.tsv")))?, &out.rows)?;
            write_summary_tsv(output(Some(&with_suffix(prefix, ".summary.tsv")))?, &out.summaries)?;
            if args.audit {
                let audits = audit_all(&ds, &args.data, &args.tests[..1])?;
                write_audit_tsv(output(Some(&with_suffix(prefix, ".audit.tsv")))?, &audits)?;
            }
        }
        None => {
            if args.audit {
                bail!("--audit needs --out to name the audit table");
            }
            write_scan_tsv(output(None)?, &out.rows)?;
        }
    }
    Ok(())
}

fn run_audit(args: &AuditArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let audits = audit_all(&ds, &args.data, &args.tests)?;
    write_audit_tsv(output(args.out.as_deref())?, &audits)?;
    Ok(())
}

fn write_simulated_data(config: &SimConfig, geno: &Path, pheno: &Path, null_snps: usize) -> Result<()> {
    let d = simulate_dataset(config, 0)?;
    let n = d.y.len();
    let sample_ids: Vec<String> = (1..=n).map(|i| format!("s{i}")).collect();
    let mut snps = vec![Snp {
        id: "causal".into(),
        chrom: config.chrom,
        genotypes: d.genotypes,
    }];
    // Null SNPs use their own streams, past the replicate range.
    for k in 0..null_snps {
        let mut rng = replicate_rng(config.seed, config.replicates as u64 + k as u64);
        let genotypes = simulate_genotypes_for(&d.sexes, &config.pop, config.chrom, &mut rng)?;
        snps.push(Snp {
            id: format!("null{}", k + 1),
            chrom: config.chrom,
            genotypes,
        });
    }
    let table = Phenotypes {
        sample_ids: sample_ids.clone(),
        sexes: d.sexes,
        values: d.y,
        covariate_names: vec![],
        covariates: vec![vec![]; n],
    };
    write_phenotypes(output(Some(pheno))?, delimiter_for(pheno), &table)?;
    write_genotypes(output(Some(geno))?, delimiter_for(geno), &sample_ids, &snps)?;
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = SimConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(family) = args.family {
        config.effects.family = family;
    }
    config.validate()?;
    info!("config {} ({} replicates of n = {})", config.hash(), config.replicates, config.n);

    if let (Some(geno), Some(pheno)) = (&args.geno, &args.pheno) {
        write_simulated_data(&config, geno, pheno, args.null_snps)?;
    }

    let models = requested(&args.models).unwrap_or_else(|| match config.chrom {
        ChromosomeKind::X => ModelId::X_MODELS.to_vec(),
        ChromosomeKind::Autosome => vec![ModelId::Additive, ModelId::Genotypic],
    });
    let mut specs = Vec::new();
    for m in models {
        if !m.supports(config.chrom) {
            bail!("model {m} does not apply to chromosome {}", config.chrom);
        }
        // Both XCI codings on X; the coding is fixed on autosomes.
        let xcis: &[Xci] = match config.chrom {
            ChromosomeKind::X => &[Xci::Inactivated, Xci::NotInactivated],
            ChromosomeKind::Autosome => &[Xci::Inactivated],
        };
        for &xci in xcis {
            specs.push(ModelSpec::new(m, config.effects.family, CodingScheme::new(RiskAllele::Alt, xci)));
        }
    }
    let estimates = simulate_tests(&config, &specs, &args.tests)?;
    write_results_csv(output(args.out.as_deref())?, &config, &estimates)?;
    Ok(())
}

fn parse_pair(s: &str) -> Result<(u32, u32)> {
    let (a, b) = s.split_once(':').with_context(|| format!("pair {s:?} must look like 1:2"))?;
    let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
    if a >= b {
        bail!("pair {s:?}: the first df must be smaller");
    }
    Ok((a, b))
}

fn axis(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(max >= 0.0 && step > 0.0) {
        bail!("axis needs a nonnegative maximum and a positive step");
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

fn run_power(table: &PowerTable) -> Result<()> {
    match table {
        PowerTable::Point { df, ncp, alpha } => {
            let p = power(&PowerQuery::new(*df, *ncp, *alpha)?)?;
            println!("df,ncp,alpha,power");
            println!("{df},{ncp},{alpha:e},{p:.10}");
        }
        PowerTable::Loss { alpha, pairs, out } => {
            let grid = alpha.map_or_else(SearchGrid::default, SearchGrid::at_alpha);
            info!("search grid: {}", grid.describe());
            let mut w = output(out.as_deref())?;
            writeln!(w, "df_small,df_large,max_loss,alpha,ncp,gain_crossover")?;
            for pair in pairs {
                let (s, l) = parse_pair(pair)?;
                let r = max_power_loss(s, l, &grid)?;
                let cross = gain_crossover(r.argmax_ncp, r.argmax_alpha, s, l)?;
                writeln!(
                    w,
                    "{s},{l},{:.6},{:.4e},{:.4},{:.4}",
                    r.max_loss, r.argmax_alpha, r.argmax_ncp, cross
                )?;
            }
        }
        PowerTable::Surface {
            max_neg_log_alpha,
            alpha_step,
            max_ncp,
            ncp_step,
            out,
        } => {
            let t: Vec<f64> = axis(*max_neg_log_alpha, *alpha_step)?.into_iter().filter(|&t| t > 0.0).collect();
            let rows = power_surface(&t, &axis(*max_ncp, *ncp_step)?)?;
            write_surface_csv(output(out.as_deref())?, &rows)?;
        }
        PowerTable::Gain {
            ncp1,
            df_small,
            df_large,
            alpha,
            delta_max,
            step,
            out,
        } => {
            let points = power_gain_curve(*ncp1, (0.0, *delta_max), *step, *alpha, *df_small, *df_large)?;
            write_gain_csv(output(out.as_deref())?, &points)?;
        }
        PowerTable::Sweep(a) => run_sweep(a)?,
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let values: Vec<f64> = axis(1.2, a.step)?.into_iter().map(|v| ((v - 0.6) * 1e9).round() / 1e9).collect();
    match a.chrom {
        Chrom::A => {
            let rows = autosome_power_sweep(a.beta_a, a.f, &values, a.sigma2, a.n, a.alpha)?;
            write_sweep_csv(output(a.out.as_deref())?, "beta_d", &rows)?;
        }
        Chrom::X => {
            let mu: [f64; 5] = a.mu.as_slice().try_into().context("--mu needs five values")?;
            let base = EffectSpec::new(mu, a.sigma2, Family::Linear)?;
            let pop = xwas_core::ncp::PopulationSpec::new(a.f, a.f)?;
            let xci = if a.no_xci { Xci::NotInactivated } else { Xci::Inactivated };
            let (kind, label) = match a.sweep {
                SweepTarget::Dominant => (SweepKind::Dominant, "mu_rR"),
                SweepTarget::Interaction => (SweepKind::Interaction, "mu_R"),
            };
            let rows = x_power_sweep(&base, &pop, CodingScheme::new(RiskAllele::Alt, xci), kind, &values, a.n, a.alpha)?;
            write_sweep_csv(output(a.out.as_deref())?, label, &rows)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring the thread pool")?;
    match &cli.command {
        Command::Scan(a) => run_scan(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Power { table } => run_power(table),
        Command::Audit(a) => run_audit(a),
    }
}
