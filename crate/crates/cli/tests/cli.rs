use std::path::Path;
use std::process::{Command, Output};

fn xwas(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xwas"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = xwas(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn simulated(dir: &Path) {
    std::fs::write(
        dir.join("sim.conf"),
        "# strong additive X effect\nn = 400\nf_female = 0.3\nmu_rR = 0.4\nmu_RR = 0.8\nmu_R = 0.8\nsigma2 = 1\nreplicates = 40\nseed = 3\n",
    )
    .unwrap();
    ok(
        &[
            "simulate",
            "--config",
            "sim.conf",
            "--geno",
            "g.tsv",
            "--pheno",
            "p.csv",
            "--null-snps",
            "4",
            "--out",
            "res.csv",
        ],
        dir,
    );
}

#[test]
fn simulate_writes_rates_and_data() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let res = std::fs::read_to_string(dir.path().join("res.csv")).unwrap();
    let lines: Vec<&str> = res.lines().collect();
    assert_eq!(lines[0], "config_hash,model,test,rate,mc_se,excluded_count");
    // M0..M4 under both XCI codings, three tests each.
    assert_eq!(lines.len(), 1 + 5 * 2 * 3);
    assert!(lines.iter().any(|l| l.contains("\"M4(R,XCI)\",wald,1.000000")));
    let pheno = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(pheno.starts_with("sample_id,sex,phenotype\n"));
    let geno = std::fs::read_to_string(dir.path().join("g.tsv")).unwrap();
    assert_eq!(geno.lines().count(), 6);
}

#[test]
fn simulation_is_reproducible_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let args = ["simulate", "--config", "sim.conf", "--seed", "9", "--models", "M1,M3"];
    let one = ok(&[&["--threads", "1"][..], &args[..]].concat(), dir.path());
    let four = ok(&[&["--threads", "4"][..], &args[..]].concat(), dir.path());
    assert_eq!(one, four);
    let other = ok(
        &["simulate", "--config", "sim.conf", "--seed", "10", "--models", "M1,M3"],
        dir.path(),
    );
    assert_ne!(one.lines().nth(1), other.lines().nth(1));
}

#[test]
fn scan_and_audit_simulated_data() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let d = dir.path();
    ok(
        &[
            "scan", "--geno", "g.tsv", "--pheno", "p.csv", "--tests", "wald,f", "--out", "run", "--audit",
        ],
        d,
    );
    let summary = std::fs::read_to_string(d.join("run.summary.tsv")).unwrap();
    let top = summary.lines().nth(1).unwrap();
    assert!(top.starts_with("causal\tX\t400\t"), "{top}");
    assert!(top.contains("\ttrue\t"));
    assert_eq!(summary.lines().filter(|l| l.contains("\ttrue\t")).count(), 1);

    let rows = std::fs::read_to_string(d.join("run.scan.tsv")).unwrap();
    // Five SNPs, six X models, two tests.
    assert_eq!(rows.lines().count(), 1 + 5 * 6 * 2);

    let audit = std::fs::read_to_string(d.join("run.audit.tsv")).unwrap();
    assert!(!audit.contains("unexpected discrepancy"));
    let stdout = ok(
        &[
            "audit",
            "--geno",
            "g.tsv",
            "--pheno",
            "p.csv",
            "--models",
            "M4",
            "--tests",
            "lrt,score",
        ],
        d,
    );
    for line in stdout.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[6], "true", "M4 codings are all equivalent: {line}");
        assert!(cols[8].parse::<f64>().unwrap() < 1e-8);
    }
}

#[test]
fn scan_to_stdout_with_chosen_models() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let out = ok(
        &[
            "scan", "--geno", "g.tsv", "--pheno", "p.csv", "--models", "m2", "--tests", "lrt", "--qc-mac", "1",
        ],
        dir.path(),
    );
    let models: std::collections::BTreeSet<&str> = out.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap()).collect();
    assert_eq!(models.into_iter().collect::<Vec<_>>(), ["M2(XCI)", "M2(noXCI)"]);
}

#[test]
fn power_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let point = ok(&["power", "point", "--df", "1", "--ncp", "0", "--alpha", "0.05"], d);
    assert_eq!(point.lines().nth(1).unwrap(), "1,0,5e-2,0.0500000000");

    let loss = ok(&["power", "loss", "--alpha", "5e-8", "--pairs", "1:2"], d);
    let cols: Vec<f64> = loss.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((cols[2] - 0.103).abs() < 0.002, "{loss}");
    assert!((cols[4] - 31.4).abs() / 31.4 < 0.05);

    let sweep = ok(&["power", "sweep", "--chrom", "a", "--f", "0.5", "--step", "0.3"], d);
    let values: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["-0.6", "-0.3", "0", "0.3", "0.6"]);
    assert!(sweep.lines().skip(1).all(|l| l.split(',').nth(1) == Some("11.25000000")));

    ok(&["power", "sweep", "--sweep", "interaction", "--no-xci", "--out", "x.csv"], d);
    let x = std::fs::read_to_string(d.join("x.csv")).unwrap();
    assert!(x.starts_with("mu_R,ncp_M1,power_M1,ncp_M2,power_M2,ncp_M3,power_M3,ncp_M4,power_M4\n"));

    ok(
        &[
            "power",
            "surface",
            "--max-neg-log-alpha",
            "2",
            "--alpha-step",
            "1",
            "--max-ncp",
            "2",
            "--out",
            "s.csv",
        ],
        d,
    );
    assert_eq!(std::fs::read_to_string(d.join("s.csv")).unwrap().lines().count(), 1 + 2 * 3);
    let gain = ok(&["power", "gain", "--ncp1", "10", "--delta-max", "1", "--step", "0.5"], d);
    assert_eq!(gain.lines().count(), 4);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let d = dir.path();
    for args in [
        &["scan", "--geno", "missing.tsv", "--pheno", "p.csv"][..],
        &["scan", "--geno", "g.tsv", "--pheno", "p.csv", "--models", "M9"],
        &["scan", "--geno", "g.tsv", "--pheno", "p.csv", "--family", "logistic"],
        &["scan", "--geno", "g.tsv", "--pheno", "p.csv", "--audit"],
        &["simulate", "--config", "sim.conf", "--models", "additive"],
        &["power", "loss", "--pairs", "2:1"],
        &["power", "point", "--df", "2", "--ncp", "1", "--alpha", "1.5"],
    ] {
        let out = xwas(args, d);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
