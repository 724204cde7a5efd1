use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonaudit::adversaries::ProfileKind;
use anonaudit::anonymizer::AnonymizationResult;
use anonaudit::config::RunConfig;
use anonaudit::dataset::{load_csv, Schema, Table};
use anonaudit::experiments::{
    bench, bench_csv, calibrate, derive_salt, detection_matrix, k_sweep, prepare,
    profile_from_config, MATRIX_ROWS, SWEEP_ROWS,
};
use anonaudit::synth::{generate, SynthKind};
use anonaudit::traps::{OutsourcedDataset, TrapManifest};
use anonaudit::verifier::audit;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use tracing::info;

/// Environment variable holding the client's secret salt as hex.
const SALT_ENV: &str = "VERIX_SALT_HEX";

const OUTSOURCED_CSV: &str = "outsourced.csv";
const SCHEMA_JSON: &str = "schema.json";
const MANIFEST_JSON: &str = "manifest.json";

#[derive(Parser)]
#[command(
    name = "anonaudit",
    version,
    about = "Audit outsourced target-driven k-anonymization"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; unspecified fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
}

impl Global {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)
                .with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A synthetic generator name, or a CSV file plus its schema.
#[derive(Args, Clone)]
struct DataSource {
    /// strong | weak | noise, or a path to a CSV file (requires --schema).
    #[arg(long, default_value = "strong")]
    dataset: String,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Rows to generate for synthetic datasets.
    #[arg(long)]
    rows: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its schema.
    Synth {
        #[arg(long, default_value = "strong")]
        kind: SynthKind,
        #[arg(long, default_value_t = MATRIX_ROWS)]
        rows: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Inject traps, assign tracker ids and record the SHAP baseline.
    Prepare {
        #[command(flatten)]
        data: DataSource,
        /// Draw a fresh salt from the OS instead of deriving it from the seed.
        #[arg(long)]
        random_salt: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a cloud profile on an outsourced dataset and write the bundle.
    Cloud {
        /// Directory written by `prepare` (reads outsourced.csv and schema.json).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "honest")]
        adversary: ProfileKind,
        #[arg(long)]
        drop_fraction: Option<f64>,
        #[arg(long)]
        blind_seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Audit a cloud bundle against the client manifest.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the JSON report (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every (dataset, profile) pair with per-layer outcomes.
    Matrix {
        /// Comma-separated dataset list; synthetic names or csv:schema pairs.
        #[arg(long, default_value = "strong,weak", value_delimiter = ',')]
        datasets: Vec<String>,
        #[arg(long, default_value_t = MATRIX_ROWS)]
        rows: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Target-driven vs blind utility across the configured k values.
    Ksweep {
        #[command(flatten)]
        data: DataSource,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Client-side verification cost at several dataset sizes.
    Bench {
        #[arg(long, default_value = "10000,100000,1000000", value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Set epsilon from an honest local run on a small sample.
    Calibrate {
        #[command(flatten)]
        data: DataSource,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = cli.global.config()?;
    match cli.command {
        Command::Synth {
            kind,
            rows,
            out_dir,
        } => {
            let t = generate(kind, rows, cfg.seed)?;
            write_table(&t, &out_dir)?;
            println!("{}", out_dir.join("data.csv").display());
        }
        Command::Prepare {
            data,
            random_salt,
            out_dir,
        } => {
            let table = load(&data, &cfg, MATRIX_ROWS)?;
            let salt = resolve_salt(random_salt, cfg.seed)?;
            let p = prepare(&table, &cfg, &salt)?;
            for w in &p.warnings {
                eprintln!("warning: {w}");
            }
            fs::create_dir_all(&out_dir)?;
            p.outsourced.write_csv(out_dir.join(OUTSOURCED_CSV))?;
            write_json(&out_dir.join(SCHEMA_JSON), table.schema())?;
            fs::write(out_dir.join(MANIFEST_JSON), p.manifest.to_json()?)?;
            write_json(
                &out_dir.join("prepare_report.json"),
                &serde_json::json!({ "traps": p.summary, "warnings": p.warnings }),
            )?;
            println!("{}", serde_json::to_string_pretty(&p.summary)?);
        }
        Command::Cloud {
            input,
            adversary,
            drop_fraction,
            blind_seed,
            out_dir,
        } => {
            let schema = Schema::from_json_file(input.join(SCHEMA_JSON))?;
            let d = OutsourcedDataset::read_csv(input.join(OUTSOURCED_CSV), &schema)?;
            let mut profile = profile_from_config(adversary, &cfg);
            if let Some(f) = drop_fraction {
                profile.drop_fraction = f;
            }
            if let Some(s) = blind_seed {
                profile.blind_seed = s;
            }
            let result = anonaudit::adversaries::run_profile(&d, cfg.k, &profile)?;
            result.write_bundle(&out_dir)?;
            info!(
                profile = adversary.as_str(),
                rows = result.anonymized.n_rows(),
                "bundle written"
            );
            println!("{}", result.root_hash);
        }
        Command::Verify {
            bundle,
            manifest,
            out,
        } => {
            let result = AnonymizationResult::read_bundle(&bundle)
                .with_context(|| format!("reading bundle {}", bundle.display()))?;
            let manifest = TrapManifest::from_json(&fs::read_to_string(&manifest)?)?;
            let report = audit(
                &result,
                &manifest,
                cfg.epsilon,
                &cfg.fingerprint_params(),
                cfg.seed,
            )?;
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref())?;
            return Ok(report.exit_code() as u8);
        }
        Command::Matrix {
            datasets,
            rows,
            out_dir,
        } => {
            let mut loaded = Vec::new();
            for spec in datasets.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
                loaded.push((dataset_name(spec), load_spec(spec, rows, cfg.seed)?));
            }
            let (epsilon, calibration) = match (cli.global.epsilon, loaded.first()) {
                (None, Some((_, reference))) => {
                    let c = calibrate(reference, &cfg)?;
                    (c.epsilon, Some(c))
                }
                _ => (cfg.epsilon, None),
            };
            let m = detection_matrix(&loaded, &cfg, epsilon, calibration)?;
            fs::create_dir_all(&out_dir)?;
            write_json(&out_dir.join("matrix.json"), &m)?;
            fs::write(out_dir.join("matrix.txt"), m.render_table())?;
            print!("{}", m.render_table());
            println!(
                "correct verdicts: {}/{}",
                m.correct_verdicts, m.total_scenarios
            );
        }
        Command::Ksweep {
            data,
            test_fraction,
            out_dir,
        } => {
            let table = load(&data, &cfg, SWEEP_ROWS)?;
            let r = k_sweep(&table, &cfg, test_fraction)?;
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("ksweep.csv"), r.to_csv())?;
            write_json(&out_dir.join("ksweep_summary.json"), &r)?;
            print!("{}", r.to_csv());
            for s in &r.summary {
                println!(
                    "{}: W={} p={:.6} d={} mean gap={:.4} 95% CI [{:.4}, {:.4}]",
                    s.metric,
                    s.wilcoxon_w,
                    s.p_value,
                    s.cohens_d.map_or("n/a".to_string(), |d| format!("{d:.4}")),
                    s.mean_gap,
                    s.ci.low,
                    s.ci.high
                );
            }
        }
        Command::Bench { sizes, reps, out } => {
            let rows = bench(&sizes, cfg.k, reps, &cfg)?;
            emit(&bench_csv(&rows), out.as_deref())?;
        }
        Command::Calibrate { data, out } => {
            let table = load(&data, &cfg, MATRIX_ROWS)?;
            let c = calibrate(&table, &cfg)?;
            emit(&serde_json::to_string_pretty(&c)?, out.as_deref())?;
        }
    }
    Ok(0)
}

fn resolve_salt(random: bool, seed: u64) -> Result<Vec<u8>> {
    if let Ok(hexed) = std::env::var(SALT_ENV) {
        let salt =
            hex::decode(hexed.trim()).with_context(|| format!("{SALT_ENV} is not valid hex"))?;
        if salt.is_empty() {
            bail!("{SALT_ENV} is empty");
        }
        return Ok(salt);
    }
    if random {
        let mut salt = vec![0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut salt);
        return Ok(salt);
    }
    Ok(derive_salt(seed))
}

fn dataset_name(spec: &str) -> String {
    match spec.split_once(':') {
        Some((csv, _)) => Path::new(csv)
            .file_stem()
            .map_or_else(|| csv.to_string(), |s| s.to_string_lossy().into_owned()),
        None => spec.to_string(),
    }
}

/// `strong`, `weak`, `noise`, or `data.csv:schema.json`.
fn load_spec(spec: &str, rows: usize, seed: u64) -> Result<Table> {
    if let Some((csv, schema)) = spec.split_once(':') {
        let schema = Schema::from_json_file(schema)?;
        return Ok(load_csv(csv, &schema)?);
    }
    let kind: SynthKind = spec.parse()?;
    Ok(generate(kind, rows, seed)?)
}

fn load(src: &DataSource, cfg: &RunConfig, default_rows: usize) -> Result<Table> {
    match (&src.schema, src.dataset.parse::<SynthKind>()) {
        (Some(schema), _) => {
            let schema = Schema::from_json_file(schema)?;
            Ok(load_csv(&src.dataset, &schema)
                .with_context(|| format!("loading {}", src.dataset))?)
        }
        (None, Ok(kind)) => Ok(generate(kind, src.rows.unwrap_or(default_rows), cfg.seed)?),
        (None, Err(_)) => Err(anyhow!(
            "`{}` is not a synthetic dataset; pass --schema for CSV input",
            src.dataset
        )),
    }
}

fn write_table(t: &Table, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    t.write_csv(dir.join("data.csv"))?;
    write_json(&dir.join(SCHEMA_JSON), t.schema())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{}\n", text.trim_end()))?,
        None => println!("{}", text.trim_end()),
    }
    Ok(())
}
