use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};
use mirror_core::experiment::SnapshotOffset;
use mirror_core::ideology::read_url_shares;
use mirror_core::stats::report::{permutation_summary, regression_table, write_regression_csv};
use mirror_core::stats::{alignment_effects, ArmModel, RegressionResult};
use mirror_core::tables::{export_analysis_tables, AnalysisTables, ExportOptions};
use mirror_core::{AccountId, ExperimentStore, TreatmentArm};
use mirror_service::analysis::{balance_check, diversity_section, survey_section};
use mirror_service::api::{router, ApiSettings, AppState};
use mirror_service::config::Config;
use mirror_service::ingest::ingest;
use serde::Deserialize;
use tracing::{info, warn};

#[derive(Parser)]
#[command(name = "social-mirror", version, about = "Network visualization experiment server and analysis tools")]
struct Cli {
    #[arg(long, short, default_value = "social-mirror.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or reuse) the cached graph, sample, PageRank and layout.
    Ingest,
    /// Serve the participant and admin API.
    Serve,
    /// Append follow-graph snapshots, control registrations and URL shares.
    SnapshotImport {
        /// `user_id,offset,followee_id` rows; offset is week0, day1, week1, week2 or week3.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// `user_id` rows registering observational control accounts.
        #[arg(long)]
        controls: Option<PathBuf>,
        /// `user_id,timestamp_iso8601,url,phase` rows.
        #[arg(long)]
        shares: Option<PathBuf>,
    },
    /// Write the analysis tables as CSV.
    Export {
        #[arg(long, default_value = "analysis")]
        output: PathBuf,
        /// Drop treated units without both surveys.
        #[arg(long)]
        completed_only: bool,
    },
    /// Fit one family of models and print the table.
    Analyze {
        #[command(subcommand)]
        target: Target,
        /// Read previously exported tables instead of the live store.
        #[arg(long, global = true)]
        input: Option<PathBuf>,
        /// Also write the fitted coefficients as CSV.
        #[arg(long, global = true)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    FourArm,
    ThreeArm,
}

impl From<Model> for ArmModel {
    fn from(m: Model) -> Self {
        match m {
            Model::FourArm => ArmModel::FourArm,
            Model::ThreeArm => ArmModel::ThreeArm,
        }
    }
}

#[derive(Subcommand)]
enum Target {
    Survey {
        #[arg(long, default_value = "viz")]
        baseline: TreatmentArm,
        #[arg(long)]
        filter_acceptors: bool,
    },
    Diversity {
        /// Week 1 to 3; all three when omitted.
        #[arg(long)]
        week: Option<u8>,
        #[arg(long, value_enum, default_value = "four-arm")]
        model: Model,
    },
    Alignment {
        #[arg(long, value_enum, default_value = "four-arm")]
        model: Model,
    },
    Balance {
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check only the three treated arms.
        #[arg(long)]
        treated_only: bool,
    },
}

fn open_store(config: &Config) -> Result<ExperimentStore> {
    std::fs::create_dir_all(&config.store_dir)
        .with_context(|| format!("creating {}", config.store_dir.display()))?;
    let snapshot = config.snapshot_path();
    let snapshot = snapshot.exists().then_some(snapshot.as_path());
    ExperimentStore::open(config.rng_seed, &config.journal_path(), snapshot)
        .with_context(|| format!("opening the experiment store in {}", config.store_dir.display()))
}

fn live_tables(config: &Config, completed_only: bool) -> Result<AnalysisTables> {
    let (bundle, _) = ingest(config)?;
    let store = open_store(config)?;
    let options = ExportOptions { require_completed_surveys: completed_only };
    Ok(export_analysis_tables(&store, &bundle.labels, &bundle.alignment, options))
}

fn print_models(title: &str, columns: Vec<(String, RegressionResult)>, output: Option<&Path>) -> Result<()> {
    let refs: Vec<(String, &RegressionResult)> = columns.iter().map(|(n, f)| (n.clone(), f)).collect();
    print!("{}", regression_table(title, &refs));
    if let Some(path) = output {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_regression_csv(file, &refs)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct SnapshotRow {
    user_id: AccountId,
    offset: String,
    followee_id: AccountId,
}

#[derive(Deserialize)]
struct ControlRow {
    user_id: AccountId,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn snapshot_import(config: &Config, snapshots: Option<&Path>, controls: Option<&Path>, shares: Option<&Path>) -> Result<()> {
    let mut store = open_store(config)?;
    let now = Utc::now();
    if let Some(path) = controls {
        let mut registered = 0;
        for (n, row) in csv_reader(path)?.deserialize::<ControlRow>().enumerate() {
            let row = row.with_context(|| format!("{} record {}", path.display(), n + 1))?;
            store.register_control(&row.user_id, now)?;
            registered += 1;
        }
        info!(registered, "registered control accounts");
    }
    if let Some(path) = snapshots {
        let mut grouped: BTreeMap<(AccountId, SnapshotOffset), BTreeSet<AccountId>> = BTreeMap::new();
        for (n, row) in csv_reader(path)?.deserialize::<SnapshotRow>().enumerate() {
            let row = row.with_context(|| format!("{} record {}", path.display(), n + 1))?;
            let offset: SnapshotOffset =
                row.offset.parse().with_context(|| format!("{} record {}", path.display(), n + 1))?;
            grouped.entry((row.user_id, offset)).or_default().insert(row.followee_id);
        }
        let count = grouped.len();
        for ((user, offset), followees) in grouped {
            store.snapshot_followees(&user, offset, followees, now)?;
        }
        info!(snapshots = count, "recorded followee snapshots");
    }
    if let Some(path) = shares {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let rows = read_url_shares(file).with_context(|| format!("reading {}", path.display()))?;
        let count = rows.len();
        store.import_shares(rows, now)?;
        info!(shares = count, "imported URL shares");
    }
    store.write_snapshot(&config.snapshot_path())?;
    Ok(())
}

async fn serve(config: Config) -> Result<()> {
    if config.token_secret.is_empty() {
        bail!("token_secret must be set (or SOCIAL_MIRROR_TOKEN_SECRET) before serving");
    }
    let (bundle, report) = ingest(&config)?;
    info!(digest = %report.digest, cache_hit = report.cache_hit, sample = report.sample_nodes, "dataset ready");
    let store = open_store(&config)?;
    let settings = ApiSettings {
        token_secret: config.token_secret.clone(),
        admin_token: config.admin_token.clone(),
        max_recommendations: config.max_recommendations,
        audit_log: Some(config.audit_log_path()),
    };
    let state = Arc::new(AppState::new(Arc::new(bundle), store, settings)?);

    let snapshot_path = config.snapshot_path();
    let interval = Duration::from_secs(config.snapshot_interval_secs.max(1));
    let snapshot_state = Arc::clone(&state);
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.tick().await;
        loop {
            ticker.tick().await;
            if let Err(e) = snapshot_state.write_snapshot(&snapshot_path) {
                warn!(error = %e, "state snapshot failed");
            }
        }
    });

    let address = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&address).await.with_context(|| format!("binding {address}"))?;
    info!(%address, "listening");
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.write_snapshot(&config.snapshot_path())?;
    Ok(())
}

fn analyze(config: &Config, target: Target, input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let tables = match input {
        Some(dir) => AnalysisTables::read_dir(dir)?,
        None => live_tables(config, false)?,
    };
    match target {
        Target::Survey { baseline, filter_acceptors } => {
            let title = format!("Survey deltas vs {baseline}");
            print_models(&title, survey_section(&tables, baseline, filter_acceptors)?, output)
        }
        Target::Diversity { week, model } => {
            let weeks = match week {
                Some(w) => vec![w],
                None => vec![1, 2, 3],
            };
            print_models("Connection diversity change", diversity_section(&tables, &weeks, model.into())?, output)
        }
        Target::Alignment { model } => {
            let fit = alignment_effects(&tables.alignment, model.into())?;
            print_models("Shared-URL alignment change", vec![("delta".into(), fit)], output)
        }
        Target::Balance { permutations, seed, treated_only } => {
            let arms: &[TreatmentArm] = if treated_only { &TreatmentArm::TREATED } else { &TreatmentArm::ALL };
            let (columns, result) = balance_check(&tables, arms, permutations, seed)?;
            println!("Covariates: {}", columns.join(", "));
            print!("{}", permutation_summary(&result));
            if let Some(path) = output {
                std::fs::write(path, serde_json::to_string_pretty(&result)?)?;
            }
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    let config = Config::load(&cli.config)?;
    match cli.command {
        Command::Ingest => {
            let (_, report) = ingest(&config)?;
            println!(
                "digest {}\ncache {} ({})\ngraph {} nodes / {} edges\ncore {} nodes\nsample {} nodes / {} edges ({} unscored)\nelapsed {:.1?}",
                report.digest,
                report.cache_dir.display(),
                if report.cache_hit { "hit" } else { "built" },
                report.graph_nodes,
                report.graph_edges,
                report.core_nodes,
                report.sample_nodes,
                report.sample_edges,
                report.unscored_sample_nodes,
                report.elapsed
            );
            Ok(())
        }
        Command::Serve => tokio::runtime::Runtime::new()?.block_on(serve(config)),
        Command::SnapshotImport { snapshots, controls, shares } => {
            snapshot_import(&config, snapshots.as_deref(), controls.as_deref(), shares.as_deref())
        }
        Command::Export { output, completed_only } => {
            live_tables(&config, completed_only)?.write_dir(&output)?;
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::Analyze { target, input, output } => analyze(&config, target, input.as_deref(), output.as_deref()),
    }
}
