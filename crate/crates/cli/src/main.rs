use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use riskprobe_core::agents::{agent_seed, simulate_population, AgentSpec, UtilityFamily};
use riskprobe_core::analysis::{analyze, AnalysisReport, HlCrossTab, PatternTable};
use riskprobe_core::choice::ChoicePattern;
use riskprobe_core::crra::{crra_curve, crra_interval, CrraInterval};
use riskprobe_core::geometry::{hl_triangle, overlap_report, region_polygon, OverlapRow, Region};
use riskprobe_core::lottery::Lottery;
use riskprobe_core::records::{read_records, write_records, RecordFormat};
use riskprobe_core::reference::{load_reference_dataset, reference_report, ReferenceReport};
use riskprobe_core::scalar::Scalar;
use riskprobe_core::tasks::{custom_battery, hl_battery, paper_battery, paper_prizes, verify_paper_table, HlRow, MpsCase};
use riskprobe_core::{ExactPolygon, Rational};
use riskprobe_session::service::{Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "riskprobe", version, about = "Mean-preserving-spread risk elicitation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the spread battery and the price list as JSON.
    Gen {
        /// Build spread cases from these base lotteries (JSON array) instead
        /// of the standard six.
        #[arg(long)]
        bases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write region and price-list triangle polygons as JSON.
    Regions {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also sample the CRRA curve into this CSV.
        #[arg(long)]
        crra_csv: Option<PathBuf>,
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        r_from: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        r_to: f64,
        #[arg(long, default_value_t = 0.01)]
        r_step: f64,
    },
    /// Simulate agents through both parts and write their choice records.
    Simulate {
        /// crra:R, cara:A, powerexpo:R,ALPHA or table:U1,U2,...; repeat to
        /// mix populations, `--n` agents each.
        #[arg(long, required = true)]
        agent: Vec<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        tremble: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sim")]
        session_id: String,
        /// `.csv` or `.jsonl`; JSONL to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze choice records, or check the bundled reference aggregates.
    Analyze {
        /// CSV or JSONL records.
        #[arg(long, required_unless_present = "reference", conflicts_with = "reference")]
        input: Option<PathBuf>,
        #[arg(long)]
        reference: bool,
        /// JSON report; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for the CSV tables.
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Run the session server.
    Serve {
        #[arg(long, env = "RISKPROBE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "RISKPROBE_BIND", default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        #[arg(long, env = "RISKPROBE_DATA_DIR", default_value = "sessions")]
        data_dir: PathBuf,
        /// Seed for sessions created without one.
        #[arg(long, env = "RISKPROBE_SEED")]
        seed: Option<u64>,
        /// Skip syncing each log append to disk.
        #[arg(long)]
        no_fsync: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { bases, out } => gen(bases.as_deref(), out.as_deref())?,
        Command::Regions {
            out,
            crra_csv,
            r_from,
            r_to,
            r_step,
        } => {
            write_json(out.as_deref(), &regions()?)?;
            if let Some(path) = crra_csv {
                write_crra_csv(&path, r_from, r_to, r_step)?;
            }
        }
        Command::Simulate {
            agent,
            n,
            tremble,
            seed,
            session_id,
            out,
        } => simulate(&agent, n, tremble, seed, &session_id, out.as_deref())?,
        Command::Analyze {
            input,
            reference,
            out,
            tables,
        } => {
            return if reference {
                analyze_reference(out.as_deref(), tables.as_deref())
            } else {
                let input = input.expect("required unless --reference");
                analyze_records(&input, out.as_deref(), tables.as_deref())?;
                Ok(ExitCode::SUCCESS)
            };
        }
        Command::Serve {
            port,
            bind,
            data_dir,
            seed,
            no_fsync,
        } => serve(SocketAddr::new(bind, port), data_dir, seed, !no_fsync)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BatteryFile {
    cases: Vec<MpsCase>,
    hl_rows: Vec<HlRow>,
}

fn gen(bases: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cases = match bases {
        None => {
            verify_paper_table().context("embedded battery drifted from its generator")?;
            paper_battery()
        }
        Some(path) => {
            let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let bases: Vec<Lottery> = serde_json::from_slice(&raw).context("bases must be a JSON array of lotteries")?;
            custom_battery(bases)?
        }
    };
    write_json(
        out,
        &BatteryFile {
            cases,
            hl_rows: hl_battery(),
        },
    )
}

#[derive(Serialize)]
struct RegionEntry {
    region: Region,
    pattern: ChoicePattern,
    polygon: ExactPolygon,
}

#[derive(Serialize)]
struct TriangleEntry {
    safe_choices: u32,
    polygon: ExactPolygon,
    r_lo: Option<f64>,
    r_hi: Option<f64>,
    labels: (String, String),
}

#[derive(Serialize)]
struct RegionsFile {
    prizes: Vec<String>,
    regions: Vec<RegionEntry>,
    triangles: Vec<TriangleEntry>,
    overlap: Vec<OverlapRow>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn regions() -> Result<RegionsFile> {
    let regions = Region::ALL
        .iter()
        .map(|&r| RegionEntry {
            region: r,
            pattern: r.pattern(),
            polygon: region_polygon(r),
        })
        .collect();
    let triangles = (0..=9)
        .map(|s| {
            let iv: CrraInterval<f64> = crra_interval(s)?;
            Ok(TriangleEntry {
                safe_choices: s,
                polygon: hl_triangle::<Rational>(s)?,
                r_lo: finite(iv.r_lo),
                r_hi: finite(iv.r_hi),
                labels: iv.labels(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(RegionsFile {
        prizes: paper_prizes().as_slice().iter().map(riskprobe_core::scalar::format_rational).collect(),
        regions,
        triangles,
        overlap: overlap_report(),
    })
}

fn write_crra_csv(path: &Path, from: f64, to: f64, step: f64) -> Result<()> {
    if !(step > 0.0) || from > to {
        bail!("need r-from <= r-to and a positive step");
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["r", "u1", "u2"])?;
    for (r, pt) in crra_curve(from, to, step) {
        w.write_record([format!("{r:.6}"), pt.u1().to_string(), pt.u2().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(agents: &[String], n: usize, tremble: f64, seed: u64, session_id: &str, out: Option<&Path>) -> Result<()> {
    let families = agents
        .iter()
        .map(|a| a.parse::<UtilityFamily<f64>>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut specs = Vec::with_capacity(families.len() * n);
    for family in &families {
        for _ in 0..n {
            let i = specs.len();
            specs.push(AgentSpec::new(family.clone(), tremble, agent_seed(seed, i))?);
        }
    }
    let records = simulate_population(session_id, &specs, &paper_battery(), &hl_battery())?;
    let format = match out {
        Some(p) => RecordFormat::from_path(p)?,
        None => RecordFormat::Jsonl,
    };
    let mut w = output(out)?;
    write_records(&mut w, &records, format)?;
    w.flush()?;
    Ok(())
}

fn analyze_records(input: &Path, out: Option<&Path>, tables: Option<&Path>) -> Result<()> {
    let records = read_records(input).with_context(|| format!("reading {}", input.display()))?;
    let report = analyze(&records);
    for note in &report.notes {
        eprintln!(
            "note: {}/{} part {}: {}",
            note.session_id, note.subject_id, note.part, note.reason
        );
    }
    if let Some(dir) = tables {
        write_tables(dir, &report.pattern_table, &report.hl_histogram, &report.hl_cross_tab)?;
    }
    write_json(out, &report as &AnalysisReport)
}

fn write_tables(dir: &Path, table: &PatternTable, histogram: &[u64], cross: &HlCrossTab) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("patterns_by_case.csv"))?;
    let mut header = vec!["case".to_string()];
    header.extend(ChoicePattern::ALL.iter().map(|p| p.label().to_string()));
    header.push("subjects".into());
    w.write_record(&header)?;
    for (case, counts) in table.cases.iter().zip(&table.counts) {
        let mut row = vec![case.clone()];
        row.extend(counts.iter().map(u64::to_string));
        row.push(counts.iter().sum::<u64>().to_string());
        w.write_record(&row)?;
    }
    let pooled = table.pooled();
    let mut row = vec!["pooled".to_string()];
    row.extend(pooled.iter().map(u64::to_string));
    row.push(pooled.iter().sum::<u64>().to_string());
    w.write_record(&row)?;
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("hl_histogram.csv"))?;
    w.write_record(["safe_choices", "subjects"])?;
    for (s, n) in histogram.iter().enumerate() {
        w.write_record([s.to_string(), n.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("hl_cross_tab.csv"))?;
    w.write_record(["safe_choices", "subjects", "aa_choices", "choices", "aa_share", "aa_percent"])?;
    for g in &cross.groups {
        w.write_record([
            g.safe_choices.to_string(),
            g.subjects.to_string(),
            g.aa_choices.to_string(),
            g.choices.to_string(),
            riskprobe_core::scalar::format_rational(&g.aa_share),
            format!("{:.1}", 100.0 * g.aa_share.approx_f64()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One published figure against the value recomputed from the aggregates.
#[derive(Serialize)]
struct Check {
    name: &'static str,
    published: String,
    computed: String,
    pass: bool,
}

fn check(name: &'static str, published: impl ToString, computed: f64, pass: bool) -> Check {
    Check {
        name,
        published: published.to_string(),
        computed: format!("{computed:.6}"),
        pass,
    }
}

fn reference_checks(r: &ReferenceReport) -> Vec<Check> {
    let p = &r.published;
    let mut checks = Vec::new();
    let names = ["pooled (A,A) %", "pooled (B,A) %", "pooled (A,C) %", "pooled (B,C) %"];
    for (i, name) in names.into_iter().enumerate() {
        let got = 100.0 * r.pooled_shares[i];
        checks.push(check(name, p.pooled_percent[i], got, (got - p.pooled_percent[i]).abs() <= 0.1));
    }
    checks.push(check(
        "uniform patterns p",
        format!("< {}", p.uniform_p_below),
        r.uniform_test.p_value,
        r.uniform_test.p_value < p.uniform_p_below,
    ));
    checks.push(check(
        "homogeneity across cases p",
        p.homogeneity_p,
        r.homogeneity_test.p_value,
        (r.homogeneity_test.p_value - p.homogeneity_p).abs() <= 0.0002,
    ));
    checks.push(check(
        "constant (A,A) share across price-list groups p",
        p.hl_share_p,
        r.hl_share_test.p_value,
        (r.hl_share_test.p_value - p.hl_share_p).abs() <= 0.03,
    ));
    let share = 100.0 * r.share_at_least_5.approx_f64();
    checks.push(check(
        "subjects with at least 5 safe choices %",
        p.share_s_at_least_5_percent,
        share,
        (share - p.share_s_at_least_5_percent).abs() <= 0.05,
    ));
    checks
}

#[derive(Serialize)]
struct ReferenceOutput<'a> {
    report: &'a ReferenceReport,
    checks: Vec<Check>,
}

fn analyze_reference(out: Option<&Path>, tables: Option<&Path>) -> Result<ExitCode> {
    let data = load_reference_dataset()?;
    let report = reference_report(&data)?;
    let checks = reference_checks(&report);
    for c in &checks {
        eprintln!(
            "{} {}: published {}, computed {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.published,
            c.computed
        );
    }
    if let Some(dir) = tables {
        write_tables(dir, &report.pattern_table, &report.hl_histogram, &report.hl_cross_tab)?;
    }
    let ok = checks.iter().all(|c| c.pass);
    write_json(out, &ReferenceOutput { report: &report, checks })?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn serve(addr: SocketAddr, data_dir: PathBuf, seed: Option<u64>, fsync: bool) -> Result<()> {
    let mut config = ServiceConfig::new(&data_dir);
    config.fsync = fsync;
    config.default_seed = seed;
    let service = Service::open(config).with_context(|| format!("opening {}", data_dir.display()))?;
    let sessions = service.session_ids().len();
    let app = riskprobe_session::router(Arc::new(service));

    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!(
            "listening on {} with {} session(s) from {}",
            listener.local_addr()?,
            sessions,
            data_dir.display()
        );
        axum_serve(listener, app).await
    })
}

async fn axum_serve(listener: tokio::net::TcpListener, app: axum::Router) -> Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
