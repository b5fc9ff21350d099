//! Campaign CLI: runs Monte-Carlo drops through the full uplink pipeline
//! and writes per-drop CSV rows, CDF files, and a JSON summary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use xlmimo::harness::{run_campaign, write_results, OutputFormat};
use xlmimo::scenario::{PaMethod, RawConfig};

#[derive(Parser, Debug)]
#[command(
    name = "simulate",
    about = "Uplink XL-MIMO Monte-Carlo campaigns: pilot assignment, subarray \
             selection, MMSE estimation, P-MMSE combining"
)]
struct Args {
    /// TOML scenario file; built-in defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,

    /// Pilot assignment: random, greedy, genie, ga, or all
    #[arg(long)]
    pa: Option<String>,

    /// Number of statistics drops
    #[arg(long)]
    drops: Option<usize>,

    /// Master seed
    #[arg(long)]
    seed: Option<u64>,

    /// UE count override
    #[arg(short = 'k', long)]
    ue_count: Option<usize>,

    /// Subarray count override
    #[arg(short = 'l', long)]
    subarrays: Option<usize>,

    /// Pilot length override
    #[arg(long)]
    tau_p: Option<usize>,

    /// Channel realizations per drop
    #[arg(long)]
    realizations: Option<usize>,

    /// Run one campaign per UE count, e.g. --sweep-k 8,12,20
    #[arg(long, value_delimiter = ',')]
    sweep_k: Option<Vec<usize>>,

    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// csv, json, or both
    #[arg(long, default_value = "both")]
    format: OutputFormat,
}

fn parse_methods(spec: Option<&str>, fallback: PaMethod) -> Result<Vec<PaMethod>, String> {
    match spec {
        None => Ok(vec![fallback]),
        Some("all") => Ok(PaMethod::ALL.to_vec()),
        Some(one) => Ok(vec![one.parse()?]),
    }
}

fn apply_overrides(raw: &mut RawConfig, args: &Args) {
    if let Some(v) = args.drops {
        raw.drops = Some(v);
    }
    if let Some(v) = args.seed {
        raw.master_seed = Some(v);
    }
    if let Some(v) = args.ue_count {
        raw.ue_count = Some(v);
    }
    if let Some(v) = args.subarrays {
        raw.subarrays = Some(v);
    }
    if let Some(v) = args.tau_p {
        raw.tau_p = Some(v);
    }
    if let Some(v) = args.realizations {
        raw.realizations_per_drop = Some(v);
    }
}

fn run() -> Result<ExitCode, Box<dyn std::error::Error>> {
    let args = Args::parse();
    let mut raw = match &args.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    apply_overrides(&mut raw, &args);

    let fallback = raw.pa_method.unwrap_or(PaMethod::Ga);
    let methods = parse_methods(args.pa.as_deref(), fallback)?;

    let mut any_failures = false;

    if let Some(sweep) = &args.sweep_k {
        let mut rows = String::from("k,method,mean_sum_se,mean_per_ue_se,mean_min_se\n");
        for &k in sweep {
            let mut raw_k = raw.clone();
            raw_k.ue_count = Some(k);
            let cfg = raw_k.validate()?;
            eprintln!("sweep: K = {k} ({} drops)", cfg.drops);
            let result = run_campaign(&cfg, &methods)?;
            any_failures |= !result.failures.is_empty();
            for &method in &methods {
                let agg = result.aggregates(method);
                rows.push_str(&format!(
                    "{},{},{:.16e},{:.16e},{:.16e}\n",
                    k,
                    method.name(),
                    agg.mean_sum_se,
                    agg.mean_per_ue_se,
                    agg.mean_min_se
                ));
            }
            let sub = args.out.join(format!("k{k}"));
            write_results(&result, args.format, &sub)?;
            eprintln!("sweep: K = {k} written to {}", sub.display());
        }
        std::fs::create_dir_all(&args.out)?;
        let sweep_path = args.out.join("sweep_se_vs_k.csv");
        std::fs::write(&sweep_path, rows)?;
        eprintln!("sweep summary written to {}", sweep_path.display());
    } else {
        let cfg = raw.validate()?;
        let result = run_campaign(&cfg, &methods)?;
        any_failures = !result.failures.is_empty();
        let written = write_results(&result, args.format, &args.out)?;
        for &method in &methods {
            let agg = result.aggregates(method);
            eprintln!(
                "{}: mean avg NMSE {:.4e}, mean sum SE {:.3} bit/s/Hz, mean min SE {:.3} bit/s/Hz",
                method.name(),
                agg.mean_avg_nmse,
                agg.mean_sum_se,
                agg.mean_min_se
            );
        }
        if !result.failures.is_empty() {
            eprintln!(
                "{} of {} drops failed; seeds recorded in the summary",
                result.failures.len(),
                cfg.drops
            );
        }
        eprintln!("{} files written to {}", written.len(), args.out.display());
    }

    Ok(if any_failures {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
