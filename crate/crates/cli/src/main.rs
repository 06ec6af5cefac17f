use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mrlod_cli::{report_exit_code, run_to_dir, CliError, Experiment, RawConfig};

/// Runs one multi-resolution LOD experiment and writes `<experiment>.csv`
/// and `<experiment>.meta` to the output directory.
///
/// Any other `--key value` pair overrides the configuration file.
#[derive(Parser, Debug)]
#[command(name = "mrlod", version)]
struct Args {
    /// convergence | stabilization | varcoeff | scattering | decay
    experiment: String,
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Run independent rows concurrently
    #[arg(long)]
    parallel: bool,
    #[arg(long = "set", value_name = "KEY=VALUE", hide = true)]
    set: Vec<String>,
}

const OWN_FLAGS: &[&str] = &["--config", "--out", "--parallel", "--set", "--help", "-h", "--version", "-V"];

/// Rewrites free-form `--key value` overrides into `--set key=value`.
fn normalize_args(argv: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = argv.into_iter().peekable();
    while let Some(a) = it.next() {
        let known = OWN_FLAGS.iter().any(|f| a == *f || a.starts_with(&format!("{f}=")));
        match a.strip_prefix("--") {
            Some(key) if !known && !key.is_empty() => {
                let (k, v) = match key.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => (key.to_string(), it.next().unwrap_or_default()),
                };
                out.push("--set".into());
                out.push(format!("{k}={v}"));
            }
            _ => out.push(a),
        }
    }
    out
}

fn run(args: Args) -> Result<i32, CliError> {
    let experiment: Experiment = args.experiment.parse()?;
    let file = match &args.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    let mut overrides = RawConfig::default();
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{kv}` is not key=value")))?;
        overrides.set(k, v);
    }
    let report = run_to_dir(experiment, &file, &overrides, &args.out, args.parallel)?;
    eprintln!(
        "{experiment}: {} rows, {} failed -> {}",
        report.table.rows.len(),
        report.failures,
        args.out.display()
    );
    Ok(report_exit_code(&report))
}

fn main() -> ExitCode {
    let args = Args::parse_from(normalize_args(std::env::args()));
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("mrlod: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_rewritten() {
        let argv = ["mrlod", "convergence", "--kappa", "2", "--out", "o", "--m=3", "--parallel"].map(String::from);
        assert_eq!(
            normalize_args(argv),
            ["mrlod", "convergence", "--set", "kappa=2", "--out", "o", "--set", "m=3", "--parallel"]
        );
    }
}
