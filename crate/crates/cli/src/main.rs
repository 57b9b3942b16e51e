//! `descan`: simulate and undo the artifacts of scanning a curved book page.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use descan::{
    column_rms_report, detect_artifacts, estimate_from_whitespace, fit_shape, recover, simulate,
    ArtifactSet, Error, FitResult, Image, Mask, ScanParams, SolveMethod, SolverConfig, SpineSide,
};

use manifest::{FitSummary, RunManifest};

#[derive(Parser)]
#[command(name = "descan", version, about = "Simulate and restore curved-page scans")]
struct Cli {
    /// Write the run manifest here instead of standard error.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply distortion, blur and darkening to a flat page image.
    Simulate {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        artifacts: ArtifactArgs,
    },
    /// Invert the artifacts of a scan with known parameters.
    Recover {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Fit page length and spine angle to a CSV of `x,z` profile points.
    FitShape {
        points: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Fit shape and lamp distance to the darkening of whitespace.
    Estimate {
        input: PathBuf,
        /// Image whose light pixels mark whitespace.
        mask: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Compute spectral and correlation artifact detectors.
    Detect { input: PathBuf, output: PathBuf },
    /// Per-column RMS difference between two images, as CSV.
    Report {
        original: PathBuf,
        recovered: PathBuf,
        output: PathBuf,
    },
}

/// A params file plus per-key overrides.
#[derive(Args, Default)]
struct ParamArgs {
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
    #[arg(long, value_name = "left|right")]
    spine: Option<String>,
    #[arg(long = "l-px")]
    l: Option<f64>,
    #[arg(long = "theta0-rad")]
    theta0: Option<f64>,
    #[arg(long)]
    sigma_slope: Option<f64>,
    #[arg(long = "d-px")]
    d: Option<f64>,
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long)]
    s_max: Option<f64>,
}

#[derive(Args)]
struct ArtifactArgs {
    /// Comma list drawn from distort, blur, darken.
    #[arg(long, default_value = "distort,blur,darken")]
    artifacts: String,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    deblur_reg: Option<f64>,
    #[arg(long)]
    deblur_tol: Option<f64>,
    #[arg(long)]
    deblur_maxiter: Option<usize>,
    /// iterative-normal-equations or sparse-direct.
    #[arg(long)]
    deblur_method: Option<String>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. } | Error::Singular(_) => 3,
            Error::Estimation { .. } | Error::Calibration(_) | Error::Detector(_) => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

impl ParamArgs {
    /// The params file, or a flat page when `required` is false and none was
    /// given, with overrides applied and validated.
    fn resolve(&self, required: bool) -> Result<ScanParams, Failure> {
        let mut p = match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
                let p: ScanParams = serde_json::from_str(&text)
                    .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
                p
            }
            None if required => return Err(input_error("--params is required")),
            None => ScanParams::flat(),
        };
        if let Some(s) = &self.spine {
            p.spine_side = s.parse::<SpineSide>()?;
        }
        let overrides = [
            (&mut p.l, self.l),
            (&mut p.theta0, self.theta0),
            (&mut p.sigma_slope, self.sigma_slope),
            (&mut p.d, self.d),
            (&mut p.s_max, self.s_max),
        ];
        for (slot, value) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        if let Some(a) = self.alpha {
            p.alpha = a;
        }
        p.validate()?;
        Ok(p)
    }
}

impl SolverArgs {
    fn resolve(&self) -> Result<SolverConfig, Failure> {
        let mut cfg = SolverConfig::default();
        if let Some(v) = self.deblur_reg {
            cfg.regularization = v;
        }
        if let Some(v) = self.deblur_tol {
            cfg.tolerance = v;
        }
        if let Some(v) = self.deblur_maxiter {
            cfg.max_iterations = v;
        }
        if let Some(m) = &self.deblur_method {
            cfg.method = m.parse::<SolveMethod>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, bytes).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(path, text)
}

/// Reads `x,z` pairs. A leading non-numeric row is taken as a header and
/// lines starting with `#` are ignored.
fn read_points(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let parsed = (record.len() >= 2)
            .then(|| Some((record[0].parse::<f64>().ok()?, record[1].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some(pt) => points.push(pt),
            None if i == 0 => continue,
            None => {
                return Err(input_error(format!(
                    "{}: record {} is not an `x,z` pair of numbers",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(points)
}

fn fitted_params(base: &ScanParams, fit: &FitResult) -> Result<ScanParams, Failure> {
    if fit.params.l_px.is_none() {
        return Err(Failure {
            code: 4,
            message: fit
                .note
                .clone()
                .unwrap_or_else(|| "fit determined no parameters".into()),
        });
    }
    Ok(fit.params.apply_to(base))
}

fn run(command: &Command, m: &mut RunManifest) -> CmdResult {
    match command {
        Command::Simulate {
            input,
            output,
            params,
            artifacts,
        } => {
            m.record_io(&[input], &[output]);
            let p = params.resolve(true)?;
            let set: ArtifactSet = artifacts.artifacts.parse()?;
            m.params = Some(p);
            m.artifacts = Some(set.to_string());
            let img = Image::load(input)?;
            simulate(&img, &p, set)?.save(output)?;
        }
        Command::Recover {
            input,
            output,
            params,
            artifacts,
            solver,
        } => {
            m.record_io(&[input], &[output]);
            let p = params.resolve(true)?;
            let set: ArtifactSet = artifacts.artifacts.parse()?;
            let cfg = solver.resolve()?;
            m.params = Some(p);
            m.artifacts = Some(set.to_string());
            m.solver = Some(cfg);
            let img = Image::load(input)?;
            recover(&img, &p, &cfg, set)?.save(output)?;
        }
        Command::FitShape {
            points,
            output,
            params,
        } => {
            m.record_io(&[points], &[output]);
            let base = params.resolve(false)?;
            let fit = fit_shape(&read_points(points)?)?;
            m.fit = Some(FitSummary::from(&fit));
            let p = fitted_params(&base, &fit)?;
            m.params = Some(p);
            write_json(output, &p)?;
        }
        Command::Estimate {
            input,
            mask,
            output,
            params,
        } => {
            m.record_io(&[input, mask], &[output]);
            let base = params.resolve(false)?;
            let mut scan = Image::load(input)?;
            let mut bits = Mask::from_image(&Image::load(mask)?);
            if base.spine_side == SpineSide::Right {
                scan = scan.mirror_horizontal();
                bits = bits.mirror_horizontal();
            }
            let fit = estimate_from_whitespace(&scan, &bits, base.alpha)?;
            m.fit = Some(FitSummary::from(&fit));
            let p = fitted_params(&base, &fit)?;
            m.params = Some(p);
            write_json(output, &p)?;
        }
        Command::Detect { input, output } => {
            m.record_io(&[input], &[output]);
            let report = detect_artifacts(&Image::load(input)?)?;
            write_json(output, &report)?;
        }
        Command::Report {
            original,
            recovered,
            output,
        } => {
            m.record_io(&[original, recovered], &[output]);
            let rep = column_rms_report(&Image::load(original)?, &Image::load(recovered)?)?;
            let mut csv = String::from("column,rms\n");
            for (c, v) in rep.per_column.iter().enumerate() {
                csv.push_str(&format!("{c},{v}\n"));
            }
            write_file(output, csv)?;
            m.global_rms = Some(rep.global);
        }
    }
    Ok(())
}

/// Sizes the worker pool from `DESCAN_THREADS` when set.
fn configure_threads() -> Result<Option<usize>, Failure> {
    let Ok(raw) = std::env::var("DESCAN_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| input_error(format!("DESCAN_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input_error(format!("cannot size thread pool: {e}")))?;
    Ok(Some(n))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let mut m = RunManifest::new(manifest::command_name(&cli.command));
    let outcome = configure_threads().and_then(|threads| {
        m.threads = threads;
        run(&cli.command, &mut m)
    });
    let code = match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("descan: {}", f.message);
            m.error = Some(f.message);
            f.code
        }
    };
    m.exit_status = code;
    m.elapsed_ms = start.elapsed().as_millis();
    let code = match m.emit(cli.manifest.as_deref()) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("descan: {e}");
            if code == 0 {
                2
            } else {
                code
            }
        }
    };
    ExitCode::from(code)
}
