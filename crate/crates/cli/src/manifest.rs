use std::fs;
use std::path::{Path, PathBuf};

use descan::{FitResult, FittedParams, ScanParams, SolverConfig};
use serde::Serialize;

use crate::Command;

/// Fit outcome without the per-sample residuals.
#[derive(Serialize)]
pub struct FitSummary {
    pub fitted: FittedParams,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        FitSummary {
            fitted: f.params,
            residual_rms: f.residual_rms,
            converged: f.converged,
            iterations: f.iterations,
            gradient_norm: f.gradient_norm,
            note: f.note.clone(),
        }
    }
}

/// One record per run, written as a single JSON line.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub params: Option<ScanParams>,
    pub solver: Option<SolverConfig>,
    pub artifacts: Option<String>,
    /// Fits start from a fixed grid, so no random seed is involved.
    pub multistart: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_rms: Option<f64>,
    pub threads: Option<usize>,
    pub exit_status: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u128,
}

pub fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::Recover { .. } => "recover",
        Command::FitShape { .. } => "fit-shape",
        Command::Estimate { .. } => "estimate",
        Command::Detect { .. } => "detect",
        Command::Report { .. } => "report",
    }
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        RunManifest {
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
            params: None,
            solver: None,
            artifacts: None,
            multistart: matches!(command, "fit-shape" | "estimate").then_some("grid-5x5"),
            fit: None,
            global_rms: None,
            threads: None,
            exit_status: 0,
            error: None,
            elapsed_ms: 0,
        }
    }

    pub fn record_io(&mut self, inputs: &[&PathBuf], outputs: &[&PathBuf]) {
        self.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
        self.outputs = outputs.iter().map(|p| p.to_path_buf()).collect();
    }

    pub fn emit(&self, path: Option<&Path>) -> Result<(), String> {
        let line = serde_json::to_string(self).expect("manifest serializes");
        match path {
            Some(p) => fs::write(p, line + "\n").map_err(|e| format!("{}: {e}", p.display())),
            None => {
                eprintln!("{line}");
                Ok(())
            }
        }
    }
}
