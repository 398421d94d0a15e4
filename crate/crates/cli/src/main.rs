use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::json;

use slrep::charmod::{weyl_orbit_sl3, Sl3Params};
use slrep::flagdecomp::{decompose, BlockPattern, KFactor, Route, UnipotentPoint};
use slrep::harness::{list_catalogue, run, SuiteConfig};
use slrep::matcore::{Field, GroupElement, Mat};

#[derive(Parser)]
#[command(name = "slrep", version, about = "Operator models of unitary representations of SL(2), SL(3), SL(4) and their checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Sl2r,
    Sl2c,
    Sl3r,
    Sl3c,
    Sl4c,
}

impl Group {
    fn n_field(self) -> (usize, Field) {
        match self {
            Group::Sl2r => (2, Field::Real),
            Group::Sl2c => (2, Field::Complex),
            Group::Sl3r => (3, Field::Real),
            Group::Sl3c => (3, Field::Complex),
            Group::Sl4c => (4, Field::Complex),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the 21-series catalogue as JSON.
    Catalogue,
    /// Run the suites of a configuration file; exit status 0 iff all pass.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; defaults to the configuration's output_path, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose z·g = k·(z·ḡ) at one point.
    Decompose {
        #[arg(long, value_enum)]
        group: Group,
        /// Block sizes, e.g. `1,1,1` or `2,1`.
        #[arg(long)]
        pattern: String,
        /// Rows separated by `;`, entries by `,` (complex entries as `1+2i`), or a file holding that text.
        #[arg(long)]
        matrix: String,
        /// Unipotent coordinates, comma separated, row by row below the diagonal blocks.
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        /// Use the elimination oracle instead of the closed form.
        #[arg(long)]
        oracle: bool,
    },
    /// Weyl orbit of SL(3) principal-series parameters.
    Orbit {
        /// `m2,m3,rho2,rho3`.
        #[arg(long, allow_hyphen_values = true)]
        params: String,
        /// Reduce the integer parts mod 2 (real group).
        #[arg(long)]
        real: bool,
    },
}

fn parse_scalar(s: &str) -> Result<Complex64> {
    let t = s.trim().replace(' ', "");
    t.parse::<Complex64>().with_context(|| format!("bad number '{s}'"))
}

fn parse_list(s: &str) -> Result<Vec<Complex64>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(parse_scalar).collect()
}

fn parse_matrix(arg: &str) -> Result<Mat> {
    let text = match std::fs::read_to_string(arg) {
        Ok(t) => t,
        Err(_) => arg.to_string(),
    };
    let rows: Vec<Vec<Complex64>> = text
        .split([';', '\n'])
        .filter(|r| !r.trim().is_empty())
        .map(parse_list)
        .collect::<Result<_>>()?;
    Ok(Mat::from_rows(&rows)?)
}

fn rows_json(m: &Mat) -> serde_json::Value {
    json!(m.rows().iter().map(|r| r.iter().map(|c| format!("{c}")).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn decompose_cmd(group: Group, pattern: &str, matrix: &str, point: &str, oracle: bool) -> Result<serde_json::Value> {
    let (n, field) = group.n_field();
    let g = GroupElement::new(parse_matrix(matrix)?, field)?;
    if g.n() != n {
        bail!("matrix is {}×{}, expected {n}×{n}", g.n(), g.n());
    }
    let pattern = BlockPattern::parse(pattern, field)?;
    let z = UnipotentPoint::new(pattern, parse_list(point)?)?;
    let d = decompose(&z, &g, if oracle { Route::Oracle } else { Route::ClosedForm })?;
    let k = match &d.k {
        KFactor::Full(k) => rows_json(k.mat()),
        KFactor::BlockDets(_) => serde_json::Value::Null,
    };
    Ok(json!({
        "k": k,
        "block_dets": d.k.block_dets().iter().map(|c| format!("{c}")).collect::<Vec<_>>(),
        "z_out": d.z_out.coords().iter().map(|c| format!("{c}")).collect::<Vec<_>>(),
        "genericity_margin": d.genericity_margin,
    }))
}

fn orbit_cmd(params: &str, real: bool) -> Result<serde_json::Value> {
    let v: Vec<&str> = params.split(',').map(str::trim).collect();
    if v.len() != 4 {
        bail!("expected m2,m3,rho2,rho3");
    }
    let p = Sl3Params::new(v[0].parse()?, v[1].parse()?, v[2].parse()?, v[3].parse()?);
    Ok(serde_json::to_value(weyl_orbit_sl3(p, real))?)
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Catalogue => emit(&serde_json::to_string_pretty(&list_catalogue())?)?,
        Command::Verify { config, seed, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = SuiteConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run(&cfg)?;
            for r in &report.reports {
                let err = r.measured_max_error.map_or("n/a".to_string(), |e| format!("{e:.3e}"));
                eprintln!("{:?} {} (max error {err}, tolerance {:.1e})", r.status, r.suite_name, r.tolerance);
            }
            let body = serde_json::to_string_pretty(&report)?;
            match out.or(cfg.output_path.as_ref().map(PathBuf::from)) {
                Some(path) => std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?,
                None => emit(&body)?,
            }
            return Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Decompose { group, pattern, matrix, point, oracle } => {
            emit(&serde_json::to_string_pretty(&decompose_cmd(group, &pattern, &matrix, &point, oracle)?)?)?
        }
        Command::Orbit { params, real } => emit(&serde_json::to_string_pretty(&orbit_cmd(&params, real)?)?)?,
    }
    Ok(ExitCode::SUCCESS)
}
