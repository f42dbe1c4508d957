//! Command-line driver: synthetic data generation, certified dictionary
//! learning, certificate checks, the convex oracle, denoising and PSNR.
//!
//! Exit codes: 0 success (and certified, for `certify`), 1 usage error,
//! 2 runtime or numerical error, 3 certificate not optimal.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use sepdl_core::certificate::{check, first_order_residual, write_report_row, Verdict, REPORT_CSV_HEADER};
use sepdl_core::dmri::{denoise, psnr, read_raw_volume};
use sepdl_core::objective::objective;
use sepdl_core::oracle::{explicit_factorization, global_optimum, write_oracle_csv};
use sepdl_core::scalar::fmt17;
use sepdl_core::solver::{solve, write_run_csv};
use sepdl_core::synth::{generate, write_atoms_csv};
use sepdl_core::tensor::{read_sdt1_file, write_sdt1_file, SDT1_MAGIC};
use sepdl_core::{CertConfig, Model, Real, SolverConfig, SyntheticSpec, Tensor3, VolumeSlice2D};

#[derive(Parser)]
#[command(name = "sepdl", version, about = "Separable dictionary learning with certified global optimality")]
struct Cli {
    /// Cap on worker threads. Execution is deterministic at any value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training tensor plus a ground-truth atoms CSV.
    Synth {
        /// Output SDT1 file; atoms go to `<out>.atoms.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        g: usize,
        #[arg(long)]
        v: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 0.003)]
        noise_var: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learn a certified factorization and write the model and round log.
    Learn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        max_rounds: usize,
        /// Directory receiving gamma.sdt1, psi.sdt1 and coef.sdt1.
        #[arg(long)]
        out_model: PathBuf,
        /// Per-round CSV log.
        #[arg(long)]
        log: PathBuf,
        /// Also compute the convex oracle optimum and log the gap per round.
        #[arg(long)]
        oracle_gap: bool,
    },
    /// Evaluate the global-optimality certificate of a saved model.
    Certify {
        #[arg(long)]
        data: PathBuf,
        /// Model directory written by `learn`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lambda: f64,
    },
    /// Exact global optimum of the convex relaxation, slice by slice.
    Oracle {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Summary CSV (per-slice ranks and objective contributions).
        #[arg(long)]
        out: PathBuf,
        /// Also dump the explicit compact factorization to `<out>.model/`.
        #[arg(long)]
        factorize: bool,
    },
    /// Patch-based sparse-coding denoising with a saved model.
    Denoise {
        /// Noisy volume: SDT1, or raw little-endian f64 with dims flags.
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        patch: usize,
        #[arg(long)]
        stride: usize,
        /// Denoised volume (SDT1).
        #[arg(long)]
        out: PathBuf,
        /// Clean reference; prints PSNR before and after when given.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Measurements per pixel, for raw input.
        #[arg(long)]
        g: Option<usize>,
        /// Image width, for raw input.
        #[arg(long)]
        width: Option<usize>,
        /// Image height, for raw input.
        #[arg(long)]
        height: Option<usize>,
    },
    /// PSNR between two volumes stored as SDT1.
    Psnr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let line = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("error: {line}");
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth { out, g, v, t, noise_var, seed } => {
            let mut spec = SyntheticSpec::new(g, v, t, seed);
            spec.noise_var = noise_var;
            let data = generate(&spec)?;
            write_sdt1_file(&out, &data.tensor)?;
            let atoms_path = sibling(&out, ".atoms.csv");
            let mut f = BufWriter::new(File::create(&atoms_path)?);
            write_atoms_csv(&mut f, &data.gamma_atoms, &data.psi_atoms)?;
            f.flush()?;
            println!("seed={seed} wrote {} and {}", out.display(), atoms_path.display());
            Ok(0)
        }
        Command::Learn { data, lambda, seed, max_rounds, out_model, log, oracle_gap } => {
            let s: Tensor3 = read_sdt1_file(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut cfg = SolverConfig::new(lambda);
            cfg.init_seed = seed;
            cfg.max_outer_rounds = max_rounds;
            let (model, mut record) = solve(&s, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
            if oracle_gap {
                record.oracle_objective = Some(global_optimum(&s, lambda)?.objective_star);
            }
            model.save_dir(&out_model)?;
            let mut f = BufWriter::new(File::create(&log)?);
            writeln!(f, "# sepdl learn seed={seed} lambda={}", fmt17(lambda))?;
            write_run_csv(&mut f, &record)?;
            f.flush()?;
            let last = record.rounds.last().expect("at least one round");
            println!(
                "certified={} rounds={} objective={} r1={} r2={}",
                record.certified,
                record.rounds.len(),
                fmt17(last.objective),
                last.r1,
                last.r2
            );
            Ok(0)
        }
        Command::Certify { data, model, lambda } => {
            let s: Tensor3 = read_sdt1_file(&data)?;
            let m = Model::load_dir(&model)?;
            let cfg = CertConfig::default();
            let report = check(&s, &m, lambda, &cfg)?;
            let stationarity = first_order_residual(&s, &m, lambda)?;
            let mut row = Vec::new();
            write_report_row(&mut row, 0, &report)?;
            print!("{}\n{}", REPORT_CSV_HEADER, String::from_utf8(row)?);
            // certified global optimality needs the dual bound and the
            // first-order identity to hold together
            let optimal = report.verdict == Verdict::GlobalOptimal && stationarity <= cfg.cert_tol;
            if optimal {
                Ok(0)
            } else {
                eprintln!(
                    "not globally optimal: verdict={} first_order_residual={}",
                    report.verdict,
                    fmt17(stationarity)
                );
                Ok(3)
            }
        }
        Command::Oracle { data, lambda, out, factorize } => {
            let s: Tensor3 = read_sdt1_file(&data)?;
            let sol = global_optimum(&s, lambda)?;
            let mut f = BufWriter::new(File::create(&out)?);
            write_oracle_csv(&mut f, &sol)?;
            f.flush()?;
            if factorize {
                let m = explicit_factorization(&s, lambda, true)?;
                let dir = sibling(&out, ".model");
                m.save_dir(&dir)?;
                let achieved = objective(&s, &m, lambda)?;
                println!("factorization_objective={}", fmt17(achieved));
            }
            println!("objective_star={} r_tilde={}", fmt17(sol.objective_star), sol.r_tilde);
            Ok(0)
        }
        Command::Denoise { noisy, model, lambda, patch, stride, out, reference, g, width, height } => {
            let noisy_vol = load_volume(&noisy, g, width, height)?;
            let m = Model::load_dir(&model)?;
            let denoised = denoise(&noisy_vol, m.gamma(), m.psi(), lambda, patch, stride)?;
            write_sdt1_file(&out, &denoised.to_tensor())?;
            if let Some(reference) = reference {
                let reference = load_volume(&reference, g, width, height)?;
                let before = psnr(&reference, &noisy_vol)?;
                let after = psnr(&reference, &denoised)?;
                println!("psnr_noisy={} psnr_denoised={}", fmt17(before), fmt17(after));
            }
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Psnr { a, b } => {
            let va = load_volume(&a, None, None, None)?;
            let vb = load_volume(&b, None, None, None)?;
            println!("{}", fmt17(psnr(&va, &vb)?));
            Ok(0)
        }
    }
}

/// Derive a sidecar path by appending a suffix to the file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Load a volume from an SDT1 container, or from raw little-endian f64 when
/// the dims flags are supplied.
fn load_volume(path: &Path, g: Option<usize>, width: Option<usize>, height: Option<usize>) -> Result<VolumeSlice2D> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let is_sdt1 = f.read_exact(&mut magic).is_ok() && magic == SDT1_MAGIC;
    drop(f);
    if is_sdt1 {
        let t: Tensor3 = read_sdt1_file(path)?;
        return Ok(VolumeSlice2D::from_tensor(&t));
    }
    match (g, width, height) {
        (Some(g), Some(w), Some(h)) => Ok(read_raw_volume::<Real>(path, g, w, h)?),
        _ => bail!(
            "{} is not an SDT1 container; raw input needs --g, --width and --height",
            path.display()
        ),
    }
}
