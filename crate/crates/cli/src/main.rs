//! `cbfx` — explicit safety-filter toolkit.
//!
//! Subcommands: `partition` (grid classification into critical regions),
//! `eval` (point evaluation of the explicit law), `verify` (randomized
//! comparison against the brute-force oracle) and `simulate` (closed-loop
//! run with barrier monitoring).
//!
//! Exit codes: 0 success; 1 simulate found a barrier violation; 2 config
//! error; 3 numerical failures on more than 0.1% of grid cells; 4 eval hit an
//! infeasible state in standard mode; 5 verify found a counterexample;
//! 6 simulate stopped on a controller failure.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use cbfx_core::adaptive::{self, AdOutcome};
use cbfx_core::config;
use cbfx_core::explicit::{self, SolveOutcome};
use cbfx_core::model::ProblemSpec;
use cbfx_core::oracle;
use cbfx_core::partition::{
    boundary_refined_census, classify_grid, region_census, write_partition_csv, Mode, RegionLabel,
};
use cbfx_core::sim::{self, SimMode, SimStatus};
use cbfx_core::tol;

#[derive(Parser)]
#[command(name = "cbfx", version, about = "Explicit safety-filter synthesis and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModeFlags {
    /// Solve the standard filter program (default).
    #[arg(long, conflicts_with = "adaptive")]
    standard: bool,
    /// Solve the adaptive (relaxation-tuned) program.
    #[arg(long)]
    adaptive: bool,
}

impl ModeFlags {
    fn mode(&self) -> Mode {
        if self.adaptive {
            Mode::Adaptive
        } else {
            Mode::Standard
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Problem file (JSON).
    problem: PathBuf,
    /// Override the relaxation penalty from the problem file.
    #[arg(long = "p-s", value_name = "P_S")]
    p_s: Option<f64>,
    /// Output directory, created if absent.
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Partition the exploration box into critical regions on a grid.
    Partition {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mode: ModeFlags,
        /// Grid points per axis.
        #[arg(short, long, default_value_t = 301)]
        resolution: usize,
    },
    /// Evaluate the explicit law at one state and print a JSON record.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mode: ModeFlags,
        /// State, comma-separated (e.g. `-x 0,1.5`).
        #[arg(short = 'x', value_name = "STATE", allow_hyphen_values = true)]
        state: String,
    },
    /// Compare explicit solutions against the brute-force oracle at random
    /// states, in both modes.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of sampled states.
        #[arg(short = 'n', long, default_value_t = 5000)]
        samples: usize,
        /// RNG seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Largest allowed control deviation from the oracle.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Simulate the closed loop and report the minimum barrier value.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mode: ModeFlags,
        /// Apply the nominal control unfiltered.
        #[arg(long, conflicts_with_all = ["standard", "adaptive"])]
        nominal: bool,
        /// Start state, comma-separated.
        #[arg(short = 'x', value_name = "STATE", allow_hyphen_values = true)]
        state: String,
        /// Simulation horizon in seconds.
        #[arg(long = "t-final", default_value_t = 10.0)]
        t_final: f64,
        /// Integration step in seconds.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Partition { common, mode, resolution } => cmd_partition(common, mode, resolution),
        Command::Eval { common, mode, state } => cmd_eval(common, mode, &state),
        Command::Verify { common, samples, seed, tol } => cmd_verify(common, samples, seed, tol),
        Command::Simulate { common, mode, nominal, state, t_final, step } => {
            cmd_simulate(common, mode, nominal, &state, t_final, step)
        }
    };
    ExitCode::from(code)
}

fn load_spec(common: &CommonArgs) -> Result<ProblemSpec, u8> {
    let mut spec = config::load_problem(&common.problem).map_err(|e| {
        eprintln!("error: {e}");
        2u8
    })?;
    if let Some(p_s) = common.p_s {
        if !(p_s > 0.0) {
            eprintln!("error: --p-s must be positive");
            return Err(2);
        }
        spec = spec.with_p_s(p_s);
    }
    Ok(spec)
}

fn ensure_out_dir(dir: &Path) -> Result<(), u8> {
    fs::create_dir_all(dir).map_err(|e| {
        eprintln!("error: cannot create output directory {}: {e}", dir.display());
        2u8
    })
}

fn parse_state(text: &str, dim: usize) -> Result<DVector<f64>, u8> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match parts {
        Ok(v) if v.len() == dim => Ok(DVector::from_vec(v)),
        Ok(v) => {
            eprintln!("error: state has {} coordinates, expected {dim}", v.len());
            Err(2)
        }
        Err(e) => {
            eprintln!("error: cannot parse state '{text}': {e}");
            Err(2)
        }
    }
}

fn cmd_partition(common: CommonArgs, mode: ModeFlags, resolution: usize) -> u8 {
    let spec = match load_spec(&common) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Err(code) = ensure_out_dir(&common.out_dir) {
        return code;
    }
    let mode = mode.mode();
    let n = spec.state_dim();
    let gc = match classify_grid(&spec, mode, &vec![resolution; n]) {
        Ok(gc) => gc,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };

    let csv_path = common.out_dir.join("partition.csv");
    let result = File::create(&csv_path).and_then(|f| {
        let mut w = BufWriter::new(f);
        write_partition_csv(&gc, &mut w)
    });
    if let Err(e) = result {
        eprintln!("error: cannot write {}: {e}", csv_path.display());
        return 2;
    }

    let census = region_census(&gc);
    let refined = boundary_refined_census(&spec, &gc, 4, 0.1);
    let census_path = common.out_dir.join("census.txt");
    let mut text = format!("mode: {mode}\ngrid: {resolution}^{n}\n\n");
    for (label, count) in &census {
        text += &format!("{label}: {count}\n");
    }
    text += "\nboundary refinement (4x, band 0.1):\n";
    for (label, count) in &refined {
        text += &format!("{label}: {count}\n");
    }
    if let Err(e) = fs::write(&census_path, &text) {
        eprintln!("error: cannot write {}: {e}", census_path.display());
        return 2;
    }
    print!("{text}");

    let bad = gc
        .cells
        .iter()
        .filter(|c| {
            matches!(c.label, RegionLabel::Failed)
                || c.kkt_residual.map(|r| r > tol::KKT).unwrap_or(false)
        })
        .count();
    if (bad as f64) > 0.001 * gc.cells.len() as f64 {
        eprintln!("error: numerical failures on {bad} of {} cells", gc.cells.len());
        return 3;
    }
    println!(
        "wrote {} and {}",
        csv_path.display(),
        census_path.display()
    );
    0
}

fn cmd_eval(common: CommonArgs, mode: ModeFlags, state: &str) -> u8 {
    let spec = match load_spec(&common) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let x = match parse_state(state, spec.state_dim()) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let b_val = spec.barrier.value(&x);
    let xs: Vec<f64> = x.iter().copied().collect();

    match mode.mode() {
        Mode::Standard => match explicit::classify_and_solve(&spec, &x) {
            Ok(SolveOutcome::Solved(sol)) => {
                let residual = explicit::kkt_residual(&spec, &x, &sol);
                let record = json!({
                    "mode": "standard",
                    "x": xs,
                    "feasible": true,
                    "case": sol.case_tag.to_string(),
                    "active_set": sol.active_set.compact(),
                    "u": sol.u_star.iter().copied().collect::<Vec<f64>>(),
                    "lambda": sol.lambda,
                    "mu": sol.mu.iter().copied().collect::<Vec<f64>>(),
                    "s": sol.s_star,
                    "B": b_val,
                    "kkt_residual": residual,
                });
                println!("{record}");
                0
            }
            Ok(SolveOutcome::Infeasible(cert)) => {
                let record = json!({
                    "mode": "standard",
                    "x": xs,
                    "feasible": false,
                    "case": "infeasible",
                    "reason": cert.reason,
                    "max_slack_over_limits": cert.max_slack,
                    "B": b_val,
                });
                println!("{record}");
                4
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        Mode::Adaptive => match adaptive::classify_and_solve(&spec, &x) {
            Ok(AdOutcome::Solved(sol)) => {
                let residual = adaptive::kkt_residual(&spec, &x, &sol);
                let record = json!({
                    "mode": "adaptive",
                    "x": xs,
                    "feasible": true,
                    "case": sol.base.case_tag.to_string(),
                    "active_set": sol.base.active_set.compact(),
                    "u": sol.base.u_star.iter().copied().collect::<Vec<f64>>(),
                    "lambda": sol.base.lambda,
                    "mu": sol.base.mu.iter().copied().collect::<Vec<f64>>(),
                    "s": sol.base.s_star,
                    "near_degenerate": sol.near_degenerate,
                    "outside_safe_set": sol.outside_safe_set,
                    "B": b_val,
                    "kkt_residual": residual,
                });
                println!("{record}");
                0
            }
            Ok(AdOutcome::DegenerateInfeasible(cert)) => {
                let record = json!({
                    "mode": "adaptive",
                    "x": xs,
                    "feasible": false,
                    "case": "infeasible",
                    "reason": cert.reason,
                    "max_slack_over_limits": cert.max_slack,
                    "B": b_val,
                });
                println!("{record}");
                4
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
    }
}

fn cmd_verify(common: CommonArgs, samples: usize, seed: u64, tol: f64) -> u8 {
    let spec = match load_spec(&common) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Err(code) = ensure_out_dir(&common.out_dir) {
        return code;
    }
    let n = spec.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut max_dev_standard: f64 = 0.0;
    let mut max_dev_adaptive: f64 = 0.0;
    let mut max_dev_s: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    let mut standard_infeasible = 0usize;
    let mut first_failure: Option<String> = None;

    for _ in 0..samples {
        let x = DVector::from_fn(n, |i, _| {
            rng.random_range(spec.domain.min[i]..spec.domain.max[i])
        });

        // standard mode
        let exp = explicit::classify_and_solve(&spec, &x);
        let orc = oracle::solve_standard(&spec, &x);
        match (exp, orc) {
            (Ok(SolveOutcome::Solved(e)), Ok(SolveOutcome::Solved(o))) => {
                let dev = (&e.u_star - &o.u_star).amax();
                max_dev_standard = max_dev_standard.max(dev);
                let res = explicit::kkt_residual(&spec, &x, &e);
                max_residual = max_residual.max(res);
                if (dev > tol || res > tol::KKT) && first_failure.is_none() {
                    first_failure =
                        Some(format!("standard deviation {dev:.3e} residual {res:.3e} at {x:?}"));
                }
            }
            (Ok(SolveOutcome::Infeasible(_)), Ok(SolveOutcome::Infeasible(_))) => {
                standard_infeasible += 1;
            }
            (e, o) => {
                if first_failure.is_none() {
                    first_failure = Some(format!("standard outcome mismatch at {x:?}: {e:?} vs {o:?}"));
                }
            }
        }

        // adaptive mode
        let exp = adaptive::classify_and_solve(&spec, &x);
        let orc = oracle::solve_adaptive(&spec, &x);
        match (exp, orc) {
            (Ok(AdOutcome::Solved(e)), Ok(AdOutcome::Solved(o))) => {
                let dev = (e.u_star() - o.u_star()).amax();
                max_dev_adaptive = max_dev_adaptive.max(dev);
                max_dev_s = max_dev_s.max((e.s_star() - o.s_star()).abs());
                let res = adaptive::kkt_residual(&spec, &x, &e);
                max_residual = max_residual.max(res);
                if (dev > tol || res > tol::KKT) && first_failure.is_none() {
                    first_failure =
                        Some(format!("adaptive deviation {dev:.3e} residual {res:.3e} at {x:?}"));
                }
            }
            (Ok(AdOutcome::DegenerateInfeasible(_)), Ok(AdOutcome::DegenerateInfeasible(_))) => {}
            (e, o) => {
                if first_failure.is_none() {
                    first_failure = Some(format!("adaptive outcome mismatch at {x:?}: {e:?} vs {o:?}"));
                }
            }
        }
    }

    let report = format!(
        "samples: {samples} (seed {seed})\n\
         standard: max |u_explicit - u_oracle|_inf = {max_dev_standard:.3e}\n\
         adaptive: max |u_explicit - u_oracle|_inf = {max_dev_adaptive:.3e}\n\
         adaptive: max |s_explicit - s_oracle|     = {max_dev_s:.3e}\n\
         max KKT residual = {max_residual:.3e}\n\
         standard-infeasible samples: {standard_infeasible}\n\
         control tolerance: {tol:.3e}, residual tolerance: {:.3e}\n\
         result: {}\n",
        tol::KKT,
        if first_failure.is_none() { "PASS" } else { "FAIL" },
    );
    let report_path = common.out_dir.join("verify_report.txt");
    if let Err(e) = fs::write(&report_path, &report) {
        eprintln!("error: cannot write {}: {e}", report_path.display());
        return 2;
    }
    print!("{report}");

    if let Some(counterexample) = first_failure {
        eprintln!("counterexample: {counterexample}");
        return 5;
    }
    0
}

fn cmd_simulate(
    common: CommonArgs,
    mode: ModeFlags,
    nominal: bool,
    state: &str,
    t_final: f64,
    step: f64,
) -> u8 {
    let spec = match load_spec(&common) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Err(code) = ensure_out_dir(&common.out_dir) {
        return code;
    }
    let x0 = match parse_state(state, spec.state_dim()) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let sim_mode = if nominal {
        SimMode::Nominal
    } else {
        match mode.mode() {
            Mode::Standard => SimMode::Standard,
            Mode::Adaptive => SimMode::Adaptive,
        }
    };

    let traj = match sim::simulate(&spec, &x0, t_final, step, sim_mode) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };

    let csv_path = common.out_dir.join("trajectory.csv");
    let result = File::create(&csv_path).and_then(|f| {
        let mut w = BufWriter::new(f);
        sim::write_trajectory_csv(&traj, &mut w)
    });
    if let Err(e) = result {
        eprintln!("error: cannot write {}: {e}", csv_path.display());
        return 2;
    }

    let min_b = sim::min_barrier(&traj);
    println!("mode: {sim_mode}");
    println!("samples: {}", traj.samples.len());
    println!("min barrier: {min_b}");
    match &traj.status {
        SimStatus::Completed => println!("status: completed"),
        SimStatus::LeftDomain { t, .. } => println!("status: left exploration box at t = {t}"),
        SimStatus::ControllerInfeasible { t, x, reason } => {
            eprintln!("controller failure at t = {t}, x = {x:?}: {reason}");
            return 6;
        }
    }

    if min_b >= -1e-3 {
        0
    } else {
        if let Some(t) = traj.first_barrier_crossing() {
            eprintln!("barrier crossed zero at t = {t} (min barrier {min_b})");
        }
        1
    }
}
