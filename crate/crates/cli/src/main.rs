use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metahomog::harness::{self, RunConfig};
use metahomog::Error;

#[derive(Parser, Debug)]
#[command(name = "metahomog", version, about = "Homogenization of resonator slabs: effective media, cell problems and strip scattering")]
struct Cli {
    /// TOML run configuration; the built-in scenario is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `outputs.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the η sweep and assembly.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded factorization and reductions for bitwise-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Effective permeability, permittivity and surface quantities.
    Effective,
    /// Cell-problem refinement study and oracle comparison.
    Cell,
    /// Homogenized slab amplitudes and field profile.
    Homogenized,
    /// One strip solve with field, amplitude and average exports.
    Micro {
        /// Cells per period; defaults to the last entry of the sweep.
        #[arg(long)]
        n2: Option<usize>,
    },
    /// η sweep against the homogenized reference.
    Converge,
    /// Per-cell constitutive diagnostics and warnings.
    Diagnose,
    /// Quick internal consistency checks.
    Selftest,
    /// Print the built-in scenario configuration.
    Template,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(harness::exit_code(e) as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    if cli.deterministic || threads == Some(1) {
        faer::set_global_parallelism(faer::Par::Seq);
    }

    let cfg = match &cli.config {
        Some(p) => match harness::load_config(p) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => RunConfig::scenario(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.outputs.directory.clone());

    let result = match cli.command {
        Command::Template => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Effective => harness::run_effective(&cfg, &out).map(|r| {
            println!("mu*        = {:.12} {:+.12}i", r.mu.mu_star.re, r.mu.mu_star.im);
            if let Some(z) = r.mu_closed_form {
                println!("mu* closed = {:.12} {:+.12}i", z.re, z.im);
            }
            println!("m          = {:.12} {:+.12}i", r.mu.m_ratio.re, r.mu.m_ratio.im);
            println!("mu_hat     = {:.12} {:+.12}i", r.mu.mu_hat.re, r.mu.mu_hat.im);
            println!("rho_hat    = {:.12} {:+.12}i", r.mu.rho_hat.re, r.mu.rho_hat.im);
            println!("eps*_xx    = {:.12}   (condition {:.3e})", r.eps_star.xx.re, r.eps_star_condition);
            if let Some(o) = r.eps_oracle {
                println!("eps* oracle= {:.12}", o.eps_star);
            }
        }),
        Command::Cell => harness::run_cell(&cfg, &out).map(|r| {
            for k in 0..3 {
                println!("h = {:.5}  eps*_xx = {:.10}", r.mesh_h[k], r.eps_star[k].xx.re);
            }
            println!("observed order {:.3}", r.observed_order);
            if let Some(o) = r.oracle {
                println!("oracle {:.10}", o.eps_star);
            }
        }),
        Command::Homogenized => {
            let wave = cfg.wave();
            harness::run_homogenized(&cfg, &out).and_then(|r| {
                let w = wave?;
                let (a, b) = (r.a(&w), r.b(&w));
                println!("a = {:.12} {:+.12}i", a.re, a.im);
                println!("b = {:.12} {:+.12}i", b.re, b.im);
                println!("R = {:.12}  T = {:.12}", r.reflected, r.transmitted);
                Ok(())
            })
        }
        Command::Micro { n2 } => harness::run_micro(&cfg, n2, &out).map(|r| {
            let m = cfg.wave.incident_order;
            let (a, b) = (r.solution.amplitudes.a_of(m), r.solution.amplitudes.b_of(m));
            println!("N1 = {}, N2 = {}, dofs = {}", r.lattice.cells_across, r.lattice.cells_per_period, r.solution.h.len());
            println!("a = {:.12} {:+.12}i", a.re, a.im);
            println!("b = {:.12} {:+.12}i", b.re, b.im);
            println!(
                "R = {:.12}  T = {:.12}  absorbed = {:.12}  imbalance = {:.3e}",
                r.energy.reflected_flux,
                r.energy.transmitted_flux,
                r.energy.absorbed(),
                r.energy.relative_imbalance()
            );
        }),
        Command::Converge => harness::run_converge(&cfg, &out).map(|r| {
            println!("{:>4} {:>4} {:>11} {:>11} {:>11} {:>11} {:>11}", "N1", "N2", "|dR|", "|dT|", "L2", "L2(m=1)", "imbalance");
            for row in &r.rows {
                println!(
                    "{:>4} {:>4} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
                    row.cells_across, row.cells_per_period, row.delta_r, row.delta_t, row.l2_error, row.l2_error_control, row.imbalance
                );
            }
            for (n2, why) in &r.skipped {
                println!("skipped N2 = {n2}: {why}");
            }
            for c in &r.non_monotone {
                println!("not strictly decreasing: {c}");
            }
        }),
        Command::Diagnose => harness::run_diagnose(&cfg, &out).map(|r| {
            for row in &r.rows {
                println!(
                    "N2 = {:>3}: d median {:.3e}, b median {:.3e}, ratio {:.3e}, jump {:.3e}, max|E.t| {:.3e}",
                    row.cells_per_period,
                    row.checks.d_median,
                    row.checks.b_median,
                    row.checks.ratio_median.unwrap_or(f64::NAN),
                    row.checks.jump_constancy_median.unwrap_or(f64::NAN),
                    row.checks.et_max
                );
            }
            for w in &r.warnings {
                println!("warning: {w}");
            }
        }),
        Command::Selftest => {
            let results = harness::run_selftest();
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            if !ok {
                return ExitCode::from(4);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
