use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use varcrit::critical::{analyze, bernstein_check, coarea_index_identity, default_eps, detect};
use varcrit::grid::{build_disk, ScalarField};
use varcrit::lagrangian::{conjugate, make_case_study, make_family, table_rows, write_table, FamilyParams, INVERSION_TOL};
use varcrit::pde::{make_form, probe_campaign, residual, FormParams, ProbeConfig};
use varcrit::pipeline::{self, RunConfig, EXIT_INVARIANT, EXIT_NON_CONVERGENCE};
use varcrit::reference::remark_solution;
use varcrit::stream::stream_pair;

#[derive(Parser)]
#[command(name = "varcrit", version, about = "Minimizers, stream functions and critical-point diagnostics for non-differentiable convex energies")]
struct Cli {
    /// Caps the worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lagrangian tables.
    Lagrangian {
        #[command(subcommand)]
        action: LagrangianCmd,
    },
    /// Minimize across the n-schedule of a run configuration.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Integrate the stream function of a field.
    Stream {
        #[arg(long)]
        u: PathBuf,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Critical candidates, indices, branches, Bernstein slack and coarea pair.
    Critical {
        #[arg(long)]
        u: PathBuf,
        /// Candidate threshold (default `2 h sup|grad u|`).
        #[arg(long)]
        eps: Option<f64>,
        /// Loop radius (default `6 h`).
        #[arg(long)]
        radius: Option<f64>,
        /// Upper level of the coarea annulus (default `4 eps`).
        #[arg(long)]
        eps0: Option<f64>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-node residual of an equation form.
    Residual {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        form: String,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded touching-quadratic viscosity probe.
    Probe {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        form: String,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inequality slack (default `10 h`).
        #[arg(long)]
        slack: Option<f64>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Closed-form reference fields.
    Reference {
        #[command(subcommand)]
        action: ReferenceCmd,
    },
    /// Full pipeline; exit status 2 on invariant failure, 3 on non-convergence.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Lists configuration violations; exit status 2 if any.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum LagrangianCmd {
    /// CSV table `rho,f,fp,fpp,alpha,g,gp,beta`.
    Table {
        #[arg(long, default_value = "base")]
        family: String,
        #[arg(long, default_value_t = 8)]
        n: u32,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 2.0)]
        rho_max: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReferenceCmd {
    /// Samples the closed-form solution on the disk grid.
    Sample {
        #[arg(long = "R", default_value_t = 0.9)]
        radius: f64,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct FamilyArgs {
    #[arg(long, default_value = "a")]
    family: String,
    #[arg(long, default_value_t = 32)]
    n: u32,
    #[arg(long, default_value_t = 1.0)]
    s: f64,
}

impl FamilyArgs {
    fn form_params(&self) -> FormParams {
        FormParams::case_study(&self.family, self.n, self.s)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_field(path: &Path) -> anyhow::Result<ScalarField> {
    ScalarField::read_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: &Path, out_dir: Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(dir) = out_dir {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Lagrangian { action: LagrangianCmd::Table { family, n, s, rho_max, step, out } } => {
            if !(step > 0.0 && rho_max >= 0.0) {
                bail!("need step > 0 and rho-max >= 0");
            }
            let base = make_case_study();
            let l = make_family(&family, &FamilyParams { base: base.clone(), n, s })?;
            let r_max = rho_max.max(l.fp0()).max(base.fp0()) + 1.0;
            let conj = conjugate(l.clone(), r_max, INVERSION_TOL)?;
            let base_conj = conjugate(base.clone(), r_max, INVERSION_TOL)?;
            let rows = table_rows(l.as_ref(), &conj, base.as_ref(), &base_conj, s, rho_max, step)?;
            match out {
                Some(p) => write_table(BufWriter::new(fs::File::create(&p)?), &rows)?,
                None => write_table(std::io::stdout().lock(), &rows)?,
            }
            Ok(0)
        }
        Command::Solve { config, out_dir } => {
            let cfg = load_config(&config, out_dir)?;
            let (summary, u) = pipeline::solve_schedule(&cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            u.write_csv(&cfg.output_dir.join("u.csv"))?;
            write_json(&cfg.output_dir.join("report.json"), &summary)?;
            Ok(if summary.converged { 0 } else { EXIT_NON_CONVERGENCE as u8 })
        }
        Command::Stream { u, family, out, report } => {
            let u = read_field(&u)?;
            let l = make_family(&family.family, &FamilyParams::case_study(family.n, family.s))?;
            let sup = u.cell_gradients().iter().fold(0.0f64, |m, p| m.max(p[0].hypot(p[1])));
            let conj = conjugate(l.clone(), (2.0 * l.fp(sup.max(1.0)) + 1.0).max(10.0), INVERSION_TOL)?;
            let pair = stream_pair(l.as_ref(), &conj, &u)?;
            let summary = pair.summary(l.as_ref())?;
            pair.v.write_csv(&out)?;
            write_json(&report, &summary)?;
            Ok(0)
        }
        Command::Critical { u, eps, radius, eps0, report } => {
            let u = read_field(&u)?;
            let h = u.grid().h();
            let eps = eps.unwrap_or_else(|| default_eps(&u));
            let mut rep = detect(&u, eps);
            analyze(&u, &mut rep, radius.unwrap_or(6.0 * h), h * h);
            let bern = bernstein_check(make_case_study().as_ref(), &u, pipeline::RESIDUAL_GRAD_FLOOR)?;
            let coarea = match coarea_index_identity(&u, eps, eps0.unwrap_or(4.0 * eps)) {
                Ok(p) => json!({ "lhs": p.lhs, "rhs": p.rhs }),
                Err(e) => json!({ "error": e.to_string() }),
            };
            let value = json!({
                "critical": rep,
                "bernstein_min_slack": bern.min_slack,
                "bernstein_evaluated": bern.evaluated,
                "coarea": coarea,
            });
            write_json(&report, &value)?;
            Ok(0)
        }
        Command::Residual { u, form, family, out } => {
            let u = read_field(&u)?;
            let form = make_form(&form, &family.form_params())?;
            let res = residual(form.as_ref(), &u)?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            writeln!(w, "x,y,value")?;
            for (k, r) in res.iter().enumerate() {
                let [x, y] = u.grid().xy(k);
                writeln!(w, "{:.16e},{:.16e},{:.16e}", x, y, r.unwrap_or(f64::NAN))?;
            }
            w.flush()?;
            Ok(0)
        }
        Command::Probe { u, form, family, trials, nodes, seed, slack, report } => {
            let u = read_field(&u)?;
            let form = make_form(&form, &family.form_params())?;
            let cfg = ProbeConfig { nodes, trials, seed, slack: slack.unwrap_or(10.0 * u.grid().h()) };
            let rep = probe_campaign(&u, form.as_ref(), &cfg)?;
            write_json(&report, &rep)?;
            Ok(if rep.passed() { 0 } else { EXIT_INVARIANT as u8 })
        }
        Command::Reference { action: ReferenceCmd::Sample { radius, h, out } } => {
            let r = remark_solution(radius)?;
            let grid = Arc::new(build_disk(radius, h)?);
            r.sample(grid)?.write_csv(&out)?;
            Ok(0)
        }
        Command::Run { config, out_dir } => {
            let cfg = load_config(&config, out_dir)?;
            let report = pipeline::run(&cfg)?;
            eprintln!("status: {}", report.status);
            Ok(report.exit_code() as u8)
        }
        Command::Validate { config } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let violations = match RunConfig::from_json(&text) {
                Ok(cfg) => pipeline::validate(&cfg),
                Err(e) => vec![e.to_string()],
            };
            for v in &violations {
                println!("{v}");
            }
            Ok(if violations.is_empty() { 0 } else { EXIT_INVARIANT as u8 })
        }
    }
}
