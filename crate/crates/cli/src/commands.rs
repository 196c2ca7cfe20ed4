use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use twinbeam::em::{EmConfig, EmInit};
use twinbeam::envelope::{self, AnyArtifact, Artifact};
use twinbeam::intensity::{default_w_max, grid_scan, negativity_report};
use twinbeam::pnd::JointPnd;
use twinbeam::{
    forward_map, reconstruct, simulate, CoincidenceDistribution, DetectionChain, OrderingParam,
};
use twinbeam::{IntensityGrid, SimulationConfig, Source};

use crate::args::{
    AnalyzeArgs, ChainArgs, ForwardArgs, GenerateArgs, IntensityArgs, Model, ReconstructArgs,
    SampleArgs,
};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

fn arm(
    t_eta: f64,
    noise: f64,
    detectors: Option<usize>,
    dark: f64,
    side: char,
) -> CliResult<DetectionChain> {
    let chain = match detectors {
        Some(n) => {
            if noise != 0.0 {
                return Err(CliError::invalid(format!(
                    "--noise-{side} applies to the many-pixel limit; with --detectors-{side} use --dark-{side}"
                )));
            }
            DetectionChain::finite(t_eta, n, dark)?
        }
        None => {
            if dark != 0.0 {
                return Err(CliError::invalid(format!(
                    "--dark-{side} requires --detectors-{side}"
                )));
            }
            DetectionChain::infinite(t_eta, noise)?
        }
    };
    Ok(chain)
}

fn chains(c: &ChainArgs) -> CliResult<(DetectionChain, DetectionChain)> {
    Ok((
        arm(c.t_eta_s, c.noise_s, c.detectors_s, c.dark_s, 's')?,
        arm(c.t_eta_i, c.noise_i, c.detectors_i, c.dark_i, 'i')?,
    ))
}

fn load<T: Artifact>(run: &mut Run, path: &Path) -> CliResult<T> {
    Ok(envelope::from_json(&run.read(path)?)?)
}

fn save<T: Artifact>(run: &mut Run, path: &Path, artifact: &T) -> CliResult<()> {
    run.write(path, envelope::to_json(artifact)?.as_bytes())
}

fn finish(run: Run) -> CliResult<()> {
    if let Some(path) = run.finish()? {
        log::info!("manifest written to {}", path.display());
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let mut run = Run::start("generate", args);
    let p = match args.model {
        Model::Poisson => JointPnd::poisson_pairs(args.mu, args.truncation)?,
        Model::Gaussian => JointPnd::gaussian_pairs(args.mu, args.truncation)?,
    };
    save(&mut run, &args.out, &p)?;
    say(format_args!(
        "wrote joint_pnd with n <= {} (tail mass {:e}) to {}",
        p.n_max_s(),
        p.tail_mass(),
        args.out.display()
    ));
    finish(run)
}

pub fn forward(args: &ForwardArgs) -> CliResult<()> {
    let mut run = Run::start("forward", args);
    let (chain_s, chain_i) = chains(&args.chain)?;
    let p: JointPnd = load(&mut run, &args.pnd)?;
    let window = args.c_max_s.zip(args.c_max_i);
    let f = forward_map(&p, &chain_s, &chain_i, window)?;
    save(&mut run, &args.out, &f)?;
    say(format_args!(
        "wrote {}x{} coincidence histogram to {}",
        f.c_max_s() + 1,
        f.c_max_i() + 1,
        args.out.display()
    ));
    finish(run)
}

pub fn sample(args: &SampleArgs) -> CliResult<()> {
    let mut run = Run::start("sample", args);
    run.seed(args.seed);
    if args.shots == 0 {
        return Err(CliError::invalid("--shots must be at least 1"));
    }
    let (chain_s, chain_i) = chains(&args.chain)?;
    let p: JointPnd = load(&mut run, &args.pnd)?;
    let cfg = SimulationConfig {
        source: Source::Distribution(p),
        chain_s,
        chain_i,
        shots: args.shots,
        seed: args.seed,
    };
    let f = simulate(&cfg)?;
    save(&mut run, &args.out, &f)?;
    say(format_args!(
        "simulated {} shots into {}",
        args.shots,
        args.out.display()
    ));
    finish(run)
}

pub fn reconstruct_cmd(args: &ReconstructArgs) -> CliResult<()> {
    let mut run = Run::start("reconstruct", args);
    let (chain_s, chain_i) = chains(&args.chain)?;
    let f: CoincidenceDistribution = load(&mut run, &args.hist)?;
    let init = match &args.init {
        Some(path) => EmInit::Custom(load(&mut run, path)?),
        None => EmInit::Uniform,
    };
    let cfg = EmConfig {
        n_max_s: args.n_max_s,
        n_max_i: args.n_max_i,
        max_iterations: args.max_iterations,
        stop_tolerance: args.tolerance,
        init,
    };
    let result = reconstruct(&f, &chain_s, &chain_i, &cfg)?;
    save(&mut run, &args.out, &result)?;
    say(format_args!(
        "{} iterations (converged: {}), final KL {:e}; wrote {}",
        result.iterations_run,
        result.converged,
        result.kl_trace.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    ));
    finish(run)
}

/// Prints one line of the report; a closed stdout (e.g. piped into `head`) is not an error.
fn say(line: std::fmt::Arguments<'_>) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn row(key: &str, value: impl Display) {
    say(format_args!("{key:<28}{value}"));
}

fn statistic(r: twinbeam::Result<f64>) -> String {
    match r {
        Ok(v) => format!("{v:.6}"),
        Err(_) => "undefined".to_string(),
    }
}

fn table(p: &JointPnd) -> CliResult<()> {
    let m = p.moments();
    let (signal, idler) = p.marginals();
    let indep = p.independent_counterpart()?;
    row(
        "support",
        format!("n_S <= {}, n_I <= {}", p.n_max_s(), p.n_max_i()),
    );
    row("mass", format!("{:.12}", p.mass()));
    row("mean_S", format!("{:.6}", m.mean_s));
    row("mean_I", format!("{:.6}", m.mean_i));
    row("var_S", format!("{:.6}", m.var_s));
    row("var_I", format!("{:.6}", m.var_i));
    row("C", statistic(m.correlation()));
    row("S_S", statistic(signal.s_coefficient()));
    row("S_I", statistic(idler.s_coefficient()));
    row("S_+", statistic(p.sum_distribution().s_coefficient()));
    row(
        "var_difference",
        format!("{:.6}", p.difference_distribution().variance()),
    );
    row(
        "var_difference_independent",
        format!("{:.6}", indep.difference_distribution().variance()),
    );
    row("var_sum", format!("{:.6}", p.sum_distribution().variance()));
    row(
        "var_sum_independent",
        format!("{:.6}", indep.sum_distribution().variance()),
    );
    Ok(())
}

/// Difference and sum distributions next to those of the uncorrelated counterpart.
fn distributions_csv(p: &JointPnd) -> CliResult<Vec<u8>> {
    let indep = p.independent_counterpart()?;
    let (diff, diff_ind) = (p.difference_distribution(), indep.difference_distribution());
    let (sum, sum_ind) = (p.sum_distribution(), indep.sum_distribution());
    let lo = diff.min_index().min(diff_ind.min_index());
    let hi = sum.max_index().max(sum_ind.max_index());
    let mut out = Vec::new();
    writeln!(
        out,
        "n,difference,difference_independent,sum,sum_independent"
    )
    .expect("write to memory");
    for n in lo..=hi {
        writeln!(
            out,
            "{n},{:?},{:?},{:?},{:?}",
            diff.at(n),
            diff_ind.at(n),
            sum.at(n),
            sum_ind.at(n)
        )
        .expect("write to memory");
    }
    Ok(out)
}

/// Histogram probabilities viewed as a joint table, unresolved mass kept as tail.
fn histogram_as_joint(f: &CoincidenceDistribution) -> CliResult<JointPnd> {
    Ok(JointPnd::new(f.probabilities(), (1.0 - f.mass()).max(0.0))?)
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let mut run = Run::start("analyze", args);
    let text = run.read(&args.file)?;
    let joint = match envelope::from_json_any(&text)? {
        AnyArtifact::JointPnd(p) => {
            row("kind", "joint_pnd");
            row("tail_mass", format!("{:e}", p.tail_mass()));
            table(&p)?;
            Some(p)
        }
        AnyArtifact::Coincidence(f) => {
            row("kind", "coincidence_distribution");
            row("origin", format!("{:?}", f.origin()).to_lowercase());
            if let Some(shots) = f.shots() {
                row("shots", shots);
            }
            let p = histogram_as_joint(&f)?;
            table(&p)?;
            Some(p)
        }
        AnyArtifact::EmResult(r) => {
            row("kind", "em_result");
            row("iterations", r.iterations_run);
            row("converged", r.converged);
            row(
                "final_kl",
                format!("{:e}", r.kl_trace.last().copied().unwrap_or(f64::NAN)),
            );
            table(&r.rho)?;
            Some(r.rho)
        }
        AnyArtifact::IntensityGrid(g) => {
            grid_table(&g)?;
            if let Some(csv) = &args.csv {
                let mut buf = Vec::new();
                g.write_csv(&mut buf).map_err(|e| CliError::io(csv, e))?;
                run.write(csv, &buf)?;
            }
            None
        }
    };
    if let (Some(p), Some(csv)) = (joint, &args.csv) {
        run.write(csv, &distributions_csv(&p)?)?;
    }
    finish(run)
}

fn grid_table(g: &IntensityGrid) -> CliResult<()> {
    let report = negativity_report(g);
    row("kind", "intensity_grid");
    row("s", g.s().value());
    row(
        "points",
        format!("{} x {}", g.w_s_axis().len(), g.w_i_axis().len()),
    );
    row("w_max", g.w_s_axis().last().copied().unwrap_or(0.0));
    row("min_value", format!("{:e}", report.min_value));
    row(
        "min_location",
        format!(
            "({:.6}, {:.6})",
            report.min_location.0, report.min_location.1
        ),
    );
    row(
        "negative_fraction",
        format!("{:.6}", report.negative_fraction),
    );
    row("integral", format!("{:.6}", g.integral_simpson()?));
    Ok(())
}

pub fn intensity(args: &IntensityArgs) -> CliResult<()> {
    let mut run = Run::start("intensity", args);
    let s = OrderingParam::new(args.s)?;
    let rho = match envelope::from_json_any(&run.read(&args.pnd)?)? {
        AnyArtifact::JointPnd(p) => p,
        AnyArtifact::EmResult(r) => r.rho,
        _ => {
            return Err(CliError::invalid(
                "--pnd must be a joint_pnd or em_result file",
            ))
        }
    };
    let w_max = args.w_max.unwrap_or_else(|| default_w_max(&rho));
    let grid = grid_scan(&rho, s, w_max, args.points)?;
    save(&mut run, &args.out, &grid)?;
    if let Some(csv) = &args.csv {
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).map_err(|e| CliError::io(csv, e))?;
        run.write(csv, &buf)?;
    }
    let report = negativity_report(&grid);
    row("min_value", format!("{:e}", report.min_value));
    row(
        "min_location",
        format!(
            "({:.6}, {:.6})",
            report.min_location.0, report.min_location.1
        ),
    );
    row(
        "negative_fraction",
        format!("{:.6}", report.negative_fraction),
    );
    finish(run)
}
