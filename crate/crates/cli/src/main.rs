use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use hexpdc::analysis::{self, AnalysisError, RunAnalysis};
use hexpdc::config::{ConfigError, ConfigFile, Preset, RunConfig};
use hexpdc::coupled_modes::{
    beam_splitter_decomposition, eigenvalue_landscape, four_mode_singular_values, two_mode_gamma,
};
use hexpdc::io::{self, IoError, RunManifest};
use hexpdc::medium::{GainParameters, MediumError};
use hexpdc::num_complex::Complex64;
use hexpdc::propagation::{propagate, PropagationError};
use hexpdc::qpm::{self, BranchLabel, QpmError, QpmSampling};

#[derive(Parser)]
#[command(name = "hexpdc", version, about = "Dual-pump PDC in hexagonally poled crystals")]
struct Cli {
    /// Worker threads for trajectory ensembles.
    #[arg(long, env = "HEXPDC_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Phase-matching surfaces and shared-mode lines.
    Qpm {
        config: PathBuf,
        /// Restrict to these branches (sigma0, sigma11, ...).
        #[arg(long)]
        branch: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic two- and four-mode gains.
    Modes {
        /// Optional config supplying gbar; gains are printed in units of gbar.
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "point")]
        landscape: bool,
        /// `|r|,phase`
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Option<(f64, f64)>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stochastic propagation of a trajectory ensemble.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Branch-resolved tables from saved runs.
    Analyze {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        figure: Figure,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig3,
    Fig4,
    Fig6,
    Fig7,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `r,phase`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

enum Failure {
    Config(String),
    Divergence(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Io(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Divergence(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}
impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Io(e.to_string())
    }
}
impl From<QpmError> for Failure {
    fn from(e: QpmError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<MediumError> for Failure {
    fn from(e: MediumError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<PropagationError> for Failure {
    fn from(e: PropagationError) -> Self {
        match e {
            PropagationError::Divergence { .. } => Failure::Divergence(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool: {e}");
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Qpm { config, branch, out } => cmd_qpm(&config, &branch, &out),
        Cmd::Modes {
            config,
            landscape,
            point,
            resolution,
            out,
        } => cmd_modes(config.as_deref(), landscape, point, resolution, out.as_deref()),
        Cmd::Simulate {
            config,
            preset,
            seed,
            trajectories,
            out,
        } => cmd_simulate(&config, preset, seed, trajectories, &out),
        Cmd::Analyze { runs, figure, out } => cmd_analyze(&runs, figure, &out),
    }
}

fn create_dir(out: &Path) -> Res<()> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))
}

fn cmd_qpm(config: &Path, branches: &[String], out: &Path) -> Res<()> {
    let t0 = Instant::now();
    let file = ConfigFile::load(config)?;
    let rc = RunConfig::from_file(&file, None)?;
    let ctx = rc.qpm_context()?;
    let mut labels = Vec::new();
    for b in branches {
        let l = BranchLabel::parse(b).ok_or_else(|| Failure::Config(format!("unknown branch `{b}`")))?;
        labels.push(l);
    }
    if labels.is_empty() {
        labels = ctx.branches();
    }
    create_dir(out)?;
    let hash = rc.hash();
    let mut files = Vec::new();
    let sampling = QpmSampling::uniform(
        rc.qpm_omega_max,
        rc.qpm_n_omega,
        rc.qpm_n_angles,
        rc.simulation.grid.dqx(),
    );
    for l in labels {
        let br = qpm::exact_branch(&ctx, l, &sampling)?;
        let rows: Vec<Vec<f64>> = br
            .samples
            .iter()
            .map(|s| vec![s.omega, s.qx, s.qy, s.residual.abs()])
            .collect();
        let p = out.join(format!("branch_{}.txt", l.name()));
        io::write_table(&p, &["omega_rad_per_ps", "qx_per_um", "qy_per_um", "abs_D_per_um"], &rows)?;
        files.push(p);
        let flat: Vec<f64> = rows.concat();
        let meta = io::ArrayMeta {
            dtype: "float64".into(),
            byte_order: "little".into(),
            shape: vec![rows.len(), 4],
            axes: vec![
                io::AxisMeta {
                    name: "sample".into(),
                    unit: "1".into(),
                    len: rows.len(),
                    spacing: 1.0,
                    ordering: "index".into(),
                },
                io::AxisMeta {
                    name: "column(omega rad/ps, qx 1/um, qy 1/um, |D| 1/um)".into(),
                    unit: "mixed".into(),
                    len: 4,
                    spacing: 1.0,
                    ordering: "index".into(),
                },
            ],
            quantity: format!("{} branch samples", l.name()),
            unit: "mixed".into(),
            config_hash: hash.clone(),
            seed: rc.simulation.seed,
        };
        files.extend(io::write_f64_array(&out.join(format!("branch_{}.bin", l.name())), &flat, &meta)?);
        match br.ring_radius(0.0) {
            Some((cx, r)) => println!("{}: Omega=0 ring centre {cx:.6} radius {r:.6} 1/um", l.name()),
            None => println!("{}: {} samples", l.name(), br.samples.len()),
        }
    }
    let lines = qpm::all_shared_lines(&ctx, &sampling.omegas)?;
    let mut rows = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        for &(w, qy, d) in &line.points {
            rows.push(vec![i as f64, line.qx, w, qy, d.abs()]);
        }
    }
    let p = out.join("shared_modes.txt");
    io::write_table(&p, &["line", "qx_per_um", "omega_rad_per_ps", "qy_per_um", "abs_D_per_um"], &rows)?;
    files.push(p);
    println!("G_x = {:.6} 1/um, poling period {:.5} um", ctx.gx(), rc.crystal.poling_period_um);
    finish_manifest("qpm", out, &hash, rc.simulation.seed, &files, t0)
}

fn finish_manifest(command: &str, out: &Path, hash: &str, seed: u64, files: &[PathBuf], t0: Instant) -> Res<()> {
    let mut m = RunManifest::new(command, hash, seed);
    m.add_outputs(out, files)?;
    m.wall_clock_s = t0.elapsed().as_secs_f64();
    m.save(out)?;
    Ok(())
}

fn cmd_modes(
    config: Option<&Path>,
    landscape: bool,
    point: Option<(f64, f64)>,
    resolution: usize,
    out: Option<&Path>,
) -> Res<()> {
    let t0 = Instant::now();
    let (gbar, hash) = match config {
        Some(p) => {
            let rc = RunConfig::from_file(&ConfigFile::load(p)?, None)?;
            (rc.gbar, rc.hash())
        }
        None => (1.0, String::new()),
    };
    if let Some((ra, ph)) = point {
        if !(0.0..=1.0).contains(&ra) {
            return Err(Failure::Config("|r| must lie in [0, 1]".into()));
        }
        let g = GainParameters::from_ratio(gbar, Complex64::from_polar(ra, ph));
        for l in [BranchLabel::Sigma0, BranchLabel::Sigma11, BranchLabel::Sigma22] {
            let gamma = two_mode_gamma(l, &g).map_err(|e| Failure::Config(e.to_string()))?;
            println!("gamma_{} = {:.4}", l.name(), gamma.norm());
        }
        let (lp, lm) = four_mode_singular_values(&g);
        println!("Lambda+/gbar = {:.4}", lp / gbar);
        println!("Lambda-/gbar = {:.4}", lm / gbar);
        match beam_splitter_decomposition(&g) {
            Ok(bs) => println!("Theta = {:.6} rad (tan = {:.4})", bs.theta, bs.theta.tan()),
            Err(_) => println!("Theta: undefined for complex r"),
        }
        return Ok(());
    }
    if !landscape {
        return Err(Failure::Config("give --landscape or --point r,phase".into()));
    }
    let out = out.ok_or_else(|| Failure::Config("--landscape needs --out".into()))?;
    if resolution < 2 {
        return Err(Failure::Config("resolution must be at least 2".into()));
    }
    create_dir(out)?;
    let n = resolution;
    let r: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ph: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / (n - 1) as f64).collect();
    let rows: Vec<Vec<f64>> = eigenvalue_landscape(&r, &ph)
        .iter()
        .map(|p| vec![p.r_abs, p.phase, p.lambda_plus, p.lambda_minus])
        .collect();
    let p = out.join("fig5_landscape.txt");
    io::write_table(&p, &["r_abs", "phase_rad", "lambda_plus_over_gbar", "lambda_minus_over_gbar"], &rows)?;
    finish_manifest("modes", out, &hash, 0, &[p], t0)
}

fn cmd_simulate(
    config: &Path,
    preset: Option<Preset>,
    seed: Option<u64>,
    trajectories: Option<usize>,
    out: &Path,
) -> Res<()> {
    let t0 = Instant::now();
    let mut file = ConfigFile::load(config)?;
    if let Some(p) = preset {
        file.simulation.preset = Some(p);
    }
    if seed.is_some() {
        file.simulation.seed = seed;
    }
    if trajectories.is_some() {
        file.simulation.trajectories = trajectories;
    }
    let rc = RunConfig::from_file(&file, None)?;
    file.simulation.preset = Some(rc.preset);
    let g = rc.simulation.grid;
    log::info!(
        "grid {}x{}x{}, {} trajectories, seed {}, preset {}",
        g.nx,
        g.ny,
        g.nt,
        rc.simulation.trajectories,
        rc.simulation.seed,
        rc.preset
    );
    let sim = rc.simulation()?;
    for w in &sim.diagnostics().warnings {
        log::warn!("{w}");
    }
    let t_setup = t0.elapsed().as_secs_f64();
    let result = propagate(&sim)?;
    let t_run = t0.elapsed().as_secs_f64() - t_setup;
    let hash = rc.hash();
    let files = io::save_run(out, &file, &result, &hash)?;
    let mut m = RunManifest::new("simulate", &hash, rc.simulation.seed);
    m.add_outputs(out, &files)?;
    m.timings_s.insert("setup".into(), t_setup);
    m.timings_s.insert("propagate".into(), t_run);
    m.timings_s
        .insert("per_step".into(), t_run / (result.n_trajectories * sim.diagnostics().n_steps.max(1)) as f64);
    m.wall_clock_s = t0.elapsed().as_secs_f64();
    m.save(out)?;
    println!(
        "depletion {:.3e}, Manley-Rowe drift {:.2e}, {:.1} s",
        result.depletion_fraction, result.manley_rowe_drift, m.wall_clock_s
    );
    Ok(())
}

struct LoadedRun {
    label: String,
    rc: RunConfig,
    result: hexpdc::propagation::EnsembleResult,
}

fn load(dir: &Path) -> Res<LoadedRun> {
    let (file, result) = io::load_run(dir)?;
    let rc = RunConfig::from_file(&file, None)?;
    let label = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    Ok(LoadedRun { label, rc, result })
}

fn analyze(run: &LoadedRun) -> Res<RunAnalysis> {
    let ctx = run.rc.qpm_context()?;
    Ok(analysis::analyze_run(
        &run.label,
        &run.result,
        &ctx,
        run.rc.gbar,
        run.rc.mask,
        run.rc.fit_window,
    )?)
}

fn series_table(out: &Path, name: &str, ra: &RunAnalysis, only: &[&str]) -> Res<PathBuf> {
    let mut rows = Vec::new();
    for (bi, b) in ra.branches.iter().enumerate() {
        if !only.is_empty() && !only.contains(&b.name.as_str()) {
            continue;
        }
        for p in &b.series {
            rows.push(vec![bi as f64, ra.gbar * p.z_um, p.photons, p.stderr]);
        }
    }
    let p = out.join(name);
    io::write_table(&p, &["branch", "gbar_z", "photons", "stderr"], &rows)?;
    Ok(p)
}

fn print_fits(ra: &RunAnalysis, only: &[&str]) {
    println!("{}", ra.label);
    for b in &ra.branches {
        if !only.is_empty() && !only.contains(&b.name.as_str()) {
            continue;
        }
        match &b.fit {
            Some(f) => println!(
                "  {:<9} modes {:>6}  gamma_hat {:.4} +- {:.4}  sinh2 fit {}",
                b.name,
                b.n_modes,
                f.gamma_hat,
                f.stderr,
                f.nonlinear.map_or("-".into(), |n| format!("{:.4}", n.gamma))
            ),
            None => println!("  {:<9} modes {:>6}  no fit", b.name, b.n_modes),
        }
    }
}

fn cmd_analyze(runs: &[PathBuf], figure: Figure, out: &Path) -> Res<()> {
    let t0 = Instant::now();
    let loaded: Vec<LoadedRun> = runs.iter().map(|d| load(d)).collect::<Res<_>>()?;
    create_dir(out)?;
    let mut files = Vec::new();
    let mut hashes = Vec::new();
    for run in &loaded {
        hashes.push(run.rc.hash());
        let last = run.result.snapshot_z_um.len() - 1;
        match figure {
            Figure::Fig3 => {
                let rows: Vec<Vec<f64>> = run
                    .result
                    .section_qy0(last, &run.rc.crystal)
                    .into_iter()
                    .map(|(q, l, n)| vec![q, l, n])
                    .collect();
                let p = out.join(format!("fig3_spectrum_{}.txt", run.label));
                io::write_table(&p, &["qx_per_um", "wavelength_um", "photons"], &rows)?;
                files.push(p);
            }
            Figure::Fig4 | Figure::Fig7 => {
                let ra = analyze(run)?;
                let prefix = if matches!(figure, Figure::Fig4) { "fig4_gain_curves" } else { "fig7_offresonance" };
                files.push(series_table(out, &format!("{prefix}_{}.txt", run.label), &ra, &[])?);
                print_fits(&ra, &[]);
            }
            Figure::Fig6 => {
                let ra = analyze(run)?;
                files.push(series_table(out, &format!("fig6_hotspot_curves_{}.txt", run.label), &ra, &["hotspots"])?);
                print_fits(&ra, &["hotspots"]);
                let ctx = run.rc.qpm_context()?;
                let rep = analysis::hot_spot_report(&run.result, last, &ctx, run.rc.mask)?;
                for l in &rep.lines {
                    println!("  hot spot q_x = {:+.4}: peak/background {:.2}", l.qx, l.peak_to_background);
                }
            }
        }
    }
    if matches!(figure, Figure::Fig4 | Figure::Fig6) && loaded.len() >= 2 {
        let base = analyze(&loaded[0])?;
        let mut rows = Vec::new();
        for (i, run) in loaded.iter().enumerate().skip(1) {
            let t = analysis::compare_configurations(&base, &analyze(run)?)?;
            for (j, r) in t.rows.iter().enumerate() {
                println!(
                    "{} / {} {:<9} gamma ratio {:.3} +- {:.3}, photon ratio {:.3e}",
                    t.label_b, t.label_a, r.branch, r.gamma_ratio, r.gamma_ratio_err, r.photon_ratio
                );
                rows.push(vec![i as f64, j as f64, r.gamma_a, r.gamma_b, r.gamma_ratio, r.gamma_ratio_err, r.photon_ratio]);
            }
        }
        let p = out.join("enhancement.txt");
        io::write_table(
            &p,
            &["run", "branch", "gamma_base", "gamma_run", "gamma_ratio", "ratio_err", "photon_ratio"],
            &rows,
        )?;
        files.push(p);
    }
    finish_manifest("analyze", out, &hashes.join(","), 0, &files, t0)
}
