use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array3, Ix2, Ix3};

use rpsf_core::evaluate::match_detections;
use rpsf_core::experiment::{
    run_experiment, scoreboard_csv, simulate, tune, with_pool, write_csv, write_report, Case,
    ExperimentConfig, ImageSeeds, Lab, Manifest, ParamSet, Sections, Split,
};
use rpsf_core::io_store::{load_tensor, read_json, read_text, save_tensor, write_atomic, write_json};
use rpsf_core::optics::{build_dictionary, PsfModel, PsfStack};
use rpsf_core::pipeline::localize;
use rpsf_core::postproc::{detections_from_csv, detections_to_csv};
use rpsf_core::scene::Scene;
use rpsf_core::solver::Algorithm;
use rpsf_core::{Error, Result};

/// Localize point sources in rotating-PSF images.
#[derive(Parser)]
#[command(name = "rpsf", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// JSON parameter set (as written by `tune`) replacing the solver section.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Base seed for experiments, image seed for `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// kl-nc, kl-l1, l2-l1 or l2-nc.
    #[arg(long, global = true)]
    algorithm: Option<Algorithm>,
    /// Sources per image.
    #[arg(long, global = true)]
    density: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the PSF dictionary.
    BuildPsf,
    /// Simulate one scene and its noisy image.
    Simulate {
        /// Mean source flux; defaults to the configured value.
        #[arg(long)]
        flux_mean: Option<f64>,
    },
    /// Localize sources in one image.
    Solve {
        /// Image tensor (m x n photon counts).
        #[arg(long)]
        image: PathBuf,
        /// Dictionary tensor from `build-psf`; built from the config if absent.
        #[arg(long)]
        psf: Option<PathBuf>,
    },
    /// Grid-search solver parameters on training images.
    Tune {
        /// Tune for the low-photon study instead of the standard level.
        #[arg(long)]
        low_photon: bool,
    },
    /// Run the test-split experiment: tables, stability and low-photon study.
    Experiment {
        /// Skip the per-algorithm result tables.
        #[arg(long)]
        skip_tables: bool,
        /// Skip the PSF-perturbation stability study.
        #[arg(long)]
        skip_stability: bool,
        /// Skip the low-photon comparison.
        #[arg(long)]
        skip_low_photon: bool,
    },
    /// Score detections against a ground-truth scene.
    Evaluate {
        /// Ground-truth scene (scene.txt from `simulate`).
        #[arg(long)]
        scene: PathBuf,
        /// Detections CSV (as written by `solve`).
        #[arg(long)]
        detections: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json { .. } => 2,
        Error::Divergence(_) | Error::Singular { .. } => 3,
        Error::Io { .. } | Error::BadMagic { .. } | Error::Truncated { .. } | Error::DimOverflow { .. } => 4,
        _ => 1,
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &g.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &g.params {
        cfg.solver = read_json::<ParamSet>(path)?;
    }
    if let Some(seed) = g.seed {
        cfg.simulation.base_seed = seed;
    }
    if let Some(alg) = g.algorithm {
        cfg.algorithms = vec![alg];
    }
    if let Some(d) = g.density {
        cfg.simulation.densities = vec![d];
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    let started = Instant::now();
    let name = match &cli.command {
        Command::BuildPsf => "build-psf",
        Command::Simulate { .. } => "simulate",
        Command::Solve { .. } => "solve",
        Command::Tune { .. } => "tune",
        Command::Experiment { .. } => "experiment",
        Command::Evaluate { .. } => "evaluate",
    };
    let mut manifest = Manifest::new(name, &cfg);
    manifest.meta.started_unix = unix_now();
    let hash = manifest.config_hash.clone();

    match cli.command {
        Command::BuildPsf => {
            let dict = build_dictionary(&cfg.optics)?;
            save_tensor(dir.join("psf.bin"), &dict.data.clone().into_dyn())?;
            write_json(
                dir.join("psf.json"),
                &serde_json::json!({
                    "config_hash": hash,
                    "optics": cfg.optics,
                    "zetas": dict.zetas,
                    "per_slice_energy": dict.per_slice_energy,
                }),
            )?;
            manifest.artifacts = vec!["psf.bin".into(), "psf.json".into()];
            let (m, n, d) = dict.dims();
            println!("dictionary {m}x{n}x{d} -> {}", dir.join("psf.bin").display());
        }
        Command::Simulate { flux_mean } => {
            let seed = cli.global.seed.unwrap_or(cfg.simulation.base_seed);
            let case = Case {
                split: Split::Test,
                index: 0,
                density: cfg.simulation.densities[0],
                flux_mean: flux_mean.unwrap_or(cfg.simulation.flux_mean),
                sigma: 0.0,
                seeds: ImageSeeds::from_seed(seed),
            };
            let (scene, image) = simulate(&cfg.optics, &cfg.simulation, &case)?;
            write_atomic(dir.join("scene.txt"), scene.to_text().as_bytes())?;
            save_tensor(dir.join("image.bin"), &image.to_f64().into_dyn())?;
            manifest.seeds.insert("seed".into(), seed);
            manifest.seeds.insert("scene".into(), case.seeds.scene);
            manifest.seeds.insert("noise".into(), case.seeds.noise);
            manifest.artifacts = vec!["scene.txt".into(), "image.bin".into()];
            println!(
                "{} sources, {} photons -> {}",
                scene.sources.len(),
                image.counts.iter().map(|&c| u64::from(c)).sum::<u64>(),
                dir.display()
            );
        }
        Command::Solve { image, psf } => {
            let alg = cli.global.algorithm.unwrap_or(Algorithm::KlNc);
            let counts: Array2<f64> = load_tensor(&image)?
                .into_dimensionality::<Ix2>()
                .map_err(|e| Error::Parse(format!("{}: {e}", image.display())))?;
            let dict = match &psf {
                Some(path) => {
                    let data: Array3<f64> = load_tensor(path)?
                        .into_dimensionality::<Ix3>()
                        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                    PsfStack::from_data(data, cfg.optics.zetas())?
                }
                None => build_dictionary(&cfg.optics)?,
            };
            let mut model = PsfModel::new(&cfg.optics, None)?;
            let mut params = cfg.solver.get(alg, false);
            params.background = cfg.simulation.background;
            let loc = localize(&counts, &dict, &mut model, &params, &cfg.postproc)?;
            save_tensor(dir.join("volume.bin"), &loc.volume.clone().into_dyn())?;
            write_atomic(dir.join("trace.csv"), loc.trace.to_csv().as_bytes())?;
            write_atomic(dir.join("detections.csv"), detections_to_csv(&loc.detections).as_bytes())?;
            write_atomic(dir.join("raw_detections.csv"), detections_to_csv(&loc.raw).as_bytes())?;
            manifest.artifacts = ["volume.bin", "trace.csv", "detections.csv", "raw_detections.csv"]
                .map(String::from)
                .to_vec();
            if let Some(note) = &loc.flux_note {
                eprintln!("warning: flux refinement skipped: {note}");
            }
            println!(
                "{alg}: {} detections ({} nonzero voxels) after {} iterations",
                loc.detections.len(),
                loc.raw.len(),
                loc.trace.len()
            );
        }
        Command::Tune { low_photon } => {
            let lab = Lab::new(cfg.clone())?;
            let (density, flux_mean) = if low_photon {
                (cfg.low_photon.density, cfg.low_photon.flux_mean)
            } else {
                (cfg.simulation.densities[0], cfg.simulation.flux_mean)
            };
            let mut params = cfg.solver.clone();
            for &alg in &cfg.algorithms {
                let base = cfg.solver.get(alg, low_photon);
                let t = Instant::now();
                let out = with_pool(cfg.threads, || tune(&lab, alg, density, flux_mean, base))??;
                let tag = format!("scoreboard_{alg}_{flux_mean}.csv");
                manifest.artifacts.push(write_csv(&dir, &tag, &hash, &scoreboard_csv(&out))?);
                let row = &out.rows[out.best_row];
                println!(
                    "{alg}: mu={} a={} beta={} recall={:.3} precision={:.3} f1={:.3} ({:.0}s)",
                    row.point.mu,
                    row.point.a,
                    row.point.beta,
                    row.recall,
                    row.precision,
                    row.f1,
                    t.elapsed().as_secs_f64()
                );
                let table = if low_photon {
                    &mut params.low_photon
                } else {
                    &mut params.standard
                };
                table.insert(alg, out.best);
            }
            write_json(dir.join("params.json"), &params)?;
            manifest.artifacts.push("params.json".into());
        }
        Command::Experiment {
            skip_tables,
            skip_stability,
            skip_low_photon,
        } => {
            let lab = Lab::new(cfg.clone())?;
            let sections = Sections {
                tables: !skip_tables,
                stability: !skip_stability,
                low_photon: !skip_low_photon,
            };
            let report = with_pool(cfg.threads, || run_experiment(&lab, sections))?;
            manifest.artifacts = write_report(&dir, &cfg, &report)?;
            let failures: usize = report.cells.iter().filter(|c| c.outcome.is_err()).count();
            let print = |title: &str, rows: &[rpsf_core::experiment::TableRow]| {
                if rows.is_empty() {
                    return;
                }
                println!("{title}");
                for r in rows {
                    let fmt = |s: &Option<rpsf_core::evaluate::Summary>| match s {
                        Some(s) => format!("{:6.2}% {:6.2}%", 100.0 * s.recall, 100.0 * s.precision),
                        None => "   n/a     n/a".into(),
                    };
                    println!(
                        "  {:>3} sources  {:>6} photons  sigma {:.4}  {:<6} post {}  pre {}",
                        r.density,
                        r.flux_mean,
                        r.sigma,
                        r.algorithm.name(),
                        fmt(&r.batch.post),
                        fmt(&r.batch.pre)
                    );
                }
            };
            print("recall / precision", &report.tables);
            print("stability", &report.stability);
            print("low photon", &report.low_photon);
            if failures > 0 {
                eprintln!("warning: {failures} cells failed; see cells.csv");
            }
        }
        Command::Evaluate { scene, detections } => {
            let truth: Scene = read_text(&scene)?.parse()?;
            let dets = detections_from_csv(&read_text(&detections)?)?;
            let report = match_detections(&truth, &dets, &cfg.matching, &cfg.optics, cfg.matcher)?;
            write_json(dir.join("match.json"), &report)?;
            manifest.artifacts = vec!["match.json".into()];
            println!(
                "recall {:.4} precision {:.4} f1 {:.4} ({} true, {} false positives, {} missed)",
                report.recall,
                report.precision,
                report.f1(),
                report.true_positives.len(),
                report.false_positives.len(),
                report.false_negatives.len()
            );
        }
    }
    manifest.meta.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir)
}
