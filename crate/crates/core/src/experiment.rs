//! Run configuration, seed derivation, parameter tuning and batch
//! experiments over simulated images.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::{aggregate, match_detections, MatchCriteria, MatchReport, Matcher, Summary};
use crate::io_store::{write_atomic, write_json};
use crate::optics::{build_dictionary, MaskPerturbation, OpticsConfig, PsfModel, PsfStack};
use crate::pipeline::{localize, PostprocSettings};
use crate::scene::{random_scene, render_model, sample_poisson, FluxModel, ObservedImage, Scene};
use crate::solver::{Algorithm, SolverParams};

const SHIPPED_PARAMS: &str = include_str!("../data/tuned_params.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Source counts per image.
    pub densities: Vec<usize>,
    pub flux_mean: f64,
    pub background: f64,
    pub flux_model: FluxModel,
    pub n_train: usize,
    pub n_test: usize,
    pub base_seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            densities: vec![15],
            flux_mean: 2000.0,
            background: 5.0,
            flux_model: FluxModel::Poisson,
            n_train: 4,
            n_test: 20,
            base_seed: 7,
        }
    }
}

/// Search space of `tune`; `beta0 = beta1 = beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningGrid {
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            mu: (0..7).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect(),
            a: vec![20.0, 80.0, 320.0],
            beta: vec![0.01, 0.1, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub mu: f64,
    pub a: f64,
    pub beta: f64,
}

impl GridPoint {
    pub fn apply(&self, base: &SolverParams) -> SolverParams {
        SolverParams {
            mu: self.mu,
            a: self.a,
            beta0: self.beta,
            beta1: self.beta,
            ..*base
        }
    }
}

impl TuningGrid {
    /// All combinations, `mu` varying slowest and `beta` fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.mu.len() * self.a.len() * self.beta.len());
        for &mu in &self.mu {
            for &a in &self.a {
                for &beta in &self.beta {
                    out.push(GridPoint { mu, a, beta });
                }
            }
        }
        out
    }
}

/// Imaging through randomly degraded masks while solving with the ideal
/// dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    /// Pupil phase noise levels in radians, increasing.
    pub sigmas: Vec<f64>,
    pub density: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 2.0 * PI / 40.0, 2.0 * PI / 30.0, 2.0 * PI / 20.0, 2.0 * PI / 10.0],
            density: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowPhotonConfig {
    pub flux_mean: f64,
    pub density: usize,
}

impl Default for LowPhotonConfig {
    fn default() -> Self {
        Self {
            flux_mean: 1000.0,
            density: 15,
        }
    }
}

/// Solver parameters per algorithm, for the standard photon level and for
/// the low-photon study. Missing low-photon entries fall back to the
/// standard ones, missing standard entries to the built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ParamSet {
    pub standard: BTreeMap<Algorithm, SolverParams>,
    pub low_photon: BTreeMap<Algorithm, SolverParams>,
}

impl ParamSet {
    /// The parameters shipped with the crate, produced by `rpsf tune`.
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_PARAMS).expect("bundled parameter file is valid JSON")
    }

    pub fn get(&self, algorithm: Algorithm, low_photon: bool) -> SolverParams {
        let low = if low_photon {
            self.low_photon.get(&algorithm)
        } else {
            None
        };
        low.or_else(|| self.standard.get(&algorithm))
            .copied()
            .unwrap_or_else(|| SolverParams::for_algorithm(algorithm))
    }

    pub fn validate(&self) -> Result<()> {
        for (alg, p) in self.standard.iter().chain(&self.low_photon) {
            p.validate()?;
            if p.datafit != alg.datafit() || p.regularizer != alg.regularizer() {
                return Err(Error::Config(format!(
                    "parameters listed under {alg} use a different model"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub optics: OpticsConfig,
    pub simulation: SimulationConfig,
    pub solver: ParamSet,
    pub postproc: PostprocSettings,
    pub matching: MatchCriteria,
    pub matcher: Matcher,
    pub tuning: TuningGrid,
    pub stability: StabilityConfig,
    pub low_photon: LowPhotonConfig,
    pub algorithms: Vec<Algorithm>,
    /// Worker threads; 0 uses every core. Does not affect results.
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            optics: OpticsConfig::default(),
            simulation: SimulationConfig::default(),
            solver: ParamSet::shipped(),
            postproc: PostprocSettings::default(),
            matching: MatchCriteria::default(),
            matcher: Matcher::Greedy,
            tuning: TuningGrid::default(),
            stability: StabilityConfig::default(),
            low_photon: LowPhotonConfig::default(),
            algorithms: Algorithm::ALL.to_vec(),
            threads: 0,
            out_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        self.optics.validate()?;
        self.solver.validate()?;
        self.postproc.validate()?;
        self.matching.validate()?;
        let sim = &self.simulation;
        if sim.densities.is_empty() {
            return bad("densities must not be empty");
        }
        if sim.n_train == 0 || sim.n_test == 0 {
            return bad("n_train and n_test must be at least 1");
        }
        if !(sim.flux_mean > 0.0 && self.low_photon.flux_mean > 0.0) {
            return bad("flux means must be positive");
        }
        if !(sim.background >= 0.0) {
            return bad("background must be >= 0");
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty");
        }
        if self.stability.sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("stability sigmas must be >= 0");
        }
        let grid = &self.tuning;
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !(positive(&grid.mu) && positive(&grid.a) && positive(&grid.beta)) {
            return bad("tuning grid values must be positive");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything that affects results.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.threads = 0;
        canon.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn cases(&self, spec: CaseSpec) -> Vec<Case> {
        (0..spec.count)
            .map(|index| Case {
                split: spec.split,
                index,
                density: spec.density,
                flux_mean: spec.flux_mean,
                sigma: spec.sigma,
                seeds: ImageSeeds::for_image(
                    self.simulation.base_seed,
                    spec.split,
                    spec.density,
                    index,
                ),
            })
            .collect()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Stable 64-bit seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Independent streams for source placement, photon noise and mask noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSeeds {
    pub scene: u64,
    pub noise: u64,
    pub mask: u64,
}

impl ImageSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            scene: derive_seed(seed, "scene"),
            noise: derive_seed(seed, "noise"),
            mask: derive_seed(seed, "mask"),
        }
    }

    /// Train and test images never share seeds. The photon level is not
    /// part of the label, so studies at different fluxes reuse positions.
    pub fn for_image(base: u64, split: Split, density: usize, index: usize) -> Self {
        Self::from_seed(derive_seed(base, &format!("{}/{density}/{index}", split.name())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseSpec {
    pub split: Split,
    pub density: usize,
    pub flux_mean: f64,
    pub sigma: f64,
    pub count: usize,
}

/// One simulated image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub split: Split,
    pub index: usize,
    pub density: usize,
    pub flux_mean: f64,
    /// Mask phase noise of the imaging system; 0 for the ideal mask.
    pub sigma: f64,
    pub seeds: ImageSeeds,
}

pub fn simulate(
    optics: &OpticsConfig,
    sim: &SimulationConfig,
    case: &Case,
) -> Result<(Scene, ObservedImage)> {
    let scene = random_scene(
        case.density,
        optics,
        case.flux_mean,
        sim.background,
        sim.flux_model,
        case.seeds.scene,
    )?;
    let pert = (case.sigma > 0.0).then_some(MaskPerturbation {
        sigma: case.sigma,
        seed: case.seeds.mask,
    });
    let mut model = PsfModel::new(optics, pert.as_ref())?;
    let clean = render_model(&scene, &mut model)?;
    Ok((scene, sample_poisson(&clean, case.seeds.noise)?))
}

/// A validated configuration with its dictionary.
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub dict: PsfStack,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dict = build_dictionary(&cfg.optics)?;
        Ok(Self { cfg, dict })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScores {
    /// After clustering, thresholding and flux refinement.
    pub post: MatchReport,
    /// Every positive voxel of the solution as a detection.
    pub pre: MatchReport,
    pub iterations: usize,
    pub detections: usize,
    pub flux_note: Option<String>,
}

/// One image solved by one algorithm. Failures are kept, not propagated.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub case: Case,
    pub algorithm: Algorithm,
    pub outcome: std::result::Result<CellScores, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub case: Case,
    pub algorithm: Algorithm,
    pub params: SolverParams,
}

fn run_job(lab: &Lab, model: &mut PsfModel, job: &Job) -> Result<CellScores> {
    let cfg = &lab.cfg;
    let (scene, image) = simulate(&cfg.optics, &cfg.simulation, &job.case)?;
    let params = SolverParams {
        background: cfg.simulation.background,
        ..job.params
    };
    let loc = localize(&image.to_f64(), &lab.dict, model, &params, &cfg.postproc)?;
    let score = |dets| match_detections(&scene, dets, &cfg.matching, &cfg.optics, cfg.matcher);
    Ok(CellScores {
        post: score(&loc.detections)?,
        pre: score(&loc.raw)?,
        iterations: loc.trace.len(),
        detections: loc.detections.len(),
        flux_note: loc.flux_note,
    })
}

/// Runs jobs on the current rayon pool; output order matches `jobs`.
pub fn run_jobs(lab: &Lab, jobs: &[Job]) -> Vec<Cell> {
    jobs.par_iter()
        .map_init(
            || PsfModel::new(&lab.cfg.optics, None),
            |model, job| {
                let outcome = match model {
                    Ok(model) => run_job(lab, model, job),
                    Err(e) => Err(Error::Config(e.to_string())),
                };
                Cell {
                    case: job.case,
                    algorithm: job.algorithm,
                    outcome: outcome.map_err(|e| e.to_string()),
                }
            },
        )
        .collect()
}

/// Runs `f` on a pool of `threads` workers (0 = one per core).
pub fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Aggregates over the successful cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub post: Option<Summary>,
    pub pre: Option<Summary>,
    pub failures: usize,
}

impl Batch {
    pub fn from_cells<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Self {
        let mut post = Vec::new();
        let mut pre = Vec::new();
        let mut failures = 0;
        for c in cells {
            match &c.outcome {
                Ok(s) => {
                    post.push(s.post.clone());
                    pre.push(s.pre.clone());
                }
                Err(_) => failures += 1,
            }
        }
        Self {
            post: aggregate(&post).ok(),
            pre: aggregate(&pre).ok(),
            failures,
        }
    }
}

pub fn evaluate_cases(lab: &Lab, algorithm: Algorithm, params: SolverParams, cases: &[Case]) -> Vec<Cell> {
    let jobs: Vec<Job> = cases
        .iter()
        .map(|&case| Job {
            case,
            algorithm,
            params,
        })
        .collect();
    run_jobs(lab, &jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub point: GridPoint,
    pub recall: f64,
    pub precision: f64,
    /// Mean per-image F1; failed images score 0.
    pub f1: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub algorithm: Algorithm,
    pub density: usize,
    pub flux_mean: f64,
    pub best: SolverParams,
    pub best_row: usize,
    pub rows: Vec<TuneRow>,
}

/// Grid search on the training images, maximizing mean F1. Ties go to the
/// earliest grid point. `a` does not enter the L1 variants, so points that
/// differ only in `a` are solved once and share their score.
pub fn tune(
    lab: &Lab,
    algorithm: Algorithm,
    density: usize,
    flux_mean: f64,
    base: SolverParams,
) -> Result<TuneOutcome> {
    let points = lab.cfg.tuning.points();
    if points.is_empty() {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    let cases = lab.cfg.cases(CaseSpec {
        split: Split::Train,
        density,
        flux_mean,
        sigma: 0.0,
        count: lab.cfg.simulation.n_train,
    });
    let l1 = algorithm.regularizer() == crate::solver::Regularizer::L1;
    let key = |p: &GridPoint| {
        let a = if l1 { 0.0 } else { p.a };
        (p.mu.to_bits(), a.to_bits(), p.beta.to_bits())
    };
    let mut unique: Vec<GridPoint> = Vec::new();
    let mut slot = HashMap::new();
    for p in &points {
        slot.entry(key(p)).or_insert_with(|| {
            unique.push(*p);
            unique.len() - 1
        });
    }
    let jobs: Vec<Job> = unique
        .iter()
        .flat_map(|p| {
            let params = p.apply(&base);
            cases.iter().map(move |&case| Job {
                case,
                algorithm,
                params,
            })
        })
        .collect();
    let cells = run_jobs(lab, &jobs);
    let n = cases.len();
    let scores: Vec<(f64, f64, f64, usize)> = cells
        .chunks(n)
        .map(|chunk| {
            let (mut r, mut p, mut f, mut fail) = (0.0, 0.0, 0.0, 0);
            for c in chunk {
                match &c.outcome {
                    Ok(s) => {
                        r += s.post.recall;
                        p += s.post.precision;
                        f += s.post.f1();
                    }
                    Err(_) => fail += 1,
                }
            }
            let nf = n as f64;
            (r / nf, p / nf, f / nf, fail)
        })
        .collect();
    let rows: Vec<TuneRow> = points
        .iter()
        .map(|p| {
            let (recall, precision, f1, failures) = scores[slot[&key(p)]];
            TuneRow {
                point: *p,
                recall,
                precision,
                f1,
                failures,
            }
        })
        .collect();
    let mut best_row = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.f1 > rows[best_row].f1 {
            best_row = i;
        }
    }
    Ok(TuneOutcome {
        algorithm,
        density,
        flux_mean,
        best: rows[best_row].point.apply(&base),
        best_row,
        rows,
    })
}

pub fn scoreboard_csv(outcome: &TuneOutcome) -> String {
    let mut out = String::from("mu,a,beta,recall,precision,f1,failures,best\n");
    for (i, r) in outcome.rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{},{}",
            r.point.mu,
            r.point.a,
            r.point.beta,
            r.recall,
            r.precision,
            r.f1,
            r.failures,
            u8::from(i == outcome.best_row)
        );
    }
    out
}

/// Which parts of the full experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sections {
    pub tables: bool,
    pub stability: bool,
    pub low_photon: bool,
}

impl Default for Sections {
    fn default() -> Self {
        Self {
            tables: true,
            stability: true,
            low_photon: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub density: usize,
    pub flux_mean: f64,
    pub sigma: f64,
    pub algorithm: Algorithm,
    pub batch: Batch,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    /// Every algorithm at every density, standard photon level.
    pub tables: Vec<TableRow>,
    /// KL-NC under increasing mask noise.
    pub stability: Vec<TableRow>,
    pub low_photon: Vec<TableRow>,
    pub cells: Vec<Cell>,
}

struct Group {
    algorithm: Algorithm,
    spec: CaseSpec,
    low_photon: bool,
    section: usize,
}

/// Runs the test-split experiment. Identical (image, algorithm) jobs
/// requested by several sections are solved once.
pub fn run_experiment(lab: &Lab, sections: Sections) -> ExperimentReport {
    let cfg = &lab.cfg;
    let sim = &cfg.simulation;
    let mut groups = Vec::new();
    if sections.tables {
        for &density in &sim.densities {
            for &algorithm in &cfg.algorithms {
                groups.push(Group {
                    algorithm,
                    spec: CaseSpec {
                        split: Split::Test,
                        density,
                        flux_mean: sim.flux_mean,
                        sigma: 0.0,
                        count: sim.n_test,
                    },
                    low_photon: false,
                    section: 0,
                });
            }
        }
    }
    if sections.stability {
        for &sigma in &cfg.stability.sigmas {
            groups.push(Group {
                algorithm: Algorithm::KlNc,
                spec: CaseSpec {
                    split: Split::Test,
                    density: cfg.stability.density,
                    flux_mean: sim.flux_mean,
                    sigma,
                    count: sim.n_test,
                },
                low_photon: false,
                section: 1,
            });
        }
    }
    if sections.low_photon {
        for &algorithm in &cfg.algorithms {
            groups.push(Group {
                algorithm,
                spec: CaseSpec {
                    split: Split::Test,
                    density: cfg.low_photon.density,
                    flux_mean: cfg.low_photon.flux_mean,
                    sigma: 0.0,
                    count: sim.n_test,
                },
                low_photon: true,
                section: 2,
            });
        }
    }

    let job_key = |j: &Job| format!("{:?}|{:?}|{:?}", j.case, j.algorithm, j.params);
    let mut jobs: Vec<Job> = Vec::new();
    let mut index = HashMap::new();
    let group_jobs: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            let params = cfg.solver.get(g.algorithm, g.low_photon);
            cfg.cases(g.spec)
                .into_iter()
                .map(|case| {
                    let job = Job {
                        case,
                        algorithm: g.algorithm,
                        params,
                    };
                    *index.entry(job_key(&job)).or_insert_with(|| {
                        jobs.push(job);
                        jobs.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    let cells = run_jobs(lab, &jobs);

    let mut report = ExperimentReport::default();
    for (g, ids) in groups.iter().zip(&group_jobs) {
        let row = TableRow {
            density: g.spec.density,
            flux_mean: g.spec.flux_mean,
            sigma: g.spec.sigma,
            algorithm: g.algorithm,
            batch: Batch::from_cells(ids.iter().map(|&i| &cells[i])),
        };
        match g.section {
            0 => report.tables.push(row),
            1 => report.stability.push(row),
            _ => report.low_photon.push(row),
        }
    }
    report.cells = cells;
    report
}

fn table_csv(rows: &[TableRow], pre: bool) -> String {
    let mut out = String::from(
        "density,flux_mean,sigma,algorithm,images,recall,precision,f1,true_positives,false_positives,false_negatives,failures\n",
    );
    for r in rows {
        let s = if pre { &r.batch.pre } else { &r.batch.post };
        let _ = write!(out, "{},{},{},{},", r.density, r.flux_mean, r.sigma, r.algorithm);
        match s {
            Some(s) => {
                let _ = write!(
                    out,
                    "{},{:.6},{:.6},{:.6},{},{},{}",
                    s.images,
                    s.recall,
                    s.precision,
                    s.f1(),
                    s.true_positives,
                    s.false_positives,
                    s.false_negatives
                );
            }
            None => out.push_str("0,,,,,,"),
        }
        let _ = writeln!(out, ",{}", r.batch.failures);
    }
    out
}

fn cells_csv(cells: &[Cell]) -> String {
    let mut out = String::from(
        "split,index,density,flux_mean,sigma,scene_seed,noise_seed,mask_seed,algorithm,recall,precision,raw_recall,raw_precision,detections,iterations,note\n",
    );
    for c in cells {
        let k = &c.case;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},",
            k.split.name(),
            k.index,
            k.density,
            k.flux_mean,
            k.sigma,
            k.seeds.scene,
            k.seeds.noise,
            k.seeds.mask,
            c.algorithm
        );
        let clean = |s: &str| s.replace([',', '\n'], ";");
        match &c.outcome {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "{:.6},{:.6},{:.6},{:.6},{},{},{}",
                    s.post.recall,
                    s.post.precision,
                    s.pre.recall,
                    s.pre.precision,
                    s.detections,
                    s.iterations,
                    s.flux_note.as_deref().map(clean).unwrap_or_default()
                );
            }
            Err(e) => {
                let _ = writeln!(out, ",,,,,,failed: {}", clean(e));
            }
        }
    }
    out
}

/// Writes a CSV artifact whose first line records the configuration hash.
pub fn write_csv(dir: &Path, name: &str, hash: &str, body: &str) -> Result<String> {
    let text = format!("# config_hash={hash}\n{body}");
    write_atomic(dir.join(name), text.as_bytes())?;
    Ok(name.to_string())
}

/// Writes tables, histograms, the stability curve and per-image records.
/// Returns the artifact names.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = cfg.hash();
    let mut names = Vec::new();
    if !report.tables.is_empty() {
        names.push(write_csv(dir, "table_post.csv", &hash, &table_csv(&report.tables, false))?);
        names.push(write_csv(dir, "table_pre.csv", &hash, &table_csv(&report.tables, true))?);
        for r in &report.tables {
            if let Some(s) = &r.batch.post {
                let name = format!("hist_{}_{}.csv", r.algorithm, r.density);
                names.push(write_csv(dir, &name, &hash, &s.flux_histogram.to_csv())?);
            }
        }
    }
    if !report.stability.is_empty() {
        names.push(write_csv(dir, "stability.csv", &hash, &table_csv(&report.stability, false))?);
    }
    if !report.low_photon.is_empty() {
        names.push(write_csv(dir, "low_photon.csv", &hash, &table_csv(&report.low_photon, false))?);
    }
    names.push(write_csv(dir, "cells.csv", &hash, &cells_csv(&report.cells))?);
    Ok(names)
}

/// Run record. Everything except `meta` is a deterministic function of the
/// command and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Seeds of the inputs that are not derived from `config`.
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
    pub meta: RunMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMeta {
    pub started_unix: u64,
    pub elapsed_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            meta: RunMeta::default(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(dir.join("manifest.json"), self)
    }
}
