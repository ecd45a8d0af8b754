use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};

use covmap::channel::{ChannelConfig, ChannelParams};
use covmap::geometry::Point;
use covmap::ingest::{self, Bounds, CityModel, LoadDefaults, SynthCityConfig};
use covmap::losmodel::PolyCoeffTable;
use covmap::manifold::{self, ExportFormat, ManifoldGrid, Method, MethodConfigs};
use covmap::mlcov::{self, MlTrainConfig, WeightModel};
use covmap::rng::{item_stream, Purpose};
use covmap::sgcov::{self, CoefficientDb, SgTrainConfig};
use covmap::simcore::{Engine, SimConfig};

#[derive(Parser)]
#[command(name = "covmap", version, about = "Downlink coverage manifolds over building maps")]
struct Cli {
    /// Master seed; overrides every seed in the config file.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with optional sections: channel, sim, synth, sg_train,
    /// ml_train, corpus, bench, spacing_m, los_table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CityArgs {
    /// Directory holding buildings.json, basestations.csv and optionally bounds.json.
    #[arg(long)]
    city: PathBuf,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Region "x0,y0,x1,y1" in meters; defaults to the city bounds.
    #[arg(long, value_parser = parse_bounds)]
    region: Option<Bounds>,
    #[arg(long)]
    spacing: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Preset {
    Urban,
    Suburban,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic city.
    GenCity {
        #[arg(long, value_enum, default_value = "urban")]
        preset: Preset,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo coverage manifold.
    Simulate {
        #[command(flatten)]
        city: CityArgs,
        #[arg(long, value_enum, default_value = "accelerated")]
        engine: Engine,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the closed-form coefficient database.
    TrainSg {
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form coverage manifold.
    CovSg {
        #[command(flatten)]
        city: CityArgs,
        /// Coefficient database; the built-in reference rows when omitted.
        #[arg(long)]
        db: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train grid weights from labelled samples.
    TrainMl {
        /// Cities to sample; repeatable.
        #[arg(long, required_unless_present = "corpus")]
        city: Vec<PathBuf>,
        /// Existing JSON-lines corpus instead of sampling cities.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Also write the sampled corpus here.
        #[arg(long)]
        corpus_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-weight coverage manifold.
    CovMl {
        #[command(flatten)]
        city: CityArgs,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss statistics of one manifold against a reference.
    Compare {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Apply the neighborhood exclusion rule using this city.
        #[arg(long)]
        city: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-point latency of several methods on sampled receive points.
    Bench {
        #[command(flatten)]
        city: CityArgs,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "traditional,accelerated,sg")]
        methods: Vec<Method>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a saved manifold as CSV or PGM.
    Export {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x0, y0, x1, y1] if x1 >= x0 && y1 >= y0 => Ok(Bounds::new(x0, y0, x1, y1)),
        _ => Err("expected x0,y0,x1,y1 with x0 <= x1 and y0 <= y1".into()),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CorpusConfig {
    samples: usize,
    /// Extra copies of each city with resampled building heights.
    height_variants: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { samples: 2000, height_variants: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchConfig {
    n_mrp: usize,
    warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_mrp: 100, warmup: 5 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    channel: ChannelConfig,
    sim: SimConfig,
    synth: Option<SynthCityConfig>,
    sg_train: SgTrainConfig,
    ml_train: MlTrainConfig,
    corpus: CorpusConfig,
    bench: BenchConfig,
    spacing_m: Option<f64>,
    los_table: Option<PathBuf>,
}

impl RunConfig {
    fn load(path: Option<&Path>, seed: u64) -> Result<Self> {
        let mut c: RunConfig = match path {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        c.sim.seed = seed;
        c.sg_train.seed = seed;
        if let Some(s) = &mut c.synth {
            s.seed = seed;
        }
        Ok(c)
    }

    fn channel(&self) -> Result<ChannelParams> {
        Ok(ChannelParams::from_config(&self.channel)?)
    }

    fn table(&self) -> Result<PolyCoeffTable> {
        Ok(match &self.los_table {
            Some(p) => PolyCoeffTable::load(p)?,
            None => PolyCoeffTable::standard(),
        })
    }
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Timings {
    wall_ms: f64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'static str,
    seed: u64,
    threads: usize,
    args: Vec<String>,
    config: &'a RunConfig,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    timings: Timings,
}

fn entries(paths: &[PathBuf]) -> Vec<FileEntry> {
    paths
        .iter()
        .map(|p| FileEntry {
            path: p.display().to_string(),
            bytes: std::fs::metadata(p).map(|m| m.len()).unwrap_or(0),
        })
        .collect()
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run_manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

fn city_files(dir: &Path) -> Vec<PathBuf> {
    let mut v = vec![dir.join("buildings.json"), dir.join("basestations.csv")];
    if dir.join("bounds.json").exists() {
        v.push(dir.join("bounds.json"));
    }
    v
}

fn load_city(dir: &Path, seed: u64) -> Result<CityModel> {
    let bounds_path = dir.join("bounds.json");
    let bounds = if bounds_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(&bounds_path)?).context("parsing bounds.json")?)
    } else {
        None
    };
    let defaults = LoadDefaults { seed, bounds, ..LoadDefaults::default() };
    ingest::load_city(&dir.join("buildings.json"), &dir.join("basestations.csv"), &defaults)
        .with_context(|| format!("loading city from {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn save_grid(grid: &ManifoldGrid, path: &Path) -> Result<()> {
    std::fs::write(path, grid.to_json()).with_context(|| format!("writing {}", path.display()))
}

fn load_grid(path: &Path) -> Result<ManifoldGrid> {
    Ok(ManifoldGrid::from_json(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?)
}

fn run_manifold(city: &CityModel, grid: &GridArgs, method: Method, cfg: &MethodConfigs, rc: &RunConfig) -> Result<ManifoldGrid> {
    let region = grid.region.unwrap_or(city.bounds());
    let spacing = grid.spacing.or(rc.spacing_m).unwrap_or(manifold::DEFAULT_SPACING_M);
    Ok(manifold::compute_manifold(city, &region, spacing, method, cfg)?)
}

fn method_configs(rc: &RunConfig) -> Result<MethodConfigs> {
    Ok(MethodConfigs {
        sim: rc.sim.clone(),
        ch: rc.channel()?,
        table: rc.table()?,
        sg_db: None,
        ml_model: None,
    })
}

/// Receive points outside buildings, uniform over the city bounds.
fn sample_mrps(city: &CityModel, n: usize, seed: u64) -> Vec<Point> {
    let b = city.bounds();
    let mut rng = item_stream(seed, 0, Purpose::Sampling);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n && tries < 1000 * n.max(1) {
        tries += 1;
        let p = Point::new(rng.random_range(b.x0..=b.x1), rng.random_range(b.y0..=b.y1));
        if city.building_at(p).is_none() {
            out.push(p);
        }
    }
    out
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    let rc = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let started = Instant::now();
    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let mut outputs: Vec<PathBuf> = Vec::new();

    let (command, out) = match &cli.cmd {
        Cmd::GenCity { preset, out } => {
            let cfg = match (&rc.synth, preset) {
                (Some(s), _) => s.clone(),
                (None, Preset::Urban) => SynthCityConfig::urban(cli.seed),
                (None, Preset::Suburban) => SynthCityConfig::suburban(cli.seed),
            };
            let city = ingest::generate_city(&cfg)?;
            std::fs::create_dir_all(out)?;
            let files = city_files(out);
            ingest::write_city(&city, &files[0], &files[1])?;
            write_json(&out.join("bounds.json"), &city.bounds())?;
            outputs.extend([files[0].clone(), files[1].clone(), out.join("bounds.json")]);
            ("gen-city", out.clone())
        }
        Cmd::Simulate { city, engine, grid, out } => {
            let c = load_city(&city.city, cli.seed)?;
            inputs.extend(city_files(&city.city));
            let method = match engine {
                Engine::Traditional => Method::Traditional,
                Engine::Accelerated => Method::Accelerated,
            };
            let g = run_manifold(&c, grid, method, &method_configs(&rc)?, &rc)?;
            save_grid(&g, out)?;
            outputs.push(out.clone());
            ("simulate", out.clone())
        }
        Cmd::TrainSg { out } => {
            let ch = rc.channel()?;
            let db = sgcov::train_coefficients(&rc.sg_train, &ch)?;
            db.save(out)?;
            outputs.push(out.clone());
            ("train-sg", out.clone())
        }
        Cmd::CovSg { city, db, grid, out } => {
            let c = load_city(&city.city, cli.seed)?;
            inputs.extend(city_files(&city.city));
            let mut cfg = method_configs(&rc)?;
            cfg.sg_db = Some(match db {
                Some(p) => {
                    inputs.push(p.clone());
                    CoefficientDb::load(p)?
                }
                None => CoefficientDb::reference(),
            });
            let g = run_manifold(&c, grid, Method::Sg, &cfg, &rc)?;
            save_grid(&g, out)?;
            outputs.push(out.clone());
            ("cov-sg", out.clone())
        }
        Cmd::TrainMl { city, corpus, corpus_out, out } => {
            let records = match corpus {
                Some(p) => {
                    inputs.push(p.clone());
                    mlcov::read_corpus(p)?
                }
                None => {
                    let mut cities = Vec::new();
                    for (k, dir) in city.iter().enumerate() {
                        inputs.extend(city_files(dir));
                        let base = load_city(dir, cli.seed)?;
                        let omega = base.rayleigh_scale_estimate().unwrap_or(rc.sim.omega);
                        for v in 0..rc.corpus.height_variants {
                            let s = cli.seed ^ ((k as u64) << 32) ^ (v as u64 + 1);
                            cities.push(ingest::resample_heights(&base, omega, s)?);
                        }
                        cities.push(base);
                    }
                    let t = &rc.ml_train;
                    mlcov::generate_corpus(&cities, rc.corpus.samples, t.dim, t.side_length_m, cli.seed)?
                }
            };
            if let Some(p) = corpus_out {
                mlcov::write_corpus(p, &records)?;
                outputs.push(p.clone());
            }
            let samples: Vec<_> = records.iter().map(|r| r.sample.clone()).collect();
            let labels: Vec<_> = records.iter().map(|r| r.unblocked.clone()).collect();
            let (model, report) = mlcov::train_weights(&samples, &labels, &rc.ml_train)?;
            model.save(out)?;
            let report_path = out.with_extension("report.json");
            write_json(&report_path, &report)?;
            outputs.extend([out.clone(), report_path]);
            ("train-ml", out.clone())
        }
        Cmd::CovMl { city, model, grid, out } => {
            let c = load_city(&city.city, cli.seed)?;
            inputs.extend(city_files(&city.city));
            inputs.push(model.clone());
            let mut cfg = method_configs(&rc)?;
            cfg.ml_model = Some(WeightModel::load(model)?);
            let g = run_manifold(&c, grid, Method::Ml, &cfg, &rc)?;
            save_grid(&g, out)?;
            outputs.push(out.clone());
            ("cov-ml", out.clone())
        }
        Cmd::Compare { test, reference, city, out } => {
            let t = load_grid(test)?;
            let r = load_grid(reference)?;
            inputs.extend([test.clone(), reference.clone()]);
            let mask = match city {
                Some(dir) => {
                    inputs.extend(city_files(dir));
                    Some(manifold::exclusion_mask(&load_city(dir, cli.seed)?, &t, rc.sim.r_sun_m))
                }
                None => None,
            };
            let stats = manifold::compare_manifolds(&t, &r, mask.as_deref())?;
            write_json(out, &stats)?;
            outputs.push(out.clone());
            ("compare", out.clone())
        }
        Cmd::Bench { city, methods, db, model, out } => {
            let c = load_city(&city.city, cli.seed)?;
            inputs.extend(city_files(&city.city));
            let mut cfg = method_configs(&rc)?;
            if methods.contains(&Method::Sg) {
                cfg.sg_db = Some(match db {
                    Some(p) => {
                        inputs.push(p.clone());
                        CoefficientDb::load(p)?
                    }
                    None => CoefficientDb::reference(),
                });
            }
            if methods.contains(&Method::Ml) {
                let Some(p) = model else { bail!("--model is required to bench the ml method") };
                inputs.push(p.clone());
                cfg.ml_model = Some(WeightModel::load(p)?);
            }
            let mrps = sample_mrps(&c, rc.bench.n_mrp, cli.seed);
            let report = manifold::bench(&c, methods, &mrps, &cfg, rc.bench.warmup)?;
            #[derive(Serialize)]
            struct BenchOut<'a> {
                mrps: &'a [Point],
                report: &'a manifold::BenchReport,
            }
            write_json(out, &BenchOut { mrps: &mrps, report: &report })?;
            outputs.push(out.clone());
            ("bench", out.clone())
        }
        Cmd::Export { grid, format, out } => {
            let g = load_grid(grid)?;
            inputs.push(grid.clone());
            manifold::export_manifold(&g, out, *format)?;
            outputs.push(out.clone());
            ("export", out.clone())
        }
    };

    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        threads: rayon::current_num_threads(),
        args: std::env::args().collect(),
        config: &rc,
        inputs: entries(&inputs),
        outputs: entries(&outputs),
        timings: Timings { wall_ms: started.elapsed().as_secs_f64() * 1e3 },
    };
    write_json(&manifest_path(&out), &manifest)?;
    Ok(())
}
