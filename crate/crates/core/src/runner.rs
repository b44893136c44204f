//! Experiment pipelines behind the command line: flat `key=value` configuration,
//! the four commands and their CSV/JSON artifacts, and a run manifest that
//! records seeds, stage wall-times and a checksum for every file written.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{bs_call, bs_digital};
use crate::error::{Error, Result};
use crate::hedging::{backtest_on, table1, DeltaSource, HedgeReport, Table1Cell, Table1Plan};
use crate::instruments::{Instrument, InstrumentKind};
use crate::lsmc_poly::MAX_DEGREE;
use crate::market_sim::{simulate, MarketConfig};
use crate::methods::{fit_on, training_set, FittedModel, Method, MethodSettings};
use crate::seeds::substream;

pub const MANIFEST: &str = "manifest.json";

/// Spot grid of the pricing curves.
pub const CURVE_SPOTS: (usize, usize) = (60, 160);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    Hedge,
    Table1,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Hedge => "hedge",
            Command::Table1 => "table1",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Command::Simulate),
            "train" => Ok(Command::Train),
            "hedge" => Ok(Command::Hedge),
            "table1" => Ok(Command::Table1),
            other => Err(Error::Config(format!("unknown command `{other}`"))),
        }
    }
}

/// Fully resolved run configuration. Every seed is explicit; the default root seed is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub market: MarketConfig<f64>,
    pub kind: InstrumentKind,
    pub strike: f64,
    pub method: Method,
    pub seed: u64,
    /// training paths for `train`/`hedge`, dumped paths for `simulate`
    pub paths: usize,
    pub test_paths: usize,
    pub out: PathBuf,
    pub settings: MethodSettings<f64>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            market: MarketConfig::default(),
            kind: InstrumentKind::EuropeanCall,
            strike: 110.0,
            method: Method::DiffNn,
            seed: 0,
            paths: 7000,
            test_paths: 10_000,
            out: PathBuf::from("out"),
            settings: MethodSettings::default(),
            sizes: vec![1000, 3000, 5000, 7000],
            replicates: 5,
            methods: vec![Method::Analytic, Method::LsmcPoly, Method::LsmcNn, Method::DiffNn],
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn join<V: fmt::Display>(values: &[V]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn kind_name(kind: InstrumentKind) -> &'static str {
    match kind {
        InstrumentKind::EuropeanCall => "european_call",
        InstrumentKind::Digital => "digital",
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 23] = [
        "instrument.kind",
        "instrument.strike",
        "market.maturity",
        "market.n_steps",
        "market.r",
        "market.s0",
        "market.sigma",
        "run.method",
        "run.out",
        "run.paths",
        "run.seed",
        "run.test_paths",
        "table1.methods",
        "table1.replicates",
        "table1.sizes",
        "train.bandwidth",
        "train.batch_size",
        "train.degree",
        "train.epochs",
        "train.hidden_layers",
        "train.hidden_width",
        "train.lambda",
        "train.learning_rate",
    ];

    /// Sets one key. The command-line shorthands `seed`, `out`, `method` and
    /// `paths` map to their `run.` keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = match key {
            "seed" | "out" | "method" | "paths" => format!("run.{key}"),
            k => k.to_string(),
        };
        let v = value.trim();
        match key.as_str() {
            "market.s0" => self.market.s0 = parse(&key, v)?,
            "market.sigma" => self.market.sigma = parse(&key, v)?,
            "market.r" => self.market.r = parse(&key, v)?,
            "market.maturity" => self.market.maturity = parse(&key, v)?,
            "market.n_steps" => self.market.n_steps = parse(&key, v)?,
            "instrument.kind" => {
                self.kind = match v {
                    "european_call" | "call" => InstrumentKind::EuropeanCall,
                    "digital" => InstrumentKind::Digital,
                    _ => return Err(Error::Config(format!("`{key}` must be european_call or digital, got `{v}`"))),
                }
            }
            "instrument.strike" => self.strike = parse(&key, v)?,
            "run.method" => self.method = v.parse()?,
            "run.seed" => self.seed = parse(&key, v)?,
            "run.paths" => self.paths = parse(&key, v)?,
            "run.test_paths" => self.test_paths = parse(&key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "train.degree" => self.settings.degree = parse(&key, v)?,
            "train.lambda" => self.settings.lambda = parse(&key, v)?,
            "train.epochs" => self.settings.epochs = parse(&key, v)?,
            "train.batch_size" => self.settings.batch_size = parse(&key, v)?,
            "train.learning_rate" => self.settings.learning_rate = parse(&key, v)?,
            "train.hidden_width" => self.settings.hidden_width = parse(&key, v)?,
            "train.hidden_layers" => self.settings.hidden_layers = parse(&key, v)?,
            "train.bandwidth" => self.settings.bandwidth = if v == "auto" { None } else { Some(parse(&key, v)?) },
            "table1.sizes" => self.sizes = parse_list(&key, v)?,
            "table1.replicates" => self.replicates = parse(&key, v)?,
            "table1.methods" => {
                self.methods =
                    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect::<Result<_>>()?
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key `{key}` (known keys: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key with its resolved value, sorted by key.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let s = &self.settings;
        let pairs = [
            ("market.s0", self.market.s0.to_string()),
            ("market.sigma", self.market.sigma.to_string()),
            ("market.r", self.market.r.to_string()),
            ("market.maturity", self.market.maturity.to_string()),
            ("market.n_steps", self.market.n_steps.to_string()),
            ("instrument.kind", kind_name(self.kind).to_string()),
            ("instrument.strike", self.strike.to_string()),
            ("run.method", self.method.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.paths", self.paths.to_string()),
            ("run.test_paths", self.test_paths.to_string()),
            ("run.out", self.out.display().to_string()),
            ("train.degree", s.degree.to_string()),
            ("train.lambda", s.lambda.to_string()),
            ("train.epochs", s.epochs.to_string()),
            ("train.batch_size", s.batch_size.to_string()),
            ("train.learning_rate", s.learning_rate.to_string()),
            ("train.hidden_width", s.hidden_width.to_string()),
            ("train.hidden_layers", s.hidden_layers.to_string()),
            ("train.bandwidth", s.bandwidth.map_or("auto".to_string(), |b| b.to_string())),
            ("table1.sizes", join(&self.sizes)),
            ("table1.replicates", self.replicates.to_string()),
            ("table1.methods", join(&self.methods)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn instrument(&self) -> Result<Instrument<f64>> {
        Instrument::new(self.kind, self.strike, self.market.maturity)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.instrument()?;
        if self.paths == 0 || self.test_paths == 0 {
            return Err(Error::Config("run.paths and run.test_paths must be positive".into()));
        }
        if self.settings.degree > MAX_DEGREE {
            return Err(Error::Config(format!("train.degree must be at most {MAX_DEGREE}")));
        }
        if !(self.settings.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.settings.lambda >= 0.0) {
            return Err(Error::Config("train.lambda must be non-negative".into()));
        }
        if matches!(self.settings.bandwidth, Some(b) if !(b > 0.0)) {
            return Err(Error::Config("train.bandwidth must be positive or auto".into()));
        }
        if self.sizes.is_empty() || self.replicates == 0 {
            return Err(Error::Config("table1.sizes and table1.replicates must be non-empty".into()));
        }
        Ok(())
    }

    pub fn train_seed(&self) -> u64 {
        substream(self.seed, &format!("sim.train.{}.0", self.paths))
    }

    pub fn test_seed(&self) -> u64 {
        substream(self.seed, "sim.test")
    }

    pub fn table1_plan(&self) -> Result<Table1Plan<f64>> {
        Ok(Table1Plan {
            market: self.market,
            instrument: self.instrument()?,
            methods: self.methods.clone(),
            sizes: self.sizes.clone(),
            replicates: self.replicates,
            root_seed: self.seed,
            n_test_paths: self.test_paths,
            settings: self.settings.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// `running` while in progress, then `ok` or `error`
    pub status: String,
    pub error: Option<String>,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub train_test_disjoint: Option<bool>,
    pub metrics: BTreeMap<String, f64>,
    pub stages: Vec<Stage>,
    /// file name -> sha256
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Re-hashes every output listed in the manifest in `dir`; returns the files that differ.
pub fn verify_outputs(dir: &Path) -> Result<Vec<String>> {
    let m = RunManifest::read(dir)?;
    let mut bad = Vec::new();
    for (name, sum) in &m.outputs {
        if sha256_file(&dir.join(name)).ok().as_ref() != Some(sum) {
            bad.push(name.clone());
        }
    }
    Ok(bad)
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn save(&self) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn stage<R>(&mut self, name: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let t = Instant::now();
        let r = f();
        self.manifest.stages.push(Stage { name: name.to_string(), seconds: t.elapsed().as_secs_f64() });
        r
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        drop(w);
        self.manifest.outputs.insert(name.to_string(), sha256_file(&path)?);
        Ok(())
    }

    fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

/// Runs `cmd`, writing every artifact and `manifest.json` into `cfg.out`.
/// The manifest is written before the first stage and finalised afterwards,
/// also when a stage fails.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    let mut seeds = BTreeMap::from([("root".to_string(), cfg.seed)]);
    let mut disjoint = None;
    match cmd {
        Command::Simulate => {
            seeds.insert("sim.paths".into(), substream(cfg.seed, "sim.paths"));
        }
        Command::Train => {
            seeds.insert("sim.train".into(), cfg.train_seed());
        }
        Command::Hedge => {
            seeds.insert("sim.train".into(), cfg.train_seed());
            seeds.insert("sim.test".into(), cfg.test_seed());
            disjoint = Some(cfg.train_seed() != cfg.test_seed());
        }
        Command::Table1 => {
            let plan = cfg.table1_plan()?;
            seeds.insert("sim.test".into(), plan.test_seed());
            let mut all_disjoint = true;
            for &size in &plan.sizes {
                for rep in 0..plan.replicates {
                    let s = plan.train_seed(size, rep);
                    all_disjoint &= s != plan.test_seed();
                    seeds.insert(format!("sim.train.{size}.{rep}"), s);
                }
            }
            disjoint = Some(all_disjoint);
        }
    }
    let mut run = Run {
        dir: cfg.out.clone(),
        manifest: RunManifest {
            command: cmd.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            error: None,
            config: cfg.entries(),
            seeds,
            train_test_disjoint: disjoint,
            metrics: BTreeMap::new(),
            stages: Vec::new(),
            outputs: BTreeMap::new(),
        },
    };
    run.save()?;
    let outcome = match cmd {
        Command::Simulate => cmd_simulate(&mut run, cfg),
        Command::Train => cmd_train(&mut run, cfg).map(|_| ()),
        Command::Hedge => cmd_hedge(&mut run, cfg),
        Command::Table1 => cmd_table1(&mut run, cfg),
    };
    match outcome {
        Ok(()) => {
            run.manifest.status = "ok".into();
            run.save()?;
            Ok(run.manifest)
        }
        Err(e) => {
            run.manifest.status = "error".into();
            run.manifest.error = Some(e.to_string());
            run.save()?;
            Err(e)
        }
    }
}

fn cmd_simulate(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let batch = run.stage("simulate", || simulate(&cfg.market, cfg.paths, substream(cfg.seed, "sim.paths")))?;
    run.write("paths.csv", |w| batch.write_csv(w))
}

fn cmd_train(run: &mut Run, cfg: &RunConfig) -> Result<FittedModel<f64>> {
    if cfg.method == Method::Analytic {
        return Err(Error::Config("train needs a learned method: lsmc_poly, lsmc_nn or diff_nn".into()));
    }
    let inst = cfg.instrument()?;
    let seed = cfg.train_seed();
    let batch = run.stage("simulate", || simulate(&cfg.market, cfg.paths, seed))?;
    let ts = run.stage("label", || training_set(cfg.method, &batch, &inst, &cfg.settings, seed))?;
    let model = run
        .stage("fit", || fit_on(cfg.method, ts.as_ref(), &cfg.settings, seed))
        .map_err(|e| Error::Config(format!("{}: training failed: {e}", cfg.method)))?;
    if let Some(ts) = &ts {
        run.write("training_set.csv", |w| ts.write_csv(w))?;
    }
    run.write_json("model.json", &model)?;
    if let FittedModel::LsmcNn { net } | FittedModel::DiffNn { net } = &model {
        run.write("loss.csv", |w| net.write_loss_csv(w))?;
    }
    let curve = pricing_curve(&model, &cfg.market, &inst)?;
    run.write("curve.csv", |w| write_curve_csv(&curve, w))?;
    let (p, d) = curve_rmse(&curve, CURVE_SPOTS.0 as f64, CURVE_SPOTS.1 as f64);
    run.manifest.metrics.insert("curve.price_rmse".into(), p);
    run.manifest.metrics.insert("curve.delta_rmse".into(), d);
    Ok(model)
}

/// Summary of one backtest without the per-path vector.
#[derive(Debug, Clone, Serialize)]
struct HedgeSummary<'a> {
    method: &'a str,
    rel_error: f64,
    mean_pnl_rel: f64,
    premium: f64,
    n_test_paths: usize,
    test_seed: u64,
}

impl<'a> From<&'a HedgeReport<f64>> for HedgeSummary<'a> {
    fn from(r: &'a HedgeReport<f64>) -> Self {
        HedgeSummary {
            method: &r.method,
            rel_error: r.rel_error,
            mean_pnl_rel: r.mean_pnl_rel,
            premium: r.premium,
            n_test_paths: r.n_test_paths,
            test_seed: r.seed,
        }
    }
}

fn cmd_hedge(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    if cfg.train_seed() == cfg.test_seed() {
        return Err(Error::Config("training and test seeds coincide".into()));
    }
    let inst = cfg.instrument()?;
    let model = if cfg.method == Method::Analytic { FittedModel::Analytic } else { cmd_train(run, cfg)? };
    let test = run.stage("simulate.test", || simulate(&cfg.market, cfg.test_paths, cfg.test_seed()))?;
    let hedged = run.stage("backtest", || backtest_on(DeltaSource::Model(&model), &test, &inst))?;
    let report = &hedged.report;
    run.write("pnl.csv", |w| report.write_pnl_csv(w))?;
    run.write("hist.csv", |w| report.write_hist_csv(w, true))?;
    run.write_json("report.json", &HedgeSummary::from(report))?;
    run.manifest.metrics.insert("rel_error".into(), report.rel_error);
    Ok(())
}

#[derive(Serialize)]
struct Table1Json<'a> {
    config: BTreeMap<String, String>,
    plan: &'a Table1Plan<f64>,
    test_seed: u64,
    analytic: f64,
    no_hedge: f64,
    /// method -> size -> median rel_error
    grid: &'a BTreeMap<Method, BTreeMap<usize, f64>>,
    cells: &'a [Table1Cell<f64>],
}

fn cmd_table1(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let plan = cfg.table1_plan()?;
    let out = run.stage("grid", || table1(&plan))?;
    let res = &out.result;
    run.write_json(
        "table1.json",
        &Table1Json {
            config: cfg.entries().into_iter().filter(|(k, _)| k != "run.out").collect(),
            plan: &plan,
            test_seed: res.test_seed,
            analytic: res.analytic,
            no_hedge: res.no_hedge,
            grid: &res.medians,
            cells: &res.cells,
        },
    )?;
    for r in &out.runs {
        run.write(&format!("pnl_{}.csv", r.report.method), |w| r.report.write_pnl_csv(w))?;
    }
    run.write("hist.csv", |w| {
        for (k, r) in out.runs.iter().enumerate() {
            r.report.write_hist_csv(&mut *w, k == 0)?;
        }
        Ok(())
    })?;
    run.manifest.metrics.insert("analytic".into(), res.analytic);
    run.manifest.metrics.insert("no_hedge".into(), res.no_hedge);
    for (method, by_size) in &res.medians {
        for (size, v) in by_size {
            run.manifest.metrics.insert(format!("{method}.{size}"), *v);
        }
    }
    let failed: Vec<&Table1Cell<f64>> = res.cells.iter().filter(|c| c.error.is_some()).collect();
    if let Some(first) = failed.first() {
        return Err(Error::State(format!(
            "{} of {} table1 cells failed; first: {} size {} replicate {}: {}",
            failed.len(),
            res.cells.len(),
            first.method,
            first.size,
            first.replicate,
            first.error.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub spot: f64,
    pub model_price: f64,
    pub model_delta: f64,
    pub bs_price: f64,
    pub bs_delta: f64,
}

/// Model and analytic price/delta at the first rebalance date over spots 60..=160.
pub fn pricing_curve(
    model: &FittedModel<f64>,
    market: &MarketConfig<f64>,
    inst: &Instrument<f64>,
) -> Result<Vec<CurvePoint>> {
    let grid = market.grid();
    let (date, t) = (1, grid[1]);
    let tau = inst.maturity - t;
    let mut eval = model.evaluator();
    (CURVE_SPOTS.0..=CURVE_SPOTS.1)
        .map(|s| {
            let spot = s as f64;
            let (model_price, model_delta) = eval.quote(market, inst, date, t, spot)?;
            let bs = match inst.kind {
                InstrumentKind::EuropeanCall => bs_call(spot, inst.strike, market.sigma, tau, market.r)?,
                InstrumentKind::Digital => bs_digital(spot, inst.strike, market.sigma, tau, market.r)?,
            };
            Ok(CurvePoint { spot, model_price, model_delta, bs_price: bs.price, bs_delta: bs.delta })
        })
        .collect()
}

/// `(price RMSE, delta RMSE)` over points with `lo <= spot <= hi`.
pub fn curve_rmse(curve: &[CurvePoint], lo: f64, hi: f64) -> (f64, f64) {
    let pts: Vec<&CurvePoint> = curve.iter().filter(|p| p.spot >= lo && p.spot <= hi).collect();
    let n = pts.len().max(1) as f64;
    let p = pts.iter().map(|c| (c.model_price - c.bs_price).powi(2)).sum::<f64>() / n;
    let d = pts.iter().map(|c| (c.model_delta - c.bs_delta).powi(2)).sum::<f64>() / n;
    (p.sqrt(), d.sqrt())
}

/// `spot,model_price,model_delta,bs_price,bs_delta`
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "spot,model_price,model_delta,bs_price,bs_delta")?;
    for c in curve {
        writeln!(w, "{},{},{},{},{}", c.spot, c.model_price, c.model_delta, c.bs_price, c.bs_delta)?;
    }
    Ok(())
}
