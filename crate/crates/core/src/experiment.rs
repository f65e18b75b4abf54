//! Configured runs: data generation, training, rollouts and evaluation.
//!
//! A run reads `key=value` settings, writes its artifacts into a staging
//! directory next to `out` and renames it into place only when everything
//! succeeded. Every run leaves a `run.kv` manifest holding all resolved
//! settings, so it can be repeated exactly.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::burgers::{generate, GenerateSpec, SolverConfig};
use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};
use crate::integrator::Scheme;
use crate::kv::KvMap;
use crate::metrics::{derivative_capture_report, predict, reference, relative_errors, MetricsTable};
use crate::model::{load_checkpoint, save_checkpoint, AttentionKind, Domain, GradeModel, ModelConfig};
use crate::schedule::TrainSchedule;
use crate::tensor::Reduce;
use crate::trainer::{train, OptimizerKind, TargetMode, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Generate,
    Train,
    Rollout,
    Eval,
    CompareAttention,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generate" => Ok(Mode::Generate),
            "train" => Ok(Mode::Train),
            "rollout" => Ok(Mode::Rollout),
            "eval" => Ok(Mode::Eval),
            "compare-attention" => Ok(Mode::CompareAttention),
            other => Err(Error::config(format!(
                "unknown mode {other:?} (expected generate|train|rollout|eval|compare-attention)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Generate => "generate",
            Mode::Train => "train",
            Mode::Rollout => "rollout",
            Mode::Eval => "eval",
            Mode::CompareAttention => "compare-attention",
        })
    }
}

/// Settings with read tracking: every value consulted (defaults included)
/// lands in the resolved map, and keys nobody read are reported.
pub struct Settings {
    raw: KvMap,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<KvMap>,
}

impl Settings {
    pub fn new(raw: KvMap) -> Self {
        Settings {
            raw,
            used: RefCell::new(BTreeSet::new()),
            resolved: RefCell::new(KvMap::new()),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(Settings::new(KvMap::parse(text)?))
    }

    fn note(&self, key: &str, value: &str) {
        self.used.borrow_mut().insert(key.to_string());
        self.resolved.borrow_mut().set(key, value);
    }

    pub fn raw(&self, key: &str) -> Option<String> {
        let v = self.raw.get_opt(key).map(str::to_string);
        if let Some(v) = &v {
            self.note(key, v);
        }
        v
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .raw(key)
            .ok_or_else(|| Error::config(format!("missing required setting {key:?}")))?;
        v.parse()
            .map_err(|_| Error::config(format!("setting {key:?}: cannot parse {v:?}")))
    }

    pub fn or<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some(_) => self.required(key),
            None => {
                self.note(key, &default.to_string());
                Ok(default)
            }
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or_else(|| {
            self.note(key, default);
            default.to_string()
        })
    }

    /// Fail on keys no setting lookup consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self.raw.iter().map(|(k, _)| k).filter(|k| !used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("unknown settings: {}", unknown.join(", "))))
        }
    }

    pub fn resolved(&self) -> KvMap {
        self.resolved.borrow().clone()
    }
}

fn parse_range(text: &str, what: &str) -> Result<std::ops::Range<usize>> {
    let bad = || Error::config(format!("{what}: expected start..end, got {text:?}"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

fn range_setting(s: &Settings, key: &str, default: std::ops::Range<usize>) -> Result<std::ops::Range<usize>> {
    match s.raw(key) {
        Some(v) => parse_range(&v, key),
        None => {
            s.note(key, &format!("{}..{}", default.start, default.end));
            Ok(default)
        }
    }
}

/// Files written by a run, for the caller to report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

struct Staging {
    dir: PathBuf,
    target: PathBuf,
}

impl Staging {
    fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = fs::read_dir(target)
                .map_err(|e| Error::io(target, e))?
                .next()
                .is_none();
            if !empty {
                return Err(Error::config(format!("output directory {} is not empty", target.display())));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| Error::config(format!("bad output path {}", target.display())))?
            .to_string_lossy()
            .to_string();
        let dir = target.with_file_name(format!(".{name}.partial"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
        })
    }

    fn commit(self) -> Result<()> {
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.dir, &self.target).map_err(|e| Error::io(&self.target, e))
    }

    fn abandon(self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a config file, apply `key=value` overrides, run it.
pub fn run_from_file(config: &Path, overrides: &[String], out: Option<&Path>, seed: Option<u64>) -> Result<RunOutput> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut kv = KvMap::parse(&text)?;
    for o in overrides {
        kv.apply_override(o)?;
    }
    if let Some(o) = out {
        kv.set("out", o.display());
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    run_experiment(kv)
}

pub fn run_experiment(kv: KvMap) -> Result<RunOutput> {
    let s = Settings::new(kv);
    let mode: Mode = s.required("mode")?;
    let out = PathBuf::from(s.raw("out").ok_or_else(|| Error::config("missing required setting \"out\""))?);
    let seed: u64 = s.or("seed", 0u64)?;
    let plan = match mode {
        Mode::Generate => Plan::Generate(GeneratePlan::read(&s, seed)?),
        Mode::Train => Plan::Train(TrainPlan::read(&s, seed)?),
        Mode::Rollout => Plan::Rollout(RolloutPlan::read(&s)?),
        Mode::Eval => Plan::Eval(EvalPlan::read(&s)?),
        Mode::CompareAttention => Plan::Compare(ComparePlan::read(&s, seed)?),
    };
    s.finish()?;
    let staging = Staging::new(&out)?;
    let result = plan.execute(&staging.dir).and_then(|mut summary| {
        let mut manifest = s.resolved();
        manifest.set("created_by", concat!("grade ", env!("CARGO_PKG_VERSION")));
        manifest.set("threads", rayon::current_num_threads());
        write_text(&staging.dir.join("run.kv"), &manifest.to_text())?;
        summary.insert(0, format!("{mode} finished"));
        Ok(summary)
    });
    match result {
        Ok(summary) => {
            staging.commit()?;
            let files = list_files(&out)?;
            Ok(RunOutput { out, files, summary })
        }
        Err(e) => {
            staging.abandon();
            Err(e.with_context(format!("{mode} run")))
        }
    }
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

enum Plan {
    Generate(GeneratePlan),
    Train(TrainPlan),
    Rollout(RolloutPlan),
    Eval(EvalPlan),
    Compare(ComparePlan),
}

impl Plan {
    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        match self {
            Plan::Generate(p) => p.execute(dir),
            Plan::Train(p) => p.execute(dir),
            Plan::Rollout(p) => p.execute(dir),
            Plan::Eval(p) => p.execute(dir),
            Plan::Compare(p) => p.execute(dir),
        }
    }
}

struct GeneratePlan {
    spec: GenerateSpec,
}

impl GeneratePlan {
    fn read(s: &Settings, seed: u64) -> Result<Self> {
        let ndim: usize = s.or("ndim", 1usize)?;
        let (nx, nu, dt_ref, dt, stride, n_times) = match ndim {
            1 => (512, 0.0025, 1.4e-4, 0.007, 4, 30),
            2 => (128, 0.005, 5e-4, 0.02, 8, 11),
            other => return Err(Error::config(format!("unsupported ndim {other}"))),
        };
        let nx: usize = s.or("nx", nx)?;
        let nu: f64 = s.or("nu", nu)?;
        let dt_ref: f64 = s.or("dt_ref", dt_ref)?;
        let dt: f64 = s.or("dt", dt)?;
        let ratio = dt / dt_ref;
        let save_every = ratio.round();
        if save_every < 1.0 || (ratio - save_every).abs() > 1e-9 * save_every {
            return Err(Error::config(format!("dt {dt} is not an integer multiple of dt_ref {dt_ref}")));
        }
        let mut solver = if ndim == 1 {
            SolverConfig::burgers_1d(nx, nu, dt_ref)?
        } else {
            let ny: usize = s.or("ny", nx)?;
            SolverConfig::burgers_2d(nx, ny, nu, dt_ref)?
        };
        if !s.or("advection", true)? {
            solver = solver.without_advection();
        }
        let n_samples: usize = s.or("n_samples", 150usize)?;
        if n_samples == 0 {
            return Err(Error::config("n_samples must be positive"));
        }
        Ok(GeneratePlan {
            spec: GenerateSpec {
                solver,
                n_samples,
                save_every: save_every as usize,
                n_times: s.or("n_times", n_times)?,
                stride: s.or("stride", stride)?,
                seed,
            },
        })
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let ds = generate(&self.spec)?;
        ds.write(&dir.join("dataset"))?;
        Ok(vec![format!(
            "dataset: {} samples × {} snapshots on grid {:?}, dt {}",
            ds.n_samples, ds.n_times, ds.dims, ds.dt
        )])
    }
}

fn existing(path: PathBuf, key: &str) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path)
    } else {
        Err(Error::config(format!("{key}: no directory at {}", path.display())))
    }
}

fn read_dataset(s: &Settings, key: &str) -> Result<(PathBuf, SnapshotDataset)> {
    let path = PathBuf::from(
        s.raw(key)
            .ok_or_else(|| Error::config(format!("missing required setting {key:?}")))?,
    );
    let ds = SnapshotDataset::read(&existing(path.clone(), key)?)?;
    Ok((path, ds))
}

#[derive(Clone)]
struct TrainSetup {
    model_config: ModelConfig,
    model_seed: u64,
    train: TrainConfig,
    train_samples: usize,
}

fn read_train_setup(s: &Settings, seed: u64, ds: &SnapshotDataset) -> Result<TrainSetup> {
    let mut mc = ModelConfig::new(ds.ndim())?;
    mc.attention = s.or("attention", AttentionKind::Fnn)?;
    mc.attention_hidden = s.or("attention_hidden", mc.attention_hidden)?;
    mc.core_hidden = s.or("core_hidden", mc.core_hidden)?;
    mc.taylor_degree = s.or("taylor_degree", mc.taylor_degree)?;
    mc.layer1_reduce = s.or("layer1_reduce", Reduce::Mean)?;
    mc.layer2_reduce = s.or("layer2_reduce", Reduce::Mean)?;
    let spacing = ds.spacing().into_iter().fold(f64::INFINITY, f64::min);
    let offset = s.string_or("offset_scale", "spacing");
    mc.offset_scale = if offset == "spacing" {
        spacing
    } else {
        offset
            .parse()
            .map_err(|_| Error::config(format!("offset_scale: cannot parse {offset:?}")))?
    };
    mc.validate()?;

    let lr = s.string_or("lr", "[0.07]*201");
    let tau = s.raw("tau");
    let depth = s.raw("depth");
    let schedule = match tau {
        Some(t) => TrainSchedule::parse(&t, &lr, depth.as_deref())?,
        None => {
            let n = crate::schedule::parse_schedule(&lr)?.len();
            let t = format!("[4]*{n}");
            s.note("tau", &t);
            TrainSchedule::parse(&t, &lr, depth.as_deref())?
        }
    };
    let mut train = TrainConfig::new(schedule);
    train.optimizer = s.or("optimizer", OptimizerKind::Sgd)?;
    train.targets = s.or("targets", TargetMode::All)?;
    train.scheme = s.or("scheme", Scheme::Rk4_38)?;
    let train_samples: usize = s.or("train_samples", ds.n_samples)?;
    if train_samples == 0 || train_samples > ds.n_samples {
        return Err(Error::config(format!(
            "train_samples {train_samples} outside 1..={}",
            ds.n_samples
        )));
    }
    if train.schedule.max_steps() >= ds.n_times {
        return Err(Error::config(format!(
            "schedule needs snapshot index {}, dataset stores {}",
            train.schedule.max_steps(),
            ds.n_times
        )));
    }
    Ok(TrainSetup {
        model_config: mc,
        model_seed: s.or("model_seed", seed)?,
        train,
        train_samples,
    })
}

fn run_training(setup: &TrainSetup, ds: &SnapshotDataset) -> Result<(GradeModel, Domain, TrainReport)> {
    let domain = Domain::new(ds.graph()?);
    let mut model = GradeModel::init(setup.model_config.clone(), setup.model_seed)?;
    let train_ds = ds.select_samples(0..setup.train_samples)?;
    let report = train(&mut model, &domain, &train_ds, &setup.train)?;
    Ok((model, domain, report))
}

struct TrainPlan {
    ds: SnapshotDataset,
    setup: TrainSetup,
}

impl TrainPlan {
    fn read(s: &Settings, seed: u64) -> Result<Self> {
        let (_, ds) = read_dataset(s, "dataset")?;
        let setup = read_train_setup(s, seed, &ds)?;
        Ok(TrainPlan { ds, setup })
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let (model, _, mut report) = run_training(&self.setup, &self.ds)?;
        save_checkpoint(&model, &dir.join("model"))?;
        report.checkpoint = Some(PathBuf::from("model"));
        write_text(&dir.join("train_log.csv"), &report.to_csv())?;
        let first = report.epochs.first().map_or(f64::NAN, |e| e.loss);
        Ok(vec![format!(
            "trained {} parameters for {} epochs: loss {first:.6e} -> {:.6e} in {:.1} s",
            model.param_count(),
            report.epochs.len(),
            report.final_loss.unwrap_or(f64::NAN),
            report.elapsed()
        )])
    }
}

struct RolloutPlan {
    model: GradeModel,
    model_id: String,
    ds: SnapshotDataset,
    dataset_id: String,
    samples: std::ops::Range<usize>,
    steps: usize,
    scheme: Scheme,
}

impl RolloutPlan {
    fn read(s: &Settings) -> Result<Self> {
        let model_path = PathBuf::from(
            s.raw("model")
                .ok_or_else(|| Error::config("missing required setting \"model\""))?,
        );
        let model = load_checkpoint(&existing(model_path.clone(), "model")?)?;
        let (ds_path, ds) = read_dataset(s, "dataset")?;
        if model.config().ndim != ds.ndim() {
            return Err(Error::config(format!(
                "{}-D model cannot roll out a {}-D dataset",
                model.config().ndim,
                ds.ndim()
            )));
        }
        let samples = range_setting(s, "samples", 0..ds.n_samples)?;
        if samples.end > ds.n_samples {
            return Err(Error::config(format!("samples {samples:?} exceed {}", ds.n_samples)));
        }
        Ok(RolloutPlan {
            model,
            model_id: model_path.display().to_string(),
            samples,
            steps: s.or("steps", ds.n_times - 1)?,
            scheme: s.or("scheme", Scheme::Rk4_38)?,
            dataset_id: ds_path.display().to_string(),
            ds,
        })
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let domain = Domain::new(self.ds.graph()?);
        let pred = predict(&self.model, &domain, &self.ds, self.samples.clone(), self.steps, self.scheme)?;
        let data: Vec<f64> = pred.iter().flatten().flat_map(|t| t.data().iter().copied()).collect();
        let out = SnapshotDataset::new(
            self.ds.dims.clone(),
            self.ds.length,
            self.ds.nu,
            self.ds.dt,
            pred.len(),
            self.steps + 1,
            self.ds.channels.clone(),
            self.ds.seed,
            data,
        )?;
        out.write(&dir.join("prediction"))?;
        let mut summary = vec![format!("{} rollouts of {} steps", pred.len(), self.steps)];
        let compare = self.steps.min(self.ds.n_times - 1);
        let truth = reference(&self.ds, self.samples.clone(), compare)?;
        let clipped: Vec<_> = pred.iter().map(|p| p[..=compare].to_vec()).collect();
        let table = MetricsTable::compute(&clipped, &truth, &self.model_id, &self.dataset_id)?;
        write_text(&dir.join("metrics.csv"), &table.to_csv())?;
        let rel = relative_errors(&clipped, &truth)?;
        let mut csv = String::from("time_index,relative_l2\n");
        for (j, r) in rel.iter().enumerate() {
            csv.push_str(&format!("{j},{r:.16e}\n"));
        }
        write_text(&dir.join("relative_error.csv"), &csv)?;
        let d = derivative_capture_report(&self.model, &domain, &self.ds, self.samples.clone(), 0..compare + 1)?;
        write_text(
            &dir.join("derivatives.csv"),
            &format!(
                "snapshots,first_order,second_order,first_order_scaled\n{},{:.16e},{:.16e},{:.16e}\n",
                d.snapshots, d.first_order, d.second_order, d.first_order_scaled
            ),
        )?;
        summary.push(format!(
            "relative error at index {compare}: {:.4e}",
            rel.last().copied().unwrap_or(0.0)
        ));
        Ok(summary)
    }
}

struct EvalPlan {
    pred: SnapshotDataset,
    pred_id: String,
    truth: SnapshotDataset,
    truth_id: String,
    offset: usize,
}

impl EvalPlan {
    fn read(s: &Settings) -> Result<Self> {
        let (pred_path, pred) = read_dataset(s, "prediction")?;
        let (truth_path, truth) = read_dataset(s, "dataset")?;
        if pred.dims != truth.dims {
            return Err(Error::config(format!(
                "prediction grid {:?} differs from reference grid {:?}",
                pred.dims, truth.dims
            )));
        }
        let offset: usize = s.or("sample_offset", 0usize)?;
        if offset + pred.n_samples > truth.n_samples {
            return Err(Error::config("prediction has more samples than the reference"));
        }
        Ok(EvalPlan {
            pred,
            pred_id: pred_path.display().to_string(),
            truth,
            truth_id: truth_path.display().to_string(),
            offset,
        })
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let steps = self.pred.n_times.min(self.truth.n_times) - 1;
        let pred = reference(&self.pred, 0..self.pred.n_samples, steps)?;
        let truth = reference(&self.truth, self.offset..self.offset + self.pred.n_samples, steps)?;
        let table = MetricsTable::compute(&pred, &truth, &self.pred_id, &self.truth_id)?;
        write_text(&dir.join("metrics.csv"), &table.to_csv())?;
        Ok(vec![format!("evaluated {} samples over {} time indices", pred.len(), steps + 1)])
    }
}

struct ComparePlan {
    ds: SnapshotDataset,
    setup: TrainSetup,
    test: std::ops::Range<usize>,
    steps: usize,
}

impl ComparePlan {
    fn read(s: &Settings, seed: u64) -> Result<Self> {
        let (_, ds) = read_dataset(s, "dataset")?;
        let setup = read_train_setup(s, seed, &ds)?;
        let default_test = if setup.train_samples < ds.n_samples {
            setup.train_samples..ds.n_samples
        } else {
            0..ds.n_samples
        };
        let test = range_setting(s, "test_samples", default_test)?;
        let steps = s.or("steps", ds.n_times - 1)?;
        if test.end > ds.n_samples || steps >= ds.n_times || steps == 0 {
            return Err(Error::config("test_samples or steps outside the dataset"));
        }
        Ok(ComparePlan { ds, setup, test, steps })
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let mut csv = String::from("attention,n_params,final_loss,test_mean_relative_l2,train_seconds\n");
        let mut summary = Vec::new();
        for kind in [AttentionKind::Fnn, AttentionKind::Taylor] {
            let setup = TrainSetup {
                model_config: self.setup.model_config.clone().with_attention(kind),
                ..self.setup.clone()
            };
            setup.model_config.validate()?;
            let (model, domain, report) = run_training(&setup, &self.ds)
                .map_err(|e| e.with_context(format!("{kind} attention")))?;
            save_checkpoint(&model, &dir.join(kind.to_string()).join("model"))?;
            write_text(&dir.join(kind.to_string()).join("train_log.csv"), &report.to_csv())?;
            let pred = predict(&model, &domain, &self.ds, self.test.clone(), self.steps, setup.train.scheme)?;
            let truth = reference(&self.ds, self.test.clone(), self.steps)?;
            let rel = relative_errors(&pred, &truth)?;
            let mean = rel[1..].iter().sum::<f64>() / (rel.len() - 1) as f64;
            let final_loss = report.final_loss.unwrap_or(f64::NAN);
            csv.push_str(&format!(
                "{kind},{},{final_loss:.16e},{mean:.16e},{:.3}\n",
                model.param_count(),
                report.elapsed()
            ));
            summary.push(format!("{kind}: final loss {final_loss:.4e}, test relative error {mean:.4e}"));
        }
        write_text(&dir.join("comparison.csv"), &csv)?;
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvMap {
        KvMap::parse(text).unwrap()
    }

    fn small_generate(out: &Path) -> RunOutput {
        let text = format!(
            "mode=generate\nndim=1\nnx=64\ndt_ref=0.001\ndt=0.007\nn_samples=2\nn_times=4\nstride=2\nseed=3\nout={}\n",
            out.display()
        );
        run_experiment(kv(&text)).unwrap()
    }

    #[test]
    fn generate_writes_sized_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("gen");
        small_generate(&out);
        let bytes = fs::metadata(out.join("dataset").join("fields.bin")).unwrap().len();
        assert_eq!(bytes, 2 * 4 * 32 * 8);
        let manifest = fs::read_to_string(out.join("run.kv")).unwrap();
        assert!(manifest.contains("seed=3") && manifest.contains("nu=0.0025"));
    }

    #[test]
    fn manifest_reproduces_run() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        small_generate(&a);
        let mut again = KvMap::parse(&fs::read_to_string(a.join("run.kv")).unwrap()).unwrap();
        let mut clean = KvMap::new();
        for (k, v) in again.iter() {
            if k != "created_by" && k != "threads" {
                clean.set(k, v);
            }
        }
        clean.set("out", tmp.path().join("b").display());
        again = clean;
        run_experiment(again).unwrap();
        let x = fs::read(a.join("dataset/fields.bin")).unwrap();
        let y = fs::read(tmp.path().join("b/dataset/fields.bin")).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn unknown_and_missing_settings() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("x");
        let err = run_experiment(kv(&format!("mode=generate\nout={}\nflavour=mint\n", out.display()))).unwrap_err();
        assert!(matches!(err, Error::Config(_)) && err.to_string().contains("flavour"));
        assert!(!out.exists());
        let err = run_experiment(kv(&format!("mode=train\nout={}\n", out.display()))).unwrap_err();
        assert!(err.to_string().contains("dataset"));
        assert!(run_experiment(kv("mode=fly\nout=x\n")).is_err());
    }

    #[test]
    fn failed_run_leaves_no_output() {
        let tmp = tempfile::tempdir().unwrap();
        let gen = tmp.path().join("gen");
        small_generate(&gen);
        let out = tmp.path().join("train");
        // loss explodes on the first epoch
        let text = format!(
            "mode=train\ndataset={}\nout={}\nlr=[1e9]*3\ntau=[3]*3\noffset_scale=1e-9\ncore_hidden=2\nattention_hidden=2\n",
            gen.join("dataset").display(),
            out.display()
        );
        let err = run_experiment(kv(&text)).unwrap_err();
        assert!(err.is_numeric(), "{err}");
        assert!(!out.exists());
        assert!(!tmp.path().join(".train.partial").exists());
    }

    #[test]
    fn train_rollout_eval_chain() {
        let tmp = tempfile::tempdir().unwrap();
        let gen = tmp.path().join("gen");
        small_generate(&gen);
        let ds = gen.join("dataset");
        let tr = tmp.path().join("train");
        run_experiment(kv(&format!(
            "mode=train\ndataset={}\nout={}\nlr=[0.01]*3\ntau=[2]*3\noptimizer=adam\ntrain_samples=1\n",
            ds.display(),
            tr.display()
        )))
        .unwrap();
        assert!(tr.join("model/model.kv").exists());
        assert_eq!(fs::read_to_string(tr.join("train_log.csv")).unwrap().lines().count(), 4);

        let ro = tmp.path().join("roll");
        run_experiment(kv(&format!(
            "mode=rollout\nmodel={}\ndataset={}\nout={}\nsamples=1..2\n",
            tr.join("model").display(),
            ds.display(),
            ro.display()
        )))
        .unwrap();
        let table = MetricsTable::from_csv(&fs::read_to_string(ro.join("metrics.csv")).unwrap()).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0].eps_l2, 0.0);

        let ev = tmp.path().join("eval");
        run_experiment(kv(&format!(
            "mode=eval\nprediction={}\ndataset={}\nout={}\n",
            ds.display(),
            ds.display(),
            ev.display()
        )))
        .unwrap();
        let table = MetricsTable::from_csv(&fs::read_to_string(ev.join("metrics.csv")).unwrap()).unwrap();
        assert!(table.rows.iter().all(|r| r.eps_l2 == 0.0 && r.mean_l1 == 0.0));
    }

    #[test]
    fn nonempty_output_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("busy");
        fs::create_dir_all(&out).unwrap();
        fs::write(out.join("keep.txt"), "x").unwrap();
        let err = run_experiment(kv(&format!("mode=generate\nout={}\nn_samples=1\nnx=32\ndt_ref=0.001\nn_times=2\nstride=1\n", out.display())))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(out.join("keep.txt").exists());
    }

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("3..7", "x").unwrap(), 3..7);
        assert!(parse_range("7..3", "x").is_err());
        assert!(parse_range("3", "x").is_err());
    }
}
