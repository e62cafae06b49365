//! INI-style run configuration.
//!
//! ```text
//! # comment
//! [model]
//! topology = in:784 fc:500 fc:100
//! kappa = 2
//! [train]
//! lambda = 0.5
//! ```
//!
//! Sections are `[model]`, `[train]`, `[data]` and `[run]`. Unknown sections
//! and keys are rejected. Relative dataset paths resolve against
//! `STOCH_EP_DATA_ROOT` when it is set, else against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Topology;
use crate::trainer::{BiasMode, OptimizerKind, RelaxMode, TrainConfig};

pub const DATA_ROOT_ENV: &str = "STOCH_EP_DATA_ROOT";

const MODEL_KEYS: &[&str] = &["topology", "kappa"];
const TRAIN_KEYS: &[&str] = &[
    "lambda",
    "t_free",
    "t_nudge",
    "beta",
    "n_classes",
    "n_perclass",
    "bias_mode",
    "relax_mode",
    "optimizer",
    "learning_rate",
    "weight_decay",
    "batch_size",
    "epochs",
    "workers",
    "carry_state",
];
const DATA_KEYS: &[&str] = &[
    "kind",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_limit",
    "test_limit",
    "samples",
    "test_samples",
    "frames",
    "size",
];
const RUN_KEYS: &[&str] = &[
    "seed",
    "out",
    "checkpoint",
    "threshold",
    "beta_sweep",
    "toy_nets",
    "weight_scale",
    "stability_samples",
    "trace_layer",
    "window",
    "lif_alpha",
    "lif_threshold",
    "ifr",
    "fp_outputs",
    "kappas",
    "sweep_epochs",
    "sweep_probe",
    "perclass_sweep",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Section {
    Model,
    Train,
    Data,
    Run,
}

impl Section {
    fn keys(self) -> &'static [&'static str] {
        match self {
            Self::Model => MODEL_KEYS,
            Self::Train => TRAIN_KEYS,
            Self::Data => DATA_KEYS,
            Self::Run => RUN_KEYS,
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Model => "model",
            Self::Train => "train",
            Self::Data => "data",
            Self::Run => "run",
        })
    }
}

impl FromStr for Section {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "train" => Ok(Self::Train),
            "data" => Ok(Self::Data),
            "run" => Ok(Self::Run),
            _ => Err(Error::Config(format!("unknown section [{s}]"))),
        }
    }
}

/// Parsed key/value pairs, before interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    values: BTreeMap<(Section, String), String>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Config(format!("line {}: {m}", n + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header {line:?}")))?;
                section = Some(
                    name.trim()
                        .parse::<Section>()
                        .map_err(|e| at(e.to_string()))?,
                );
                continue;
            }
            let sec = section.ok_or_else(|| at("key outside any section".into()))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let k = k.trim();
            if !sec.keys().contains(&k) {
                return Err(at(format!("unknown key {k:?} in [{sec}]")));
            }
            if values
                .insert((sec, k.to_string()), v.trim().to_string())
                .is_some()
            {
                return Err(at(format!("duplicate key {sec}.{k}")));
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, sec: Section, key: &str) -> Option<&str> {
        self.values.get(&(sec, key.to_string())).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, sec: Section, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.raw(sec, key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{sec}.{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, sec: Section, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(sec, key)?
            .ok_or_else(|| Error::Config(format!("missing required key {sec}.{key}")))
    }

    pub fn list(&self, sec: Section, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(sec, key)
            .map(|v| {
                v.split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("{sec}.{key} = {v:?}: {e}")))
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    MovingBar {
        samples: usize,
        test_samples: usize,
        frames: usize,
        size: usize,
    },
    /// Random dense toy problems generated from the seed.
    Toy,
}

/// Everything one subcommand needs, fully validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: Option<Topology>,
    pub train: TrainConfig,
    pub data: Option<DataSource>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub threshold: f64,
    pub beta_sweep: Vec<f64>,
    pub toy_nets: usize,
    pub weight_scale: f64,
    pub stability_samples: usize,
    pub trace_layer: usize,
    pub window: usize,
    pub lif_alpha: f64,
    pub lif_threshold: f64,
    pub ifr: Option<Vec<f64>>,
    pub fp_outputs: Option<usize>,
    pub kappas: Vec<f64>,
    pub sweep_epochs: usize,
    pub sweep_probe: usize,
    pub perclass_sweep: Vec<usize>,
}

/// What a subcommand requires from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub topology: bool,
    pub data: bool,
    pub ifr: bool,
}

fn resolve(base: &Path, key: &str, ini: &Ini) -> Result<PathBuf> {
    let p = PathBuf::from(ini.require::<String>(Section::Data, key)?);
    if p.is_absolute() {
        return Ok(p);
    }
    Ok(match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(p),
        None => base.join(p),
    })
}

impl RunConfig {
    /// Interpret `ini`. Relative data paths are anchored at `base` unless the
    /// data-root variable is set. Unset train keys keep the single hidden
    /// layer MNIST values.
    pub fn from_ini(ini: &Ini, base: &Path, needs: Needs) -> Result<Self> {
        use Section::*;
        let d = TrainConfig::mnist_1fc();
        let train = TrainConfig {
            lambda: ini.get(Train, "lambda")?.unwrap_or(d.lambda),
            t_free: ini.get(Train, "t_free")?.unwrap_or(d.t_free),
            t_nudge: ini.get(Train, "t_nudge")?.unwrap_or(d.t_nudge),
            beta: ini.get(Train, "beta")?.unwrap_or(d.beta),
            kappa: ini.get(Model, "kappa")?.unwrap_or(d.kappa),
            n_classes: ini.get(Train, "n_classes")?.unwrap_or(d.n_classes),
            n_perclass: ini.get(Train, "n_perclass")?.unwrap_or(d.n_perclass),
            bias_mode: ini
                .get::<BiasMode>(Train, "bias_mode")?
                .unwrap_or(d.bias_mode),
            relax_mode: ini
                .get::<RelaxMode>(Train, "relax_mode")?
                .unwrap_or(d.relax_mode),
            optimizer: ini
                .get::<OptimizerKind>(Train, "optimizer")?
                .unwrap_or(d.optimizer),
            learning_rate: ini.get(Train, "learning_rate")?.unwrap_or(d.learning_rate),
            weight_decay: ini.get(Train, "weight_decay")?.unwrap_or(d.weight_decay),
            batch_size: ini.get(Train, "batch_size")?.unwrap_or(d.batch_size),
            epochs: ini.get(Train, "epochs")?.unwrap_or(d.epochs),
            seed: ini.get(Run, "seed")?.unwrap_or(d.seed),
            workers: ini.get(Train, "workers")?.unwrap_or(d.workers),
            carry_state: ini.get(Train, "carry_state")?.unwrap_or(d.carry_state),
        };
        train.validate()?;

        let topology = match ini.get::<String>(Model, "topology")? {
            Some(s) => Some(
                s.parse::<Topology>()
                    .map_err(|e| Error::Config(format!("model.topology: {e}")))?,
            ),
            None if needs.topology => {
                return Err(Error::Config("missing required key model.topology".into()))
            }
            None => None,
        };

        let data = match ini.get::<String>(Data, "kind")? {
            None if needs.data => {
                return Err(Error::Config("missing required key data.kind".into()))
            }
            None => None,
            Some(kind) => Some(match kind.as_str() {
                "idx" | "mnist" => DataSource::Idx {
                    train_images: resolve(base, "train_images", ini)?,
                    train_labels: resolve(base, "train_labels", ini)?,
                    test_images: resolve(base, "test_images", ini)?,
                    test_labels: resolve(base, "test_labels", ini)?,
                    train_limit: ini.get(Data, "train_limit")?,
                    test_limit: ini.get(Data, "test_limit")?,
                },
                "moving_bar" => {
                    let frames: usize = ini.get(Data, "frames")?.unwrap_or(4);
                    if frames < 2 {
                        return Err(Error::Config("data.frames must be at least 2".into()));
                    }
                    DataSource::MovingBar {
                        samples: ini.get(Data, "samples")?.unwrap_or(400),
                        test_samples: ini.get(Data, "test_samples")?.unwrap_or(200),
                        frames,
                        size: ini.get(Data, "size")?.unwrap_or(8),
                    }
                }
                "toy" => DataSource::Toy,
                k => {
                    return Err(Error::Config(format!(
                        "data.kind = {k:?} (idx, moving_bar, toy)"
                    )))
                }
            }),
        };

        let ifr = ini.list(Run, "ifr")?;
        if needs.ifr && ifr.is_none() {
            return Err(Error::Config("missing required key run.ifr".into()));
        }
        let cfg = Self {
            topology,
            train,
            data,
            out: ini.get::<String>(Run, "out")?.map(PathBuf::from),
            checkpoint: ini.get::<String>(Run, "checkpoint")?.map(PathBuf::from),
            threshold: ini.get(Run, "threshold")?.unwrap_or(0.95),
            beta_sweep: ini
                .list(Run, "beta_sweep")?
                .unwrap_or_else(|| vec![0.5, 0.1, 0.01]),
            toy_nets: ini.get(Run, "toy_nets")?.unwrap_or(3),
            weight_scale: ini.get(Run, "weight_scale")?.unwrap_or(0.6),
            stability_samples: ini.get(Run, "stability_samples")?.unwrap_or(100),
            trace_layer: ini.get(Run, "trace_layer")?.unwrap_or(1),
            window: ini.get(Run, "window")?.unwrap_or(10),
            lif_alpha: ini.get(Run, "lif_alpha")?.unwrap_or(0.5),
            lif_threshold: ini.get(Run, "lif_threshold")?.unwrap_or(0.5),
            ifr,
            fp_outputs: ini.get(Run, "fp_outputs")?,
            kappas: ini
                .list(Run, "kappas")?
                .unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]),
            sweep_epochs: ini.get(Run, "sweep_epochs")?.unwrap_or(0),
            sweep_probe: ini.get(Run, "sweep_probe")?.unwrap_or(200),
            perclass_sweep: match ini.list(Run, "perclass_sweep")? {
                None => Vec::new(),
                Some(v) if v.iter().all(|n| *n >= 1.0 && n.fract() == 0.0) => {
                    v.iter().map(|n| *n as usize).collect()
                }
                Some(_) => {
                    return Err(Error::Config(
                        "run.perclass_sweep must list positive integers".into(),
                    ))
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, needs: Needs) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_ini(&Ini::parse(&text)?, base, needs)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.toy_nets == 0 || self.stability_samples == 0 || self.window == 0 {
            return bad("run.toy_nets, run.stability_samples and run.window must be positive");
        }
        if self.beta_sweep.iter().any(|b| !(*b > 0.0)) {
            return bad("run.beta_sweep values must be positive");
        }
        if self.kappas.is_empty() || self.kappas.iter().any(|k| !(*k >= 0.0)) {
            return bad("run.kappas must be a non-empty list of non-negative values");
        }
        if let Some(t) = &self.topology {
            if self.trace_layer == 0 || self.trace_layer >= t.layer_shapes().len() {
                return bad("run.trace_layer must name a non-input layer (1-based)");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEEDS_ALL: Needs = Needs {
        topology: true,
        data: true,
        ifr: false,
    };

    fn parse(text: &str, needs: Needs) -> Result<RunConfig> {
        RunConfig::from_ini(&Ini::parse(text)?, Path::new("/base"), needs)
    }

    #[test]
    fn full_config() {
        let text = "\
# single hidden layer
[model]
topology = in:784 fc:500 fc:100   # trailing comment
kappa = 2
[train]
beta = 0.75
bias_mode = random_sign
[data]
kind = idx
train_images = a
train_labels = b
test_images = /abs/c
test_labels = d
train_limit = 100
[run]
seed = 9
ifr = 0.1, 0.2
";
        let c = parse(text, NEEDS_ALL).unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.topology.unwrap().output_len(), 100);
        assert_eq!(c.ifr, Some(vec![0.1, 0.2]));
        let DataSource::Idx {
            train_images,
            test_images,
            train_limit,
            ..
        } = c.data.unwrap()
        else {
            panic!()
        };
        assert_eq!(train_images, PathBuf::from("/base/a"));
        assert_eq!(test_images, PathBuf::from("/abs/c"));
        assert_eq!(train_limit, Some(100));
    }

    #[test]
    fn rejections() {
        let none = Needs {
            topology: false,
            data: false,
            ifr: false,
        };
        for (text, needle) in [
            ("[model]\ntopolgy = in:4 fc:2", "unknown key"),
            ("[extra]\n", "unknown section"),
            ("kappa = 1", "outside any section"),
            ("[model\n", "malformed"),
            ("[train]\nbeta 1", "key = value"),
            ("[train]\nbeta = 1\nbeta = 2", "duplicate"),
            ("[train]\nt_free = many", "train.t_free"),
            ("[train]\nbias_mode = sideways", "bias mode"),
            ("[train]\nweight_decay = 0.1", "adamw"),
        ] {
            let e = parse(text, none).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e:?}");
            assert!(e.to_string().contains(needle), "{text}: {e}");
        }
        let e = parse("[data]\nkind = idx\ntrain_images = a", NEEDS_ALL).unwrap_err();
        assert!(e.to_string().contains("model.topology"), "{e}");
        let e = parse(
            "[model]\ntopology = in:4 fc:10\n[data]\nkind = idx\ntrain_images = a",
            NEEDS_ALL,
        )
        .unwrap_err();
        assert!(e.to_string().contains("data.train_labels"), "{e}");
        let e = parse(
            "[model]\ntopology = in:4 fc:10",
            Needs { ifr: true, ..none },
        )
        .unwrap_err();
        assert!(e.to_string().contains("run.ifr"), "{e}");
    }
}
