//! Run configuration: a flat TOML table layered as dataset preset, then
//! config file, then command-line flags.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use pure_core::data::RatingFormat;
use pure_core::eval::Protocol;
use pure_core::model::ModelKind;
use pure_core::objective::HyperParams;
use serde::{Deserialize, Serialize};

/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_FILE: &str = "config.resolved";

/// How positives are divided into train and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Per-tuple random split with the given train fraction.
    Random { train_fraction: f64 },
    /// `n` random positives of every user go to test.
    LeaveNOut { n: usize },
    /// `data_path` is the train file and `test_path` the test file.
    Presplit,
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Random { train_fraction } => write!(f, "random:{train_fraction}"),
            SplitSpec::LeaveNOut { n } => write!(f, "leave-n-out:{n}"),
            SplitSpec::Presplit => f.write_str("presplit"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "presplit" {
            return Ok(SplitSpec::Presplit);
        }
        if let Some(v) = s.strip_prefix("random:") {
            let train_fraction: f64 = v.parse().map_err(|_| format!("bad fraction in `{s}`"))?;
            return Ok(SplitSpec::Random { train_fraction });
        }
        if let Some(v) = s.strip_prefix("leave-n-out:") {
            let n: usize = v.parse().map_err(|_| format!("bad count in `{s}`"))?;
            return Ok(SplitSpec::LeaveNOut { n });
        }
        Err(format!(
            "unknown split `{s}` (expected `random:<fraction>`, `leave-n-out:<n>` or `presplit`)"
        ))
    }
}

/// Serde adapter through `Display` / `FromStr`.
mod as_string {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Everything one run needs. Serialised flat; the hyper-parameters share the
/// top level with the data and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Preset name (`ml-100k`, `ml-1m`, `yelp`) or any label.
    pub dataset: String,
    pub data_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    pub format: RatingFormat,
    pub positive_threshold: f64,
    /// Users with fewer positives are dropped before splitting; 0 keeps all.
    pub min_interactions: usize,
    #[serde(with = "as_string")]
    pub split: SplitSpec,
    #[serde(with = "as_string")]
    pub protocol: Protocol,
    pub seed: u64,
    pub model: ModelKind,
    /// Warm-start the PURE discriminator from a PU-GMF run.
    pub pretrain: bool,
    pub pretrain_epochs: usize,
    pub pretrain_pi_p: f64,
    /// Evaluate on the test split every this many epochs; 0 disables.
    pub validate_every: usize,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub hyper: HyperParams,
}

impl RunConfig {
    /// Documented defaults for `dataset`. Unknown names get the ml-100k
    /// hyper-parameters.
    pub fn preset(dataset: &str) -> RunConfig {
        let hyper = HyperParams::preset(dataset).unwrap_or_else(|| {
            log::warn!("no preset for dataset `{dataset}`; using ml-100k hyper-parameters");
            HyperParams::ml_100k()
        });
        let (data_path, format, min_interactions) = match dataset {
            "ml-1m" => ("data/ml-1m/ratings.dat", RatingFormat::DoubleColon, 0),
            "yelp" => ("data/yelp/ratings.tsv", RatingFormat::Tab, 10),
            _ => ("data/ml-100k/u.data", RatingFormat::Tab, 0),
        };
        RunConfig {
            dataset: dataset.to_string(),
            data_path: data_path.into(),
            test_path: None,
            format,
            positive_threshold: 4.0,
            min_interactions,
            split: SplitSpec::Random {
                train_fraction: 0.8,
            },
            protocol: Protocol::Full,
            seed: 0,
            model: ModelKind::Pure,
            pretrain: false,
            pretrain_epochs: hyper.epochs,
            pretrain_pi_p: hyper.pi_p,
            validate_every: 0,
            output_dir: "runs/latest".into(),
            hyper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.split == SplitSpec::Presplit && self.test_path.is_none() {
            bail!("split `presplit` needs `test_path`");
        }
        if let SplitSpec::Random { train_fraction } = self.split {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                bail!("train fraction must lie in (0, 1), got {train_fraction}");
            }
        }
        if self.pretrain {
            HyperParams {
                pi_p: self.pretrain_pi_p,
                ..self.hyper.clone()
            }
            .validate()
            .context("pretraining hyper-parameters")?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text.parse()?;
        check_keys(&table)?;
        let cfg: RunConfig = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.to_toml()?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn known_keys() -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = toml::Table::try_from(RunConfig::preset("ml-100k"))
        .expect("config serialises")
        .keys()
        .cloned()
        .collect();
    keys.insert("test_path".into());
    keys
}

fn check_keys(table: &toml::Table) -> Result<()> {
    let known = known_keys();
    if let Some(k) = table.keys().find(|k| !known.contains(*k)) {
        bail!("unknown configuration key `{k}`");
    }
    Ok(())
}

/// Flags shared by every run-oriented subcommand. Each one overrides the
/// matching configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file loaded before the flags are applied.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    #[arg(long)]
    pub test_path: Option<PathBuf>,
    /// `tab` or `double-colon`.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub positive_threshold: Option<f64>,
    #[arg(long)]
    pub min_interactions: Option<usize>,
    /// `random:<fraction>`, `leave-n-out:<n>` or `presplit`.
    #[arg(long)]
    pub split: Option<String>,
    /// `full` or `sampled:<pool_size>`.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `item-pop`, `pn-gmf`, `pu-gmf` or `pure`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pretrain: Option<bool>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_pi_p: Option<f64>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    #[arg(long, short = 'o')]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub pi_p: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub c_ratio: Option<f64>,
    #[arg(long)]
    pub d_steps: Option<usize>,
    #[arg(long)]
    pub g_steps: Option<usize>,
    #[arg(long)]
    pub gen_ratio: Option<f64>,
    /// `sum` or `mean`.
    #[arg(long)]
    pub loss_reduction: Option<String>,
    /// `vector` or `matrix`.
    #[arg(long)]
    pub relation: Option<String>,
}

macro_rules! overrides {
    ($table:ident, $args:ident; $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = &$args.$field {
                $table.insert(stringify!($field).to_string(), toml::Value::try_from(v)?);
            }
        )*
    };
}

impl ConfigArgs {
    fn overrides(&self) -> Result<toml::Table> {
        let mut t = toml::Table::new();
        overrides!(t, self;
            dataset, data_path, test_path, format, positive_threshold, min_interactions,
            split, protocol, seed, model, pretrain, pretrain_epochs, pretrain_pi_p,
            validate_every, output_dir, pi_p, delta, dim, hidden, lr, epochs, batch_size,
            c_ratio, d_steps, g_steps, gen_ratio, loss_reduction, relation,
        );
        Ok(t)
    }

    /// Preset for the chosen dataset, overlaid with the config file and then
    /// the flags. Keys derived from others (`hidden` from `dim`, the
    /// pretraining knobs from `epochs` and `pi_p`) follow their source unless
    /// set explicitly.
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let table: toml::Table = text
                    .parse()
                    .with_context(|| format!("parsing {}", path.display()))?;
                check_keys(&table).with_context(|| format!("in {}", path.display()))?;
                table
            }
            None => toml::Table::new(),
        };
        let flags = self.overrides()?;
        let set = |k: &str| file.contains_key(k) || flags.contains_key(k);

        let dataset = flags
            .get("dataset")
            .or_else(|| file.get("dataset"))
            .and_then(|v| v.as_str())
            .unwrap_or("ml-100k")
            .to_string();
        let mut merged = toml::Table::try_from(RunConfig::preset(&dataset))?;
        merged.extend(file.clone());
        merged.extend(flags.clone());

        let get_int = |t: &toml::Table, k: &str| t.get(k).and_then(|v| v.as_integer());
        if set("dim") && !set("hidden") {
            if let Some(dim) = get_int(&merged, "dim") {
                merged.insert("hidden".into(), toml::Value::Integer(2 * dim));
            }
        }
        if !set("pretrain_epochs") {
            if let Some(v) = merged.get("epochs").cloned() {
                merged.insert("pretrain_epochs".into(), v);
            }
        }
        if !set("pretrain_pi_p") {
            if let Some(v) = merged.get("pi_p").cloned() {
                merged.insert("pretrain_pi_p".into(), v);
            }
        }

        let cfg: RunConfig = merged.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }
}
