//! Experiment configuration: `key=value` lines grouped under `[section]` headers.
//!
//! ```text
//! [data]
//! source=synthetic        # or: manifest=cohort/manifest.csv
//! [synth]
//! per_class=30
//! dims=16,32,32
//! seed=1337
//! [split]
//! train_fraction=0.8
//! validation_fraction=0.2
//! seed=1337
//! [adasyn]
//! k=5
//! beta=1
//! seed=1337
//! [network]
//! spec=desk               # or a path to a spec file
//! [train]
//! epochs=50
//! learning_rate=0.0001
//! [fusion]
//! radius=0.05
//! step=0.01
//! [output]
//! dir=out
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adasyn::AdasynConfig;
use crate::cnn::TrainConfig;
use crate::datamodel::{ClassLabel, SplitSpec, NUM_CLASSES};
use crate::eval::SynthConfig;
use crate::fusion::GridSearchConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("[{section}] {key}: {message}")]
    Value {
        section: String,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkChoice {
    /// The default desk-scale network sized to the data's slices.
    Desk,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub split: SplitSpec,
    /// Share of the training split held out for fusion tuning.
    pub validation_fraction: f64,
    pub adasyn: AdasynConfig,
    pub network: NetworkChoice,
    pub train: TrainConfig,
    pub grid: GridSearchConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SynthConfig::default()),
            split: SplitSpec::new(0.8, 1337).unwrap(),
            validation_fraction: 0.2,
            adasyn: AdasynConfig::new(5, 1.0, 1337).unwrap(),
            network: NetworkChoice::Desk,
            train: TrainConfig {
                epochs: 50,
                seed: 1337,
                ..TrainConfig::default()
            },
            grid: GridSearchConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn parse_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut sections = Sections::new();
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax { line: i + 1, message };
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| syntax(format!("unterminated section header {line:?}")))?;
            current = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected key=value, got {line:?}")))?;
        if current.is_empty() {
            return Err(syntax("key outside any [section]".into()));
        }
        let key = key.trim().to_string();
        let entry = sections.entry(current.clone()).or_default();
        if entry.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(syntax(format!("duplicate key {key:?} in [{current}]")));
        }
    }
    Ok(sections)
}

struct Reader {
    sections: Sections,
}

impl Reader {
    fn take<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some((_, raw)) = self.sections.get_mut(section).and_then(|s| s.remove(key)) else {
            return Ok(None);
        };
        raw.parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
            section: section.into(),
            key: key.into(),
            message: format!("{raw:?}: {e}"),
        })
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str, len: usize) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.take::<String>(section, key)? else {
            return Ok(None);
        };
        let parts = raw
            .split(',')
            .map(|p| p.trim().parse::<T>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::Value {
                section: section.into(),
                key: key.into(),
                message: format!("{raw:?}: {e}"),
            })?;
        if parts.len() != len {
            return Err(ConfigError::Value {
                section: section.into(),
                key: key.into(),
                message: format!("expected {len} comma-separated values, got {}", parts.len()),
            });
        }
        Ok(Some(parts))
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (section, keys) in &self.sections {
            if let Some((key, (line, _))) = keys.iter().next() {
                return Err(ConfigError::Syntax {
                    line: *line,
                    message: format!("unknown key {key:?} in [{section}]"),
                });
            }
        }
        Ok(())
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl ExperimentConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut r = Reader {
            sections: parse_sections(text)?,
        };
        let mut cfg = ExperimentConfig::default();
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let source: Option<String> = r.take("data", "source")?;
        let manifest: Option<PathBuf> = r.take("data", "manifest")?;
        let mut synth = SynthConfig::default();
        if let Some(n) = r.take::<usize>("synth", "per_class")? {
            synth.per_class = [n; NUM_CLASSES];
        }
        if let Some(counts) = r.list::<usize>("synth", "class_counts", NUM_CLASSES)? {
            synth.per_class = [counts[0], counts[1], counts[2]];
        }
        if let Some(d) = r.list::<usize>("synth", "dims", 3)? {
            synth.dims = (d[0], d[1], d[2]);
        }
        macro_rules! set {
            ($target:expr, $section:literal, $key:literal) => {
                if let Some(v) = r.take($section, $key)? {
                    $target = v;
                }
            };
        }
        set!(synth.noise_scale, "synth", "noise_scale");
        set!(synth.subject_sigma, "synth", "subject_sigma");
        set!(synth.voxel_sigma, "synth", "voxel_sigma");
        set!(synth.pair_gap, "synth", "pair_gap");
        set!(synth.seed, "synth", "seed");
        for (i, m) in ["gm", "wm", "fa", "md"].iter().enumerate() {
            if let Some(pair) = r.list::<ClassLabel>("synth", &format!("ambiguous_{m}"), 2)? {
                synth.ambiguous[i] = (pair[0], pair[1]);
            }
        }
        cfg.source = match (source.as_deref(), manifest) {
            (Some("manifest") | None, Some(path)) => DataSource::Manifest(resolve(path)),
            (Some("synthetic") | None, None) => {
                synth.validate().map_err(invalid)?;
                DataSource::Synthetic(synth)
            }
            (Some("manifest"), None) => return Err(invalid("[data] source=manifest needs manifest=PATH")),
            (Some(other), _) => {
                return Err(invalid(format!(
                    "[data] source must be synthetic or manifest (with manifest=PATH), got {other:?}"
                )))
            }
        };

        let mut fraction = cfg.split.train_fraction();
        let mut split_seed = cfg.split.seed();
        set!(fraction, "split", "train_fraction");
        set!(split_seed, "split", "seed");
        set!(cfg.validation_fraction, "split", "validation_fraction");
        cfg.split = SplitSpec::new(fraction, split_seed).map_err(invalid)?;
        if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
            return Err(invalid(format!(
                "[split] validation_fraction {} must lie strictly between 0 and 1",
                cfg.validation_fraction
            )));
        }

        let (mut k, mut beta, mut seed) = (cfg.adasyn.k(), cfg.adasyn.beta(), cfg.adasyn.seed());
        set!(k, "adasyn", "k");
        set!(beta, "adasyn", "beta");
        set!(seed, "adasyn", "seed");
        cfg.adasyn = AdasynConfig::new(k, beta, seed).map_err(invalid)?;

        if let Some(spec) = r.take::<String>("network", "spec")? {
            cfg.network = if spec == "desk" {
                NetworkChoice::Desk
            } else {
                NetworkChoice::File(resolve(PathBuf::from(spec)))
            };
        }

        set!(cfg.train.epochs, "train", "epochs");
        set!(cfg.train.batch_size, "train", "batch_size");
        set!(cfg.train.learning_rate, "train", "learning_rate");
        set!(cfg.train.beta1, "train", "beta1");
        set!(cfg.train.beta2, "train", "beta2");
        set!(cfg.train.epsilon, "train", "epsilon");
        set!(cfg.train.seed, "train", "seed");
        cfg.train.validate().map_err(invalid)?;

        let (mut radius, mut step) = (cfg.grid.radius, cfg.grid.step);
        set!(radius, "fusion", "radius");
        set!(step, "fusion", "step");
        cfg.grid = GridSearchConfig::new(radius, step).map_err(invalid)?;

        if let Some(dir) = r.take::<PathBuf>("output", "dir")? {
            cfg.out_dir = dir;
        }
        cfg.out_dir = resolve(cfg.out_dir);
        r.finish()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = ExperimentConfig::parse("", Path::new("/base")).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.source, DataSource::Synthetic(SynthConfig::default()));
    }

    #[test]
    fn full_config() {
        let text = "\
# comment
[data]
source=synthetic
[synth]
per_class=4
dims=2,8,8
seed=9
ambiguous_md=PD,SWEDD
[split]
train_fraction=0.75
seed=3
[adasyn]
k=3
beta=0.5
[network]
spec=nets/small.spec
[train]
epochs=7
learning_rate=1e-3  # faster
[fusion]
radius=0.02
step=0.01
[output]
dir=/tmp/run
";
        let cfg = ExperimentConfig::parse(text, Path::new("/cfg")).unwrap();
        let DataSource::Synthetic(s) = &cfg.source else { panic!() };
        assert_eq!(s.per_class, [4, 4, 4]);
        assert_eq!(s.dims, (2, 8, 8));
        assert_eq!(s.seed, 9);
        assert_eq!(s.ambiguous[3], (ClassLabel::Pd, ClassLabel::Swedd));
        assert_eq!(cfg.split.train_fraction(), 0.75);
        assert_eq!(cfg.adasyn.k(), 3);
        assert_eq!(cfg.network, NetworkChoice::File(PathBuf::from("/cfg/nets/small.spec")));
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.grid.radius, 0.02);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/run"));
    }

    #[test]
    fn manifest_source_resolves_relative_path() {
        let cfg = ExperimentConfig::parse("[data]\nmanifest=cohort/m.csv\n", Path::new("/c")).unwrap();
        assert_eq!(cfg.source, DataSource::Manifest(PathBuf::from("/c/cohort/m.csv")));
    }

    #[test]
    fn errors_are_reported() {
        let cases = [
            "epochs=3\n",
            "[train]\nepochs\n",
            "[train]\nepochs=x\n",
            "[train]\nepochs=0\n",
            "[train]\nepochz=3\n",
            "[train]\nepochs=3\nepochs=4\n",
            "[split]\ntrain_fraction=1.5\n",
            "[fusion]\nstep=0.1\n",
            "[synth]\ndims=4,4\n",
            "[synth]\nper_class=1\n",
            "[data]\nsource=pacs\n",
            "[data]\nsource=manifest\n",
            "[train\n",
        ];
        for text in cases {
            assert!(ExperimentConfig::parse(text, Path::new(".")).is_err(), "{text:?}");
        }
    }
}
