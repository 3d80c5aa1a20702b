//! Layered run configuration.
//!
//! A run starts from a named preset, then a TOML file is deep-merged over
//! it, then `dotted.key=value` overrides are applied in order. The merged
//! document is deserialised strictly (unknown keys are errors) and can be
//! written back out as the resolved snapshot of the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{load_manifest, synth_split, Dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::models::{ClassifierConfig, SegmenterConfig};
use crate::train::TrainConfig;

pub const PRESETS: [&str; 5] = ["desk", "desk-texture", "desk-segmentation", "paper", "paper-segmentation"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset manifest. Without one the synthetic generator is used.
    pub manifest: Option<PathBuf>,
    pub synthetic: SynthSpec,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, synthetic: SynthSpec::default(), train_per_class: 100, test_per_class: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub task: Task,
    pub seed: u64,
    pub strict_deterministic: bool,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub segmenter: SegmenterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset("desk").expect("desk preset exists")
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let desk = |task, spec: SynthSpec, train_per_class, test_per_class| {
            let classes = spec.classes.len();
            let parts = spec.part_sets().iter().map(Vec::len).sum();
            Self {
                preset: name.to_string(),
                task,
                seed: 1,
                strict_deterministic: false,
                data: DataConfig { manifest: None, synthetic: spec, train_per_class, test_per_class },
                train: TrainConfig::desk(),
                classifier: ClassifierConfig::desk(classes),
                segmenter: SegmenterConfig::desk(parts, classes),
            }
        };
        let paper = |task| Self {
            preset: name.to_string(),
            task,
            seed: 1,
            strict_deterministic: false,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            segmenter: SegmenterConfig::default(),
        };
        Ok(match name {
            "desk" => desk(Task::Classification, SynthSpec::default(), 100, 25),
            "desk-texture" => desk(Task::Classification, SynthSpec::texture_pair(), 200, 50),
            "desk-segmentation" => {
                let spec = SynthSpec { classes: vec!["cube".into(), "cylinder".into()], ..SynthSpec::default() };
                desk(Task::Segmentation, spec, 100, 25)
            }
            "paper" => paper(Task::Classification),
            "paper-segmentation" => paper(Task::Segmentation),
            other => {
                return Err(Error::Config(format!("unknown preset `{other}`; known: {}", PRESETS.join(", "))))
            }
        })
    }

    /// Preset, then `file`, then `overrides`. The preset is taken from a
    /// `preset` override, else from the file, else `desk`. A relative
    /// manifest path in the file is resolved against the file's directory.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_table = file.map(read_table).transpose()?;
        let mut override_table = Table::new();
        for spec in overrides {
            let (key, value) = parse_override(spec)?;
            set_dotted(&mut override_table, &key, value)?;
        }
        let preset_name = [override_table.get("preset"), file_table.as_ref().and_then(|t| t.get("preset"))]
            .into_iter()
            .flatten()
            .next()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Error::Config("preset must be a string".into())))
            .transpose()?
            .unwrap_or_else(|| "desk".to_string());
        let mut merged = to_table(&Self::preset(&preset_name)?)?;
        if let Some(mut t) = file_table {
            if let (Some(dir), Some(Value::Table(data))) = (file.and_then(Path::parent), t.get_mut("data")) {
                if let Some(Value::String(m)) = data.get_mut("manifest") {
                    if Path::new(m.as_str()).is_relative() {
                        *m = dir.join(&*m).to_string_lossy().into_owned();
                    }
                }
            }
            merge(&mut merged, t);
        }
        merge(&mut merged, override_table);
        let cfg: Self = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match self.task {
            Task::Classification => self.classifier.validate(),
            Task::Segmentation => self.segmenter.validate(),
        }?;
        if self.data.manifest.is_none() {
            self.data.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Writes `config.resolved.toml` and `seed.txt` into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("seed.txt");
        std::fs::write(&path, format!("{}\n", self.seed)).map_err(|e| Error::io(&path, e))
    }

    /// Train and test sets: from the manifest when one is given, otherwise
    /// generated from the synthetic spec under the run seed.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match &self.data.manifest {
            Some(path) => {
                let manifest = load_manifest(path)?;
                Ok((manifest.load_split(Split::Train)?, manifest.load_split(Split::Test)?))
            }
            None => synth_split(&self.data.synthetic, self.data.train_per_class, self.data.test_per_class, self.seed),
        }
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn to_table<T: Serialize>(value: &T) -> Result<Table> {
    Table::try_from(value).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as
/// one and as a bare string otherwise, so `k=20` is an integer and
/// `edge_function.kind=local_only` a string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let slot = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match slot {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{p}` in `{key}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Recursive merge: tables merge key by key, anything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
