//! TOML run configuration.

use std::path::{Path, PathBuf};

use pointseg_core::phantom::{synth_corpus, PhantomConfig, SampleRecord};
use pointseg_core::pipeline::{split_train_val, TrainSettings};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::load_manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines manifest; synthetic phantoms are used when absent.
    pub manifest: Option<PathBuf>,
    pub phantom: PhantomConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub corpus_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            phantom: PhantomConfig::default(),
            train_count: 200,
            test_count: 50,
            corpus_seed: 2024,
        }
    }
}

impl DataConfig {
    /// Training and held-out records.
    ///
    /// A manifest is split 80/20 by line order. Synthetic data draws
    /// `train_count + test_count` phantoms and holds out the tail.
    pub fn load(&self) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
        match &self.manifest {
            Some(path) => {
                let records = load_manifest(path)?;
                let (a, b) = split_train_val(&records);
                Ok((a.to_vec(), b.to_vec()))
            }
            None => {
                let mut all = synth_corpus(self.corpus_seed, self.train_count + self.test_count, &self.phantom)?;
                let test = all.split_off(self.train_count);
                Ok((all, test))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSettings,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative manifest path is taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(m), Some(dir)) = (&cfg.data.manifest, path.parent()) {
            if m.is_relative() {
                cfg.data.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.manifest.is_none() {
            self.data.phantom.validate()?;
            if self.data.train_count == 0 {
                return Err(Error::Config("train_count must be positive".into()));
            }
        }
        Ok(())
    }
}
