//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `PSCK`, `u32` format version, `u32` scalar
//! width in bytes, `u64` seed, epoch, iteration and optimizer step, a
//! length-prefixed JSON echo of the training settings, then the layer table.
//! Each layer stores its name, `cin`, `cout`, `k` and six tensors: weight and
//! bias of the parameters, the first moments and the second moments.

use std::fs;
use std::path::Path;

use pointseg_core::nn::{AdamState, ModelParams};
use pointseg_core::pipeline::{TrainSettings, Trainer};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PSCK";
pub const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub settings: TrainSettings,
    pub epoch: u64,
    pub iteration: u64,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer<f32>) -> Self {
        Checkpoint {
            settings: t.settings.clone(),
            epoch: t.epoch as u64,
            iteration: t.iteration,
            params: t.params.clone(),
            adam: t.adam.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer<f32> {
        Trainer {
            settings: self.settings,
            params: self.params,
            adam: self.adam,
            epoch: self.epoch as usize,
            iteration: self.iteration,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for v in [self.settings.seed, self.epoch, self.iteration, self.adam.step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let config = serde_json::to_vec(&self.settings).expect("settings serialize");
        put_bytes(&mut out, &config);
        out.extend_from_slice(&(self.params.layers.len() as u32).to_le_bytes());
        let groups = [&self.params, &self.adam.m, &self.adam.v];
        for (i, layer) in self.params.layers.iter().enumerate() {
            put_bytes(&mut out, layer.name.as_bytes());
            for d in [layer.cin, layer.cout, layer.k] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for g in groups {
                for v in g.layers[i].weight.iter().chain(&g.layers[i].bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("wrong magic".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let width = r.u32()?;
        if width != 4 {
            return Err(format!("unsupported scalar width {width}"));
        }
        let (seed, epoch, iteration, step) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let config = r.bytes()?;
        let settings: TrainSettings =
            serde_json::from_slice(config).map_err(|e| format!("settings echo: {e}"))?;
        if settings.seed != seed {
            return Err("seed does not match the settings echo".into());
        }
        let mut params = ModelParams::<f32>::zeros();
        let mut m = params.zeros_like();
        let mut v = params.zeros_like();
        let n_layers = r.u32()? as usize;
        if n_layers != params.layers.len() {
            return Err(format!("{n_layers} layers, expected {}", params.layers.len()));
        }
        for i in 0..n_layers {
            let name = std::str::from_utf8(r.bytes()?).map_err(|e| e.to_string())?;
            let dims = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let want = &params.layers[i];
            if name != want.name || dims != (want.cin, want.cout, want.k) {
                return Err(format!("layer {i} is {name} {dims:?}, expected {} {:?}", want.name, (want.cin, want.cout, want.k)));
            }
            for g in [&mut params, &mut m, &mut v] {
                let layer = &mut g.layers[i];
                for x in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                    *x = r.f32()?;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            settings,
            epoch,
            iteration,
            params,
            adam: AdamState { step, m, v },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> std::result::Result<&'a [u8], String> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
