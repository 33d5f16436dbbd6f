//! Parameter checkpoints as JSON.
//!
//! ```text
//! {
//!   "format": "gdpp-checkpoint/1",
//!   "manifest": "<run manifest hash or null>",
//!   "iteration": 25000,
//!   "kind": "gan" | "vae",
//!   "nets": [
//!     { "name": "generator", "spec": { "widths": [...], "hidden": "relu",
//!       "output": "identity", "seed": 0 },
//!       "params": [ { "name": "w0", "rows": 128, "cols": 64, "values": [...] }, ... ] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Values are row-major and printed in shortest round-trip form, so loading
//! restores every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GanPair, Mlp, MlpSpec, Param, VaeNets};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FORMAT: &str = "gdpp-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub name: String,
    pub spec: MlpSpec,
    pub params: Vec<ParamRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub manifest: Option<String>,
    /// Training iterations behind these parameters, when known.
    #[serde(default)]
    pub iteration: Option<usize>,
    pub kind: String,
    pub nets: Vec<NetRecord>,
}

impl NetRecord {
    fn from_mlp(name: &str, mlp: &Mlp) -> Self {
        Self {
            name: name.into(),
            spec: mlp.spec().clone(),
            params: mlp
                .params()
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    fn to_mlp(&self) -> Result<Mlp> {
        let mut mlp = Mlp::new(MlpSpec { ..self.spec.clone() })?;
        let params = self
            .params
            .iter()
            .map(|r| {
                Ok(Param {
                    name: r.name.clone(),
                    value: Matrix::from_vec(r.rows, r.cols, r.values.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        mlp.load_params(params)?;
        Ok(mlp)
    }
}

impl Checkpoint {
    pub fn from_gan(gan: &GanPair, manifest: Option<String>) -> Self {
        Self {
            format: FORMAT.into(),
            manifest,
            iteration: None,
            kind: "gan".into(),
            nets: vec![
                NetRecord::from_mlp("generator", &gan.generator),
                NetRecord::from_mlp("discriminator", &gan.discriminator),
            ],
        }
    }

    pub fn from_vae(vae: &VaeNets, manifest: Option<String>) -> Self {
        Self {
            format: FORMAT.into(),
            manifest,
            iteration: None,
            kind: "vae".into(),
            nets: vec![
                NetRecord::from_mlp("encoder", &vae.encoder),
                NetRecord::from_mlp("decoder", &vae.decoder),
            ],
        }
    }

    fn net(&self, name: &str) -> Result<Mlp> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::Parse(format!("checkpoint has no `{name}` network")))?
            .to_mlp()
    }

    pub fn to_gan(&self) -> Result<GanPair> {
        Ok(GanPair {
            generator: self.net("generator")?,
            discriminator: self.net("discriminator")?,
        })
    }

    pub fn to_vae(&self) -> Result<VaeNets> {
        Ok(VaeNets {
            encoder: self.net("encoder")?,
            decoder: self.net("decoder")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.format != FORMAT {
            return Err(Error::Parse(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        Ok(ck)
    }
}
