use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{BatchNorm, Model};
use crate::tree::{TreeParams, TreeTopology};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormFile {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Row-major `W` (`(2^d - 1) x p`) and `O` (`2^d x k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub w: Vec<f64>,
    pub o: Vec<f64>,
}

/// On-disk JSON form of a [`Model`] plus the label names of its classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub p: usize,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    pub activation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub classes: Vec<String>,
    pub batch_norm: BatchNormFile,
    pub trees: Vec<TreeFile>,
}

impl ModelFile {
    pub fn from_model(model: &Model, classes: &[String]) -> Result<Self> {
        let ens = &model.ensemble;
        if classes.len() != ens.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "class names",
                expected: ens.output_dim(),
                actual: classes.len(),
            });
        }
        let (gamma, alpha) = match ens.activation() {
            Activation::SmoothStep(s) => (Some(s.gamma()), None),
            Activation::Logistic(l) => (None, Some(l.alpha())),
        };
        let bn = &model.bn;
        Ok(Self {
            version: FORMAT_VERSION,
            p: ens.input_dim(),
            k: ens.output_dim(),
            d: ens.topology().depth(),
            m: ens.num_trees(),
            activation: ens.activation().name().to_string(),
            gamma,
            alpha,
            classes: classes.to_vec(),
            batch_norm: BatchNormFile {
                scale: bn.scale().to_vec(),
                shift: bn.shift().to_vec(),
                running_mean: bn.running_mean().to_vec(),
                running_var: bn.running_var().to_vec(),
                eps: bn.eps(),
                momentum: bn.momentum(),
            },
            trees: ens
                .trees
                .iter()
                .map(|t| TreeFile {
                    w: t.w.as_slice().to_vec(),
                    o: t.o.as_slice().to_vec(),
                })
                .collect(),
        })
    }

    /// Rebuilds the model, checking every array length against `(p, k, d, m)`.
    pub fn to_model(&self) -> Result<Model> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        let activation = match (self.activation.as_str(), self.gamma, self.alpha) {
            ("smooth", Some(g), _) => Activation::smooth_step(g)?,
            ("logistic", _, Some(a)) => Activation::logistic(a)?,
            (kind, ..) => {
                return Err(Error::Data(format!(
                    "activation '{kind}' is unknown or missing its width parameter"
                )))
            }
        };
        if self.classes.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "class names",
                expected: self.k,
                actual: self.classes.len(),
            });
        }
        if self.trees.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "trees",
                expected: self.m,
                actual: self.trees.len(),
            });
        }
        let topo = TreeTopology::new(self.d)?;
        let trees = self
            .trees
            .iter()
            .map(|t| {
                Ok(TreeParams {
                    w: Matrix::from_vec(topo.num_internal(), self.p, t.w.clone())?,
                    o: Matrix::from_vec(topo.num_leaves(), self.k, t.o.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let b = &self.batch_norm;
        let bn = BatchNorm::from_parts(
            b.scale.clone(),
            b.shift.clone(),
            b.running_mean.clone(),
            b.running_var.clone(),
            b.momentum,
            b.eps,
        )?;
        if bn.num_features() != self.p {
            return Err(Error::DimensionMismatch {
                what: "batch norm features",
                expected: self.p,
                actual: bn.num_features(),
            });
        }
        Ok(Model {
            bn,
            ensemble: Ensemble::from_trees(topo, activation, trees)?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
