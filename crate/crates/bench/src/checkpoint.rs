//! Plain-text parameter checkpoints.
//!
//! ```text
//! rff-checkpoint 1
//! kind gen
//! seed 3
//! config fnv1a64 9c1f0e2b6a7d4c11
//! entries 17
//! tensor mapper.hidden.weight 128 128
//! <one comma-separated line per row>
//! ids centers.classes 10
//! 0,1,2,4,5,7,8,11,12,14
//! ```
//!
//! Reals use nine significant digits, which restores `f32` values exactly.
//! The config hash is FNV-1a over the run's manifest text.

use std::hash::Hasher;
use std::path::Path;

use rff_core::classifier::SoftmaxClassifier;
use rff_core::gen::{ClassCenters, CriticParams, GenModels, GeneratorParams};
use rff_core::mapper::MapperParams;
use rff_core::nn::Linear;
use rff_core::Tensor;

use crate::error::{BenchError, Result};
use crate::io::{matrix_to_csv, parse_matrix, read_text, write_text};

const MAGIC: &str = "rff-checkpoint 1";

pub fn config_hash(manifest: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(manifest.as_bytes());
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub config_hash: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub ids: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, manifest: &str) -> Self {
        Self {
            kind: kind.into(),
            seed,
            config_hash: config_hash(manifest),
            tensors: Vec::new(),
            ids: Vec::new(),
        }
    }

    fn push_linear(&mut self, name: &str, layer: &Linear<f32>) {
        self.tensors.push((format!("{name}.weight"), layer.weight.clone()));
        self.tensors.push((format!("{name}.bias"), layer.bias.clone()));
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC}\nkind {}\nseed {}\nconfig fnv1a64 {:016x}\nentries {}\n",
            self.kind,
            self.seed,
            self.config_hash,
            self.tensors.len() + self.ids.len()
        );
        for (name, t) in &self.tensors {
            out.push_str(&format!("tensor {name} {} {}\n", t.rows(), t.cols()));
            out.push_str(&matrix_to_csv(t));
        }
        for (name, ids) in &self.ids {
            let list: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("ids {name} {}\n{}\n", ids.len(), list.join(",")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let bad = |line: usize, detail: String| BenchError::Format {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let field = |i: usize, key: &str| -> Result<&str> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(key))
                .map(str::trim)
                .ok_or_else(|| bad(i + 1, format!("expected `{key} ...`")))
        };
        if lines.first() != Some(&MAGIC) {
            return Err(bad(1, format!("expected {MAGIC:?}")));
        }
        let kind = field(1, "kind ")?.to_string();
        let seed = field(2, "seed ")?
            .parse()
            .map_err(|_| bad(3, "bad seed".into()))?;
        let config_hash = u64::from_str_radix(field(3, "config fnv1a64 ")?, 16)
            .map_err(|_| bad(4, "bad config hash".into()))?;
        let entries: usize = field(4, "entries ")?
            .parse()
            .map_err(|_| bad(5, "bad entry count".into()))?;
        let mut ck = Self {
            kind,
            seed,
            config_hash,
            tensors: Vec::new(),
            ids: Vec::new(),
        };
        let mut i = 5;
        for _ in 0..entries {
            let header: Vec<&str> = lines
                .get(i)
                .ok_or_else(|| bad(i + 1, "unexpected end of file".into()))?
                .split_whitespace()
                .collect();
            match header.as_slice() {
                ["tensor", name, rows, cols] => {
                    let rows: usize = rows.parse().map_err(|_| bad(i + 1, "bad row count".into()))?;
                    let cols: usize = cols.parse().map_err(|_| bad(i + 1, "bad column count".into()))?;
                    let body = lines
                        .get(i + 1..i + 1 + rows)
                        .ok_or_else(|| bad(i + 1, format!("tensor {name} is truncated")))?
                        .join("\n");
                    let t = if rows == 0 {
                        Tensor::zeros(0, cols)
                    } else {
                        parse_matrix(name, &body, Some(cols)).map_err(|e| bad(i + 1, e.to_string()))?
                    };
                    ck.tensors.push((name.to_string(), t));
                    i += 1 + rows;
                }
                ["ids", name, count] => {
                    let count: usize = count.parse().map_err(|_| bad(i + 1, "bad id count".into()))?;
                    let line = lines.get(i + 1).copied().unwrap_or("");
                    let ids: Vec<usize> = line
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(i + 2, "bad id".into()))?;
                    if ids.len() != count {
                        return Err(bad(i + 2, format!("{} ids, expected {count}", ids.len())));
                    }
                    ck.ids.push((name.to_string(), ids));
                    i += 2;
                }
                _ => return Err(bad(i + 1, "expected `tensor` or `ids` entry".into())),
            }
        }
        Ok(ck)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| BenchError::Failed(format!("checkpoint has no tensor {name}")))
    }

    pub fn id_list(&self, name: &str) -> Result<Vec<usize>> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, ids)| ids.clone())
            .ok_or_else(|| BenchError::Failed(format!("checkpoint has no id list {name}")))
    }

    fn linear(&self, name: &str) -> Result<Linear<f32>> {
        let weight = self.tensor(&format!("{name}.weight"))?;
        let bias = self.tensor(&format!("{name}.bias"))?;
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(BenchError::Failed(format!("layer {name} has inconsistent shapes")));
        }
        Ok(Linear { weight, bias })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(BenchError::Failed(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.kind
            )))
        }
    }

    pub fn push_mapper(&mut self, mapper: &MapperParams<f32>) {
        self.push_linear("mapper.hidden", &mapper.hidden);
        self.push_linear("mapper.mu", &mapper.mu_head);
        self.push_linear("mapper.log_var", &mapper.log_var_head);
    }

    pub fn mapper(&self) -> Result<MapperParams<f32>> {
        Ok(MapperParams {
            hidden: self.linear("mapper.hidden")?,
            mu_head: self.linear("mapper.mu")?,
            log_var_head: self.linear("mapper.log_var")?,
        })
    }

    fn push_classifier(&mut self, name: &str, c: &SoftmaxClassifier<f32>) {
        self.push_linear(name, &c.layer);
        self.ids.push((format!("{name}.classes"), c.classes.clone()));
    }

    fn classifier(&self, name: &str) -> Result<SoftmaxClassifier<f32>> {
        Ok(SoftmaxClassifier {
            layer: self.linear(name)?,
            classes: self.id_list(&format!("{name}.classes"))?,
        })
    }

    pub fn push_gen(&mut self, models: &GenModels, final_classifier: &SoftmaxClassifier<f32>) {
        self.push_linear("generator.hidden", &models.generator.hidden);
        self.push_linear("generator.output", &models.generator.output);
        self.ids.push(("generator.noise_dim".into(), vec![models.generator.noise_dim]));
        self.push_mapper(&models.mapper);
        self.push_linear("critic.hidden", &models.critic.hidden);
        self.push_linear("critic.output", &models.critic.output);
        self.tensors.push(("centers".into(), models.centers.centers.clone()));
        self.ids.push(("centers.classes".into(), models.centers.classes.clone()));
        self.push_classifier("pretrained", &models.classifier);
        self.push_classifier("final", final_classifier);
    }

    pub fn gen(&self) -> Result<(GenModels, SoftmaxClassifier<f32>)> {
        let noise = self.id_list("generator.noise_dim")?;
        let noise_dim = *noise
            .first()
            .ok_or_else(|| BenchError::Failed("empty generator.noise_dim".into()))?;
        let models = GenModels {
            generator: GeneratorParams {
                hidden: self.linear("generator.hidden")?,
                output: self.linear("generator.output")?,
                noise_dim,
            },
            mapper: self.mapper()?,
            centers: ClassCenters {
                classes: self.id_list("centers.classes")?,
                centers: self.tensor("centers")?,
            },
            critic: CriticParams {
                hidden: self.linear("critic.hidden")?,
                output: self.linear("critic.output")?,
            },
            classifier: self.classifier("pretrained")?,
        };
        Ok((models, self.classifier("final")?))
    }
}
