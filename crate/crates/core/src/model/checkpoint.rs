use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainingMode};
use super::network::{MissaModel, ModelDims};
use crate::corpus::{Taxonomy, Vocabulary};
use crate::error::{Error, Result};
use crate::nnet::{OptimizerConfig, Tensor};

pub const PARAMS_FILE: &str = "params.jsonl";
pub const SIDECAR_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.tsv";
const PARAMS_FORMAT: &str = "missa-params";
const SIDECAR_FORMAT: &str = "missa-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_validation_loss: Option<f64>,
    pub optimizer: Option<OptimizerConfig>,
}

/// A model with everything needed to encode inputs for it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: MissaModel,
    pub vocab: Vocabulary,
    pub taxonomy: Taxonomy,
    pub mode: TrainingMode,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    mode: TrainingMode,
    config: ModelConfig,
    dims: ModelDims,
    taxonomy_digest: String,
    taxonomy: Taxonomy,
    vocabulary: String,
    vocabulary_size: usize,
    training: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    format: String,
    version: u32,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Checkpoint {
    /// A freshly initialized model sized for `vocab` and `taxonomy`.
    pub fn initialize(config: ModelConfig, mode: TrainingMode, vocab: Vocabulary, taxonomy: Taxonomy, seed: u64) -> Result<Self> {
        let dims = ModelDims {
            vocab: vocab.len(),
            intents: taxonomy.intents.len(),
            slots: taxonomy.slots.len(),
        };
        let model = MissaModel::new(config, dims, seed)?;
        Ok(Self {
            model,
            vocab,
            taxonomy,
            mode,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn check_consistency(&self) -> Result<()> {
        let d = self.model.dims;
        if d.vocab != self.vocab.len() {
            return Err(Error::ModelMismatch(format!(
                "model expects {} tokens, vocabulary has {}",
                d.vocab,
                self.vocab.len()
            )));
        }
        if d.intents != self.taxonomy.intents.len() || d.slots != self.taxonomy.slots.len() {
            return Err(Error::ModelMismatch("classifier widths differ from the taxonomy".into()));
        }
        Ok(())
    }

    /// SHA-256 over mode, configuration, taxonomy, vocabulary and parameter values.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.mode.as_str());
        h.update(serde_json::to_vec(&self.model.config).unwrap_or_default());
        h.update(self.taxonomy.digest());
        h.update(self.vocab.to_tsv());
        for p in self.model.store.iter() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params_path = dir.join(PARAMS_FILE);
        let file = fs::File::create(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let mut w = BufWriter::new(file);
        let header = ParamsHeader {
            format: PARAMS_FORMAT.into(),
            version: VERSION,
            count: self.model.store.len(),
        };
        json_line(&mut w, &header, &params_path)?;
        for p in self.model.store.iter() {
            let rec = ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            };
            json_line(&mut w, &rec, &params_path)?;
        }
        w.flush().map_err(|e| Error::io(dir.join(PARAMS_FILE), e))?;

        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: VERSION,
            mode: self.mode,
            config: self.model.config.clone(),
            dims: self.model.dims,
            taxonomy_digest: self.taxonomy.digest(),
            taxonomy: self.taxonomy.clone(),
            vocabulary: VOCAB_FILE.into(),
            vocabulary_size: self.vocab.len(),
            training: self.meta.clone(),
        };
        let raw = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json("model sidecar", e))?;
        let path = dir.join(SIDECAR_FILE);
        fs::write(&path, raw + "\n").map_err(|e| Error::io(&path, e))?;
        self.vocab.save(dir.join(VOCAB_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(SIDECAR_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
        if sidecar.format != SIDECAR_FORMAT || sidecar.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported sidecar {} v{}",
                sidecar.format, sidecar.version
            )));
        }
        if sidecar.taxonomy.digest() != sidecar.taxonomy_digest {
            return Err(Error::Checkpoint("taxonomy digest does not match the stored taxonomy".into()));
        }
        let vocab = Vocabulary::load(dir.join(&sidecar.vocabulary))?;
        if vocab.len() != sidecar.vocabulary_size {
            return Err(Error::ModelMismatch(format!(
                "sidecar records {} tokens, vocabulary file has {}",
                sidecar.vocabulary_size,
                vocab.len()
            )));
        }
        let mut model = MissaModel::new(sidecar.config, sidecar.dims, 0)?;
        load_params(&mut model, &dir.join(PARAMS_FILE))?;
        let ckpt = Self {
            model,
            vocab,
            taxonomy: sidecar.taxonomy,
            mode: sidecar.mode,
            meta: sidecar.training,
        };
        ckpt.check_consistency()?;
        Ok(ckpt)
    }
}

fn load_params(model: &mut MissaModel, path: &Path) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let ctx = || path.display().to_string();
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("{} is empty", ctx())))?
        .map_err(|e| Error::io(path, e))?;
    let header: ParamsHeader = serde_json::from_str(&header).map_err(|e| Error::json(ctx(), e))?;
    if header.format != PARAMS_FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported parameter file {} v{}",
            header.format, header.version
        )));
    }
    if header.count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "file holds {} parameters, model has {}",
            header.count,
            model.store.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ParamRecord = serde_json::from_str(&line).map_err(|e| Error::json(ctx(), e))?;
        let tensor = Tensor::new(rec.shape, rec.values)?;
        model.store.load_value(&rec.name, tensor)?;
        seen.insert(rec.name);
    }
    if seen.len() != header.count {
        return Err(Error::Checkpoint(format!(
            "expected {} distinct parameters, found {}",
            header.count,
            seen.len()
        )));
    }
    Ok(())
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::json("checkpoint record", e))?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}
