//! Dump directories: `manifest.tsv`, `meta.tsv` and one tensor file per
//! (dataset role, layer) named `<role>_layer<k>.bin`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::format::{read_tensor, read_tensor_header, write_tensor, DType, TensorHeader};
use super::manifest::{CorpusManifest, DatasetRole};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const META_FILE: &str = "meta.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpMeta {
    pub layer_count: usize,
    pub embedding_dim: usize,
    pub n_tokens: usize,
    pub model: String,
}

impl DumpMeta {
    fn to_tsv(&self) -> String {
        format!(
            "layer_count\t{}\nembedding_dim\t{}\nn_tokens\t{}\nmodel\t{}\n",
            self.layer_count, self.embedding_dim, self.n_tokens, self.model
        )
    }

    fn from_tsv(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("meta line without tab: `{line}`")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("meta.tsv is missing `{k}`")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("meta.tsv: `{k}` is not an integer")))
        };
        Ok(DumpMeta {
            layer_count: int("layer_count")?,
            embedding_dim: int("embedding_dim")?,
            n_tokens: int("n_tokens")?,
            model: get("model")?.to_string(),
        })
    }
}

/// Token-level activations for a corpus: one `[rows, tokens, embedding]`
/// tensor per (dataset role, layer). Rows follow the manifest id order of
/// the role.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    manifest: CorpusManifest,
    tensors: BTreeMap<(DatasetRole, usize), Array3<f32>>,
    dtype: DType,
    layer_count: usize,
    model: String,
}

impl ActivationSet {
    pub fn new(
        manifest: CorpusManifest,
        tensors: BTreeMap<(DatasetRole, usize), Array3<f32>>,
        dtype: DType,
        layer_count: usize,
        model: impl Into<String>,
    ) -> Result<Self> {
        if tensors.is_empty() || layer_count == 0 {
            return Err(Error::Parameter("activation set has no layers".into()));
        }
        let mut dims: Option<(usize, usize)> = None;
        for (&(role, layer), t) in &tensors {
            if layer >= layer_count {
                return Err(Error::Consistency(format!(
                    "{role} layer {layer} out of range for layer_count {layer_count}"
                )));
            }
            let (rows, tokens, embed) = t.dim();
            let expected = manifest.role_len(role);
            if rows != expected {
                return Err(Error::Consistency(format!(
                    "{role} layer {layer}: {rows} rows but manifest lists {expected} sentences"
                )));
            }
            match dims {
                None => dims = Some((tokens, embed)),
                Some(d) if d != (tokens, embed) => {
                    return Err(Error::Consistency(format!(
                        "{role} layer {layer}: token/embedding shape {:?} differs from {:?}",
                        (tokens, embed),
                        d
                    )))
                }
                _ => {}
            }
        }
        Ok(ActivationSet {
            manifest,
            tensors,
            dtype,
            layer_count,
            model: model.into(),
        })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn tensors(&self) -> &BTreeMap<(DatasetRole, usize), Array3<f32>> {
        &self.tensors
    }

    pub fn tensor(&self, role: DatasetRole, layer: usize) -> Option<&Array3<f32>> {
        self.tensors.get(&(role, layer))
    }

    pub fn n_tokens(&self) -> usize {
        self.tensors.values().next().map_or(0, |t| t.dim().1)
    }

    pub fn embedding_dim(&self) -> usize {
        self.tensors.values().next().map_or(0, |t| t.dim().2)
    }

    /// Layers for which `role` has a tensor.
    pub fn layers_for(&self, role: DatasetRole) -> BTreeSet<usize> {
        self.tensors
            .keys()
            .filter(|(r, _)| *r == role)
            .map(|&(_, l)| l)
            .collect()
    }

    pub fn meta(&self) -> DumpMeta {
        DumpMeta {
            layer_count: self.layer_count,
            embedding_dim: self.embedding_dim(),
            n_tokens: self.n_tokens(),
            model: self.model.clone(),
        }
    }
}

pub fn tensor_file_name(role: DatasetRole, layer: usize) -> String {
    format!("{}_layer{layer}.bin", role.name())
}

fn parse_tensor_file_name(name: &str) -> Option<(DatasetRole, usize)> {
    let stem = name.strip_suffix(".bin")?;
    let (role, layer) = stem.rsplit_once("_layer")?;
    Some((role.parse().ok()?, layer.parse().ok()?))
}

/// Header-level view of a dump; no payloads are read.
#[derive(Debug, Clone)]
pub struct DumpSummary {
    pub manifest: CorpusManifest,
    pub meta: DumpMeta,
    pub tensors: BTreeMap<(DatasetRole, usize), TensorHeader>,
}

fn tensor_paths(dir: &Path) -> Result<BTreeMap<(DatasetRole, usize), PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if !name.ends_with(".bin") {
            continue;
        }
        let key = parse_tensor_file_name(name)
            .ok_or_else(|| Error::Format(format!("unrecognised tensor file name `{name}`")))?;
        out.insert(key, entry.path());
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_header(
    key: (DatasetRole, usize),
    header: &TensorHeader,
    meta: &DumpMeta,
    manifest: &CorpusManifest,
) -> Result<()> {
    let (role, layer) = key;
    if header.shape.len() != 3 {
        return Err(Error::Format(format!(
            "{role} layer {layer}: expected rank 3, found {}",
            header.shape.len()
        )));
    }
    let expected = [manifest.role_len(role), meta.n_tokens, meta.embedding_dim];
    if header.shape != expected {
        return Err(Error::Consistency(format!(
            "{role} layer {layer}: shape {:?}, manifest and meta imply {:?}",
            header.shape, expected
        )));
    }
    if layer >= meta.layer_count {
        return Err(Error::Consistency(format!(
            "{role} layer {layer} out of range for layer_count {}",
            meta.layer_count
        )));
    }
    Ok(())
}

/// Reads manifest, meta and tensor headers, checking them against each other.
pub fn inspect_dump(dir: &Path) -> Result<DumpSummary> {
    let manifest = CorpusManifest::from_tsv(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let meta = DumpMeta::from_tsv(&read_text(&dir.join(META_FILE))?)?;
    let mut tensors = BTreeMap::new();
    for (key, path) in tensor_paths(dir)? {
        let header = read_tensor_header(&path)?;
        check_header(key, &header, &meta, &manifest)?;
        tensors.insert(key, header);
    }
    if tensors.is_empty() {
        return Err(Error::Format(format!("{} contains no tensor files", dir.display())));
    }
    Ok(DumpSummary {
        manifest,
        meta,
        tensors,
    })
}

pub fn read_dump(dir: &Path) -> Result<ActivationSet> {
    let manifest = CorpusManifest::from_tsv(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let meta = DumpMeta::from_tsv(&read_text(&dir.join(META_FILE))?)?;
    let mut tensors = BTreeMap::new();
    let mut dtype = None;
    for (key, path) in tensor_paths(dir)? {
        let (header, data) = read_tensor(&path)?;
        check_header(key, &header, &meta, &manifest)?;
        match dtype {
            None => dtype = Some(header.dtype),
            Some(d) if d != header.dtype => {
                return Err(Error::Consistency(format!(
                    "{} has dtype {:?}, other tensors have {:?}",
                    path.display(),
                    header.dtype,
                    d
                )))
            }
            _ => {}
        }
        let shape = (header.shape[0], header.shape[1], header.shape[2]);
        let array = Array3::from_shape_vec(shape, data)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        tensors.insert(key, array);
    }
    let dtype = dtype.ok_or_else(|| Error::Format(format!("{} contains no tensor files", dir.display())))?;
    ActivationSet::new(manifest, tensors, dtype, meta.layer_count, meta.model)
}

pub fn write_dump(set: &ActivationSet, dir: &Path) -> Result<()> {
    if set.tensors.is_empty() {
        return Err(Error::Parameter("refusing to write an empty dump".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, set.manifest.to_tsv()).map_err(|e| Error::io(&manifest_path, e))?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, set.meta().to_tsv()).map_err(|e| Error::io(&meta_path, e))?;
    for (&(role, layer), tensor) in &set.tensors {
        let path = dir.join(tensor_file_name(role, layer));
        let shape = tensor.shape().to_vec();
        let data = tensor.as_standard_layout();
        write_tensor(&path, set.dtype, &shape, data.as_slice().expect("standard layout"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::manifest::Language;

    #[test]
    fn tensor_file_names_parse() {
        assert_eq!(
            parse_tensor_file_name("translation_zh_layer12.bin"),
            Some((DatasetRole::Translation(Language::Zh), 12))
        );
        assert_eq!(parse_tensor_file_name("twin_layer0.bin"), Some((DatasetRole::Twin, 0)));
        assert_eq!(parse_tensor_file_name("twin.bin"), None);
    }

    #[test]
    fn meta_round_trip() {
        let meta = DumpMeta {
            layer_count: 4,
            embedding_dim: 16,
            n_tokens: 6,
            model: "tiny-model".into(),
        };
        assert_eq!(DumpMeta::from_tsv(&meta.to_tsv()).unwrap(), meta);
        assert!(DumpMeta::from_tsv("layer_count\t4\n").is_err());
    }
}
