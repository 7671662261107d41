//! Centroid sets on disk: `<stem>.bin` holds the `[n, D]` vectors in
//! original-id order (tensor format), `<stem>_provenance.tsv` one line per
//! centroid: `original_id<TAB>contributing ids...`, after a `#` header line
//! recording the kind and language subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array1;

use super::{CentroidKind, CentroidSet};
use crate::error::{Error, Result};
use crate::tensorstore::{read_tensor, write_tensor, DType, Language};

pub fn write_centroids(cs: &CentroidSet, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = cs.dim();
    let data: Vec<f32> = cs
        .vectors
        .values()
        .flat_map(|v| v.iter().map(|&x| x as f32))
        .collect();
    write_tensor(&dir.join(format!("{stem}.bin")), DType::F32, &[cs.len(), dim], &data)?;

    let languages: Vec<&str> = cs.language_subset.iter().map(|l| l.code()).collect();
    let mut tsv = format!("# kind={} languages={}\n", cs.kind, languages.join(","));
    for (id, contributors) in &cs.provenance {
        tsv.push_str(&id.to_string());
        for c in contributors {
            tsv.push('\t');
            tsv.push_str(&c.to_string());
        }
        tsv.push('\n');
    }
    let path = dir.join(format!("{stem}_provenance.tsv"));
    fs::write(&path, tsv).map_err(|e| Error::io(&path, e))
}

/// Reads a centroid set. POS templates and permutation history are not
/// stored; the result carries an identity assignment.
pub fn read_centroids(dir: &Path, stem: &str) -> Result<CentroidSet> {
    let (header, data) = read_tensor(&dir.join(format!("{stem}.bin")))?;
    if header.shape.len() != 2 {
        return Err(Error::Format(format!("centroid tensor must be rank 2, got {:?}", header.shape)));
    }
    let (n, dim) = (header.shape[0], header.shape[1]);
    let path = dir.join(format!("{stem}_provenance.tsv"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let head = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Format("provenance file lacks its header line".into()))?;
    let mut kind = None;
    let mut language_subset = Vec::new();
    for field in head.split_whitespace() {
        match field.split_once('=') {
            Some(("kind", "syntactic")) => kind = Some(CentroidKind::Syntactic),
            Some(("kind", "semantic")) => kind = Some(CentroidKind::Semantic),
            Some(("languages", list)) => {
                language_subset = list
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::parse::<Language>)
                    .collect::<Result<_>>()?
            }
            _ => return Err(Error::Format(format!("bad provenance header field `{field}`"))),
        }
    }
    let kind = kind.ok_or_else(|| Error::Format("provenance header has no kind".into()))?;

    let mut provenance = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut ids = line.split('\t').map(|s| {
            s.parse::<u32>()
                .map_err(|_| Error::Format(format!("bad id `{s}` in provenance")))
        });
        let key = ids.next().expect("split yields one item")?;
        provenance.insert(key, ids.collect::<Result<Vec<_>>>()?);
    }
    if provenance.len() != n {
        return Err(Error::Consistency(format!(
            "{n} centroid vectors but {} provenance lines",
            provenance.len()
        )));
    }
    let vectors = provenance
        .keys()
        .enumerate()
        .map(|(row, &k)| {
            let v = Array1::from_iter(data[row * dim..(row + 1) * dim].iter().map(|&x| f64::from(x)));
            (k, v)
        })
        .collect();
    Ok(CentroidSet {
        kind,
        vectors,
        assignment: provenance.keys().map(|&k| (k, k)).collect(),
        provenance,
        templates: BTreeMap::new(),
        language_subset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cs = CentroidSet {
            kind: CentroidKind::Semantic,
            vectors: [(3, array![1.0, 0.5]), (9, array![-2.0, 0.25])].into_iter().collect(),
            provenance: [(3, vec![10, 11]), (9, vec![12, 13])].into_iter().collect(),
            templates: BTreeMap::new(),
            assignment: [(3, 3), (9, 9)].into_iter().collect(),
            language_subset: vec![Language::Es, Language::Zh],
        };
        write_centroids(&cs, dir.path(), "sem").unwrap();
        let back = read_centroids(dir.path(), "sem").unwrap();
        assert_eq!(back, cs);
    }
}
