//! Model directories: `manifest.json` plus one binary blob per cluster.
//!
//! Blob layout, all little-endian:
//!
//! ```text
//! magic  b"RXMLCLU1"
//! u64    d, r, ñ, l
//! f64    centroid[d]
//! f64    V[r·d]       row-major
//! f64    Z[ñ·r]       row-major
//! u64    nnz
//! u64    indptr[ñ+1]
//! u64    indices[nnz]
//! f64    values[nnz]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseRowMatrix};
use crate::pipeline::{ClusterModel, DatasetShape, EnsembleModel, TrainConfig, MODEL_FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";
const MAGIC: &[u8; 8] = b"RXMLCLU1";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClusterEntry {
    file: String,
    members: usize,
    rank: usize,
    label_nnz: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dataset: DatasetShape,
    config: TrainConfig,
    num_learners: usize,
    clusters_per_learner: usize,
    learners: Vec<Vec<ClusterEntry>>,
}

fn blob_name(learner: usize, cluster: usize) -> String {
    format!("learner{learner:03}_cluster{cluster:04}.bin")
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn row_major(m: &DenseMatrix) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

fn encode_cluster(c: &ClusterModel) -> Vec<u8> {
    let labels = c.member_labels();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for dim in [c.centroid().len(), c.rank(), c.size(), labels.cols()] {
        put_u64(&mut out, dim);
    }
    put_f64s(&mut out, c.centroid().iter().copied());
    put_f64s(&mut out, row_major(c.v()));
    put_f64s(&mut out, row_major(c.z()));
    put_u64(&mut out, labels.nnz());
    labels.indptr().iter().for_each(|&p| put_u64(&mut out, p));
    labels.indices().iter().for_each(|&j| put_u64(&mut out, j));
    put_f64s(&mut out, labels.values().iter().copied());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel(format!("{} is truncated at byte {}", self.name, self.bytes.len())))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::CorruptModel(format!("{}: value {v} too large", self.name)))
    }

    fn u64s(&mut self, count: usize) -> Result<Vec<usize>> {
        self.check_room(count)?;
        (0..count).map(|_| self.u64()).collect()
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        self.check_room(count)?;
        (0..count)
            .map(|_| Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap())))
            .collect()
    }

    /// Rejects counts that cannot fit in the remaining bytes before allocating.
    fn check_room(&self, count: usize) -> Result<()> {
        if count.checked_mul(8).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(Error::CorruptModel(format!("{} is truncated", self.name)));
        }
        Ok(())
    }
}

fn decode_cluster(bytes: &[u8], name: &str, expect: (usize, usize, usize, usize)) -> Result<ClusterModel> {
    let corrupt = |msg: String| Error::CorruptModel(format!("{name}: {msg}"));
    let mut rd = Reader { bytes, pos: 0, name };
    if rd.take(8)? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let dims = (rd.u64()?, rd.u64()?, rd.u64()?, rd.u64()?);
    if dims != expect {
        return Err(corrupt(format!(
            "dimensions (d, r, members, l) = {dims:?} but the manifest says {expect:?}"
        )));
    }
    let (d, r, members, l) = dims;
    let centroid = rd.f64s(d)?;
    let v = DenseMatrix::from_row_slice(r, d, &rd.f64s(r * d)?);
    let z = DenseMatrix::from_row_slice(members, r, &rd.f64s(members * r)?);
    let nnz = rd.u64()?;
    let indptr = rd.u64s(members + 1)?;
    let indices = rd.u64s(nnz)?;
    let values = rd.f64s(nnz)?;
    if rd.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
    if !(finite(&centroid) && finite(v.as_slice()) && finite(z.as_slice())) {
        return Err(corrupt("non-finite payload".into()));
    }
    let labels = SparseRowMatrix::new(members, l, indptr, indices, values).map_err(|e| corrupt(e.to_string()))?;
    ClusterModel::new(centroid, v, z, labels).map_err(|e| corrupt(e.to_string()))
}

/// Writes `model` into `dir` (created if needed). Returns the total bytes written.
pub fn save_model(model: &EnsembleModel, dir: impl AsRef<Path>) -> Result<u64> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut total = 0u64;
    let mut learners = Vec::with_capacity(model.learners.len());
    for (li, clusters) in model.learners.iter().enumerate() {
        let mut entries = Vec::with_capacity(clusters.len());
        for (ci, c) in clusters.iter().enumerate() {
            let file = blob_name(li, ci);
            let blob = encode_cluster(c);
            total += blob.len() as u64;
            fs::write(dir.join(&file), blob)?;
            entries.push(ClusterEntry {
                file,
                members: c.size(),
                rank: c.rank(),
                label_nnz: c.member_labels().nnz(),
            });
        }
        learners.push(entries);
    }
    let manifest = Manifest {
        format_version: model.format_version,
        dataset: model.shape,
        config: model.config.clone(),
        num_learners: model.learners.len(),
        clusters_per_learner: model.learners.first().map_or(0, Vec::len),
        learners,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    total += text.len() as u64;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(total)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<EnsembleModel> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptModel("manifest has no format_version".into()))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::CorruptModel(format!("manifest: {e}")))?;
    if manifest.learners.len() != manifest.num_learners
        || manifest
            .learners
            .iter()
            .any(|l| l.len() != manifest.clusters_per_learner)
    {
        return Err(Error::CorruptModel(
            "learner or cluster counts disagree with the manifest".into(),
        ));
    }
    let shape = manifest.dataset;
    let mut learners = Vec::with_capacity(manifest.learners.len());
    for entries in &manifest.learners {
        let mut clusters = Vec::with_capacity(entries.len());
        for e in entries {
            if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
                return Err(Error::CorruptModel(format!("invalid blob name {:?}", e.file)));
            }
            let bytes = fs::read(dir.join(&e.file))?;
            let cluster = decode_cluster(&bytes, &e.file, (shape.d, e.rank, e.members, shape.l))?;
            if cluster.member_labels().nnz() != e.label_nnz {
                return Err(Error::CorruptModel(format!("{}: label count mismatch", e.file)));
            }
            clusters.push(cluster);
        }
        learners.push(clusters);
    }
    Ok(EnsembleModel {
        learners,
        shape,
        config: manifest.config,
        format_version: MODEL_FORMAT_VERSION,
    })
}

/// Bytes on disk of the manifest and every blob it lists.
pub fn model_size_bytes(dir: impl AsRef<Path>) -> Result<u64> {
    let dir = dir.as_ref();
    let mut total = fs::metadata(dir.join(MANIFEST_FILE))?.len();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::CorruptModel(format!("manifest: {e}")))?;
    for e in manifest.learners.iter().flatten() {
        total += fs::metadata(dir.join(&e.file))?.len();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster() -> ClusterModel {
        let labels = SparseRowMatrix::from_rows(3, vec![vec![(0, 1.0)], vec![(1, 1.0), (2, 1.0)]]).unwrap();
        ClusterModel::new(
            vec![0.5, -1.0],
            DenseMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DenseMatrix::from_row_slice(2, 1, &[0.25, -3.0]),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn blob_round_trip() {
        let c = cluster();
        let bytes = encode_cluster(&c);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode_cluster(&bytes, "b", (2, 1, 2, 3)).unwrap(), c);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corrupt() {
        let bytes = encode_cluster(&cluster());
        for cut in [4, 20, bytes.len() - 1] {
            assert!(matches!(
                decode_cluster(&bytes[..cut], "b", (2, 1, 2, 3)),
                Err(Error::CorruptModel(_))
            ));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_cluster(&long, "b", (2, 1, 2, 3)),
            Err(Error::CorruptModel(_))
        ));
        assert!(matches!(
            decode_cluster(&bytes, "b", (3, 1, 2, 3)),
            Err(Error::CorruptModel(_))
        ));
    }
}
