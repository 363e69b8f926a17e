use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::corpus::CaseId;

pub const INDEX_MAGIC: [u8; 4] = *b"LCVX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("case {0} is already indexed")]
    DuplicateId(CaseId),
    #[error("vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("requested k={k} but only {available} candidates are available")]
    NotEnoughCandidates { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("malformed index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: CaseId,
    pub rank: usize,
    pub similarity: f64,
}

/// Exhaustive cosine index. Vectors are stored as `f32`, matching the
/// on-disk format, and scored in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<CaseId>,
    data: Vec<f32>,
    norms: Vec<f64>,
    positions: HashMap<CaseId, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), data: Vec::new(), norms: Vec::new(), positions: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &CaseId) -> bool {
        self.positions.contains_key(id)
    }

    pub fn ids(&self) -> &[CaseId] {
        &self.ids
    }

    pub fn insert(&mut self, id: CaseId, vector: &EmbeddingVector) -> Result<(), IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got: vector.dim() });
        }
        if self.positions.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let stored: Vec<f32> = vector.values().iter().map(|v| *v as f32).collect();
        self.push(id, &stored);
        Ok(())
    }

    fn push(&mut self, id: CaseId, stored: &[f32]) {
        let norm = stored.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt();
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(stored);
        self.norms.push(norm);
    }

    fn row(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    /// The stored vector, widened back to `f64`.
    pub fn get(&self, id: &CaseId) -> Option<EmbeddingVector> {
        let pos = *self.positions.get(id)?;
        Some(EmbeddingVector::from_raw(self.row(pos).iter().map(|v| f64::from(*v)).collect()))
    }

    fn score(&self, query: &[f64], query_norm: f64, pos: usize) -> f64 {
        let norm = self.norms[pos];
        if norm == 0.0 || query_norm == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.row(pos).iter().zip(query).map(|(a, b)| f64::from(*a) * b).sum();
        (dot / (norm * query_norm)).clamp(-1.0, 1.0)
    }

    /// Exact top-k by cosine similarity, descending, ties broken by
    /// ascending id. With `exclude` set, that id is skipped and ranks start
    /// at 1; otherwise ranks start at 0.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: Option<&CaseId>,
    ) -> Result<Vec<Neighbor>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        let skip = exclude.and_then(|id| self.positions.get(id)).copied();
        let available = self.len() - usize::from(skip.is_some());
        if k > available {
            return Err(IndexError::NotEnoughCandidates { k, available });
        }
        let q = query.values();
        let q_norm = query.norm();
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|pos| Some(*pos) != skip)
            .map(|pos| (self.score(q, q_norm, pos), pos))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        let first_rank = usize::from(exclude.is_some());
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (similarity, pos))| Neighbor { id: self.ids[pos].clone(), rank: first_rank + i, similarity })
            .collect())
    }

    /// A new index holding only the listed ids, in ascending id order.
    pub fn subset(&self, keep: &BTreeSet<CaseId>) -> VectorIndex {
        let mut out = VectorIndex::new(self.dim);
        for id in keep {
            if let Some(pos) = self.positions.get(id) {
                let row = self.row(*pos).to_vec();
                out.push(id.clone(), &row);
            }
        }
        out
    }

    /// Binary layout: magic, version (u32), dim (u32), count (u64), then per
    /// record the id length (u32), id bytes and `dim` f32 values. All
    /// integers and floats little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (pos, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.as_str().len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_str().as_bytes());
            for v in self.row(pos) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != INDEX_MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut index = VectorIndex::new(dim);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| IndexError::Format(e.to_string()))
                .and_then(|s| CaseId::new(s).map_err(IndexError::Format))?;
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                row.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            if index.contains(&id) {
                return Err(IndexError::DuplicateId(id));
            }
            index.push(id, &row);
        }
        if r.at != bytes.len() {
            return Err(IndexError::Format("trailing bytes".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        Ok(crate::io::write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|source| {
            IndexError::Io(crate::io::IoError::Fs { path: path.to_path_buf(), source })
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| IndexError::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProvider, HashedBowEmbedder};

    fn id(s: &str) -> CaseId {
        CaseId::new(s).unwrap()
    }

    fn vec_of(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec()).unwrap()
    }

    #[test]
    fn insert_lookup_and_duplicates() {
        let mut index = VectorIndex::new(2);
        let v = vec_of(&[0.6, 0.8]);
        index.insert(id("a"), &v).unwrap();
        let back = index.get(&id("a")).unwrap();
        for (x, y) in back.values().iter().zip(v.values()) {
            assert!((x - y).abs() < 1e-7);
        }
        assert!(matches!(index.insert(id("a"), &v), Err(IndexError::DuplicateId(_))));
        assert!(matches!(
            index.insert(id("b"), &vec_of(&[1.0, 0.0, 0.0])),
            Err(IndexError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn size_grows_per_insert() {
        let e = HashedBowEmbedder::new(64);
        let mut index = VectorIndex::new(64);
        for i in 0..200 {
            index.insert(id(&format!("c{i:03}")), &e.embed(&format!("token{i} shared")).unwrap()).unwrap();
        }
        assert_eq!(index.len(), 200);
    }

    #[test]
    fn self_query_and_exclusion() {
        let e = HashedBowEmbedder::new(128);
        let mut index = VectorIndex::new(128);
        for (name, text) in [("a", "deed land title"), ("b", "deed contract"), ("c", "navy enlistment minor")] {
            index.insert(id(name), &e.embed(text).unwrap()).unwrap();
        }
        let q = index.get(&id("a")).unwrap();
        let hits = index.top_k(&q, 2, None).unwrap();
        assert_eq!(hits[0].id, id("a"));
        assert_eq!(hits[0].rank, 0);
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
        let hits = index.top_k(&q, 2, Some(&id("a"))).unwrap();
        assert!(hits.iter().all(|h| h.id != id("a")));
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2]);
        match index.top_k(&q, 3, Some(&id("a"))) {
            Err(IndexError::NotEnoughCandidates { k: 3, available: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_break_by_id() {
        let mut index = VectorIndex::new(2);
        let v = vec_of(&[1.0, 0.0]);
        for name in ["z", "m", "a"] {
            index.insert(id(name), &v).unwrap();
        }
        let hits = index.top_k(&v, 3, None).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let e = HashedBowEmbedder::new(8);
        let mut index = VectorIndex::new(8);
        index.insert(id("α-1"), &e.embed("one two").unwrap()).unwrap();
        index.insert(id("b"), &e.embed("three").unwrap()).unwrap();
        let bytes = index.to_bytes();
        assert_eq!(&bytes[..4], b"LCVX");
        assert_eq!(VectorIndex::from_bytes(&bytes).unwrap(), index);
        assert!(VectorIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(VectorIndex::from_bytes(&bad).is_err());
    }
}
