//! Prior-knowledge similarity index: normalized interaction-history overlap
//! between same-side nodes, truncated to each node's top-k% neighbors.
//!
//! Scores are accumulated sparsely through the bipartite adjacency (owner
//! node -> interacted node -> co-interacting node); a dense node-by-node
//! matrix is never materialized.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Csr, InteractionDataset};
use crate::io::atomic_write;

const MAGIC: &[u8; 8] = b"SPRSIMIX";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("k_percent must lie in (0, 1], got {0}")]
    InvalidKPercent(f64),
    #[error("quota floor(k_percent * {nodes}) is zero; quota must be >= 1")]
    ZeroQuota { nodes: usize },
    #[error("node id {id} out of range for side with {nodes} nodes")]
    NodeOutOfRange { id: u32, nodes: usize },
    #[error("index was built for dataset {expected:#018x}, got {found:#018x} (stale index)")]
    ChecksumMismatch { expected: u64, found: u64 },
    #[error("malformed index file: {0}")]
    Format(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl Side {
    fn to_byte(self) -> u8 {
        match self {
            Side::User => 0,
            Side::Item => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Side> {
        match b {
            0 => Some(Side::User),
            1 => Some(Side::Item),
            _ => None,
        }
    }
}

/// Row normalization applied to the co-occurrence counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SimilarityNorm {
    /// `|N_a ∩ N_b| / |N_a|` — fraction of the owner's history shared.
    #[default]
    RowDegree,
    /// Counts divided by the owner's full co-occurrence row sum
    /// (self-overlap included in the denominator).
    RowSum,
}

impl SimilarityNorm {
    fn to_byte(self) -> u8 {
        match self {
            SimilarityNorm::RowDegree => 0,
            SimilarityNorm::RowSum => 1,
        }
    }

    fn from_byte(b: u8) -> Option<SimilarityNorm> {
        match b {
            0 => Some(SimilarityNorm::RowDegree),
            1 => Some(SimilarityNorm::RowSum),
            _ => None,
        }
    }
}

/// Per-node truncated neighbor lists with scores, plus build metadata.
///
/// Lists are sorted by descending score (ties by ascending id), exclude the
/// owner itself, and never contain zero-score entries — they may therefore
/// be shorter than the quota.
#[derive(Clone, Debug)]
pub struct SimilarityIndex {
    side: Side,
    norm: SimilarityNorm,
    k_percent: f64,
    dataset_checksum: u64,
    /// Unix seconds at build time; in-memory only, never serialized, so
    /// rebuilds stay byte-identical.
    built_at_unix: Option<u64>,
    neighbors: Vec<Vec<(u32, f32)>>,
}

impl PartialEq for SimilarityIndex {
    fn eq(&self, other: &Self) -> bool {
        self.side == other.side
            && self.norm == other.norm
            && self.k_percent == other.k_percent
            && self.dataset_checksum == other.dataset_checksum
            && self.neighbors == other.neighbors
    }
}

impl SimilarityIndex {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn norm(&self) -> SimilarityNorm {
        self.norm
    }

    pub fn k_percent(&self) -> f64 {
        self.k_percent
    }

    pub fn dataset_checksum(&self) -> u64 {
        self.dataset_checksum
    }

    pub fn built_at_unix(&self) -> Option<u64> {
        self.built_at_unix
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: u32) -> &[(u32, f32)] {
        &self.neighbors[node as usize]
    }

    /// Error unless this index was built from `dataset`.
    pub fn verify_against(&self, dataset: &InteractionDataset) -> Result<(), SimilarityError> {
        if self.dataset_checksum != dataset.checksum() {
            return Err(SimilarityError::ChecksumMismatch {
                expected: self.dataset_checksum,
                found: dataset.checksum(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        out.push(self.side.to_byte());
        out.push(self.norm.to_byte());
        out.write_f64::<LittleEndian>(self.k_percent).unwrap();
        out.write_u64::<LittleEndian>(self.neighbors.len() as u64)
            .unwrap();
        out.write_u64::<LittleEndian>(self.dataset_checksum).unwrap();
        for list in &self.neighbors {
            out.write_u32::<LittleEndian>(list.len() as u32).unwrap();
            for &(id, score) in list {
                out.write_u32::<LittleEndian>(id).unwrap();
                out.write_f32::<LittleEndian>(score).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SimilarityError> {
        let fmt = |msg: &str| SimilarityError::Format(msg.to_string());
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic bytes"));
        }
        let version = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fmt("truncated version"))?;
        if version != VERSION {
            return Err(SimilarityError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let side = Side::from_byte(cur.read_u8().map_err(|_| fmt("truncated side"))?)
            .ok_or_else(|| fmt("bad side byte"))?;
        let norm = SimilarityNorm::from_byte(cur.read_u8().map_err(|_| fmt("truncated norm"))?)
            .ok_or_else(|| fmt("bad norm byte"))?;
        let k_percent = cur
            .read_f64::<LittleEndian>()
            .map_err(|_| fmt("truncated k_percent"))?;
        let nodes = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated node count"))? as usize;
        let dataset_checksum = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated checksum"))?;
        let mut neighbors = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let len = cur
                .read_u32::<LittleEndian>()
                .map_err(|_| fmt("truncated list length"))? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let id = cur
                    .read_u32::<LittleEndian>()
                    .map_err(|_| fmt("truncated neighbor id"))?;
                let score = cur
                    .read_f32::<LittleEndian>()
                    .map_err(|_| fmt("truncated neighbor score"))?;
                list.push((id, score));
            }
            neighbors.push(list);
        }
        if !cur.is_empty() {
            return Err(fmt("trailing bytes"));
        }
        Ok(SimilarityIndex {
            side,
            norm,
            k_percent,
            dataset_checksum,
            built_at_unix: None,
            neighbors,
        })
    }
}

use std::io::Read as _;

/// Build the top-k% neighbor index for one side of the bipartite graph.
pub fn build_similarity_index(
    dataset: &InteractionDataset,
    side: Side,
    k_percent: f64,
    norm: SimilarityNorm,
) -> Result<SimilarityIndex, SimilarityError> {
    if !(k_percent > 0.0 && k_percent <= 1.0) {
        return Err(SimilarityError::InvalidKPercent(k_percent));
    }
    let (adj, rev) = side_adjacency(dataset, side);
    let nodes = adj.num_rows();
    let quota = (k_percent * nodes as f64).floor() as usize;
    if quota == 0 {
        return Err(SimilarityError::ZeroQuota { nodes });
    }

    let neighbors: Vec<Vec<(u32, f32)>> = (0..nodes)
        .into_par_iter()
        .map(|a| top_neighbors(adj, rev, a, quota, norm))
        .collect();

    let empty = neighbors.iter().filter(|l| l.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} node(s) have an empty neighbor list");
    }

    Ok(SimilarityIndex {
        side,
        norm,
        k_percent,
        dataset_checksum: dataset.checksum(),
        built_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs()),
        neighbors,
    })
}

fn side_adjacency(dataset: &InteractionDataset, side: Side) -> (&Csr, &Csr) {
    match side {
        Side::User => (dataset.train(), dataset.train_rev()),
        Side::Item => (dataset.train_rev(), dataset.train()),
    }
}

fn top_neighbors(
    adj: &Csr,
    rev: &Csr,
    owner: usize,
    quota: usize,
    norm: SimilarityNorm,
) -> Vec<(u32, f32)> {
    let history = adj.row(owner);
    if history.is_empty() {
        return Vec::new();
    }
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for &x in history {
        for &other in rev.row(x as usize) {
            *counts.entry(other).or_insert(0) += 1;
        }
    }
    let denom = match norm {
        SimilarityNorm::RowDegree => history.len() as f64,
        SimilarityNorm::RowSum => counts.values().map(|&c| c as u64).sum::<u64>() as f64,
    };
    counts.remove(&(owner as u32));
    let mut scored: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(id, c)| (id, c as f64 / denom))
        .collect();
    scored.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(quota);
    scored.into_iter().map(|(id, s)| (id, s as f32)).collect()
}

/// Pointwise probe: `|N_a ∩ N_b| / |N_a|` (0 when `N_a` is empty).
pub fn similarity_score(
    dataset: &InteractionDataset,
    a: u32,
    b: u32,
    side: Side,
) -> Result<f64, SimilarityError> {
    let (adj, _) = side_adjacency(dataset, side);
    let nodes = adj.num_rows();
    for id in [a, b] {
        if id as usize >= nodes {
            return Err(SimilarityError::NodeOutOfRange { id, nodes });
        }
    }
    let na = adj.row(a as usize);
    if na.is_empty() {
        return Ok(0.0);
    }
    let nb = adj.row(b as usize);
    let mut shared = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < na.len() && j < nb.len() {
        match na[i].cmp(&nb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(shared as f64 / na.len() as f64)
}

pub fn save_index(index: &SimilarityIndex, path: &Path) -> Result<(), SimilarityError> {
    atomic_write(path, &index.to_bytes()).map_err(|source| SimilarityError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load an index and refuse it unless it was built from `dataset`.
pub fn load_index(
    path: &Path,
    dataset: &InteractionDataset,
) -> Result<SimilarityIndex, SimilarityError> {
    let bytes = std::fs::read(path).map_err(|source| SimilarityError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let index = SimilarityIndex::from_bytes(&bytes)?;
    index.verify_against(dataset)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(rows: Vec<(u32, Vec<u32>)>) -> InteractionDataset {
        InteractionDataset::from_pairs(rows, vec![]).unwrap().0
    }

    #[test]
    fn hand_computed_overlap_scores() {
        // N_0 = {1,2}, N_1 = {1,3}
        let ds = dataset(vec![(0, vec![1, 2]), (1, vec![1, 3])]);
        assert_eq!(similarity_score(&ds, 0, 1, Side::User).unwrap(), 0.5);
        assert_eq!(similarity_score(&ds, 1, 0, Side::User).unwrap(), 0.5);
    }

    #[test]
    fn identical_histories_score_one() {
        let ds = dataset(vec![(0, vec![0, 1, 2]), (1, vec![0, 1, 2])]);
        assert_eq!(similarity_score(&ds, 0, 1, Side::User).unwrap(), 1.0);
        assert_eq!(similarity_score(&ds, 0, 0, Side::User).unwrap(), 1.0);
    }

    #[test]
    fn quarter_overlap() {
        // N_0 = {1,2,3,4}, N_1 = {3}
        let ds = dataset(vec![(0, vec![1, 2, 3, 4]), (1, vec![3])]);
        assert_eq!(similarity_score(&ds, 0, 1, Side::User).unwrap(), 0.25);
    }

    #[test]
    fn asymmetry_from_different_degrees() {
        // |N_0| = 2, |N_1| = 4, overlap 1.
        let ds = dataset(vec![(0, vec![0, 1]), (1, vec![1, 2, 3, 4])]);
        assert_eq!(similarity_score(&ds, 0, 1, Side::User).unwrap(), 0.5);
        assert_eq!(similarity_score(&ds, 1, 0, Side::User).unwrap(), 0.25);
    }

    #[test]
    fn empty_history_scores_zero() {
        let ds = dataset(vec![(0, vec![]), (1, vec![0])]);
        assert_eq!(similarity_score(&ds, 0, 1, Side::User).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_id_errors() {
        let ds = dataset(vec![(0, vec![0])]);
        assert!(similarity_score(&ds, 0, 5, Side::User).is_err());
    }

    #[test]
    fn disjoint_histories_are_excluded() {
        let ds = dataset(vec![(0, vec![0]), (1, vec![1]), (2, vec![0])]);
        let index =
            build_similarity_index(&ds, Side::User, 1.0, SimilarityNorm::RowDegree).unwrap();
        // User 0 overlaps user 2 only.
        assert_eq!(index.neighbors(0), &[(2, 1.0)]);
        assert!(index.neighbors(1).is_empty());
    }

    #[test]
    fn self_is_never_a_neighbor() {
        let ds = dataset((0..10).map(|u| (u, vec![0, 1])).collect());
        let index =
            build_similarity_index(&ds, Side::User, 1.0, SimilarityNorm::RowDegree).unwrap();
        for u in 0..10u32 {
            assert_eq!(index.neighbors(u).len(), 9);
            assert!(index.neighbors(u).iter().all(|&(v, _)| v != u));
        }
    }

    #[test]
    fn quota_of_zero_is_an_error() {
        let ds = dataset(vec![(0, vec![0]), (1, vec![0])]);
        let err = build_similarity_index(&ds, Side::User, 0.1, SimilarityNorm::RowDegree);
        assert!(matches!(err, Err(SimilarityError::ZeroQuota { .. })));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // Users 1,2,3 all share exactly item 0 with user 0.
        let ds = dataset(vec![
            (0, vec![0, 1]),
            (1, vec![0, 2]),
            (2, vec![0, 3]),
            (3, vec![0, 4]),
        ]);
        let index =
            build_similarity_index(&ds, Side::User, 0.5, SimilarityNorm::RowDegree).unwrap();
        assert_eq!(index.neighbors(0), &[(1, 0.5), (2, 0.5)]);
    }

    #[test]
    fn item_side_uses_reverse_adjacency() {
        // Items 0 and 1 are both consumed by user 0 only.
        let ds = dataset(vec![(0, vec![0, 1]), (1, vec![2])]);
        let index =
            build_similarity_index(&ds, Side::Item, 1.0, SimilarityNorm::RowDegree).unwrap();
        assert_eq!(index.num_nodes(), 3);
        assert_eq!(index.neighbors(0), &[(1, 1.0)]);
        assert_eq!(index.neighbors(1), &[(0, 1.0)]);
        assert!(index.neighbors(2).is_empty());
    }

    #[test]
    fn save_load_round_trip_and_checksum_guard() {
        let ds = dataset(vec![(0, vec![0, 1]), (1, vec![1, 2]), (2, vec![0])]);
        let index =
            build_similarity_index(&ds, Side::User, 0.67, SimilarityNorm::RowSum).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.idx");
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path, &ds).unwrap();
        assert_eq!(loaded, index);

        let other = dataset(vec![(0, vec![0]), (1, vec![1])]);
        let err = load_index(&path, &other);
        assert!(matches!(err, Err(SimilarityError::ChecksumMismatch { .. })));
    }

    #[test]
    fn quota_is_floor_of_k_percent() {
        let rows: Vec<(u32, Vec<u32>)> = (0..300).map(|u| (u, vec![0])).collect();
        let ds = dataset(rows);
        let index =
            build_similarity_index(&ds, Side::User, 0.01, SimilarityNorm::RowDegree).unwrap();
        for u in 0..300u32 {
            assert!(index.neighbors(u).len() <= 3);
        }
        assert_eq!(index.neighbors(0).len(), 3);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let ds = dataset(vec![(0, vec![0]), (1, vec![0])]);
        let index =
            build_similarity_index(&ds, Side::User, 1.0, SimilarityNorm::RowDegree).unwrap();
        let mut bytes = index.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            SimilarityIndex::from_bytes(&bytes),
            Err(SimilarityError::Format(_))
        ));
        bytes.clear();
        bytes.extend_from_slice(b"NOTANIDX");
        assert!(SimilarityIndex::from_bytes(&bytes).is_err());
    }

    proptest! {
        /// Adding a shared item to both histories never lowers the score.
        #[test]
        fn monotone_under_shared_additions(
            a_items in proptest::collection::btree_set(0u32..20, 1..10),
            b_items in proptest::collection::btree_set(0u32..20, 1..10),
            shared in 20u32..30,
        ) {
            let base = dataset(vec![
                (0, a_items.iter().copied().collect()),
                (1, b_items.iter().copied().collect()),
            ]);
            let before = similarity_score(&base, 0, 1, Side::User).unwrap();
            let grown = dataset(vec![
                (0, a_items.iter().copied().chain([shared]).collect()),
                (1, b_items.iter().copied().chain([shared]).collect()),
            ]);
            let after = similarity_score(&grown, 0, 1, Side::User).unwrap();
            prop_assert!(after >= before - 1e-12);
        }
    }
}
