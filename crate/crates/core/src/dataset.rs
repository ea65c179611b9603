//! Interaction data: split-file loading, CSR adjacency, stats, and
//! deterministic synthetic benchmark generation.
//!
//! The on-disk split format is one user per line, whitespace separated:
//! `user_id item_id item_id ...`. A line holding a bare user id denotes a
//! user with no interactions on that split. User and item id spaces are
//! taken from the data itself (`1 + max observed id`); there is no header.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::atomic_write;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected a nonnegative integer, got {token:?}")]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{count} train/test overlap pair(s), e.g. {examples}")]
    TrainTestOverlap { count: usize, examples: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Compressed sparse row adjacency over `u32` node ids.
///
/// Row indices are always sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    num_cols: usize,
}

impl Csr {
    /// Build from per-row id lists; rows are sorted and deduplicated.
    /// Returns the CSR and the number of duplicates dropped.
    pub fn from_rows(mut rows: Vec<Vec<u32>>, num_cols: usize) -> (Self, usize) {
        let mut duplicates = 0;
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for row in &mut rows {
            row.sort_unstable();
            let before = row.len();
            row.dedup();
            duplicates += before - row.len();
            indices.extend_from_slice(row);
            offsets.push(indices.len());
        }
        (
            Csr {
                offsets,
                indices,
                num_cols,
            },
            duplicates,
        )
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    /// Total number of stored entries.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn contains(&self, r: usize, c: u32) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }

    /// Resolve flat entry `e` (row-major order) to its `(row, col)` pair.
    pub fn entry(&self, e: usize) -> (usize, u32) {
        debug_assert!(e < self.nnz());
        let r = self.offsets.partition_point(|&o| o <= e) - 1;
        (r, self.indices[e])
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.num_cols];
        for &c in &self.indices {
            counts[c as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(self.num_cols + 1);
        offsets.push(0);
        for c in 0..self.num_cols {
            offsets.push(offsets[c] + counts[c]);
        }
        let mut cursor = offsets.clone();
        let mut indices = vec![0u32; self.nnz()];
        for r in 0..self.num_rows() {
            for &c in self.row(r) {
                indices[cursor[c as usize]] = r as u32;
                cursor[c as usize] += 1;
            }
        }
        Csr {
            offsets,
            indices,
            num_cols: self.num_rows(),
        }
    }
}

/// Immutable train/test interaction sets with contiguous integer ids.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    train: Csr,
    test: Csr,
    train_rev: Csr,
    /// Users with at least one train interaction, ascending.
    eligible_users: Vec<u32>,
    checksum: u64,
}

/// Load-time bookkeeping that is not part of the dataset identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub train_duplicates: usize,
    pub test_duplicates: usize,
    pub users_without_train: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Pure fraction `interactions / (users * items)` in `[0, 1]`.
    pub density: f64,
}

impl DatasetStats {
    pub fn csv_header() -> &'static str {
        "users,items,interactions,density"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.users, self.items, self.interactions, self.density
        )
    }
}

/// Parameters for the block-structured synthetic benchmark generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub blocks: usize,
    pub users_per_block: usize,
    pub items_per_block: usize,
    /// Probability that an interaction is redirected to an out-of-block item.
    pub noise: f64,
    /// Fraction of each user's interactions held out as test positives.
    pub holdout: f64,
    pub seed: u64,
}

impl InteractionDataset {
    /// Build a validated dataset from per-user interaction lists.
    ///
    /// Id spaces are `1 + max id` observed across both splits. Duplicate
    /// pairs are dropped (counted in the summary); a train/test overlap is
    /// an error.
    pub fn from_pairs(
        train_rows: Vec<(u32, Vec<u32>)>,
        test_rows: Vec<(u32, Vec<u32>)>,
    ) -> Result<(Self, LoadSummary), DatasetError> {
        let mut max_user: Option<u32> = None;
        let mut max_item: Option<u32> = None;
        for (u, items) in train_rows.iter().chain(test_rows.iter()) {
            max_user = Some(max_user.map_or(*u, |m| m.max(*u)));
            for &i in items {
                max_item = Some(max_item.map_or(i, |m| m.max(i)));
            }
        }
        let num_users = max_user.map_or(0, |m| m as usize + 1);
        let num_items = max_item.map_or(0, |m| m as usize + 1);

        let mut train_lists: Vec<Vec<u32>> = vec![Vec::new(); num_users];
        for (u, items) in train_rows {
            train_lists[u as usize].extend(items);
        }
        let mut test_lists: Vec<Vec<u32>> = vec![Vec::new(); num_users];
        for (u, items) in test_rows {
            test_lists[u as usize].extend(items);
        }

        let (train, train_duplicates) = Csr::from_rows(train_lists, num_items);
        let (test, test_duplicates) = Csr::from_rows(test_lists, num_items);

        // Train and test must be disjoint per user.
        let mut overlap_count = 0usize;
        let mut examples = String::new();
        for u in 0..num_users {
            let tr = train.row(u);
            for &i in test.row(u) {
                if tr.binary_search(&i).is_ok() {
                    overlap_count += 1;
                    if overlap_count <= 8 {
                        let _ = write!(examples, "({u},{i}) ");
                    }
                }
            }
        }
        if overlap_count > 0 {
            return Err(DatasetError::TrainTestOverlap {
                count: overlap_count,
                examples: examples.trim_end().to_string(),
            });
        }

        let train_rev = train.transpose();
        let eligible_users: Vec<u32> = (0..num_users)
            .filter(|&u| !train.row(u).is_empty())
            .map(|u| u as u32)
            .collect();
        let users_without_train = num_users - eligible_users.len();
        if users_without_train > 0 {
            log::warn!("{users_without_train} user(s) have no train interactions");
        }

        let checksum = compute_checksum(num_users, num_items, &train, &test);
        Ok((
            InteractionDataset {
                num_users,
                num_items,
                train,
                test,
                train_rev,
                eligible_users,
                checksum,
            },
            LoadSummary {
                train_duplicates,
                test_duplicates,
                users_without_train,
            },
        ))
    }

    /// Load and validate a train/test split pair from disk.
    pub fn load(
        train_path: &Path,
        test_path: &Path,
    ) -> Result<(Self, LoadSummary), DatasetError> {
        let train_rows = read_split(train_path)?;
        let test_rows = read_split(test_path)?;
        let (ds, summary) = Self::from_pairs(train_rows, test_rows)?;
        if summary.train_duplicates + summary.test_duplicates > 0 {
            log::warn!(
                "deduplicated {} train and {} test interaction(s)",
                summary.train_duplicates,
                summary.test_duplicates
            );
        }
        Ok((ds, summary))
    }

    /// Write the dataset back in the split file format.
    ///
    /// Every user gets a train line (possibly bare) so that the id space
    /// survives a round-trip; test lines are written only when nonempty.
    pub fn dump(&self, train_path: &Path, test_path: &Path) -> Result<(), DatasetError> {
        let io_err = |path: &Path| {
            move |source: io::Error| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        };
        let mut out = String::new();
        for u in 0..self.num_users {
            let _ = write!(out, "{u}");
            for &i in self.train.row(u) {
                let _ = write!(out, " {i}");
            }
            out.push('\n');
        }
        atomic_write(train_path, out.as_bytes()).map_err(io_err(train_path))?;

        out.clear();
        for u in 0..self.num_users {
            let row = self.test.row(u);
            if row.is_empty() {
                continue;
            }
            let _ = write!(out, "{u}");
            for &i in row {
                let _ = write!(out, " {i}");
            }
            out.push('\n');
        }
        atomic_write(test_path, out.as_bytes()).map_err(io_err(test_path))
    }

    pub fn stats(&self) -> DatasetStats {
        let cells = self.num_users * self.num_items;
        DatasetStats {
            users: self.num_users,
            items: self.num_items,
            interactions: self.train.nnz(),
            density: if cells == 0 {
                0.0
            } else {
                self.train.nnz() as f64 / cells as f64
            },
        }
    }

    /// Deterministic block-diagonal benchmark: users in block `b` interact
    /// mostly with items of block `b`; `noise` redirects interactions to a
    /// uniformly random out-of-block item; `holdout` of each user's
    /// interactions moves to the test split (always leaving one behind).
    pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Self, DatasetError> {
        if cfg.blocks == 0 || cfg.users_per_block == 0 || cfg.items_per_block == 0 {
            return Err(DatasetError::InvalidParameter(
                "blocks, users_per_block and items_per_block must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&cfg.noise) || !(0.0..1.0).contains(&cfg.holdout) {
            return Err(DatasetError::InvalidParameter(
                "noise and holdout must lie in [0, 1)".into(),
            ));
        }

        let num_items = cfg.blocks * cfg.items_per_block;
        let per_user = (cfg.items_per_block / 2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();

        for b in 0..cfg.blocks {
            let block_start = (b * cfg.items_per_block) as u32;
            for u_local in 0..cfg.users_per_block {
                let user = (b * cfg.users_per_block + u_local) as u32;
                let picks = rand::seq::index::sample(&mut rng, cfg.items_per_block, per_user);
                let mut items: Vec<u32> = picks.iter().map(|k| block_start + k as u32).collect();

                if cfg.noise > 0.0 && cfg.blocks > 1 {
                    for slot in 0..items.len() {
                        if rng.gen::<f64>() >= cfg.noise {
                            continue;
                        }
                        // Redirect to an out-of-block item, retrying on the
                        // rare collision with an already chosen one.
                        for _ in 0..20 {
                            let raw =
                                rng.gen_range(0..num_items - cfg.items_per_block) as u32;
                            let candidate = if raw < block_start {
                                raw
                            } else {
                                raw + cfg.items_per_block as u32
                            };
                            if !items.contains(&candidate) {
                                items[slot] = candidate;
                                break;
                            }
                        }
                    }
                }

                let total = items.len();
                let mut n_test = (cfg.holdout * total as f64).floor() as usize;
                if n_test >= total {
                    n_test = total - 1; // never leave a user without train items
                }
                let test_picks = rand::seq::index::sample(&mut rng, total, n_test);
                let mut is_test = vec![false; total];
                for k in test_picks.iter() {
                    is_test[k] = true;
                }
                let train_items: Vec<u32> = items
                    .iter()
                    .zip(&is_test)
                    .filter(|(_, &t)| !t)
                    .map(|(&i, _)| i)
                    .collect();
                let test_items: Vec<u32> = items
                    .iter()
                    .zip(&is_test)
                    .filter(|(_, &t)| t)
                    .map(|(&i, _)| i)
                    .collect();
                train_rows.push((user, train_items));
                if !test_items.is_empty() {
                    test_rows.push((user, test_items));
                }
            }
        }

        // Pin the item id space even when the top block's last items were
        // never drawn.
        if num_items > 0 {
            // A bare max-id marker would create a phantom interaction, so
            // instead extend the last user's row only if the max item is
            // genuinely absent everywhere.
            let max_item = (num_items - 1) as u32;
            let seen = train_rows
                .iter()
                .chain(test_rows.iter())
                .any(|(_, items)| items.contains(&max_item));
            if !seen {
                if let Some((_, items)) = train_rows.last_mut() {
                    items.push(max_item);
                }
            }
        }

        let (ds, _) = Self::from_pairs(train_rows, test_rows)?;
        Ok(ds)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Per-user train positives (the sets `N_u`).
    pub fn train(&self) -> &Csr {
        &self.train
    }

    pub fn test(&self) -> &Csr {
        &self.test
    }

    /// Item-to-user transpose of the train adjacency.
    pub fn train_rev(&self) -> &Csr {
        &self.train_rev
    }

    /// Users with at least one train interaction, ascending.
    pub fn eligible_users(&self) -> &[u32] {
        &self.eligible_users
    }

    pub fn train_nnz(&self) -> usize {
        self.train.nnz()
    }

    /// Identity checksum over counts and both adjacencies.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }
}

fn compute_checksum(num_users: usize, num_items: usize, train: &Csr, test: &Csr) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"sprec-dataset-v1");
    hasher.update((num_users as u64).to_le_bytes());
    hasher.update((num_items as u64).to_le_bytes());
    for csr in [train, test] {
        for r in 0..csr.num_rows() {
            let row = csr.row(r);
            hasher.update((row.len() as u64).to_le_bytes());
            for &c in row {
                hasher.update(c.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn read_split(path: &Path) -> Result<Vec<(u32, Vec<u32>)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue; // blank line
        };
        let parse = |token: &str| {
            token.parse::<u32>().map_err(|_| DatasetError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                token: token.to_string(),
            })
        };
        let user = parse(first)?;
        let items = tokens.map(parse).collect::<Result<Vec<u32>, _>>()?;
        rows.push((user, items));
    }
    Ok(rows)
}
