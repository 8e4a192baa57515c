//! Stratified dataset partitioning for three-fold evaluation.
//!
//! Records are split into three near-equal parts with each subclass
//! represented evenly: within every subclass the three parts differ by at
//! most one record. Each fold then tests on one part and trains on the
//! other two, so every record is tested exactly once across the three
//! folds. Splits are stored as index files (one record index per line)
//! so a run can be reproduced without re-shuffling.

use crate::ingest::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {value:?} is not a record index")]
    BadIndexLine { line: usize, value: String },
    #[error("index {index} is out of range for {len} records")]
    OutOfRange { index: usize, len: usize },
    #[error("index {index} appears in more than one split")]
    Overlap { index: usize },
    #[error("{missing} records are not covered by any split")]
    Incomplete { missing: usize },
}

/// Partition the dataset into three parts, stratified by subclass.
///
/// Within each subclass the rows are shuffled (seeded), dealt to the three
/// parts in equal chunks, and the at-most-two leftovers are assigned
/// round-robin starting from a cursor that advances across subclasses, so
/// no part systematically collects the remainders. Each returned part is
/// sorted ascending. The same dataset and seed always produce the same
/// partition.
pub fn stratified_split3(dataset: &Dataset, seed: u64) -> [Vec<usize>; 3] {
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 36];
    for (row, record) in dataset.records.iter().enumerate() {
        strata[record.subclass.get() as usize].push(row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: [Vec<usize>; 3] = Default::default();
    let mut cursor = 0usize;
    for rows in &mut strata {
        rows.shuffle(&mut rng);
        let chunk = rows.len() / 3;
        for (i, split) in splits.iter_mut().enumerate() {
            split.extend_from_slice(&rows[i * chunk..(i + 1) * chunk]);
        }
        for (j, &row) in rows[3 * chunk..].iter().enumerate() {
            splits[(cursor + j) % 3].push(row);
        }
        cursor = (cursor + rows.len() % 3) % 3;
    }
    for split in &mut splits {
        split.sort_unstable();
    }
    splits
}

/// One cross-validation fold: train on two parts, test on the third.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Which part serves as the test set (0..3).
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Build the three folds from a partition, checking that the parts are
/// disjoint and jointly cover all `len` records.
pub fn make_folds(len: usize, splits: &[Vec<usize>; 3]) -> Result<Vec<Fold>, PartitionError> {
    let mut seen = vec![false; len];
    let mut covered = 0usize;
    for split in splits {
        for &index in split {
            if index >= len {
                return Err(PartitionError::OutOfRange { index, len });
            }
            if seen[index] {
                return Err(PartitionError::Overlap { index });
            }
            seen[index] = true;
            covered += 1;
        }
    }
    if covered != len {
        return Err(PartitionError::Incomplete { missing: len - covered });
    }

    Ok((0..3)
        .map(|i| {
            let mut train: Vec<usize> = splits
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, split)| split.iter().copied())
                .collect();
            train.sort_unstable();
            Fold { index: i, train, test: splits[i].clone() }
        })
        .collect())
}

/// Write record indices, one per line.
pub fn write_indices<W: Write>(indices: &[usize], mut writer: W) -> Result<(), PartitionError> {
    for index in indices {
        writeln!(writer, "{index}")?;
    }
    Ok(())
}

/// Read record indices as written by [`write_indices`]. Blank lines are
/// ignored; anything else that is not a non-negative integer is an error
/// with its line number.
pub fn read_indices<R: io::Read>(reader: R) -> Result<Vec<usize>, PartitionError> {
    let mut indices = Vec::new();
    for (number, line) in io::BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let index = trimmed.parse::<usize>().map_err(|_| PartitionError::BadIndexLine {
            line: number + 1,
            value: trimmed.to_string(),
        })?;
        indices.push(index);
    }
    Ok(indices)
}
