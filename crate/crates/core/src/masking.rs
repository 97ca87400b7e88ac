//! Autoregressive prefix expansion and padded batch assembly.

use std::sync::Arc;

use thiserror::Error;

use crate::data::{ItemId, UserId, PADDING_ITEM};
use crate::neighbours::NeighbourSample;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("a session needs at least 2 items to form a prefix and a target, got {0}")]
    TooShort(usize),
}

/// One (prefix, next item) pair. `input` holds the first `len` items followed
/// by padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInstance {
    pub input: Vec<ItemId>,
    pub len: usize,
    pub target: ItemId,
}

impl MaskedInstance {
    pub fn prefix(&self) -> &[ItemId] {
        &self.input[..self.len]
    }
}

/// Splits a session of `n` items into the `n − 1` prefixes `1..=n−1`, each
/// padded to width `n − 1` and labelled with the following item.
pub fn expand_session(items: &[ItemId]) -> Result<Vec<MaskedInstance>, MaskError> {
    let n = items.len();
    if n < 2 {
        return Err(MaskError::TooShort(n));
    }
    Ok((1..n)
        .map(|k| {
            let mut input = items[..k].to_vec();
            input.resize(n - 1, PADDING_ITEM);
            MaskedInstance {
                input,
                len: k,
                target: items[k],
            }
        })
        .collect())
}

/// All sub-instances of one session plus the neighbours sampled for it.
#[derive(Debug, Clone)]
pub struct SessionGroup {
    pub user: UserId,
    pub instances: Vec<MaskedInstance>,
    pub sample: Arc<NeighbourSample>,
}

/// Rows padded to the longest prefix in the batch.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub users: Vec<UserId>,
    pub inputs: Vec<Vec<ItemId>>,
    pub lengths: Vec<usize>,
    pub targets: Vec<ItemId>,
    pub samples: Vec<Arc<NeighbourSample>>,
}

impl MaskedBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn prefix(&self, row: usize) -> &[ItemId] {
        &self.inputs[row][..self.lengths[row]]
    }
}

/// Packs rows in order into batches of at most `batch_size` rows. Rows from
/// one session keep sharing that session's sample.
pub fn assemble_batch(groups: &[SessionGroup], batch_size: usize) -> Vec<MaskedBatch> {
    let batch_size = batch_size.max(1);
    let rows: Vec<(UserId, &MaskedInstance, &Arc<NeighbourSample>)> = groups
        .iter()
        .flat_map(|g| g.instances.iter().map(move |i| (g.user, i, &g.sample)))
        .collect();
    rows.chunks(batch_size)
        .map(|chunk| {
            let width = chunk.iter().map(|r| r.1.len).max().unwrap_or(0);
            let mut batch = MaskedBatch {
                users: Vec::with_capacity(chunk.len()),
                inputs: Vec::with_capacity(chunk.len()),
                lengths: Vec::with_capacity(chunk.len()),
                targets: Vec::with_capacity(chunk.len()),
                samples: Vec::with_capacity(chunk.len()),
            };
            for (user, inst, sample) in chunk {
                let mut input = inst.prefix().to_vec();
                input.resize(width, PADDING_ITEM);
                batch.users.push(*user);
                batch.inputs.push(input);
                batch.lengths.push(inst.len);
                batch.targets.push(inst.target);
                batch.samples.push(Arc::clone(sample));
            }
            batch
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(v: &[u64]) -> Vec<ItemId> {
        v.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn three_item_session() {
        let out = expand_session(&items(&[7, 8, 9])).unwrap();
        assert_eq!(
            out,
            vec![
                MaskedInstance {
                    input: items(&[7, 0]),
                    len: 1,
                    target: ItemId(8)
                },
                MaskedInstance {
                    input: items(&[7, 8]),
                    len: 2,
                    target: ItemId(9)
                },
            ]
        );
    }

    #[test]
    fn minimal_and_too_short() {
        let out = expand_session(&items(&[3, 4])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].prefix(), out[0].target), (&items(&[3])[..], ItemId(4)));
        assert_eq!(expand_session(&items(&[3])), Err(MaskError::TooShort(1)));
    }

    fn group(user: u64, session: &[u64]) -> SessionGroup {
        SessionGroup {
            user: UserId(user),
            instances: expand_session(&items(session)).unwrap(),
            sample: Arc::new(NeighbourSample::default()),
        }
    }

    #[test]
    fn batches_respect_size_and_share_samples() {
        let g = group(1, &[1, 2, 3, 4]);
        let batches = assemble_batch(&[g.clone()], 2);
        assert_eq!(batches.iter().map(MaskedBatch::len).collect::<Vec<_>>(), vec![2, 1]);

        let g5 = group(1, &[1, 2, 3, 4, 5]);
        let b = assemble_batch(&[g5.clone()], 50);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 4);
        assert!(b[0].samples.iter().all(|s| Arc::ptr_eq(s, &g5.sample)));
    }

    #[test]
    fn padding_to_batch_maximum() {
        let a = SessionGroup {
            instances: vec![expand_session(&items(&[1, 2])).unwrap().remove(0)],
            ..group(1, &[1, 2])
        };
        let b = SessionGroup {
            instances: vec![expand_session(&items(&[5, 6, 7, 8])).unwrap().remove(2)],
            ..group(2, &[5, 6])
        };
        let batch = &assemble_batch(&[a, b], 10)[0];
        assert_eq!(batch.width(), 3);
        assert_eq!(batch.inputs[0], items(&[1, 0, 0]));
        assert_eq!(batch.inputs[1], items(&[5, 6, 7]));
        assert_eq!(batch.targets, items(&[2, 8]));
    }
}
