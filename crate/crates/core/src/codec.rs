//! Bit-exact wire format for sparse gradients.
//!
//! Layout: a 4-byte little-endian entry count, then one 12-byte record per
//! entry (4-byte little-endian index, 8-byte little-endian IEEE-754 value).
//! Every transmitted message in the simulator goes through this codec so the
//! overhead ledger meters real bytes rather than a model of them.

use crate::error::{Error, Result};
use crate::vector::SparseVector;

/// Encoded size in bytes of a message with `nnz` entries.
pub fn encoded_len(nnz: usize) -> usize {
    4 + 12 * nnz
}

/// Serializes a sparse vector. The output length is exactly
/// `encoded_len(g.nnz())`.
pub fn encode(g: &SparseVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(g.nnz()));
    out.extend_from_slice(&(g.nnz() as u32).to_le_bytes());
    for &(i, v) in g.entries() {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses bytes produced by [`encode`] back into a sparse vector of the given
/// dimension. Truncated or otherwise malformed input is rejected.
pub fn decode(bytes: &[u8], dim: usize) -> Result<SparseVector> {
    if bytes.len() < 4 {
        return Err(Error::Codec(format!(
            "message too short: {} bytes, need at least 4",
            bytes.len()
        )));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let expected = encoded_len(count);
    if bytes.len() != expected {
        return Err(Error::Codec(format!(
            "length mismatch: {} entries need {} bytes, got {}",
            count,
            expected,
            bytes.len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for rec in 0..count {
        let off = 4 + 12 * rec;
        let idx = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let val = f64::from_le_bytes(bytes[off + 4..off + 12].try_into().unwrap());
        entries.push((idx, val));
    }
    // delegate index-range, ordering, and value validation
    SparseVector::new(dim, entries).map_err(|e| Error::Codec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_vector_is_four_bytes() {
        let g = SparseVector::empty(10);
        let bytes = encode(&g);
        assert_eq!(bytes, vec![0, 0, 0, 0]);
        assert_eq!(decode(&bytes, 10).unwrap(), g);
    }

    #[test]
    fn length_law_holds() {
        let entries: Vec<(u32, f64)> = (0..100).map(|i| (i as u32, i as f64 + 1.0)).collect();
        let g = SparseVector::new(200, entries).unwrap();
        assert_eq!(encode(&g).len(), 1204);
        assert_eq!(encoded_len(100), 1204);
    }

    #[test]
    fn single_entry_round_trip() {
        let g = SparseVector::new(16, vec![(7, -1.5)]).unwrap();
        assert_eq!(decode(&encode(&g), 16).unwrap(), g);
    }

    #[test]
    fn byte_layout_is_pinned() {
        let g = SparseVector::new(16, vec![(7, -1.5)]).unwrap();
        let mut expected = vec![1, 0, 0, 0, 7, 0, 0, 0];
        expected.extend_from_slice(&(-1.5f64).to_le_bytes());
        assert_eq!(encode(&g), expected);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let g = SparseVector::new(16, vec![(3, 2.0), (9, -4.0)]).unwrap();
        let bytes = encode(&g);
        assert!(decode(&bytes[..bytes.len() - 1], 16).is_err());
        assert!(decode(&bytes[..3], 16).is_err());
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(decode(&padded, 16).is_err());
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let g = SparseVector::new(100, vec![(42, 1.0)]).unwrap();
        let bytes = encode(&g);
        assert!(decode(&bytes, 40).is_err());
        assert!(decode(&bytes, 100).is_ok());
    }

    #[test]
    fn unsorted_or_zero_entries_are_rejected() {
        // handcrafted payloads that a correct encoder never emits
        let mut unsorted = vec![2, 0, 0, 0];
        unsorted.extend_from_slice(&5u32.to_le_bytes());
        unsorted.extend_from_slice(&1.0f64.to_le_bytes());
        unsorted.extend_from_slice(&3u32.to_le_bytes());
        unsorted.extend_from_slice(&2.0f64.to_le_bytes());
        assert!(decode(&unsorted, 10).is_err());

        let mut zero = vec![1, 0, 0, 0];
        zero.extend_from_slice(&0u32.to_le_bytes());
        zero.extend_from_slice(&0.0f64.to_le_bytes());
        assert!(decode(&zero, 10).is_err());
    }

    prop_compose! {
        fn arb_sparse()
            (dim in 1usize..500)
            (support in prop::collection::btree_set(0u32..500, 0..40), dim in Just(dim))
            -> SparseVector
        {
            let entries: Vec<(u32, f64)> = support
                .into_iter()
                .filter(|&i| (i as usize) < dim)
                .enumerate()
                .map(|(n, i)| (i, (n as f64 + 1.0) * 0.37 - 3.0))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            SparseVector::new(dim, entries).unwrap()
        }
    }

    proptest! {
        #[test]
        fn round_trip_identity(g in arb_sparse()) {
            let bytes = encode(&g);
            prop_assert_eq!(bytes.len(), encoded_len(g.nnz()));
            let back = decode(&bytes, g.dim()).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
