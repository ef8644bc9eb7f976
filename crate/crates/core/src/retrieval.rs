//! Descriptor map and exact cosine k-nearest-neighbour search.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;

use crate::binio::{put_f32s, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::model::Descriptor;
use crate::ops::cosine_similarity;
use crate::tensor::Real;

pub const MAP_MAGIC: &[u8; 4] = b"ADLM";
const MAP_VERSION: u32 = 1;
const MAP_HEADER_BYTES: usize = 20;

/// Stabilizer shared with the training loss.
pub const SIMILARITY_STABILIZER: Real = 1e-8;

/// Cosine similarity of two descriptors.
pub fn descriptor_similarity(a: &Descriptor, b: &Descriptor) -> Result<Real> {
    cosine_similarity(&a.to_real(), &b.to_real(), SIMILARITY_STABILIZER)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub frame_id: u64,
    pub similarity: Real,
}

impl Candidate {
    /// Ranking order: higher similarity first, then lower frame id.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .total_cmp(&other.similarity)
            .then_with(|| other.frame_id.cmp(&self.frame_id))
    }
}

struct Ranked(Candidate);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Top-N candidates for one query, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub query_frame_id: u64,
    pub candidates: Vec<Candidate>,
}

impl MatchResult {
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

/// Immutable reference descriptors ordered by frame id.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMap {
    pub tag: String,
    dim: usize,
    entries: Vec<Descriptor>,
    values: Vec<Vec<Real>>,
    sq_norms: Vec<Real>,
}

/// Sorts `descriptors` by frame id and checks they share one dimension.
pub fn build_map(mut descriptors: Vec<Descriptor>, tag: impl Into<String>) -> Result<DescriptorMap> {
    descriptors.sort_by_key(|d| d.frame_id);
    let dim = descriptors.first().map_or(0, Descriptor::dim);
    for d in &descriptors {
        if d.dim() != dim {
            return Err(Error::Dimension(format!(
                "descriptor of frame {} has length {}, map dimension is {dim}",
                d.frame_id,
                d.dim()
            )));
        }
    }
    if let Some(w) = descriptors.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
        return Err(Error::Data(format!("duplicate frame id {} in descriptor map", w[0].frame_id)));
    }
    let values: Vec<Vec<Real>> = descriptors.iter().map(Descriptor::to_real).collect();
    let sq_norms = values.iter().map(|v| v.iter().fold(0.0, |acc: Real, x| acc + x * x)).collect();
    Ok(DescriptorMap {
        tag: tag.into(),
        dim,
        entries: descriptors,
        values,
        sq_norms,
    })
}

impl DescriptorMap {
    /// Descriptor length; 0 for an empty map.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Descriptor] {
        &self.entries
    }

    pub fn get(&self, frame_id: u64) -> Option<&Descriptor> {
        self.entries
            .binary_search_by_key(&frame_id, |d| d.frame_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Exact top-`n` by cosine similarity.
    pub fn query(&self, q: &Descriptor, n: usize) -> Result<MatchResult> {
        self.query_filtered(q, n, |_| true)
    }

    /// Exact top-`n` among entries whose frame id passes `keep`.
    pub fn query_filtered(&self, q: &Descriptor, n: usize, keep: impl Fn(u64) -> bool) -> Result<MatchResult> {
        if n == 0 {
            return Err(Error::Contract("query needs N >= 1".into()));
        }
        if self.is_empty() {
            return Ok(MatchResult {
                query_frame_id: q.frame_id,
                candidates: Vec::new(),
            });
        }
        if q.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "query frame {} has length {}, map dimension is {}",
                q.frame_id,
                q.dim(),
                self.dim
            )));
        }
        let qv = q.to_real();
        let q_norm = qv.iter().fold(0.0, |acc: Real, x| acc + x * x).sqrt();
        let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(n + 1);
        for ((entry, values), sq) in self.entries.iter().zip(&self.values).zip(&self.sq_norms) {
            if !keep(entry.frame_id) {
                continue;
            }
            let dot = qv.iter().zip(values).fold(0.0, |acc: Real, (a, b)| acc + a * b);
            let denom = (q_norm * sq.sqrt()).max(SIMILARITY_STABILIZER);
            let c = Candidate {
                frame_id: entry.frame_id,
                similarity: dot / denom,
            };
            if heap.len() < n {
                heap.push(Reverse(Ranked(c)));
            } else if heap.peek().is_some_and(|w| c.rank_cmp(&w.0 .0) == Ordering::Greater) {
                heap.pop();
                heap.push(Reverse(Ranked(c)));
            }
        }
        let candidates = heap.into_sorted_vec().into_iter().map(|r| r.0 .0).collect();
        Ok(MatchResult {
            query_frame_id: q.frame_id,
            candidates,
        })
    }
}

pub fn encode_map(map: &DescriptorMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAP_HEADER_BYTES + map.len() * (8 + 4 * map.dim));
    out.extend_from_slice(MAP_MAGIC);
    put_u32(&mut out, MAP_VERSION);
    put_u32(&mut out, map.dim as u32);
    put_u64(&mut out, map.len() as u64);
    for d in &map.entries {
        put_u64(&mut out, d.frame_id);
        put_f32s(&mut out, d.values.iter().copied());
    }
    out
}

pub fn decode_map(bytes: &[u8], source: &str, tag: impl Into<String>) -> Result<DescriptorMap> {
    let mut r = ByteReader::new(bytes, source);
    r.magic(MAP_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != MAP_VERSION {
        return Err(r.error(at, format!("unsupported map version {version}")));
    }
    let at = r.offset();
    let dim = r.u32("dimension")? as usize;
    let count = r.u64("count")?;
    if dim == 0 && count > 0 {
        return Err(r.error(at, "zero dimension with non-empty map"));
    }
    let record = 8 + 4 * dim as u64;
    if count.checked_mul(record).is_none_or(|n| n > r.remaining() as u64) {
        return Err(r.error(
            r.offset(),
            format!("truncated map: {count} records of {record} bytes, {} left", r.remaining()),
        ));
    }
    let mut entries = Vec::with_capacity(count as usize);
    let mut last = None;
    for _ in 0..count {
        let at = r.offset();
        let frame_id = r.u64("frame id")?;
        if last.is_some_and(|l| frame_id <= l) {
            return Err(r.error(at, format!("frame id {frame_id} out of order")));
        }
        last = Some(frame_id);
        let values = r.f32_vec(dim, "descriptor")?;
        entries.push(Descriptor::new(values, frame_id).map_err(|e| r.error(at, e.to_string()))?);
    }
    r.finish()?;
    let mut map = build_map(entries, tag)?;
    map.dim = dim;
    Ok(map)
}

pub fn save_map(path: &Path, map: &DescriptorMap) -> Result<()> {
    std::fs::write(path, encode_map(map)).map_err(|e| Error::io(path, e))
}

/// Loads a map; its tag is the file stem.
pub fn load_map(path: &Path) -> Result<DescriptorMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tag = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_map(&bytes, &path.display().to_string(), tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(id: u64, v: &[f32]) -> Descriptor {
        Descriptor::new(v.to_vec(), id).unwrap()
    }

    fn brute_force(map: &DescriptorMap, q: &Descriptor, n: usize) -> Vec<Candidate> {
        let mut all: Vec<Candidate> = map
            .entries()
            .iter()
            .map(|e| Candidate {
                frame_id: e.frame_id,
                similarity: descriptor_similarity(q, e).unwrap(),
            })
            .collect();
        all.sort_by(|a, b| b.rank_cmp(a));
        all.truncate(n);
        all
    }

    #[test]
    fn unit_axes() {
        let map = build_map(vec![d(2, &[0.0, 1.0]), d(1, &[1.0, 0.0])], "t").unwrap();
        assert_eq!(map.entries()[0].frame_id, 1);
        let r = map.query(&d(9, &[1.0, 0.0]), 1).unwrap();
        assert_eq!(r.candidates, vec![Candidate { frame_id: 1, similarity: 1.0 }]);
        let all = map.query(&d(9, &[1.0, 0.0]), 10).unwrap();
        assert_eq!(all.candidates.len(), 2);
        assert_eq!(all.candidates[1].frame_id, 2);
    }

    #[test]
    fn ties_prefer_lower_frame_id() {
        let map = build_map(vec![d(5, &[1.0, 1.0]), d(3, &[2.0, 2.0]), d(4, &[1.0, 0.0])], "t").unwrap();
        let r = map.query(&d(0, &[1.0, 1.0]), 2).unwrap();
        let ids: Vec<u64> = r.candidates.iter().map(|c| c.frame_id).collect();
        assert_eq!(ids, vec![3, 5]);
    }

    #[test]
    fn empty_and_invalid() {
        let empty = build_map(vec![], "e").unwrap();
        assert!(empty.query(&d(0, &[1.0]), 3).unwrap().candidates.is_empty());
        assert!(matches!(
            build_map(vec![d(1, &[1.0]), d(1, &[2.0])], "t"),
            Err(Error::Data(_))
        ));
        let err = build_map(vec![d(1, &[1.0]), d(2, &[1.0, 2.0])], "t").unwrap_err();
        assert!(err.to_string().contains("frame 2"));
        let map = build_map(vec![d(1, &[1.0, 0.0])], "t").unwrap();
        assert!(matches!(map.query(&d(0, &[1.0]), 1), Err(Error::Dimension(_))));
        assert!(map.query(&d(0, &[1.0, 0.0]), 0).is_err());
    }

    #[test]
    fn file_size_and_round_trip() {
        let map = build_map((0..7).map(|i| d(i * 3, &[i as f32, 1.5, -2.0])).collect(), "t").unwrap();
        let bytes = encode_map(&map);
        assert_eq!(bytes.len(), 20 + 7 * (8 + 4 * 3));
        assert_eq!(decode_map(&bytes, "m", "t").unwrap(), map);
        let empty = build_map(vec![], "t").unwrap();
        assert_eq!(decode_map(&encode_map(&empty), "m", "t").unwrap(), empty);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let map = build_map(vec![d(1, &[1.0, 2.0]), d(2, &[3.0, 4.0])], "t").unwrap();
        let mut bytes = encode_map(&map);
        assert!(matches!(
            decode_map(&bytes[..bytes.len() - 1], "m", "t"),
            Err(Error::ParseAtOffset { .. })
        ));
        bytes[1] = b'!';
        assert!(matches!(
            decode_map(&bytes, "m", "t"),
            Err(Error::ParseAtOffset { offset: 0, .. })
        ));
    }

    #[test]
    fn self_similarity_is_one() {
        let q = d(1, &[0.3, -2.0, 7.5]);
        assert!((descriptor_similarity(&q, &q).unwrap() - 1.0).abs() < 1e-6);
    }

    fn descriptors(max_len: usize) -> impl Strategy<Value = (usize, Vec<Vec<f32>>, Vec<f32>)> {
        (1usize..12).prop_flat_map(move |dim| {
            (
                Just(dim),
                prop::collection::vec(prop::collection::vec(-3i8..=3, dim), 1..max_len)
                    .prop_map(|vs| vs.into_iter().map(|v| v.into_iter().map(f32::from).collect()).collect()),
                prop::collection::vec(-3i8..=3, dim).prop_map(|v| v.into_iter().map(f32::from).collect()),
            )
        })
    }

    proptest! {
        // small integer coordinates force many exact similarity ties
        #[test]
        fn matches_brute_force((_, vs, q) in descriptors(60), n in 1usize..20) {
            let entries: Vec<Descriptor> = vs.iter().enumerate().map(|(i, v)| d(i as u64 * 7 % 61, v)).collect();
            let mut ids: Vec<u64> = entries.iter().map(|e| e.frame_id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assume!(ids.len() == entries.len());
            let map = build_map(entries, "p").unwrap();
            let q = d(999, &q);
            let got = map.query(&q, n).unwrap().candidates;
            prop_assert_eq!(got, brute_force(&map, &q, n));
        }

        #[test]
        fn build_order_does_not_matter((_, vs, q) in descriptors(30), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let entries: Vec<Descriptor> = vs.iter().enumerate().map(|(i, v)| d(i as u64, v)).collect();
            let mut shuffled = entries.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = build_map(entries, "p").unwrap();
            let b = build_map(shuffled, "p").unwrap();
            let q = d(999, &q);
            prop_assert_eq!(a.query(&q, 5).unwrap(), b.query(&q, 5).unwrap());
        }
    }
}
