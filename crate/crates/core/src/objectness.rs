//! File-backed instance proposals and the objectness mask built from them.
//!
//! Each frame may have a sidecar `<frame_id>.json`:
//!
//! ```json
//! {"frame_id": "00003", "proposals": [
//!     {"mask_file": "00003_0.png", "confidence": 0.93, "category": "person"}]}
//! ```
//!
//! Mask files are resolved relative to the sidecar's directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_mask_png, write_mask_png};
use crate::model::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProposal {
    pub mask: BinaryMask,
    pub confidence: f64,
    /// Informational only; every category counts as a generic object.
    pub category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub frame_id: String,
    width: usize,
    height: usize,
    proposals: Vec<InstanceProposal>,
}

impl ProposalSet {
    pub fn new(
        frame_id: impl Into<String>,
        width: usize,
        height: usize,
        proposals: Vec<InstanceProposal>,
    ) -> Result<Self> {
        for (i, p) in proposals.iter().enumerate() {
            if p.mask.dims() != (width, height) {
                return Err(Error::invalid(format!(
                    "proposal {i}: mask is {}x{}, frame is {width}x{height}",
                    p.mask.width(),
                    p.mask.height()
                )));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Error::invalid(format!(
                    "proposal {i}: confidence {} outside [0, 1]",
                    p.confidence
                )));
            }
        }
        Ok(ProposalSet {
            frame_id: frame_id.into(),
            width,
            height,
            proposals,
        })
    }

    pub fn empty(frame_id: impl Into<String>, width: usize, height: usize) -> Self {
        ProposalSet {
            frame_id: frame_id.into(),
            width,
            height,
            proposals: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn proposals(&self) -> &[InstanceProposal] {
        &self.proposals
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    frame_id: String,
    proposals: Vec<SidecarEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarEntry {
    mask_file: String,
    confidence: f64,
    #[serde(default)]
    category: String,
}

/// Reads `<dir>/<frame_id>.json` and its masks. A missing sidecar means the
/// detector found nothing and yields an empty set.
pub fn load_proposals(dir: &Path, frame_id: &str, width: usize, height: usize) -> Result<ProposalSet> {
    let path = dir.join(format!("{frame_id}.json"));
    let text = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(ProposalSet::empty(frame_id, width, height));
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    if sidecar.frame_id != frame_id {
        log::warn!(
            "{}: sidecar frame_id {:?} differs from file name",
            path.display(),
            sidecar.frame_id
        );
    }
    let mut proposals = Vec::with_capacity(sidecar.proposals.len());
    for (i, entry) in sidecar.proposals.into_iter().enumerate() {
        let what = format!("{} proposal {i} ({})", path.display(), entry.mask_file);
        if !(0.0..=1.0).contains(&entry.confidence) {
            return Err(Error::invalid(format!(
                "{what}: confidence {} outside [0, 1]",
                entry.confidence
            )));
        }
        let mask = read_mask_png(&dir.join(&entry.mask_file))?;
        if mask.dims() != (width, height) {
            return Err(Error::invalid(format!(
                "{what}: mask is {}x{}, frame is {width}x{height}",
                mask.width(),
                mask.height()
            )));
        }
        proposals.push(InstanceProposal {
            mask,
            confidence: entry.confidence,
            category: entry.category,
        });
    }
    ProposalSet::new(frame_id, width, height, proposals)
}

/// Writes the sidecar plus one `<frame_id>_<i>.png` per proposal.
pub fn save_proposals(dir: &Path, set: &ProposalSet) -> Result<()> {
    let mut entries = Vec::with_capacity(set.len());
    for (i, p) in set.proposals.iter().enumerate() {
        let mask_file = format!("{}_{i}.png", set.frame_id);
        write_mask_png(&dir.join(&mask_file), &p.mask)?;
        entries.push(SidecarEntry {
            mask_file,
            confidence: p.confidence,
            category: p.category.clone(),
        });
    }
    let sidecar = Sidecar {
        frame_id: set.frame_id.clone(),
        proposals: entries,
    };
    let path = dir.join(format!("{}.json", set.frame_id));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Union of every proposal with `confidence >= threshold`.
pub fn objectness_mask(set: &ProposalSet, confidence_threshold: f64) -> BinaryMask {
    let (w, h) = set.dims();
    let mut labels = vec![0u8; w * h];
    for p in set.proposals.iter().filter(|p| p.confidence >= confidence_threshold) {
        for (l, &m) in labels.iter_mut().zip(p.mask.labels()) {
            *l |= m;
        }
    }
    BinaryMask::from_raw(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prop(mask: BinaryMask, confidence: f64) -> InstanceProposal {
        InstanceProposal {
            mask,
            confidence,
            category: "thing".into(),
        }
    }

    #[test]
    fn missing_sidecar_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let set = load_proposals(dir.path(), "00004", 8, 6).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.dims(), (8, 6));
        assert!(objectness_mask(&set, 0.5).is_all_background());
    }

    #[test]
    fn sidecar_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = BinaryMask::from_fn(8, 6, |x, _| x < 3);
        let b = BinaryMask::from_fn(8, 6, |_, y| y > 3);
        let set = ProposalSet::new("00002", 8, 6, vec![prop(a, 0.9), prop(b, 0.3)]).unwrap();
        save_proposals(dir.path(), &set).unwrap();
        let back = load_proposals(dir.path(), "00002", 8, 6).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.proposals()[0].confidence, 0.9);
        assert_eq!(back.proposals()[1].confidence, 0.3);
    }

    #[test]
    fn wrong_mask_size_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let set = ProposalSet::new("7", 5, 5, vec![prop(BinaryMask::ones(5, 5), 0.8)]).unwrap();
        save_proposals(dir.path(), &set).unwrap();
        let err = load_proposals(dir.path(), "7", 6, 5).unwrap_err().to_string();
        assert!(err.contains("proposal 0 (7_0.png)"), "{err}");
    }

    #[test]
    fn malformed_json_and_bad_confidence() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("1.json"), "{not json").unwrap();
        assert!(matches!(load_proposals(dir.path(), "1", 4, 4), Err(Error::Json { .. })));

        write_mask_png(&dir.path().join("m.png"), &BinaryMask::ones(4, 4)).unwrap();
        std::fs::write(
            dir.path().join("2.json"),
            r#"{"frame_id": "2", "proposals": [{"mask_file": "m.png", "confidence": 1.5, "category": "x"}]}"#,
        )
        .unwrap();
        let err = load_proposals(dir.path(), "2", 4, 4).unwrap_err().to_string();
        assert!(err.contains("confidence"), "{err}");
    }

    #[test]
    fn threshold_filtering_and_union() {
        let a = BinaryMask::from_fn(6, 6, |x, _| x < 2);
        let b = BinaryMask::from_fn(6, 6, |x, _| x > 3);
        let set = ProposalSet::new("0", 6, 6, vec![prop(a.clone(), 0.6), prop(b.clone(), 0.4)]).unwrap();
        assert_eq!(objectness_mask(&set, 0.5), a);

        let c = BinaryMask::from_fn(6, 6, |x, _| (1..3).contains(&x));
        let set = ProposalSet::new("0", 6, 6, vec![prop(a.clone(), 0.7), prop(c.clone(), 0.5)]).unwrap();
        let union = objectness_mask(&set, 0.5);
        assert_eq!(union, a.or(&c).unwrap());
        assert_eq!(union.count(), 3 * 6);
    }

    fn random_set(seed: u64, n: usize) -> ProposalSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let props = (0..n)
            .map(|_| prop(BinaryMask::from_fn(7, 5, |_, _| rng.gen_bool(0.3)), rng.gen_range(0.0..=1.0)))
            .collect();
        ProposalSet::new("0", 7, 5, props).unwrap()
    }

    proptest! {
        #[test]
        fn lower_threshold_never_shrinks(seed in any::<u64>(), lo in 0.0f64..1.0, delta in 0.0f64..1.0) {
            let set = random_set(seed, 5);
            let hi = (lo + delta).min(1.0);
            prop_assert!(objectness_mask(&set, hi).is_subset_of(&objectness_mask(&set, lo)));
        }

        #[test]
        fn order_does_not_matter(seed in any::<u64>(), t in 0.0f64..1.0) {
            let set = random_set(seed, 5);
            let mut rev: Vec<InstanceProposal> = set.proposals().to_vec();
            rev.reverse();
            let rev = ProposalSet::new("0", 7, 5, rev).unwrap();
            prop_assert_eq!(objectness_mask(&set, t), objectness_mask(&rev, t));
        }

        #[test]
        fn all_zero_proposal_is_identity(seed in any::<u64>(), t in 0.0f64..1.0) {
            let set = random_set(seed, 3);
            let mut more = set.proposals().to_vec();
            more.push(prop(BinaryMask::zeros(7, 5), 1.0));
            let more = ProposalSet::new("0", 7, 5, more).unwrap();
            prop_assert_eq!(objectness_mask(&set, t), objectness_mask(&more, t));
        }
    }
}
