//! Category bookkeeping and the in-memory dataset model.
//!
//! A [`CategorySpace`] lays out `K` known classes followed by one merged
//! unknown slot and one background slot. Slot indices in this crate are
//! zero-based: known classes occupy `0..K`, unknown is `K`, background is
//! `K + 1`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaxonomyError {
    #[error("category space needs at least one known class")]
    NoKnownClasses,
    #[error("known category id {0} is listed twice")]
    DuplicateKnown(u64),
    #[error("category id {0} is both known and unknown")]
    KnownUnknownOverlap(u64),
    #[error("unknown wire id {0} collides with a known category id")]
    WireIdCollision(u64),
    #[error("category id {0} is not part of the category space")]
    UnknownCategory(u64),
    #[error("annotation {annotation_id} references missing image {image_id}")]
    MissingImage { annotation_id: u64, image_id: u64 },
    #[error("image id {0} appears more than once")]
    DuplicateImage(u64),
    #[error("detection score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("detection class slot {slot} out of range for {known} known classes")]
    SlotOutOfRange { slot: usize, known: usize },
}

/// Where a class-bearing record lands: a known class slot or the merged
/// unknown slot. Background is never a valid detection or annotation class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassSlot {
    Known(usize),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorySpace {
    known_ids: Vec<u64>,
    unknown_source_ids: BTreeSet<u64>,
    unknown_wire_id: u64,
    known_lookup: BTreeMap<u64, usize>,
}

impl CategorySpace {
    /// `unknown_wire_id` defaults to one past the largest known id.
    pub fn new(
        known_ids: Vec<u64>,
        unknown_source_ids: impl IntoIterator<Item = u64>,
        unknown_wire_id: Option<u64>,
    ) -> Result<Self, TaxonomyError> {
        if known_ids.is_empty() {
            return Err(TaxonomyError::NoKnownClasses);
        }
        let mut known_lookup = BTreeMap::new();
        for (slot, &id) in known_ids.iter().enumerate() {
            if known_lookup.insert(id, slot).is_some() {
                return Err(TaxonomyError::DuplicateKnown(id));
            }
        }
        let unknown_source_ids: BTreeSet<u64> = unknown_source_ids.into_iter().collect();
        if let Some(&id) = unknown_source_ids.iter().find(|id| known_lookup.contains_key(id)) {
            return Err(TaxonomyError::KnownUnknownOverlap(id));
        }
        let default_wire = known_ids.iter().max().copied().unwrap_or(0) + 1;
        let unknown_wire_id = unknown_wire_id.unwrap_or(default_wire);
        if known_lookup.contains_key(&unknown_wire_id) {
            return Err(TaxonomyError::WireIdCollision(unknown_wire_id));
        }
        Ok(Self {
            known_ids,
            unknown_source_ids,
            unknown_wire_id,
            known_lookup,
        })
    }

    pub fn known_ids(&self) -> &[u64] {
        &self.known_ids
    }

    pub fn unknown_source_ids(&self) -> &BTreeSet<u64> {
        &self.unknown_source_ids
    }

    pub fn unknown_wire_id(&self) -> u64 {
        self.unknown_wire_id
    }

    /// `K`.
    pub fn num_known(&self) -> usize {
        self.known_ids.len()
    }

    /// `K + 2`: known classes, unknown, background.
    pub fn num_slots(&self) -> usize {
        self.known_ids.len() + 2
    }

    pub fn unknown_index(&self) -> usize {
        self.known_ids.len()
    }

    pub fn background_index(&self) -> usize {
        self.known_ids.len() + 1
    }

    pub fn slot_index(&self, slot: ClassSlot) -> usize {
        match slot {
            ClassSlot::Known(i) => i,
            ClassSlot::Unknown => self.unknown_index(),
        }
    }

    pub fn known_slot(&self, category_id: u64) -> Option<usize> {
        self.known_lookup.get(&category_id).copied()
    }

    /// Classifies a dataset category id.
    pub fn classify(&self, category_id: u64) -> Option<ClassSlot> {
        if let Some(slot) = self.known_slot(category_id) {
            Some(ClassSlot::Known(slot))
        } else if self.unknown_source_ids.contains(&category_id) {
            Some(ClassSlot::Unknown)
        } else {
            None
        }
    }

    /// Maps a detection-file category id onto a slot. The unknown wire id
    /// and any unknown source id both land on the unknown slot.
    pub fn slot_for_wire_id(&self, category_id: u64) -> Option<ClassSlot> {
        if category_id == self.unknown_wire_id {
            return Some(ClassSlot::Unknown);
        }
        self.classify(category_id)
    }

    pub fn wire_id(&self, slot: ClassSlot) -> u64 {
        match slot {
            ClassSlot::Known(i) => self.known_ids[i],
            ClassSlot::Unknown => self.unknown_wire_id,
        }
    }

    pub fn check_slot(&self, slot: ClassSlot) -> Result<(), TaxonomyError> {
        match slot {
            ClassSlot::Known(i) if i >= self.num_known() => Err(TaxonomyError::SlotOutOfRange {
                slot: i,
                known: self.num_known(),
            }),
            _ => Ok(()),
        }
    }

    /// Returns a copy with `ids` added to the unknown sources, skipping any
    /// id that is already known.
    pub fn with_extra_unknown(&self, ids: impl IntoIterator<Item = u64>) -> Self {
        let mut out = self.clone();
        for id in ids {
            if !out.known_lookup.contains_key(&id) {
                out.unknown_source_ids.insert(id);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub width: f64,
    pub height: f64,
}

/// Ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    /// COCO `iscrowd`; crowd regions can be matched but never count toward
    /// recall denominators.
    pub iscrowd: bool,
}

/// Scored model output. Background is unrepresentable by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub slot: ClassSlot,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: u64, slot: ClassSlot, bbox: BBox, score: f64) -> Result<Self, TaxonomyError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(TaxonomyError::ScoreOutOfRange(score));
        }
        Ok(Self {
            image_id,
            slot,
            bbox,
            score,
        })
    }

    pub fn is_unknown(&self) -> bool {
        self.slot == ClassSlot::Unknown
    }
}

/// Stable sort by `(image_id, descending score)`.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| a.image_id.cmp(&b.image_id).then_with(|| b.score.total_cmp(&a.score)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: CategorySpace,
    /// Display names keyed by category id; carried through for round trips.
    pub category_names: BTreeMap<u64, String>,
}

impl Dataset {
    /// Validates image references and category membership.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: CategorySpace,
        category_names: BTreeMap<u64, String>,
    ) -> Result<Self, TaxonomyError> {
        let ds = Self {
            images,
            annotations,
            categories,
            category_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(TaxonomyError::DuplicateImage(img.id));
            }
        }
        for ann in &self.annotations {
            if !ids.contains(&ann.image_id) {
                return Err(TaxonomyError::MissingImage {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                });
            }
            if self.categories.classify(ann.category_id).is_none() {
                return Err(TaxonomyError::UnknownCategory(ann.category_id));
            }
        }
        Ok(())
    }

    pub fn image_ids(&self) -> BTreeSet<u64> {
        self.images.iter().map(|i| i.id).collect()
    }

    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
        for img in &self.images {
            map.entry(img.id).or_default();
        }
        for ann in &self.annotations {
            map.entry(ann.image_id).or_default().push(ann);
        }
        map
    }

    pub fn slot_of(&self, ann: &Annotation) -> Option<ClassSlot> {
        self.categories.classify(ann.category_id)
    }

    /// Keeps the listed images (in the given order) and their annotations.
    pub fn subset(&self, image_ids: &[u64]) -> Self {
        let by_id: BTreeMap<u64, &ImageRecord> = self.images.iter().map(|i| (i.id, i)).collect();
        let wanted: BTreeSet<u64> = image_ids.iter().copied().collect();
        Self {
            images: image_ids
                .iter()
                .filter_map(|id| by_id.get(id).map(|r| (*r).clone()))
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| wanted.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
            category_names: self.category_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn space() -> CategorySpace {
        CategorySpace::new(vec![1, 2, 3], [7, 8], None).unwrap()
    }

    #[test]
    fn slot_layout() {
        let s = space();
        assert_eq!(s.num_known(), 3);
        assert_eq!(s.num_slots(), 5);
        assert_eq!(s.unknown_index(), 3);
        assert_eq!(s.background_index(), 4);
        assert_eq!(s.unknown_wire_id(), 4);
        assert_eq!(s.classify(2), Some(ClassSlot::Known(1)));
        assert_eq!(s.classify(8), Some(ClassSlot::Unknown));
        assert_eq!(s.classify(99), None);
        assert_eq!(s.slot_for_wire_id(4), Some(ClassSlot::Unknown));
        assert_eq!(s.wire_id(ClassSlot::Known(2)), 3);
        assert_eq!(s.wire_id(ClassSlot::Unknown), 4);
    }

    #[test]
    fn space_validation() {
        assert_eq!(
            CategorySpace::new(vec![], [1], None),
            Err(TaxonomyError::NoKnownClasses)
        );
        assert_eq!(
            CategorySpace::new(vec![1, 1], [], None),
            Err(TaxonomyError::DuplicateKnown(1))
        );
        assert_eq!(
            CategorySpace::new(vec![1, 2], [2], None),
            Err(TaxonomyError::KnownUnknownOverlap(2))
        );
        assert_eq!(
            CategorySpace::new(vec![1, 2], [], Some(2)),
            Err(TaxonomyError::WireIdCollision(2))
        );
    }

    #[test]
    fn detection_score_range() {
        let b = BBox::new(0., 0., 1., 1.);
        assert!(Detection::new(1, ClassSlot::Unknown, b, 0.9).is_ok());
        assert_eq!(
            Detection::new(1, ClassSlot::Unknown, b, 1.5),
            Err(TaxonomyError::ScoreOutOfRange(1.5))
        );
        assert!(Detection::new(1, ClassSlot::Unknown, b, f64::NAN).is_err());
    }

    #[test]
    fn sort_is_stable_on_ties() {
        let b = BBox::new(0., 0., 1., 1.);
        let mut dets = vec![
            Detection::new(2, ClassSlot::Known(0), b, 0.5).unwrap(),
            Detection::new(1, ClassSlot::Known(0), b, 0.5).unwrap(),
            Detection::new(1, ClassSlot::Known(1), b, 0.5).unwrap(),
            Detection::new(1, ClassSlot::Known(2), b, 0.9).unwrap(),
        ];
        sort_detections(&mut dets);
        let order: Vec<_> = dets.iter().map(|d| (d.image_id, d.slot)).collect();
        assert_eq!(
            order,
            vec![
                (1, ClassSlot::Known(2)),
                (1, ClassSlot::Known(0)),
                (1, ClassSlot::Known(1)),
                (2, ClassSlot::Known(0)),
            ]
        );
    }

    #[test]
    fn dataset_validation() {
        let img = ImageRecord {
            id: 1,
            width: 10.,
            height: 10.,
        };
        let ann = |cat| Annotation {
            id: 1,
            image_id: 1,
            category_id: cat,
            bbox: BBox::new(0., 0., 1., 1.),
            iscrowd: false,
        };
        assert!(Dataset::new(vec![img.clone()], vec![ann(1)], space(), BTreeMap::new()).is_ok());
        assert_eq!(
            Dataset::new(vec![img.clone()], vec![ann(42)], space(), BTreeMap::new()),
            Err(TaxonomyError::UnknownCategory(42))
        );
        let mut orphan = ann(1);
        orphan.image_id = 9;
        assert!(matches!(
            Dataset::new(vec![img], vec![orphan], space(), BTreeMap::new()),
            Err(TaxonomyError::MissingImage { .. })
        ));
    }
}
