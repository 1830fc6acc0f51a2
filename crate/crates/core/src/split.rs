//! Open-set evaluation split construction.
//!
//! * T1 splits pair `n` known-source images with `{n, 2n, 3n}` open-pool
//!   images that contain at least one object from the first `{1, 2, 3}`
//!   open semantic groups. Known objects inside open images are kept.
//! * T2 splits pair `n` known-source images with `{0.5n, n, 2n, 4n}`
//!   open-pool images that contain no known-class object.
//! * OWOD task lists split an 80-class pool into four incremental tasks.
//!
//! Candidate images are put in ascending id order, shuffled with a seeded
//! ChaCha8 stream and prefix-taken, so a `(inputs, seed)` pair always yields
//! the same image lists.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::taxonomy::{CategorySpace, ClassSlot, Dataset, TaxonomyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("not enough {what}: need {needed}, found {available} (short by {})", needed - available)]
    Capacity {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("image id {0} is selected from both the known and the open source")]
    IdCollision(u64),
    #[error("split has no known images; wilderness ratio undefined")]
    UndefinedRatio,
    #[error("classes without any annotation in the pool: {0:?}")]
    MissingClasses(Vec<u64>),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticGroup {
    pub name: String,
    pub category_ids: Vec<u64>,
}

/// Number of open-set classes in a T1 split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpenLevel {
    L20,
    L40,
    L60,
}

impl OpenLevel {
    pub fn from_classes(level: u32) -> Result<Self, SplitError> {
        match level {
            20 => Ok(Self::L20),
            40 => Ok(Self::L40),
            60 => Ok(Self::L60),
            other => Err(SplitError::Parameter(alloc::format!(
                "level {other} not in {{20, 40, 60}}"
            ))),
        }
    }

    pub fn classes(self) -> u32 {
        20 * self.groups() as u32
    }

    /// Open groups used; also the multiple of `n` drawn from the pool.
    pub fn groups(self) -> usize {
        match self {
            Self::L20 => 1,
            Self::L40 => 2,
            Self::L60 => 3,
        }
    }
}

/// Ratio of open images to known images in a T2 split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WildernessMultiplier {
    Half,
    One,
    Two,
    Four,
}

impl WildernessMultiplier {
    pub const ALL: [Self; 4] = [Self::Half, Self::One, Self::Two, Self::Four];

    pub fn from_f64(m: f64) -> Result<Self, SplitError> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_f64() == m)
            .ok_or_else(|| SplitError::Parameter(alloc::format!("multiplier {m} not in {{0.5, 1, 2, 4}}")))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::One => 1.0,
            Self::Two => 2.0,
            Self::Four => 4.0,
        }
    }

    pub fn open_count(self, n: usize) -> Result<usize, SplitError> {
        match self {
            Self::Half if n % 2 == 1 => Err(SplitError::Parameter(alloc::format!(
                "0.5 * n is not an integer for n = {n}"
            ))),
            Self::Half => Ok(n / 2),
            Self::One => Ok(n),
            Self::Two => Ok(2 * n),
            Self::Four => Ok(4 * n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitParams {
    T1 { level: OpenLevel },
    T2 { multiplier: WildernessMultiplier },
}

/// Reproducibility record of a built split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub params: SplitParams,
    pub n: usize,
    pub seed: u64,
    pub known_image_ids: Vec<u64>,
    pub open_image_ids: Vec<u64>,
}

impl SplitManifest {
    /// Known-source ids followed by open-source ids.
    pub fn image_ids(&self) -> Vec<u64> {
        self.known_image_ids
            .iter()
            .chain(&self.open_image_ids)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub dataset: Dataset,
    pub manifest: SplitManifest,
}

impl Split {
    /// Provenance-based ratio: open-source images over known-source images.
    pub fn wilderness_ratio(&self) -> Result<f64, SplitError> {
        let known = self.manifest.known_image_ids.len();
        if known == 0 {
            return Err(SplitError::UndefinedRatio);
        }
        Ok(self.manifest.open_image_ids.len() as f64 / known as f64)
    }
}

/// Object-based ratio: images with at least one unknown and no known object,
/// over images with at least one known object.
pub fn wilderness_ratio(dataset: &Dataset, space: &CategorySpace) -> Result<f64, SplitError> {
    let mut known_imgs = BTreeSet::new();
    let mut unknown_imgs = BTreeSet::new();
    for a in &dataset.annotations {
        match space.classify(a.category_id) {
            Some(ClassSlot::Known(_)) => {
                known_imgs.insert(a.image_id);
            }
            Some(ClassSlot::Unknown) => {
                unknown_imgs.insert(a.image_id);
            }
            None => {}
        }
    }
    if known_imgs.is_empty() {
        return Err(SplitError::UndefinedRatio);
    }
    let wild = unknown_imgs.difference(&known_imgs).count();
    Ok(wild as f64 / known_imgs.len() as f64)
}

fn sample(
    mut candidates: Vec<u64>,
    count: usize,
    rng: &mut ChaCha8Rng,
    what: &'static str,
) -> Result<Vec<u64>, SplitError> {
    if candidates.len() < count {
        return Err(SplitError::Capacity {
            what,
            needed: count,
            available: candidates.len(),
        });
    }
    candidates.sort_unstable();
    candidates.dedup();
    candidates.shuffle(rng);
    candidates.truncate(count);
    candidates.sort_unstable();
    Ok(candidates)
}

fn merge(known_eval: &Dataset, open_pool: &Dataset, manifest: SplitManifest) -> Result<Split, SplitError> {
    let known_set: BTreeSet<u64> = manifest.known_image_ids.iter().copied().collect();
    if let Some(&id) = manifest.open_image_ids.iter().find(|id| known_set.contains(id)) {
        return Err(SplitError::IdCollision(id));
    }
    let known_part = known_eval.subset(&manifest.known_image_ids);
    let open_part = open_pool.subset(&manifest.open_image_ids);
    let extra: BTreeSet<u64> = open_pool
        .annotations
        .iter()
        .map(|a| a.category_id)
        .chain(open_pool.categories.unknown_source_ids().iter().copied())
        .chain(open_pool.categories.known_ids().iter().copied())
        .collect();
    let space = known_eval.categories.with_extra_unknown(extra);
    let mut names = known_eval.category_names.clone();
    for (id, name) in &open_pool.category_names {
        names.entry(*id).or_insert_with(|| name.clone());
    }
    let mut images = known_part.images;
    images.extend(open_part.images);
    let mut annotations = known_part.annotations;
    annotations.extend(open_part.annotations);
    let dataset = Dataset::new(images, annotations, space, names)?;
    Ok(Split { dataset, manifest })
}

/// Builds a VOC-COCO-T1 style split.
///
/// `groups[0]` is the known group; the open classes are the next
/// `level.groups()` groups.
pub fn build_t1_split(
    known_eval: &Dataset,
    open_pool: &Dataset,
    groups: &[SemanticGroup],
    level: OpenLevel,
    n: usize,
    seed: u64,
) -> Result<Split, SplitError> {
    if groups.len() < 1 + level.groups() {
        return Err(SplitError::Parameter(alloc::format!(
            "level {} needs {} groups, got {}",
            level.classes(),
            1 + level.groups(),
            groups.len()
        )));
    }
    let active: BTreeSet<u64> = groups[1..=level.groups()]
        .iter()
        .flat_map(|g| g.category_ids.iter().copied())
        .collect();
    let qualifying: Vec<u64> = open_pool
        .annotations
        .iter()
        .filter(|a| active.contains(&a.category_id))
        .map(|a| a.image_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let known = sample(
        known_eval.images.iter().map(|i| i.id).collect(),
        n,
        &mut rng,
        "known-source images",
    )?;
    let open = sample(qualifying, level.groups() * n, &mut rng, "qualifying open-pool images")?;
    merge(
        known_eval,
        open_pool,
        SplitManifest {
            params: SplitParams::T1 { level },
            n,
            seed,
            known_image_ids: known,
            open_image_ids: open,
        },
    )
}

/// Builds a VOC-COCO-T2 style split. Open images must hold at least one
/// object and none of a known class of `known_eval`.
pub fn build_t2_split(
    known_eval: &Dataset,
    open_pool: &Dataset,
    multiplier: WildernessMultiplier,
    n: usize,
    seed: u64,
) -> Result<Split, SplitError> {
    let open_count = multiplier.open_count(n)?;
    let space = &known_eval.categories;
    let mut has_known = BTreeSet::new();
    let mut has_object = BTreeSet::new();
    for a in &open_pool.annotations {
        has_object.insert(a.image_id);
        if space.known_slot(a.category_id).is_some() {
            has_known.insert(a.image_id);
        }
    }
    let qualifying: Vec<u64> = has_object.difference(&has_known).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let known = sample(
        known_eval.images.iter().map(|i| i.id).collect(),
        n,
        &mut rng,
        "known-source images",
    )?;
    let open = sample(qualifying, open_count, &mut rng, "known-free open-pool images")?;
    merge(
        known_eval,
        open_pool,
        SplitManifest {
            params: SplitParams::T2 { multiplier },
            n,
            seed,
            known_image_ids: known,
            open_image_ids: open,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OwodBenchmark {
    /// Superclass-mixed.
    Mowodb,
    /// Superclass-separated.
    Sowodb,
}

impl OwodBenchmark {
    pub fn groups(self) -> Vec<SemanticGroup> {
        match self {
            Self::Mowodb => groups_from_names(&MOWODB_GROUPS),
            Self::Sowodb => groups_from_names(&SOWODB_GROUPS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwodTask {
    /// Zero-based task index.
    pub index: usize,
    pub group: SemanticGroup,
    /// Classes of tasks `0..=index` are known; everything else is unknown.
    pub space: CategorySpace,
    /// Images holding at least one object of this task's classes, with
    /// annotations restricted to those classes.
    pub dataset: Dataset,
}

/// Splits a pool covering every class of `groups` into incremental tasks.
pub fn build_owod_tasks(pool: &Dataset, groups: &[SemanticGroup]) -> Result<Vec<OwodTask>, SplitError> {
    let present: BTreeSet<u64> = pool.annotations.iter().map(|a| a.category_id).collect();
    let missing: Vec<u64> = groups
        .iter()
        .flat_map(|g| g.category_ids.iter().copied())
        .filter(|id| !present.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(SplitError::MissingClasses(missing));
    }
    let all_ids: BTreeSet<u64> = groups
        .iter()
        .flat_map(|g| g.category_ids.iter().copied())
        .chain(present.iter().copied())
        .collect();
    let mut known: Vec<u64> = Vec::new();
    let mut tasks = Vec::with_capacity(groups.len());
    for (index, group) in groups.iter().enumerate() {
        known.extend(group.category_ids.iter().copied());
        let known_set: BTreeSet<u64> = known.iter().copied().collect();
        let space = CategorySpace::new(
            known.clone(),
            all_ids.iter().copied().filter(|id| !known_set.contains(id)),
            None,
        )?;
        let members: BTreeSet<u64> = group.category_ids.iter().copied().collect();
        let image_ids: BTreeSet<u64> = pool
            .annotations
            .iter()
            .filter(|a| members.contains(&a.category_id))
            .map(|a| a.image_id)
            .collect();
        let ids: Vec<u64> = pool
            .images
            .iter()
            .map(|i| i.id)
            .filter(|id| image_ids.contains(id))
            .collect();
        let mut subset = pool.subset(&ids);
        subset.annotations.retain(|a| members.contains(&a.category_id));
        subset.categories = space.clone();
        tasks.push(OwodTask {
            index,
            group: group.clone(),
            space,
            dataset: subset,
        });
    }
    Ok(tasks)
}

/// The pool relabeled for evaluating a task: earlier and current classes are
/// known, the rest unknown.
pub fn owod_eval_dataset(pool: &Dataset, task: &OwodTask) -> Dataset {
    let mut ds = pool.clone();
    let known: BTreeSet<u64> = task.space.known_ids().iter().copied().collect();
    let extra: Vec<u64> = pool
        .annotations
        .iter()
        .map(|a| a.category_id)
        .filter(|id| !known.contains(id))
        .collect();
    ds.categories = task.space.with_extra_unknown(extra);
    ds
}

/// COCO 2017 detection categories.
pub const COCO_CATEGORIES: [(u64, &str); 80] = [
    (1, "person"),
    (2, "bicycle"),
    (3, "car"),
    (4, "motorcycle"),
    (5, "airplane"),
    (6, "bus"),
    (7, "train"),
    (8, "truck"),
    (9, "boat"),
    (10, "traffic light"),
    (11, "fire hydrant"),
    (13, "stop sign"),
    (14, "parking meter"),
    (15, "bench"),
    (16, "bird"),
    (17, "cat"),
    (18, "dog"),
    (19, "horse"),
    (20, "sheep"),
    (21, "cow"),
    (22, "elephant"),
    (23, "bear"),
    (24, "zebra"),
    (25, "giraffe"),
    (27, "backpack"),
    (28, "umbrella"),
    (31, "handbag"),
    (32, "tie"),
    (33, "suitcase"),
    (34, "frisbee"),
    (35, "skis"),
    (36, "snowboard"),
    (37, "sports ball"),
    (38, "kite"),
    (39, "baseball bat"),
    (40, "baseball glove"),
    (41, "skateboard"),
    (42, "surfboard"),
    (43, "tennis racket"),
    (44, "bottle"),
    (46, "wine glass"),
    (47, "cup"),
    (48, "fork"),
    (49, "knife"),
    (50, "spoon"),
    (51, "bowl"),
    (52, "banana"),
    (53, "apple"),
    (54, "sandwich"),
    (55, "orange"),
    (56, "broccoli"),
    (57, "carrot"),
    (58, "hot dog"),
    (59, "pizza"),
    (60, "donut"),
    (61, "cake"),
    (62, "chair"),
    (63, "couch"),
    (64, "potted plant"),
    (65, "bed"),
    (67, "dining table"),
    (70, "toilet"),
    (72, "tv"),
    (73, "laptop"),
    (74, "mouse"),
    (75, "remote"),
    (76, "keyboard"),
    (77, "cell phone"),
    (78, "microwave"),
    (79, "oven"),
    (80, "toaster"),
    (81, "sink"),
    (82, "refrigerator"),
    (84, "book"),
    (85, "clock"),
    (86, "vase"),
    (87, "scissors"),
    (88, "teddy bear"),
    (89, "hair drier"),
    (90, "toothbrush"),
];

pub fn coco_category_id(name: &str) -> Option<u64> {
    COCO_CATEGORIES.iter().find(|(_, n)| *n == name).map(|(id, _)| *id)
}

/// Group tables below are reconstructed from the published group names
/// (superclass lists) and can be overridden with a group file.
pub const GROUPS_PROVENANCE: &str = "reconstructed from group names";

const VOC_CLASSES: [&str; 20] = [
    "airplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "dining table",
    "dog",
    "horse",
    "motorcycle",
    "person",
    "potted plant",
    "sheep",
    "couch",
    "train",
    "tv",
];

type NamedGroup = (&'static str, &'static [&'static str]);

const MOWODB_GROUPS: [NamedGroup; 4] = [
    ("VOC classes", &VOC_CLASSES),
    (
        "outdoor, accessories, appliances, truck",
        &[
            "truck",
            "traffic light",
            "fire hydrant",
            "stop sign",
            "parking meter",
            "bench",
            "elephant",
            "bear",
            "zebra",
            "giraffe",
            "backpack",
            "umbrella",
            "handbag",
            "tie",
            "suitcase",
            "microwave",
            "oven",
            "toaster",
            "sink",
            "refrigerator",
        ],
    ),
    (
        "sports, food",
        &[
            "frisbee",
            "skis",
            "snowboard",
            "sports ball",
            "kite",
            "baseball bat",
            "baseball glove",
            "skateboard",
            "surfboard",
            "tennis racket",
            "banana",
            "apple",
            "sandwich",
            "orange",
            "broccoli",
            "carrot",
            "hot dog",
            "pizza",
            "donut",
            "cake",
        ],
    ),
    (
        "electronic, indoor, kitchen, furniture",
        &[
            "bed",
            "toilet",
            "laptop",
            "mouse",
            "remote",
            "keyboard",
            "cell phone",
            "book",
            "clock",
            "vase",
            "scissors",
            "teddy bear",
            "hair drier",
            "toothbrush",
            "wine glass",
            "cup",
            "fork",
            "knife",
            "spoon",
            "bowl",
        ],
    ),
];

const SOWODB_GROUPS: [NamedGroup; 4] = [
    (
        "animals, person, vehicles",
        &[
            "person",
            "bicycle",
            "car",
            "motorcycle",
            "airplane",
            "bus",
            "train",
            "truck",
            "boat",
            "bird",
            "cat",
            "dog",
            "horse",
            "sheep",
            "cow",
            "elephant",
            "bear",
            "zebra",
            "giraffe",
        ],
    ),
    (
        "outdoor, accessories, appliances, furniture",
        &[
            "traffic light",
            "fire hydrant",
            "stop sign",
            "parking meter",
            "bench",
            "chair",
            "couch",
            "potted plant",
            "bed",
            "dining table",
            "toilet",
            "backpack",
            "umbrella",
            "handbag",
            "tie",
            "suitcase",
            "microwave",
            "oven",
            "toaster",
            "sink",
            "refrigerator",
        ],
    ),
    (
        "sports, food",
        &[
            "frisbee",
            "skis",
            "snowboard",
            "sports ball",
            "kite",
            "baseball bat",
            "baseball glove",
            "skateboard",
            "surfboard",
            "tennis racket",
            "banana",
            "apple",
            "sandwich",
            "orange",
            "broccoli",
            "carrot",
            "hot dog",
            "pizza",
            "donut",
            "cake",
        ],
    ),
    (
        "electronic, indoor, kitchen",
        &[
            "tv",
            "laptop",
            "mouse",
            "remote",
            "keyboard",
            "cell phone",
            "book",
            "clock",
            "vase",
            "scissors",
            "teddy bear",
            "hair drier",
            "toothbrush",
            "bottle",
            "wine glass",
            "cup",
            "fork",
            "knife",
            "spoon",
            "bowl",
        ],
    ),
];

fn groups_from_names(table: &[NamedGroup]) -> Vec<SemanticGroup> {
    table
        .iter()
        .map(|(name, members)| SemanticGroup {
            name: name.to_string(),
            category_ids: members
                .iter()
                .map(|m| coco_category_id(m).expect("group member is a COCO class"))
                .collect(),
        })
        .collect()
}

/// The four semantic groups behind VOC-COCO-T1 (VOC first). They coincide
/// with the superclass-mixed OWOD task groups.
pub fn t1_groups() -> Vec<SemanticGroup> {
    OwodBenchmark::Mowodb.groups()
}

/// Names for the COCO ids, for dataset round trips.
pub fn coco_names() -> BTreeMap<u64, String> {
    COCO_CATEGORIES.iter().map(|(id, n)| (*id, n.to_string())).collect()
}
