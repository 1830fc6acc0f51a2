#![allow(dead_code)]

use std::path::{Path, PathBuf};

use osod::io::{self, SpaceConfig};
use osod_core::taxonomy::{Annotation, CategorySpace, ClassSlot, Dataset, Detection, ImageRecord};
use osod_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 480.0;

pub fn random_box(rng: &mut impl Rng) -> BBox {
    let w = rng.gen_range(20.0..200.0);
    let h = rng.gen_range(20.0..200.0);
    let x = rng.gen_range(0.0..WIDTH - w);
    let y = rng.gen_range(0.0..HEIGHT - h);
    BBox::new(x, y, x + w, y + h)
}

pub struct Scene<'a> {
    pub images: usize,
    pub known_ids: &'a [u64],
    pub unknown_ids: &'a [u64],
    pub known_per_image: usize,
    pub unknown_per_image: usize,
    pub seed: u64,
}

/// Images with ids `1..=images`, each holding the requested number of known
/// and unknown objects.
pub fn synthetic_dataset(scene: &Scene) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut images = Vec::with_capacity(scene.images);
    let mut annotations = Vec::new();
    for img in 1..=scene.images as u64 {
        images.push(ImageRecord {
            id: img,
            width: WIDTH,
            height: HEIGHT,
        });
        let mut push = |rng: &mut ChaCha8Rng, cat: u64| {
            let id = annotations.len() as u64 + 1;
            annotations.push(Annotation {
                id,
                image_id: img,
                category_id: cat,
                bbox: random_box(rng),
                iscrowd: false,
            });
        };
        for _ in 0..scene.known_per_image {
            let c = scene.known_ids[rng.gen_range(0..scene.known_ids.len())];
            push(&mut rng, c);
        }
        for _ in 0..scene.unknown_per_image {
            let c = scene.unknown_ids[rng.gen_range(0..scene.unknown_ids.len())];
            push(&mut rng, c);
        }
    }
    let space = CategorySpace::new(scene.known_ids.to_vec(), scene.unknown_ids.iter().copied(), None).unwrap();
    let names = scene
        .known_ids
        .iter()
        .chain(scene.unknown_ids)
        .map(|&id| (id, format!("class{id}")))
        .collect();
    Dataset::new(images, annotations, space, names).unwrap()
}

/// One detection per annotation, on the right slot, with random scores.
pub fn perfect_detections(ds: &Dataset, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ds.annotations
        .iter()
        .map(|a| {
            let slot = ds.categories.classify(a.category_id).unwrap();
            Detection::new(a.image_id, slot, a.bbox, rng.gen_range(0.5..1.0)).unwrap()
        })
        .collect()
}

/// Jittered copies of ground truth with occasional wrong classes plus pure
/// clutter, `per_image` detections per image.
pub fn noisy_detections(ds: &Dataset, per_image: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = ds.categories.num_known();
    let by_image = ds.annotations_by_image();
    let mut dets = Vec::with_capacity(by_image.len() * per_image);
    for (img, anns) in &by_image {
        for _ in 0..per_image {
            let slot = if rng.gen_bool(0.15) {
                ClassSlot::Unknown
            } else {
                ClassSlot::Known(rng.gen_range(0..k))
            };
            let bbox = if !anns.is_empty() && rng.gen_bool(0.7) {
                let a = anns[rng.gen_range(0..anns.len())];
                let s = rng.gen_range(-8.0..8.0);
                a.bbox.translate(s, -s / 2.0).clip(WIDTH, HEIGHT)
            } else {
                random_box(&mut rng)
            };
            let slot = match (rng.gen_bool(0.5), anns.first()) {
                (true, Some(a)) => ds.categories.classify(a.category_id).unwrap(),
                _ => slot,
            };
            dets.push(Detection::new(*img, slot, bbox, rng.gen_range(0.0..1.0)).unwrap());
        }
    }
    dets
}

pub struct Fixture {
    pub annotations: PathBuf,
    pub detections: PathBuf,
    pub space: PathBuf,
}

pub fn write_fixture(dir: &Path, ds: &Dataset, dets: &[Detection]) -> Fixture {
    let f = Fixture {
        annotations: dir.join("annotations.json"),
        detections: dir.join("detections.json"),
        space: dir.join("space.json"),
    };
    io::save_annotations(&f.annotations, ds).unwrap();
    io::save_detections(&f.detections, dets, &ds.categories).unwrap();
    io::write_json(&f.space, &SpaceConfig::from_space(&ds.categories)).unwrap();
    f
}

pub fn osod_bin() -> &'static str {
    env!("CARGO_BIN_EXE_osod")
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).unwrap();
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
