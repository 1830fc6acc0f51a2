//! File formats: COCO annotations, COCO result records, category-space
//! configs, proposals, label dumps, embeddings, split manifests and group
//! definitions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use osod_core::assign::Proposal;
use osod_core::metrics::EmbeddingRecord;
use osod_core::split::SemanticGroup;
use osod_core::taxonomy::{sort_detections, Annotation, CategorySpace, Dataset, Detection, ImageRecord};
use osod_core::BBox;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How annotations with a category outside the space are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Ingest {
    /// Reject them.
    #[default]
    Strict,
    /// Treat them as unknown.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub known_ids: Vec<u64>,
    #[serde(default)]
    pub unknown_source_ids: Vec<u64>,
    #[serde(default)]
    pub unknown_wire_id: Option<u64>,
}

impl SpaceConfig {
    pub fn build(&self) -> std::result::Result<CategorySpace, osod_core::taxonomy::TaxonomyError> {
        CategorySpace::new(
            self.known_ids.clone(),
            self.unknown_source_ids.iter().copied(),
            self.unknown_wire_id,
        )
    }

    pub fn from_space(space: &CategorySpace) -> Self {
        Self {
            known_ids: space.known_ids().to_vec(),
            unknown_source_ids: space.unknown_source_ids().iter().copied().collect(),
            unknown_wire_id: Some(space.unknown_wire_id()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub objectness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image_id: u64,
    pub proposal_index: usize,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub category_ids: Vec<u64>,
}

impl GroupFile {
    pub fn from_groups(groups: &[SemanticGroup]) -> Self {
        Self {
            note: None,
            groups: groups
                .iter()
                .map(|g| GroupEntry {
                    name: g.name.clone(),
                    category_ids: g.category_ids.clone(),
                })
                .collect(),
        }
    }

    pub fn into_groups(self) -> Vec<SemanticGroup> {
        self.groups
            .into_iter()
            .map(|g| SemanticGroup {
                name: g.name,
                category_ids: g.category_ids,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingLine {
    class: String,
    vector: Vec<f64>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| {
        if source.classify() == serde_json::error::Category::Data {
            Error::schema(path, source.to_string())
        } else {
            Error::Parse {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse(path, &read_text(path)?)
}

/// Reads either a JSON array or one JSON value per line.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('[') {
        return parse(path, &text);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse(path, l))
        .collect()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(Vec::new());
    for r in records {
        serde_json::to_writer(&mut out, r).expect("serializable record");
        out.write_all(b"\n").expect("in-memory write");
    }
    write_bytes(path, &out.into_inner().expect("in-memory buffer"))
}

pub fn load_space(path: &Path) -> Result<CategorySpace> {
    let cfg: SpaceConfig = read_json(path)?;
    Ok(cfg.build()?)
}

fn to_bbox(path: &Path, what: &str, id: u64, b: [f64; 4]) -> Result<BBox> {
    BBox::from_xywh(b[0], b[1], b[2], b[3]).map_err(|e| Error::schema(path, format!("{what} {id}: {e}")))
}

/// Converts a parsed COCO file into a validated dataset. Boxes are clipped to
/// the image when the image size is positive.
pub fn coco_to_dataset(path: &Path, file: &CocoFile, space: &CategorySpace, mode: Ingest) -> Result<Dataset> {
    let images: Vec<ImageRecord> = file
        .images
        .iter()
        .map(|i| ImageRecord {
            id: i.id,
            width: i.width,
            height: i.height,
        })
        .collect();
    let sizes: BTreeMap<u64, (f64, f64)> = images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    let mut space = space.clone();
    if mode == Ingest::Lenient {
        let outside: BTreeSet<u64> = file
            .annotations
            .iter()
            .map(|a| a.category_id)
            .filter(|&c| space.classify(c).is_none())
            .collect();
        space = space.with_extra_unknown(outside);
    }
    let mut annotations = Vec::with_capacity(file.annotations.len());
    for a in &file.annotations {
        let mut bbox = to_bbox(path, "annotation", a.id, a.bbox)?;
        if let Some(&(w, h)) = sizes.get(&a.image_id) {
            if w > 0.0 && h > 0.0 {
                bbox = bbox.clip(w, h);
            }
        }
        annotations.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox,
            iscrowd: a.iscrowd != 0,
        });
    }
    let names = file.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    Ok(Dataset::new(images, annotations, space, names)?)
}

pub fn load_coco(path: &Path) -> Result<CocoFile> {
    read_json(path)
}

pub fn load_annotations(path: &Path, space: &CategorySpace, mode: Ingest) -> Result<Dataset> {
    coco_to_dataset(path, &load_coco(path)?, space, mode)
}

pub fn dataset_to_coco(ds: &Dataset) -> CocoFile {
    let space = &ds.categories;
    let mut ids: BTreeSet<u64> = ds.category_names.keys().copied().collect();
    ids.extend(space.known_ids());
    ids.extend(space.unknown_source_ids());
    CocoFile {
        images: ds
            .images
            .iter()
            .map(|i| CocoImage {
                id: i.id,
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations: ds
            .annotations
            .iter()
            .map(|a| CocoAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_xywh(),
                iscrowd: a.iscrowd as u8,
            })
            .collect(),
        categories: ids
            .into_iter()
            .map(|id| CocoCategory {
                id,
                name: ds
                    .category_names
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| format!("category_{id}")),
            })
            .collect(),
    }
}

pub fn save_annotations(path: &Path, ds: &Dataset) -> Result<()> {
    write_json(path, &dataset_to_coco(ds))
}

pub fn records_to_detections(path: &Path, records: &[ResultRecord], space: &CategorySpace) -> Result<Vec<Detection>> {
    let mut dets = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let slot = space.slot_for_wire_id(r.category_id).ok_or_else(|| {
            Error::schema(
                path,
                format!("record {i}: category id {} is not in the category space", r.category_id),
            )
        })?;
        let bbox = to_bbox(path, "record", i as u64, r.bbox)?;
        dets.push(Detection::new(r.image_id, slot, bbox, r.score)?);
    }
    sort_detections(&mut dets);
    Ok(dets)
}

/// Loads a COCO results array, sorted stably by image id then descending
/// score.
pub fn load_detections(path: &Path, space: &CategorySpace) -> Result<Vec<Detection>> {
    let records: Vec<ResultRecord> = read_json(path)?;
    records_to_detections(path, &records, space)
}

pub fn detections_to_records(dets: &[Detection], space: &CategorySpace) -> Vec<ResultRecord> {
    dets.iter()
        .map(|d| ResultRecord {
            image_id: d.image_id,
            category_id: space.wire_id(d.slot),
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect()
}

pub fn save_detections(path: &Path, dets: &[Detection], space: &CategorySpace) -> Result<()> {
    let mut text = serde_json::to_string(&detections_to_records(dets, space)).expect("records serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn load_proposals(path: &Path) -> Result<Vec<Proposal>> {
    let records: Vec<ProposalRecord> = read_records(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let bbox = to_bbox(path, "proposal", i as u64, r.bbox)?;
            Ok(Proposal::new(r.image_id, bbox, r.objectness)?)
        })
        .collect()
}

pub fn load_groups(path: &Path) -> Result<Vec<SemanticGroup>> {
    let file: GroupFile = read_json(path)?;
    Ok(file.into_groups())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let lines: Vec<EmbeddingLine> = read_records(path)?;
    Ok(lines
        .into_iter()
        .map(|l| EmbeddingRecord {
            class: l.class,
            vector: l.vector,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> CategorySpace {
        CategorySpace::new(vec![1, 2], [3], None).unwrap()
    }

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_minimal_coco() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.json",
            r#"{"images":[{"id":1,"width":100,"height":80}],
                "annotations":[{"id":5,"image_id":1,"category_id":1,"bbox":[10,10,20,20]},
                               {"id":6,"image_id":1,"category_id":3,"bbox":[90,70,30,30]}],
                "categories":[{"id":1,"name":"a"},{"id":2,"name":"b"},{"id":3,"name":"c"}]}"#,
        );
        let ds = load_annotations(&p, &space(), Ingest::Strict).unwrap();
        assert_eq!(ds.annotations.len(), 2);
        assert_eq!(ds.annotations[0].bbox, BBox::new(10., 10., 30., 30.));
        // Clipped to the image.
        assert_eq!(ds.annotations[1].bbox, BBox::new(90., 70., 100., 80.));
        assert_eq!(ds.slot_of(&ds.annotations[1]), Some(osod_core::ClassSlot::Unknown));
    }

    #[test]
    fn missing_annotations_key_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.json", r#"{"images":[],"categories":[]}"#);
        let err = load_annotations(&p, &space(), Ingest::Strict).unwrap_err();
        assert_eq!(err.kind(), "schema");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn strict_rejects_and_lenient_remaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.json",
            r#"{"images":[{"id":1,"width":10,"height":10}],
                "annotations":[{"id":1,"image_id":1,"category_id":9,"bbox":[0,0,1,1]}],
                "categories":[]}"#,
        );
        assert_eq!(
            load_annotations(&p, &space(), Ingest::Strict).unwrap_err().kind(),
            "validation"
        );
        let ds = load_annotations(&p, &space(), Ingest::Lenient).unwrap();
        assert_eq!(ds.categories.classify(9), Some(osod_core::ClassSlot::Unknown));
    }

    #[test]
    fn detections_sorted_and_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.json",
            r#"[{"image_id":2,"category_id":1,"bbox":[0,0,1,1],"score":0.5},
                {"image_id":1,"category_id":3,"bbox":[0,0,1,1],"score":0.2},
                {"image_id":1,"category_id":2,"bbox":[0,0,1,1],"score":0.9}]"#,
        );
        let dets = load_detections(&p, &space()).unwrap();
        assert_eq!(
            dets.iter().map(|d| (d.image_id, d.score)).collect::<Vec<_>>(),
            [(1, 0.9), (1, 0.2), (2, 0.5)]
        );
        assert!(dets[1].is_unknown());
        let empty = write(dir.path(), "e.json", "[]");
        assert!(load_detections(&empty, &space()).unwrap().is_empty());
        let bad = write(
            dir.path(),
            "b.json",
            r#"[{"image_id":1,"category_id":1,"bbox":[0,0,1,1],"score":1.5}]"#,
        );
        assert!(load_detections(&bad, &space()).is_err());
        let wire = space().unknown_wire_id();
        let w = write(
            dir.path(),
            "w.json",
            &format!(r#"[{{"image_id":1,"category_id":{wire},"bbox":[0,0,1,1],"score":0.3}}]"#),
        );
        assert!(load_detections(&w, &space()).unwrap()[0].is_unknown());
        let stray = write(
            dir.path(),
            "s.json",
            r#"[{"image_id":1,"category_id":42,"bbox":[0,0,1,1],"score":0.3}]"#,
        );
        assert!(load_detections(&stray, &space()).is_err());
    }

    #[test]
    fn proposals_accept_array_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(
            dir.path(),
            "a.json",
            r#"[{"image_id":1,"bbox":[0,0,2,2],"objectness":0.4}]"#,
        );
        let b = write(
            dir.path(),
            "b.jsonl",
            "{\"image_id\":1,\"bbox\":[0,0,2,2],\"objectness\":0.4}\n\n{\"image_id\":2,\"bbox\":[1,1,2,2],\"objectness\":1.0}\n",
        );
        assert_eq!(load_proposals(&a).unwrap().len(), 1);
        assert_eq!(load_proposals(&b).unwrap().len(), 2);
        let bad = write(
            dir.path(),
            "c.jsonl",
            "{\"image_id\":1,\"bbox\":[0,0,2,2],\"objectness\":1.2}\n",
        );
        assert_eq!(load_proposals(&bad).unwrap_err().kind(), "assign");
    }
}
