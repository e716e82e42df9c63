use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::scene_graph::{BBox, ImageId, ObjectId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One source/target/instruction triple. Serialized as one JSON object per
/// manifest line, fields in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_id: ImageId,
    pub source_path: String,
    pub target_path: String,
    pub instruction: String,
    pub object_id: ObjectId,
    pub object_name: String,
    pub object_bbox: BBox,
    pub mask_path: String,
    pub split: Split,
}

pub fn write_manifest(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| ForgeError::parse(path, e))?;
        out.push(b'\n');
    }
    let mut file = File::create(path).map_err(|e| ForgeError::io(path, e))?;
    file.write_all(&out).map_err(|e| ForgeError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path).map_err(|e| ForgeError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ForgeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| ForgeError::parse(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(records)
}

pub type SplitMap = BTreeMap<ImageId, Split>;

pub fn load_split_map(path: &Path) -> Result<SplitMap> {
    let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ForgeError::parse(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub source_images: usize,
    pub target_images: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub train: SplitCounts,
    pub test: SplitCounts,
    /// Images missing from the split map, labelled train.
    pub defaulted_images: usize,
}

/// Label every record from `split_map`; unknown images go to train.
pub fn assign_splits(records: &mut [DatasetRecord], split_map: &SplitMap) -> SplitSummary {
    let mut defaulted = BTreeSet::new();
    for r in records.iter_mut() {
        r.split = match split_map.get(&r.image_id) {
            Some(&s) => s,
            None => {
                defaulted.insert(r.image_id.clone());
                Split::Train
            }
        };
    }
    let mut summary = SplitSummary {
        defaulted_images: defaulted.len(),
        ..Default::default()
    };
    for split in [Split::Train, Split::Test] {
        let subset: Vec<_> = records.iter().filter(|r| r.split == split).collect();
        let counts = SplitCounts {
            source_images: subset.iter().map(|r| &r.image_id).collect::<BTreeSet<_>>().len(),
            target_images: subset.iter().map(|r| &r.target_path).collect::<BTreeSet<_>>().len(),
            pairs: subset.len(),
        };
        match split {
            Split::Train => summary.train = counts,
            Split::Test => summary.test = counts,
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(image: &str, object: &str) -> DatasetRecord {
        DatasetRecord {
            image_id: image.into(),
            source_path: format!("images/{image}.png"),
            target_path: format!("targets/{image}/{object}.png"),
            instruction: "remove the kite".into(),
            object_id: object.into(),
            object_name: "kite".into(),
            object_bbox: BBox::new(0, 0, 1, 1),
            mask_path: format!("masks/{image}/{object}.png"),
            split: Split::Train,
        }
    }

    #[test]
    fn split_counts() {
        let mut records = vec![
            record("1", "a"),
            record("1", "b"),
            record("2", "a"),
            record("3", "a"),
            record("4", "a"),
            record("5", "a"),
        ];
        let map: SplitMap = [
            ("1", Split::Train),
            ("2", Split::Train),
            ("3", Split::Train),
            ("4", Split::Test),
            ("5", Split::Test),
        ]
        .into_iter()
        .map(|(k, v)| (ImageId::from(k), v))
        .collect();
        let s = assign_splits(&mut records, &map);
        assert_eq!(s.defaulted_images, 0);
        assert_eq!(
            s.train,
            SplitCounts {
                source_images: 3,
                target_images: 4,
                pairs: 4
            }
        );
        assert_eq!(
            s.test,
            SplitCounts {
                source_images: 2,
                target_images: 2,
                pairs: 2
            }
        );
        assert_eq!(records[4].split, Split::Test);
    }

    #[test]
    fn unknown_images_default_to_train() {
        let mut records = vec![record("1", "a"), record("9", "a"), record("9", "b")];
        let map: SplitMap = [(ImageId::from("1"), Split::Test)].into();
        let s = assign_splits(&mut records, &map);
        assert_eq!(s.defaulted_images, 1);
        assert_eq!(s.train.pairs, 2);
        assert_eq!(s.test.pairs, 1);
    }

    #[test]
    fn manifest_round_trip_and_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let records = vec![record("1", "a"), record("2", "b")];
        write_manifest(&records, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"image_id\":\"1\",\"source_path\":"));
        assert!(text.lines().next().unwrap().ends_with("\"split\":\"train\"}"));
        assert_eq!(read_manifest(&path).unwrap(), records);
    }
}
