use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

pub const ANNOTATION_COLUMNS: [&str; 6] = ["image_path", "xmin", "ymin", "xmax", "ymax", "source"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_path: String,
    pub bbox: BBox,
    pub source: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationSet {
    pub records: Vec<AnnotationRecord>,
    /// Rows skipped for unparsable numbers, reversed or zero-area boxes.
    pub dropped: usize,
}

impl AnnotationSet {
    /// Boxes grouped by image, ordered by image path.
    pub fn by_image(&self) -> BTreeMap<String, Vec<BBox>> {
        let mut out: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.image_path.clone()).or_default().push(r.bbox);
        }
        out
    }
}

/// Reads an annotation table with header
/// `image_path,xmin,ymin,xmax,ymax,source` (extra columns ignored).
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file)
}

pub fn parse_annotations(reader: impl std::io::Read) -> Result<AnnotationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(ANNOTATION_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut set = AnnotationSet::default();
    for row in rdr.records() {
        let row = row?;
        let num = |k: usize| row.get(idx[k]).and_then(|v| v.parse::<f64>().ok());
        let parsed = (|| {
            let b = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?).ok()?;
            (!b.is_degenerate()).then_some(b)
        })();
        match parsed {
            Some(bbox) => set.records.push(AnnotationRecord {
                image_path: row.get(idx[0]).unwrap_or_default().to_string(),
                bbox,
                source: row.get(idx[5]).unwrap_or_default().to_string(),
            }),
            None => set.dropped += 1,
        }
    }
    Ok(set)
}

/// Writes records in the annotation table format.
pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ANNOTATION_COLUMNS)?;
    for r in records {
        let b = r.bbox;
        w.write_record([
            r.image_path.clone(),
            b.x_min.to_string(),
            b.y_min.to_string(),
            b.x_max.to_string(),
            b.y_max.to_string(),
            r.source.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "image_path,xmin,ymin,xmax,ymax,source\n";

    #[test]
    fn examples() {
        let s =
            parse_annotations(format!("{HEADER}img1.png,10,10,20,20,neon\n").as_bytes()).unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.records[0].bbox.to_array(), [10.0, 10.0, 20.0, 20.0]);
        assert_eq!(s.records[0].source, "neon");

        let s = parse_annotations(
            format!("{HEADER}a.png,30,10,20,20,x\na.png,1,1,1,5,x\na.png,q,1,2,2,x\n").as_bytes(),
        )
        .unwrap();
        assert_eq!((s.records.len(), s.dropped), (0, 3));

        let s = parse_annotations(HEADER.as_bytes()).unwrap();
        assert_eq!(s, AnnotationSet::default());
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_annotations("image_path,xmin,ymin,xmax,source\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "ymax"));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        assert!(matches!(
            load_annotations(Path::new("/nonexistent/a.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let recs = vec![AnnotationRecord {
            image_path: "x.png".into(),
            bbox: BBox::new(1.5, 2.0, 3.0, 4.25).unwrap(),
            source: "synthetic".into(),
        }];
        write_annotations(&p, &recs).unwrap();
        let back = load_annotations(&p).unwrap();
        assert_eq!(back.records, recs);
        assert_eq!(back.by_image()["x.png"].len(), 1);
    }
}
