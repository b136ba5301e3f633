//! JSON-lines dataset and proposal manifests.
//!
//! Dataset lines look like
//!
//! ```text
//! {"image": "img/0.ppm", "regions": [{"category": "red", "bbox": [3, 4, 20, 18]},
//!                                    {"category": "blue", "mask_path": "m/0.pgm"}]}
//! ```
//!
//! with optional `"width"`/`"height"` (read from the image header when
//! absent) and `"map"` (a precomputed attention map). A line of the form
//! `{"categories": [...]}` declares the category list; without it the list
//! is every category seen, in order of first appearance.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{BBox, Geometry, Mask, Proposal, Region};
use crate::error::{Error, Result};
use crate::io::{pnm_dims, read_mask};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub image: PathBuf,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
    /// Categories to evaluate on this image.
    pub targets: Vec<String>,
    pub map: Option<PathBuf>,
}

impl Entry {
    /// Categories annotated in the image, in order of first appearance.
    pub fn present_categories(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.regions {
            if !out.contains(&r.category) {
                out.push(r.category.clone());
            }
        }
        out
    }

    pub fn regions_of(&self, category: &str) -> Vec<&Region> {
        self.regions.iter().filter(|r| r.category == category).collect()
    }

    pub fn boxes_of(&self, category: &str) -> Vec<BBox> {
        self.regions_of(category)
            .iter()
            .filter_map(|r| match &r.geometry {
                Geometry::BBox(b) => Some(*b),
                Geometry::Mask(m) => m.bbox(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<Entry>,
    pub categories: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    category: String,
    bbox: Option<BBox>,
    mask_path: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLine {
    Categories {
        categories: Vec<String>,
    },
    Entry {
        image: String,
        #[serde(default)]
        regions: Vec<RawRegion>,
        width: Option<usize>,
        height: Option<usize>,
        map: Option<String>,
    },
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_mask(path: &Path) -> Result<Mask> {
    let (h, w, bits) = read_mask(&read_file(path)?)?;
    Mask::new(h, w, bits)
}

impl DatasetManifest {
    /// Parses a JSON-lines manifest; relative paths resolve against `base`.
    pub fn parse_jsonl(text: &str, base: &Path) -> Result<Self> {
        let mut declared: Option<Vec<String>> = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ctx = |e: Error| Error::Parse(format!("manifest line {}: {e}", lineno + 1));
            let raw: RawLine = serde_json::from_str(line).map_err(|e| ctx(Error::Parse(e.to_string())))?;
            match raw {
                RawLine::Categories { categories } => declared = Some(categories),
                RawLine::Entry {
                    image,
                    regions,
                    width,
                    height,
                    map,
                } => entries.push(Self::entry(base, image, regions, width, height, map).map_err(ctx)?),
            }
        }
        let mut categories = declared.unwrap_or_default();
        let fixed = !categories.is_empty();
        for e in &entries {
            for c in e.present_categories() {
                if !categories.contains(&c) {
                    if fixed {
                        return Err(Error::Parse(format!(
                            "{}: undeclared category `{c}`",
                            e.image.display()
                        )));
                    }
                    categories.push(c);
                }
            }
        }
        Ok(Self { entries, categories })
    }

    fn entry(
        base: &Path,
        image: String,
        raw_regions: Vec<RawRegion>,
        width: Option<usize>,
        height: Option<usize>,
        map: Option<String>,
    ) -> Result<Entry> {
        let image = base.join(image);
        let (width, height) = match (width, height) {
            (Some(w), Some(h)) => (w, h),
            _ => {
                let (h, w) = pnm_dims(&read_file(&image)?)?;
                (w, h)
            }
        };
        let mut regions = Vec::with_capacity(raw_regions.len());
        for r in raw_regions {
            let geometry = match (r.bbox, r.mask_path) {
                (Some(b), None) => {
                    if !b.fits(width, height) {
                        return Err(Error::shape(format!("box {b:?} exceeds {width}x{height} image")));
                    }
                    Geometry::BBox(b)
                }
                (None, Some(p)) => {
                    let m = load_mask(&base.join(p))?;
                    if (m.width, m.height) != (width, height) {
                        return Err(Error::shape(format!(
                            "mask is {}x{}, image is {width}x{height}",
                            m.width, m.height
                        )));
                    }
                    Geometry::Mask(m)
                }
                _ => return Err(Error::Parse("region needs exactly one of bbox and mask_path".into())),
            };
            regions.push(Region {
                category: r.category,
                geometry,
            });
        }
        let mut entry = Entry {
            image,
            width,
            height,
            regions,
            targets: Vec::new(),
            map: map.map(|m| base.join(m)),
        };
        entry.targets = entry.present_categories();
        Ok(entry)
    }
}

/// Candidate segments for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub image: PathBuf,
    pub segments: Vec<Proposal>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSegment {
    BBox(BBox),
    Mask { mask_path: String },
}

#[derive(Deserialize)]
struct RawProposals {
    image: String,
    segments: Vec<RawSegment>,
}

impl ProposalSet {
    /// Parses `{"image": ..., "segments": [[x0, y0, x1, y1] | {"mask_path": ...}]}`
    /// lines.
    pub fn parse_jsonl(text: &str, base: &Path) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ctx = |e: String| Error::Parse(format!("proposal line {}: {e}", lineno + 1));
            let raw: RawProposals = serde_json::from_str(line).map_err(|e| ctx(e.to_string()))?;
            let segments = raw
                .segments
                .into_iter()
                .map(|s| match s {
                    RawSegment::BBox(b) => Ok(Proposal::BBox(b)),
                    RawSegment::Mask { mask_path } => load_mask(&base.join(mask_path)).map(Proposal::Mask),
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| ctx(e.to_string()))?;
            out.push(ProposalSet {
                image: base.join(raw.image),
                segments,
            });
        }
        Ok(out)
    }
}
