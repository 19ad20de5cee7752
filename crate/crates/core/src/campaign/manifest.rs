//! Dataset manifests: images, instances, boxes and optional ground truth.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::cropgeom::GeometryProfile;
use crate::maskcore::{rle_decode, BBox, Mask, RleMask};
use crate::rgb::RgbImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub path: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: String,
    pub image_id: String,
    pub class: String,
    /// `[x, y, w, h]` in image pixels.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_rle: Option<RleMask>,
    /// COCO-style polygons: each a flat `[x0, y0, x1, y1, ...]` list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_polygon: Option<Vec<Vec<f64>>>,
}

impl InstanceEntry {
    pub fn has_gt(&self) -> bool {
        self.gt_rle.is_some() || self.gt_polygon.is_some()
    }

    /// Image-space ground truth. RLE wins over polygons when both are given.
    pub fn gt_mask(&self, width: usize, height: usize) -> Result<Option<Mask>, CampaignError> {
        if let Some(r) = &self.gt_rle {
            if (r.w, r.h) != (width, height) {
                return Err(CampaignError::Manifest(format!(
                    "instance {}: gt_rle is {}x{}, image is {width}x{height}",
                    self.id, r.w, r.h
                )));
            }
            return Ok(Some(rle_decode(r)?));
        }
        Ok(self
            .gt_polygon
            .as_ref()
            .map(|polys| rasterize_polygon(polys, width, height)))
    }

    pub fn bbox(&self) -> BBox {
        BBox::from(self.bbox)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ImageEntry>,
    pub instances: Vec<InstanceEntry>,
}

impl Manifest {
    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_index(&self) -> HashMap<&str, &ImageEntry> {
        self.images.iter().map(|i| (i.id.as_str(), i)).collect()
    }
}

/// Rasterizes polygons by even-odd fill at pixel centres; the polygons of one
/// instance are unioned.
pub fn rasterize_polygon(polys: &[Vec<f64>], width: usize, height: usize) -> Mask {
    let mut m = Mask::new(width, height);
    for poly in polys {
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        for y in 0..height {
            let py = y as f64 + 0.5;
            // crossings of the scanline through pixel centres
            let mut xs: Vec<f64> = Vec::new();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= py) != (y1 <= py) {
                    xs.push(x0 + (py - y0) / (y1 - y0) * (x1 - x0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
                let end = (pair[1] - 0.5).ceil().min(width as f64).max(0.0) as usize;
                for x in start..end {
                    m.set(x, y, true);
                }
            }
        }
    }
    m
}

/// Loads images referenced by a manifest.
pub trait ImageStore: Send + Sync {
    fn load(&self, image: &ImageEntry) -> Result<RgbImage, CampaignError>;

    fn exists(&self, image: &ImageEntry) -> bool;
}

/// Images on disk, with relative paths resolved against `root`.
#[derive(Debug, Clone)]
pub struct DirImageStore {
    pub root: PathBuf,
}

impl DirImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolve(&self, image: &ImageEntry) -> PathBuf {
        let p = Path::new(&image.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ImageStore for DirImageStore {
    #[cfg(feature = "io")]
    fn load(&self, image: &ImageEntry) -> Result<RgbImage, CampaignError> {
        let path = self.resolve(image);
        let img = RgbImage::load(&path).map_err(|e| CampaignError::Manifest(format!("{}: {e}", path.display())))?;
        if (img.width(), img.height()) != (image.width, image.height) {
            return Err(CampaignError::Manifest(format!(
                "{}: image is {}x{}, manifest says {}x{}",
                path.display(),
                img.width(),
                img.height(),
                image.width,
                image.height
            )));
        }
        Ok(img)
    }

    #[cfg(not(feature = "io"))]
    fn load(&self, image: &ImageEntry) -> Result<RgbImage, CampaignError> {
        Err(CampaignError::Manifest(format!(
            "{}: built without image decoding",
            self.resolve(image).display()
        )))
    }

    fn exists(&self, image: &ImageEntry) -> bool {
        self.resolve(image).is_file()
    }
}

/// In-memory images keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageStore {
    pub images: BTreeMap<String, RgbImage>,
}

impl ImageStore for MemoryImageStore {
    fn load(&self, image: &ImageEntry) -> Result<RgbImage, CampaignError> {
        self.images
            .get(&image.id)
            .cloned()
            .ok_or_else(|| CampaignError::Manifest(format!("no image {}", image.id)))
    }

    fn exists(&self, image: &ImageEntry) -> bool {
        self.images.contains_key(&image.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedInstance {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub accepted: usize,
    pub rejects: Vec<RejectedInstance>,
    /// Instances dropped by the profile's size filter.
    pub filtered: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, CampaignError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| CampaignError::Manifest(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CampaignError::Manifest(format!("{}: {e}", path.display())))
}

/// Checks a manifest and keeps the instances usable under `profile`. Missing
/// images and malformed entries go to the rejects list instead of failing.
pub fn import_manifest(
    manifest: &Manifest,
    store: &dyn ImageStore,
    profile: GeometryProfile,
) -> (Manifest, ImportReport) {
    let mut report = ImportReport::default();
    if manifest.instances.is_empty() {
        report.warnings.push("manifest has no instances".into());
    }
    let images = manifest.image_index();
    let mut missing: HashMap<&str, bool> = HashMap::new();
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::new();
    for inst in &manifest.instances {
        let reject = |reason: String| RejectedInstance {
            id: inst.id.clone(),
            reason,
        };
        if !seen.insert(inst.id.as_str()) {
            report.rejects.push(reject("duplicate instance id".into()));
            continue;
        }
        let Some(img) = images.get(inst.image_id.as_str()) else {
            report.rejects.push(reject(format!("unknown image {}", inst.image_id)));
            continue;
        };
        if *missing.entry(img.id.as_str()).or_insert_with(|| !store.exists(img)) {
            report.rejects.push(reject(format!("missing image file {}", img.path)));
            continue;
        }
        let b = inst.bbox();
        if !b.is_valid() {
            report.rejects.push(reject(format!("invalid box {:?}", inst.bbox)));
            continue;
        }
        if let Err(e) = inst.gt_mask(img.width, img.height) {
            report.rejects.push(reject(e.to_string()));
            continue;
        }
        if !profile.accepts_size(b.w, b.h) {
            report.filtered.push(inst.id.clone());
            continue;
        }
        kept.push(inst.clone());
    }
    report.accepted = kept.len();
    let used: std::collections::HashSet<&str> = kept.iter().map(|i| i.image_id.as_str()).collect();
    let out = Manifest {
        images: manifest
            .images
            .iter()
            .filter(|i| used.contains(i.id.as_str()))
            .cloned()
            .collect(),
        instances: kept,
    };
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_square_area() {
        let m = rasterize_polygon(&[vec![0.0, 0.0, 10.0, 0.0, 10.0, 10.0, 0.0, 10.0]], 20, 20);
        assert_eq!(m.count(), 100);
        assert!(m.get(0, 0) && m.get(9, 9) && !m.get(10, 5));
    }

    #[test]
    fn polygon_matches_point_in_polygon_oracle() {
        let poly = vec![2.3, 1.1, 17.8, 4.2, 12.1, 18.7, 6.4, 9.9, 1.2, 15.5];
        let m = rasterize_polygon(std::slice::from_ref(&poly), 20, 20);
        let pts: Vec<(f64, f64)> = poly.chunks(2).map(|c| (c[0], c[1])).collect();
        for y in 0..20 {
            for x in 0..20 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                assert_eq!(m.get(x, y), inside, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn polygon_with_hole_by_even_odd() {
        // a self-overlapping ring: outer square then inner square traced in one path
        let poly = vec![
            0.0, 0.0, 10.0, 0.0, 10.0, 10.0, 0.0, 10.0, 0.0, 0.0, 3.0, 3.0, 3.0, 7.0, 7.0, 7.0, 7.0, 3.0, 3.0, 3.0,
        ];
        let m = rasterize_polygon(&[poly], 10, 10);
        assert!(!m.get(5, 5));
        assert_eq!(m.count(), 100 - 16);
    }

    fn manifest_with(w: f64, h: f64) -> Manifest {
        Manifest {
            images: vec![ImageEntry {
                id: "im".into(),
                path: "im.png".into(),
                width: 200,
                height: 200,
            }],
            instances: vec![InstanceEntry {
                id: "a".into(),
                image_id: "im".into(),
                class: "thing".into(),
                bbox: [10.0, 10.0, w, h],
                gt_rle: None,
                gt_polygon: None,
            }],
        }
    }

    fn store() -> MemoryImageStore {
        let mut s = MemoryImageStore::default();
        s.images.insert("im".into(), RgbImage::new(200, 200));
        s
    }

    #[test]
    fn size_filter_by_profile() {
        let (out, rep) = import_manifest(&manifest_with(50.0, 50.0), &store(), GeometryProfile::Blueprint);
        assert!(out.instances.is_empty());
        assert_eq!(rep.filtered, vec!["a".to_string()]);
        let (out, _) = import_manifest(&manifest_with(90.0, 45.0), &store(), GeometryProfile::Campaign);
        assert_eq!(out.instances.len(), 1);
        let (out, _) = import_manifest(&manifest_with(90.0, 45.0), &store(), GeometryProfile::Blueprint);
        assert!(out.instances.is_empty());
    }

    #[test]
    fn missing_image_is_rejected_not_fatal() {
        let (out, rep) = import_manifest(
            &manifest_with(100.0, 100.0),
            &MemoryImageStore::default(),
            GeometryProfile::Blueprint,
        );
        assert!(out.instances.is_empty());
        assert_eq!(rep.rejects.len(), 1);
        assert!(rep.rejects[0].reason.contains("missing image"));
    }

    #[test]
    fn empty_manifest_warns() {
        let (out, rep) = import_manifest(&Manifest::default(), &store(), GeometryProfile::Blueprint);
        assert!(out.instances.is_empty());
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn manifest_json_shape() {
        let j = r#"{"images":[{"id":"i","path":"p.png","width":4,"height":4}],
            "instances":[{"id":"x","image_id":"i","class":"c","bbox":[0,0,2,2],
            "gt_rle":{"w":4,"h":4,"counts":[0,2,14]}}]}"#;
        let m: Manifest = serde_json::from_str(j).unwrap();
        assert_eq!(m.instances[0].gt_mask(4, 4).unwrap().unwrap().count(), 2);
    }
}
