//! Depth rasters and per-object representative depth.
//!
//! Rasters hold normalized inverse depth in `[0, 1]` (1 = nearest), one
//! little-endian `f32` per pixel in row-major order, with a JSON sidecar
//! `{width, height, camera, frame_id}`. On disk a frame's rasters live at
//! `<depth_dir>/<frame_id>/<CAMERA>.bin` next to `<CAMERA>.json`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::tag::{IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::dataset::{BBox, Camera, Corpus, Frame, KeyObjectInfo, ObjectId, Split};
use crate::par;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sidecar {path}: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("raster holds {actual} values but sidecar declares {width}x{height}")]
    SizeMismatch {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("raster byte length {0} is not a multiple of 4")]
    TruncatedFloat(usize),
    #[error("pixel {index} has value {value}, expected a finite value in [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("region is empty after clipping to the {width}x{height} raster")]
    EmptyRegion { width: usize, height: usize },
    #[error("center ({x}, {y}) lies outside the {width}x{height} raster")]
    CenterOutside {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("window size must be odd and at least 1, got {0}")]
    WindowSize(usize),
    #[error("percentile must lie in (0, 100], got {0}")]
    Percentile(f64),
    #[error("depth value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("invalid depth bins: {0}")]
    Bins(String),
    #[error("depth index line {line}: {source}")]
    IndexLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub width: usize,
    pub height: usize,
    pub camera: Camera,
    pub frame_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub camera: Camera,
    pub frame_id: String,
}

impl DepthRaster {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f32>,
        camera: Camera,
        frame_id: impl Into<String>,
    ) -> Result<Self, DepthError> {
        if values.len() != width * height {
            return Err(DepthError::SizeMismatch {
                width,
                height,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(DepthError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            values,
            camera,
            frame_id: frame_id.into(),
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn sidecar(&self) -> RasterSidecar {
        RasterSidecar {
            width: self.width,
            height: self.height,
            camera: self.camera,
            frame_id: self.frame_id.clone(),
        }
    }

    /// Writes the `.bin` payload and `.json` sidecar.
    pub fn save(&self, binary_path: &Path, sidecar_path: &Path) -> std::io::Result<()> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(binary_path, bytes)?;
        std::fs::write(sidecar_path, serde_json::to_vec(&self.sidecar())?)
    }

    /// Gathers pixel values over the half-open rectangle `[x0, x1) x [y0, y1)`.
    fn region(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            out.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x1]);
        }
        out
    }
}

pub fn load_depth_raster(
    binary_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<DepthRaster, DepthError> {
    let (binary_path, sidecar_path) = (binary_path.as_ref(), sidecar_path.as_ref());
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| DepthError::Io { path, source }
    };
    let sidecar_bytes = std::fs::read(sidecar_path).map_err(io(sidecar_path))?;
    let sidecar: RasterSidecar =
        serde_json::from_slice(&sidecar_bytes).map_err(|source| DepthError::Sidecar {
            path: sidecar_path.display().to_string(),
            source,
        })?;
    let bytes = std::fs::read(binary_path).map_err(io(binary_path))?;
    if bytes.len() % 4 != 0 {
        return Err(DepthError::TruncatedFloat(bytes.len()));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DepthRaster::new(
        sidecar.width,
        sidecar.height,
        values,
        sidecar.camera,
        sidecar.frame_id,
    )
}

/// Paths of the raster for one frame and camera under `depth_dir`.
pub fn raster_paths(depth_dir: &Path, frame_id: &str, camera: Camera) -> (PathBuf, PathBuf) {
    let dir = depth_dir.join(frame_id);
    (
        dir.join(format!("{camera}.bin")),
        dir.join(format!("{camera}.json")),
    )
}

/// Nearest-rank percentile: the element at index `ceil(p/100 * n) - 1` of
/// the ascending order. Reorders `values`.
pub fn nearest_rank(values: &mut [f32], p: f64) -> Result<f32, DepthError> {
    check_percentile(p)?;
    let n = values.len();
    assert!(n > 0, "nearest_rank on an empty region");
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    let index = rank.clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(index, f32::total_cmp);
    Ok(*v)
}

fn check_percentile(p: f64) -> Result<(), DepthError> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(DepthError::Percentile(p))
    }
}

/// Aggregate depth over a pixel region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionDepth {
    pub value: f32,
    pub pixel_count: usize,
}

/// Percentile over the pixels of `bbox` (raster pixel units).
///
/// The box is snapped outward to whole pixels (`floor` of the minimum, `ceil`
/// of the maximum, exclusive) and clipped to the raster.
pub fn bbox_depth_percentile(
    raster: &DepthRaster,
    bbox: &BBox,
    p: f64,
) -> Result<RegionDepth, DepthError> {
    check_percentile(p)?;
    let clip = |v: f64, limit: usize| v.clamp(0.0, limit as f64) as usize;
    let x0 = clip(bbox.x_min.floor(), raster.width);
    let x1 = clip(bbox.x_max.ceil(), raster.width);
    let y0 = clip(bbox.y_min.floor(), raster.height);
    let y1 = clip(bbox.y_max.ceil(), raster.height);
    if x1 <= x0 || y1 <= y0 {
        return Err(DepthError::EmptyRegion {
            width: raster.width,
            height: raster.height,
        });
    }
    let mut region = raster.region(x0, x1, y0, y1);
    let pixel_count = region.len();
    Ok(RegionDepth {
        value: nearest_rank(&mut region, p)?,
        pixel_count,
    })
}

/// Inclusive pixel bounds of a `size`x`size` window centered on the rounded
/// center, clipped at the raster border.
pub fn window_bounds(
    raster: &DepthRaster,
    center: (f64, f64),
    size: usize,
) -> Result<(usize, usize, usize, usize), DepthError> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(DepthError::WindowSize(size));
    }
    let (x, y) = center;
    let (w, h) = (raster.width as f64, raster.height as f64);
    if !(x >= 0.0 && x <= w && y >= 0.0 && y <= h) || raster.width == 0 || raster.height == 0 {
        return Err(DepthError::CenterOutside {
            x,
            y,
            width: raster.width,
            height: raster.height,
        });
    }
    // a center on the far edge (x == width) belongs to the last pixel
    let cx = (x.round() as usize).min(raster.width - 1);
    let cy = (y.round() as usize).min(raster.height - 1);
    let half = size / 2;
    Ok((
        cx.saturating_sub(half),
        (cx + half).min(raster.width - 1),
        cy.saturating_sub(half),
        (cy + half).min(raster.height - 1),
    ))
}

/// Percentile over the window around `center` (raster pixel units).
pub fn window_depth(
    raster: &DepthRaster,
    center: (f64, f64),
    size: usize,
    p: f64,
) -> Result<RegionDepth, DepthError> {
    check_percentile(p)?;
    let (x0, x1, y0, y1) = window_bounds(raster, center, size)?;
    let mut region = raster.region(x0, x1 + 1, y0, y1 + 1);
    let pixel_count = region.len();
    Ok(RegionDepth {
        value: nearest_rank(&mut region, p)?,
        pixel_count,
    })
}

/// Ordered `(threshold, label)` pairs; the first bin whose threshold is at
/// most the value wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DepthBin>", into = "Vec<DepthBin>")]
pub struct DepthBins(Vec<DepthBin>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBin {
    pub threshold: f64,
    pub label: String,
}

impl DepthBins {
    /// Thresholds must be strictly decreasing and the last one at most 0 so
    /// every value in `[0, 1]` gets a label.
    pub fn new(bins: Vec<DepthBin>) -> Result<Self, DepthError> {
        if bins.is_empty() {
            return Err(DepthError::Bins("no bins".into()));
        }
        if bins.windows(2).any(|w| w[1].threshold >= w[0].threshold) {
            return Err(DepthError::Bins("thresholds must be strictly decreasing".into()));
        }
        if bins.last().is_some_and(|b| b.threshold > 0.0) {
            return Err(DepthError::Bins("last threshold must be <= 0".into()));
        }
        if bins.iter().any(|b| b.label.trim().is_empty()) {
            return Err(DepthError::Bins("empty label".into()));
        }
        Ok(Self(bins))
    }

    pub fn bins(&self) -> &[DepthBin] {
        &self.0
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|b| b.label.as_str())
    }
}

impl Default for DepthBins {
    fn default() -> Self {
        let bin = |threshold, label: &str| DepthBin {
            threshold,
            label: label.to_string(),
        };
        Self(vec![bin(0.66, "very close"), bin(0.33, "close"), bin(0.0, "far")])
    }
}

impl TryFrom<Vec<DepthBin>> for DepthBins {
    type Error = DepthError;

    fn try_from(v: Vec<DepthBin>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DepthBins> for Vec<DepthBin> {
    fn from(b: DepthBins) -> Self {
        b.0
    }
}

pub fn depth_to_text(value: f64, bins: &DepthBins) -> Result<&str, DepthError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(DepthError::ValueOutOfRange(value));
    }
    Ok(bins
        .0
        .iter()
        .find(|b| b.threshold <= value)
        .map(|b| b.label.as_str())
        .expect("last bin threshold is <= 0"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Box region on the training split, tag-centered window otherwise.
    #[default]
    Auto,
    BBox,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub percentile: f64,
    pub window_size: usize,
    pub bins: DepthBins,
    pub mode: AggregationMode,
    /// Resolution the tag and bbox coordinates refer to; rasters of any
    /// other size are sampled at proportionally scaled coordinates.
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            percentile: 75.0,
            window_size: 11,
            bins: DepthBins::default(),
            mode: AggregationMode::Auto,
            image_width: IMAGE_WIDTH,
            image_height: IMAGE_HEIGHT,
        }
    }
}

impl DepthConfig {
    pub fn validate(&self) -> Result<(), DepthError> {
        check_percentile(self.percentile)?;
        if self.window_size == 0 || self.window_size.is_multiple_of(2) {
            return Err(DepthError::WindowSize(self.window_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDepth {
    pub object_id: ObjectId,
    pub representative: f32,
    pub label: String,
    pub pixel_count: usize,
}

/// One line of the depth index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthIndexRecord {
    pub scene_id: String,
    pub frame_id: String,
    pub object_id: ObjectId,
    pub representative: f32,
    pub label: String,
    pub pixel_count: usize,
}

/// Representative depth per (frame, object).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DepthIndex {
    records: Vec<DepthIndexRecord>,
    lookup: HashMap<(String, ObjectId), usize>,
}

impl DepthIndex {
    pub fn from_records(records: Vec<DepthIndexRecord>) -> Self {
        let lookup = records
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.frame_id.clone(), r.object_id.clone()), i))
            .collect();
        Self { records, lookup }
    }

    pub fn get(&self, frame_id: &str, object_id: &ObjectId) -> Option<&DepthIndexRecord> {
        self.lookup
            .get(&(frame_id.to_string(), object_id.clone()))
            .map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[DepthIndexRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, DepthError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|source| DepthError::Io {
                path: "depth index".into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|source| DepthError::IndexLine { line: i + 1, source })?,
            );
        }
        Ok(Self::from_records(records))
    }

    pub fn load(path: &Path) -> Result<Self, DepthError> {
        let f = std::fs::File::open(path).map_err(|source| DepthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Objects for which no depth could be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthMiss {
    pub frame_id: String,
    pub object_id: ObjectId,
    pub reason: String,
}

/// Representative depth of one key object.
pub fn object_depth(
    raster: &DepthRaster,
    object: &KeyObjectInfo,
    use_bbox: bool,
    config: &DepthConfig,
) -> Result<ObjectDepth, DepthError> {
    let sx = raster.width as f64 / config.image_width;
    let sy = raster.height as f64 / config.image_height;
    let region = match object.bbox {
        Some(bbox) if use_bbox => {
            bbox_depth_percentile(raster, &bbox.scaled(sx, sy), config.percentile)?
        }
        _ => window_depth(
            raster,
            (object.tag.center_x * sx, object.tag.center_y * sy),
            config.window_size,
            config.percentile,
        )?,
    };
    let label = depth_to_text(region.value as f64, &config.bins)?.to_string();
    Ok(ObjectDepth {
        object_id: object.tag.object_id.clone(),
        representative: region.value,
        label,
        pixel_count: region.pixel_count,
    })
}

fn frame_depths(
    frame: &Frame,
    split: Split,
    depth_dir: &Path,
    config: &DepthConfig,
) -> (Vec<DepthIndexRecord>, Vec<DepthMiss>) {
    let use_bbox = match config.mode {
        AggregationMode::Auto => split == Split::Train,
        AggregationMode::BBox => true,
        AggregationMode::Window => false,
    };
    let mut rasters: BTreeMap<Camera, Result<DepthRaster, String>> = BTreeMap::new();
    let mut records = Vec::new();
    let mut misses = Vec::new();
    for (id, object) in &frame.key_objects {
        let camera = object.tag.camera;
        let raster = rasters.entry(camera).or_insert_with(|| {
            let (bin, side) = raster_paths(depth_dir, &frame.frame_id, camera);
            load_depth_raster(bin, side).map_err(|e| e.to_string())
        });
        let result = match raster {
            Ok(r) => object_depth(r, object, use_bbox, config).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        match result {
            Ok(d) => records.push(DepthIndexRecord {
                scene_id: frame.scene_id.clone(),
                frame_id: frame.frame_id.clone(),
                object_id: d.object_id,
                representative: d.representative,
                label: d.label,
                pixel_count: d.pixel_count,
            }),
            Err(reason) => misses.push(DepthMiss {
                frame_id: frame.frame_id.clone(),
                object_id: id.clone(),
                reason,
            }),
        }
    }
    (records, misses)
}

/// Computes the depth index for every key object of the corpus. Frames are
/// processed in parallel; output follows corpus order.
pub fn build_depth_index(
    corpus: &Corpus,
    depth_dir: &Path,
    config: &DepthConfig,
) -> (DepthIndex, Vec<DepthMiss>) {
    let per_frame = par::map(&corpus.frames, |f| {
        frame_depths(f, corpus.split, depth_dir, config)
    });
    let mut records = Vec::new();
    let mut misses = Vec::new();
    for (r, m) in per_frame {
        records.extend(r);
        misses.extend(m);
    }
    (DepthIndex::from_records(records), misses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize, values: Vec<f32>) -> DepthRaster {
        DepthRaster::new(w, h, values, Camera::Front, "f1").unwrap()
    }

    fn bbox(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> BBox {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    #[test]
    fn loads_byte_level_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("r.bin");
        let side = dir.path().join("r.json");
        let bytes: Vec<u8> = [0.1f32, 0.2, 0.3, 0.4]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        std::fs::write(&bin, bytes).unwrap();
        std::fs::write(
            &side,
            r#"{"width":2,"height":2,"camera":"CAM_FRONT","frame_id":"f1"}"#,
        )
        .unwrap();
        let r = load_depth_raster(&bin, &side).unwrap();
        assert_eq!(r.values, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(r.get(1, 0), 0.2);
        assert_eq!(r.get(0, 1), 0.3);
        assert_eq!(r.camera, Camera::Front);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("r.bin");
        let side = dir.path().join("r.json");
        std::fs::write(
            &side,
            r#"{"width":2,"height":2,"camera":"CAM_FRONT","frame_id":"f1"}"#,
        )
        .unwrap();

        let three: Vec<u8> = [0.1f32, 0.2, 0.3].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, three).unwrap();
        assert!(matches!(
            load_depth_raster(&bin, &side),
            Err(DepthError::SizeMismatch { actual: 3, .. })
        ));

        let bad: Vec<u8> = [0.1f32, 1.5, 0.3, 0.4].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, bad).unwrap();
        match load_depth_raster(&bin, &side) {
            Err(DepthError::OutOfRange { index, value }) => {
                assert_eq!(index, 1);
                assert_eq!(value, 1.5);
            }
            other => panic!("{other:?}"),
        }

        let nan: Vec<u8> = [0.1f32, f32::NAN, 0.3, 0.4].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, nan).unwrap();
        assert!(matches!(load_depth_raster(&bin, &side), Err(DepthError::OutOfRange { index: 1, .. })));

        std::fs::write(&side, r#"{"width":2,"height":2,"camera":"CAM_FRONT"}"#).unwrap();
        let e = load_depth_raster(&bin, &side).unwrap_err();
        assert!(e.to_string().contains("frame_id"), "{e}");
    }

    #[test]
    fn bbox_percentile_fixtures() {
        let r = raster(4, 4, vec![0.5; 16]);
        assert_eq!(bbox_depth_percentile(&r, &bbox(0.3, 1.2, 3.7, 2.0), 75.0).unwrap().value, 0.5);

        let r = raster(2, 2, vec![0.4, 0.1, 0.3, 0.2]);
        let d = bbox_depth_percentile(&r, &bbox(0.0, 0.0, 2.0, 2.0), 75.0).unwrap();
        assert_eq!(d.value, 0.3);
        assert_eq!(d.pixel_count, 4);

        let values: Vec<f32> = (1..=100).rev().map(|i| i as f32 / 100.0).collect();
        let r = raster(10, 10, values);
        let d = bbox_depth_percentile(&r, &bbox(0.0, 0.0, 10.0, 10.0), 75.0).unwrap();
        assert_eq!(d.value, 0.75);
        assert_eq!(d.pixel_count, 100);
    }

    #[test]
    fn bbox_is_snapped_and_clipped() {
        let r = raster(4, 4, vec![0.5; 16]);
        // floor/ceil snapping: [0.5, 1.5] covers pixels 0 and 1
        assert_eq!(bbox_depth_percentile(&r, &bbox(0.5, 0.5, 1.5, 1.5), 50.0).unwrap().pixel_count, 4);
        assert_eq!(bbox_depth_percentile(&r, &bbox(-5.0, -5.0, 50.0, 1.0), 50.0).unwrap().pixel_count, 4);
        assert!(matches!(
            bbox_depth_percentile(&r, &bbox(5.0, 5.0, 9.0, 9.0), 50.0),
            Err(DepthError::EmptyRegion { .. })
        ));
    }

    #[test]
    fn window_clipping_counts() {
        let r = raster(64, 64, vec![0.9; 64 * 64]);
        assert_eq!(window_bounds(&r, (5.0, 5.0), 11).unwrap(), (0, 10, 0, 10));
        assert_eq!(window_depth(&r, (5.0, 5.0), 11, 75.0).unwrap().pixel_count, 121);
        assert_eq!(window_bounds(&r, (0.0, 0.0), 11).unwrap(), (0, 5, 0, 5));
        assert_eq!(window_depth(&r, (0.0, 0.0), 11, 75.0).unwrap().pixel_count, 36);
        assert_eq!(window_depth(&r, (63.0, 63.0), 11, 75.0).unwrap().pixel_count, 36);
        assert_eq!(window_depth(&r, (30.2, 40.7), 11, 75.0).unwrap().value, 0.9);
        assert!(matches!(
            window_depth(&r, (64.5, 3.0), 11, 75.0),
            Err(DepthError::CenterOutside { .. })
        ));
        assert!(matches!(window_depth(&r, (3.0, 3.0), 4, 75.0), Err(DepthError::WindowSize(4))));
    }

    #[test]
    fn window_of_one_is_the_rounded_pixel() {
        let values: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let r = raster(4, 4, values);
        assert_eq!(window_depth(&r, (1.6, 2.4), 1, 75.0).unwrap().value, r.get(2, 2));
    }

    #[test]
    fn default_bins() {
        let bins = DepthBins::default();
        assert_eq!(depth_to_text(0.9, &bins).unwrap(), "very close");
        assert_eq!(depth_to_text(0.5, &bins).unwrap(), "close");
        assert_eq!(depth_to_text(0.33, &bins).unwrap(), "close");
        assert_eq!(depth_to_text(0.0, &bins).unwrap(), "far");
        assert_eq!(depth_to_text(1.0, &bins).unwrap(), "very close");
        assert!(depth_to_text(1.2, &bins).is_err());
    }

    #[test]
    fn bins_validation() {
        let bin = |t, l: &str| DepthBin {
            threshold: t,
            label: l.into(),
        };
        assert!(DepthBins::new(vec![bin(0.3, "a"), bin(0.5, "b")]).is_err());
        assert!(DepthBins::new(vec![bin(0.5, "a"), bin(0.2, "b")]).is_err());
        assert!(DepthBins::new(vec![bin(0.5, "near"), bin(0.0, "far")]).is_ok());
        let parsed: DepthBins =
            serde_json::from_str(r#"[{"threshold":0.5,"label":"near"},{"threshold":0.0,"label":"far"}]"#)
                .unwrap();
        assert_eq!(parsed.labels().collect::<Vec<_>>(), ["near", "far"]);
    }

    #[test]
    fn percentile_bounds() {
        let mut v = vec![0.2f32, 0.1];
        assert!(nearest_rank(&mut v, 0.0).is_err());
        assert!(nearest_rank(&mut v, 100.5).is_err());
        assert_eq!(nearest_rank(&mut v, 100.0).unwrap(), 0.2);
        assert_eq!(nearest_rank(&mut v, 0.1).unwrap(), 0.1);
    }

    #[test]
    fn index_round_trips_through_jsonl() {
        let idx = DepthIndex::from_records(vec![DepthIndexRecord {
            scene_id: "s".into(),
            frame_id: "f".into(),
            object_id: ObjectId::new("c1").unwrap(),
            representative: 0.25,
            label: "far".into(),
            pixel_count: 121,
        }]);
        let mut buf = Vec::new();
        idx.write_jsonl(&mut buf).unwrap();
        let back = DepthIndex::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.get("f", &ObjectId::new("c1").unwrap()).unwrap().label, "far");
    }
}
