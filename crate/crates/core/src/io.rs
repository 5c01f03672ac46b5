//! On-disk formats: PNG frame directories, annotation and track files,
//! embeddings, configs, traces and reports.
//!
//! JSON files carry `"format_version": 1`; track CSVs start with `# v1`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::{validate_annotations_for, AnnotationSet, Frame, KeypointDef, Label, Point2, TrackPoint, TrackSet, VideoClip, Violation};
use crate::tracker::AppearanceEmbedding;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAME_PATTERN: &str = "frame_{:05}.png";
pub const TRACKS_CSV_HEADER: &str = "frame,keypoint_id,x,y,visible,confidence";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    (digits.len() == 5 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

fn location(path: &Path) -> String {
    path.display().to_string()
}

/// Writes through a sibling temp file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::NotFound(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

/// Deserializes JSON, reporting failures with the JSON path of the
/// offending value.
pub fn from_json_slice<T: DeserializeOwned>(bytes: &[u8], source: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let loc = if path == "." { format!("{source}: $") } else { format!("{source}: $.{path}") };
        Error::format(loc, e.inner().to_string())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json_slice(&read_file(path)?, &location(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn check_version(found: u32, source: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::format(
            format!("{source}: $.format_version"),
            format!("unsupported format version {found}, expected {FORMAT_VERSION}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- video

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(default)]
    pub video_id: String,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frame_count: usize,
    #[serde(default = "default_pattern")]
    pub frame_pattern: String,
    pub channels: usize,
}

fn default_pattern() -> String {
    FRAME_PATTERN.to_string()
}

impl Manifest {
    pub fn for_clip(clip: &VideoClip) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            video_id: clip.id().to_string(),
            width: clip.width(),
            height: clip.height(),
            fps: clip.fps(),
            frame_count: clip.num_frames(),
            frame_pattern: default_pattern(),
            channels: clip.channels(),
        }
    }
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let color = if frame.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&frame.to_u8(), frame.width() as u32, frame.height() as u32, color)
        .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
    Ok(out)
}

/// Decodes an 8-bit gray or RGB PNG. An alpha channel, if present, is
/// dropped.
pub fn decode_png(bytes: &[u8], name: &str) -> Result<Frame> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(name, format!("cannot decode PNG: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(b) => Frame::from_u8(w, h, 1, b.as_raw()),
        image::DynamicImage::ImageLumaA8(_) => Frame::from_u8(w, h, 1, img.to_luma8().as_raw()),
        image::DynamicImage::ImageRgb8(b) => Frame::from_u8(w, h, 3, b.as_raw()),
        image::DynamicImage::ImageRgba8(_) => Frame::from_u8(w, h, 3, img.to_rgb8().as_raw()),
        other => Err(Error::format(name, format!("unsupported pixel format {:?}, expected 8-bit gray or RGB", other.color()))),
    }
}

/// Writes `manifest.json` plus one PNG per frame.
pub fn save_video(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in clip.frames().iter().enumerate() {
        write_atomic(&dir.join(frame_file_name(i)), &encode_png(frame)?)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &Manifest::for_clip(clip))
}

/// Builds a clip from decoded frames, checking them against the manifest.
pub fn clip_from_frames(manifest: &Manifest, frames: Vec<(String, Frame)>) -> Result<VideoClip> {
    let mut out = Vec::with_capacity(frames.len());
    for (name, f) in frames {
        if f.width() != manifest.width || f.height() != manifest.height {
            return Err(Error::format(
                name,
                format!(
                    "geometry {}x{} does not match manifest {}x{}",
                    f.width(),
                    f.height(),
                    manifest.width,
                    manifest.height
                ),
            ));
        }
        if f.channels() != manifest.channels {
            return Err(Error::format(
                name,
                format!("{} channels, manifest declares {}", f.channels(), manifest.channels),
            ));
        }
        out.push(f);
    }
    let id = if manifest.video_id.is_empty() { "video" } else { &manifest.video_id };
    VideoClip::new(id, manifest.fps, out)
}

/// Indices must run 0..n without holes.
pub fn check_frame_indices(indices: &[usize], source: &str) -> Result<()> {
    for (expected, &found) in indices.iter().enumerate() {
        if found != expected {
            return Err(Error::format(source, format!("gap at index {expected}")));
        }
    }
    Ok(())
}

pub fn load_video(dir: &Path) -> Result<VideoClip> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::NotFound(manifest_path));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let source = location(dir);
    check_version(manifest.format_version, &location(&manifest_path))?;
    if manifest.frame_pattern != FRAME_PATTERN {
        return Err(Error::format(
            format!("{}: $.frame_pattern", location(&manifest_path)),
            format!("only '{FRAME_PATTERN}' is supported"),
        ));
    }
    let mut indices: Vec<usize> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| parse_frame_index(&e.file_name().to_string_lossy()))
        .collect();
    indices.sort_unstable();
    check_frame_indices(&indices, &source)?;
    if indices.len() != manifest.frame_count {
        let msg = if indices.len() < manifest.frame_count {
            format!("gap at index {}", indices.len())
        } else {
            format!("{} frames on disk, manifest declares {}", indices.len(), manifest.frame_count)
        };
        return Err(Error::format(source, msg));
    }
    let mut frames = Vec::with_capacity(indices.len());
    for i in indices {
        let name = frame_file_name(i);
        let bytes = read_file(&dir.join(&name))?;
        frames.push((name.clone(), decode_png(&bytes, &name)?));
    }
    clip_from_frames(&manifest, frames)
}

// ---------------------------------------------------------- annotations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueryRecord {
    keypoint_id: usize,
    x: f64,
    y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationFile {
    #[serde(default = "default_version")]
    format_version: u32,
    video_id: String,
    keypoints: Vec<KeypointDef>,
    query: Vec<QueryRecord>,
    #[serde(default)]
    labels: Vec<Label>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

pub fn annotations_to_json(ann: &AnnotationSet) -> serde_json::Value {
    let file = AnnotationFile {
        format_version: FORMAT_VERSION,
        video_id: ann.video_id.clone(),
        keypoints: ann.keypoints.clone(),
        query: ann
            .query
            .iter()
            .enumerate()
            .map(|(i, p)| QueryRecord {
                keypoint_id: i,
                x: p.x,
                y: p.y,
            })
            .collect(),
        labels: ann.labels.clone(),
    };
    serde_json::to_value(file).expect("annotation file serializes")
}

/// Parses an annotation document without enforcing model invariants.
/// Query problems come back as violations; a missing query point is NaN.
pub fn parse_annotations(bytes: &[u8], source: &str) -> Result<(AnnotationSet, Vec<Violation>)> {
    let file: AnnotationFile = from_json_slice(bytes, source)?;
    check_version(file.format_version, source)?;
    let n = file.keypoints.len();
    let mut violations = Vec::new();
    let mut query = vec![None; n];
    for (i, q) in file.query.iter().enumerate() {
        let loc = format!("query[{i}]");
        if q.keypoint_id >= n {
            violations.push(Violation::new(loc, format!("unknown keypoint id {}", q.keypoint_id)));
        } else if query[q.keypoint_id].replace(Point2::new(q.x, q.y)).is_some() {
            violations.push(Violation::new(loc, format!("duplicate query for keypoint {}", q.keypoint_id)));
        }
    }
    for k in query.iter().enumerate().filter(|(_, q)| q.is_none()).map(|(k, _)| k) {
        violations.push(Violation::new("query", format!("missing query for keypoint {k}")));
    }
    let ann = AnnotationSet {
        video_id: file.video_id,
        keypoints: file.keypoints,
        query: query.into_iter().map(|q| q.unwrap_or(Point2::new(f64::NAN, f64::NAN))).collect(),
        labels: file.labels,
    };
    Ok((ann, violations))
}

/// Parses and structurally validates an annotation document. Geometry
/// checks need the video and are left to `validate_annotations`.
pub fn annotations_from_json(bytes: &[u8], source: &str) -> Result<AnnotationSet> {
    let (ann, mut violations) = parse_annotations(bytes, source)?;
    if violations.is_empty() {
        // Infinite bounds leave only the structural invariants.
        violations = validate_annotations_for(usize::MAX, usize::MAX, usize::MAX, &ann);
    }
    match violations.first() {
        Some(v) => Err(Error::format(format!("{source}: $.{}", v.location), v.message.clone())),
        None => Ok(ann),
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    annotations_from_json(&read_file(path)?, &location(path))
}

pub fn save_annotations(ann: &AnnotationSet, path: &Path) -> Result<()> {
    write_json(path, &annotations_to_json(ann))
}

// --------------------------------------------------------------- tracks

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame: usize,
    pub keypoint_id: usize,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
    pub confidence: f64,
}

/// Rows in canonical order: frames ascending, then keypoints.
pub fn track_rows(tracks: &TrackSet) -> Vec<TrackRow> {
    let mut rows = Vec::with_capacity(tracks.points().len());
    for t in 0..tracks.num_frames() {
        for k in 0..tracks.num_keypoints() {
            let p = tracks.get(k, t);
            rows.push(TrackRow {
                frame: t,
                keypoint_id: k,
                x: p.x,
                y: p.y,
                visible: p.visible,
                confidence: p.confidence,
            });
        }
    }
    rows
}

/// Rebuilds a track set from rows in any order.
pub fn tracks_from_rows(video_id: &str, mut rows: Vec<TrackRow>, source: &str) -> Result<TrackSet> {
    if rows.is_empty() {
        return Err(Error::format(source, "no track rows"));
    }
    rows.sort_by_key(|r| (r.frame, r.keypoint_id));
    let n = rows.iter().map(|r| r.keypoint_id).max().expect("non-empty") + 1;
    let t = rows.iter().map(|r| r.frame).max().expect("non-empty") + 1;
    if rows.len() != n * t {
        return Err(Error::format(
            source,
            format!("{} rows, expected {} ({n} keypoints x {t} frames)", rows.len(), n * t),
        ));
    }
    if let Some(w) = rows.windows(2).find(|w| (w[0].frame, w[0].keypoint_id) == (w[1].frame, w[1].keypoint_id)) {
        return Err(Error::format(
            source,
            format!("duplicate row for frame {} keypoint {}", w[0].frame, w[0].keypoint_id),
        ));
    }
    let mut points = vec![TrackPoint::new(Point2::default(), false, 0.0); n * t];
    for r in rows {
        points[r.keypoint_id * t + r.frame] = TrackPoint {
            x: r.x,
            y: r.y,
            visible: r.visible,
            confidence: r.confidence,
        };
    }
    TrackSet::new(video_id, n, t, points).map_err(|e| Error::format(source, e.to_string()))
}

pub fn tracks_to_csv(tracks: &TrackSet) -> String {
    let mut out = String::from("# v1\n");
    if !tracks.video_id.is_empty() {
        out.push_str(&format!("# video_id={}\n", tracks.video_id));
    }
    out.push_str(TRACKS_CSV_HEADER);
    out.push('\n');
    for r in track_rows(tracks) {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{:.6}\n",
            r.frame, r.keypoint_id, r.x, r.y, r.visible, r.confidence
        ));
    }
    out
}

pub fn tracks_from_csv(text: &str, source: &str) -> Result<TrackSet> {
    let mut lines = text.lines().peekable();
    if lines.next().map(str::trim) != Some("# v1") {
        return Err(Error::format(source, "missing '# v1' version line"));
    }
    let mut video_id = String::new();
    let mut body = String::new();
    for line in lines {
        if let Some(c) = line.strip_prefix('#') {
            if let Some(id) = c.trim().strip_prefix("video_id=") {
                video_id = id.to_string();
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| Error::format(source, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != TRACKS_CSV_HEADER {
        return Err(Error::format(source, format!("header must be '{TRACKS_CSV_HEADER}'")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<TrackRow>().enumerate() {
        // +1 for the header, +1 for one-based numbering; comments excluded
        rows.push(rec.map_err(|e| Error::format(format!("{source}: row {}", i + 1), e.to_string()))?);
    }
    tracks_from_rows(&video_id, rows, source)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub format_version: u32,
    pub video_id: String,
    pub num_keypoints: usize,
    pub num_frames: usize,
    pub points: Vec<TrackRow>,
}

impl TrackFile {
    pub fn new(tracks: &TrackSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            video_id: tracks.video_id.clone(),
            num_keypoints: tracks.num_keypoints(),
            num_frames: tracks.num_frames(),
            points: track_rows(tracks),
        }
    }

    pub fn into_tracks(self, source: &str) -> Result<TrackSet> {
        check_version(self.format_version, source)?;
        let tracks = tracks_from_rows(&self.video_id, self.points, source)?;
        if (tracks.num_keypoints(), tracks.num_frames()) != (self.num_keypoints, self.num_frames) {
            return Err(Error::format(
                source,
                format!(
                    "points cover {} keypoints x {} frames, header declares {} x {}",
                    tracks.num_keypoints(),
                    tracks.num_frames(),
                    self.num_keypoints,
                    self.num_frames
                ),
            ));
        }
        Ok(tracks)
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Saves CSV, or JSON when the path ends in `.json`.
pub fn save_tracks(tracks: &TrackSet, path: &Path) -> Result<()> {
    if is_json(path) {
        write_json(path, &TrackFile::new(tracks))
    } else {
        write_atomic(path, tracks_to_csv(tracks).as_bytes())
    }
}

pub fn load_tracks(path: &Path) -> Result<TrackSet> {
    let bytes = read_file(path)?;
    let source = location(path);
    if is_json(path) {
        from_json_slice::<TrackFile>(&bytes, &source)?.into_tracks(&source)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::format(&source, "not UTF-8 text"))?;
        tracks_from_csv(&text, &source)
    }
}

// ------------------------------------------------------------ embedding

const EMBEDDING_MAGIC: &[u8; 8] = b"TTOEMBED";
const EMBEDDING_HEADER_LEN: usize = 8 + 4 * 4 + 8;

/// Binary layout, little-endian: magic, version u32, N u32, Δ u32, d u32,
/// feature-config digest u64, then `N·(2Δ+1)²·d` f64 values row-major.
pub fn embedding_to_bytes(emb: &AppearanceEmbedding, cfg: &FeatureConfig) -> Result<Vec<u8>> {
    if emb.patch_len() != cfg.patch_len() {
        return Err(Error::shape(format!(
            "embedding patch length {} does not match config ({})",
            emb.patch_len(),
            cfg.patch_len()
        )));
    }
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + emb.values().len() * 8);
    out.extend_from_slice(EMBEDDING_MAGIC);
    for v in [FORMAT_VERSION, emb.num_keypoints() as u32, cfg.delta as u32, cfg.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.digest().to_le_bytes());
    for v in emb.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes an embedding and checks it was produced under `cfg`.
pub fn embedding_from_bytes(bytes: &[u8], cfg: &FeatureConfig, source: &str) -> Result<AppearanceEmbedding> {
    if bytes.len() < EMBEDDING_HEADER_LEN || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::format(source, "not an embedding file"));
    }
    let mut rd = &bytes[8..];
    let mut u32_at = || -> u32 {
        let mut b = [0u8; 4];
        rd.read_exact(&mut b).expect("header length checked");
        u32::from_le_bytes(b)
    };
    let (version, n, delta, channels) = (u32_at(), u32_at() as usize, u32_at() as usize, u32_at() as usize);
    if version != FORMAT_VERSION {
        return Err(Error::format(source, format!("unsupported embedding version {version}")));
    }
    let digest = u64::from_le_bytes(bytes[24..32].try_into().expect("header length checked"));
    if delta != cfg.delta || channels != cfg.channels || digest != cfg.digest() {
        return Err(Error::format(
            source,
            format!(
                "embedding was built with delta={delta}, d={channels}, digest {digest:016x}; \
                 current feature config has delta={}, d={}, digest {:016x}",
                cfg.delta,
                cfg.channels,
                cfg.digest()
            ),
        ));
    }
    let body = &bytes[EMBEDDING_HEADER_LEN..];
    let expected = n * cfg.patch_len() * 8;
    if body.len() != expected {
        return Err(Error::format(
            source,
            format!("payload has {} bytes, expected {expected}", body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    AppearanceEmbedding::new(cfg.patch_len(), values).map_err(|e| Error::format(source, e.to_string()))
}

pub fn save_embedding(emb: &AppearanceEmbedding, cfg: &FeatureConfig, path: &Path) -> Result<()> {
    write_atomic(path, &embedding_to_bytes(emb, cfg)?)
}

pub fn load_embedding(path: &Path, cfg: &FeatureConfig) -> Result<AppearanceEmbedding> {
    embedding_from_bytes(&read_file(path)?, cfg, &location(path))
}

// -------------------------------------------------- versioned documents

/// Wraps any serializable payload with a `format_version` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            body,
        }
    }
}

pub fn save_versioned<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(path, &Versioned::new(value))
}

pub fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let v: Versioned<T> = read_json(path)?;
    check_version(v.format_version, &location(path))?;
    Ok(v.body)
}

/// Every scene file written by `save_scene`.
#[derive(Debug, Clone)]
pub struct ScenePaths {
    pub video: PathBuf,
    pub ground_truth: PathBuf,
    pub annotations: PathBuf,
}

impl ScenePaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            video: dir.join("video"),
            ground_truth: dir.join("gt_tracks.csv"),
            annotations: dir.join("annotations.json"),
        }
    }
}

pub fn save_scene(dir: &Path, clip: &VideoClip, gt: &TrackSet, ann: &AnnotationSet) -> Result<ScenePaths> {
    let paths = ScenePaths::under(dir);
    save_video(clip, &paths.video)?;
    save_tracks(gt, &paths.ground_truth)?;
    save_annotations(ann, &paths.annotations)?;
    Ok(paths)
}

/// Frame files keyed by index, for callers that receive frames by name.
pub fn frames_by_index(named: Vec<(String, Vec<u8>)>) -> Result<BTreeMap<usize, (String, Vec<u8>)>> {
    let mut out = BTreeMap::new();
    for (name, bytes) in named {
        let base = name.rsplit(['/', '\\']).next().unwrap_or(&name).to_string();
        let idx = parse_frame_index(&base).ok_or_else(|| {
            Error::format(&name, "frame names must look like frame_00000.png")
        })?;
        if out.insert(idx, (base, bytes)).is_some() {
            return Err(Error::format(&name, format!("duplicate frame index {idx}")));
        }
    }
    Ok(out)
}
