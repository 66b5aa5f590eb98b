//! Key-object tags: `<c4,CAM_FRONT,920.8,383.3>`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Width of every camera image in pixels.
pub const IMAGE_WIDTH: f64 = 1600.0;
/// Height of every camera image in pixels.
pub const IMAGE_HEIGHT: f64 = 900.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Camera {
    #[serde(rename = "CAM_FRONT")]
    Front,
    #[serde(rename = "CAM_FRONT_LEFT")]
    FrontLeft,
    #[serde(rename = "CAM_FRONT_RIGHT")]
    FrontRight,
    #[serde(rename = "CAM_BACK")]
    Back,
    #[serde(rename = "CAM_BACK_LEFT")]
    BackLeft,
    #[serde(rename = "CAM_BACK_RIGHT")]
    BackRight,
}

impl Camera {
    pub const ALL: [Camera; 6] = [
        Camera::Front,
        Camera::FrontLeft,
        Camera::FrontRight,
        Camera::Back,
        Camera::BackLeft,
        Camera::BackRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Camera::Front => "CAM_FRONT",
            Camera::FrontLeft => "CAM_FRONT_LEFT",
            Camera::FrontRight => "CAM_FRONT_RIGHT",
            Camera::Back => "CAM_BACK",
            Camera::BackLeft => "CAM_BACK_LEFT",
            Camera::BackRight => "CAM_BACK_RIGHT",
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown camera `{0}`")]
pub struct UnknownCamera(pub String);

impl FromStr for Camera {
    type Err = UnknownCamera;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Camera::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCamera(s.to_string()))
    }
}

/// Key-object identifier: `c` followed by digits.
///
/// Orders numerically (`c2 < c10`) so per-frame iteration is stable and
/// reads naturally.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(s: &str) -> Option<Self> {
        let digits = s.strip_prefix('c')?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(ObjectId(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> &str {
        let digits = &self.0[1..];
        let trimmed = digits.trim_start_matches('0');
        if trimmed.is_empty() {
            "0"
        } else {
            trimmed
        }
    }
}

impl Ord for ObjectId {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.numeric(), other.numeric());
        a.len()
            .cmp(&b.len())
            .then_with(|| a.cmp(b))
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for ObjectId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ObjectId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ObjectId::new(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid object id `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyObjectTag {
    pub object_id: ObjectId,
    pub camera: Camera,
    pub center_x: f64,
    pub center_y: f64,
}

impl KeyObjectTag {
    pub fn new(object_id: ObjectId, camera: Camera, center_x: f64, center_y: f64) -> Self {
        Self {
            object_id,
            camera,
            center_x,
            center_y,
        }
    }
}

/// Renders a coordinate with one decimal place when that is lossless,
/// otherwise with the shortest exact representation.
pub fn format_coordinate(v: f64) -> String {
    let short = format!("{v:.1}");
    if short.parse::<f64>() == Ok(v) {
        return short;
    }
    let exact = format!("{v}");
    if exact.contains('.') {
        exact
    } else {
        format!("{exact}.0")
    }
}

impl fmt::Display for KeyObjectTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<{},{},{},{}>",
            self.object_id,
            self.camera,
            format_coordinate(self.center_x),
            format_coordinate(self.center_y)
        )
    }
}

impl FromStr for KeyObjectTag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_keyobj_tag(s)
    }
}

impl Serialize for KeyObjectTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeyObjectTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_keyobj_tag(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TagErrorKind {
    #[error("expected `<`")]
    MissingOpen,
    #[error("expected `>`")]
    MissingClose,
    #[error("expected 4 comma-separated fields, found {0}")]
    Arity(usize),
    #[error("invalid object id `{0}`")]
    BadObjectId(String),
    #[error(transparent)]
    UnknownCamera(#[from] UnknownCamera),
    #[error("invalid coordinate `{0}`")]
    BadCoordinate(String),
    #[error("{axis} coordinate {value} outside [0, {limit}]")]
    OutOfRange {
        axis: char,
        value: f64,
        limit: f64,
    },
    #[error("unexpected whitespace")]
    UnexpectedWhitespace,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("malformed key-object tag at byte {position}: {kind}")]
pub struct TagParseError {
    pub kind: TagErrorKind,
    /// Byte offset into the parsed text.
    pub position: usize,
}

fn fail<T>(kind: TagErrorKind, position: usize) -> Result<T, TagParseError> {
    Err(TagParseError { kind, position })
}

fn parse_coordinate(field: &str, at: usize) -> Result<f64, TagParseError> {
    let (int, frac) = match field.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (field, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return fail(TagErrorKind::BadCoordinate(field.to_string()), at);
    }
    field
        .parse::<f64>()
        .or_else(|_| fail(TagErrorKind::BadCoordinate(field.to_string()), at))
}

/// Parses exactly one tag. Optional spaces are accepted after each comma and
/// nowhere else.
pub fn parse_keyobj_tag(text: &str) -> Result<KeyObjectTag, TagParseError> {
    let Some(rest) = text.strip_prefix('<') else {
        return fail(TagErrorKind::MissingOpen, 0);
    };
    let Some(inner) = rest.strip_suffix('>') else {
        return fail(TagErrorKind::MissingClose, text.len());
    };

    // (byte offset of field start in `text`, field text without leading spaces)
    let mut fields: Vec<(usize, &str)> = Vec::with_capacity(4);
    let mut offset = 1;
    for (i, raw) in inner.split(',').enumerate() {
        let trimmed = if i == 0 { raw } else { raw.trim_start_matches(' ') };
        let start = offset + (raw.len() - trimmed.len());
        if let Some(ws) = trimmed.find(char::is_whitespace) {
            return fail(TagErrorKind::UnexpectedWhitespace, start + ws);
        }
        fields.push((start, trimmed));
        offset += raw.len() + 1;
    }
    if fields.len() != 4 {
        return fail(TagErrorKind::Arity(fields.len()), 1);
    }

    let (id_at, id) = fields[0];
    let object_id = match ObjectId::new(id) {
        Some(id) => id,
        None => return fail(TagErrorKind::BadObjectId(id.to_string()), id_at),
    };
    let (cam_at, cam) = fields[1];
    let camera = cam
        .parse::<Camera>()
        .map_err(|e| TagParseError {
            kind: e.into(),
            position: cam_at,
        })?;
    let (x_at, x) = fields[2];
    let (y_at, y) = fields[3];
    let center_x = parse_coordinate(x, x_at)?;
    let center_y = parse_coordinate(y, y_at)?;
    if center_x > IMAGE_WIDTH {
        return fail(
            TagErrorKind::OutOfRange {
                axis: 'x',
                value: center_x,
                limit: IMAGE_WIDTH,
            },
            x_at,
        );
    }
    if center_y > IMAGE_HEIGHT {
        return fail(
            TagErrorKind::OutOfRange {
                axis: 'y',
                value: center_y,
                limit: IMAGE_HEIGHT,
            },
            y_at,
        );
    }
    Ok(KeyObjectTag::new(object_id, camera, center_x, center_y))
}

static CANDIDATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());

/// A tag found inside free text, with its byte span.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMatch {
    pub tag: KeyObjectTag,
    pub start: usize,
    pub end: usize,
}

/// All well-formed tags in order of appearance, with spans.
pub fn find_tags(text: &str) -> Vec<TagMatch> {
    CANDIDATE
        .find_iter(text)
        .filter_map(|m| match parse_keyobj_tag(m.as_str()) {
            Ok(tag) => Some(TagMatch {
                tag,
                start: m.start(),
                end: m.end(),
            }),
            Err(e) => {
                if m.as_str().contains(',') {
                    log::debug!("skipping tag-like text {:?}: {e}", m.as_str());
                }
                None
            }
        })
        .collect()
}

/// All well-formed tags in order of appearance; duplicates preserved.
pub fn extract_tags(text: &str) -> Vec<KeyObjectTag> {
    find_tags(text).into_iter().map(|m| m.tag).collect()
}
