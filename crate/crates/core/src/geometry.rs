//! Screens, elements and commands, plus the coordinate conventions shared by
//! the generator, the encoders and the probing labels.
//!
//! Boxes live on an integer grid spanning `[0, 1000]` on both axes. `x` grows
//! to the right and `y` grows downward, as on a phone screen. A box is stored
//! as `[x0, x1, y0, y1]` (horizontal extent first, then vertical extent).

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Upper bound of the normalized coordinate grid.
pub const GRID_MAX: u32 = 1000;

/// Midline used by [`absolute_region`]. Centers exactly on it go right/bottom.
pub const MIDLINE: u32 = GRID_MAX / 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("screen dimensions must be positive, got {width}x{height}")]
    NonPositiveScreenDims { width: i64, height: i64 },
    #[error("coordinate {value} out of range [0, {limit}] ({what})")]
    CoordinateOutOfRange {
        what: &'static str,
        value: i64,
        limit: i64,
    },
    #[error("malformed box: {0}")]
    MalformedBox(String),
    #[error("screen {0:?} has no elements")]
    EmptyScreen(String),
    #[error("duplicate element id {id:?} on screen {screen:?}")]
    DuplicateElementId { screen: String, id: String },
    #[error("command {command:?} references unknown element {element:?}")]
    UnknownElement { command: String, element: String },
    #[error("command {0:?}: anchor must be present iff reasoning is relative, and differ from the target")]
    BadAnchor(String),
}

/// A rectangle in source pixels, as found in exported screen files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
}

impl PixelRect {
    pub fn new(x0: i64, x1: i64, y0: i64, y1: i64) -> Self {
        PixelRect { x0, x1, y0, y1 }
    }
}

/// A rectangle on the normalized `[0, 1000]` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, x1: u32, y0: u32, y1: u32) -> Result<Self, GeometryError> {
        if x0 > x1 || y0 > y1 || x1 > GRID_MAX || y1 > GRID_MAX {
            return Err(GeometryError::MalformedBox(format!(
                "[{x0}, {x1}, {y0}, {y1}]"
            )));
        }
        Ok(BoundingBox { x0, x1, y0, y1 })
    }

    /// The whole screen.
    pub fn full() -> Self {
        BoundingBox {
            x0: 0,
            x1: GRID_MAX,
            y0: 0,
            y1: GRID_MAX,
        }
    }

    pub fn x0(&self) -> u32 {
        self.x0
    }
    pub fn x1(&self) -> u32 {
        self.x1
    }
    pub fn y0(&self) -> u32 {
        self.y0
    }
    pub fn y1(&self) -> u32 {
        self.y1
    }

    /// `[x0, x1, y0, y1]`
    pub fn coords(&self) -> [u32; 4] {
        [self.x0, self.x1, self.y0, self.y1]
    }

    /// Zero width or zero height. Such boxes are valid.
    pub fn is_degenerate(&self) -> bool {
        self.x0 == self.x1 || self.y0 == self.y1
    }

    pub fn center(&self) -> (u32, u32) {
        bbox_center(self)
    }

    /// Twice the exact center, `(x0 + x1, y0 + y1)`.
    pub fn doubled_center(&self) -> (u32, u32) {
        (self.x0 + self.x1, self.y0 + self.y1)
    }

    /// Mirror across the vertical midline (`x -> 1000 - x`).
    pub fn reflect_x(&self) -> Self {
        BoundingBox {
            x0: GRID_MAX - self.x1,
            x1: GRID_MAX - self.x0,
            y0: self.y0,
            y1: self.y1,
        }
    }

    /// Mirror across the horizontal midline (`y -> 1000 - y`).
    pub fn reflect_y(&self) -> Self {
        BoundingBox {
            x0: self.x0,
            x1: self.x1,
            y0: GRID_MAX - self.y1,
            y1: GRID_MAX - self.y0,
        }
    }

    /// True when the open interiors intersect.
    pub fn interiors_overlap(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = GeometryError;
    fn try_from(c: [u32; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// Rescale a source-pixel rectangle onto the `[0, 1000]` grid.
///
/// Each coordinate maps to `round(coord / dim * 1000)`, computed in exact
/// integer arithmetic with halves rounded up.
pub fn normalize_bbox(raw: PixelRect, width: i64, height: i64) -> Result<BoundingBox, GeometryError> {
    if width <= 0 || height <= 0 {
        return Err(GeometryError::NonPositiveScreenDims { width, height });
    }
    let check = |what: &'static str, value: i64, limit: i64| {
        if value < 0 || value > limit {
            Err(GeometryError::CoordinateOutOfRange { what, value, limit })
        } else {
            Ok(())
        }
    };
    check("x0", raw.x0, width)?;
    check("x1", raw.x1, width)?;
    check("y0", raw.y0, height)?;
    check("y1", raw.y1, height)?;
    if raw.x0 > raw.x1 || raw.y0 > raw.y1 {
        return Err(GeometryError::MalformedBox(format!(
            "[{}, {}, {}, {}] is not ordered",
            raw.x0, raw.x1, raw.y0, raw.y1
        )));
    }
    let scale = |v: i64, dim: i64| -> u32 {
        let n = v as i128 * GRID_MAX as i128;
        let d = dim as i128;
        ((2 * n + d) / (2 * d)).clamp(0, GRID_MAX as i128) as u32
    };
    BoundingBox::new(
        scale(raw.x0, width),
        scale(raw.x1, width),
        scale(raw.y0, height),
        scale(raw.y1, height),
    )
}

/// Integer center, rounded toward the top-left.
pub fn bbox_center(b: &BoundingBox) -> (u32, u32) {
    ((b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Horizontal {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vertical {
    Top,
    Bottom,
}

/// Screen half an element's center falls in, as `(horizontal, vertical)`.
pub fn absolute_region(b: &BoundingBox) -> (Horizontal, Vertical) {
    let (cx, cy) = b.center();
    let h = if cx < MIDLINE {
        Horizontal::Left
    } else {
        Horizontal::Right
    };
    let v = if cy < MIDLINE {
        Vertical::Top
    } else {
        Vertical::Bottom
    };
    (h, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelHorizontal {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelVertical {
    Above,
    Below,
    None,
}

/// Where `probe` sits relative to `target`, comparing centers.
///
/// Centers are compared exactly (as coordinate sums), not after the integer
/// rounding of [`bbox_center`], so mirroring both boxes mirrors the answer.
pub fn relative_position(probe: &BoundingBox, target: &BoundingBox) -> (RelHorizontal, RelVertical) {
    let (px, py) = probe.doubled_center();
    let (tx, ty) = target.doubled_center();
    let h = match px.cmp(&tx) {
        std::cmp::Ordering::Less => RelHorizontal::Left,
        std::cmp::Ordering::Greater => RelHorizontal::Right,
        std::cmp::Ordering::Equal => RelHorizontal::None,
    };
    let v = match py.cmp(&ty) {
        std::cmp::Ordering::Less => RelVertical::Above,
        std::cmp::Ordering::Greater => RelVertical::Below,
        std::cmp::Ordering::Equal => RelVertical::None,
    };
    (h, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UIElement {
    pub id: String,
    pub text: String,
    pub bbox: BoundingBox,
    /// Original rectangle in source pixels; kept so screen files round-trip.
    pub source: PixelRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    pub source_width: i64,
    pub source_height: i64,
    pub elements: Vec<UIElement>,
}

impl Screen {
    /// Builds a screen from source-pixel elements, normalizing every box.
    pub fn from_pixels(
        id: impl Into<String>,
        width: i64,
        height: i64,
        elements: impl IntoIterator<Item = (String, String, PixelRect)>,
    ) -> Result<Self, GeometryError> {
        let elements = elements
            .into_iter()
            .map(|(eid, text, rect)| {
                Ok(UIElement {
                    id: eid,
                    text,
                    bbox: normalize_bbox(rect, width, height)?,
                    source: rect,
                })
            })
            .collect::<Result<Vec<_>, GeometryError>>()?;
        let screen = Screen {
            id: id.into(),
            source_width: width,
            source_height: height,
            elements,
        };
        screen.validate()?;
        Ok(screen)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.source_width <= 0 || self.source_height <= 0 {
            return Err(GeometryError::NonPositiveScreenDims {
                width: self.source_width,
                height: self.source_height,
            });
        }
        if self.elements.is_empty() {
            return Err(GeometryError::EmptyScreen(self.id.clone()));
        }
        let mut seen = HashSet::new();
        for e in &self.elements {
            if !seen.insert(e.id.as_str()) {
                return Err(GeometryError::DuplicateElementId {
                    screen: self.id.clone(),
                    id: e.id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn element(&self, id: &str) -> Option<&UIElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn element_index(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reasoning {
    Extractive,
    AbsoluteSpatial,
    RelativeSpatial,
}

impl Reasoning {
    pub const ALL: [Reasoning; 3] = [
        Reasoning::Extractive,
        Reasoning::AbsoluteSpatial,
        Reasoning::RelativeSpatial,
    ];

    pub fn is_spatial(self) -> bool {
        !matches!(self, Reasoning::Extractive)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Reasoning::Extractive => "ext",
            Reasoning::AbsoluteSpatial => "abs",
            Reasoning::RelativeSpatial => "rel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub id: String,
    pub phrase: String,
    pub screen_id: String,
    pub target_id: String,
    pub reasoning: Reasoning,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<String>,
}

impl Command {
    /// Checks the command against the screen it refers to.
    pub fn validate(&self, screen: &Screen) -> Result<(), GeometryError> {
        if screen.element(&self.target_id).is_none() {
            return Err(GeometryError::UnknownElement {
                command: self.id.clone(),
                element: self.target_id.clone(),
            });
        }
        match (&self.anchor_id, self.reasoning) {
            (Some(a), Reasoning::RelativeSpatial) => {
                if screen.element(a).is_none() {
                    return Err(GeometryError::UnknownElement {
                        command: self.id.clone(),
                        element: a.clone(),
                    });
                }
                if *a == self.target_id {
                    return Err(GeometryError::BadAnchor(self.id.clone()));
                }
                Ok(())
            }
            (None, Reasoning::Extractive | Reasoning::AbsoluteSpatial) => Ok(()),
            _ => Err(GeometryError::BadAnchor(self.id.clone())),
        }
    }
}
