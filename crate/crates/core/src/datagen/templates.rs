//! Referring descriptions, their surface templates, and the geometric rules
//! that decide which elements satisfy them.

use crate::geometry::{absolute_region, BoundingBox, Horizontal, Screen, Vertical};
use crate::encoder::vocab::tokenize_words;

/// Every word any template can emit. Element names must avoid these.
pub const TEMPLATE_WORDS: &[&str] = &[
    "click", "on", "the", "button", "tap", "press", "option", "select", "element", "at", "item",
    "in", "corner", "top", "bottom", "left", "right", "topmost", "bottommost", "leftmost",
    "rightmost", "one", "to", "of", "above", "below",
];

pub const EXTRACTIVE_TEMPLATES: &[&str] = &[
    "click on the {} button",
    "tap {}",
    "press the {} option",
    "select {}",
];

/// `{v}` is top/bottom, `{h}` is left/right.
pub const REGION_TEMPLATES: &[&str] = &[
    "click the element at the {v} {h}",
    "tap the item in the {v} {h} corner",
    "press the {v} {h} element",
];

pub const EXTREME_TEMPLATES: &[&str] = &[
    "tap the {} item",
    "click the {} element",
    "select the {} one",
];

/// `{d}` is the direction phrase, `{a}` the anchor's text.
pub const RELATIVE_TEMPLATES: &[&str] = &[
    "click the element {d} {a}",
    "tap the item {d} {a}",
    "select the one {d} {a}",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extreme {
    Topmost,
    Bottommost,
    Leftmost,
    Rightmost,
}

impl Extreme {
    pub const ALL: [Extreme; 4] = [
        Extreme::Topmost,
        Extreme::Bottommost,
        Extreme::Leftmost,
        Extreme::Rightmost,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Extreme::Topmost => "topmost",
            Extreme::Bottommost => "bottommost",
            Extreme::Leftmost => "leftmost",
            Extreme::Rightmost => "rightmost",
        }
    }

    /// True when `other` lies entirely beyond `b` in this direction.
    fn beaten_by(self, b: &BoundingBox, other: &BoundingBox) -> bool {
        match self {
            Extreme::Topmost => other.y1() <= b.y0(),
            Extreme::Bottommost => other.y0() >= b.y1(),
            Extreme::Leftmost => other.x1() <= b.x0(),
            Extreme::Rightmost => other.x0() >= b.x1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftOf,
        Direction::RightOf,
        Direction::Above,
        Direction::Below,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            Direction::LeftOf => "to the left of",
            Direction::RightOf => "to the right of",
            Direction::Above => "above",
            Direction::Below => "below",
        }
    }

    /// Whether `candidate` lies in this direction's 90-degree cone around
    /// `anchor`, judged from centers. Diagonals exactly on the cone edge
    /// belong to no direction.
    pub fn contains(self, anchor: &BoundingBox, candidate: &BoundingBox) -> bool {
        let (ax, ay) = anchor.doubled_center();
        let (cx, cy) = candidate.doubled_center();
        let dx = cx as i64 - ax as i64;
        let dy = cy as i64 - ay as i64;
        match self {
            Direction::LeftOf => dx < 0 && dx.abs() > dy.abs(),
            Direction::RightOf => dx > 0 && dx.abs() > dy.abs(),
            Direction::Above => dy < 0 && dy.abs() > dx.abs(),
            Direction::Below => dy > 0 && dy.abs() > dx.abs(),
        }
    }
}

fn vertical_word(v: Vertical) -> &'static str {
    match v {
        Vertical::Top => "top",
        Vertical::Bottom => "bottom",
    }
}

fn horizontal_word(h: Horizontal) -> &'static str {
    match h {
        Horizontal::Left => "left",
        Horizontal::Right => "right",
    }
}

/// What a command says about its referent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Description {
    /// The element carrying this text.
    Named(String),
    /// The element whose center falls in this quadrant.
    Region(Vertical, Horizontal),
    /// The element with no other element entirely beyond it.
    Extreme(Extreme),
    /// The nearest element in a direction from the element named `anchor`.
    Relative { direction: Direction, anchor: String },
}

impl Description {
    /// Indices of the screen elements the description picks out.
    pub fn satisfiers(&self, screen: &Screen) -> Vec<usize> {
        let els = &screen.elements;
        match self {
            Description::Named(text) => {
                let wanted = tokenize_words(text);
                (0..els.len())
                    .filter(|&i| !wanted.is_empty() && tokenize_words(&els[i].text) == wanted)
                    .collect()
            }
            Description::Region(v, h) => (0..els.len())
                .filter(|&i| absolute_region(&els[i].bbox) == (*h, *v))
                .collect(),
            Description::Extreme(ext) => (0..els.len())
                .filter(|&i| {
                    !els
                        .iter()
                        .enumerate()
                        .any(|(j, o)| j != i && ext.beaten_by(&els[i].bbox, &o.bbox))
                })
                .collect(),
            Description::Relative { direction, anchor } => {
                let anchors = Description::Named(anchor.clone()).satisfiers(screen);
                let [a] = anchors[..] else {
                    return Vec::new();
                };
                let ab = els[a].bbox;
                let dist = |b: &BoundingBox| {
                    let (x, y) = b.doubled_center();
                    let (ax, ay) = ab.doubled_center();
                    let dx = x as i64 - ax as i64;
                    let dy = y as i64 - ay as i64;
                    dx * dx + dy * dy
                };
                let cands: Vec<usize> = (0..els.len())
                    .filter(|&i| i != a && direction.contains(&ab, &els[i].bbox))
                    .collect();
                let Some(best) = cands.iter().map(|&i| dist(&els[i].bbox)).min() else {
                    return Vec::new();
                };
                cands
                    .into_iter()
                    .filter(|&i| dist(&els[i].bbox) == best)
                    .collect()
            }
        }
    }

    /// Render with the `variant`-th template of the matching family.
    pub fn render(&self, variant: usize) -> String {
        match self {
            Description::Named(text) => {
                EXTRACTIVE_TEMPLATES[variant % EXTRACTIVE_TEMPLATES.len()].replace("{}", text)
            }
            Description::Region(v, h) => REGION_TEMPLATES[variant % REGION_TEMPLATES.len()]
                .replace("{v}", vertical_word(*v))
                .replace("{h}", horizontal_word(*h)),
            Description::Extreme(e) => {
                EXTREME_TEMPLATES[variant % EXTREME_TEMPLATES.len()].replace("{}", e.word())
            }
            Description::Relative { direction, anchor } => RELATIVE_TEMPLATES
                [variant % RELATIVE_TEMPLATES.len()]
            .replace("{d}", direction.phrase())
            .replace("{a}", anchor),
        }
    }

    pub fn variants(&self) -> usize {
        match self {
            Description::Named(_) => EXTRACTIVE_TEMPLATES.len(),
            Description::Region(..) => REGION_TEMPLATES.len(),
            Description::Extreme(_) => EXTREME_TEMPLATES.len(),
            Description::Relative { .. } => RELATIVE_TEMPLATES.len(),
        }
    }
}
