//! Synthetic screens and referring commands with verified unique referents,
//! plus the pair instances and splits the scorers are trained on.

pub mod lexicon;
pub mod templates;

use crate::geometry::{Command, GeometryError, Horizontal, PixelRect, Reasoning, Screen, Vertical};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use templates::{Description, Direction, Extreme};
use thiserror::Error;

/// Upper bound on redraws before a generator gives up.
pub const MAX_RETRIES: usize = 1000;

/// Cap on same-screen negatives per command.
pub const MAX_NEGATIVES: usize = 20;

/// Extractive / absolute / relative instruction counts of the reference
/// training corpus; the default command mix follows these ratios.
pub const REFERENCE_TRAIN_COUNTS: [f64; 3] = [100_921.0, 6_531.0, 57_222.0];

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{requested} elements do not fit a grid with {capacity} cells")]
    GridCapacityExceeded { requested: usize, capacity: usize },
    #[error("screen {0:?} has no element with a unique name")]
    NoUniquelyNamedElement(String),
    #[error("screen {0:?} has no uniquely described absolute referent")]
    NoUniqueAbsoluteReferent(String),
    #[error("screen {0:?} has no uniquely described relative referent")]
    NoUniqueRelativeReferent(String),
    #[error("command {command:?} references missing screen {screen:?}")]
    DanglingScreenReference { command: String, screen: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub screens: usize,
    pub commands_per_screen: usize,
    /// Inclusive range.
    pub elements_per_screen: (usize, usize),
    /// `(rows, cols)` of the placement lattice.
    pub grid: (usize, usize),
    /// Source pixel size of generated screens.
    pub source_size: (i64, i64),
    pub text_lexicon: Vec<String>,
    /// Proportions of extractive, absolute and relative commands.
    pub command_mix: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        let total: f64 = REFERENCE_TRAIN_COUNTS.iter().sum();
        GenConfig {
            seed: 7,
            screens: 10_000,
            commands_per_screen: 6,
            elements_per_screen: (4, 12),
            grid: (6, 4),
            source_size: (1440, 2560),
            text_lexicon: lexicon::default_lexicon(),
            command_mix: REFERENCE_TRAIN_COUNTS.map(|c| c / total),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let sum: f64 = self.command_mix.iter().sum();
        if self.command_mix.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(DatagenError::InvalidConfig(format!(
                "command_mix must be non-negative and sum to 1, got {:?}",
                self.command_mix
            )));
        }
        let (lo, hi) = self.elements_per_screen;
        if lo == 0 || lo > hi {
            return Err(DatagenError::InvalidConfig(format!(
                "elements_per_screen must be a non-empty range of positive counts, got {lo}..={hi}"
            )));
        }
        let capacity = self.grid.0 * self.grid.1;
        if hi > capacity {
            return Err(DatagenError::GridCapacityExceeded {
                requested: hi,
                capacity,
            });
        }
        if self.text_lexicon.is_empty() {
            return Err(DatagenError::InvalidConfig("text_lexicon is empty".into()));
        }
        let (w, h) = self.source_size;
        // Each cell must leave room for an inset box with a non-empty interior.
        if w < 4 * self.grid.1 as i64 || h < 4 * self.grid.0 as i64 {
            return Err(DatagenError::InvalidConfig(format!(
                "source size {w}x{h} is too small for a {}x{} grid",
                self.grid.0, self.grid.1
            )));
        }
        Ok(())
    }

    /// Per-screen generator, so screens can be produced independently.
    pub fn screen_rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index as u64))
    }
}

/// Places elements on distinct lattice cells, each inset inside its cell.
pub fn generate_screen(
    rng: &mut impl Rng,
    cfg: &GenConfig,
    id: impl Into<String>,
) -> Result<Screen, DatagenError> {
    cfg.validate()?;
    let (rows, cols) = cfg.grid;
    let (w, h) = cfg.source_size;
    let (lo, hi) = cfg.elements_per_screen;
    let n = rng.random_range(lo..=hi);
    let cells = index::sample(rng, rows * cols, n).into_vec();
    let mut elements = Vec::with_capacity(n);
    for (k, cell) in cells.into_iter().enumerate() {
        let (r, c) = (cell / cols, cell % cols);
        let (cx0, cx1) = (c as i64 * w / cols as i64, (c as i64 + 1) * w / cols as i64);
        let (cy0, cy1) = (r as i64 * h / rows as i64, (r as i64 + 1) * h / rows as i64);
        let (x0, x1) = inset(rng, cx0, cx1, 0.45, 0.9);
        let (y0, y1) = inset(rng, cy0, cy1, 0.3, 0.8);
        let text = cfg.text_lexicon.choose(rng).expect("lexicon validated").clone();
        elements.push((format!("e{k}"), text, PixelRect::new(x0, x1, y0, y1)));
    }
    Ok(Screen::from_pixels(id, w, h, elements)?)
}

/// A sub-interval of `[lo, hi]` covering a random fraction of it, kept at
/// least one pixel away from both ends.
fn inset(rng: &mut impl Rng, lo: i64, hi: i64, min_frac: f64, max_frac: f64) -> (i64, i64) {
    let span = hi - lo;
    let room = (span - 2).max(1);
    let len = ((room as f64) * rng.random_range(min_frac..=max_frac)).round().max(1.0) as i64;
    let len = len.min(room);
    let start = lo + 1 + rng.random_range(0..=(room - len));
    (start, start + len)
}

/// Picks uniformly among descriptions with exactly one satisfier, skipping
/// any whose canonical phrase is in `avoid`.
fn pick_description(
    rng: &mut impl Rng,
    screen: &Screen,
    options: Vec<Description>,
    avoid: &HashSet<String>,
) -> Option<(Description, usize, String)> {
    let mut valid: Vec<(Description, usize)> = options
        .into_iter()
        .filter(|d| !avoid.contains(&d.render(0)))
        .filter_map(|d| match d.satisfiers(screen)[..] {
            [t] => Some((d, t)),
            _ => None,
        })
        .collect();
    if valid.is_empty() {
        return None;
    }
    let (d, t) = valid.swap_remove(rng.random_range(0..valid.len()));
    let phrase = d.render(rng.random_range(0..d.variants()));
    Some((d, t, phrase))
}

fn build_command(
    screen: &Screen,
    id: String,
    phrase: String,
    target: usize,
    reasoning: Reasoning,
    anchor: Option<usize>,
) -> Command {
    Command {
        id,
        phrase,
        screen_id: screen.id.clone(),
        target_id: screen.elements[target].id.clone(),
        reasoning,
        anchor_id: anchor.map(|a| screen.elements[a].id.clone()),
    }
}

fn unique_texts(screen: &Screen) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &screen.elements {
        *counts.entry(e.text.as_str()).or_default() += 1;
    }
    screen
        .elements
        .iter()
        .filter(|e| counts[e.text.as_str()] == 1 && !e.text.trim().is_empty())
        .map(|e| e.text.clone())
        .collect()
}

/// "click on the cancel button": names a uniquely named element.
///
/// `avoid` holds canonical phrases (first template variant) of descriptions
/// already used on this screen.
pub fn gen_extractive(
    screen: &Screen,
    rng: &mut impl Rng,
    id: impl Into<String>,
    avoid: &HashSet<String>,
) -> Result<Command, DatagenError> {
    extractive(screen, rng, id.into(), avoid).map(|(c, _)| c)
}

fn extractive(
    screen: &Screen,
    rng: &mut impl Rng,
    id: String,
    avoid: &HashSet<String>,
) -> Result<(Command, Description), DatagenError> {
    let options = unique_texts(screen).into_iter().map(Description::Named).collect();
    let (d, target, phrase) = pick_description(rng, screen, options, avoid)
        .ok_or_else(|| DatagenError::NoUniquelyNamedElement(screen.id.clone()))?;
    Ok((build_command(screen, id, phrase, target, Reasoning::Extractive, None), d))
}

/// "click the element at the top left" / "tap the topmost item".
pub fn gen_absolute(
    screen: &Screen,
    rng: &mut impl Rng,
    id: impl Into<String>,
    avoid: &HashSet<String>,
) -> Result<Command, DatagenError> {
    absolute(screen, rng, id.into(), avoid).map(|(c, _)| c)
}

fn absolute(
    screen: &Screen,
    rng: &mut impl Rng,
    id: String,
    avoid: &HashSet<String>,
) -> Result<(Command, Description), DatagenError> {
    let mut options = Vec::new();
    for v in [Vertical::Top, Vertical::Bottom] {
        for h in [Horizontal::Left, Horizontal::Right] {
            options.push(Description::Region(v, h));
        }
    }
    options.extend(Extreme::ALL.map(Description::Extreme));
    let (d, target, phrase) = pick_description(rng, screen, options, avoid)
        .ok_or_else(|| DatagenError::NoUniqueAbsoluteReferent(screen.id.clone()))?;
    Ok((build_command(screen, id, phrase, target, Reasoning::AbsoluteSpatial, None), d))
}

/// "click the element to the left of settings": nearest element in a
/// direction from a uniquely named anchor.
pub fn gen_relative(
    screen: &Screen,
    rng: &mut impl Rng,
    id: impl Into<String>,
    avoid: &HashSet<String>,
) -> Result<Command, DatagenError> {
    relative(screen, rng, id.into(), avoid).map(|(c, _)| c)
}

fn relative(
    screen: &Screen,
    rng: &mut impl Rng,
    id: String,
    avoid: &HashSet<String>,
) -> Result<(Command, Description), DatagenError> {
    let anchors = unique_texts(screen);
    let mut options = Vec::new();
    for a in &anchors {
        for d in Direction::ALL {
            options.push(Description::Relative {
                direction: d,
                anchor: a.clone(),
            });
        }
    }
    // Draw until the target's own name differs from the anchor's.
    let mut avoid = avoid.clone();
    for _ in 0..MAX_RETRIES {
        let (desc, target, phrase) = pick_description(rng, screen, options.clone(), &avoid)
            .ok_or_else(|| DatagenError::NoUniqueRelativeReferent(screen.id.clone()))?;
        let Description::Relative { anchor, .. } = &desc else {
            unreachable!("only relative options offered")
        };
        if screen.elements[target].text == *anchor {
            avoid.insert(desc.render(0));
            continue;
        }
        let a = screen
            .elements
            .iter()
            .position(|e| e.text == *anchor)
            .expect("anchor resolved by satisfiers");
        let cmd = build_command(screen, id, phrase, target, Reasoning::RelativeSpatial, Some(a));
        return Ok((cmd, desc));
    }
    Err(DatagenError::NoUniqueRelativeReferent(screen.id.clone()))
}

/// Generates a command of the given type together with its description.
pub fn gen_command(
    reasoning: Reasoning,
    screen: &Screen,
    rng: &mut impl Rng,
    id: impl Into<String>,
    avoid: &HashSet<String>,
) -> Result<(Command, Description), DatagenError> {
    let id = id.into();
    match reasoning {
        Reasoning::Extractive => extractive(screen, rng, id, avoid),
        Reasoning::AbsoluteSpatial => absolute(screen, rng, id, avoid),
        Reasoning::RelativeSpatial => relative(screen, rng, id, avoid),
    }
}

/// Exact per-type counts for `total` commands (largest remainder rounding).
fn quota(mix: &[f64; 3], total: usize) -> [usize; 3] {
    let raw = mix.map(|p| p * total as f64);
    let mut counts = raw.map(|r| r.floor() as usize);
    let mut rest: Vec<usize> = (0..3).collect();
    rest.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut missing = total - counts.iter().sum::<usize>();
    for i in rest {
        if missing == 0 {
            break;
        }
        counts[i] += 1;
        missing -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub screens: Vec<Screen>,
    pub commands: Vec<Command>,
}

/// Generates `cfg.screens` screens and about `screens * commands_per_screen`
/// commands whose reasoning types follow `cfg.command_mix`.
///
/// The type schedule is fixed up front with exact quotas and shuffled. A type
/// that cannot be realized on a screen is carried over to the next screen;
/// whatever is still carried after the last screen is dropped.
pub fn generate_corpus(cfg: &GenConfig) -> Result<GeneratedCorpus, DatagenError> {
    cfg.validate()?;
    let total = cfg.screens * cfg.commands_per_screen;
    let counts = quota(&cfg.command_mix, total);
    let mut schedule: Vec<Reasoning> = Reasoning::ALL
        .iter()
        .zip(counts)
        .flat_map(|(r, n)| std::iter::repeat_n(*r, n))
        .collect();
    let mut sched_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5c4e_d01e);
    schedule.shuffle(&mut sched_rng);

    let mut screens = Vec::with_capacity(cfg.screens);
    let mut commands = Vec::with_capacity(total);
    let mut carry: Vec<Reasoning> = Vec::new();
    let mut next = schedule.into_iter();
    for i in 0..cfg.screens {
        let mut rng = cfg.screen_rng(i);
        let screen = generate_screen(&mut rng, cfg, format!("s{i:05}"))?;
        let mut used = HashSet::new();
        let mut pending: Vec<Reasoning> = std::mem::take(&mut carry);
        pending.reverse();
        let mut made = 0;
        let mut slot = 0;
        while made < cfg.commands_per_screen {
            let reasoning = match pending.pop() {
                Some(r) => r,
                None => match next.next() {
                    Some(r) => r,
                    None => break,
                },
            };
            let id = format!("{}-c{slot}", screen.id);
            slot += 1;
            match gen_command(reasoning, &screen, &mut rng, id, &used) {
                Ok((cmd, desc)) => {
                    used.insert(desc.render(0));
                    commands.push(cmd);
                    made += 1;
                }
                Err(
                    DatagenError::NoUniquelyNamedElement(_)
                    | DatagenError::NoUniqueAbsoluteReferent(_)
                    | DatagenError::NoUniqueRelativeReferent(_),
                ) => carry.push(reasoning),
                Err(e) => return Err(e),
            }
        }
        // Anything not attempted on this screen moves on as well.
        carry.extend(pending.into_iter().rev());
        screens.push(screen);
    }
    if !carry.is_empty() {
        log::debug!("{} scheduled commands could not be placed", carry.len());
    }
    Ok(GeneratedCorpus { screens, commands })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInstance {
    pub command_id: String,
    pub element_id: String,
    pub label: u8,
    pub split: Split,
}

/// One positive and up to [`MAX_NEGATIVES`] same-screen negatives per command.
///
/// Pairs come out in screen order within each command; all pairs start in
/// the train split until [`split_dataset`] assigns them.
pub fn make_pairs(
    screens: &[Screen],
    commands: &[Command],
    rng: &mut impl Rng,
) -> Result<Vec<PairInstance>, DatagenError> {
    let by_id: HashMap<&str, &Screen> = screens.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut pairs = Vec::new();
    for cmd in commands {
        let screen = by_id.get(cmd.screen_id.as_str()).ok_or_else(|| {
            DatagenError::DanglingScreenReference {
                command: cmd.id.clone(),
                screen: cmd.screen_id.clone(),
            }
        })?;
        cmd.validate(screen)?;
        let negatives: Vec<usize> = (0..screen.elements.len())
            .filter(|&i| screen.elements[i].id != cmd.target_id)
            .collect();
        let mut keep: Vec<usize> = if negatives.len() > MAX_NEGATIVES {
            index::sample(rng, negatives.len(), MAX_NEGATIVES)
                .into_iter()
                .map(|k| negatives[k])
                .collect()
        } else {
            negatives
        };
        keep.push(screen.element_index(&cmd.target_id).expect("validated"));
        keep.sort_unstable();
        for i in keep {
            let e = &screen.elements[i];
            pairs.push(PairInstance {
                command_id: cmd.id.clone(),
                element_id: e.id.clone(),
                label: (e.id == cmd.target_id) as u8,
                split: Split::Train,
            });
        }
    }
    Ok(pairs)
}

/// Assigns whole command groups to train/dev/test.
///
/// Groups are shuffled under `seed`; the first `round(r_train * n)` go to
/// train, the next `round(r_dev * n)` to dev, the rest to test.
pub fn split_dataset(
    pairs: &mut [PairInstance],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(), DatagenError> {
    if pairs.is_empty() {
        return Err(DatagenError::EmptyDataset);
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatagenError::BadRatios(ratios));
    }
    let mut groups: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for p in pairs.iter() {
        if seen.insert(p.command_id.as_str()) {
            groups.push(p.command_id.as_str());
        }
    }
    let assignment = assign_splits(groups.len(), ratios, seed);
    let lookup: HashMap<String, Split> = groups
        .iter()
        .zip(assignment)
        .map(|(g, s)| (g.to_string(), s))
        .collect();
    for p in pairs.iter_mut() {
        p.split = lookup[&p.command_id];
    }
    Ok(())
}

/// Split label for each of `n` items in their original order.
pub fn assign_splits(n: usize, ratios: [f64; 3], seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_dev = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    out
}
