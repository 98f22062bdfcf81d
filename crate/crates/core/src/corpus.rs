//! A corpus on disk: screens, commands and pair instances.
//!
//! * `screens.jsonl`: `{id, width, height, elements: [{id, text, bbox}]}` with
//!   `bbox = [x0, x1, y0, y1]` in source pixels,
//! * `commands.jsonl`: `{id, phrase, screen_id, target_id, reasoning, anchor_id?}`,
//! * `pairs.csv`: `command_id, element_id, label, split`.

use crate::datagen::{PairInstance, Split};
use crate::geometry::{Command, PixelRect, Reasoning, Screen};
use crate::io::{read_json_documents, write_atomic, IoError};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const SCREENS_FILE: &str = "screens.jsonl";
pub const COMMANDS_FILE: &str = "commands.jsonl";
pub const PAIRS_FILE: &str = "pairs.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ElementRecord {
    id: String,
    #[serde(default)]
    text: String,
    bbox: [i64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScreenRecord {
    id: String,
    width: i64,
    height: i64,
    elements: Vec<ElementRecord>,
}

impl From<&Screen> for ScreenRecord {
    fn from(s: &Screen) -> Self {
        ScreenRecord {
            id: s.id.clone(),
            width: s.source_width,
            height: s.source_height,
            elements: s
                .elements
                .iter()
                .map(|e| ElementRecord {
                    id: e.id.clone(),
                    text: e.text.clone(),
                    bbox: [e.source.x0, e.source.x1, e.source.y0, e.source.y1],
                })
                .collect(),
        }
    }
}

/// Loads screens, normalizing every box onto the shared grid.
pub fn read_screens(path: &Path) -> Result<Vec<Screen>, IoError> {
    let records: Vec<ScreenRecord> = read_json_documents(path)?;
    records
        .into_iter()
        .map(|r| {
            let elements = r.elements.into_iter().map(|e| {
                let [x0, x1, y0, y1] = e.bbox;
                (e.id, e.text, PixelRect::new(x0, x1, y0, y1))
            });
            Screen::from_pixels(r.id.clone(), r.width, r.height, elements)
                .map_err(|e| IoError::schema(path, format!("screen {:?}: {e}", r.id)))
        })
        .collect()
}

pub fn write_screens(path: &Path, screens: &[Screen]) -> Result<(), IoError> {
    write_jsonl(path, screens.iter().map(ScreenRecord::from))
}

pub fn read_commands(path: &Path) -> Result<Vec<Command>, IoError> {
    read_json_documents(path)
}

pub fn write_commands(path: &Path, commands: &[Command]) -> Result<(), IoError> {
    write_jsonl(path, commands.iter())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), IoError> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, &item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairInstance>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IoError::schema(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let p: PairInstance = row.map_err(|e| IoError::schema(path, e.to_string()))?;
        if p.label > 1 {
            return Err(IoError::schema(path, format!("label {} is not 0 or 1", p.label)));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[PairInstance]) -> Result<(), IoError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for p in pairs {
            wtr.serialize(p)?;
        }
        wtr.flush()
    })
}

/// Screens, commands and pairs with id lookups.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub screens: Vec<Screen>,
    pub commands: Vec<Command>,
    pub pairs: Vec<PairInstance>,
    screen_index: HashMap<String, usize>,
    command_index: HashMap<String, usize>,
}

impl Corpus {
    /// Checks every reference: commands to screens and elements, pairs to
    /// commands and elements, and one positive pair per command group.
    pub fn new(
        screens: Vec<Screen>,
        commands: Vec<Command>,
        pairs: Vec<PairInstance>,
    ) -> Result<Self, String> {
        let screen_index: HashMap<String, usize> =
            screens.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        if screen_index.len() != screens.len() {
            return Err("duplicate screen ids".into());
        }
        let command_index: HashMap<String, usize> =
            commands.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        if command_index.len() != commands.len() {
            return Err("duplicate command ids".into());
        }
        for c in &commands {
            let s = screen_index
                .get(&c.screen_id)
                .ok_or_else(|| format!("command {:?} references missing screen {:?}", c.id, c.screen_id))?;
            c.validate(&screens[*s]).map_err(|e| e.to_string())?;
        }
        let mut positives: HashMap<&str, usize> = HashMap::new();
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        for p in &pairs {
            let c = command_index
                .get(&p.command_id)
                .ok_or_else(|| format!("pair references missing command {:?}", p.command_id))?;
            let cmd = &commands[*c];
            let screen = &screens[screen_index[&cmd.screen_id]];
            if screen.element(&p.element_id).is_none() {
                return Err(format!(
                    "pair ({}, {}) references a missing element",
                    p.command_id, p.element_id
                ));
            }
            if (p.element_id == cmd.target_id) != (p.label == 1) {
                return Err(format!("pair ({}, {}) has the wrong label", p.command_id, p.element_id));
            }
            *positives.entry(&p.command_id).or_default() += p.label as usize;
            if *split_of.entry(&p.command_id).or_insert(p.split) != p.split {
                return Err(format!("command {:?} straddles splits", p.command_id));
            }
        }
        if let Some((c, n)) = positives.iter().find(|(_, n)| **n != 1) {
            return Err(format!("command {c:?} has {n} positive pairs"));
        }
        Ok(Corpus {
            screens,
            commands,
            pairs,
            screen_index,
            command_index,
        })
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let screens = read_screens(&dir.join(SCREENS_FILE))?;
        let commands = read_commands(&dir.join(COMMANDS_FILE))?;
        let pairs = read_pairs(&dir.join(PAIRS_FILE))?;
        Corpus::new(screens, commands, pairs).map_err(|m| IoError::schema(dir, m))
    }

    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        write_screens(&dir.join(SCREENS_FILE), &self.screens)?;
        write_commands(&dir.join(COMMANDS_FILE), &self.commands)?;
        write_pairs(&dir.join(PAIRS_FILE), &self.pairs)
    }

    pub fn screen(&self, id: &str) -> Option<&Screen> {
        self.screen_index.get(id).map(|&i| &self.screens[i])
    }

    pub fn command(&self, id: &str) -> Option<&Command> {
        self.command_index.get(id).map(|&i| &self.commands[i])
    }

    pub fn screen_of(&self, cmd: &Command) -> &Screen {
        &self.screens[self.screen_index[&cmd.screen_id]]
    }

    /// Split of each command, taken from its pairs. Commands without pairs
    /// are absent.
    pub fn command_splits(&self) -> HashMap<&str, Split> {
        self.pairs
            .iter()
            .map(|p| (p.command_id.as_str(), p.split))
            .collect()
    }

    /// Commands of a split, in corpus order.
    pub fn commands_in(&self, split: Split) -> Vec<&Command> {
        let splits = self.command_splits();
        self.commands
            .iter()
            .filter(|c| splits.get(c.id.as_str()) == Some(&split))
            .collect()
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = &PairInstance> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    /// Command counts per reasoning type, per split.
    pub fn summary(&self) -> Vec<(Split, [usize; 3])> {
        let splits = self.command_splits();
        Split::ALL
            .iter()
            .map(|&s| {
                let mut counts = [0; 3];
                for c in &self.commands {
                    if splits.get(c.id.as_str()) == Some(&s) {
                        let i = Reasoning::ALL.iter().position(|r| *r == c.reasoning).unwrap();
                        counts[i] += 1;
                    }
                }
                (s, counts)
            })
            .collect()
    }

    /// Keeps only the listed commands and their pairs.
    pub fn retain_commands(&self, keep: impl Fn(&Command) -> bool) -> Corpus {
        let commands: Vec<Command> = self.commands.iter().filter(|c| keep(c)).cloned().collect();
        let ids: std::collections::HashSet<&str> = commands.iter().map(|c| c.id.as_str()).collect();
        let pairs = self
            .pairs
            .iter()
            .filter(|p| ids.contains(p.command_id.as_str()))
            .cloned()
            .collect();
        Corpus::new(self.screens.clone(), commands, pairs).expect("subset of a valid corpus")
    }
}

/// Table-1 style counts, one line per split plus a total.
pub fn format_summary(corpus: &Corpus) -> String {
    let mut out = String::from("split      extractive   absolute   relative      total\n");
    let mut total = [0usize; 3];
    for (split, c) in corpus.summary() {
        for i in 0..3 {
            total[i] += c[i];
        }
        out.push_str(&format!(
            "{:<8} {:>12} {:>10} {:>10} {:>10}\n",
            split.name(),
            c[0],
            c[1],
            c[2],
            c.iter().sum::<usize>()
        ));
    }
    out.push_str(&format!(
        "{:<8} {:>12} {:>10} {:>10} {:>10}\n",
        "all",
        total[0],
        total[1],
        total[2],
        total.iter().sum::<usize>()
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, make_pairs, split_dataset, GenConfig};
    use rand::SeedableRng;

    fn small() -> Corpus {
        let cfg = GenConfig {
            screens: 20,
            ..GenConfig::default()
        };
        let g = generate_corpus(&cfg).unwrap();
        let mut pairs = make_pairs(&g.screens, &g.commands, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        split_dataset(&mut pairs, [0.5, 0.2, 0.3], 1).unwrap();
        Corpus::new(g.screens, g.commands, pairs).unwrap()
    }

    #[test]
    fn files_round_trip() {
        let c = small();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.screens, c.screens);
        assert_eq!(back.commands, c.commands);
        assert_eq!(back.pairs, c.pairs);
    }

    #[test]
    fn screen_file_accepts_single_document_and_arrays() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.json");
        std::fs::write(
            &p,
            r#"{
                "id": "rico-1", "width": 1440, "height": 2560,
                "elements": [{"id": "a", "text": "Sign in", "bbox": [0, 720, 0, 1280]}]
            }"#,
        )
        .unwrap();
        let s = read_screens(&p).unwrap();
        assert_eq!(s[0].elements[0].bbox.coords(), [0, 500, 0, 500]);

        std::fs::write(&p, r#"[{"id":"a","width":10,"height":10,"elements":[{"id":"x","bbox":[0,10,0,10]}]},
                              {"id":"b","width":10,"height":10,"elements":[{"id":"x","text":"t","bbox":[0,5,0,5]}]}]"#)
            .unwrap();
        assert_eq!(read_screens(&p).unwrap().len(), 2);

        std::fs::write(&p, r#"{"id":"a","width":10,"height":10,"elements":[{"id":"x","bbox":[0,11,0,10]}]}"#).unwrap();
        assert!(matches!(read_screens(&p), Err(IoError::Schema { .. })));
    }

    #[test]
    fn corrupt_pairs_are_reported() {
        let c = small();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        std::fs::write(dir.path().join(PAIRS_FILE), "command_id,element_id,label,split\nx,y,1,train\n").unwrap();
        let err = Corpus::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing command"), "{err}");
    }

    #[test]
    fn summary_counts_every_command() {
        let c = small();
        let n: usize = c.summary().iter().map(|(_, v)| v.iter().sum::<usize>()).sum();
        assert_eq!(n, c.commands.len());
        assert!(format_summary(&c).contains("extractive"));
    }
}
