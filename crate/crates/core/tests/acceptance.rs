//! Acceptance run: one pass/fail line per criterion.
//!
//! Trains both scorers on the default corpus, so a full run takes around
//! twenty minutes on one core.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use uiground::corpus::Corpus;
use uiground::datagen::{generate_corpus, GenConfig, Split};
use uiground::encoder::{examples_for, grad_check, ModelKind, ScorerModel, Vocab};
use uiground::geometry::{BoundingBox, Command, PixelRect, Reasoning, Screen, UIElement};
use uiground::pipeline::{self, RunConfig};
use uiground::probing::{
    build_aux_dataset, import_representations, probe_grad_check, sweep_specs, AuxTask, ProbeRun,
};
use uiground::report::{read_report, ReportRow};

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn record(results: &mut Vec<Outcome>, id: &'static str, pass: bool, detail: String) {
    say(&format!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" }));
    results.push(Outcome { id, pass, detail });
}

fn row<'a>(rows: &'a [ReportRow], model: &str) -> &'a ReportRow {
    rows.iter()
        .find(|r| r.model == model && r.split == Split::Test)
        .expect("test row")
}

fn main() {
    let mut results = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        corpus_dir: dir.path().join("corpus"),
        models_dir: dir.path().join("models"),
        reports_dir: dir.path().join("reports"),
        ..RunConfig::default()
    };

    let t0 = Instant::now();
    pipeline::cmd_gen(&cfg).unwrap();
    for kind in [ModelKind::TextOnly, ModelKind::LayoutAware] {
        pipeline::cmd_train(&cfg, kind).unwrap();
    }
    pipeline::cmd_eval(&cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let rows = read_report(&cfg.grounding_path()).unwrap();
    let (text, layout) = (row(&rows, "text"), row(&rows, "layout"));
    let corpus = pipeline::load_corpus(&cfg).unwrap();

    record(
        &mut results,
        "C1 extractive",
        corpus.commands.len() >= 2000 && text.ext() >= 0.95 && layout.ext() >= 0.95 && elapsed <= 600.0,
        format!(
            "{} commands, text {:.4}, layout {:.4}, {elapsed:.0}s (need >= 0.95 each, <= 600s)",
            corpus.commands.len(),
            text.ext(),
            layout.ext()
        ),
    );
    record(
        &mut results,
        "C2 absolute",
        layout.abs() >= 0.85 && text.abs() <= layout.abs() - 0.15,
        format!(
            "layout {:.4}, text {:.4} (need layout >= 0.85, text <= layout - 0.15)",
            layout.abs(),
            text.abs()
        ),
    );
    record(
        &mut results,
        "C3 relative",
        layout.rel() - text.rel() >= 0.05,
        format!(
            "layout {:.4}, text {:.4} (need gap >= 0.05)",
            layout.rel(),
            text.rel()
        ),
    );

    let sweeps: BTreeMap<String, Vec<ProbeRun>> = pipeline::cmd_probe(&cfg, &[], None)
        .unwrap()
        .into_iter()
        .collect();
    check_probing(&mut results, &cfg, &sweeps);

    check_gradients(&mut results, &corpus);
    check_oracle(&mut results);
    check_geometry(&mut results);

    let f = pipeline::cmd_filter(&cfg, 0.99).unwrap();
    record(
        &mut results,
        "C9 filtering",
        f.spatial_after > f.spatial_before,
        format!(
            "kept {} of {}, spatial share {:.4} -> {:.4}",
            f.after, f.before, f.spatial_before, f.spatial_after
        ),
    );

    check_determinism(&mut results);

    let failed: Vec<&str> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    say(&format!(
        "acceptance: {} of {} passed",
        results.len() - failed.len(),
        results.len()
    ));
    for o in results.iter().filter(|o| !o.pass) {
        say(&format!("  failed {}: {}", o.id, o.detail));
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn best(runs: &[ProbeRun], task: AuxTask) -> f64 {
    runs.iter()
        .filter(|r| r.task == task && !r.failed)
        .map(|r| r.aux_test_acc)
        .fold(0.0, f64::max)
}

fn check_probing(results: &mut Vec<Outcome>, cfg: &RunConfig, sweeps: &BTreeMap<String, Vec<ProbeRun>>) {
    let (text, layout) = (&sweeps["text"], &sweeps["layout"]);
    let mut pass = true;
    let mut parts = Vec::new();
    for task in AuxTask::ALL {
        let (t, l) = (best(text, task), best(layout, task));
        pass &= l - t >= 0.10;
        parts.push(format!("{task} {l:.3}/{t:.3}"));
    }
    record(
        results,
        "C4 probing order",
        pass,
        format!("best layout/text: {} (need gap >= 0.10)", parts.join(", ")),
    );

    let mut pass = true;
    let mut parts = Vec::new();
    for (label, runs) in sweeps {
        let reps = import_representations(&cfg.representations_path(label)).unwrap();
        for task in AuxTask::ALL {
            let aux = build_aux_dataset(&reps, task, cfg.probe_split_seed, Some(cfg.probe_records), "").unwrap();
            let n_train = aux.records.iter().filter(|r| r.split == Split::Train).count();
            let mut task_runs: Vec<&ProbeRun> = runs.iter().filter(|r| r.task == task).collect();
            task_runs.sort_by_key(|r| r.param_count);
            let linear = task_runs[0];
            let top = task_runs[task_runs.len() - 1];
            let mid_best = task_runs[1..task_runs.len() - 1]
                .iter()
                .filter(|r| !r.failed)
                .map(|r| r.selectivity)
                .fold(f64::NEG_INFINITY, f64::max);
            let ok = n_train >= 2000
                && !top.failed
                && top.control_train_acc - linear.control_train_acc >= 0.20
                && top.selectivity < mid_best;
            pass &= ok;
            parts.push(format!(
                "{label} {task}: n={n_train} ctl {:.3} vs {:.3}, sel top {:.3} < mid {:.3}",
                top.control_train_acc, linear.control_train_acc, top.selectivity, mid_best
            ));
        }
    }
    record(results, "C5 selectivity", pass, parts.join("; "));
}

fn check_gradients(results: &mut Vec<Outcome>, corpus: &Corpus) {
    let vocab = pipeline::build_vocab(corpus);
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::TextOnly, ModelKind::LayoutAware] {
        let mut model = ScorerModel::new(kind, vocab.clone(), 64, 50, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..model.params.segments.len() {
            model.params.fill_normal(i, 0.3, &mut rng);
        }
        let examples = examples_for(&model, corpus, Split::Dev).unwrap();
        worst = worst.max(grad_check(&model, &examples[..64], 1e-5, 200, 1));
    }
    let specs = sweep_specs(64, &Default::default());
    let probe_worst = specs
        .iter()
        .enumerate()
        .map(|(i, s)| probe_grad_check(&s.hidden, 64, 1e-5, 100, i as u64))
        .fold(0.0, f64::max);
    record(
        results,
        "C6 gradients",
        worst < 1e-3 && probe_worst < 1e-3,
        format!(
            "scorers {worst:.2e}, {} probes {probe_worst:.2e} (200/100 sampled parameters, need < 1e-3)",
            specs.len()
        ),
    );
}

/// Forward pass written out with plain loops from the named tensors.
fn oracle_relevance(model: &ScorerModel, phrase: &str, el: &UIElement) -> f64 {
    let p = &model.params;
    let seg = |name: &str| p.segments.iter().position(|s| s.name == name).unwrap();
    let at = |name: &str, r: usize, c: usize| {
        let s = &p.segments[seg(name)];
        p.data[s.offset + r * s.cols + c]
    };
    let d = model.dim;
    let cmd = model.vocab.tokenize(phrase);
    let txt = model.vocab.tokenize(&el.text);
    let n = (cmd.len() + 1 + txt.len()) as f64;
    let sep = model.vocab.get("[SEP]");
    let bucket = |c: u32| ((c as usize * model.buckets) / 1000).min(model.buckets - 1);
    let coords = el.bbox.coords();
    let mut pooled = vec![0.0; d];
    for (j, v) in pooled.iter_mut().enumerate() {
        let mut s = 0.0;
        for &t in cmd.iter().chain([&sep]).chain(&txt) {
            s += at("tokens", t, j);
        }
        if model.kind == ModelKind::LayoutAware {
            for (k, name) in ["x0", "x1", "y0", "y1"].iter().enumerate() {
                s += (cmd.len() + 1) as f64 * at(name, model.buckets, j);
                s += txt.len() as f64 * at(name, bucket(coords[k]), j);
            }
        }
        *v = s / n;
    }
    let hidden: Vec<f64> = (0..d)
        .map(|j| {
            let z = at("b1", 0, j) + (0..d).map(|i| pooled[i] * at("w1", i, j)).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    let logit = |c: usize| at("b2", 0, c) + (0..d).map(|i| hidden[i] * at("w2", i, c)).sum::<f64>();
    logit(1) - logit(0)
}

fn check_oracle(results: &mut Vec<Outcome>) {
    let words = ["ok", "cancel", "menu", "search", "home", "back", "share", "save"];
    let vocab = Vocab::build(words.iter().copied().chain(["tap the left ok", "press top menu"]));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut agree = 0;
    let cases = 1000;
    for case in 0..cases {
        let kind = if case % 2 == 0 { ModelKind::TextOnly } else { ModelKind::LayoutAware };
        let mut model = ScorerModel::new(kind, vocab.clone(), 8, 1 + case % 20, case as u64);
        for i in 0..model.params.segments.len() {
            model.params.fill_normal(i, 1.0, &mut rng);
        }
        let n = rng.random_range(1..=12);
        let items: Vec<(String, String, PixelRect)> = (0..n)
            .map(|i| {
                let x0 = rng.random_range(0..900);
                let y0 = rng.random_range(0..900);
                // few distinct texts so ties come up
                let text = (0..rng.random_range(1..=2))
                    .map(|_| *words[..3].choose(&mut rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ");
                (
                    format!("e{i}"),
                    text,
                    PixelRect::new(x0, x0 + rng.random_range(1..100), y0, y0 + rng.random_range(1..100)),
                )
            })
            .collect();
        let screen = Screen::from_pixels("s", 1000, 1000, items).unwrap();
        let phrase = ["tap the left ok", "press top menu", "cancel", "save home back"][case % 4];
        let rel: Vec<f64> = screen.elements.iter().map(|e| oracle_relevance(&model, phrase, e)).collect();
        // equal bags of tokens are ties up to summation order
        let top = rel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best = rel.iter().position(|&r| r >= top - 1e-9).unwrap();
        if model.ground(&screen, phrase).unwrap().id == screen.elements[best].id {
            agree += 1;
        }
    }
    record(
        results,
        "C7 oracle",
        agree == cases,
        format!("{agree} of {cases} cases agree"),
    );
}

/// Independent reading of a generated phrase.
enum Parsed {
    Named(String),
    Region(bool, bool),
    Extreme(&'static str),
    Relative(&'static str, String),
}

fn strip<'a>(s: &'a str, pre: &str, post: &str) -> Option<&'a str> {
    s.strip_prefix(pre)?.strip_suffix(post).filter(|m| !m.is_empty())
}

fn parse(phrase: &str, reasoning: Reasoning) -> Option<Parsed> {
    match reasoning {
        Reasoning::Extractive => [
            ("click on the ", " button"),
            ("tap ", ""),
            ("press the ", " option"),
            ("select ", ""),
        ]
        .iter()
        .find_map(|(a, b)| strip(phrase, a, b))
        .map(|n| Parsed::Named(n.to_string())),
        Reasoning::AbsoluteSpatial => {
            for e in ["topmost", "bottommost", "leftmost", "rightmost"] {
                for (a, b) in [("tap the ", " item"), ("click the ", " element"), ("select the ", " one")] {
                    if strip(phrase, a, b) == Some(e) {
                        return Some(Parsed::Extreme(e));
                    }
                }
            }
            for (a, b) in [
                ("click the element at the ", ""),
                ("tap the item in the ", " corner"),
                ("press the ", " element"),
            ] {
                if let Some(m) = strip(phrase, a, b) {
                    let (v, h) = m.split_once(' ')?;
                    return Some(Parsed::Region(v == "bottom", h == "right"));
                }
            }
            None
        }
        Reasoning::RelativeSpatial => {
            for pre in ["click the element ", "tap the item ", "select the one "] {
                let Some(rest) = phrase.strip_prefix(pre) else { continue };
                for d in ["to the left of ", "to the right of ", "above ", "below "] {
                    if let Some(anchor) = rest.strip_prefix(d) {
                        return Some(Parsed::Relative(d.trim_end(), anchor.to_string()));
                    }
                }
            }
            None
        }
    }
}

fn referents(screen: &Screen, p: &Parsed) -> Vec<usize> {
    let els = &screen.elements;
    let c2 = |b: &BoundingBox| ((b.x0() + b.x1()) as i64, (b.y0() + b.y1()) as i64);
    let named = |n: &str| -> Vec<usize> {
        (0..els.len())
            .filter(|&i| els[i].text.to_lowercase().split_whitespace().eq(n.split_whitespace()))
            .collect()
    };
    match p {
        Parsed::Named(n) => named(n),
        Parsed::Region(bottom, right) => (0..els.len())
            .filter(|&i| {
                let b = &els[i].bbox;
                ((b.y0() + b.y1()) / 2 >= 500) == *bottom && ((b.x0() + b.x1()) / 2 >= 500) == *right
            })
            .collect(),
        Parsed::Extreme(e) => (0..els.len())
            .filter(|&i| {
                let b = &els[i].bbox;
                !els.iter().enumerate().any(|(j, o)| {
                    let o = &o.bbox;
                    j != i
                        && match *e {
                            "topmost" => o.y1() <= b.y0(),
                            "bottommost" => o.y0() >= b.y1(),
                            "leftmost" => o.x1() <= b.x0(),
                            _ => o.x0() >= b.x1(),
                        }
                })
            })
            .collect(),
        Parsed::Relative(d, anchor) => {
            let a = named(anchor);
            if a.len() != 1 {
                return Vec::new();
            }
            let (ax, ay) = c2(&els[a[0]].bbox);
            let in_cone: Vec<(usize, i64)> = (0..els.len())
                .filter(|&i| i != a[0])
                .filter_map(|i| {
                    let (x, y) = c2(&els[i].bbox);
                    let (dx, dy) = (x - ax, y - ay);
                    let inside = match *d {
                        "to the left of" => dx < 0 && dx.abs() > dy.abs(),
                        "to the right of" => dx > 0 && dx.abs() > dy.abs(),
                        "above" => dy < 0 && dy.abs() > dx.abs(),
                        _ => dy > 0 && dy.abs() > dx.abs(),
                    };
                    inside.then_some((i, dx * dx + dy * dy))
                })
                .collect();
            let Some(m) = in_cone.iter().map(|c| c.1).min() else { return Vec::new() };
            in_cone.into_iter().filter(|c| c.1 == m).map(|c| c.0).collect()
        }
    }
}

fn check_geometry(results: &mut Vec<Outcome>) {
    let g = generate_corpus(&GenConfig {
        screens: 2000,
        seed: 99,
        ..GenConfig::default()
    })
    .unwrap();
    let by_id: BTreeMap<&str, &Screen> = g.screens.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut unique = 0;
    for c in &g.commands {
        let screen = by_id[c.screen_id.as_str()];
        let hit = parse(&c.phrase, c.reasoning)
            .map(|p| referents(screen, &p))
            .is_some_and(|r| r.len() == 1 && screen.elements[r[0]].id == c.target_id);
        unique += hit as usize;
    }

    let pairs: Vec<(BoundingBox, BoundingBox, bool)> = g
        .commands
        .iter()
        .flat_map(|c: &Command| {
            let screen = by_id[c.screen_id.as_str()];
            let target = screen.element(&c.target_id).unwrap().bbox;
            screen.elements.iter().map(move |e| (e.bbox, target, e.id == c.target_id))
        })
        .take(10_000)
        .collect();
    let flip = |l: Option<u8>| l.map(|v| 1 - v);
    let (mut held, mut checked, mut ties) = (0, 0, 0);
    for (b, t, is_t) in &pairs {
        let (bx, tx) = (b.reflect_x(), t.reflect_x());
        let (by, ty) = (b.reflect_y(), t.reflect_y());
        let mut ok = true;
        let lab = |task: AuxTask, b: &BoundingBox, t: &BoundingBox| task.label(b, t, *is_t);
        // boxes centered exactly on a midline stay on the same side when mirrored
        if b.x0() + b.x1() == 1000 {
            ties += 1;
        } else {
            ok &= lab(AuxTask::AT2, &bx, &tx) == flip(lab(AuxTask::AT2, b, t));
        }
        if b.y0() + b.y1() == 1000 {
            ties += 1;
        } else {
            ok &= lab(AuxTask::AT1, &by, &ty) == flip(lab(AuxTask::AT1, b, t));
        }
        ok &= lab(AuxTask::AT1, &bx, &tx) == lab(AuxTask::AT1, b, t);
        ok &= lab(AuxTask::AT2, &by, &ty) == lab(AuxTask::AT2, b, t);
        ok &= lab(AuxTask::AT4, &bx, &tx) == flip(lab(AuxTask::AT4, b, t));
        ok &= lab(AuxTask::AT3, &bx, &tx) == lab(AuxTask::AT3, b, t);
        ok &= lab(AuxTask::AT3, &by, &ty) == flip(lab(AuxTask::AT3, b, t));
        ok &= lab(AuxTask::AT4, &by, &ty) == lab(AuxTask::AT4, b, t);
        held += ok as usize;
        checked += 1;
    }
    record(
        results,
        "C8 geometry labels",
        pairs.len() == 10_000 && held == checked && unique == g.commands.len(),
        format!(
            "reflection {held}/{checked} records ({ties} midline ties skipped on that axis), unique referent {unique}/{}",
            g.commands.len()
        ),
    );
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn check_determinism(results: &mut Vec<Outcome>) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("demo");
    pipeline::demo(&root, 1).unwrap();
    let first = snapshot(&root);
    std::fs::remove_dir_all(&root).unwrap();
    pipeline::demo(&root, 1).unwrap();
    let second = snapshot(&root);
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    record(
        results,
        "C10 determinism",
        differing.is_empty() && !first.is_empty(),
        format!("{} artifacts, {} differ {:?}", first.len(), differing.len(), differing),
    );
}
