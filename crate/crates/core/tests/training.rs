use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uiground::corpus::Corpus;
use uiground::datagen::{generate_corpus, make_pairs, split_dataset, GenConfig, Split};
use uiground::encoder::{examples_for, train, ModelKind, ScorerModel, TrainConfig};
use uiground::pipeline::build_vocab;

fn corpus() -> Corpus {
    let g = generate_corpus(&GenConfig {
        screens: 200,
        ..GenConfig::default()
    })
    .unwrap();
    let mut pairs = make_pairs(&g.screens, &g.commands, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    split_dataset(&mut pairs, [0.5, 0.2, 0.3], 3).unwrap();
    Corpus::new(g.screens, g.commands, pairs).unwrap()
}

fn fit(corpus: &Corpus, kind: ModelKind) -> (ScorerModel, Vec<f64>) {
    let mut model = ScorerModel::new(kind, build_vocab(corpus), 32, 50, 11);
    let examples = examples_for(&model, corpus, Split::Train).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.15,
        epochs: 80,
        ..TrainConfig::default()
    };
    let curve = train(&mut model, &examples, &cfg).unwrap();
    (model, curve)
}

#[test]
fn training_is_bitwise_deterministic() {
    let c = corpus();
    let (a, la) = fit(&c, ModelKind::LayoutAware);
    let (b, lb) = fit(&c, ModelKind::LayoutAware);
    assert_eq!(a, b);
    assert_eq!(
        la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn loss_falls_across_epochs() {
    let c = corpus();
    for kind in [ModelKind::TextOnly, ModelKind::LayoutAware] {
        let (_, curve) = fit(&c, kind);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] * 1.02, "{kind:?}: {curve:?}");
        }
        assert!(curve[curve.len() - 1] < 0.8 * curve[0], "{kind:?}: {curve:?}");
    }
}

#[test]
fn trained_model_grounds_extractive_commands() {
    let c = corpus();
    let (model, _) = fit(&c, ModelKind::TextOnly);
    let ext: Vec<_> = c
        .commands_in(Split::Train)
        .into_iter()
        .filter(|cmd| cmd.reasoning == uiground::geometry::Reasoning::Extractive)
        .collect();
    let hits = ext
        .iter()
        .filter(|cmd| model.ground(c.screen_of(cmd), &cmd.phrase).unwrap().id == cmd.target_id)
        .count();
    assert!(hits as f64 >= 0.9 * ext.len() as f64, "{hits}/{}", ext.len());
}
