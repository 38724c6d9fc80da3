use rff_core::data::{make_synthetic, DatasetBundle, SyntheticSpec};
use rff_core::embed::{train_embed, train_embed_observed, EmbedConfig};
use rff_core::mapper::MapperParams;

fn bundle() -> DatasetBundle {
    make_synthetic(&SyntheticSpec::default()).unwrap().bundle
}

fn small() -> EmbedConfig {
    EmbedConfig {
        epochs: 6,
        hidden: 32,
        seed: 4,
        ..EmbedConfig::default()
    }
}

fn mean_embedding(m: &MapperParams<f32>, x: &[f32]) -> Vec<f64> {
    let h: Vec<f64> = (0..m.hidden.weight.cols())
        .map(|j| {
            let s: f64 = x.iter().enumerate().map(|(i, &v)| v as f64 * m.hidden.weight.get(i, j) as f64).sum();
            (s + m.hidden.bias.get(0, j) as f64).max(0.0)
        })
        .collect();
    (0..m.mu_head.weight.cols())
        .map(|k| {
            let s: f64 = h.iter().enumerate().map(|(j, v)| v * m.mu_head.weight.get(j, k) as f64).sum();
            s + m.mu_head.bias.get(0, k) as f64
        })
        .collect()
}

#[test]
fn reruns_are_identical() {
    let b = bundle();
    let a = train_embed(&b, &small()).unwrap();
    let c = train_embed(&b, &small()).unwrap();
    assert_eq!(a.params, c.params);
    assert_eq!(a.log, c.log);
    assert_eq!(a.beta_trace, c.beta_trace);
}

#[test]
fn unbounded_run_is_plain_structured_embedding() {
    let b = bundle();
    let config = small().plain_sje();
    let mut checked = 0;
    let run = train_embed_observed(&b, &config, |s| {
        let mut hinge = 0.0;
        for (&i, &neg) in s.batch.iter().zip(s.negatives) {
            let z = mean_embedding(s.params, b.features.row(i));
            let dot = |c: usize| -> f64 { b.attributes.row(c).iter().zip(&z).map(|(&a, v)| a as f64 * v).sum() };
            hinge += (config.margin - dot(b.labels[i]) + dot(neg)).max(0.0);
        }
        hinge /= s.batch.len() as f64;
        assert!((s.hinge - hinge).abs() <= 1e-5 * hinge.max(1.0), "step {}: {} vs {hinge}", s.step, s.hinge);
        assert_eq!(s.objective, s.hinge);
        assert_eq!(s.beta, 0.0);
        checked += 1;
    })
    .unwrap();
    assert!(checked > 50);
    assert!(run.beta_trace.is_empty());
}

#[test]
fn multiplier_rises_through_violated_epochs() {
    let b = bundle();
    let config = EmbedConfig {
        bound: 0.5,
        dual_init: 0.0,
        ..small()
    };
    let run = train_embed(&b, &config).unwrap();
    let violated: Vec<_> = run.log.iter().filter(|e| e.violated_throughout).collect();
    assert!(!violated.is_empty());
    for e in violated {
        assert!(e.beta > e.beta_start, "epoch {}: {} -> {}", e.epoch, e.beta_start, e.beta);
    }
    assert!(run.beta_trace.iter().all(|&beta| beta >= 0.0));
}

#[test]
fn complementary_slackness_at_convergence() {
    let b = bundle();
    let config = EmbedConfig {
        seed: 1,
        ..EmbedConfig::default()
    };
    let run = train_embed(&b, &config).unwrap();
    let tail = &run.log[run.log.len() - 10..];
    let slack: f64 = tail.iter().map(|e| e.beta * (e.kl - config.bound)).sum::<f64>() / tail.len() as f64;
    let beta: f64 = tail.iter().map(|e| e.beta).sum::<f64>() / tail.len() as f64;
    assert!(slack.abs() <= 0.05 * (config.bound * beta).max(1.0), "beta·(kl − b) = {slack}");
    let last = run.log.last().unwrap();
    if last.beta > 0.0 {
        assert!(last.kl <= 1.05 * config.bound, "kl {} with beta {}", last.kl, last.beta);
    }
}
