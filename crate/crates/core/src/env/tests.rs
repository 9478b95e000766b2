use std::collections::HashMap;

use super::*;

fn small(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        sessions: 20,
        ..GenConfig::default()
    }
}

#[test]
fn noiseless_cue_reproduces_prototype() {
    let cfg = GenConfig {
        noise: 0.0,
        sessions: 1,
        ..small(3)
    };
    let world = World::new(&cfg).unwrap();
    let s = &generate(&cfg).unwrap()[0];
    let cue_steps: Vec<_> = s.steps.iter().filter(|t| t.cue_present).collect();
    assert!(!cue_steps.is_empty());
    for t in cue_steps {
        assert_eq!(&t.visual_raw[cfg.scene_dim()..], &world.prototypes()[s.intent][..]);
    }
    for t in s.steps.iter().filter(|t| !t.cue_present) {
        assert!(t.visual_raw[cfg.scene_dim()..].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn prototypes_are_unit_and_separated() {
    let world = World::new(&GenConfig::default()).unwrap();
    let p = world.prototypes();
    for (i, a) in p.iter().enumerate() {
        assert!((l2_norm(a) - 1.0).abs() < 1e-12);
        for b in &p[i + 1..] {
            assert!(dot(a, b) < PROTOTYPE_MAX_DOT);
        }
    }
}

#[test]
fn unattainable_separation_is_config_error() {
    let cfg = GenConfig {
        intents: 64,
        k_ans: 4,
        cue_dim: 2,
        ..GenConfig::default()
    };
    assert!(matches!(World::new(&cfg), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_rejected() {
    let bad = [
        GenConfig { sessions: 0, ..small(0) },
        GenConfig { intents: 1, ..small(0) },
        GenConfig { intents: 6, ..small(0) },
        GenConfig { noise: -0.1, ..small(0) },
        GenConfig { context_fraction: 1.0, ..small(0) },
        GenConfig { cue_fraction: 0.6, ..small(0) },
        GenConfig { d_l: 5, ..small(0) },
        GenConfig { cue_dim: 48, ..small(0) },
    ];
    for cfg in bad {
        assert!(matches!(generate(&cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn structure_and_intent_constancy() {
    let cfg = small(5);
    for s in generate(&cfg).unwrap() {
        assert_eq!(s.steps.len(), cfg.steps);
        assert!(s.steps[0].cue_present);
        assert_eq!(s.steps[0].kind, QuestionKind::Observable);
        for (t, step) in s.steps.iter().enumerate() {
            assert_eq!(step.step, t);
            assert_eq!(step.intent_truth, s.intent);
            assert_eq!(step.visual_raw.len(), cfg.d_v);
            assert_eq!(step.language_raw.len(), cfg.d_l);
            if step.kind == QuestionKind::Context {
                assert!(!step.cue_present);
            }
        }
    }
}

#[test]
fn observable_label_is_function_of_visual() {
    let cfg = small(6);
    let world = World::new(&cfg).unwrap();
    for s in generate(&cfg).unwrap() {
        for t in s.steps.iter().filter(|t| t.kind == QuestionKind::Observable) {
            assert_eq!(t.label, world.observable_label(&t.visual_raw));
        }
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(generate(&small(9)).unwrap(), generate(&small(9)).unwrap());
    assert_ne!(generate(&small(9)).unwrap(), generate(&small(10)).unwrap());
}

/// Enumerates the generator's conditional distribution exactly: intents are
/// uniform, and everything except the intent is drawn from intent-independent
/// streams, so forcing each intent in turn yields the joint law of
/// (features, label) for every context question.
#[test]
fn context_features_carry_no_label_information() {
    for (q, k) in [(2, 2), (4, 2), (4, 4)] {
        let cfg = GenConfig {
            intents: q,
            k_ans: k,
            noise: 0.0,
            steps: 12,
            sessions: 10,
            seed: 77,
            ..GenConfig::default()
        };
        let world = World::new(&cfg).unwrap();
        // features (bit patterns) -> label counts
        let mut joint: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
        let mut total = 0.0;
        for sid in 0..cfg.sessions as u64 {
            for intent in 0..q {
                let s = generate_session(&cfg, &world, sid, Some(intent));
                for t in s.steps.iter().filter(|t| t.kind == QuestionKind::Context) {
                    let mut key: Vec<u64> = t.visual_raw.iter().map(|x| x.to_bits()).collect();
                    key.extend(t.language_raw.iter().map(|x| x.to_bits()));
                    // tag with position so identical feature vectors in
                    // different sessions stay separate outcomes
                    key.push(sid);
                    key.push(t.step as u64);
                    joint.entry(key).or_insert_with(|| vec![0.0; k])[t.label] += 1.0 / q as f64;
                    total += 1.0 / q as f64;
                }
            }
        }
        assert!(total > 0.0);
        let mut label_marginal = vec![0.0; k];
        let mut h_cond = 0.0;
        let mut best = 0.0;
        for counts in joint.values() {
            let px: f64 = counts.iter().sum();
            // each feature vector arises once per intent
            assert!((px - 1.0).abs() < 1e-12);
            for (y, &c) in counts.iter().enumerate() {
                label_marginal[y] += c;
                if c > 0.0 {
                    h_cond -= c / total * (c / px).ln();
                }
            }
            best += counts.iter().cloned().fold(0.0, f64::max);
        }
        let h_y: f64 = -label_marginal
            .iter()
            .map(|&c| c / total)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
        let mi = h_y - h_cond;
        assert!(mi.abs() < 1e-12, "Q={q} K={k}: MI = {mi}");
        assert!((best / total - 1.0 / k as f64).abs() < 1e-12);
    }
}

#[test]
fn cues_decode_to_intent() {
    let noiseless = GenConfig {
        noise: 0.0,
        sessions: 50,
        ..GenConfig::default()
    };
    let world = World::new(&noiseless).unwrap();
    for s in generate(&noiseless).unwrap() {
        for t in s.steps.iter().filter(|t| t.cue_present) {
            assert_eq!(world.decode_intent(&t.visual_raw), s.intent);
        }
    }

    let noisy = GenConfig {
        sessions: 1500,
        ..GenConfig::default()
    };
    let world = World::new(&noisy).unwrap();
    let (mut hits, mut n) = (0usize, 0usize);
    for s in generate(&noisy).unwrap() {
        for t in s.steps.iter().filter(|t| t.cue_present) {
            n += 1;
            hits += usize::from(world.decode_intent(&t.visual_raw) == s.intent);
        }
    }
    assert!(n >= 10_000, "only {n} cue steps");
    assert!(hits as f64 / n as f64 >= 0.99, "{hits}/{n}");
}

#[test]
fn context_labels_are_balanced() {
    let cfg = GenConfig {
        sessions: 1200,
        seed: 11,
        ..GenConfig::default()
    };
    let mut counts = vec![0usize; cfg.k_ans];
    for s in generate(&cfg).unwrap() {
        for t in s.steps.iter().filter(|t| t.kind == QuestionKind::Context) {
            counts[t.label] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    assert!(n >= 10_000);
    for c in counts {
        assert!((c as f64 / n as f64 - 0.25).abs() < 0.02, "{c}/{n}");
    }
}

#[test]
fn fractions_match_config() {
    let cfg = GenConfig {
        sessions: 500,
        ..GenConfig::default()
    };
    let steps: Vec<QAStep> = generate(&cfg).unwrap().into_iter().flat_map(|s| s.steps).collect();
    let n = steps.len() as f64;
    let ctx = steps.iter().filter(|t| t.kind == QuestionKind::Context).count() as f64 / n;
    let cue = steps.iter().filter(|t| t.cue_present).count() as f64 / n;
    assert!((ctx - 0.5 * 19.0 / 20.0).abs() < 0.02, "{ctx}");
    assert!((cue - 0.4).abs() < 0.03, "{cue}");
}

#[test]
fn zero_context_fraction_gives_only_observable() {
    let cfg = GenConfig {
        context_fraction: 0.0,
        ..small(1)
    };
    let all = generate(&cfg).unwrap();
    assert!(all.iter().flat_map(|s| &s.steps).all(|t| t.kind == QuestionKind::Observable));
}

fn ids(v: &[Session]) -> Vec<u64> {
    v.iter().map(|s| s.session_id).collect()
}

#[test]
fn split_sizes_and_determinism() {
    let data = generate(&GenConfig { sessions: 100, steps: 2, ..small(0) }).unwrap();
    let a = split(data.clone(), [0.8, 0.1, 0.1], 4).unwrap();
    assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (80, 10, 10));
    let b = split(data.clone(), [0.8, 0.1, 0.1], 4).unwrap();
    assert_eq!(a, b);
    let c = split(data.clone(), [0.8, 0.1, 0.1], 5).unwrap();
    assert_ne!(ids(&a.test), ids(&c.test));

    let mut all: Vec<u64> = [ids(&a.train), ids(&a.validation), ids(&a.test)].concat();
    all.sort();
    assert_eq!(all, (0..100).collect::<Vec<_>>());

    let whole = split(data.clone(), [1.0, 0.0, 0.0], 4).unwrap();
    assert_eq!(whole.train, data);
    assert!(whole.validation.is_empty() && whole.test.is_empty());
}

#[test]
fn split_errors() {
    let data = generate(&GenConfig { sessions: 3, steps: 1, ..small(0) }).unwrap();
    assert!(matches!(split(data.clone(), [0.5, 0.2, 0.2], 0), Err(Error::Config(_))));
    assert!(matches!(split(data, [0.9, 0.05, 0.05], 0), Err(Error::Config(_))));
}

#[test]
fn dataset_round_trip_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let data = generate(&GenConfig { sessions: 7, ..small(12) }).unwrap();
    write_dataset(&data, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), data);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 7 * 20);
}

#[test]
fn empty_file_is_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.jsonl");
    std::fs::write(&path, "").unwrap();
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn truncated_last_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let data = generate(&GenConfig { sessions: 2, steps: 3, ..small(1) }).unwrap();
    write_dataset(&data, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 20]).unwrap();
    match read_dataset(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("{other:?}"),
    }
}

#[test]
fn inconsistent_rows_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let data = generate(&GenConfig { sessions: 2, steps: 2, ..small(1) }).unwrap();
    let mut broken = data.clone();
    broken[0].steps[1].label = 9;
    write_dataset(&broken, &path).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));

    let mut broken = data.clone();
    broken[0].steps[1].intent_truth = (broken[0].intent + 1) % 8;
    write_dataset(&broken, &path).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));

    let reordered = vec![
        Session { steps: vec![data[0].steps[0].clone()], ..data[0].clone() },
        data[1].clone(),
        Session { steps: vec![data[0].steps[1].clone()], ..data[0].clone() },
    ];
    write_dataset(&reordered, &path).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 4, .. })));
}
