use std::path::Path;
use std::sync::OnceLock;

use memctrl::backbone::features::{FeatureExtractor, FeatureVector, DIGEST, FEATURE_DIM, INSTRUCTION, NAME_BAG};
use memctrl::backbone::policy::BackboneParams;
use memctrl::eval::{self, Agent, AgentConfig, Variant};
use memctrl::gate::{GateKind, GateParams};
use memctrl::io;
use memctrl::memory::{Context, ContextBudget, MemoryEntry, MemoryStore};
use memctrl::memworld::action::ActionSpace;
use memctrl::memworld::env::Env;
use memctrl::memworld::observation::Observation;
use memctrl::memworld::task::generate_task;
use memctrl::memworld::types::Subset;
use memctrl::nn::rng::Rng;
use memctrl::pipeline::{self, Command, RunConfig};
use memctrl::train::offline::{balance_dataset, LabeledSample};
use proptest::prelude::*;

fn observation() -> &'static Observation {
    static OBS: OnceLock<Observation> = OnceLock::new();
    OBS.get_or_init(|| Env::reset(&generate_task(Subset::Base, 0).unwrap()).1)
}

fn entry(step: u32, feature: Vec<f64>) -> MemoryEntry {
    MemoryEntry {
        step_index: step,
        obs_summary: format!("step {step}"),
        observation: observation().clone(),
        feature: FeatureVector(feature),
        action_id: 0,
        action_name: "move-forward".into(),
    }
}

/// Feature whose name bag is a 0/1 pattern on the first four slots, so
/// relevance scores repeat and ties are common.
fn bag_feature(bits: u8) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_DIM];
    for i in 0..4 {
        if bits >> i & 1 == 1 {
            f[NAME_BAG.start + i] = 1.0;
        }
    }
    f
}

fn subset_strategy() -> impl Strategy<Value = Subset> {
    prop::sample::select(Subset::ALL.to_vec())
}

/// Best context by exhaustive search: maximal score sum, then the
/// lexicographically largest descending step vector.
fn oracle_retrieve(entries: &[(u32, f64)], h: usize) -> Vec<u32> {
    let n = entries.len();
    let k = h.min(n);
    let mut best: Option<(f64, Vec<u32>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let chosen: Vec<&(u32, f64)> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &entries[i]).collect();
        let mut scores: Vec<f64> = chosen.iter().map(|e| e.1).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sum: f64 = scores.iter().sum();
        let mut steps: Vec<u32> = chosen.iter().map(|e| e.0).collect();
        steps.sort_by(|a, b| b.cmp(a));
        let better = match &best {
            None => true,
            Some((s, v)) => sum > *s || (sum == *s && steps > *v),
        };
        if better {
            best = Some((sum, steps));
        }
    }
    let mut out = best.map(|b| b.1).unwrap_or_default();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn retrieval_matches_exhaustive_oracle(
        bags in prop::collection::vec(0u8..16, 0..=10),
        gaps in prop::collection::vec(1u32..4, 10),
        instr_bits in 1u8..16,
        h in 0usize..=4,
    ) {
        let instr = bag_feature(instr_bits);
        let instr = &instr[NAME_BAG];
        let mut store = MemoryStore::new();
        let mut step = 0;
        let mut scored = Vec::new();
        for (i, b) in bags.iter().enumerate() {
            step += gaps[i];
            let e = entry(step, bag_feature(*b));
            scored.push((step, memctrl::memory::relevance(&e, instr)));
            store.maybe_insert(e, true).unwrap();
        }
        let ctx = store.retrieve(instr, ContextBudget(h));
        prop_assert_eq!(ctx.step_indices(), oracle_retrieve(&scored, h));
        prop_assert!(ctx.len() <= h);
    }

    #[test]
    fn maybe_insert_replays_keep_bits(bits in prop::collection::vec(any::<bool>(), 0..40)) {
        let mut store = MemoryStore::new();
        for (t, b) in bits.iter().enumerate() {
            let before = store.clone();
            store.maybe_insert(entry(t as u32, bag_feature(t as u8 % 16)), *b).unwrap();
            if !*b {
                prop_assert_eq!(&store, &before);
            }
        }
        let want: Vec<u32> = bits.iter().enumerate().filter(|(_, b)| **b).map(|(t, _)| t as u32).collect();
        let got: Vec<u32> = store.entries().iter().map(|e| e.step_index).collect();
        prop_assert_eq!(got, want);
        if !bits.is_empty() {
            let k = memctrl::memory::kept_fraction(&store, bits.len()).unwrap();
            prop_assert!((0.0..=100.0).contains(&k));
        }
    }

    #[test]
    fn weighted_efficiency_is_monotone(s in 0.0f64..=100.0, k in 0.0f64..=100.0, ds in 0.0f64..=100.0, dk in 0.0f64..=100.0) {
        let w = eval::weighted_efficiency(s, k).unwrap();
        prop_assert!((0.0..=100.0).contains(&w));
        let s2 = (s + ds).min(100.0);
        let k2 = (k + dk).min(100.0);
        prop_assert!(eval::weighted_efficiency(s2, k).unwrap() >= w - 1e-12);
        prop_assert!(eval::weighted_efficiency(s, k2).unwrap() <= w + 1e-12);
        prop_assert_eq!(eval::weighted_efficiency(s, 100.0).unwrap(), 0.0);
        prop_assert!(eval::weighted_efficiency(s, 100.0 + dk + 1e-9).is_err());
    }

    #[test]
    fn sign_test_is_a_symmetric_probability(w in 0usize..60, l in 0usize..60) {
        let p = eval::sign_test(w, l);
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert_eq!(p, eval::sign_test(l, w));
        if w >= l {
            prop_assert!(eval::sign_test(w + 1, l) <= p + 1e-12);
        }
    }

    #[test]
    fn balancing_is_an_equal_class_subset(labels in prop::collection::vec(0u8..=1, 2..80), seed in any::<u64>()) {
        let data: Vec<LabeledSample> = labels.iter().enumerate().map(|(i, l)| LabeledSample {
            episode_id: i as u64,
            step: 0,
            label: *l,
            feature: FeatureVector::zeros(),
        }).collect();
        let pos = labels.iter().filter(|l| **l == 1).count();
        let neg = labels.len() - pos;
        match balance_dataset(&data, seed) {
            Err(_) => prop_assert!(pos == 0 || neg == 0),
            Ok(b) => {
                let m = pos.min(neg);
                prop_assert_eq!(b.len(), 2 * m);
                prop_assert_eq!(b.iter().filter(|s| s.label == 1).count(), m);
                let mut ids: Vec<u64> = b.iter().map(|s| s.episode_id).collect();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), b.len());
            }
        }
    }

    #[test]
    fn checkpoints_roundtrip(seed in any::<u64>(), kind in 1u16..=3, cut in 0usize..64) {
        let mut rng = Rng::new(seed);
        let g = GateParams::init(GateKind::from_tag(kind).unwrap(), &mut rng);
        let bytes = io::gate_to_bytes(&g);
        let back = io::gate_from_bytes(&bytes, Path::new("g")).unwrap();
        prop_assert_eq!(&back.mlp.data, &g.mlp.data);
        prop_assert_eq!(back.kind, g.kind);
        prop_assert!(io::gate_from_bytes(&bytes[..bytes.len() - 1 - cut], Path::new("g")).is_err());
        prop_assert!(io::backbone_from_bytes(&bytes, Path::new("g")).is_err());
        let b = BackboneParams::init(ActionSpace::standard().len(), &mut rng);
        let bb = io::backbone_from_bytes(&io::backbone_to_bytes(&b), Path::new("b")).unwrap();
        prop_assert_eq!(bb.head.data, b.head.data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    /// Context only reaches the digest block; the instruction block only
    /// depends on the instruction.
    #[test]
    fn embed_is_block_local(subset in subset_strategy(), seed in 0u64..500, actions in prop::collection::vec(0usize..3, 1..12), keep in prop::collection::vec(any::<bool>(), 12)) {
        let cfg = generate_task(subset, seed).unwrap();
        let (mut env, mut obs) = Env::reset(&cfg);
        let fx = FeatureExtractor::new(&cfg.instruction.text);
        let first = fx.embed(&obs, &Context::empty());
        let mut store = MemoryStore::new();
        for (i, a) in actions.iter().enumerate() {
            if env.is_over() {
                break;
            }
            let f = fx.embed(&obs, &Context::empty());
            store.maybe_insert(MemoryEntry {
                step_index: obs.step_index,
                obs_summary: obs.state_summary.clone(),
                observation: obs.clone(),
                feature: f,
                action_id: *a,
                action_name: ActionSpace::standard().name(*a).unwrap().into(),
            }, keep[i]).unwrap();
            obs = env.step(*a).unwrap().observation;
        }
        let bare = fx.embed(&obs, &Context::empty());
        let full = fx.embed(&obs, &store.retrieve(fx.instruction_feature(), ContextBudget(6)));
        for i in 0..FEATURE_DIM {
            if !DIGEST.contains(&i) {
                prop_assert_eq!(bare.0[i], full.0[i], "index {}", i);
            }
        }
        prop_assert_eq!(bare.block(INSTRUCTION), first.block(INSTRUCTION));
        prop_assert!(full.0.iter().all(|v| v.is_finite()));
    }

    /// valid_actions agrees with what stepping a clone reports.
    #[test]
    fn valid_actions_agree_with_step(subset in subset_strategy(), seed in 0u64..500, actions in prop::collection::vec(0usize..22, 0..15)) {
        let cfg = generate_task(subset, seed).unwrap();
        let (mut env, _) = Env::reset(&cfg);
        let n = ActionSpace::standard().len();
        for a in actions {
            if env.is_over() {
                break;
            }
            let valid = env.valid_actions();
            for b in 0..n {
                let mut probe = env.clone();
                let r = probe.step(b).unwrap();
                prop_assert_eq!(r.action_valid, valid.contains(&b));
                prop_assert!(r.reward == 0.0 || r.reward == 1.0);
            }
            env.step(a % n).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    /// Metrics recomputed from serialized traces equal the in-process ones.
    #[test]
    fn metrics_replay_from_trace_records(seed in any::<u64>(), complete in any::<bool>(), h in 1usize..8) {
        let mut rng = Rng::new(seed);
        let backbone = BackboneParams::init(ActionSpace::standard().len(), &mut rng);
        let variant = if complete { Variant::Complete } else { Variant::None };
        let agent = Agent::new(AgentConfig::new(variant).with_h(h), backbone, None).unwrap();
        let (report, traces) = eval::evaluate(&agent, &[Subset::Base, Subset::Long], 3, seed, &Default::default()).unwrap();
        let text = io::jsonl_to_string(io::kind::TRACES, &pipeline::trace_records(&traces)).unwrap();
        let records = io::parse_jsonl(&text, io::kind::TRACES, Path::new("t")).unwrap();
        let back = pipeline::traces_from_records(&records).unwrap();
        let again = eval::metrics_from_traces(variant, seed, &back).unwrap();
        prop_assert_eq!(again, report);
    }

    #[test]
    fn resolve_is_idempotent(count in 0usize..5, which in 0usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: dir.path().to_path_buf(), ..RunConfig::default() };
        let cmd = match which {
            0 => Command::GenTasks { subsets: None, count },
            1 => Command::TrainOffline { dataset: None },
            2 => Command::TrainOnline { backbone: None },
            _ => Command::Eval { variant: None, backbone: None, gate: None },
        };
        let once = cmd.resolve(&cfg).unwrap();
        prop_assert_eq!(once.resolve(&cfg).unwrap(), once);
    }
}
