use std::sync::Arc;

use proptest::prelude::*;
use searchplan::autodiff::{load_checkpoint, save_checkpoint};
use searchplan::drl::{build_architecture, AgentConfig, ArchName, Preset, VecEnv};
use searchplan::env::{probability_efficiency, EnvConfig, ObsMode, SearchEnv, TerminationCause};
use searchplan::geom::Polyline;
use searchplan::harness::{generate_dataset, greedy_baseline, PathDataset};
use searchplan::rae::{train_rae, FrozenEncoder, RaeArch, RaeModel, RaeTrainConfig};

fn small_rae() -> RaeArch {
    RaeArch { input: 2, enc_hidden: 16, latent: 48, dec_hidden: 24, dec_layers: 2 }
}

fn tiny_agent(arch: ArchName, encoder: Option<Arc<FrozenEncoder>>) -> searchplan::drl::Agent {
    let mut cfg = AgentConfig::new(arch, Preset::Desk);
    cfg.width = 16;
    cfg.seed = 3;
    cfg.sac.learning_starts = 64;
    cfg.sac.batch_size = 32;
    cfg.ppo.n_steps = 32;
    cfg.ppo.batch_size = 64;
    cfg.ppo.n_epochs = 2;
    build_architecture(&cfg, encoder).unwrap()
}

#[test]
fn dataset_to_encoder_to_policy() {
    let env = EnvConfig::default();
    let ds = generate_dataset(8, &env, 2).unwrap();
    let text = ds.to_text();
    assert_eq!(PathDataset::from_text(&text).unwrap(), ds);

    let cfg = RaeTrainConfig { max_epochs: 2, ..RaeTrainConfig::desk() };
    let out = train_rae(&ds.paths, small_rae(), &cfg, 1, |_| {}).unwrap();
    let encoder = FrozenEncoder::from_model(&out.model);
    let before = encoder.checksum();

    for arch in ArchName::ALL {
        let mut agent = tiny_agent(arch, Some(encoder.clone()));
        let mut rows = Vec::new();
        agent.train(400, 200, |r| rows.push(*r)).unwrap();
        assert!(!rows.is_empty(), "{arch}");
        let last = rows.last().unwrap().global_step;
        assert!((400..408).contains(&last), "{arch}: {last}");
        let m = agent.evaluate(3, 8).unwrap();
        assert!(m.episodes.iter().all(|e| e.length <= 64 && (0.0..=1.0).contains(&e.efficiency)), "{arch}");
    }
    assert_eq!(encoder.checksum(), before, "policy training must not touch the encoder");
}

#[test]
fn policy_checkpoint_restores_actions() {
    let agent = tiny_agent(ArchName::FsSacLstm, None);
    let dir = std::env::temp_dir().join(format!("pipeline-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("p.ckpt");
    save_checkpoint(agent.store(), &path).unwrap();
    let mut fresh = {
        let mut cfg = agent.config().clone();
        cfg.seed = 99;
        build_architecture(&cfg, None).unwrap()
    };
    let venv = VecEnv::new(&EnvConfig::default(), ObsMode::FrameStack, None, 3).unwrap();
    let obs = venv.observations().to_vec();
    assert_ne!(fresh.act(&obs), agent.act(&obs));
    fresh.load_params(&load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(fresh.act(&obs), agent.act(&obs));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn rae_checkpoint_round_trip_is_bit_exact() {
    let model = RaeModel::<f32>::new(small_rae(), 4).unwrap();
    let dir = std::env::temp_dir().join(format!("pipeline-rae-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rae.ckpt");
    save_checkpoint(&model.store, &path).unwrap();
    let back = RaeModel::<f32>::from_store(load_checkpoint(&path).unwrap()).unwrap();
    let p: Vec<[f64; 2]> = (0..20).map(|t| [0.01 * t as f64, -0.02 * t as f64]).collect();
    let (za, _) = model.encode(&p, &model.encoder_state(1));
    let (zb, _) = back.encode(&p, &back.encoder_state(1));
    assert_eq!(za, zb);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn greedy_beats_straight_line() {
    let env = EnvConfig::default();
    let greedy = greedy_baseline(&env, 10, 4).unwrap();
    let straight = searchplan::drl::evaluate_policy(&env, ObsMode::FrameStack, None, 10, 4, |_, _| 0.0).unwrap();
    assert!(greedy.mean_efficiency > straight.mean_efficiency);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Seen probability never decreases, efficiency stays in [0, 1] and
    /// matches a from-scratch recomputation at the end of the episode.
    #[test]
    fn episode_invariants(seed in 0u64..1000, actions in prop::collection::vec(-1.0f64..1.0, 64)) {
        let cfg = EnvConfig { seed, ..EnvConfig::default() };
        let mut env = SearchEnv::new(cfg.clone(), ObsMode::FrameStack, None, 0).unwrap();
        let mut last_p = env.state().p_prev;
        for a in actions {
            let (obs, o) = env.step(a).unwrap();
            prop_assert_eq!(obs.len(), env.observation_dim());
            prop_assert!(env.state().p_prev >= last_p - 1e-15);
            last_p = env.state().p_prev;
            let e = env.state().efficiency();
            prop_assert!((0.0..=1.0).contains(&e));
            if o.done {
                break;
            }
        }
        prop_assert!(env.state().t <= cfg.n_waypoints);
        let st = env.state();
        // the out-of-bounds waypoint is recorded but sees nothing
        let mut flown = st.path.vertices().to_vec();
        if st.termination_cause == Some(TerminationCause::OutOfBounds) {
            flown.pop();
        }
        let direct = probability_efficiency(&st.pdm, &Polyline::new(flown).unwrap(), cfg.buffer_radius).unwrap();
        prop_assert!((direct - st.efficiency()).abs() < 1e-6, "{} vs {}", direct, st.efficiency());
    }
}
