use std::sync::Arc;

use iddqn::agent::AgentConfig;
use iddqn::baselines::*;
use iddqn::env::{EnvConfig, TrackEnv};
use iddqn::intervention::ScriptedExpert;
use iddqn::track::{loop_track, Track};
use iddqn::Net;

fn setup() -> (Arc<Track>, TrackEnv, DemoDataset) {
    let track = Arc::new(Track::new(loop_track(0)).unwrap());
    let mut env = TrackEnv::new(track.clone(), EnvConfig::default(), 0).unwrap();
    let demos = collect_demonstrations(&mut ScriptedExpert::new(track.clone()), &mut env, 1500, 0).unwrap();
    (track, env, demos)
}

#[test]
fn bc_fits_expert_labels() {
    let (_, _, demos) = setup();
    let mut net = Net::standard(0);
    let rep = bc_train(&demos, &mut net, &BcConfig::default()).unwrap();
    assert!(rep.accuracy > 0.6, "{rep:?}");
    assert!(rep.final_loss.is_finite());
    let mut again = Net::standard(0);
    assert_eq!(bc_train(&demos, &mut again, &BcConfig::default()).unwrap(), rep);
    assert_eq!(again, net);
}

#[test]
fn hg_dagger_aggregates_expert_labels() {
    let (track, mut env, demos) = setup();
    let mut net = Net::standard(1);
    let cfg = HgDaggerConfig {
        iterations: 3,
        add_per_iter: 100,
        bc: BcConfig {
            epochs: 5,
            ..BcConfig::default()
        },
        ..HgDaggerConfig::default()
    };
    let (data, rep) = hg_dagger_run(&demos, &ScriptedExpert::new(track), &mut env, &cfg, &mut net).unwrap();
    assert_eq!(rep.fits.len(), 3);
    assert_eq!(rep.dataset_sizes[0], demos.len());
    assert!(rep.dataset_sizes.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*rep.dataset_sizes.last().unwrap(), data.len());
    data.validate().unwrap();
}

#[test]
fn dqfd_pretraining_imitates_demos() {
    let (_, _, demos) = setup();
    let cfg = DqfdConfig {
        pretrain_steps: 600,
        agent: AgentConfig {
            seed: 3,
            ..AgentConfig::default()
        },
        ..DqfdConfig::default()
    };
    let mut d = Dqfd::<f32>::new(cfg, &demos).unwrap();
    assert_eq!(d.demo_count(), demos.len());
    let before = d.demo_agreement().unwrap();
    d.pretrain().unwrap();
    let after = d.demo_agreement().unwrap();
    assert!(after > before + 0.2, "{before} -> {after}");
}
