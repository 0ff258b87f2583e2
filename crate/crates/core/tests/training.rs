use polypseg_core::dataset::{synth_dataset, SynthConfig};
use polypseg_core::network::{
    mini_fcn, rgbd_extend, train_loop, Checkpoint, MiniArch, MiniConfig, Network, TrainConfig, TrainObserver, Variant,
};
use polypseg_core::Error;

fn small_net(variant: Variant) -> Network {
    let cfg = MiniConfig {
        arch: MiniArch::MiniAlex,
        width: 2,
        downsample: 4,
        classes: 10,
    };
    Network::new(mini_fcn(&cfg, variant).unwrap(), 1).unwrap()
}

fn data() -> Vec<polypseg_core::dataset::Sample> {
    synth_dataset(&SynthConfig {
        size: 32,
        count: 4,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

#[derive(Default)]
struct Recorder {
    iterations: Vec<u64>,
    checkpoints: Vec<Checkpoint>,
}

impl TrainObserver for Recorder {
    fn on_iteration(&mut self, iteration: u64, _loss: f64) {
        self.iterations.push(iteration);
    }

    fn on_checkpoint(&mut self, c: &Checkpoint) -> polypseg_core::Result<()> {
        self.checkpoints.push(c.clone());
        Ok(())
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let net = small_net(Variant::Plain);
    let before = net.params.clone();
    let cfg = TrainConfig {
        lr: 0.0,
        iterations: 3,
        batch_size: 2,
        ..Default::default()
    };
    let out = train_loop(Checkpoint::fresh(net, [0; 32]), &data(), &cfg, &mut ()).unwrap();
    assert_eq!(out.checkpoint.params, before);
    assert_eq!(out.losses.len(), 3);
    let opt = out.checkpoint.optimizer.unwrap();
    assert_eq!(opt.momentum, 0.99);
    assert_eq!(opt.base_lr, 0.0);
}

#[test]
fn loss_decreases_and_checkpoints_are_emitted() {
    let cfg = TrainConfig {
        lr: 0.01,
        iterations: 40,
        batch_size: 2,
        momentum: 0.9,
        checkpoint_every: Some(10),
        ..Default::default()
    };
    let mut rec = Recorder::default();
    let out = train_loop(Checkpoint::fresh(small_net(Variant::Bn), [7; 32]), &data(), &cfg, &mut rec).unwrap();
    assert_eq!(rec.iterations, (1..=40).collect::<Vec<_>>());
    let at: Vec<u64> = rec.checkpoints.iter().map(|c| c.iteration).collect();
    assert_eq!(at, vec![10, 20, 30, 40]);
    assert!(rec.checkpoints.iter().all(|c| c.config_digest == [7; 32]));
    let head: f64 = out.losses[..5].iter().sum();
    let tail: f64 = out.losses[35..].iter().sum();
    assert!(tail < head, "loss {head} -> {tail}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = data();
    let full = TrainConfig {
        lr: 0.01,
        iterations: 6,
        batch_size: 2,
        patch: Some(24),
        vertical_flip: true,
        seed: 9,
        ..Default::default()
    };
    let straight = train_loop(Checkpoint::fresh(small_net(Variant::Bn), [0; 32]), &data, &full, &mut ()).unwrap();
    let half = TrainConfig {
        iterations: 3,
        ..full.clone()
    };
    let first = train_loop(Checkpoint::fresh(small_net(Variant::Bn), [0; 32]), &data, &half, &mut ()).unwrap();
    let bytes = first.checkpoint.to_bytes().unwrap();
    let resumed = train_loop(Checkpoint::from_bytes(&bytes).unwrap(), &data, &full, &mut ()).unwrap();
    assert_eq!(resumed.checkpoint, straight.checkpoint);
    assert_eq!([first.losses, resumed.losses].concat(), straight.losses);
}

#[test]
fn divergence_stops_with_last_finite_state() {
    let cfg = TrainConfig {
        lr: 1e6,
        momentum: 0.0,
        iterations: 50,
        batch_size: 2,
        ..Default::default()
    };
    let mut rec = Recorder::default();
    let err = train_loop(Checkpoint::fresh(small_net(Variant::Plain), [0; 32]), &data(), &cfg, &mut rec).unwrap_err();
    let Error::Divergence { iteration, .. } = err else {
        panic!("expected divergence, got {err}");
    };
    let last = rec.checkpoints.last().expect("final state handed to the observer");
    assert_eq!(last.iteration as usize + 1, iteration);
    assert!(last.params.iter().all(|p| p.value.all_finite()));
}

#[test]
fn depth_training_requires_depth_maps() {
    let mut samples = data();
    for s in &mut samples {
        s.depth = None;
    }
    let cfg = TrainConfig {
        iterations: 2,
        with_depth: true,
        ..Default::default()
    };
    let rgb = small_net(Variant::Plain);
    let (spec, params) = rgbd_extend(&rgb.spec, &rgb.params).unwrap();
    let net = Network::from_parts(spec, params).unwrap();
    let err = train_loop(Checkpoint::fresh(net, [0; 32]), &samples, &cfg, &mut ()).unwrap_err();
    assert!(matches!(&err, Error::Validation(m) if m.contains("synth3_") && m.contains("depth")), "{err}");

    // A 3-channel network cannot take the 4-channel batch.
    let full = data();
    assert!(train_loop(Checkpoint::fresh(small_net(Variant::Plain), [0; 32]), &full, &cfg, &mut ()).is_err());
}
