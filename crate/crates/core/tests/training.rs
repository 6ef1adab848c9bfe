use margin_rm::data::{gen_synthetic, PreferenceExample, SyntheticConfig};
use margin_rm::losses::{LossKind, LossVariant};
use margin_rm::model::{init_net, Activation};
use margin_rm::training::{adamw_step, batch_gradient, OptimState, TrainConfig};

const KINDS: [LossKind; 4] = [
    LossKind::Plain,
    LossKind::FixedMargin,
    LossKind::BatchAdaptive,
    LossKind::ThresholdFiltered,
];

fn data() -> Vec<PreferenceExample> {
    gen_synthetic(&SyntheticConfig {
        d_prompt: 4,
        d_response: 4,
        n_train: 64,
        n_test: 1,
        noise_rate: 0.0,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .train
}

/// 50 full-batch AdamW steps at lr 1e-2. With `μ_B` differentiated, every
/// variant minimises its own batch loss, so that loss must fall. With `μ_B`
/// held constant the target moves with the margins, so only the plain
/// loss (which the margins still have to improve) is checked.
#[test]
fn full_batch_loss_descends_for_every_variant() {
    let data = data();
    let batch: Vec<&PreferenceExample> = data.iter().collect();
    let plain = LossVariant::new(LossKind::Plain);
    for kind in KINDS {
        for stop_gradient_mu in [false, true] {
            let loss = LossVariant {
                stop_gradient_mu,
                ..LossVariant::new(kind)
            };
            let cfg = TrainConfig {
                learning_rate: 1e-2,
                loss,
                ..TrainConfig::desk()
            };
            let mut net = init_net(4, 4, &[8], Activation::Tanh, 1).unwrap();
            let mut state = OptimState::new(&net);
            let tracked = if stop_gradient_mu { &plain } else { &cfg.loss };
            let (first, _) = batch_gradient(&net, &batch, tracked).unwrap();
            for _ in 0..50 {
                let (_, grads) = batch_gradient(&net, &batch, &cfg.loss).unwrap();
                adamw_step(&mut net, &grads, &mut state, &cfg).unwrap();
            }
            let (last, _) = batch_gradient(&net, &batch, tracked).unwrap();
            assert!(
                last.loss < first.loss,
                "{kind} stop_gradient_mu={stop_gradient_mu}: {} -> {}",
                first.loss,
                last.loss
            );
            assert_eq!(state.t, 50);
        }
    }
}

#[test]
fn gradient_reaches_every_layer() {
    let data = data();
    let batch: Vec<&PreferenceExample> = data.iter().take(16).collect();
    let net = init_net(4, 4, &[8, 5], Activation::Relu, 2).unwrap();
    for kind in KINDS {
        let (_, grads) = batch_gradient(&net, &batch, &LossVariant::new(kind)).unwrap();
        assert_eq!(grads.tensors.len(), 6);
        // The output bias cancels in every margin.
        assert!(grads.tensors[5].iter().all(|g| *g == 0.0));
        for (i, t) in grads.tensors[..5].iter().enumerate() {
            assert!(
                t.iter().any(|g| *g != 0.0),
                "{kind}: tensor {i} has no gradient"
            );
        }
    }
}
