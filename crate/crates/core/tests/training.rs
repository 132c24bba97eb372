use wavunet::pipeline::synth::{generate, SyntheticKind};
use wavunet::pipeline::training_patches;
use wavunet::training::train;
use wavunet::{Model, ModelConfig, TrainConfig};

#[test]
fn loss_on_a_repeated_sample_trends_down() {
    let images: Vec<_> = generate(SyntheticKind::Scenes, 1, 32, 9).into_iter().map(|(_, x)| x).collect();
    let patch = training_patches(&images, 32, 32, None, 0).unwrap().remove(0);
    let data = vec![patch; 4];
    let cfg = TrainConfig { epochs: 30, batch_size: 4, lr_init: 4e-3, ..Default::default() };
    let model = Model::build(ModelConfig { base_channels: 8, depth: 2, ..Default::default() }).unwrap();
    let losses: Vec<f64> = train(model, &data, cfg, None).unwrap().losses.iter().map(|l| l.loss).collect();
    // noise is redrawn every epoch, so compare 10-epoch window means
    let means: Vec<f64> = losses.windows(10).step_by(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    eprintln!("window means {means:?}");
    assert!(means.windows(2).all(|p| p[1] <= p[0]), "{means:?}");
}
