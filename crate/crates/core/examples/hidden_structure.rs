//! Trains a plain autoencoder and a structuring autoencoder on data whose class
//! signal hides beneath dominant nuisance variance, then compares latent SVM accuracy.
//!
//! cargo run --release -p sae-core --example hidden_structure -- [seed] [labels] [epochs] [gamma]

use sae_core::data::split_labeled;
use sae_core::mds::DistanceSpec;
use sae_core::nn::Activation;
use sae_core::optim::OptimizerKind;
use sae_core::sae::{init_model, train, MlpSpec, TrainConfig};
use sae_core::svm::{classification_error, fit_on_labeled, SvmParams};
use sae_core::synth::HiddenStructure;

fn main() -> sae_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(0, 0.0) as u64;
    let labels = arg(1, 100.0) as usize;
    let epochs = arg(2, 100.0) as usize;
    let gamma = arg(3, 0.5);

    let (all, _) = HiddenStructure { seed, ..Default::default() }.generate()?;
    let train_ids: Vec<usize> = (0..800).collect();
    let test_ids: Vec<usize> = (800..1000).collect();
    let train_ds = split_labeled(&all.subset(&train_ids), labels, seed)?;
    let test_ds = all.subset(&test_ids);

    let spec = MlpSpec::new(vec![20, 64, 2], Activation::Identity)?;
    let dist = DistanceSpec::uniform(2, 10.0)?;
    for g in [0.0, gamma] {
        let cfg = TrainConfig {
            gamma: g,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            epochs,
            seed,
            ..Default::default()
        };
        let model = init_model(&spec, seed)?;
        let t = std::time::Instant::now();
        let (model, hist) = train(model, &train_ds, &dist, &cfg, |_| {})?;
        let svm = fit_on_labeled(&model, &train_ds, &SvmParams::default())?;
        let err = classification_error(&svm, &model, &test_ds)?;
        let last = hist.last().unwrap();
        println!(
            "gamma={g:.2} test_acc={:.4} rmse={:.4} structural={:.4} ({:.1}s)",
            1.0 - err,
            last.recon_rmse,
            last.structural_loss,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
