//! MNIST A/B/C superclass run: SAE + latent SVM against an equal-encoder softmax
//! classifier at a given label budget.
//!
//! SAE_MNIST_DIR=data/mnist cargo run --release -p sae-core --example mnist_superclass -- \
//!     [labels] [epochs] [gamma] [seed]

use std::path::PathBuf;
use std::time::Instant;

use sae_core::classifier::{ClassifierConfig, SoftmaxClassifier};
use sae_core::data::{apply_decomposition, load_idx, split_labeled, Decomposition};
use sae_core::mds::DistanceSpec;
use sae_core::nn::Activation;
use sae_core::optim::OptimizerKind;
use sae_core::sae::{init_model, reconstruction_rmse, MlpSpec, TrainConfig, Trainer};
use sae_core::svm::{classification_error, fit_on_labeled, SvmParams};

fn main() -> sae_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let labels = arg(0, 600.0) as usize;
    let epochs = arg(1, 10.0) as usize;
    let gamma = arg(2, 0.5);
    let seed = arg(3, 0.0) as u64;

    let dir = PathBuf::from(std::env::var("SAE_MNIST_DIR").unwrap_or_else(|_| "data/mnist".into()));
    let t = Instant::now();
    let abc = Decomposition::mnist_abc();
    let train = apply_decomposition(&load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?, &abc)?;
    let test = apply_decomposition(&load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?, &abc)?;
    let train = split_labeled(&train, labels, seed)?;
    eprintln!("loaded in {:.1}s", t.elapsed().as_secs_f64());

    let dims = vec![784, 256, 64, 10];
    let spec = MlpSpec::new(dims.clone(), Activation::Sigmoid)?;
    let cfg =
        TrainConfig { gamma, learning_rate: 1e-3, batch_size: 64, epochs, seed, optimizer: OptimizerKind::Adam, ..Default::default() };
    let dist = DistanceSpec::uniform(3, 50.0)?;
    let mut trainer = Trainer::new(init_model(&spec, seed)?, dist, cfg)?;
    let svm_params = SvmParams { seed, ..Default::default() };
    for e in 0..epochs {
        let t = Instant::now();
        let m = trainer.run_epoch(&train)?;
        let svm = fit_on_labeled(trainer.model(), &train, &svm_params)?;
        let err = classification_error(&svm, trainer.model(), &test)?;
        eprintln!("epoch {e}: rmse={:.4} S={:.4} err={:.4} ({:.1}s)", m.recon_rmse, m.structural_loss, err, t.elapsed().as_secs_f64());
    }
    let test_ids: Vec<usize> = (0..test.len()).collect();
    let rmse = reconstruction_rmse(trainer.model(), &test, &test_ids)?;

    let t = Instant::now();
    let mut clf = SoftmaxClassifier::<f32>::new(&dims, 3, seed)?;
    let ccfg = ClassifierConfig { seed, ..Default::default() };
    clf.fit(&train, &ccfg)?;
    let clf_err = clf.error(&test)?;
    eprintln!("softmax trained in {:.1}s", t.elapsed().as_secs_f64());

    let svm = fit_on_labeled(trainer.model(), &train, &svm_params)?;
    println!(
        "labels={labels} gamma={gamma} seed={seed} sae_err={:.4} softmax_err={clf_err:.4} test_rmse={rmse:.4}",
        classification_error(&svm, trainer.model(), &test)?
    );
    Ok(())
}
