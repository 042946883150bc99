//! The README's library example: plant a world, fit a weekly model,
//! predict one day ahead. Run with `cargo run --example quickstart`.

use roadcast::lowrank::truncated_svd;
use roadcast::predictors::{fit_cyclo, CycleConfig};
use roadcast::synthgen::{generate_network, generate_truth, SynthSpec};

fn main() -> Result<(), roadcast::Error> {
    let spec = SynthSpec::default_world(120, 28, 7);
    let network = generate_network(&spec)?;
    let truth = generate_truth(&spec, &network)?;

    let training = truth.prefix(21 * 144)?; // first three weeks at 10 min
    let (basis, _) = truncated_svd(&training, 25)?;
    let anchor = training.grid.start_epoch;
    let model = fit_cyclo(&training, basis, CycleConfig::weekly(600, anchor)?)?;
    let weights = model.predict(anchor as f64 + 86_400.0)?; // per-segment seconds
    println!("{} segments predicted", weights.len());
    Ok(())
}
