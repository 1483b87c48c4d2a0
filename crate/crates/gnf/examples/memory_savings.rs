// Run with `cargo run --example memory_savings`
//
// The point of a reversible flow: backprop does not need stored
// activations, because each step's input is reconstructed from its output
// on the way back. Peak retained-activation count stays flat as the flow
// deepens, while ordinary taped backprop grows linearly.

use gnf::flow::{FlowConfig, FlowModel};
use gnf::rng::Rng;
use gnf::toy::{make_toy_dataset, train_supervised_toy, BackpropMode, ToyTrainConfig};

fn main() -> gnf::error::Result<()> {
    let mut rng = Rng::new(11);
    let data = make_toy_dataset(3, 6, 4, &mut rng)?;

    println!("{:>6} {:>14} {:>14}", "depth", "stored peak", "reversible peak");
    for steps in [2usize, 4, 8, 16] {
        let cfg = FlowConfig {
            feature_dim: 4,
            steps,
            heads: 2,
            head_dim: 4,
            msg_hidden: vec![8],
            msg_dim: 6,
            normalize_input: false,
        };
        let mut peaks = [0usize; 2];
        for (slot, mode) in [BackpropMode::Stored, BackpropMode::Reversible].iter().enumerate() {
            let mut model = FlowModel::init(cfg.clone(), &mut rng)?;
            let report = train_supervised_toy(
                &mut model,
                &data,
                &ToyTrainConfig { train_steps: 3, lr: 1e-3, grad_clip: 4.0, mode: *mode },
            )?;
            peaks[slot] = report.peak_activations;
        }
        println!("{:>6} {:>14} {:>14}", steps, peaks[0], peaks[1]);
    }
    Ok(())
}
