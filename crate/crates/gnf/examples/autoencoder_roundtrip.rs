// Run with `cargo run --example autoencoder_roundtrip`
//
// Trains the noise-feature graph auto-encoder on a handful of two-community
// graphs, then reconstructs a held-out graph: encode with fresh noise,
// decode pairwise distances to edge probabilities, threshold at 1/2, and
// count edge mistakes. Scale is kept small so the run takes seconds; the
// desk-scale run drives the error to a few percent.

use gnf::autoencoder::{
    count_incorrect_edges, decode_edge_prob, train_autoencoder, AeConfig, AeModel, AeTrainConfig,
};
use gnf::graph::{gen_community_small, split};
use gnf::rng::Rng;

fn main() -> gnf::error::Result<()> {
    let mut rng = Rng::new(5);
    let data = split(gen_community_small(24, &mut rng), &mut rng);

    let cfg = AeConfig {
        embed_dim: 6,
        noise_dim: 6,
        noise_var: 0.3,
        temperature: 10.0,
        mp_steps: 4,
        heads: 2,
        head_dim: 4,
        msg_hidden: vec![16],
        msg_dim: 8,
    };
    let mut model = AeModel::init(cfg, &mut rng)?;
    let train_cfg = AeTrainConfig { steps: 1500, eval_examples: 8, ..AeTrainConfig::default() };
    let run = train_autoencoder(&mut model, &data, &train_cfg)?;
    println!(
        "bce/node after {} steps: train {:.4}, test {:.4}",
        train_cfg.steps, run.final_train_bce, run.final_test_bce
    );

    for &i in data.test_idx.iter().take(3) {
        let g = &data.graphs[i];
        let embed = model.encode_fresh(g, &mut rng)?;
        let probs = decode_edge_prob(&embed, model.cfg.temperature)?;
        let wrong = count_incorrect_edges(&probs, g);
        println!(
            "graph {i}: {} nodes, {} edges, {} incorrect after thresholding",
            g.n(),
            g.num_edges(),
            wrong
        );
    }
    Ok(())
}
