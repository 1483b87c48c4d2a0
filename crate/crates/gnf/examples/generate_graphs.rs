// Run with `cargo run --example generate_graphs`
//
// The two-stage generative pipeline end to end at toy scale: train the
// auto-encoder on community graphs, fit a flow to the standardized node
// embeddings, then sample: draw a node count from the empirical prior,
// invert the flow on Gaussian noise, un-standardize, and decode distances
// into edges. Prints the first sample as DOT for quick eyeballing.

use gnf::autoencoder::{train_autoencoder, AeConfig, AeModel, AeTrainConfig};
use gnf::density::{DensityArch, DensityModel, DensityTrainConfig};
use gnf::generate::{fit_node_prior, train_embedding_flow, GenFlowTrainConfig, GeneratorModel};
use gnf::graph::{gen_community_small, split, Graph};
use gnf::rng::Rng;

fn main() -> gnf::error::Result<()> {
    let mut rng = Rng::new(17);
    let data = split(gen_community_small(24, &mut rng), &mut rng);

    let ae_cfg = AeConfig {
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
    let mut ae = AeModel::init(ae_cfg, &mut rng)?;
    let ae_run = train_autoencoder(
        &mut ae,
        &data,
        &AeTrainConfig { steps: 1500, eval_examples: 8, ..AeTrainConfig::default() },
    )?;
    println!("stage 1 (auto-encoder): test bce/node {:.4}", ae_run.final_test_bce);

    let arch = DensityArch { steps: 4, heads: 2, head_dim: 4, msg_hidden: vec![16], msg_dim: 8 };
    let mut flow = DensityModel::new_gnf(6, &arch, &mut rng)?;
    let train = data.train_graphs();
    let gen_cfg = GenFlowTrainConfig {
        density: DensityTrainConfig {
            steps: 800,
            log_every: 200,
            eval_examples: 8,
            ..DensityTrainConfig::default()
        },
        renoise_embeddings: true,
    };
    let (flow_run, norm) = train_embedding_flow(&mut flow, &ae, &train, &data.test_graphs(), &gen_cfg)?;
    println!("stage 2 (embedding flow): test nll/node {:.4}", flow_run.final_test_nll);

    let generator = GeneratorModel { ae, flow, norm, prior: fit_node_prior(&train)? };
    let batch = generator.generate_batch(8, "demo", 23)?;
    let nodes: usize = batch.graphs.iter().map(Graph::n).sum();
    let edges: usize = batch.graphs.iter().map(Graph::num_edges).sum();
    println!("generated 8 graphs: {:.1} nodes, {:.1} edges on average", nodes as f64 / 8.0, edges as f64 / 8.0);
    println!("{}", batch.graphs[0].to_dot());
    Ok(())
}
