//! CLI-level contracts that need real directories: the evaluate
//! subcommand scoring a sample directory against a dataset on disk.

use gnf::graph::{export_graphs, load_graph_dataset, GraphDataset};

fn run(args: &[&str]) {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    gnf::cli::run(&argv).unwrap_or_else(|e| panic!("{args:?}: {e}"));
}

#[test]
fn evaluating_the_test_split_against_itself_scores_zero() {
    std::env::remove_var("GNF_OUT");
    let out = std::env::temp_dir().join("gnf_cli_eval_self");
    std::fs::remove_dir_all(&out).ok();
    let out_s = out.to_string_lossy().to_string();
    run(&["gen-data", "--preset", "ci", "--seed", "9", "--out", &out_s]);

    // A samples directory holding exactly the test split.
    let data = load_graph_dataset(&out.join("data").join("community-small")).unwrap();
    let test_graphs: Vec<_> = data.test_graphs().into_iter().cloned().collect();
    let count = test_graphs.len();
    assert!(count >= 2);
    let copy = GraphDataset {
        graphs: test_graphs,
        train_idx: Vec::new(),
        test_idx: (0..count).collect(),
        name: "community-small".into(),
    };
    export_graphs(&out.join("samples").join("community-small"), &copy).unwrap();

    run(&["evaluate", "--preset", "ci", "--seed", "9", "--out", &out_s]);

    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let model_row = csv
        .lines()
        .find(|l| l.starts_with("community-small,"))
        .unwrap_or_else(|| panic!("no model row in: {csv}"));
    let fields: Vec<&str> = model_row.split(',').collect();
    for mmd in &fields[2..5] {
        assert_eq!(mmd.parse::<f64>().unwrap(), 0.0, "row {model_row}");
    }
    std::fs::remove_dir_all(&out).ok();
}
