//! Writes a synthetic clustered growth-curve dataset as CSV, in the shape
//! the `multitask` subcommand expects: columns task_id, x, y.
//!
//! Usage: cargo run -p skipgp-cli --example generate_growth_data -- \
//!     [seed] [tasks] [clusters] [obs_per_task] [path]

use std::env;
use std::fs;

fn main() {
    let args: Vec<String> = env::args().collect();
    let seed: u64 = args.get(1).map_or(7, |s| s.parse().expect("seed"));
    let tasks: usize = args.get(2).map_or(15, |s| s.parse().expect("tasks"));
    let clusters: usize = args.get(3).map_or(3, |s| s.parse().expect("clusters"));
    let obs: usize = args.get(4).map_or(10, |s| s.parse().expect("obs_per_task"));
    let path = args
        .get(5)
        .cloned()
        .unwrap_or_else(|| "data/growth_curves.csv".to_string());

    let (dataset, _) =
        skipgp::generate_growth_curves(seed, tasks, clusters, obs).expect("generation failed");

    let mut csv = String::from("task_id,x,y\n");
    for i in 0..dataset.len() {
        csv.push_str(&format!(
            "t{:02},{},{}\n",
            dataset.assignment().task(i),
            dataset.inputs()[i],
            dataset.targets()[i]
        ));
    }
    if let Some(parent) = std::path::Path::new(&path).parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).expect("creating output directory");
        }
    }
    fs::write(&path, csv).expect("writing csv");
    println!(
        "wrote {} observations over {} tasks to {}",
        dataset.len(),
        tasks,
        path
    );
}
