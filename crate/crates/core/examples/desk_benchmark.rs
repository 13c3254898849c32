//! Transfer-probe comparison of the full objective against the contrastive
//! baseline and the variant without reconstruction terms.
//!
//! Usage: `cargo run --release --example desk_benchmark [config-file] [seeds]`

use std::time::Instant;

use superinfo::config::RunConfig;
use superinfo::pipeline::run_ablation;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let text = match args.get(1) {
        Some(path) => std::fs::read_to_string(path).expect("read config"),
        None => include_str!("../configs/desk_benchmark.cfg").to_string(),
    };
    let run = RunConfig::parse(&text).expect("parse config");
    let n_seeds: u64 = args.get(2).map_or(10, |s| s.parse().expect("seed count"));
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let grid = [[0.01, 0.01, 0.1, 0.1], [0.0; 4], [0.01, 0.01, 0.0, 0.0]];
    let start = Instant::now();
    let rows = run_ablation(&run, &grid, &seeds).expect("ablation");
    let n = seeds.len();
    let (full, rest) = rows.split_at(n);
    let (base, no_recon) = rest.split_at(n);
    let (mut wins_base, mut wins_recon) = (0, 0);
    println!("seed  full_src full_tr  base_src base_tr  norec_src norec_tr");
    for i in 0..n {
        let (f, b, r) = (&full[i], &base[i], &no_recon[i]);
        wins_base += usize::from(f.transfer_acc_mean >= b.transfer_acc_mean);
        wins_recon += usize::from(r.transfer_acc_mean <= f.transfer_acc_mean);
        println!(
            "{:>4}  {:.4}   {:.4}   {:.4}   {:.4}   {:.4}    {:.4}",
            f.seed, f.source_acc, f.transfer_acc_mean, b.source_acc, b.transfer_acc_mean, r.source_acc, r.transfer_acc_mean
        );
    }
    println!("full >= baseline: {wins_base}/{n}; no-recon <= full: {wins_recon}/{n}; {:.1}s", start.elapsed().as_secs_f64());
}
