//! Synthetic ablation over several pool seeds.
//!
//! `cargo run --release --example ablation -- [n_seeds] [k_shot]`

use h_ensemble::synth::{
    run_ablation, Domain, METHOD_AVERAGE, METHOD_FULL, METHOD_SIMPLIFIED, METHOD_SINGLE,
};

fn main() -> h_ensemble::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let k_shot: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);

    println!("seed  single  avg_w   full    simpl   mass_A  mass_B");
    for seed in 0..n_seeds {
        let r = run_ablation(seed, k_shot)?;
        let acc = |m| r.accuracy(m).unwrap_or(f64::NAN);
        println!(
            "{seed:<5} {:.4}  {:.4}  {:.4}  {:.4}  {:+.3}  {:+.3}",
            acc(METHOD_SINGLE),
            acc(METHOD_AVERAGE),
            acc(METHOD_FULL),
            acc(METHOD_SIMPLIFIED),
            r.weight_mass(Domain::A),
            r.weight_mass(Domain::B),
        );
    }
    Ok(())
}
