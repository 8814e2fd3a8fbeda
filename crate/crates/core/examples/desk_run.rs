//! Trains a small model on a procedural corpus and compares it with bicubic.
//!
//! cargo run --release -p edgesr-core --example desk_run -- [variant]

use edgesr_core::harness::synth::synthetic_corpus;
use edgesr_core::harness::{ablate, evaluate_pairs, RunOptions, TrainConfig, Variant};
use edgesr_core::imageio::PatchPair;
use std::time::Instant;

fn main() -> edgesr_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = args.first().map(|s| Variant::parse(s)).transpose()?.unwrap_or(Variant::Full);
    let mut cfg = TrainConfig::default();
    cfg.apply_text(
        "patch_lr = 12\nbatch_size = 8\npatches_per_epoch = 64\nschedule.epochs_pretrain = 5\nschedule.epochs_full = 15\n\
         model.channels = 16\nmodel.edge_channels = 8\nmodel.blocks = 2\nmodel.disc_channels = 8\nmodel.disc_blocks = 4\noptim.lr = 1e-3\n",
    )?;
    for kv in args.iter().skip(1) {
        cfg.apply_text(kv)?;
    }
    let train = synthetic_corpus(32, 96, 96, 1)?;
    let held_out = synthetic_corpus(8, 96, 96, 2)?;
    let eval = held_out.iter().map(|im| PatchPair::from_image(im, cfg.scale)).collect::<edgesr_core::Result<Vec<_>>>()?;
    let out = std::env::temp_dir().join(format!("desk_{}", variant.name()));
    let t = Instant::now();
    let run = ablate(&cfg, variant, &train, &out, &RunOptions { verbose: true, ..Default::default() })?;
    let r = evaluate_pairs(&mut run.trainer.model(), &eval)?;
    println!(
        "{}: model {:.3} dB, bicubic {:.3} dB, margin {:+.3} dB, {:.1}s",
        variant.name(),
        r.model_psnr,
        r.bicubic_psnr,
        r.model_psnr - r.bicubic_psnr,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
