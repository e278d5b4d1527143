//! Reverse-mode gradients against central finite differences on random 8x8
//! instances, one test per block family.

use auxfuse_core::gradcheck::{block_suite, loss_suite, GradCheckOptions, SuiteEntry};

fn run(entries: Vec<SuiteEntry>, filter: &str) {
    let opts = GradCheckOptions::default();
    let mut ran = 0;
    for e in entries.iter().filter(|e| e.name.starts_with(filter)) {
        let out = e.run(&opts).unwrap_or_else(|msg| panic!("{msg}"));
        assert!(out.instances >= 20 && out.worst_error < opts.tolerance);
        ran += 1;
    }
    assert!(ran > 0, "no entries match {filter}");
}

#[test]
fn convolutions() {
    run(block_suite(), "conv");
}

#[test]
fn channel_attention() {
    run(block_suite(), "channel_attention");
}

#[test]
fn multi_scale_residual_block() {
    run(block_suite(), "msrb");
}

#[test]
fn dense_encoder_and_decoder() {
    run(block_suite(), "dense_");
}

#[test]
fn lateral_layer() {
    run(block_suite(), "lateral_layer");
}

#[test]
fn fusion_network() {
    run(block_suite(), "fusion_net_");
    run(block_suite(), "normalize_and_fuse");
}

#[test]
fn loss_terms() {
    run(loss_suite(), "loss_");
}

#[test]
fn two_reference_fusion_loss() {
    run(loss_suite(), "fusion_task_loss");
}

#[test]
fn suite_covers_every_block_and_loss() {
    let names: Vec<String> = block_suite().into_iter().chain(loss_suite()).map(|e| e.name).collect();
    for needed in ["conv3_relu", "channel_attention", "msrb", "dense_encoder", "dense_decoder", "loss_ssim_w5", "loss_psnr", "loss_mse", "loss_perceptual"] {
        assert!(names.iter().any(|n| n == needed), "{needed} missing");
    }
}
