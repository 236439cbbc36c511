#[path = "common/oracles.rs"]
mod common;

#[test]
fn penalty_loss_matches_scalar_sums() {
    common::penalty_loss_matches_scalar_sums();
}

#[test]
fn channel_attention_matches_scalar_softmax() {
    common::channel_attention_matches_scalar_softmax();
}

#[test]
fn pixel_guidance_matches_scalar_gating() {
    common::pixel_guidance_matches_scalar_gating();
}

#[test]
fn guided_fuse_matches_scalar_fusion() {
    common::guided_fuse_matches_scalar_fusion();
}
