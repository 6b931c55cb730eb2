//! Train the encoder on the synthetic 6-class hierarchy and show that the
//! learned centroid similarities recover the tree's ordering.
//!
//! Run with: cargo run --release --example train_synthetic

use rankedcl::data::{ranking_from_tree, synth_hierarchical, SimilarityTree};
use rankedcl::encoder::{fit, noise_views, EncoderModel, TrainConfig};
use rankedcl::metrics::class_centroids;
use rankedcl::numkernel::dot;

fn main() -> rankedcl::Result<()> {
    let tree: SimilarityTree =
        serde_json::from_str(r#"[[["a","b"],["c","d"]],["e","f"]]"#)?;
    let data = synth_hierarchical(&tree, 100, 16, 0.1, 11)?;
    let spec = ranking_from_tree(&tree, 3)?;
    let cfg = TrainConfig { epochs: 60, seed: 42, ..TrainConfig::default() };

    let mut model = EncoderModel::new(vec![16, 64, 32, 16], cfg.seed)?;
    let log = fit(&mut model, &data.samples, &data.labels, &cfg, &spec, &noise_views(0.3))?;
    for rec in log.iter().step_by(10) {
        println!(
            "epoch {:3}  lr {:.4}  loss {:.4}  per-rank {:?}",
            rec.epoch,
            rec.lr,
            rec.loss.total,
            rec.loss.per_rank.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }

    let z = model.embed_dataset(&data.samples)?;
    let (centroids, order) = class_centroids(&z, &data.labels)?;
    println!("\ncentroid cosine similarities (classes {order:?}):");
    for i in 0..order.len() {
        let row: Vec<String> = (0..order.len())
            .map(|j| format!("{:5.2}", dot(centroids.row(i), centroids.row(j))))
            .collect();
        println!("  {} [{}]", order[i], row.join(", "));
    }
    println!("\nexpected order for 'a': b > c,d > e,f  (siblings first, then cousins)");
    Ok(())
}
