//! Out-of-distribution detection: withhold two classes, train on the rest,
//! score held-out samples by distance to the known class centroids.
//!
//! Run with: cargo run --release --example ood_detection

use rankedcl::data::{
    holdout_split_vectors, ranking_from_tree, synth_hierarchical_split, SimilarityTree,
};
use rankedcl::encoder::{fit, noise_views, EncoderModel, TrainConfig};
use rankedcl::metrics::{class_centroids, ood_score, roc_auroc};

fn main() -> rankedcl::Result<()> {
    let tree: SimilarityTree =
        serde_json::from_str(r#"[[["a","b"],["c","d"]],["e","f"]]"#)?;
    let withheld = vec!["e".to_string(), "f".to_string()];

    let full = synth_hierarchical_split(&tree, 100, 16, 0.1, 11, 0)?;
    let (train, _) = holdout_split_vectors(&full, &withheld)?;
    println!("training on {:?}, withholding {withheld:?}", train.classes);

    let spec = ranking_from_tree(&tree, 3)?;
    let cfg = TrainConfig { epochs: 100, seed: 43, ..TrainConfig::default() };
    let mut model = EncoderModel::new(vec![16, 64, 32, 16], cfg.seed)?;
    fit(&mut model, &train.samples, &train.labels, &cfg, &spec, &noise_views(0.3))?;

    let z_train = model.embed_dataset(&train.samples)?;
    let (centroids, _) = class_centroids(&z_train, &train.labels)?;

    // independent test draw around the same class means (split 1)
    let test = synth_hierarchical_split(&tree, 100, 16, 0.1, 11, 1)?;
    let (ind, ood) = holdout_split_vectors(&test, &withheld)?;
    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for (set, is_ood) in [(&ind, false), (&ood, true)] {
        let z = model.embed_dataset(&set.samples)?;
        for i in 0..z.rows() {
            scores.push(ood_score(z.row(i), &centroids));
            flags.push(is_ood);
        }
    }

    let curve = roc_auroc(&scores, &flags)?;
    println!("AUROC: {:.4} over {} samples", curve.auroc, scores.len());
    println!("ROC has {} points; first {:?}, last {:?}",
        curve.roc.len(), curve.roc.first().unwrap(), curve.roc.last().unwrap());
    Ok(())
}
