//! Compute the ranked contrastive loss on a tiny hand-built batch and
//! print the per-rank / per-anchor breakdown.
//!
//! Run with: cargo run --example loss_breakdown

use rankedcl::loss::{ranked_loss, supcon_loss, EmbeddingMatrix};
use rankedcl::numkernel::Matrix;
use rankedcl::ranking::{linear_temperature_schedule, parse_ranking, RankingSpec};

fn main() -> rankedcl::Result<()> {
    // Three classes with a known similarity order: bird is closer to
    // aeroplane than ship is (both fly), mirrored in the ranking.
    let spec = parse_ranking(
        r#"{"classes": ["aeroplane", "bird", "ship"],
            "r": 3,
            "ranks": {"aeroplane": [["bird"], ["ship"]],
                      "bird":      [["aeroplane"], ["ship"]],
                      "ship":      [["bird"], ["aeroplane"]]}}"#,
    )?;
    let taus = linear_temperature_schedule(0.1, 0.6, 3)?;
    println!("temperatures per rank: {:?}", taus.taus());

    // six unit embeddings, two per class, roughly grouped
    let z = EmbeddingMatrix::new(
        Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.96, 0.28, 0.0],
            vec![0.8, 0.6, 0.0],
            vec![0.6, 0.8, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.28, 0.0, 0.96],
        ])?,
    )?;
    let labels: Vec<String> = ["aeroplane", "aeroplane", "bird", "bird", "ship", "ship"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let breakdown = ranked_loss(&z, &labels, &spec, &taus)?;
    println!("breakdown: {}", serde_json::to_string_pretty(&breakdown)?);

    // depth 1 is exactly the plain supervised contrastive loss
    let flat = RankingSpec::depth_one(spec.classes().to_vec())?;
    let flat_taus = linear_temperature_schedule(0.1, 0.6, 1)?;
    let r1 = ranked_loss(&z, &labels, &flat, &flat_taus)?;
    let sup = supcon_loss(&z, &labels, 0.1)?;
    println!("r=1 total {:.12} vs supervised contrastive {:.12}", r1.total, sup.total);
    Ok(())
}
