//! Compare the analytic loss gradient against central finite differences.
//!
//! Run with: cargo run --example gradient_check

use rankedcl::data::{ranking_from_tree, SimilarityTree};
use rankedcl::loss::{ranked_loss_grad_raw, ranked_loss_raw};
use rankedcl::numkernel::{finite_diff_grad, max_rel_err, Matrix};
use rankedcl::ranking::linear_temperature_schedule;
use rankedcl::rng::Rng;

fn main() -> rankedcl::Result<()> {
    let tree: SimilarityTree =
        serde_json::from_str(r#"[[["a","b"],["c","d"]],["e","f"]]"#)?;
    let spec = ranking_from_tree(&tree, 3)?;
    let taus = linear_temperature_schedule(0.1, 0.6, 3)?;

    let (n, d) = (16, 8);
    let names = spec.classes().to_vec();
    for batch in 0..5u64 {
        let mut rng = Rng::new(99).derive(&[batch]);
        let z = Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect())?
            .l2_normalize_rows()?;
        let labels: Vec<String> =
            (0..n).map(|_| names[rng.range_usize(names.len())].clone()).collect();

        let analytic = ranked_loss_grad_raw(&z, &labels, &spec, &taus)?;
        let numeric = finite_diff_grad(
            |m| ranked_loss_raw(m, &labels, &spec, &taus).unwrap().total,
            &z,
            1e-5,
        );
        println!(
            "batch {batch}: max relative error {:.3e}",
            max_rel_err(&analytic, &numeric)
        );
    }
    Ok(())
}
