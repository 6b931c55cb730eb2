//! COCO-style average precision on a small hand-built set of predictions.
//!
//! Run with: cargo run --example detection_ap

use rankedcl::metrics::{average_precision, coco_ap, iou, BoundingBox, Detection};

fn bx(x0: f64, y0: f64, x1: f64, y1: f64, class: &str, score: Option<f64>) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1, class, score).unwrap()
}

fn main() -> rankedcl::Result<()> {
    // two images, two classes
    let gts: Vec<Detection> = vec![
        (0, bx(10.0, 10.0, 50.0, 50.0, "cat", None)),
        (0, bx(60.0, 10.0, 90.0, 40.0, "dog", None)),
        (1, bx(0.0, 0.0, 30.0, 30.0, "cat", None)),
    ];
    let preds: Vec<Detection> = vec![
        // good cat box, slightly offset
        (0, bx(12.0, 12.0, 52.0, 52.0, "cat", Some(0.9))),
        // duplicate detection of the same cat: counted as a false positive
        (0, bx(11.0, 11.0, 51.0, 51.0, "cat", Some(0.6))),
        // dog box with mediocre overlap
        (0, bx(55.0, 10.0, 85.0, 40.0, "dog", Some(0.8))),
        // clean hit in the second image
        (1, bx(0.0, 0.0, 30.0, 30.0, "cat", Some(0.95))),
    ];

    println!(
        "offset cat IoU: {:.4}",
        iou(&gts[0].1, &preds[0].1)
    );
    for thr in [0.5, 0.75, 0.9] {
        println!(
            "AP@{thr}: {:.4}",
            average_precision(&preds, &gts, thr)?
        );
    }
    let (ap, ap50, ap75) = coco_ap(&preds, &gts)?;
    println!("COCO AP {ap:.2}  AP50 {ap50:.2}  AP75 {ap75:.2}  (x100)");
    Ok(())
}
