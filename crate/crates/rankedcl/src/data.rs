//! Dataset I/O (VOC-like JSON annotations), box cropping, synthetic
//! hierarchical datasets, and holdout splits.
//!
//! Dataset schema:
//! ```json
//! {"classes": ["..."],
//!  "items": [{"image": "path.ppm" | {"height": h, "width": w, "pixels": [...]},
//!             "gt":   [{"box": [x0,y0,x1,y1], "class": "..."}],
//!             "pred": [{"box": [x0,y0,x1,y1], "class": "...", "score": 0.9}]}]}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::RasterImage;
use crate::error::{Error, Result};
use crate::metrics::BoundingBox;
use crate::numkernel::{dot, Matrix};
use crate::ranking::RankingSpec;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Inline(RasterImage),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBoxJson {
    #[serde(rename = "box")]
    pub coords: [f64; 4],
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredBoxJson {
    #[serde(rename = "box")]
    pub coords: [f64; 4],
    pub class: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionItem {
    pub image: ImageRef,
    pub gt: Vec<GtBoxJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pred: Vec<PredBoxJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionDataset {
    pub classes: Vec<String>,
    pub items: Vec<DetectionItem>,
}

impl GtBoxJson {
    pub fn to_box(&self) -> Result<BoundingBox> {
        let [x0, y0, x1, y1] = self.coords;
        BoundingBox::new(x0, y0, x1, y1, self.class.clone(), None)
    }
}

impl PredBoxJson {
    pub fn to_box(&self) -> Result<BoundingBox> {
        let [x0, y0, x1, y1] = self.coords;
        BoundingBox::new(x0, y0, x1, y1, self.class.clone(), Some(self.score))
    }
}

impl DetectionDataset {
    fn validate(&self, base_dir: Option<&Path>) -> Result<()> {
        for (i, item) in self.items.iter().enumerate() {
            for (j, b) in item.gt.iter().enumerate() {
                b.to_box()
                    .map_err(|e| Error::Validation(format!("items[{i}].gt[{j}]: {e}")))?;
                if !self.classes.contains(&b.class) {
                    return Err(Error::Validation(format!(
                        "items[{i}].gt[{j}]: class '{}' not in class list",
                        b.class
                    )));
                }
            }
            for (j, b) in item.pred.iter().enumerate() {
                b.to_box()
                    .map_err(|e| Error::Validation(format!("items[{i}].pred[{j}]: {e}")))?;
                if !self.classes.contains(&b.class) {
                    return Err(Error::Validation(format!(
                        "items[{i}].pred[{j}]: class '{}' not in class list",
                        b.class
                    )));
                }
            }
            if let ImageRef::Path(p) = &item.image {
                let resolved = match base_dir {
                    Some(dir) => dir.join(p),
                    None => PathBuf::from(p),
                };
                if !resolved.exists() {
                    return Err(Error::Validation(format!(
                        "items[{i}]: image file '{}' not found",
                        resolved.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Load an item's pixels (inline or PPM from disk, relative to
    /// `base_dir`).
    pub fn load_image(&self, item: &DetectionItem, base_dir: &Path) -> Result<RasterImage> {
        match &item.image {
            ImageRef::Inline(img) => Ok(img.clone()),
            ImageRef::Path(p) => crate::augment::load_ppm(&base_dir.join(p)),
        }
    }
}

pub fn load_dataset(path: &Path) -> Result<DetectionDataset> {
    let text = std::fs::read_to_string(path)?;
    let ds: DetectionDataset = serde_json::from_str(&text)?;
    ds.validate(path.parent())?;
    Ok(ds)
}

/// Canonical (compact, field-ordered) JSON; load o save is the identity.
pub fn save_dataset(ds: &DetectionDataset, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(ds)?)?;
    Ok(())
}

/// Pixel-exact crops for each box: floor the mins, ceil the maxes, clip to
/// the image with a warning flag. A box fully outside the image is an error.
pub fn crop_boxes(img: &RasterImage, boxes: &[BoundingBox]) -> Result<Vec<RasterImage>> {
    let mut out = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let x0 = b.x_min.floor().max(0.0) as usize;
        let y0 = b.y_min.floor().max(0.0) as usize;
        let x1 = (b.x_max.ceil() as usize).min(img.width);
        let y1 = (b.y_max.ceil() as usize).min(img.height);
        if x0 >= x1 || y0 >= y1 || b.x_min >= img.width as f64 || b.y_min >= img.height as f64 {
            return Err(Error::Validation(format!(
                "box {i} [{}, {}, {}, {}] lies outside the {}x{} image",
                b.x_min, b.y_min, b.x_max, b.y_max, img.width, img.height
            )));
        }
        let (h, w) = (y1 - y0, x1 - x0);
        let mut crop = RasterImage::constant(h, w, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    crop.set(y, x, c, img.get(y0 + y, x0 + x, c));
                }
            }
        }
        out.push(crop);
    }
    Ok(out)
}

/// Class-similarity tree: leaves are classes; a deeper shared ancestor
/// means two classes are more similar. JSON form: nested arrays of strings,
/// e.g. `[[["a","b"],["c","d"]],["e","f"]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimilarityTree {
    Leaf(String),
    Node(Vec<SimilarityTree>),
}

impl SimilarityTree {
    pub fn leaves(&self) -> Vec<String> {
        match self {
            SimilarityTree::Leaf(name) => vec![name.clone()],
            SimilarityTree::Node(children) => {
                children.iter().flat_map(|c| c.leaves()).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut leaves = self.leaves();
        let n = leaves.len();
        leaves.sort();
        leaves.dedup();
        if leaves.len() != n {
            return Err(Error::Validation("class appears twice in similarity tree".into()));
        }
        if n == 0 {
            return Err(Error::Validation("similarity tree has no classes".into()));
        }
        Ok(())
    }

    /// Root path (node ids along the way, root = 0) per leaf, and the total
    /// node count. Node ids are assigned in preorder.
    fn leaf_paths(&self) -> (BTreeMap<String, Vec<usize>>, usize) {
        fn walk(
            node: &SimilarityTree,
            path: &mut Vec<usize>,
            next_id: &mut usize,
            out: &mut BTreeMap<String, Vec<usize>>,
        ) {
            let id = *next_id;
            *next_id += 1;
            path.push(id);
            match node {
                SimilarityTree::Leaf(name) => {
                    out.insert(name.clone(), path.clone());
                }
                SimilarityTree::Node(children) => {
                    for c in children {
                        walk(c, path, next_id, out);
                    }
                }
            }
            path.pop();
        }
        let mut out = BTreeMap::new();
        let mut next_id = 0;
        walk(self, &mut Vec::new(), &mut next_id, &mut out);
        (out, next_id)
    }

    /// Tree distance between two leaves: steps up to the deepest common
    /// ancestor and back down.
    pub fn leaf_distance(&self, a: &str, b: &str) -> Option<usize> {
        let (paths, _) = self.leaf_paths();
        let pa = paths.get(a)?;
        let pb = paths.get(b)?;
        let shared = pa.iter().zip(pb).take_while(|(x, y)| x == y).count();
        Some(pa.len() + pb.len() - 2 * shared)
    }
}

/// Labeled unit vectors for desk-scale experiments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorDataset {
    pub classes: Vec<String>,
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl VectorDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn gram_schmidt_rows(m: &Matrix) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    for i in 0..rows.len() {
        for j in 0..i {
            let proj = dot(&rows[i], &rows[j]);
            let prev = rows[j].clone();
            for (x, p) in rows[i].iter_mut().zip(&prev) {
                *x -= proj * p;
            }
        }
        let norm = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(Error::Degenerate("rank-deficient direction matrix".into()));
        }
        for x in rows[i].iter_mut() {
            *x /= norm;
        }
    }
    Ok(rows)
}

/// Hierarchical Gaussian clusters on the unit sphere. Each tree node gets
/// an orthonormal direction; a class mean is the normalized sum of the
/// directions on its root path, so classes with a deeper shared ancestor
/// have strictly larger mean cosine similarity — exact ground truth for
/// rank-order checks. Samples are mean + noise * gaussian, re-normalized.
pub fn synth_hierarchical(
    tree: &SimilarityTree,
    per_class: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<VectorDataset> {
    synth_hierarchical_split(tree, per_class, dim, noise, seed, 0)
}

/// Like [`synth_hierarchical`], but draws an independent set of samples for
/// the given split index around the *same* class means. Split 0 is the
/// training draw; use other indices for held-out evaluation data from the
/// identical distribution.
pub fn synth_hierarchical_split(
    tree: &SimilarityTree,
    per_class: usize,
    dim: usize,
    noise: f64,
    seed: u64,
    split: u64,
) -> Result<VectorDataset> {
    tree.validate()?;
    if noise < 0.0 {
        return Err(Error::Validation("noise must be >= 0".into()));
    }
    let (paths, node_count) = tree.leaf_paths();
    if dim < node_count {
        return Err(Error::Validation(format!(
            "dim {dim} < {node_count} tree nodes; class means cannot be orthogonalized"
        )));
    }
    let mut rng = Rng::new(seed).derive(&[0xDA7A]);
    let raw = Matrix::new(
        node_count,
        dim,
        (0..node_count * dim).map(|_| rng.normal()).collect(),
    )?;
    let directions = gram_schmidt_rows(&raw)?;

    let classes: Vec<String> = paths.keys().cloned().collect();
    let mut means: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (class, path) in &paths {
        let mut mean = vec![0.0; dim];
        for &node in path {
            for (m, d) in mean.iter_mut().zip(&directions[node]) {
                *m += d;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for m in mean.iter_mut() {
            *m /= norm;
        }
        means.insert(class.as_str(), mean);
    }

    // construction check: deeper shared ancestor => larger mean similarity
    for a in &classes {
        for b in &classes {
            for c in &classes {
                if a == b || a == c || b == c {
                    continue;
                }
                let dab = tree.leaf_distance(a, b).expect("leaf");
                let dac = tree.leaf_distance(a, c).expect("leaf");
                if dab < dac {
                    let sab = dot(&means[a.as_str()], &means[b.as_str()]);
                    let sac = dot(&means[a.as_str()], &means[c.as_str()]);
                    if sab <= sac {
                        return Err(Error::Degenerate(format!(
                            "mean similarity ordering violated for ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
    }

    let mut samples = Vec::with_capacity(classes.len() * per_class);
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for (ci, class) in classes.iter().enumerate() {
        let mut class_rng = Rng::new(seed).derive(&[0x5A3B, split, ci as u64]);
        for _ in 0..per_class {
            let mut v: Vec<f64> = means[class.as_str()]
                .iter()
                .map(|&m| m + noise * class_rng.normal())
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Degenerate("zero-norm sample".into()));
            }
            for x in v.iter_mut() {
                *x /= norm;
            }
            samples.push(v);
            labels.push(class.clone());
        }
    }
    Ok(VectorDataset { classes, dim, samples, labels })
}

/// Split off the withheld classes: (in_distribution, ood).
pub fn holdout_split_vectors(
    ds: &VectorDataset,
    withheld: &[String],
) -> Result<(VectorDataset, VectorDataset)> {
    for w in withheld {
        if !ds.classes.contains(w) {
            return Err(Error::Validation(format!("unknown withheld class '{w}'")));
        }
    }
    let keep = |class: &String| !withheld.contains(class);
    let mut ind = VectorDataset {
        classes: ds.classes.iter().filter(|c| keep(c)).cloned().collect(),
        dim: ds.dim,
        samples: Vec::new(),
        labels: Vec::new(),
    };
    let mut ood = VectorDataset {
        classes: withheld.to_vec(),
        dim: ds.dim,
        samples: Vec::new(),
        labels: Vec::new(),
    };
    for (s, l) in ds.samples.iter().zip(&ds.labels) {
        if keep(l) {
            ind.samples.push(s.clone());
            ind.labels.push(l.clone());
        } else {
            ood.samples.push(s.clone());
            ood.labels.push(l.clone());
        }
    }
    Ok((ind, ood))
}

/// Item-level holdout for detection datasets: an item containing any box
/// of a withheld class goes to the OOD split.
pub fn holdout_split(
    ds: &DetectionDataset,
    withheld: &[String],
) -> Result<(DetectionDataset, DetectionDataset)> {
    for w in withheld {
        if !ds.classes.contains(w) {
            return Err(Error::Validation(format!("unknown withheld class '{w}'")));
        }
    }
    let mut ind = DetectionDataset { classes: ds.classes.clone(), items: Vec::new() };
    let mut ood = DetectionDataset { classes: ds.classes.clone(), items: Vec::new() };
    for item in &ds.items {
        if item.gt.iter().any(|b| withheld.contains(&b.class)) {
            ood.items.push(item.clone());
        } else {
            ind.items.push(item.clone());
        }
    }
    Ok((ind, ood))
}

/// Derive a ranking from tree distances: for each class, rank i holds the
/// classes at the (i-1)-th smallest distance. Classes with fewer distinct
/// distance levels than r-1 get trailing empty rank sets.
pub fn ranking_from_tree(tree: &SimilarityTree, r: usize) -> Result<RankingSpec> {
    tree.validate()?;
    if r < 1 {
        return Err(Error::Validation("r must be >= 1".into()));
    }
    let classes = {
        let mut l = tree.leaves();
        l.sort();
        l
    };
    let mut max_levels = 0usize;
    let mut ranks: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for class in &classes {
        // distance -> classes at that distance, ascending
        let mut by_dist: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for other in &classes {
            if other == class {
                continue;
            }
            let d = tree.leaf_distance(class, other).expect("leaf");
            by_dist.entry(d).or_default().push(other.clone());
        }
        max_levels = max_levels.max(by_dist.len());
        if r > 1 {
            let mut lists: Vec<Vec<String>> =
                by_dist.into_values().take(r - 1).collect();
            lists.resize(r - 1, Vec::new());
            ranks.insert(class.clone(), lists);
        }
    }
    if r > max_levels + 1 {
        return Err(Error::Validation(format!(
            "r = {r} exceeds the tree's {max_levels} distinct similarity levels + 1"
        )));
    }
    RankingSpec::new(classes, r, ranks)
}
