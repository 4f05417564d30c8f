//! In-memory containers for counts, patch features, annotations and splits.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CpnnError, Result};

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CpnnError::data(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Nonnegative integer counts, rows (samples or cells) by genes.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    values: Array2<u64>,
    row_ids: Vec<String>,
    gene_ids: Vec<String>,
}

impl CountMatrix {
    pub fn new(values: Array2<u64>, row_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        if values.nrows() != row_ids.len() || values.ncols() != gene_ids.len() {
            return Err(CpnnError::shape(format!(
                "count matrix is {:?} but has {} row ids and {} gene ids",
                values.dim(),
                row_ids.len(),
                gene_ids.len()
            )));
        }
        check_unique(&row_ids, "row")?;
        check_unique(&gene_ids, "gene")?;
        Ok(Self {
            values,
            row_ids,
            gene_ids,
        })
    }

    pub fn values(&self) -> &Array2<u64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn row_totals(&self) -> Array1<u64> {
        self.values.sum_axis(Axis(1))
    }

    /// Keep the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CountMatrix {
        CountMatrix {
            values: self.values.select(Axis(0), rows),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
        }
    }

    /// Keep the given genes, in the given order.
    pub fn select_genes(&self, genes: &[usize]) -> CountMatrix {
        CountMatrix {
            values: self.values.select(Axis(1), genes),
            row_ids: self.row_ids.clone(),
            gene_ids: genes.iter().map(|&g| self.gene_ids[g].clone()).collect(),
        }
    }

    /// Reorder/restrict columns to `genes`; every id must be present.
    pub fn with_gene_order(&self, genes: &[String]) -> Result<CountMatrix> {
        let index: HashMap<&str, usize> = self
            .gene_ids
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let cols = genes
            .iter()
            .map(|g| {
                index
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| CpnnError::data(format!("gene `{g}` missing from count matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_genes(&cols))
    }
}

/// Restrict both matrices to their shared genes, ordered lexicographically.
pub fn align_genes(a: &CountMatrix, b: &CountMatrix) -> Result<(CountMatrix, CountMatrix)> {
    if a.n_rows() == 0 || b.n_rows() == 0 || a.n_genes() == 0 || b.n_genes() == 0 {
        return Err(CpnnError::data(
            "cannot align genes of an empty count matrix",
        ));
    }
    let in_b: HashSet<&str> = b.gene_ids.iter().map(String::as_str).collect();
    let mut shared: Vec<String> = a
        .gene_ids
        .iter()
        .filter(|g| in_b.contains(g.as_str()))
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(CpnnError::data("count matrices share no genes"));
    }
    shared.sort();
    Ok((a.with_gene_order(&shared)?, b.with_gene_order(&shared)?))
}

/// Per-row cell type and batch (experimental condition) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAnnotations {
    cell_type: Vec<usize>,
    batch: Vec<usize>,
    cell_type_names: Vec<String>,
    batch_names: Vec<String>,
}

impl CellAnnotations {
    pub fn new(
        cell_type: Vec<usize>,
        batch: Vec<usize>,
        cell_type_names: Vec<String>,
        batch_names: Vec<String>,
    ) -> Result<Self> {
        if cell_type.len() != batch.len() {
            return Err(CpnnError::shape(format!(
                "{} cell types but {} batch labels",
                cell_type.len(),
                batch.len()
            )));
        }
        check_unique(&cell_type_names, "cell type")?;
        check_unique(&batch_names, "batch")?;
        let mut type_seen = vec![false; cell_type_names.len()];
        for &c in &cell_type {
            *type_seen
                .get_mut(c)
                .ok_or_else(|| CpnnError::data(format!("cell type index {c} out of range")))? =
                true;
        }
        if let Some(c) = type_seen.iter().position(|s| !s) {
            return Err(CpnnError::data(format!(
                "cell type `{}` has no cells",
                cell_type_names[c]
            )));
        }
        let mut batch_seen = vec![false; batch_names.len()];
        for &d in &batch {
            *batch_seen
                .get_mut(d)
                .ok_or_else(|| CpnnError::data(format!("batch index {d} out of range")))? = true;
        }
        if let Some(d) = batch_seen.iter().position(|s| !s) {
            return Err(CpnnError::data(format!(
                "batch `{}` has no cells",
                batch_names[d]
            )));
        }
        Ok(Self {
            cell_type,
            batch,
            cell_type_names,
            batch_names,
        })
    }

    /// Build from string labels; categories are numbered in order of first appearance.
    pub fn from_labels(cell_types: &[String], batches: &[String]) -> Result<Self> {
        fn encode(labels: &[String]) -> (Vec<usize>, Vec<String>) {
            let mut names: Vec<String> = Vec::new();
            let mut index: HashMap<&str, usize> = HashMap::new();
            let codes = labels
                .iter()
                .map(|l| {
                    *index.entry(l.as_str()).or_insert_with(|| {
                        names.push(l.clone());
                        names.len() - 1
                    })
                })
                .collect();
            (codes, names)
        }
        let (ct, ct_names) = encode(cell_types);
        let (b, b_names) = encode(batches);
        Self::new(ct, b, ct_names, b_names)
    }

    pub fn cell_type(&self) -> &[usize] {
        &self.cell_type
    }

    pub fn batch(&self) -> &[usize] {
        &self.batch
    }

    pub fn cell_type_names(&self) -> &[String] {
        &self.cell_type_names
    }

    pub fn batch_names(&self) -> &[String] {
        &self.batch_names
    }

    pub fn n_types(&self) -> usize {
        self.cell_type_names.len()
    }

    pub fn n_batches(&self) -> usize {
        self.batch_names.len()
    }

    pub fn len(&self) -> usize {
        self.cell_type.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_type.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&r| self.cell_type[r]).collect(),
            rows.iter().map(|&r| self.batch[r]).collect(),
            self.cell_type_names.clone(),
            self.batch_names.clone(),
        )
    }
}

/// Ordered patch embeddings of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    slide_id: String,
    features: Array2<f64>,
    patch_ids: Vec<String>,
}

impl PatchFeatureSet {
    pub fn new(
        slide_id: impl Into<String>,
        features: Array2<f64>,
        patch_ids: Vec<String>,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        if features.nrows() == 0 {
            return Err(CpnnError::data(format!(
                "slide `{slide_id}` has no patches"
            )));
        }
        if features.nrows() != patch_ids.len() {
            return Err(CpnnError::shape(format!(
                "slide `{slide_id}`: {} feature rows but {} patch ids",
                features.nrows(),
                patch_ids.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CpnnError::data(format!(
                "slide `{slide_id}`: non-finite feature"
            )));
        }
        check_unique(&patch_ids, "patch")?;
        Ok(Self {
            slide_id,
            features,
            patch_ids,
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn patch_ids(&self) -> &[String] {
        &self.patch_ids
    }

    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// One slide with its features and slide-level target counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    features: PatchFeatureSet,
    target_counts: Array1<u64>,
    total_count: u64,
}

impl SampleRecord {
    pub fn new(features: PatchFeatureSet, target_counts: Array1<u64>) -> Result<Self> {
        let total_count: u64 = target_counts.sum();
        if total_count == 0 {
            return Err(CpnnError::data(format!(
                "slide `{}` has zero total count",
                features.slide_id()
            )));
        }
        Ok(Self {
            features,
            target_counts,
            total_count,
        })
    }

    pub fn slide_id(&self) -> &str {
        self.features.slide_id()
    }

    pub fn features(&self) -> &PatchFeatureSet {
        &self.features
    }

    pub fn target_counts(&self) -> &Array1<u64> {
        &self.target_counts
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }
}

/// Pair slide-level counts with feature sets by id (`row_id == slide_id`).
///
/// Output follows the row order of `counts`. Slides without features are an
/// error; feature sets without counts are ignored.
pub fn assemble_samples(
    counts: &CountMatrix,
    features: Vec<PatchFeatureSet>,
) -> Result<Vec<SampleRecord>> {
    let mut by_id: HashMap<String, PatchFeatureSet> = features
        .into_iter()
        .map(|f| (f.slide_id().to_string(), f))
        .collect();
    let mut dim = None;
    counts
        .row_ids()
        .iter()
        .enumerate()
        .map(|(r, id)| {
            let f = by_id
                .remove(id)
                .ok_or_else(|| CpnnError::data(format!("no feature file for slide `{id}`")))?;
            match dim {
                None => dim = Some(f.dim()),
                Some(d) if d != f.dim() => {
                    return Err(CpnnError::shape(format!(
                        "slide `{id}` has feature dim {} but earlier slides have {d}",
                        f.dim()
                    )))
                }
                _ => {}
            }
            SampleRecord::new(f, counts.values().row(r).to_owned())
        })
        .collect()
}

/// Fold assignment for cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    slide_ids: Vec<String>,
    fold_assignments: Vec<usize>,
    n_folds: usize,
    validation_ids: Vec<String>,
    patients: Option<Vec<String>>,
}

impl SplitPlan {
    pub fn new(
        slide_ids: Vec<String>,
        fold_assignments: Vec<usize>,
        n_folds: usize,
        validation_ids: Vec<String>,
        patients: Option<Vec<String>>,
    ) -> Result<Self> {
        if slide_ids.len() != fold_assignments.len() {
            return Err(CpnnError::shape("one fold index per slide required"));
        }
        check_unique(&slide_ids, "slide")?;
        if n_folds < 2 {
            return Err(CpnnError::Config(format!(
                "need at least 2 folds, got {n_folds}"
            )));
        }
        if let Some(bad) = fold_assignments.iter().find(|&&f| f >= n_folds) {
            return Err(CpnnError::data(format!(
                "fold index {bad} out of range for {n_folds} folds"
            )));
        }
        for k in 0..n_folds {
            if !fold_assignments.contains(&k) {
                return Err(CpnnError::data(format!("fold {k} has no test slides")));
            }
        }
        let known: HashSet<&str> = slide_ids.iter().map(String::as_str).collect();
        if let Some(v) = validation_ids.iter().find(|v| !known.contains(v.as_str())) {
            return Err(CpnnError::data(format!(
                "validation slide `{v}` is not in the split"
            )));
        }
        if let Some(p) = &patients {
            if p.len() != slide_ids.len() {
                return Err(CpnnError::shape("one patient id per slide required"));
            }
            let mut fold_of: HashMap<&str, usize> = HashMap::new();
            for (pat, &f) in p.iter().zip(&fold_assignments) {
                if *fold_of.entry(pat.as_str()).or_insert(f) != f {
                    return Err(CpnnError::data(format!(
                        "patient `{pat}` spans several folds"
                    )));
                }
            }
        }
        Ok(Self {
            slide_ids,
            fold_assignments,
            n_folds,
            validation_ids,
            patients,
        })
    }

    /// Seeded random assignment. With `patients`, all slides of one patient
    /// share a fold. Groups are dealt round-robin after a shuffle, so fold
    /// sizes differ by at most one group.
    pub fn random(
        slide_ids: Vec<String>,
        n_folds: usize,
        seed: u64,
        patients: Option<Vec<String>>,
    ) -> Result<Self> {
        let groups: Vec<String> = match &patients {
            Some(p) => p.clone(),
            None => slide_ids.clone(),
        };
        let mut unique: Vec<String> = groups
            .iter()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if unique.len() < n_folds {
            return Err(CpnnError::Config(format!(
                "{} groups cannot fill {n_folds} folds",
                unique.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        unique.shuffle(&mut rng);
        let fold_of: BTreeMap<String, usize> = unique
            .into_iter()
            .enumerate()
            .map(|(i, g)| (g, i % n_folds))
            .collect();
        let folds = groups.iter().map(|g| fold_of[g]).collect();
        Self::new(slide_ids, folds, n_folds, Vec::new(), patients)
    }

    pub fn slide_ids(&self) -> &[String] {
        &self.slide_ids
    }

    pub fn fold_assignments(&self) -> &[usize] {
        &self.fold_assignments
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn validation_ids(&self) -> &[String] {
        &self.validation_ids
    }

    pub fn patients(&self) -> Option<&[String]> {
        self.patients.as_deref()
    }

    pub fn with_validation_ids(mut self, ids: Vec<String>) -> Result<Self> {
        let known: HashSet<&str> = self.slide_ids.iter().map(String::as_str).collect();
        if let Some(v) = ids.iter().find(|v| !known.contains(v.as_str())) {
            return Err(CpnnError::data(format!(
                "validation slide `{v}` is not in the split"
            )));
        }
        self.validation_ids = ids;
        Ok(self)
    }

    pub fn fold_of(&self, slide_id: &str) -> Option<usize> {
        self.slide_ids
            .iter()
            .position(|s| s == slide_id)
            .map(|i| self.fold_assignments[i])
    }

    pub fn test_ids(&self, fold: usize) -> Vec<String> {
        self.slide_ids
            .iter()
            .zip(&self.fold_assignments)
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.slide_ids
            .iter()
            .zip(&self.fold_assignments)
            .filter(|(_, &f)| f != fold)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Optional quality filters for count matrices. Every threshold is optional;
/// the mitochondrial filter only runs when a gene-name prefix is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub mito_prefix: Option<String>,
    pub max_mito_fraction: f64,
    /// Drop rows holding any single count above this value.
    pub max_entry_count: Option<u64>,
    pub min_genes_per_row: Option<usize>,
    pub max_genes_per_row: Option<usize>,
    pub min_rows_per_gene: Option<usize>,
}

impl FilterConfig {
    /// Thresholds used for slide-level (bulk) cohorts.
    pub fn bulk() -> Self {
        Self {
            mito_prefix: None,
            max_mito_fraction: 0.3,
            max_entry_count: Some(40_000),
            min_genes_per_row: Some(5_000),
            max_genes_per_row: None,
            min_rows_per_gene: Some(50),
        }
    }

    /// Thresholds used for single-cell references.
    pub fn single_cell() -> Self {
        Self {
            mito_prefix: None,
            max_mito_fraction: 0.3,
            max_entry_count: None,
            min_genes_per_row: Some(200),
            max_genes_per_row: Some(2_500),
            min_rows_per_gene: Some(200),
        }
    }
}

/// Apply row filters, then the gene filter. Returns the filtered matrix and
/// the indices of the kept rows in the input.
pub fn filter_counts(m: &CountMatrix, cfg: &FilterConfig) -> Result<(CountMatrix, Vec<usize>)> {
    let mito: Vec<bool> = match &cfg.mito_prefix {
        Some(prefix) => m
            .gene_ids()
            .iter()
            .map(|g| g.starts_with(prefix.as_str()))
            .collect(),
        None => vec![false; m.n_genes()],
    };
    let check_mito = cfg.mito_prefix.is_some();
    let keep_rows: Vec<usize> = m
        .values()
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, row)| {
            let total: u64 = row.sum();
            let detected = row.iter().filter(|&&v| v > 0).count();
            if check_mito && total > 0 {
                let mt: u64 = row
                    .iter()
                    .zip(&mito)
                    .filter(|(_, &is_mt)| is_mt)
                    .map(|(v, _)| *v)
                    .sum();
                if mt as f64 / total as f64 > cfg.max_mito_fraction {
                    return false;
                }
            }
            if cfg
                .max_entry_count
                .is_some_and(|max| row.iter().any(|&v| v > max))
            {
                return false;
            }
            if cfg.min_genes_per_row.is_some_and(|min| detected < min) {
                return false;
            }
            if cfg.max_genes_per_row.is_some_and(|max| detected > max) {
                return false;
            }
            true
        })
        .map(|(i, _)| i)
        .collect();
    if keep_rows.is_empty() {
        return Err(CpnnError::data("quality filters removed every row"));
    }
    let rows_kept = m.select_rows(&keep_rows);
    let keep_genes: Vec<usize> = match cfg.min_rows_per_gene {
        Some(min) => rows_kept
            .values()
            .columns()
            .into_iter()
            .enumerate()
            .filter(|(_, col)| col.iter().filter(|&&v| v > 0).count() >= min)
            .map(|(g, _)| g)
            .collect(),
        None => (0..rows_kept.n_genes()).collect(),
    };
    if keep_genes.is_empty() {
        return Err(CpnnError::data("quality filters removed every gene"));
    }
    Ok((rows_kept.select_genes(&keep_genes), keep_rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn matrix(genes: &[&str], values: Array2<u64>) -> CountMatrix {
        let rows = (0..values.nrows()).map(|i| format!("r{i}")).collect();
        CountMatrix::new(values, rows, ids(genes)).unwrap()
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = CountMatrix::new(array![[1, 2]], ids(&["a"]), ids(&["g", "g"])).unwrap_err();
        assert!(err.to_string().contains("`g`"));
        assert!(CountMatrix::new(array![[1], [2]], ids(&["a", "a"]), ids(&["g"])).is_err());
    }

    #[test]
    fn align_intersects_lexicographically() {
        let a = matrix(&["C", "A", "B"], array![[3, 1, 2]]);
        let b = matrix(&["D", "C", "B"], array![[40, 30, 20]]);
        let (a2, b2) = align_genes(&a, &b).unwrap();
        assert_eq!(a2.gene_ids(), ids(&["B", "C"]).as_slice());
        assert_eq!(b2.gene_ids(), a2.gene_ids());
        assert_eq!(a2.values(), &array![[2, 3]]);
        assert_eq!(b2.values(), &array![[20, 30]]);
        // idempotent
        let (a3, b3) = align_genes(&a2, &b2).unwrap();
        assert_eq!((a3, b3), (a2, b2));
    }

    #[test]
    fn align_identical_lists_is_a_reordering() {
        let a = matrix(&["b", "a"], array![[1, 2]]);
        let (a2, _) = align_genes(&a, &a).unwrap();
        assert_eq!(a2.values(), &array![[2, 1]]);
    }

    #[test]
    fn align_disjoint_fails() {
        let a = matrix(&["A"], array![[1]]);
        let b = matrix(&["B"], array![[1]]);
        assert!(align_genes(&a, &b).is_err());
    }

    #[test]
    fn annotations_require_nonempty_categories() {
        assert!(
            CellAnnotations::new(vec![0, 0], vec![0, 0], ids(&["t0", "t1"]), ids(&["b"])).is_err()
        );
        assert!(
            CellAnnotations::new(vec![0, 2], vec![0, 0], ids(&["t0", "t1"]), ids(&["b"])).is_err()
        );
        let a =
            CellAnnotations::from_labels(&ids(&["T", "B", "T"]), &ids(&["x", "x", "y"])).unwrap();
        assert_eq!(a.cell_type(), &[0, 1, 0]);
        assert_eq!(a.batch_names(), ids(&["x", "y"]).as_slice());
    }

    #[test]
    fn sample_total_is_sum() {
        let f = PatchFeatureSet::new("s", array![[0.0, 1.0]], ids(&["p"])).unwrap();
        let s = SampleRecord::new(f.clone(), array![3, 4, 5]).unwrap();
        assert_eq!(s.total_count(), 12);
        assert!(SampleRecord::new(f, array![0, 0]).is_err());
    }

    #[test]
    fn feature_set_rejects_nan() {
        let err = PatchFeatureSet::new("s", array![[f64::NAN]], ids(&["p"])).unwrap_err();
        assert!(err.to_string().contains("non-finite feature"));
    }

    #[test]
    fn random_split_partitions() {
        let slides: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let plan = SplitPlan::random(slides.clone(), 4, 9, None).unwrap();
        let mut seen = Vec::new();
        for k in 0..4 {
            let test = plan.test_ids(k);
            assert!(!test.is_empty());
            for t in &test {
                assert!(!plan.train_ids(k).contains(t));
            }
            seen.extend(test);
        }
        seen.sort();
        let mut all = slides;
        all.sort();
        assert_eq!(seen, all);
        assert_eq!(
            plan,
            SplitPlan::random(plan.slide_ids().to_vec(), 4, 9, None).unwrap()
        );
    }

    #[test]
    fn patient_grouping_keeps_patients_together() {
        let slides = ids(&["a1", "a2", "b1", "c1", "c2", "d1"]);
        let patients = ids(&["a", "a", "b", "c", "c", "d"]);
        let plan = SplitPlan::random(slides, 2, 1, Some(patients)).unwrap();
        assert_eq!(plan.fold_of("a1"), plan.fold_of("a2"));
        assert_eq!(plan.fold_of("c1"), plan.fold_of("c2"));
    }

    #[test]
    fn filters_drop_rows_and_genes() {
        let m = CountMatrix::new(
            array![[5, 5, 0], [1, 0, 9], [2, 2, 0]],
            ids(&["c0", "c1", "c2"]),
            ids(&["MT-1", "A", "B"]),
        )
        .unwrap();
        let cfg = FilterConfig {
            mito_prefix: Some("MT-".into()),
            max_mito_fraction: 0.3,
            max_entry_count: None,
            min_genes_per_row: None,
            max_genes_per_row: None,
            min_rows_per_gene: Some(1),
        };
        // every row has mito fraction > 0.3 except c1 (1/10)
        let (out, kept) = filter_counts(&m, &cfg).unwrap();
        assert_eq!(kept, vec![1]);
        assert_eq!(out.gene_ids(), ids(&["MT-1", "B"]).as_slice());
    }
}
